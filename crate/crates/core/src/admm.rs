//! ADMM solver for the pan-weighted low-rank + total-variation model
//!
//! ```text
//! min  Σ_j τ‖W_j ∘ ∇_j U‖₁ + β‖E‖²_F + λ‖S‖₁
//! s.t. Y = U Vᵀ + E + S,  VᵀV = I
//! ```
//!
//! with auxiliaries `F_j = ∇_j U`. Each iteration updates `F`, `U`, (once,
//! when the constraint residual first drops below `100·tol`, switches to
//! slice-aware weights), then `V`, `E`, `S`, the multipliers, and grows the
//! penalty `μ ← ρμ`. The run stops when `‖Y − U Vᵀ − E − S‖²_F < tol` or
//! after `max_iter` iterations.
//!
//! With [`WeightsMode::UnitWeights`] every weight is 1 and the model is the
//! unweighted representation-coefficient TV baseline.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    difference_columns, procrustes_from_cross, shrink, truncated_svd_init, CirculantSolver,
    FactorPair,
};
use crate::metrics::{psnr_flat, sam_flat};
use crate::tensor::{Direction, HyperCube, PanImage};
use crate::weighting::{pan_is_flat, stage1_weights, stage2_weights, WeightField, WeightStage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    PanGuided,
    UnitWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// TV strength.
    pub tau: f64,
    /// Gaussian-noise strength.
    pub beta: f64,
    /// Sparse-noise strength.
    pub lambda: f64,
    pub rank: usize,
    /// Exponent of the pan edge weights.
    pub q: f64,
    /// Initial penalty; `None` means `1/‖Y‖₂` (largest singular value of the unfolded cube).
    pub mu0: Option<f64>,
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Side of the square window used for the stage-2 correlation maps.
    pub corr_window: usize,
    pub weights_mode: WeightsMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            beta: 100.0,
            lambda: 1.0,
            rank: 4,
            q: 5.0,
            mu0: None,
            rho: 1.5,
            tol: 1e-5,
            max_iter: 100,
            corr_window: 9,
            weights_mode: WeightsMode::PanGuided,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("q", self.q),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(mu) = self.mu0 {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::InvalidParameter(format!("mu0 must be positive, got {mu}")));
            }
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho must exceed 1, got {}", self.rho)));
        }
        if self.rank == 0 {
            return Err(Error::InvalidParameter("rank must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        if self.corr_window < 3 || self.corr_window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "corr_window must be odd and at least 3, got {}",
                self.corr_window
            )));
        }
        Ok(())
    }
}

/// All ADMM iterates. Matrices over pixels are `(rows·cols) × k`.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub factor: FactorPair,
    pub e: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub f_h: DMatrix<f64>,
    pub f_v: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub gamma_h: DMatrix<f64>,
    pub gamma_v: DMatrix<f64>,
    pub mu: f64,
    pub weights: WeightField,
    pub stage2_entered: bool,
    /// Completed iterations.
    pub iter: usize,
    /// Iterations where the `V` update had an all-zero cross product and kept the previous basis.
    pub degenerate_v_updates: usize,
}

impl SolverState {
    pub fn low_rank(&self) -> DMatrix<f64> {
        self.factor.reconstruct()
    }

    pub fn f(&self, dir: Direction) -> &DMatrix<f64> {
        match dir {
            Direction::Horizontal => &self.f_h,
            Direction::Vertical => &self.f_v,
        }
    }

    pub fn gamma_dir(&self, dir: Direction) -> &DMatrix<f64> {
        match dir {
            Direction::Horizontal => &self.gamma_h,
            Direction::Vertical => &self.gamma_v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `‖Y − U Vᵀ − E − S‖²_F` after the iteration.
    pub residual: f64,
    pub objective: f64,
    /// Penalty used during the iteration.
    pub mu: f64,
    pub stage: WeightStage,
    pub psnr: Option<f64>,
    pub sam: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Iteration index (1-based) of the first stage-2 record.
    pub fn stage_switch(&self) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.stage == WeightStage::Stage2)
            .map(|r| r.iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Denoised {
    pub restored: HyperCube,
    pub state: SolverState,
    pub trace: IterationTrace,
    pub termination: Termination,
    pub seconds: f64,
}

fn check_same(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `F_j = S_{τ/μ}(∇_j U + Γ_j/μ; W_j)` for both directions.
pub fn update_f(state: &SolverState, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mu = state.mu;
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("penalty must be positive, got {mu}")));
    }
    let (rows, cols) = (state.factor.rows, state.factor.cols);
    let alpha = tau / mu;
    let mut out = Vec::with_capacity(2);
    for dir in Direction::BOTH {
        let weights = state.weights.get(dir);
        let gamma = state.gamma_dir(dir);
        check_same(weights, gamma, "weights vs multiplier")?;
        let mut f = difference_columns(&state.factor.coeffs, rows, cols, dir);
        for ((v, g), w) in f.iter_mut().zip(gamma.iter()).zip(weights.iter()) {
            *v = shrink(*v + g / mu, alpha * w);
        }
        out.push(f);
    }
    let f_v = out.pop().unwrap();
    let f_h = out.pop().unwrap();
    Ok((f_h, f_v))
}

/// `Q = Y − E − S + Γ/μ`, the data target shared by the `U` and `V` updates.
pub fn data_target(y: &DMatrix<f64>, e: &DMatrix<f64>, s: &DMatrix<f64>, gamma: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let inv = 1.0 / mu;
    let mut q = y.clone();
    for (((q, e), s), g) in q.iter_mut().zip(e.iter()).zip(s.iter()).zip(gamma.iter()) {
        *q = *q - e - s + g * inv;
    }
    q
}

/// FFT solve for `U` given the data target `Q`: the right-hand side data term is `μ Q V`.
pub fn update_u(
    fft: &CirculantSolver,
    target: &DMatrix<f64>,
    state: &SolverState,
) -> Result<DMatrix<f64>> {
    let rhs = (target * &state.factor.basis) * state.mu;
    fft.solve(&rhs, &state.f_h, &state.f_v, &state.gamma_h, &state.gamma_v, state.mu)
}

/// `E = μ(Y − U Vᵀ − S + Γ/μ)/(2β + μ)`.
pub fn update_e(
    y: &DMatrix<f64>,
    low_rank: &DMatrix<f64>,
    s: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    beta: f64,
    mu: f64,
) -> DMatrix<f64> {
    let scale = mu / (2.0 * beta + mu);
    let inv = 1.0 / mu;
    let mut e = y.clone();
    for (((v, l), s), g) in e.iter_mut().zip(low_rank.iter()).zip(s.iter()).zip(gamma.iter()) {
        *v = scale * (*v - l - s + g * inv);
    }
    e
}

/// `S = S_{λ/μ}(Y − U Vᵀ − E + Γ/μ)`.
pub fn update_s(
    y: &DMatrix<f64>,
    low_rank: &DMatrix<f64>,
    e: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    lambda: f64,
    mu: f64,
) -> DMatrix<f64> {
    let alpha = lambda / mu;
    let inv = 1.0 / mu;
    let mut s = y.clone();
    for (((v, l), e), g) in s.iter_mut().zip(low_rank.iter()).zip(e.iter()).zip(gamma.iter()) {
        *v = shrink(*v - l - e + g * inv, alpha);
    }
    s
}

/// `Y − U Vᵀ − E − S`.
pub fn constraint_gap(y: &DMatrix<f64>, low_rank: &DMatrix<f64>, e: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut gap = y.clone();
    for (((v, l), e), s) in gap.iter_mut().zip(low_rank.iter()).zip(e.iter()).zip(s.iter()) {
        *v = *v - l - e - s;
    }
    gap
}

/// `Γ_j += μ(∇_j U − F_j)`, `Γ += μ(Y − U Vᵀ − E − S)`. Returns `(Γ_h, Γ_v, Γ)`.
pub fn update_multipliers(
    state: &SolverState,
    gap: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mu = state.mu;
    let (rows, cols) = (state.factor.rows, state.factor.cols);
    let mut next = Vec::with_capacity(2);
    for dir in Direction::BOTH {
        let grad = difference_columns(&state.factor.coeffs, rows, cols, dir);
        let mut g = state.gamma_dir(dir).clone();
        for ((g, d), f) in g.iter_mut().zip(grad.iter()).zip(state.f(dir).iter()) {
            *g += mu * (d - f);
        }
        next.push(g);
    }
    let mut gamma = state.gamma.clone();
    for (g, d) in gamma.iter_mut().zip(gap.iter()) {
        *g += mu * d;
    }
    let gamma_v = next.pop().unwrap();
    let gamma_h = next.pop().unwrap();
    (gamma_h, gamma_v, gamma)
}

/// Model objective `τ Σ_j ‖W_j ∘ ∇_j U‖₁ + β‖E‖²_F + λ‖S‖₁`.
pub fn objective(state: &SolverState, cfg: &SolverConfig) -> f64 {
    let (rows, cols) = (state.factor.rows, state.factor.cols);
    let mut tv = 0.0;
    for dir in Direction::BOTH {
        let grad = difference_columns(&state.factor.coeffs, rows, cols, dir);
        tv += grad
            .iter()
            .zip(state.weights.get(dir).iter())
            .map(|(g, w)| (w * g).abs())
            .sum::<f64>();
    }
    cfg.tau * tv + cfg.beta * state.e.norm_squared() + cfg.lambda * state.s.iter().map(|v| v.abs()).sum::<f64>()
}

/// Augmented Lagrangian with `μ/2` on both quadratic penalties, the form
/// whose block minimizers are exactly the closed-form updates above.
pub fn augmented_lagrangian(y: &DMatrix<f64>, state: &SolverState, cfg: &SolverConfig) -> f64 {
    let mu = state.mu;
    let (rows, cols) = (state.factor.rows, state.factor.cols);
    let mut value = 0.0;
    for dir in Direction::BOTH {
        let grad = difference_columns(&state.factor.coeffs, rows, cols, dir);
        let f = state.f(dir);
        value += cfg.tau
            * f.iter()
                .zip(state.weights.get(dir).iter())
                .map(|(f, w)| (w * f).abs())
                .sum::<f64>();
        value += 0.5
            * mu
            * grad
                .iter()
                .zip(f.iter())
                .zip(state.gamma_dir(dir).iter())
                .map(|((d, f), g)| (d - f + g / mu).powi(2))
                .sum::<f64>();
    }
    value += cfg.beta * state.e.norm_squared();
    value += cfg.lambda * state.s.iter().map(|v| v.abs()).sum::<f64>();
    let gap = constraint_gap(y, &state.low_rank(), &state.e, &state.s);
    value += 0.5 * mu * gap.iter().zip(state.gamma.iter()).map(|(d, g)| (d + g / mu).powi(2)).sum::<f64>();
    value
}

fn ensure_finite(m: &DMatrix<f64>, iteration: usize, quantity: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { iteration, quantity })
    }
}

/// Step-by-step driver. [`Admm::step`] runs one full iteration; the
/// individual block updates are exposed for inspection.
pub struct Admm<'a> {
    y: DMatrix<f64>,
    pan: &'a PanImage,
    cfg: SolverConfig,
    fft: CirculantSolver,
    guided: bool,
    reference: Option<&'a HyperCube>,
    pub state: SolverState,
    pub trace: IterationTrace,
}

impl<'a> Admm<'a> {
    /// Initializes `U, V` by truncated SVD, `F_j = ∇_j U`, everything else at zero,
    /// and the stage-1 weights.
    pub fn new(y: &HyperCube, pan: &'a PanImage, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let (rows, cols, bands) = y.dims();
        if (pan.rows(), pan.cols()) != (rows, cols) {
            return Err(Error::Shape(format!(
                "pan image is {}x{} but the cube grid is {rows}x{cols}",
                pan.rows(),
                pan.cols()
            )));
        }
        if cfg.rank >= bands {
            return Err(Error::InvalidParameter(format!(
                "rank {} must be below the band count {bands}",
                cfg.rank
            )));
        }
        if cfg.rank > rows * cols {
            return Err(Error::InvalidParameter(format!(
                "rank {} exceeds the pixel count {}",
                cfg.rank,
                rows * cols
            )));
        }
        let ymat = y.unfold();
        let init = truncated_svd_init(&ymat, rows, cols, cfg.rank)?;
        let mu = match cfg.mu0 {
            Some(mu) => mu,
            None if init.spectral_norm > 0.0 => 1.0 / init.spectral_norm,
            None => return Err(Error::Degenerate("cube is identically zero".into())),
        };
        // A flat pan image has no edges to follow; guidance degrades to unit weights.
        let guided = cfg.weights_mode == WeightsMode::PanGuided && !pan_is_flat(pan);
        let weights = if guided {
            stage1_weights(pan, cfg.q, cfg.rank)?
        } else {
            WeightField::unit(rows * cols, cfg.rank)
        };
        let factor = init.factors;
        let f_h = difference_columns(&factor.coeffs, rows, cols, Direction::Horizontal);
        let f_v = difference_columns(&factor.coeffs, rows, cols, Direction::Vertical);
        let pixels = rows * cols;
        let state = SolverState {
            e: DMatrix::zeros(pixels, bands),
            s: DMatrix::zeros(pixels, bands),
            gamma: DMatrix::zeros(pixels, bands),
            gamma_h: DMatrix::zeros(pixels, cfg.rank),
            gamma_v: DMatrix::zeros(pixels, cfg.rank),
            f_h,
            f_v,
            factor,
            mu,
            weights,
            stage2_entered: false,
            iter: 0,
            degenerate_v_updates: 0,
        };
        Ok(Self {
            y: ymat,
            pan,
            cfg: cfg.clone(),
            fft: CirculantSolver::new(rows, cols)?,
            guided,
            reference: None,
            state,
            trace: IterationTrace::default(),
        })
    }

    /// Ground truth for per-iteration PSNR and SAM in the trace.
    pub fn with_reference(mut self, reference: &'a HyperCube) -> Result<Self> {
        let (rows, cols) = (self.state.factor.rows, self.state.factor.cols);
        if reference.dims() != (rows, cols, self.y.ncols()) {
            return Err(Error::Shape(format!(
                "reference is {:?}, cube is {:?}",
                reference.dims(),
                (rows, cols, self.y.ncols())
            )));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    pub fn observed(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Whether pan guidance is active (pan-guided mode with a non-flat pan image).
    pub fn is_guided(&self) -> bool {
        self.guided
    }

    pub fn residual(&self) -> f64 {
        constraint_gap(&self.y, &self.state.low_rank(), &self.state.e, &self.state.s).norm_squared()
    }

    pub fn lagrangian(&self) -> f64 {
        augmented_lagrangian(&self.y, &self.state, &self.cfg)
    }

    pub fn apply_f(&mut self) -> Result<()> {
        let (f_h, f_v) = update_f(&self.state, self.cfg.tau)?;
        self.state.f_h = f_h;
        self.state.f_v = f_v;
        Ok(())
    }

    pub fn apply_u(&mut self) -> Result<()> {
        let st = &self.state;
        let target = data_target(&self.y, &st.e, &st.s, &st.gamma, st.mu);
        self.state.factor.coeffs = update_u(&self.fft, &target, &self.state)?;
        Ok(())
    }

    /// Switches to slice-aware weights the first time the residual drops below `100·tol`.
    /// Returns whether the switch happened now.
    pub fn maybe_enter_stage2(&mut self) -> Result<bool> {
        if !self.guided || self.state.stage2_entered {
            return Ok(false);
        }
        if self.residual() < 100.0 * self.cfg.tol {
            self.state.weights =
                stage2_weights(self.pan, &self.state.factor.coeffs, self.cfg.q, self.cfg.corr_window)?;
            self.state.stage2_entered = true;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn apply_v(&mut self) -> Result<()> {
        let st = &self.state;
        let target = data_target(&self.y, &st.e, &st.s, &st.gamma, st.mu);
        match procrustes_from_cross(&target.tr_mul(&st.factor.coeffs)) {
            Ok(v) => self.state.factor.basis = v,
            Err(Error::Degenerate(_)) => self.state.degenerate_v_updates += 1,
            Err(e) => return Err(e),
        }
        Ok(())
    }

    pub fn apply_e(&mut self) {
        let st = &self.state;
        self.state.e = update_e(&self.y, &st.low_rank(), &st.s, &st.gamma, self.cfg.beta, st.mu);
    }

    pub fn apply_s(&mut self) {
        let st = &self.state;
        self.state.s = update_s(&self.y, &st.low_rank(), &st.e, &st.gamma, self.cfg.lambda, st.mu);
    }

    /// Multiplier update; returns the squared constraint residual it used.
    pub fn apply_multipliers(&mut self) -> f64 {
        let st = &self.state;
        let gap = constraint_gap(&self.y, &st.low_rank(), &st.e, &st.s);
        let (gh, gv, g) = update_multipliers(st, &gap);
        self.state.gamma_h = gh;
        self.state.gamma_v = gv;
        self.state.gamma = g;
        gap.norm_squared()
    }

    /// One full iteration. Returns true when the stopping rule fires.
    pub fn step(&mut self) -> Result<bool> {
        let iteration = self.state.iter + 1;
        let mu_used = self.state.mu;
        let blame = |quantity: &'static str| {
            move |e: Error| match e {
                Error::NonFinite(_) => Error::Numerical { iteration, quantity },
                other => other,
            }
        };
        self.apply_f().map_err(blame("F"))?;
        self.apply_u().map_err(blame("U"))?;
        self.maybe_enter_stage2().map_err(blame("weights"))?;
        self.apply_v().map_err(blame("V"))?;

        // E, S and the multipliers share one U Vᵀ product.
        let (rows, cols) = (self.state.factor.rows, self.state.factor.cols);
        let low_rank = self.state.low_rank();
        let st = &self.state;
        let e = update_e(&self.y, &low_rank, &st.s, &st.gamma, self.cfg.beta, st.mu);
        let s = update_s(&self.y, &low_rank, &e, &st.gamma, self.cfg.lambda, st.mu);
        self.state.e = e;
        self.state.s = s;
        let gap = constraint_gap(&self.y, &low_rank, &self.state.e, &self.state.s);
        let (gh, gv, g) = update_multipliers(&self.state, &gap);
        self.state.gamma_h = gh;
        self.state.gamma_v = gv;
        self.state.gamma = g;
        self.state.mu *= self.cfg.rho;
        self.state.iter = iteration;

        ensure_finite(&self.state.factor.coeffs, iteration, "U")?;
        ensure_finite(&self.state.factor.basis, iteration, "V")?;
        ensure_finite(&self.state.e, iteration, "E")?;
        ensure_finite(&self.state.s, iteration, "S")?;
        if !self.state.mu.is_finite() {
            return Err(Error::Numerical { iteration, quantity: "mu" });
        }

        let residual = gap.norm_squared();
        let (psnr, sam) = match self.reference {
            Some(reference) => {
                let pixels = rows * cols;
                (
                    Some(psnr_flat(low_rank.as_slice(), reference.data(), pixels)),
                    Some(sam_flat(low_rank.as_slice(), reference.data(), pixels).0),
                )
            }
            None => (None, None),
        };
        self.trace.records.push(IterationRecord {
            iter: iteration,
            residual,
            objective: objective(&self.state, &self.cfg),
            mu: mu_used,
            stage: self.state.weights.stage,
            psnr,
            sam,
        });
        Ok(residual < self.cfg.tol)
    }

    /// Runs until the residual drops below `tol` or `max_iter` iterations pass.
    pub fn run(mut self) -> Result<Denoised> {
        let start = Instant::now();
        let mut termination = Termination::MaxIterations;
        while self.state.iter < self.cfg.max_iter {
            if self.step()? {
                termination = Termination::Converged;
                break;
            }
        }
        let (rows, cols) = (self.state.factor.rows, self.state.factor.cols);
        let restored = HyperCube::fold(&self.state.low_rank(), rows, cols)?;
        Ok(Denoised {
            restored,
            state: self.state,
            trace: self.trace,
            termination,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Denoises `y` guided by `pan`; returns the restored cube `fold(U Vᵀ)` with
/// the final state and the iteration trace.
pub fn denoise(y: &HyperCube, pan: &PanImage, cfg: &SolverConfig) -> Result<Denoised> {
    Admm::new(y, pan, cfg)?.run()
}

/// As [`denoise`], additionally tracking PSNR and SAM against `reference` per iteration.
pub fn denoise_with_reference(
    y: &HyperCube,
    pan: &PanImage,
    cfg: &SolverConfig,
    reference: &HyperCube,
) -> Result<Denoised> {
    Admm::new(y, pan, cfg)?.with_reference(reference)?.run()
}
