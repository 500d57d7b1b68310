//! Numerical kernels used by the ADMM iterations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{check_finite, diff_into, Direction, Field};

/// Low-rank factors `X = U Vᵀ` of an unfolded cube.
///
/// `coeffs` is `(rows·cols) × rank`; column `i` is the i-th coefficient
/// image stored column-major. `basis` is `bands × rank` with orthonormal
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub rows: usize,
    pub cols: usize,
    pub coeffs: DMatrix<f64>,
    pub basis: DMatrix<f64>,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn coeff_image(&self, i: usize) -> Field {
        Field::from_column_slice(self.rows, self.cols, self.coeffs.column(i).as_slice())
    }

    /// `U Vᵀ`, pixels × bands.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.coeffs * self.basis.transpose()
    }
}

/// Result of the rank-`R` initialisation.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub factors: FactorPair,
    /// Leading `R` singular values, descending.
    pub singular_values: DVector<f64>,
    /// Largest singular value of the full matrix.
    pub spectral_norm: f64,
}

/// Rank-`R` truncated SVD of a `(rows·cols) × bands` matrix.
///
/// The right singular vectors come from the eigendecomposition of the
/// `bands × bands` Gram matrix, which is cheap when pixels far outnumber
/// bands. `U = Y V`, so `U Vᵀ` is the best rank-`R` approximation.
pub fn truncated_svd_init(y: &DMatrix<f64>, rows: usize, cols: usize, rank: usize) -> Result<TruncatedSvd> {
    if rows * cols != y.nrows() {
        return Err(Error::Shape(format!(
            "{}-row matrix does not unfold a {rows}x{cols} grid",
            y.nrows()
        )));
    }
    if rank == 0 || rank > y.nrows().min(y.ncols()) {
        return Err(Error::InvalidParameter(format!(
            "rank {rank} outside 1..={} for a {}x{} matrix",
            y.nrows().min(y.ncols()),
            y.nrows(),
            y.ncols()
        )));
    }
    check_finite(y.as_slice(), "svd input")?;

    let gram = y.tr_mul(y);
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let bands = y.ncols();
    let mut basis = DMatrix::zeros(bands, rank);
    let mut singular_values = DVector::zeros(rank);
    for (k, &idx) in order.iter().take(rank).enumerate() {
        basis.set_column(k, &eig.eigenvectors.column(idx));
        singular_values[k] = eig.eigenvalues[idx].max(0.0).sqrt();
    }
    let spectral_norm = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let coeffs = y * &basis;
    Ok(TruncatedSvd {
        factors: FactorPair {
            rows,
            cols,
            coeffs,
            basis,
        },
        singular_values,
        spectral_norm,
    })
}

#[inline]
pub fn shrink(x: f64, threshold: f64) -> f64 {
    x.signum() * (x.abs() - threshold).max(0.0)
}

/// `sign(x) · max(|x| - alpha, 0)` elementwise.
pub fn soft_threshold(x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_threshold(alpha)?;
    Ok(x.iter().map(|&v| shrink(v, alpha)).collect())
}

/// `sign(x) · max(|x| - alpha·w, 0)` elementwise; zero weights pass values through.
pub fn weighted_soft_threshold(x: &[f64], alpha: f64, weights: &[f64]) -> Result<Vec<f64>> {
    check_threshold(alpha)?;
    if x.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} values but {} weights",
            x.len(),
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "weight {i} is {}, weights must be nonnegative",
            weights[i]
        )));
    }
    Ok(x.iter()
        .zip(weights)
        .map(|(&v, &w)| shrink(v, alpha * w))
        .collect())
}

fn check_threshold(alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "threshold must be finite and nonnegative, got {alpha}"
        )))
    }
}

/// FFT-domain solver for `(μ I + μ Σ_j ∇_jᵀ∇_j) u = b_data + Σ_j ∇_jᵀ(μ F_j − Γ_j)`
/// on a fixed `rows × cols` grid with circular boundaries.
pub struct CirculantSolver {
    rows: usize,
    cols: usize,
    fwd_col: Arc<dyn Fft<f64>>,
    fwd_row: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    /// Transfer functions of the horizontal and vertical difference kernels.
    eig_h: Vec<Complex64>,
    eig_v: Vec<Complex64>,
    /// `|FFT(∇_h)|² + |FFT(∇_v)|²`
    laplacian: Vec<f64>,
}

impl CirculantSolver {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("empty grid".into()));
        }
        let mut planner = FftPlanner::new();
        let mut solver = Self {
            rows,
            cols,
            fwd_col: planner.plan_fft_forward(rows),
            fwd_row: planner.plan_fft_forward(cols),
            inv_col: planner.plan_fft_inverse(rows),
            inv_row: planner.plan_fft_inverse(cols),
            eig_h: Vec::new(),
            eig_v: Vec::new(),
            laplacian: Vec::new(),
        };
        // Difference kernels embedded in a rows × cols field: -1 at the
        // origin and +1 at the wrapped neighbour that the forward difference
        // reads from.
        let n = rows * cols;
        let mut kh = vec![Complex64::new(0.0, 0.0); n];
        kh[0].re -= 1.0;
        kh[rows * (cols - 1)].re += 1.0;
        let mut kv = vec![Complex64::new(0.0, 0.0); n];
        kv[0].re -= 1.0;
        kv[rows - 1].re += 1.0;
        solver.fft2(&mut kh, false);
        solver.fft2(&mut kv, false);
        solver.laplacian = kh.iter().zip(&kv).map(|(h, v)| h.norm_sqr() + v.norm_sqr()).collect();
        solver.eig_h = kh;
        solver.eig_v = kv;
        Ok(solver)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Transfer function of one difference operator, column-major.
    pub fn transfer(&self, dir: Direction) -> &[Complex64] {
        match dir {
            Direction::Horizontal => &self.eig_h,
            Direction::Vertical => &self.eig_v,
        }
    }

    /// Unnormalized 2-D DFT of a column-major buffer (inverse scales by 1/n).
    pub fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let (rows, cols) = (self.rows, self.cols);
        debug_assert_eq!(buf.len(), rows * cols);
        let (col_plan, row_plan) = if inverse {
            (&self.inv_col, &self.inv_row)
        } else {
            (&self.fwd_col, &self.fwd_row)
        };
        col_plan.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); rows * cols];
        for c in 0..cols {
            for r in 0..rows {
                t[c + cols * r] = buf[r + rows * c];
            }
        }
        row_plan.process(&mut t);
        for r in 0..rows {
            for c in 0..cols {
                buf[r + rows * c] = t[c + cols * r];
            }
        }
        if inverse {
            let scale = 1.0 / (rows * cols) as f64;
            buf.iter_mut().for_each(|v| *v *= scale);
        }
    }

    fn to_complex(values: impl Iterator<Item = f64>) -> Vec<Complex64> {
        values.map(|v| Complex64::new(v, 0.0)).collect()
    }

    /// Solves one coefficient slice. All slices are column-major `rows × cols`.
    pub fn solve_slice(
        &self,
        rhs_data: &[f64],
        f_h: &[f64],
        f_v: &[f64],
        gamma_h: &[f64],
        gamma_v: &[f64],
        mu: f64,
    ) -> Vec<f64> {
        let mut numer = Self::to_complex(rhs_data.iter().copied());
        self.fft2(&mut numer, false);
        for (dir, f, g) in [(Direction::Horizontal, f_h, gamma_h), (Direction::Vertical, f_v, gamma_v)] {
            let mut term = Self::to_complex(f.iter().zip(g).map(|(&f, &g)| mu * f - g));
            self.fft2(&mut term, false);
            for ((n, t), k) in numer.iter_mut().zip(&term).zip(self.transfer(dir)) {
                *n += k.conj() * t;
            }
        }
        for (n, lap) in numer.iter_mut().zip(&self.laplacian) {
            *n /= mu + mu * lap;
        }
        self.fft2(&mut numer, true);
        numer.into_iter().map(|v| v.re).collect()
    }

    /// Slice-by-slice solve; every matrix is `(rows·cols) × R`.
    pub fn solve(
        &self,
        rhs_data: &DMatrix<f64>,
        f_h: &DMatrix<f64>,
        f_v: &DMatrix<f64>,
        gamma_h: &DMatrix<f64>,
        gamma_v: &DMatrix<f64>,
        mu: f64,
    ) -> Result<DMatrix<f64>> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("penalty must be positive, got {mu}")));
        }
        let shape = rhs_data.shape();
        if shape.0 != self.rows * self.cols {
            return Err(Error::Shape(format!(
                "{} pixels for a {}x{} grid",
                shape.0, self.rows, self.cols
            )));
        }
        for (m, name) in [(f_h, "F_h"), (f_v, "F_v"), (gamma_h, "Γ_h"), (gamma_v, "Γ_v")] {
            if m.shape() != shape {
                return Err(Error::Shape(format!("{name} is {:?}, expected {shape:?}", m.shape())));
            }
        }
        use rayon::prelude::*;
        let slices: Vec<Vec<f64>> = (0..shape.1)
            .into_par_iter()
            .map(|i| {
                self.solve_slice(
                    rhs_data.column(i).as_slice(),
                    f_h.column(i).as_slice(),
                    f_v.column(i).as_slice(),
                    gamma_h.column(i).as_slice(),
                    gamma_v.column(i).as_slice(),
                    mu,
                )
            })
            .collect();
        let mut out = DMatrix::zeros(shape.0, shape.1);
        for (i, s) in slices.iter().enumerate() {
            out.column_mut(i).copy_from_slice(s);
        }
        Ok(out)
    }
}

/// One-shot form of [`CirculantSolver::solve`].
pub fn solve_u(
    rows: usize,
    cols: usize,
    rhs_data: &DMatrix<f64>,
    f_h: &DMatrix<f64>,
    f_v: &DMatrix<f64>,
    gamma_h: &DMatrix<f64>,
    gamma_v: &DMatrix<f64>,
    mu: f64,
) -> Result<DMatrix<f64>> {
    CirculantSolver::new(rows, cols)?.solve(rhs_data, f_h, f_v, gamma_h, gamma_v, mu)
}

/// Applies one difference operator to every column of a `(rows·cols) × k` matrix.
pub fn difference_columns(m: &DMatrix<f64>, rows: usize, cols: usize, dir: Direction) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.ncols() {
        diff_into(dir, m.column(i).as_slice(), rows, cols, out.column_mut(i).as_mut_slice());
    }
    out
}

/// Orthonormal `V` maximizing `trace(Vᵀ M)` for a `bands × R` cross product `M = QᵀU`.
pub fn procrustes_from_cross(cross: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(cross.as_slice(), "procrustes cross product")?;
    if cross.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("QᵀU is identically zero".into()));
    }
    let svd = cross.clone().svd(true, true);
    let (b, dt) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not return singular vectors".into())),
    };
    Ok(b * dt)
}

/// Orthogonal Procrustes update: `V = B Dᵀ` with `[B, C, D] = svd(Qᵀ U)`,
/// the orthonormal `V` minimizing `‖Q − U Vᵀ‖_F`.
pub fn procrustes_v(q: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q.nrows() != u.nrows() {
        return Err(Error::Shape(format!(
            "Q has {} rows but U has {}",
            q.nrows(),
            u.nrows()
        )));
    }
    if u.ncols() > q.ncols() {
        return Err(Error::Shape(format!(
            "rank {} exceeds {} bands",
            u.ncols(),
            q.ncols()
        )));
    }
    procrustes_from_cross(&q.tr_mul(u))
}
