//! Total-variation weights derived from the panchromatic image.
//!
//! Stage 1 uses the same spatial map `(1 − |∇_j P|)^q` for every coefficient
//! slice. Stage 2 scales it per slice by the magnitude of the local
//! correlation between the slice gradient and the pan gradient, so slices
//! that do not share the pan structure receive weaker guidance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_finite, diff_into, Direction, Field, PanImage};

pub const DEFAULT_Q: f64 = 5.0;
pub const DEFAULT_CORR_WINDOW: usize = 9;

/// Windows whose mean squared deviation falls below this carry no
/// correlation evidence.
const VARIANCE_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightStage {
    Stage1,
    Stage2,
}

/// Per-direction, per-slice weights, each `(rows·cols) × R`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub horizontal: DMatrix<f64>,
    pub vertical: DMatrix<f64>,
    pub stage: WeightStage,
    pub q: f64,
    pub corr_window: Option<usize>,
}

impl WeightField {
    /// All-ones weights: plain (unweighted) total variation.
    pub fn unit(pixels: usize, rank: usize) -> Self {
        Self {
            horizontal: DMatrix::from_element(pixels, rank, 1.0),
            vertical: DMatrix::from_element(pixels, rank, 1.0),
            stage: WeightStage::Stage1,
            q: 0.0,
            corr_window: None,
        }
    }

    pub fn get(&self, dir: Direction) -> &DMatrix<f64> {
        match dir {
            Direction::Horizontal => &self.horizontal,
            Direction::Vertical => &self.vertical,
        }
    }

    pub fn rank(&self) -> usize {
        self.horizontal.ncols()
    }
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("weight exponent q must be positive, got {q}")))
    }
}

/// `(1 − |∇_j P|)^q` for one direction, column-major.
pub fn pan_edge_weights(pan: &PanImage, q: f64, dir: Direction) -> Result<Vec<f64>> {
    check_q(q)?;
    let (rows, cols) = (pan.rows(), pan.cols());
    let mut grad = vec![0.0; rows * cols];
    diff_into(dir, pan.field().as_slice(), rows, cols, &mut grad);
    Ok(grad.iter().map(|g| (1.0 - g.abs()).clamp(0.0, 1.0).powf(q)).collect())
}

/// True when the pan image has no gradient anywhere, i.e. carries no guidance.
pub fn pan_is_flat(pan: &PanImage) -> bool {
    let f = pan.field();
    f.iter().all(|&v| v == f[(0, 0)])
}

pub fn stage1_weights(pan: &PanImage, q: f64, rank: usize) -> Result<WeightField> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be positive".into()));
    }
    let expand = |w: Vec<f64>| {
        let n = w.len();
        DMatrix::from_fn(n, rank, |p, _| w[p])
    };
    Ok(WeightField {
        horizontal: expand(pan_edge_weights(pan, q, Direction::Horizontal)?),
        vertical: expand(pan_edge_weights(pan, q, Direction::Vertical)?),
        stage: WeightStage::Stage1,
        q,
        corr_window: None,
    })
}

/// Pearson correlation of `a` and `b` over each centred `window × window`
/// neighbourhood, with replicate padding at the borders. Windows where
/// either field is (numerically) constant yield 0.
pub fn local_correlation(a: &Field, b: &Field, window: usize) -> Result<Field> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "correlation inputs differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "correlation window must be odd and at least 3, got {window}"
        )));
    }
    check_finite(a.as_slice(), "correlation input")?;
    check_finite(b.as_slice(), "correlation input")?;
    let (rows, cols) = a.shape();
    let data = correlation_map(a.as_slice(), b.as_slice(), rows, cols, window);
    Ok(Field::from_vec(rows, cols, data))
}

fn correlation_map(a: &[f64], b: &[f64], rows: usize, cols: usize, window: usize) -> Vec<f64> {
    let half = (window / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let n = (window * window) as f64;
    let mut out = vec![0.0; rows * cols];
    out.par_chunks_mut(rows).enumerate().for_each(|(c, col_out)| {
        let mut idx = Vec::with_capacity(window * window);
        for (r, o) in col_out.iter_mut().enumerate() {
            idx.clear();
            for dc in -half..=half {
                let cc = clamp(c as isize + dc, cols);
                for dr in -half..=half {
                    idx.push(clamp(r as isize + dr, rows) + rows * cc);
                }
            }
            let (mut ma, mut mb) = (0.0, 0.0);
            for &i in &idx {
                ma += a[i];
                mb += b[i];
            }
            ma /= n;
            mb /= n;
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for &i in &idx {
                let (da, db) = (a[i] - ma, b[i] - mb);
                sab += da * db;
                saa += da * da;
                sbb += db * db;
            }
            *o = if saa / n <= VARIANCE_FLOOR || sbb / n <= VARIANCE_FLOOR {
                0.0
            } else {
                (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
            };
        }
    });
    out
}

/// Slice-aware weights `|R_j(:,:,i)| ∘ (1 − |∇_j P|)^q`, where `R_j(:,:,i)`
/// is the local correlation between `∇_j U(:,:,i)` and `∇_j P`.
///
/// `coeffs` is the `(rows·cols) × R` coefficient matrix.
pub fn stage2_weights(pan: &PanImage, coeffs: &DMatrix<f64>, q: f64, window: usize) -> Result<WeightField> {
    let (rows, cols) = (pan.rows(), pan.cols());
    if coeffs.nrows() != rows * cols {
        return Err(Error::Shape(format!(
            "{} coefficient pixels for a {rows}x{cols} pan image",
            coeffs.nrows()
        )));
    }
    check_finite(coeffs.as_slice(), "coefficients")?;
    let rank = coeffs.ncols();
    let mut maps = Vec::with_capacity(2);
    for dir in Direction::BOTH {
        let base = pan_edge_weights(pan, q, dir)?;
        let mut pan_grad = vec![0.0; rows * cols];
        diff_into(dir, pan.field().as_slice(), rows, cols, &mut pan_grad);
        let grad_pan = Field::from_vec(rows, cols, pan_grad);
        let mut w = DMatrix::zeros(rows * cols, rank);
        let mut slice_grad = vec![0.0; rows * cols];
        for i in 0..rank {
            diff_into(dir, coeffs.column(i).as_slice(), rows, cols, &mut slice_grad);
            let corr = local_correlation(&Field::from_column_slice(rows, cols, &slice_grad), &grad_pan, window)?;
            for ((dst, r), b) in w.column_mut(i).iter_mut().zip(corr.iter()).zip(&base) {
                *dst = r.abs() * b;
            }
        }
        maps.push(w);
    }
    let vertical = maps.pop().unwrap();
    let horizontal = maps.pop().unwrap();
    Ok(WeightField {
        horizontal,
        vertical,
        stage: WeightStage::Stage2,
        q,
        corr_window: Some(window),
    })
}
