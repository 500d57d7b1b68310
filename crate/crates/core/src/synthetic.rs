//! Deterministic test scene: a rank-4 cube `X = A Sᵀ` with piecewise-smooth
//! abundance maps `A` (sharp region boundaries, smooth interiors, rows
//! summing to one) and smooth spectral signatures `S` with values in
//! `[0.1, 0.9]`, so `X` stays in `[0.1, 0.9]`. The guidance image is the
//! band mean of the noiseless cube.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{HyperCube, PanImage};

pub const SCENE_RANK: usize = 4;

#[derive(Debug, Clone)]
pub struct Scene {
    pub clean: HyperCube,
    pub pan: PanImage,
    /// `(rows·cols) × 4`
    pub abundances: DMatrix<f64>,
    /// `bands × 4`
    pub spectra: DMatrix<f64>,
}

fn region(r: f64, c: f64) -> usize {
    // r, c in [0, 1)
    let (dr, dc) = (r - 0.62, c - 0.35);
    if dr * dr + dc * dc < 0.22 * 0.22 {
        2
    } else if (0.12..0.45).contains(&r) && (0.5..0.88).contains(&c) {
        1
    } else if r + 0.6 * c > 1.25 {
        3
    } else {
        0
    }
}

pub fn abundance_maps(rows: usize, cols: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(rows * cols, SCENE_RANK);
    for c in 0..cols {
        for r in 0..rows {
            let (y, x) = ((r as f64 + 0.5) / rows as f64, (c as f64 + 0.5) / cols as f64);
            let home = region(y, x);
            let mut raw = [0.0; SCENE_RANK];
            for (k, v) in raw.iter_mut().enumerate() {
                let kf = k as f64;
                let smooth = 0.5 + 0.5 * (2.0 * PI * ((1.0 + kf) * 0.7 * x + 0.9 * y) + kf).sin();
                *v = 0.08 + 0.12 * smooth;
            }
            let lift = 0.75 + 0.25 * (2.0 * PI * (x - 0.6 * y)).cos();
            raw[home] += 1.6 * lift;
            let total: f64 = raw.iter().sum();
            for k in 0..SCENE_RANK {
                a[(r + rows * c, k)] = raw[k] / total;
            }
        }
    }
    a
}

pub fn signatures(bands: usize) -> DMatrix<f64> {
    let denom = (bands.max(2) - 1) as f64;
    DMatrix::from_fn(bands, SCENE_RANK, |b, k| {
        let t = b as f64 / denom;
        let kf = k as f64;
        let centre = 0.15 + 0.23 * kf;
        let bump = (-((t - centre) / 0.22).powi(2)).exp();
        let slope = 0.5 + 0.5 * (PI * (0.6 + 0.35 * kf) * t + 1.3 * kf).cos();
        0.1 + 0.8 * (0.55 * bump + 0.45 * slope)
    })
}

/// Builds the scene on a `rows × cols × bands` grid.
pub fn scene(rows: usize, cols: usize, bands: usize) -> Result<Scene> {
    if rows < 2 || cols < 2 || bands <= SCENE_RANK {
        return Err(Error::InvalidParameter(format!(
            "scene needs at least 2x2 pixels and more than {SCENE_RANK} bands, got {rows}x{cols}x{bands}"
        )));
    }
    let abundances = abundance_maps(rows, cols);
    let spectra = signatures(bands);
    let clean = HyperCube::fold(&(&abundances * spectra.transpose()), rows, cols)?;
    let pan = PanImage::normalize(clean.band_mean())?;
    Ok(Scene { clean, pan, abundances, spectra })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_rank_four_and_bounded() {
        let s = scene(40, 36, 12).unwrap();
        let (lo, hi) = s.clean.min_max();
        assert!(lo >= 0.1 && hi <= 0.9, "{lo} {hi}");
        let sv = s.clean.unfold().singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[3] > 1e-3 * sv[0]);
        assert!(sv[4] < 1e-10 * sv[0]);
        for p in 0..40 * 36 {
            assert!((s.abundances.row(p).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pan_has_edges_and_full_range() {
        let s = scene(32, 32, 10).unwrap();
        assert!(!s.pan.is_degenerate());
        let f = s.pan.field();
        assert_eq!((f.min(), f.max()), (0.0, 1.0));
        let steps: Vec<f64> = (0..31).map(|c| (f[(20, c + 1)] - f[(20, c)]).abs()).collect();
        let biggest = steps.iter().cloned().fold(0.0, f64::max);
        let median = {
            let mut s = steps.clone();
            s.sort_by(f64::total_cmp);
            s[15]
        };
        assert!(biggest > 10.0 * median);
    }

    #[test]
    fn tiny_requests_are_rejected() {
        assert!(scene(1, 8, 8).is_err());
        assert!(scene(8, 8, 4).is_err());
    }
}
