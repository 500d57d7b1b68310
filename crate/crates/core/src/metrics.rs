//! Full-reference quality metrics on a data range of 1.
//!
//! PSNR and SSIM are computed per band and averaged. ERGAS uses a
//! resolution ratio of 1 and is normalized by the reference band means, so
//! it is not symmetric in its arguments. SAM is the mean per-pixel spectral
//! angle in degrees over pixels where both spectra are nonzero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::HyperCube;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// dB, mean over bands; `+inf` when the cubes are identical.
    pub psnr: f64,
    pub ssim: f64,
    pub ergas: f64,
    /// Degrees.
    pub sam: f64,
    /// Pixels left out of SAM because one of the spectra is all zero.
    pub sam_excluded: usize,
    pub per_band: Vec<BandMetrics>,
}

pub(crate) fn band_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn mse_to_psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean-over-bands PSNR of two column-major cubes given as flat buffers.
pub(crate) fn psnr_flat(a: &[f64], b: &[f64], pixels: usize) -> f64 {
    let bands = a.len() / pixels;
    a.chunks_exact(pixels)
        .zip(b.chunks_exact(pixels))
        .map(|(x, y)| mse_to_psnr(band_mse(x, y)))
        .sum::<f64>()
        / bands as f64
}

/// Mean spectral angle in degrees and the number of excluded pixels.
pub(crate) fn sam_flat(a: &[f64], b: &[f64], pixels: usize) -> (f64, usize) {
    let mut na = vec![0.0; pixels];
    let mut nb = vec![0.0; pixels];
    for (x, y) in a.chunks_exact(pixels).zip(b.chunks_exact(pixels)) {
        for p in 0..pixels {
            na[p] += x[p] * x[p];
            nb[p] += y[p] * y[p];
        }
    }
    for v in na.iter_mut().chain(nb.iter_mut()) {
        *v = v.sqrt();
    }
    // angle = 2·atan2(‖â − b̂‖, ‖â + b̂‖), exact near 0° unlike acos
    let mut diff = vec![0.0; pixels];
    let mut sum = vec![0.0; pixels];
    for (x, y) in a.chunks_exact(pixels).zip(b.chunks_exact(pixels)) {
        for p in 0..pixels {
            if na[p] > 0.0 && nb[p] > 0.0 {
                let (u, v) = (x[p] / na[p], y[p] / nb[p]);
                diff[p] += (u - v) * (u - v);
                sum[p] += (u + v) * (u + v);
            }
        }
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for p in 0..pixels {
        if na[p] > 0.0 && nb[p] > 0.0 {
            total += (2.0 * diff[p].sqrt().atan2(sum[p].sqrt())).to_degrees();
            counted += 1;
        }
    }
    let mean = if counted == 0 { 0.0 } else { total / counted as f64 };
    (mean, pixels - counted)
}

pub fn psnr(x: &HyperCube, reference: &HyperCube) -> Result<f64> {
    x.same_shape(reference)?;
    Ok(psnr_flat(x.data(), reference.data(), x.pixels()))
}

pub fn sam(x: &HyperCube, reference: &HyperCube) -> Result<f64> {
    x.same_shape(reference)?;
    Ok(sam_flat(x.data(), reference.data(), x.pixels()).0)
}

pub fn ergas(x: &HyperCube, reference: &HyperCube) -> Result<f64> {
    x.same_shape(reference)?;
    let pixels = x.pixels();
    let mut acc = 0.0;
    for b in 0..x.bands() {
        let r = reference.band_slice(b);
        let mean = r.iter().sum::<f64>() / pixels as f64;
        if mean == 0.0 {
            return Err(Error::Degenerate(format!("reference band {b} has zero mean")));
        }
        acc += band_mse(x.band_slice(b), r) / (mean * mean);
    }
    Ok(100.0 * (acc / x.bands() as f64).sqrt())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable 'valid' filtering of a column-major image.
fn filter_valid(src: &[f64], rows: usize, cols: usize, w: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = w.len();
    let (vr, vc) = (rows - k + 1, cols - k + 1);
    // along rows (within each column)
    let mut tmp = vec![0.0; vr * cols];
    for c in 0..cols {
        let col = &src[c * rows..(c + 1) * rows];
        for r in 0..vr {
            tmp[r + vr * c] = w.iter().zip(&col[r..r + k]).map(|(a, b)| a * b).sum();
        }
    }
    // across columns
    let mut out = vec![0.0; vr * vc];
    for c in 0..vc {
        for (j, wj) in w.iter().enumerate() {
            let src_col = &tmp[(c + j) * vr..(c + j + 1) * vr];
            for (o, v) in out[c * vr..(c + 1) * vr].iter_mut().zip(src_col) {
                *o += wj * v;
            }
        }
    }
    (out, vr, vc)
}

/// Mean SSIM of one band pair, Gaussian 11×11 window with σ = 1.5.
pub fn ssim_band(x: &[f64], y: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {rows}x{cols}"
        )));
    }
    if x.len() != rows * cols || y.len() != rows * cols {
        return Err(Error::Shape("band length does not match grid".into()));
    }
    let w = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, _, _) = filter_valid(x, rows, cols, &w);
    let (my, _, _) = filter_valid(y, rows, cols, &w);
    let (sxx, _, _) = filter_valid(&xx, rows, cols, &w);
    let (syy, _, _) = filter_valid(&yy, rows, cols, &w);
    let (sxy, _, _) = filter_valid(&xy, rows, cols, &w);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / n as f64)
}

pub fn ssim(x: &HyperCube, reference: &HyperCube) -> Result<f64> {
    x.same_shape(reference)?;
    let mut total = 0.0;
    for b in 0..x.bands() {
        total += ssim_band(x.band_slice(b), reference.band_slice(b), x.rows(), x.cols())?;
    }
    Ok(total / x.bands() as f64)
}

/// All four metrics plus the per-band breakdown.
pub fn evaluate(x: &HyperCube, reference: &HyperCube) -> Result<MetricsReport> {
    x.same_shape(reference)?;
    let mut per_band = Vec::with_capacity(x.bands());
    for b in 0..x.bands() {
        let (xb, rb) = (x.band_slice(b), reference.band_slice(b));
        let mse = band_mse(xb, rb);
        per_band.push(BandMetrics {
            psnr: mse_to_psnr(mse),
            ssim: ssim_band(xb, rb, x.rows(), x.cols())?,
            rmse: mse.sqrt(),
        });
    }
    let bands = per_band.len() as f64;
    let (sam, sam_excluded) = sam_flat(x.data(), reference.data(), x.pixels());
    Ok(MetricsReport {
        psnr: per_band.iter().map(|m| m.psnr).sum::<f64>() / bands,
        ssim: per_band.iter().map(|m| m.ssim).sum::<f64>() / bands,
        ergas: ergas(x, reference)?,
        sam,
        sam_excluded,
        per_band,
    })
}

const LABEL_WIDTH: usize = 16;
const VALUE_WIDTH: usize = 14;

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

/// Fixed-column table: a 16-character label then PSNR, SSIM, ERGAS and SAM
/// right-aligned in 14-character columns.
pub fn format_table(rows: &[(&str, &MetricsReport)]) -> String {
    let mut out = format!(
        "{:<LABEL_WIDTH$}{:>VALUE_WIDTH$}{:>VALUE_WIDTH$}{:>VALUE_WIDTH$}{:>VALUE_WIDTH$}\n",
        "label", "PSNR", "SSIM", "ERGAS", "SAM"
    );
    for (label, m) in rows {
        let label: String = label.chars().take(LABEL_WIDTH - 1).collect();
        out.push_str(&format!(
            "{:<LABEL_WIDTH$}{:>VALUE_WIDTH$}{:>VALUE_WIDTH$}{:>VALUE_WIDTH$}{:>VALUE_WIDTH$}\n",
            label,
            fmt_value(m.psnr),
            fmt_value(m.ssim),
            fmt_value(m.ergas),
            fmt_value(m.sam)
        ));
    }
    out
}

/// Reads a table written by [`format_table`] by column offsets.
pub fn parse_table(text: &str) -> Result<Vec<(String, [f64; 4])>> {
    let bad = |msg: String| Error::format("metrics table", msg);
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        if line.len() != LABEL_WIDTH + 4 * VALUE_WIDTH {
            return Err(bad(format!("line {} has width {}", n + 1, line.len())));
        }
        let label = line[..LABEL_WIDTH].trim_end().to_string();
        let mut values = [0.0; 4];
        for (k, v) in values.iter_mut().enumerate() {
            let start = LABEL_WIDTH + k * VALUE_WIDTH;
            let field = line[start..start + VALUE_WIDTH].trim();
            *v = field
                .parse()
                .map_err(|_| bad(format!("line {}: cannot parse {field:?}", n + 1)))?;
        }
        rows.push((label, values));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(seed: u64, rows: usize, cols: usize, bands: usize) -> HyperCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols * bands).map(|_| rng.random_range(0.05..0.95)).collect();
        HyperCube::new(rows, cols, bands, data).unwrap()
    }

    #[test]
    fn identical_cubes_score_perfectly() {
        let a = random_cube(1, 12, 13, 3);
        let m = evaluate(&a, &a).unwrap();
        assert_eq!(m.psnr, f64::INFINITY);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        assert_eq!(m.ergas, 0.0);
        assert_eq!(m.sam, 0.0);
    }

    #[test]
    fn half_offset_gives_six_decibels() {
        let zero = HyperCube::zeros(4, 4, 2).unwrap();
        let half = HyperCube::new(4, 4, 2, vec![0.5; 32]).unwrap();
        let p = psnr(&half, &zero).unwrap();
        assert!((p - 6.020599913279624).abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_direct_mse() {
        let a = random_cube(2, 6, 5, 4);
        let b = random_cube(3, 6, 5, 4);
        let mut expected = 0.0;
        for band in 0..4 {
            let mut se = 0.0;
            for r in 0..6 {
                for c in 0..5 {
                    se += (a.get(r, c, band) - b.get(r, c, band)).powi(2);
                }
            }
            expected += 10.0 * (30.0 / se).log10();
        }
        expected /= 4.0;
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ergas_single_band_example() {
        // reference mean 0.5, constant error 0.05
        let reference = HyperCube::new(2, 2, 1, vec![0.4, 0.6, 0.5, 0.5]).unwrap();
        let x = HyperCube::new(2, 2, 1, vec![0.45, 0.65, 0.55, 0.55]).unwrap();
        assert!((ergas(&x, &reference).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ergas_rejects_zero_mean_reference() {
        let reference = HyperCube::zeros(2, 2, 1).unwrap();
        let x = HyperCube::new(2, 2, 1, vec![0.1; 4]).unwrap();
        assert!(matches!(ergas(&x, &reference), Err(Error::Degenerate(_))));
    }

    #[test]
    fn sam_examples() {
        let x = HyperCube::new(1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let y = HyperCube::new(1, 1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        assert!(sam(&x, &y).unwrap().abs() < 1e-6);
        let e1 = HyperCube::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let e2 = HyperCube::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert!((sam(&e1, &e2).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn sam_skips_zero_spectra() {
        // pixel (0,0) is zero in x; pixel (1,0) matches up to scale
        let x = HyperCube::new(2, 1, 2, vec![0.0, 0.3, 0.0, 0.6]).unwrap();
        let y = HyperCube::new(2, 1, 2, vec![0.5, 0.1, 0.5, 0.2]).unwrap();
        let (angle, excluded) = sam_flat(x.data(), y.data(), 2);
        assert_eq!(excluded, 1);
        assert!(angle.abs() < 1e-6);
    }

    #[test]
    fn inverted_band_has_low_ssim() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..32 * 32).map(|_| if rng.random::<bool>() { 0.9 } else { 0.1 }).collect();
        let inv: Vec<f64> = data.iter().map(|v| 1.0 - v).collect();
        let a = HyperCube::new(32, 32, 1, data).unwrap();
        let b = HyperCube::new(32, 32, 1, inv).unwrap();
        assert!(ssim(&a, &b).unwrap() < 0.5);
    }

    /// Naive sliding-window SSIM evaluating the full 2-D Gaussian at every position.
    fn naive_ssim(a: &HyperCube, b: &HyperCube) -> f64 {
        let (rows, cols) = (a.rows(), a.cols());
        let mut kernel = [[0.0; 11]; 11];
        let mut sum = 0.0;
        for (i, row) in kernel.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                sum += *v;
            }
        }
        let mut total = 0.0;
        let mut count = 0.0;
        for r0 in 0..=rows - 11 {
            for c0 in 0..=cols - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = kernel[i][j] / sum;
                        let (x, y) = (a.get(r0 + i, c0 + j, 0), b.get(r0 + i, c0 + j, 0));
                        mx += w * x;
                        my += w * y;
                        xx += w * x * x;
                        yy += w * y * y;
                        xy += w * x * y;
                    }
                }
                let (c1, c2) = (1e-4, 9e-4);
                total += ((2.0 * mx * my + c1) * (2.0 * (xy - mx * my) + c2))
                    / ((mx * mx + my * my + c1) * (xx - mx * mx + yy - my * my + c2));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_naive_sliding_window() {
        let a = random_cube(5, 32, 32, 1);
        let b = random_cube(6, 32, 32, 1);
        assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_cube(7, 10, 20, 1);
        assert!(matches!(ssim(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn table_round_trips_through_fixed_columns() {
        let a = random_cube(8, 16, 16, 2);
        let b = random_cube(9, 16, 16, 2);
        let m = evaluate(&a, &b).unwrap();
        let same = evaluate(&a, &a).unwrap();
        let text = format_table(&[("noisy", &m), ("identical", &same)]);
        let rows = parse_table(&text).unwrap();
        assert_eq!(rows[0].0, "noisy");
        assert!((rows[0].1[0] - m.psnr).abs() < 1e-6);
        assert!((rows[0].1[3] - m.sam).abs() < 1e-6);
        assert_eq!(rows[1].1, [f64::INFINITY, 1.0, 0.0, 0.0]);
    }
}
