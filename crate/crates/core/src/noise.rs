//! Synthetic degradations: the five simulated noise cases.
//!
//! | case | corruption |
//! |------|------------|
//! | 1 | i.i.d. Gaussian, one σ for every band |
//! | 2 | Gaussian with a per-band σ drawn from `sigma_range` |
//! | 3 | case 2 + salt-and-pepper on a random subset of bands |
//! | 4 | case 2 + column stripes on a random subset of bands |
//! | 5 | case 2 + both |
//!
//! Noise is applied in the order Gaussian, stripes, impulse, without
//! clipping. All randomness comes from ChaCha20 keyed by the seed, with a
//! separate stream per corruption type and band, so the Gaussian part of
//! cases 3–5 equals case 2 bit for bit and bands can be generated in
//! parallel.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::HyperCube;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCase {
    Case1,
    Case2,
    Case3,
    Case4,
    Case5,
}

impl NoiseCase {
    pub const ALL: [NoiseCase; 5] = [
        NoiseCase::Case1,
        NoiseCase::Case2,
        NoiseCase::Case3,
        NoiseCase::Case4,
        NoiseCase::Case5,
    ];

    pub fn from_index(k: u8) -> Result<Self> {
        match k {
            1..=5 => Ok(Self::ALL[k as usize - 1]),
            _ => Err(Error::InvalidParameter(format!("unknown noise case {k}, expected 1..5"))),
        }
    }

    pub fn index(self) -> u8 {
        self as u8 + 1
    }

    pub fn has_impulse(self) -> bool {
        matches!(self, NoiseCase::Case3 | NoiseCase::Case5)
    }

    pub fn has_stripes(self) -> bool {
        matches!(self, NoiseCase::Case4 | NoiseCase::Case5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub case: NoiseCase,
    pub seed: u64,
    /// Case 1 standard deviation, on the [0,1] intensity scale.
    pub sigma_iid: f64,
    /// Cases 2–5: per-band σ is uniform on this interval.
    pub sigma_range: [f64; 2],
    /// Fraction of bands receiving impulse (and, separately, stripe) noise.
    pub affected_fraction: f64,
    pub impulse_ratio_range: [f64; 2],
    pub stripe_ratio_range: [f64; 2],
    pub stripe_amplitude_range: [f64; 2],
}

impl NoiseSpec {
    /// Defaults: σ = 10/255, σ_b ∈ [5, 30]/255, a third of the bands,
    /// impulse and stripe ratios in [0.05, 0.30], stripe offsets in [−0.25, 0.25].
    pub fn new(case: NoiseCase, seed: u64) -> Self {
        Self {
            case,
            seed,
            sigma_iid: 10.0 / 255.0,
            sigma_range: [5.0 / 255.0, 30.0 / 255.0],
            affected_fraction: 1.0 / 3.0,
            impulse_ratio_range: [0.05, 0.30],
            stripe_ratio_range: [0.05, 0.30],
            stripe_amplitude_range: [-0.25, 0.25],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} is not finite")))
            }
        };
        let range = |name: &str, r: [f64; 2]| -> Result<()> {
            finite(name, r[0])?;
            finite(name, r[1])?;
            if r[0] > r[1] {
                return Err(Error::InvalidParameter(format!("{name}: lower bound {} exceeds upper {}", r[0], r[1])));
            }
            Ok(())
        };
        let unit = |name: &str, r: [f64; 2]| -> Result<()> {
            range(name, r)?;
            if r[0] < 0.0 || r[1] > 1.0 {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0,1], got {r:?}")));
            }
            Ok(())
        };
        finite("sigma_iid", self.sigma_iid)?;
        if self.sigma_iid < 0.0 {
            return Err(Error::InvalidParameter("sigma_iid must be non-negative".into()));
        }
        range("sigma_range", self.sigma_range)?;
        if self.sigma_range[0] < 0.0 {
            return Err(Error::InvalidParameter("sigma_range must be non-negative".into()));
        }
        unit("impulse_ratio_range", self.impulse_ratio_range)?;
        unit("stripe_ratio_range", self.stripe_ratio_range)?;
        range("stripe_amplitude_range", self.stripe_amplitude_range)?;
        if !(0.0..=1.0).contains(&self.affected_fraction) {
            return Err(Error::InvalidParameter(format!(
                "affected_fraction must lie in [0,1], got {}",
                self.affected_fraction
            )));
        }
        Ok(())
    }

    /// Number of bands hit by each sparse corruption type.
    pub fn affected_bands(&self, bands: usize) -> usize {
        ((bands as f64 * self.affected_fraction).round() as usize).min(bands)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseBand {
    pub band: usize,
    pub ratio: f64,
    pub count: usize,
    /// Corrupted pixel indices (`r + rows·c`), ascending.
    #[serde(skip)]
    pub pixels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripeBand {
    pub band: usize,
    pub ratio: f64,
    /// Ascending column indices.
    pub columns: Vec<usize>,
    /// Offset added to each listed column.
    pub offsets: Vec<f64>,
}

/// Record of what [`corrupt`] did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub case: NoiseCase,
    /// Gaussian σ per band.
    pub sigmas: Vec<f64>,
    pub impulse: Vec<ImpulseBand>,
    pub stripes: Vec<StripeBand>,
}

impl MaskReport {
    pub fn impulse_pixels(&self) -> usize {
        self.impulse.iter().map(|b| b.count).sum()
    }

    pub fn stripe_columns(&self) -> usize {
        self.stripes.iter().map(|b| b.columns.len()).sum()
    }

    pub fn impulse_bands(&self) -> Vec<usize> {
        self.impulse.iter().map(|b| b.band).collect()
    }

    pub fn stripe_bands(&self) -> Vec<usize> {
        self.stripes.iter().map(|b| b.band).collect()
    }
}

const STREAM_SIGMA: u64 = 0;
const STREAM_GAUSS: u64 = 1 << 32;
const STREAM_STRIPE_SELECT: u64 = 2;
const STREAM_STRIPE: u64 = 3 << 32;
const STREAM_IMPULSE_SELECT: u64 = 4;
const STREAM_IMPULSE: u64 = 5 << 32;

/// Generator for one sub-stream of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha20Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn choose_sorted(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

fn band_sigmas(spec: &NoiseSpec, bands: usize) -> Vec<f64> {
    match spec.case {
        NoiseCase::Case1 => vec![spec.sigma_iid; bands],
        _ => {
            let mut rng = substream(spec.seed, STREAM_SIGMA);
            (0..bands).map(|_| uniform(&mut rng, spec.sigma_range)).collect()
        }
    }
}

/// Applies the degradation described by `spec` to a cube with values in [0,1].
pub fn corrupt(x: &HyperCube, spec: &NoiseSpec) -> Result<(HyperCube, MaskReport)> {
    spec.validate()?;
    let (lo, hi) = x.min_max();
    if lo < 0.0 || hi > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "clean cube must lie in [0,1], found [{lo}, {hi}]"
        )));
    }
    let (rows, cols, bands) = x.dims();
    let pixels = rows * cols;
    let sigmas = band_sigmas(spec, bands);
    let mut data = x.data().to_vec();

    data.par_chunks_mut(pixels).enumerate().for_each(|(b, band)| {
        let sigma = sigmas[b];
        if sigma == 0.0 {
            return;
        }
        let mut rng = substream(spec.seed, STREAM_GAUSS | b as u64);
        for v in band.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    });

    let k = spec.affected_bands(bands);
    let mut stripes = Vec::new();
    if spec.case.has_stripes() {
        let chosen = choose_sorted(&mut substream(spec.seed, STREAM_STRIPE_SELECT), bands, k);
        stripes = chosen
            .into_iter()
            .map(|b| {
                let mut rng = substream(spec.seed, STREAM_STRIPE | b as u64);
                let ratio = uniform(&mut rng, spec.stripe_ratio_range);
                let n = ((ratio * cols as f64).round() as usize).min(cols);
                let columns = choose_sorted(&mut rng, cols, n);
                let offsets = columns
                    .iter()
                    .map(|_| uniform(&mut rng, spec.stripe_amplitude_range))
                    .collect();
                StripeBand { band: b, ratio, columns, offsets }
            })
            .collect();
        for s in &stripes {
            let band = &mut data[s.band * pixels..(s.band + 1) * pixels];
            for (&c, &off) in s.columns.iter().zip(&s.offsets) {
                for v in &mut band[c * rows..(c + 1) * rows] {
                    *v += off;
                }
            }
        }
    }

    let mut impulse = Vec::new();
    if spec.case.has_impulse() {
        let chosen = choose_sorted(&mut substream(spec.seed, STREAM_IMPULSE_SELECT), bands, k);
        impulse = chosen
            .into_par_iter()
            .map(|b| {
                let mut rng = substream(spec.seed, STREAM_IMPULSE | b as u64);
                let ratio = uniform(&mut rng, spec.impulse_ratio_range);
                let mut hits = Vec::new();
                for p in 0..pixels {
                    if rng.random_bool(ratio) {
                        let salt = rng.random_bool(0.5);
                        hits.push((p, salt));
                    }
                }
                (b, ratio, hits)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|(b, ratio, hits)| {
                let band = &mut data[b * pixels..(b + 1) * pixels];
                for &(p, salt) in &hits {
                    band[p] = if salt { 1.0 } else { 0.0 };
                }
                ImpulseBand {
                    band: b,
                    ratio,
                    count: hits.len(),
                    pixels: hits.into_iter().map(|(p, _)| p).collect(),
                }
            })
            .collect();
    }

    let y = HyperCube::new(rows, cols, bands, data)?;
    Ok((y, MaskReport { case: spec.case, sigmas, impulse, stripes }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn gray_cube(rows: usize, cols: usize, bands: usize) -> HyperCube {
        let data = (0..rows * cols * bands)
            .map(|i| 0.2 + 0.6 * ((i * 37 % 101) as f64 / 100.0))
            .collect();
        HyperCube::new(rows, cols, bands, data).unwrap()
    }

    #[test]
    fn chacha20_reproduces_reference_keystream() {
        // all-zero key and nonce, block 0
        let mut rng = ChaCha20Rng::from_seed([0u8; 32]);
        let words: Vec<u32> = (0..4).map(|_| rng.next_u32()).collect();
        assert_eq!(words, [0xade0b876, 0x903df1a0, 0xe56a5d40, 0x28bd8653]);
    }

    #[test]
    fn zero_sigma_case1_is_identity() {
        let x = gray_cube(6, 5, 4);
        let spec = NoiseSpec { sigma_iid: 0.0, ..NoiseSpec::new(NoiseCase::Case1, 3) };
        let (y, report) = corrupt(&x, &spec).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(report.impulse.is_empty() && report.stripes.is_empty());
    }

    #[test]
    fn case1_noise_has_requested_deviation() {
        let x = gray_cube(128, 128, 8);
        let spec = NoiseSpec::new(NoiseCase::Case1, 11);
        let (y, _) = corrupt(&x, &spec).unwrap();
        let n = x.data().len() as f64;
        let diffs: Vec<f64> = y.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / spec.sigma_iid - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn same_seed_replays_and_different_seed_differs() {
        let x = gray_cube(16, 12, 9);
        let a = corrupt(&x, &NoiseSpec::new(NoiseCase::Case5, 7)).unwrap();
        let b = corrupt(&x, &NoiseSpec::new(NoiseCase::Case5, 7)).unwrap();
        let c = corrupt(&x, &NoiseSpec::new(NoiseCase::Case5, 8)).unwrap();
        assert_eq!(a.0.data(), b.0.data());
        assert_eq!(a.1, b.1);
        assert_ne!(a.0.data(), c.0.data());
    }

    #[test]
    fn unaffected_bands_match_case2() {
        let x = gray_cube(10, 14, 12);
        let (base, _) = corrupt(&x, &NoiseSpec::new(NoiseCase::Case2, 5)).unwrap();
        for case in [NoiseCase::Case3, NoiseCase::Case4, NoiseCase::Case5] {
            let (y, report) = corrupt(&x, &NoiseSpec::new(case, 5)).unwrap();
            let mut touched = report.impulse_bands();
            touched.extend(report.stripe_bands());
            for b in 0..12 {
                if !touched.contains(&b) {
                    assert_eq!(y.band_slice(b), base.band_slice(b), "{case:?} band {b}");
                }
            }
        }
    }

    #[test]
    fn affected_band_count_is_a_third_rounded() {
        let x = gray_cube(4, 20, 20);
        let (_, report) = corrupt(&x, &NoiseSpec::new(NoiseCase::Case5, 1)).unwrap();
        assert_eq!(report.impulse.len(), 7);
        assert_eq!(report.stripes.len(), 7);
        assert_eq!(NoiseSpec::new(NoiseCase::Case3, 0).affected_bands(30), 10);
    }

    #[test]
    fn stripes_are_column_constant() {
        let x = gray_cube(20, 30, 6);
        let (base, _) = corrupt(&x, &NoiseSpec::new(NoiseCase::Case2, 2)).unwrap();
        let (y, report) = corrupt(&x, &NoiseSpec::new(NoiseCase::Case4, 2)).unwrap();
        assert_eq!(report.stripes.len(), 2);
        for s in &report.stripes {
            assert_eq!(s.columns.len(), (s.ratio * 30.0).round() as usize);
            for c in 0..30 {
                let added: Vec<f64> = (0..20).map(|r| y.get(r, c, s.band) - base.get(r, c, s.band)).collect();
                match s.columns.iter().position(|&k| k == c) {
                    Some(i) => {
                        for a in &added {
                            assert!((a - s.offsets[i]).abs() < 1e-12);
                        }
                        assert!(s.offsets[i].abs() <= 0.25);
                    }
                    None => assert!(added.iter().all(|&a| a == 0.0)),
                }
            }
        }
    }

    #[test]
    fn impulse_pixels_are_saturated_at_the_recorded_rate() {
        let x = gray_cube(64, 64, 9);
        let (y, report) = corrupt(&x, &NoiseSpec::new(NoiseCase::Case3, 4)).unwrap();
        let n = 64.0 * 64.0;
        for ib in &report.impulse {
            let band = y.band_slice(ib.band);
            assert!(ib.pixels.iter().all(|&p| band[p] == 0.0 || band[p] == 1.0));
            let sd = (n * ib.ratio * (1.0 - ib.ratio)).sqrt();
            assert!((ib.count as f64 - n * ib.ratio).abs() <= 3.0 * sd);
            assert!((0.05..=0.30).contains(&ib.ratio));
        }
    }

    #[test]
    fn invalid_specs_and_inputs_are_rejected() {
        let x = gray_cube(4, 4, 3);
        let mut spec = NoiseSpec::new(NoiseCase::Case3, 0);
        spec.impulse_ratio_range = [0.3, 0.1];
        assert!(corrupt(&x, &spec).is_err());
        spec.impulse_ratio_range = [0.1, 1.5];
        assert!(corrupt(&x, &spec).is_err());
        let bright = HyperCube::new(1, 1, 2, vec![0.5, 1.2]).unwrap();
        assert!(corrupt(&bright, &NoiseSpec::new(NoiseCase::Case1, 0)).is_err());
        assert!(NoiseCase::from_index(6).is_err());
        assert_eq!(NoiseCase::from_index(4).unwrap().index(), 4);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = NoiseSpec::new(NoiseCase::Case4, u64::MAX);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<NoiseSpec>(&text).unwrap(), spec);
    }
}
