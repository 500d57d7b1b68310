use pandenoise::metrics::{ergas, psnr, sam, ssim};
use pandenoise::noise::{corrupt, NoiseCase, NoiseSpec};
use pandenoise::synthetic::scene;
use pandenoise::{denoise, Field, HyperCube, PanImage, SolverConfig, WeightsMode};
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    rows: usize,
    cols: usize,
    bands: usize,
    psnr: f64,
    ssim: f64,
    ergas: f64,
    sam: f64,
}

fn cube(rows: usize, cols: usize, bands: usize, f: impl Fn(f64, f64, f64) -> f64) -> HyperCube {
    let mut data = Vec::with_capacity(rows * cols * bands);
    for b in 0..bands {
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r as f64, c as f64, b as f64));
            }
        }
    }
    HyperCube::new(rows, cols, bands, data).unwrap()
}

#[test]
fn metrics_match_reference_values() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/metrics_regression.json")).unwrap();
    let fx: Fixture = serde_json::from_str(&text).unwrap();
    let base = |r: f64, c: f64, b: f64| 0.5 + 0.3 * (0.37 * r + 0.23 * c + 0.5 * b).sin();
    let reference = cube(fx.rows, fx.cols, fx.bands, base);
    let estimate = cube(fx.rows, fx.cols, fx.bands, |r, c, b| {
        base(r, c, b) + 0.05 * (1.3 * r - 0.7 * c + 0.9 * b).cos() + 0.02 * (0.11 * r * c + b).sin()
    });
    let close = |got: f64, want: f64| (got - want).abs() <= 1e-9 * want.abs().max(1.0);
    assert!(close(psnr(&estimate, &reference).unwrap(), fx.psnr));
    assert!(close(ssim(&estimate, &reference).unwrap(), fx.ssim));
    assert!(close(ergas(&estimate, &reference).unwrap(), fx.ergas));
    assert!(close(sam(&estimate, &reference).unwrap(), fx.sam));
}

fn noisy_scene() -> (HyperCube, HyperCube, PanImage) {
    let s = scene(24, 24, 10).unwrap();
    let (noisy, _) = corrupt(&s.clean, &NoiseSpec::new(NoiseCase::Case5, 11)).unwrap();
    (s.clean, noisy, s.pan)
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (_, noisy, pan) = noisy_scene();
    let cfg = SolverConfig { max_iter: 25, ..SolverConfig::default() };
    let a = denoise(&noisy, &pan, &cfg).unwrap();
    let b = denoise(&noisy, &pan, &cfg).unwrap();
    assert_eq!(a.restored.data(), b.restored.data());
    let res = |d: &pandenoise::Denoised| d.trace.records.iter().map(|r| r.residual.to_bits()).collect::<Vec<_>>();
    assert_eq!(res(&a), res(&b));
}

#[test]
fn constant_pan_reduces_to_unit_weights() {
    let (_, noisy, _) = noisy_scene();
    let flat = PanImage::normalize(Field::from_element(24, 24, 0.3)).unwrap();
    let cfg = SolverConfig { max_iter: 20, ..SolverConfig::default() };
    let guided = denoise(&noisy, &flat, &cfg).unwrap();
    let unit = denoise(&noisy, &flat, &SolverConfig { weights_mode: WeightsMode::UnitWeights, ..cfg }).unwrap();
    assert_eq!(guided.restored.data(), unit.restored.data());
    assert_eq!(guided.trace.records.len(), unit.trace.records.len());
    for (g, u) in guided.trace.records.iter().zip(&unit.trace.records) {
        assert_eq!(g.residual.to_bits(), u.residual.to_bits());
    }
}

#[test]
fn denoising_improves_psnr_on_synthetic_scene() {
    let (clean, noisy, pan) = noisy_scene();
    let out = denoise(&noisy, &pan, &SolverConfig::default()).unwrap();
    let before = psnr(&noisy, &clean).unwrap();
    let after = psnr(&out.restored, &clean).unwrap();
    assert!(after > before + 5.0, "{before} -> {after}");
    let mu: Vec<f64> = out.trace.records.iter().map(|r| r.mu).collect();
    assert!(mu.windows(2).all(|w| w[1] > w[0]));
}
