use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pandenoise::admm::{Denoised, Termination};
use pandenoise::io::{self, WriteOptions};
use pandenoise::metrics::{self, MetricsReport};
use pandenoise::noise::{self, NoiseSpec};
use pandenoise::{synthetic, HyperCube, PanImage, SolverConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::manifest::RunManifest;
use crate::{config, plot, trace};
use crate::{
    CmdResult, DenoiseArgs, EvaluateArgs, Failure, SimulateArgs, SweepArgs, SweepParam, SynthArgs,
    TracePlotArgs,
};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cube_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    let header = dir.join(format!("{stem}.json"));
    let payload = io::payload_path(&header);
    (header, payload)
}

/// Writes a float32 cube as `<dir>/<stem>.json` + `.bin` and records both in the manifest.
fn save_cube(
    cube: &HyperCube,
    dir: &Path,
    stem: &str,
    provenance: Option<NoiseSpec>,
    manifest: &mut RunManifest,
) -> Result<PathBuf> {
    let (header, payload) = cube_paths(dir, stem);
    io::write_cube(cube, &header, &payload, &WriteOptions { uint16_scale: None, provenance })?;
    manifest.output(&header)?;
    manifest.output(&payload)?;
    Ok(header)
}

/// Digests every file that makes up the cube at `path`.
fn record_cube_input(path: &Path, manifest: &mut RunManifest) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            manifest.input(path)?;
            manifest.input(&io::payload_path(path))?;
        }
        Some("bin") => {
            manifest.input(&path.with_extension("json"))?;
            manifest.input(path)?;
        }
        _ => manifest.input(path)?,
    }
    Ok(())
}

fn write_text(path: &Path, text: &str, manifest: &mut RunManifest) -> Result<()> {
    io::write_atomic(path, text.as_bytes())?;
    manifest.output(path)
}

fn pretty(v: impl Serialize) -> String {
    serde_json::to_string_pretty(&v).expect("plain data serializes")
}

fn finite_or_string(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// JSON form of a report; infinite PSNR values are written as `"inf"`.
pub fn report_json(m: &MetricsReport) -> Value {
    let bands: Vec<Value> = m
        .per_band
        .iter()
        .map(|b| json!({"psnr": finite_or_string(b.psnr), "ssim": b.ssim, "rmse": b.rmse}))
        .collect();
    json!({
        "psnr": finite_or_string(m.psnr),
        "ssim": m.ssim,
        "ergas": m.ergas,
        "sam": m.sam,
        "sam_excluded": m.sam_excluded,
        "per_band": bands,
    })
}

fn termination_str(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIterations => "max_iterations",
    }
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let start = Instant::now();
    let mut manifest = RunManifest::new("synth", json!({"rows": a.rows, "cols": a.cols, "bands": a.bands}))?;
    let scene = synthetic::scene(a.rows, a.cols, a.bands)?;
    ensure_dir(&a.out)?;
    save_cube(&scene.clean, &a.out, "clean", None, &mut manifest)?;
    let pan_cube = HyperCube::from_bands(std::slice::from_ref(scene.pan.field()))?;
    save_cube(&pan_cube, &a.out, "pan", None, &mut manifest)?;
    let png = a.out.join("pan.png");
    io::write_gray_png16(scene.pan.field(), &png)?;
    manifest.output(&png)?;
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out.join("manifest.json"))?;
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> CmdResult {
    let start = Instant::now();
    let spec = config::resolve_noise(a.case_id, a.seed, a.config.as_deref(), &a.noise)?;
    let mut manifest = RunManifest::new("simulate", &spec)?;
    let clean = io::open_cube(&a.input)?;
    record_cube_input(&a.input, &mut manifest)?;
    if let Some(c) = &a.config {
        manifest.input(c)?;
    }
    let (noisy, report) = noise::corrupt(&clean, &spec)?;
    let noisy = noisy.quantize_f32();
    ensure_dir(&a.out)?;
    save_cube(&noisy, &a.out, "noisy", Some(spec.clone()), &mut manifest)?;
    write_text(&a.out.join("noise_spec.json"), &pretty(&spec), &mut manifest)?;
    write_text(&a.out.join("mask_report.json"), &pretty(&report), &mut manifest)?;

    let baseline = metrics::evaluate(&noisy, &clean)?;
    let table = metrics::format_table(&[("noisy", &baseline)]);
    print!("{table}");
    write_text(&a.out.join("baseline.txt"), &table, &mut manifest)?;
    write_text(&a.out.join("baseline.json"), &pretty(&report_json(&baseline)), &mut manifest)?;
    manifest.details = json!({
        "impulse_bands": report.impulse_bands(),
        "impulse_pixels": report.impulse_pixels(),
        "stripe_bands": report.stripe_bands(),
        "stripe_columns": report.stripe_columns(),
    });
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn load_pan(path: &Path, cube: &HyperCube) -> Result<PanImage> {
    io::read_pan(path, Some((cube.rows(), cube.cols())))
        .with_context(|| format!("PAN image {} does not fit a {}x{} cube", path.display(), cube.rows(), cube.cols()))
}

fn run_details(out: &Denoised) -> Value {
    json!({
        "iterations": out.trace.len(),
        "termination": termination_str(out.termination),
        "stage_switch": out.trace.stage_switch(),
        "final_residual": out.trace.last().map(|r| r.residual),
        "solver_seconds": out.seconds,
        "degenerate_v_updates": out.state.degenerate_v_updates,
    })
}

pub fn denoise(a: DenoiseArgs) -> CmdResult {
    let start = Instant::now();
    let cfg = config::resolve_solver(&a.solver)?;
    let mut manifest = RunManifest::new("denoise", &cfg)?;
    let noisy = io::open_cube(&a.input)?;
    record_cube_input(&a.input, &mut manifest)?;
    let pan = load_pan(&a.pan, &noisy)?;
    record_cube_input(&a.pan, &mut manifest)?;
    if let Some(c) = &a.solver.config {
        manifest.input(c)?;
    }
    let reference = match &a.reference {
        Some(p) => {
            record_cube_input(p, &mut manifest)?;
            Some(io::open_cube(p)?)
        }
        None => None,
    };
    ensure_dir(&a.out)?;
    let result = match &reference {
        Some(r) => pandenoise::denoise_with_reference(&noisy, &pan, &cfg, r),
        None => pandenoise::denoise(&noisy, &pan, &cfg),
    };
    let out = match result {
        Ok(out) => out,
        Err(e) => {
            manifest.status = format!("failed: {e}");
            manifest.seconds = start.elapsed().as_secs_f64();
            manifest.write(&a.out.join("manifest.json"))?;
            return Err(Failure::from(e));
        }
    };
    save_cube(&out.restored, &a.out, "restored", None, &mut manifest)?;
    write_text(&a.out.join("trace.txt"), &trace::format(&out.trace), &mut manifest)?;
    manifest.status = termination_str(out.termination).into();
    manifest.details = run_details(&out);
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out.join("manifest.json"))?;
    eprintln!(
        "{} after {} iterations in {:.2} s",
        termination_str(out.termination),
        out.trace.len(),
        out.seconds
    );
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let start = Instant::now();
    let mut manifest = RunManifest::new("evaluate", json!({"label": a.label}))?;
    let restored = io::open_cube(&a.restored)?;
    let reference = io::open_cube(&a.reference)?;
    record_cube_input(&a.restored, &mut manifest)?;
    record_cube_input(&a.reference, &mut manifest)?;
    let report = metrics::evaluate(&restored, &reference)?;
    let table = metrics::format_table(&[(a.label.as_str(), &report)]);
    print!("{table}");
    ensure_dir(&a.out)?;
    write_text(&a.out.join("metrics.txt"), &table, &mut manifest)?;
    write_text(&a.out.join("metrics.json"), &pretty(&report_json(&report)), &mut manifest)?;
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Q => "q",
        SweepParam::Beta => "beta",
        SweepParam::Lambda => "lambda",
        SweepParam::Tau => "tau",
        SweepParam::Rank => "rank",
    }
}

fn apply_param(base: &SolverConfig, p: SweepParam, v: f64) -> Result<SolverConfig> {
    let mut cfg = base.clone();
    match p {
        SweepParam::Q => cfg.q = v,
        SweepParam::Beta => cfg.beta = v,
        SweepParam::Lambda => cfg.lambda = v,
        SweepParam::Tau => cfg.tau = v,
        SweepParam::Rank => {
            if v.fract() != 0.0 || v < 1.0 {
                bail!("rank grid values must be positive integers, got {v}");
            }
            cfg.rank = v as usize;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SweepPoint {
    value: f64,
    metrics: Value,
    iterations: usize,
    termination: &'static str,
    seconds: f64,
    #[serde(skip)]
    row: [f64; 4],
}

pub fn sweep(a: SweepArgs) -> CmdResult {
    let start = Instant::now();
    if a.grid.is_empty() {
        return Err(Failure::Input(anyhow::anyhow!("empty grid")));
    }
    if let Some(v) = a.grid.iter().find(|v| !v.is_finite()) {
        return Err(Failure::Input(anyhow::anyhow!("grid value {v} is not finite")));
    }
    let base = config::resolve_solver(&a.solver)?;
    let spec = config::resolve_noise(a.case_id, a.seed, a.solver.config.as_deref(), &a.noise)?;
    let configs: Vec<SolverConfig> = a
        .grid
        .iter()
        .map(|&v| apply_param(&base, a.param, v))
        .collect::<Result<_>>()?;
    let mut manifest = RunManifest::new(
        "sweep",
        json!({"param": param_name(a.param), "grid": a.grid, "solver": base, "noise": spec}),
    )?;
    let clean = io::open_cube(&a.clean)?;
    record_cube_input(&a.clean, &mut manifest)?;
    let pan = load_pan(&a.pan, &clean)?;
    record_cube_input(&a.pan, &mut manifest)?;
    let (noisy, _) = noise::corrupt(&clean, &spec)?;
    let noisy = noisy.quantize_f32();

    let points: Vec<std::result::Result<SweepPoint, pandenoise::Error>> = a
        .grid
        .par_iter()
        .zip(configs.par_iter())
        .map(|(&value, cfg)| {
            let out = pandenoise::denoise(&noisy, &pan, cfg)?;
            let restored = out.restored.quantize_f32();
            let m = metrics::evaluate(&restored, &clean)?;
            Ok(SweepPoint {
                value,
                metrics: report_json(&m),
                iterations: out.trace.len(),
                termination: termination_str(out.termination),
                seconds: out.seconds,
                row: [m.psnr, m.ssim, m.ergas, m.sam],
            })
        })
        .collect();
    let points: Vec<SweepPoint> = points.into_iter().collect::<std::result::Result<_, _>>()?;

    let name = param_name(a.param);
    let mut text = format!(
        "{:>14}{:>14}{:>14}{:>14}{:>14}{:>8}{:>12}\n",
        name, "PSNR", "SSIM", "ERGAS", "SAM", "iters", "seconds"
    );
    for p in &points {
        let [psnr, ssim, ergas, sam] = p.row;
        let psnr = if psnr.is_finite() { format!("{psnr:.6}") } else { "inf".into() };
        text.push_str(&format!(
            "{:>14}{:>14}{:>14.6}{:>14.6}{:>14.6}{:>8}{:>12.3}\n",
            p.value, psnr, ssim, ergas, sam, p.iterations, p.seconds
        ));
    }
    print!("{text}");
    ensure_dir(&a.out)?;
    write_text(&a.out.join("sweep.txt"), &text, &mut manifest)?;
    write_text(
        &a.out.join("sweep.json"),
        &pretty(&json!({"param": name, "points": points})),
        &mut manifest,
    )?;
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out.join("manifest.json"))?;
    Ok(())
}

pub fn trace_plot(a: TracePlotArgs) -> CmdResult {
    let start = Instant::now();
    let mut manifest = RunManifest::new("trace-plot", json!({}))?;
    let text = fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    manifest.input(&a.trace)?;
    let rows = trace::parse(&text)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    plot::draw(&rows, &a.out)?;
    manifest.output(&a.out)?;
    manifest.details = json!({"points": rows.len(), "series": plot::series(&rows)?.len()});
    manifest.seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out.with_extension("manifest.json"))?;
    Ok(())
}
