//! Convergence plot: PSNR (blue, left axis) and SAM (red, right axis) against
//! iteration, or log10 residual (black) when the trace has no ground-truth
//! columns. Axes and ticks only; no text.

use std::path::Path;

use anyhow::{bail, Result};
use image::{Rgb, RgbImage};

use crate::trace::TraceRow;

pub const WIDTH: u32 = 800;
pub const HEIGHT: u32 = 500;
const LEFT: i64 = 60;
const RIGHT: i64 = 740;
const TOP: i64 = 30;
const BOTTOM: i64 = 450;

const BLUE: Rgb<u8> = Rgb([31, 90, 200]);
const RED: Rgb<u8> = Rgb([210, 50, 40]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRAY: Rgb<u8> = Rgb([120, 120, 120]);

/// Axis limits covering every finite value, padded by 5%; `None` if no value is finite.
pub fn axis_range(values: &[f64]) -> Option<(f64, f64)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().reduce(f64::min)?;
    let hi = finite.iter().copied().reduce(f64::max)?;
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    Some((lo - pad, hi + pad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub color: Rgb<u8>,
    pub points: Vec<(f64, f64)>,
    pub range: (f64, f64),
}

/// The series that will be drawn for `rows`.
pub fn series(rows: &[TraceRow]) -> Result<Vec<Series>> {
    if rows.is_empty() {
        bail!("trace is empty");
    }
    let collect = |f: &dyn Fn(&TraceRow) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter()
            .filter_map(|r| f(r).filter(|v| v.is_finite()).map(|v| (r.iter as f64, v)))
            .collect()
    };
    let mut out = Vec::new();
    for (color, pts) in [(BLUE, collect(&|r| r.psnr)), (RED, collect(&|r| r.sam))] {
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        if let Some(range) = axis_range(&ys) {
            out.push(Series { color, points: pts, range });
        }
    }
    if out.is_empty() {
        let pts = collect(&|r| (r.residual > 0.0).then(|| r.residual.log10()));
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        match axis_range(&ys) {
            Some(range) => out.push(Series { color: BLACK, points: pts, range }),
            None => bail!("trace has no plottable values"),
        }
    }
    Ok(out)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        put(img, x, y + 1, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub fn render(rows: &[TraceRow]) -> Result<RgbImage> {
    let all = series(rows)?;
    let iters: Vec<f64> = rows.iter().map(|r| r.iter as f64).collect();
    let (xlo, xhi) = axis_range(&iters).expect("non-empty trace");
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let px = |x: f64| LEFT + ((x - xlo) / (xhi - xlo) * (RIGHT - LEFT) as f64).round() as i64;

    line(&mut img, (LEFT, BOTTOM), (RIGHT, BOTTOM), GRAY);
    for k in 0..=10 {
        let x = LEFT + (RIGHT - LEFT) * k / 10;
        line(&mut img, (x, BOTTOM), (x, BOTTOM + 6), GRAY);
    }
    for (i, s) in all.iter().enumerate() {
        let axis_x = if i == 0 { LEFT } else { RIGHT };
        line(&mut img, (axis_x, TOP), (axis_x, BOTTOM), s.color);
        for k in 0..=5 {
            let y = TOP + (BOTTOM - TOP) * k / 5;
            let tick = if i == 0 { axis_x - 6 } else { axis_x + 6 };
            line(&mut img, (axis_x, y), (tick, y), s.color);
        }
        let (ylo, yhi) = s.range;
        let py = |y: f64| BOTTOM - ((y - ylo) / (yhi - ylo) * (BOTTOM - TOP) as f64).round() as i64;
        let pts: Vec<(i64, i64)> = s.points.iter().map(|&(x, y)| (px(x), py(y))).collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], s.color);
        }
        for &(x, y) in &pts {
            for d in -2..=2 {
                put(&mut img, x + d, y, s.color);
                put(&mut img, x, y + d, s.color);
            }
        }
    }
    Ok(img)
}

pub fn draw(rows: &[TraceRow], path: &Path) -> Result<()> {
    render(rows)?.save(path)?;
    Ok(())
}
