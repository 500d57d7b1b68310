//! Cube and guidance-image data model, circular difference operators and
//! the mode-3 unfolding.
//!
//! Storage order is fixed across the crate: within a band, pixels are stored
//! column-major (the row index varies fastest), and bands follow each other.
//! Element `(r, c, b)` of a `rows × cols × bands` cube lives at
//! `r + rows * (c + cols * b)`. With this order the unfolded
//! `(rows·cols) × bands` matrix is the same buffer read column-major, and a
//! band slice is a column-major `rows × cols` [`Field`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A 2-D real image, `rows × cols`, column-major.
pub type Field = DMatrix<f64>;

/// A `rows × cols × bands` real-valued image cube.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    rows: usize,
    cols: usize,
    bands: usize,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(rows: usize, cols: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got {rows}x{cols}x{bands}"
            )));
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(bands))
            .ok_or_else(|| Error::Shape("cube dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{rows}x{cols}x{bands} cube needs {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cube element {i}")));
        }
        Ok(Self {
            rows,
            cols,
            bands,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, bands: usize) -> Result<Self> {
        Self::new(rows, cols, bands, vec![0.0; rows * cols * bands])
    }

    /// Stacks equally sized band images into a cube.
    pub fn from_bands(bands: &[Field]) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::Shape("no bands supplied".into()))?;
        let (rows, cols) = first.shape();
        let mut data = Vec::with_capacity(rows * cols * bands.len());
        for (b, band) in bands.iter().enumerate() {
            if band.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "band {b} is {:?}, expected {:?}",
                    band.shape(),
                    (rows, cols)
                )));
            }
            data.extend_from_slice(band.as_slice());
        }
        Self::new(rows, cols, bands.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.bands)
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize, b: usize) -> f64 {
        self.data[r + self.rows * (c + self.cols * b)]
    }

    pub fn band_slice(&self, b: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band(&self, b: usize) -> Field {
        Field::from_column_slice(self.rows, self.cols, self.band_slice(b))
    }

    pub fn spectrum(&self, r: usize, c: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(r, c, b)).collect()
    }

    /// Mode-3 unfolding: a `(rows·cols) × bands` matrix whose column `b` is band `b`.
    pub fn unfold(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.pixels(), self.bands, &self.data)
    }

    /// Inverse of [`HyperCube::unfold`].
    pub fn fold(matrix: &DMatrix<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows.checked_mul(cols) != Some(matrix.nrows()) {
            return Err(Error::Shape(format!(
                "cannot fold a {}x{} matrix into {rows}x{cols} bands",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Self::new(rows, cols, matrix.ncols(), matrix.as_slice().to_vec())
    }

    /// Mean over bands, one value per pixel.
    pub fn band_mean(&self) -> Field {
        let n = self.pixels();
        let mut mean = vec![0.0; n];
        for band in self.data.chunks_exact(n) {
            for (m, v) in mean.iter_mut().zip(band) {
                *m += v;
            }
        }
        let scale = 1.0 / self.bands as f64;
        mean.iter_mut().for_each(|m| *m *= scale);
        Field::from_vec(self.rows, self.cols, mean)
    }

    /// Rounds every element through `f32`, as a float32 file round trip does.
    pub fn quantize_f32(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn same_shape(&self, other: &HyperCube) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "cube shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Guidance image normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanImage {
    field: Field,
    degenerate: bool,
}

impl PanImage {
    /// Global min-max normalization. A constant field has no usable range;
    /// it maps to all zeros and is flagged degenerate.
    pub fn normalize(field: Field) -> Result<Self> {
        check_finite(field.as_slice(), "pan image")?;
        if field.is_empty() {
            return Err(Error::Shape("empty pan image".into()));
        }
        let lo = field.min();
        let hi = field.max();
        if hi > lo {
            let scale = 1.0 / (hi - lo);
            Ok(Self {
                field: field.map(|v| ((v - lo) * scale).clamp(0.0, 1.0)),
                degenerate: false,
            })
        } else {
            Ok(Self {
                field: Field::zeros(field.nrows(), field.ncols()),
                degenerate: true,
            })
        }
    }

    pub fn rows(&self) -> usize {
        self.field.nrows()
    }

    pub fn cols(&self) -> usize {
        self.field.ncols()
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    /// True when the source image was constant.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// Horizontal and vertical forward differences with circular wrap.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    /// `x[r, c+1] - x[r, c]`
    pub horizontal: Field,
    /// `x[r+1, c] - x[r, c]`
    pub vertical: Field,
}

/// Difference direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Horizontal,
    Vertical,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Horizontal, Direction::Vertical];
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} element {i}"))),
        None => Ok(()),
    }
}

/// Forward difference of a column-major `rows × cols` image into `out`.
pub(crate) fn diff_into(dir: Direction, src: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    match dir {
        Direction::Horizontal => {
            for c in 0..cols {
                let next = if c + 1 == cols { 0 } else { c + 1 };
                let (cur, nxt) = (&src[c * rows..(c + 1) * rows], &src[next * rows..(next + 1) * rows]);
                for ((o, a), b) in out[c * rows..(c + 1) * rows].iter_mut().zip(cur).zip(nxt) {
                    *o = b - a;
                }
            }
        }
        Direction::Vertical => {
            for c in 0..cols {
                let col = &src[c * rows..(c + 1) * rows];
                let o = &mut out[c * rows..(c + 1) * rows];
                for r in 0..rows - 1 {
                    o[r] = col[r + 1] - col[r];
                }
                o[rows - 1] = col[0] - col[rows - 1];
            }
        }
    }
}

/// Adjoint of [`diff_into`]: `g[r, c-1] - g[r, c]` (resp. rows), wrapped.
pub(crate) fn diff_adjoint_into(
    dir: Direction,
    src: &[f64],
    rows: usize,
    cols: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    match dir {
        Direction::Horizontal => {
            for c in 0..cols {
                let prev = if c == 0 { cols - 1 } else { c - 1 };
                let (cur, prv) = (&src[c * rows..(c + 1) * rows], &src[prev * rows..(prev + 1) * rows]);
                for ((o, a), b) in out[c * rows..(c + 1) * rows].iter_mut().zip(cur).zip(prv) {
                    *o = b - a;
                }
            }
        }
        Direction::Vertical => {
            for c in 0..cols {
                let col = &src[c * rows..(c + 1) * rows];
                let o = &mut out[c * rows..(c + 1) * rows];
                o[0] = col[rows - 1] - col[0];
                for r in 1..rows {
                    o[r] = col[r - 1] - col[r];
                }
            }
        }
    }
}

/// Forward difference of a single direction.
pub fn difference(image: &Field, dir: Direction) -> Result<Field> {
    check_finite(image.as_slice(), "gradient input")?;
    let (rows, cols) = image.shape();
    let mut out = Field::zeros(rows, cols);
    diff_into(dir, image.as_slice(), rows, cols, out.as_mut_slice());
    Ok(out)
}

pub fn gradient(image: &Field) -> Result<GradientPair> {
    Ok(GradientPair {
        horizontal: difference(image, Direction::Horizontal)?,
        vertical: difference(image, Direction::Vertical)?,
    })
}

/// Exact adjoint of [`gradient`], so that `<gradient(x), g> = <x, divergence(g)>`.
///
/// Note the sign: `divergence(gradient(x))` is the positive semidefinite
/// operator `4x - (sum of the four wrapped neighbours)`.
pub fn divergence(g: &GradientPair) -> Result<Field> {
    if g.horizontal.shape() != g.vertical.shape() {
        return Err(Error::Shape(format!(
            "gradient components differ: {:?} vs {:?}",
            g.horizontal.shape(),
            g.vertical.shape()
        )));
    }
    check_finite(g.horizontal.as_slice(), "horizontal gradient")?;
    check_finite(g.vertical.as_slice(), "vertical gradient")?;
    let (rows, cols) = g.horizontal.shape();
    let mut out = Field::zeros(rows, cols);
    let mut tmp = vec![0.0; rows * cols];
    diff_adjoint_into(Direction::Horizontal, g.horizontal.as_slice(), rows, cols, out.as_mut_slice());
    diff_adjoint_into(Direction::Vertical, g.vertical.as_slice(), rows, cols, &mut tmp);
    for (o, t) in out.iter_mut().zip(&tmp) {
        *o += t;
    }
    Ok(out)
}

/// Brings a guidance image onto a `target_rows × target_cols` grid and
/// normalizes it to `[0, 1]`.
///
/// Integer down-sampling ratios use block averaging, anything else bilinear
/// interpolation with pixel-centre alignment.
pub fn pan_resample(pan: &Field, target_rows: usize, target_cols: usize) -> Result<PanImage> {
    let (rows, cols) = pan.shape();
    if target_rows == 0 || target_cols == 0 {
        return Err(Error::Shape("target grid must be non-empty".into()));
    }
    if target_rows > rows || target_cols > cols {
        return Err(Error::Shape(format!(
            "cannot resample {rows}x{cols} pan image up to {target_rows}x{target_cols}"
        )));
    }
    check_finite(pan.as_slice(), "pan image")?;
    let resampled = if rows % target_rows == 0 && cols % target_cols == 0 {
        block_average(pan, rows / target_rows, cols / target_cols)
    } else {
        bilinear(pan, target_rows, target_cols)
    };
    PanImage::normalize(resampled)
}

fn block_average(src: &Field, fr: usize, fc: usize) -> Field {
    let (tr, tc) = (src.nrows() / fr, src.ncols() / fc);
    let scale = 1.0 / (fr * fc) as f64;
    Field::from_fn(tr, tc, |r, c| {
        let mut acc = 0.0;
        for cc in c * fc..(c + 1) * fc {
            for rr in r * fr..(r + 1) * fr {
                acc += src[(rr, cc)];
            }
        }
        acc * scale
    })
}

fn bilinear(src: &Field, tr: usize, tc: usize) -> Field {
    let (rows, cols) = src.shape();
    let axis = |i: usize, n_src: usize, n_dst: usize| -> (usize, usize, f64) {
        let pos = ((i as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_src - 1);
        (lo, hi, pos - lo as f64)
    };
    Field::from_fn(tr, tc, |r, c| {
        let (r0, r1, wr) = axis(r, rows, tr);
        let (c0, c1, wc) = axis(c, cols, tc);
        let top = src[(r0, c0)] * (1.0 - wc) + src[(r0, c1)] * wc;
        let bottom = src[(r1, c0)] * (1.0 - wc) + src[(r1, c1)] * wc;
        top * (1.0 - wr) + bottom * wr
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Field {
        Field::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn inner(a: &Field, b: &Field) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let g = gradient(&Field::from_element(5, 7, 0.3)).unwrap();
        assert!(g.horizontal.iter().all(|&v| v == 0.0));
        assert!(g.vertical.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_gradient_matches_hand_computation() {
        let x = Field::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let g = gradient(&x).unwrap();
        assert_eq!(g.horizontal, Field::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]));
        assert_eq!(g.vertical, Field::zeros(2, 2));
    }

    /// Explicit circulant difference matrix acting on the column-major vector.
    fn dense_difference(rows: usize, cols: usize, dir: Direction) -> DMatrix<f64> {
        let n = rows * cols;
        let mut d = DMatrix::zeros(n, n);
        for c in 0..cols {
            for r in 0..rows {
                let i = r + rows * c;
                let j = match dir {
                    Direction::Horizontal => r + rows * ((c + 1) % cols),
                    Direction::Vertical => (r + 1) % rows + rows * c,
                };
                d[(i, i)] -= 1.0;
                d[(i, j)] += 1.0;
            }
        }
        d
    }

    #[test]
    fn gradient_matches_dense_difference_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_field(&mut rng, 8, 8);
        let g = gradient(&x).unwrap();
        let xv = nalgebra::DVector::from_column_slice(x.as_slice());
        let dh = dense_difference(8, 8, Direction::Horizontal) * &xv;
        let dv = dense_difference(8, 8, Direction::Vertical) * &xv;
        for i in 0..64 {
            assert!((g.horizontal.as_slice()[i] - dh[i]).abs() < 1e-14);
            assert!((g.vertical.as_slice()[i] - dv[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_sums_telescope_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = gradient(&random_field(&mut rng, 9, 5)).unwrap();
        assert!(g.horizontal.sum().abs() < 1e-12);
        assert!(g.vertical.sum().abs() < 1e-12);
    }

    #[test]
    fn gradient_rejects_nan() {
        let mut x = Field::zeros(3, 3);
        x[(1, 1)] = f64::NAN;
        assert!(matches!(gradient(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn divergence_of_zero_is_zero() {
        let g = GradientPair {
            horizontal: Field::zeros(4, 3),
            vertical: Field::zeros(4, 3),
        };
        assert_eq!(divergence(&g).unwrap(), Field::zeros(4, 3));
    }

    #[test]
    fn divergence_rejects_mismatched_components() {
        let g = GradientPair {
            horizontal: Field::zeros(4, 3),
            vertical: Field::zeros(3, 4),
        };
        assert!(matches!(divergence(&g), Err(Error::Shape(_))));
    }

    #[test]
    fn divergence_is_adjoint_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random_field(&mut rng, 6, 6);
            let g = GradientPair {
                horizontal: random_field(&mut rng, 6, 6),
                vertical: random_field(&mut rng, 6, 6),
            };
            let gx = gradient(&x).unwrap();
            let lhs = inner(&gx.horizontal, &g.horizontal) + inner(&gx.vertical, &g.vertical);
            let rhs = inner(&x, &divergence(&g).unwrap());
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_gradient_is_circular_laplacian_stencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (7, 5);
        let x = random_field(&mut rng, rows, cols);
        let lap = divergence(&gradient(&x).unwrap()).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                let stencil = 4.0 * x[(r, c)]
                    - x[((r + 1) % rows, c)]
                    - x[((r + rows - 1) % rows, c)]
                    - x[(r, (c + 1) % cols)]
                    - x[(r, (c + cols - 1) % cols)];
                assert!((lap[(r, c)] - stencil).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn unit_cube_unfolds_to_unit_matrix() {
        let cube = HyperCube::new(1, 1, 1, vec![0.25]).unwrap();
        let m = cube.unfold();
        assert_eq!(m.shape(), (1, 1));
        assert_eq!(m[(0, 0)], 0.25);
    }

    #[test]
    fn fold_unfold_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..60).map(|_| rng.random()).collect();
        let cube = HyperCube::new(4, 3, 5, data).unwrap();
        let back = HyperCube::fold(&cube.unfold(), 4, 3).unwrap();
        assert_eq!(back, cube);
    }

    #[test]
    fn constant_band_unfolds_to_constant_column() {
        let bands: Vec<Field> = (0..3).map(|b| Field::from_element(2, 4, b as f64 + 0.5)).collect();
        let m = HyperCube::from_bands(&bands).unwrap().unfold();
        for b in 0..3 {
            assert!(m.column(b).iter().all(|&v| v == b as f64 + 0.5));
        }
    }

    #[test]
    fn element_order_is_row_fastest_within_band() {
        let cube = HyperCube::new(2, 3, 2, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(cube.get(1, 0, 0), 1.0);
        assert_eq!(cube.get(0, 1, 0), 2.0);
        assert_eq!(cube.get(0, 0, 1), 6.0);
        assert_eq!(cube.band(1)[(1, 2)], 11.0);
    }

    #[test]
    fn fold_rejects_wrong_pixel_count() {
        let m = DMatrix::zeros(6, 2);
        assert!(matches!(HyperCube::fold(&m, 4, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn cube_rejects_nan_and_zero_dims() {
        assert!(HyperCube::new(1, 1, 1, vec![f64::INFINITY]).is_err());
        assert!(HyperCube::new(0, 1, 1, vec![]).is_err());
        assert!(HyperCube::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn resample_same_size_normalizes() {
        let src = Field::from_row_slice(2, 2, &[2.0, 4.0, 6.0, 10.0]);
        let pan = pan_resample(&src, 2, 2).unwrap();
        assert_eq!(pan.field(), &Field::from_row_slice(2, 2, &[0.0, 0.25, 0.5, 1.0]));
        assert!(!pan.is_degenerate());
    }

    #[test]
    fn resample_integer_ratio_takes_block_means() {
        #[rustfmt::skip]
        let src = Field::from_row_slice(4, 4, &[
            0.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 1.0, 1.0,
            1.0, 0.0, 1.0, 1.0,
            1.0, 0.0, 0.0, 1.0,
        ]);
        let pan = pan_resample(&src, 2, 2).unwrap();
        // block means 0, 1, 0.5, 0.75 already span [0, 1]
        assert_eq!(pan.field(), &Field::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.75]));
    }

    #[test]
    fn resample_non_integer_ratio_is_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = Field::from_fn(6, 6, |_, _| rng.random::<f64>());
        let pan = pan_resample(&src, 4, 4).unwrap();
        // direct oracle: sample position (i + 0.5) * 1.5 - 0.5 on each axis
        let mut raw = Field::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let y = ((i as f64 + 0.5) * 1.5 - 0.5).clamp(0.0, 5.0);
                let x = ((j as f64 + 0.5) * 1.5 - 0.5).clamp(0.0, 5.0);
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(5), (x0 + 1).min(5));
                let (dy, dx) = (y - y0 as f64, x - x0 as f64);
                raw[(i, j)] = src[(y0, x0)] * (1.0 - dy) * (1.0 - dx)
                    + src[(y0, x1)] * (1.0 - dy) * dx
                    + src[(y1, x0)] * dy * (1.0 - dx)
                    + src[(y1, x1)] * dy * dx;
            }
        }
        let (lo, hi) = (raw.min(), raw.max());
        for (a, b) in pan.field().iter().zip(raw.iter()) {
            assert!((a - (b - lo) / (hi - lo)).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_rejects_upsampling() {
        assert!(pan_resample(&Field::zeros(3, 3), 4, 3).is_err());
    }

    #[test]
    fn constant_pan_is_degenerate() {
        let pan = PanImage::normalize(Field::from_element(3, 3, 0.7)).unwrap();
        assert!(pan.is_degenerate());
        assert!(pan.field().iter().all(|&v| v == 0.0));
    }
}
