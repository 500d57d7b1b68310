//! Cube and guidance-image files.
//!
//! Native cubes are a JSON header plus a raw little-endian payload,
//! band-sequential, each band column-major (row index fastest), the same
//! order as [`HyperCube::data`]. By convention `scene.json` pairs with
//! `scene.bin`.
//!
//! ```json
//! {"format":"pandenoise-cube","rows":64,"cols":64,"bands":20,
//!  "dtype":"float32le","layout":"bsq","scale":null,"provenance":null}
//! ```
//!
//! ENVI `.hdr` cubes (bsq/bil/bip, common data types, either byte order)
//! can be read but not written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::tensor::{pan_resample, Field, HyperCube, PanImage};

pub const FORMAT_TAG: &str = "pandenoise-cube";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32le,
    Uint16le,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::Float32le => 4,
            DType::Uint16le => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Bsq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeHeader {
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub dtype: DType,
    pub layout: Layout,
    /// Integer value that maps to 1.0.
    pub scale: Option<f64>,
    pub provenance: Option<NoiseSpec>,
}

impl CubeHeader {
    pub fn new(rows: usize, cols: usize, bands: usize, dtype: DType) -> Self {
        Self {
            format: FORMAT_TAG.into(),
            rows,
            cols,
            bands,
            dtype,
            layout: Layout::Bsq,
            scale: None,
            provenance: None,
        }
    }

    /// Expected payload size in bytes.
    pub fn payload_len(&self) -> Option<u64> {
        (self.rows as u64)
            .checked_mul(self.cols as u64)?
            .checked_mul(self.bands as u64)?
            .checked_mul(self.dtype.size() as u64)
    }

    fn validate(&self, path: &Path) -> Result<u64> {
        if self.format != FORMAT_TAG {
            return Err(Error::format(path, format!("unexpected format tag {:?}", self.format)));
        }
        if self.rows == 0 || self.cols == 0 || self.bands == 0 {
            return Err(Error::format(path, "dimensions must be positive"));
        }
        let len = self
            .payload_len()
            .filter(|&n| usize::try_from(n).is_ok())
            .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
        match (self.dtype, self.scale) {
            (DType::Uint16le, None) => Err(Error::format(path, "uint16le payload requires a scale")),
            (_, Some(s)) if !(s > 0.0 && s.is_finite()) => {
                Err(Error::format(path, format!("scale must be positive, got {s}")))
            }
            _ => Ok(len),
        }
    }
}

/// Payload path paired with a header path: same stem, `.bin` extension.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WriteOptions {
    /// `None` writes float32.
    pub uint16_scale: Option<f64>,
    pub provenance: Option<NoiseSpec>,
}

pub fn write_cube(cube: &HyperCube, header_path: &Path, data_path: &Path, opts: &WriteOptions) -> Result<CubeHeader> {
    let (rows, cols, bands) = cube.dims();
    let mut header = match opts.uint16_scale {
        None => CubeHeader::new(rows, cols, bands, DType::Float32le),
        Some(s) => CubeHeader {
            scale: Some(s),
            ..CubeHeader::new(rows, cols, bands, DType::Uint16le)
        },
    };
    header.provenance = opts.provenance.clone();
    let expected = header.validate(header_path)?;
    let mut payload = Vec::with_capacity(expected as usize);
    match header.dtype {
        DType::Float32le => {
            for &v in cube.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DType::Uint16le => {
            let s = header.scale.unwrap_or(1.0);
            for &v in cube.data() {
                let q = (v * s).round();
                if !(0.0..=65535.0).contains(&q) {
                    return Err(Error::InvalidParameter(format!(
                        "value {v} does not fit uint16 with scale {s}"
                    )));
                }
                payload.extend_from_slice(&(q as u16).to_le_bytes());
            }
        }
    }
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_atomic(data_path, &payload)?;
    write_atomic(header_path, text.as_bytes())?;
    Ok(header)
}

pub fn read_header(header_path: &Path) -> Result<CubeHeader> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(header_path, e.to_string()))
}

pub fn read_cube_with_header(header_path: &Path, data_path: &Path) -> Result<(CubeHeader, HyperCube)> {
    let header = read_header(header_path)?;
    let expected = header.validate(header_path)?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: data_path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data: Vec<f64> = match header.dtype {
        DType::Float32le => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        DType::Uint16le => {
            let s = header.scale.unwrap_or(1.0);
            bytes
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]) as f64 / s)
                .collect()
        }
    };
    let cube = HyperCube::new(header.rows, header.cols, header.bands, data)
        .map_err(|e| Error::format(data_path, e.to_string()))?;
    Ok((header, cube))
}

pub fn read_cube(header_path: &Path, data_path: &Path) -> Result<HyperCube> {
    read_cube_with_header(header_path, data_path).map(|(_, c)| c)
}

/// Opens a cube by any of its paths: an ENVI `.hdr`, a native `.json`
/// header, or a native `.bin` payload.
pub fn open_cube(path: &Path) -> Result<HyperCube> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") => read_envi(path),
        Some("bin") => read_cube(&path.with_extension("json"), path),
        _ => read_cube(path, &payload_path(path)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Interleave {
    Bsq,
    Bil,
    Bip,
}

fn parse_envi_header(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ENVI") {
        return Err(Error::format(path, "missing ENVI magic line"));
    }
    let mut out = Vec::new();
    let mut pending: Option<(String, String)> = None;
    for line in lines {
        if let Some((key, mut value)) = pending.take() {
            value.push(' ');
            value.push_str(line.trim());
            if line.contains('}') {
                out.push((key, value));
            } else {
                pending = Some((key, value));
            }
            continue;
        }
        let Some((k, v)) = line.split_once('=') else { continue };
        let (key, value) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
        if value.starts_with('{') && !value.contains('}') {
            pending = Some((key, value));
        } else {
            out.push((key, value));
        }
    }
    if pending.is_some() {
        return Err(Error::format(path, "unterminated brace in header"));
    }
    Ok(out)
}

fn envi_payload(hdr: &Path) -> Result<PathBuf> {
    let candidates = [
        hdr.with_extension(""),
        hdr.with_extension("img"),
        hdr.with_extension("dat"),
        hdr.with_extension("raw"),
        hdr.with_extension("bsq"),
        hdr.with_extension("bil"),
        hdr.with_extension("bip"),
    ];
    candidates
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::format(hdr, "no payload file next to header"))
}

/// Reads an ENVI cube. Integer data is divided by `reflectance scale factor`
/// when the header declares one.
pub fn read_envi(hdr: &Path) -> Result<HyperCube> {
    let text = fs::read_to_string(hdr).map_err(|e| Error::io(hdr, e))?;
    let fields = parse_envi_header(hdr, &text)?;
    let get = |k: &str| fields.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let num = |k: &str| -> Result<usize> {
        get(k)
            .ok_or_else(|| Error::format(hdr, format!("missing `{k}`")))?
            .parse()
            .map_err(|_| Error::format(hdr, format!("`{k}` is not an integer")))
    };
    let cols = num("samples")?;
    let rows = num("lines")?;
    let bands = num("bands")?;
    let offset = match get("header offset") {
        Some(_) => num("header offset")?,
        None => 0,
    };
    let dtype = num("data type")?;
    let big_endian = match get("byte order") {
        Some(_) => num("byte order")? == 1,
        None => false,
    };
    let interleave = match get("interleave").map(|s| s.to_ascii_lowercase()) {
        None => Interleave::Bsq,
        Some(s) if s == "bsq" => Interleave::Bsq,
        Some(s) if s == "bil" => Interleave::Bil,
        Some(s) if s == "bip" => Interleave::Bip,
        Some(s) => return Err(Error::format(hdr, format!("unknown interleave {s}"))),
    };
    let scale = match get("reflectance scale factor") {
        Some(s) => s
            .parse::<f64>()
            .ok()
            .filter(|v| *v > 0.0)
            .ok_or_else(|| Error::format(hdr, "bad reflectance scale factor"))?,
        None => 1.0,
    };
    let size = match dtype {
        1 => 1,
        2 | 12 => 2,
        3 | 4 | 13 => 4,
        5 => 8,
        t => return Err(Error::format(hdr, format!("unsupported data type {t}"))),
    };
    let n = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(bands))
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::format(hdr, "bad dimensions"))?;
    let data_path = envi_payload(hdr)?;
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = (offset + n * size) as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated { path: data_path, expected, actual: bytes.len() as u64 });
    }
    let raw = &bytes[offset..offset + n * size];
    let word = |i: usize| -> f64 {
        let b = &raw[i * size..(i + 1) * size];
        macro_rules! conv {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(b);
                if big_endian { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }
            }};
        }
        let v = match dtype {
            1 => b[0] as f64,
            2 => conv!(i16, 2) as f64,
            12 => conv!(u16, 2) as f64,
            3 => conv!(i32, 4) as f64,
            13 => conv!(u32, 4) as f64,
            4 => conv!(f32, 4) as f64,
            _ => conv!(f64, 8),
        };
        v / scale
    };
    let mut data = vec![0.0; n];
    for b in 0..bands {
        for c in 0..cols {
            for r in 0..rows {
                let src = match interleave {
                    Interleave::Bsq => (b * rows + r) * cols + c,
                    Interleave::Bil => (r * bands + b) * cols + c,
                    Interleave::Bip => (r * cols + c) * bands + b,
                };
                data[r + rows * (c + cols * b)] = word(src);
            }
        }
    }
    HyperCube::new(rows, cols, bands, data).map_err(|e| Error::format(hdr, e.to_string()))
}

fn read_png_field(path: &Path) -> Result<Field> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?;
    use image::DynamicImage::*;
    match img {
        ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Ok(Field::from_fn(h as usize, w as usize, |r, c| g.get_pixel(c as u32, r as u32)[0] as f64))
        }
        ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            Ok(Field::from_fn(h as usize, w as usize, |r, c| g.get_pixel(c as u32, r as u32)[0] as f64))
        }
        other => Err(Error::format(
            path,
            format!("expected a single-channel grayscale image, found {:?}", other.color()),
        )),
    }
}

/// Reads a guidance image from a grayscale PNG or a single-band cube, normalized to `[0, 1]`.
/// With `target = Some((rows, cols))` a larger image is resampled onto that grid.
pub fn read_pan(path: &Path, target: Option<(usize, usize)>) -> Result<PanImage> {
    let field = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_png_field(path)?,
        _ => {
            let cube = open_cube(path)?;
            if cube.bands() != 1 {
                return Err(Error::format(
                    path,
                    format!("expected a single-band image, found {} bands", cube.bands()),
                ));
            }
            cube.band(0)
        }
    };
    match target {
        Some((r, c)) if (r, c) != field.shape() => pan_resample(&field, r, c),
        _ => PanImage::normalize(field),
    }
}

/// 16-bit grayscale PNG of a field with values in `[0, 1]` (clamped).
pub fn write_gray_png16(field: &Field, path: &Path) -> Result<()> {
    let (rows, cols) = field.shape();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(cols as u32, rows as u32, |x, y| {
        Luma([(field[(y as usize, x as usize)].clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

/// 8-bit grayscale PNG of a field with values in `[0, 1]` (clamped).
pub fn write_gray_png8(field: &Field, path: &Path) -> Result<()> {
    let (rows, cols) = field.shape();
    let img = GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        Luma([(field[(y as usize, x as usize)].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

/// Percentile `p ∈ [0, 100]` with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Maps a band to 8 bits with a 2%–98% percentile stretch; a band with no
/// spread maps to mid-gray.
pub fn stretch_band(values: &[f64]) -> Vec<u8> {
    let lo = percentile(values, 2.0);
    let hi = percentile(values, 98.0);
    if hi <= lo {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// RGB PNG of three bands.
pub fn export_falsecolor(cube: &HyperCube, bands: [usize; 3], path: &Path) -> Result<()> {
    for b in bands {
        if b >= cube.bands() {
            return Err(Error::InvalidParameter(format!(
                "band {b} out of range for a {}-band cube",
                cube.bands()
            )));
        }
    }
    let rows = cube.rows();
    let channels: Vec<Vec<u8>> = bands.iter().map(|&b| stretch_band(cube.band_slice(b))).collect();
    let img = RgbImage::from_fn(cube.cols() as u32, rows as u32, |x, y| {
        let p = y as usize + rows * x as usize;
        image::Rgb([channels[0][p], channels[1][p], channels[2][p]])
    });
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}
