use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RunRng;

/// Source of training images. Items are `[C, H, W]` with values in `[-1, 1]`.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(channels, height, width)`.
    fn image_shape(&self) -> [usize; 3];

    fn item(&self, index: usize) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Ellipses,
    Rectangles,
    GaussianBlobs,
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipses" => Ok(ShapeFamily::Ellipses),
            "rectangles" => Ok(ShapeFamily::Rectangles),
            "gaussian-blobs" | "blobs" => Ok(ShapeFamily::GaussianBlobs),
            _ => Err(Error::Config(format!("unknown synthetic family {s:?}"))),
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeFamily::Ellipses => "ellipses",
            ShapeFamily::Rectangles => "rectangles",
            ShapeFamily::GaussianBlobs => "gaussian-blobs",
        })
    }
}

/// Procedural images. Sizes and positions are fractions of the image side;
/// intensities are in `[0, 1]` before the map to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub family: ShapeFamily,
    pub size_range: (f64, f64),
    pub position_range: (f64, f64),
    pub intensity_range: (f64, f64),
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(family: ShapeFamily, seed: u64) -> Self {
        let size_range = match family {
            ShapeFamily::Ellipses => (0.15, 0.4),
            ShapeFamily::Rectangles => (0.2, 0.6),
            ShapeFamily::GaussianBlobs => (0.08, 0.2),
        };
        SyntheticSpec {
            family,
            size_range,
            position_range: (0.25, 0.75),
            intensity_range: (0.5, 1.0),
            seed,
        }
    }

    /// Render item `index`; a pure function of `(self, index)`.
    pub fn render(&self, index: u64, channels: usize, size: usize) -> Vec<f64> {
        let mut rng = RunRng::new(self.seed, index);
        let mut span = |r: (f64, f64)| r.0 + (r.1 - r.0) * rng.gen::<f64>();
        let s = size as f64;
        let mut coverage = vec![0.0f64; size * size];
        match self.family {
            ShapeFamily::Ellipses => {
                let (cx, cy) = (span(self.position_range) * s, span(self.position_range) * s);
                let (rx, ry) = (span(self.size_range) * s, span(self.size_range) * s);
                let angle = span((0.0, std::f64::consts::PI));
                let (sin, cos) = angle.sin_cos();
                for y in 0..size {
                    for x in 0..size {
                        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        let u = (dx * cos + dy * sin) / rx;
                        let v = (-dx * sin + dy * cos) / ry;
                        let d = (u * u + v * v).sqrt();
                        // one-pixel linear edge
                        coverage[y * size + x] = ((1.0 - d) * rx.min(ry) + 0.5).clamp(0.0, 1.0);
                    }
                }
            }
            ShapeFamily::Rectangles => {
                let (cx, cy) = (span(self.position_range) * s, span(self.position_range) * s);
                let (hw, hh) = (span(self.size_range) * s / 2.0, span(self.size_range) * s / 2.0);
                for y in 0..size {
                    for x in 0..size {
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        if (px - cx).abs() <= hw && (py - cy).abs() <= hh {
                            coverage[y * size + x] = 1.0;
                        }
                    }
                }
            }
            ShapeFamily::GaussianBlobs => {
                let count = 1 + (span((0.0, 3.0)) as usize).min(2);
                for _ in 0..count {
                    let (cx, cy) = (span(self.position_range) * s, span(self.position_range) * s);
                    let sigma = span(self.size_range) * s;
                    let amp = span((0.5, 1.0));
                    for y in 0..size {
                        for x in 0..size {
                            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                            coverage[y * size + x] += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                        }
                    }
                }
                coverage.iter_mut().for_each(|c| *c = c.min(1.0));
            }
        }
        let intensities: Vec<f64> = (0..channels).map(|_| span(self.intensity_range)).collect();
        let mut out = Vec::with_capacity(channels * size * size);
        for level in intensities {
            out.extend(coverage.iter().map(|c| 2.0 * c * level - 1.0));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub items: usize,
    pub channels: usize,
    pub image_size: usize,
}

impl Dataset for SyntheticDataset {
    fn len(&self) -> usize {
        self.items
    }

    fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }

    fn item(&self, index: usize) -> Result<Vec<f64>> {
        Ok(self.spec.render(index as u64, self.channels, self.image_size))
    }
}

/// Images loaded from raw tensor files (see [`read_raw_tensor`]).
#[derive(Clone, Debug)]
pub struct TensorDirDataset {
    shape: [usize; 3],
    items: Vec<Vec<f64>>,
}

impl TensorDirDataset {
    /// Load every `*.bgt` file in `dir`, sorted by file name.
    pub fn open(dir: &Path, channels: usize, image_size: usize) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::file(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bgt"))
            .collect();
        paths.sort();
        let shape = [channels, image_size, image_size];
        let mut items = Vec::with_capacity(paths.len());
        for p in &paths {
            let (s, data) = read_raw_tensor(p)?;
            if s != shape {
                return Err(Error::Config(format!(
                    "{}: image shape {s:?} does not match configured {shape:?}",
                    p.display()
                )));
            }
            items.push(data);
        }
        if items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(TensorDirDataset { shape, items })
    }
}

impl Dataset for TensorDirDataset {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn image_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn item(&self, index: usize) -> Result<Vec<f64>> {
        self.items
            .get(index)
            .cloned()
            .ok_or_else(|| Error::shape("dataset", format!("index {index} out of range")))
    }
}

/// Raw image tensor: three little-endian `u32` (channels, height, width)
/// followed by `C·H·W` little-endian `f32` pixels in `[0, 1]`.
/// Returns the shape and the pixels mapped to `[-1, 1]`.
pub fn read_raw_tensor(path: &Path) -> Result<([usize; 3], Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_raw_tensor(&bytes).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_raw_tensor(bytes: &[u8]) -> Result<([usize; 3], Vec<f64>)> {
    if bytes.len() < 12 {
        return Err(Error::Config("raw tensor shorter than its 12-byte shape prefix".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n = shape.iter().product::<usize>();
    if bytes.len() != 12 + 4 * n {
        return Err(Error::Config(format!(
            "raw tensor {shape:?} needs {} bytes, file has {}",
            12 + 4 * n,
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n);
    for chunk in bytes[12..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        data.push(2.0 * v - 1.0);
    }
    Ok((shape, data))
}

/// Inverse of [`read_raw_tensor`]: `pixels` are in `[-1, 1]`.
pub fn encode_raw_tensor(shape: [usize; 3], pixels: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * pixels.len());
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &p in pixels {
        let v = ((p + 1.0) / 2.0).clamp(0.0, 1.0) as f32;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_raw_tensor(path: &Path, shape: [usize; 3], pixels: &[f64]) -> Result<()> {
    fs::write(path, encode_raw_tensor(shape, pixels)).map_err(|e| Error::file(path, e))
}
