//! Dataset loaders (MNIST IDX, CIFAR-10 binary), resampling and patches.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SslcaError};
use crate::matrix::Matrix;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Channel-planar image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(SslcaError::dims(
                format!("{} pixels", width * height * channels),
                data.len(),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn mean_intensity(&self) -> f64 {
        let (sum, n) = self.images.iter().fold((0.0, 0usize), |(s, n), im| {
            (s + im.data.iter().sum::<f64>(), n + im.data.len())
        });
        sum / n.max(1) as f64
    }

    /// First `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            name: self.name.clone(),
            images: self.images.iter().take(n).cloned().collect(),
            labels: self.labels.iter().take(n).copied().collect(),
        }
    }

    pub fn map_images(&self, f: impl Fn(&Image) -> Result<Image>) -> Result<Dataset> {
        Ok(Dataset {
            name: self.name.clone(),
            images: self.images.iter().map(f).collect::<Result<_>>()?,
            labels: self.labels.clone(),
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| SslcaError::Data(format!("cannot read {}: {e}", path.display())))
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| SslcaError::Data(format!("{what}: truncated header")))
}

/// Parses IDX image bytes into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(SslcaError::Data(format!(
            "images: magic {magic:#010x}, expected {IDX_IMAGES:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(SslcaError::Data(format!(
            "images: {} pixel bytes for {n}x{rows}x{cols}",
            body.len()
        )));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(SslcaError::Data(format!(
            "labels: magic {magic:#010x}, expected {IDX_LABELS:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(SslcaError::Data(format!("labels: {} bytes for {n} labels", body.len())));
    }
    if let Some(bad) = body.iter().find(|&&l| l > 9) {
        return Err(SslcaError::Data(format!("labels: class {bad} out of range")));
    }
    Ok(body)
}

pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, px) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(SslcaError::Data(format!("{n} images but {} labels", labels.len())));
    }
    let images = px
        .chunks_exact(rows * cols)
        .map(|c| Image {
            width: cols,
            height: rows,
            channels: 1,
            data: c.iter().map(|&b| b as f64 / 255.0).collect(),
        })
        .collect();
    Ok(Dataset {
        name: "mnist".into(),
        images,
        labels: labels.to_vec(),
    })
}

pub fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    mnist_from_bytes(&read_file(images)?, &read_file(labels)?)
}

pub fn cifar_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(SslcaError::Data(format!(
            "CIFAR batch of {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            bytes.len()
        )));
    }
    let mut ds = Dataset {
        name: "cifar10".into(),
        ..Dataset::default()
    };
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(SslcaError::Data(format!("CIFAR label {} out of range", rec[0])));
        }
        ds.labels.push(rec[0]);
        ds.images.push(Image {
            width: CIFAR_SIDE,
            height: CIFAR_SIDE,
            channels: 3,
            data: rec[1..].iter().map(|&b| b as f64 / 255.0).collect(),
        });
    }
    Ok(ds)
}

pub fn load_cifar10(paths: &[impl AsRef<Path>]) -> Result<Dataset> {
    let mut ds = Dataset {
        name: "cifar10".into(),
        ..Dataset::default()
    };
    for p in paths {
        let part = cifar_from_bytes(&read_file(p.as_ref())?)?;
        ds.images.extend(part.images);
        ds.labels.extend(part.labels);
    }
    Ok(ds)
}

/// Area-weighted resampling; plain block averaging when the size divides.
pub fn downscale(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(SslcaError::Domain("target dimensions must be positive".into()));
    }
    let wx = overlap_weights(img.width, width);
    let wy = overlap_weights(img.height, height);
    let mut out = vec![0.0; width * height * img.channels];
    for c in 0..img.channels {
        for (ty, ys) in wy.iter().enumerate() {
            for (tx, xs) in wx.iter().enumerate() {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for &(y, fy) in ys {
                    for &(x, fx) in xs {
                        acc += fy * fx * img.at(c, y, x);
                        wsum += fy * fx;
                    }
                }
                out[(c * height + ty) * width + tx] = acc / wsum;
            }
        }
    }
    Image::new(width, height, img.channels, out)
}

/// For every target cell, the source cells it covers and their overlap.
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let lo = t as f64 * scale;
            let hi = lo + scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (w > 1e-12).then_some((s, w))
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub image: usize,
    pub px: usize,
    pub py: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub values: Vec<f64>,
    pub label: Option<u8>,
    pub provenance: Provenance,
}

/// Non-overlapping `s × s` patches in row-major order. Each patch is
/// flattened channel by channel.
pub fn patchify(img: &Image, s: usize) -> Result<Vec<Vec<f64>>> {
    if s == 0 || img.width % s != 0 || img.height % s != 0 {
        return Err(SslcaError::Domain(format!(
            "patch size {s} does not tile a {}x{} image",
            img.width, img.height
        )));
    }
    let mut out = Vec::with_capacity((img.width / s) * (img.height / s));
    for py in 0..img.height / s {
        for px in 0..img.width / s {
            let mut v = Vec::with_capacity(s * s * img.channels);
            for c in 0..img.channels {
                for y in 0..s {
                    for x in 0..s {
                        v.push(img.at(c, py * s + y, px * s + x));
                    }
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Patches of every image in a dataset with their provenance.
pub fn dataset_patches(ds: &Dataset, s: usize) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for (k, img) in ds.images.iter().enumerate() {
        let per_row = img.width / s.max(1);
        for (idx, values) in patchify(img, s)?.into_iter().enumerate() {
            out.push(Patch {
                values,
                label: ds.labels.get(k).copied(),
                provenance: Provenance {
                    dataset: ds.name.clone(),
                    image: k,
                    px: idx % per_row,
                    py: idx / per_row,
                },
            });
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn reassemble(patches: &[Vec<f64>], width: usize, height: usize, channels: usize, s: usize) -> Result<Image> {
    if s == 0 || width % s != 0 || height % s != 0 || patches.len() != (width / s) * (height / s) {
        return Err(SslcaError::Domain("patch list does not tile the image".into()));
    }
    let mut data = vec![0.0; width * height * channels];
    let per_row = width / s;
    for (idx, p) in patches.iter().enumerate() {
        if p.len() != s * s * channels {
            return Err(SslcaError::dims(s * s * channels, p.len()));
        }
        let (px, py) = (idx % per_row, idx / per_row);
        let mut k = 0;
        for c in 0..channels {
            for y in 0..s {
                for x in 0..s {
                    data[(c * height + py * s + y) * width + px * s + x] = p[k];
                    k += 1;
                }
            }
        }
    }
    Image::new(width, height, channels, data)
}

/// Planted sparse-coding data: `m` random receptive fields with entries in
/// `[0, 1]` and samples that mix `active` of them with non-negative weights
/// summing to one, plus uniform noise of half-width `noise`, clipped to `[0, 1]`.
pub fn synthetic_planted<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    active: usize,
    noise: f64,
    samples: usize,
    rng: &mut R,
) -> (Matrix, Vec<Vec<f64>>) {
    let phi = Matrix::from_fn(n, m, |_, _| {
        if rng.gen::<f64>() < 0.4 {
            rng.gen_range(0.6..1.0)
        } else {
            rng.gen_range(0.0..0.2)
        }
    });
    let k = active.clamp(1, m);
    let xs = (0..samples)
        .map(|_| {
            let mut a = vec![0.0; m];
            let mut picked = 0;
            while picked < k {
                let j = rng.gen_range(0..m);
                if a[j] == 0.0 {
                    a[j] = rng.gen_range(0.2..1.0);
                    picked += 1;
                }
            }
            let sum: f64 = a.iter().sum();
            a.iter_mut().for_each(|v| *v /= sum);
            phi.mul_vec(&a)
                .into_iter()
                .map(|v| (v + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    (phi, xs)
}
