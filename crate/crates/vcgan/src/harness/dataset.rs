//! Desk-scale datasets: a Gaussian mixture on a circle, tiny class-glyph
//! rasters, and an IDX reader for standard grayscale corpora.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::rng::Rng;
use crate::training::{Batch, TrainError};

use super::HarnessError;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A fully materialized labeled sample set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Tensor<f32>,
    pub labels: Vec<usize>,
    pub sample_shape: Vec<usize>,
    pub k: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Row `i` as a standalone sample tensor.
    pub fn sample(&self, i: usize) -> Tensor<f32> {
        let per = self.sample_len();
        Tensor::from_vec(
            self.sample_shape.clone(),
            self.samples.data[i * per..(i + 1) * per].to_vec(),
        )
        .unwrap()
    }

    /// Minibatch drawn uniformly with replacement.
    pub fn sample_batch(&self, b: usize, rng: &mut Rng) -> Result<Batch<f32>, TrainError> {
        let per = self.sample_len();
        let mut data = Vec::with_capacity(b * per);
        let mut labels = Vec::with_capacity(b);
        for _ in 0..b {
            let i = rng.below(self.len());
            data.extend_from_slice(&self.samples.data[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&self.sample_shape);
        Batch::new(Tensor::from_vec(shape, data).unwrap(), labels, self.k)
    }

    /// Indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Samples of one class stacked into a batch tensor.
    pub fn class_samples(&self, class: usize) -> Tensor<f32> {
        let per = self.sample_len();
        let idx: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(i, _)| i)
            .collect();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in &idx {
            data.extend_from_slice(&self.samples.data[i * per..(i + 1) * per]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::from_vec(shape, data).unwrap()
    }
}

/// Class means on a circle of `radius`, isotropic per-class deviation
/// `sigma`; coordinates are scaled by 1 / (1.25 * radius) so the data lives
/// inside [-1, 1]. Samples are stored class-major.
pub fn make_mixture_dataset(
    k: usize,
    radius: f64,
    sigma: f64,
    n_per_class: usize,
    rng: &mut Rng,
) -> Result<Dataset, HarnessError> {
    if k < 2 {
        return Err(HarnessError::Dataset(format!("mixture needs at least 2 classes, got {k}")));
    }
    if !(sigma > 0.0) || !(radius > 0.0) {
        return Err(HarnessError::Dataset(format!(
            "degenerate mixture: radius {radius}, sigma {sigma}"
        )));
    }
    let scale = 1.0 / (1.25 * radius);
    let mut data = Vec::with_capacity(k * n_per_class * 2);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for class in 0..k {
        let angle = std::f64::consts::TAU * class as f64 / k as f64;
        let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
        for _ in 0..n_per_class {
            let x = (cx + sigma * rng.gaussian()) * scale;
            let y = (cy + sigma * rng.gaussian()) * scale;
            data.push(x as f32);
            data.push(y as f32);
            labels.push(class);
        }
    }
    Ok(Dataset {
        samples: Tensor::from_vec(vec![k * n_per_class, 2], data)
            .unwrap_or_else(|_| Tensor::zeros(vec![0, 2])),
        labels,
        sample_shape: vec![2],
        k,
    })
}

/// Scaled class mean of the mixture: where class samples concentrate after
/// the [-1, 1] normalization.
pub fn mixture_class_mean(k: usize, radius: f64, class: usize) -> (f64, f64) {
    let angle = std::f64::consts::TAU * class as f64 / k as f64;
    let scale = 1.0 / (1.25 * radius);
    (radius * angle.cos() * scale, radius * angle.sin() * scale)
}

const GLYPHS: [[&str; 8]; 10] = [
    // square
    [
        "........", ".######.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".######.",
        "........",
    ],
    // circle (octagonal ring)
    [
        "........", "..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####..",
        "........",
    ],
    // cross
    [
        "........", ".#....#.", "..#..#..", "...##...", "...##...", "..#..#..", ".#....#.",
        "........",
    ],
    // triangle
    [
        "........", "...##...", "...##...", "..#..#..", "..#..#..", ".#....#.", ".######.",
        "........",
    ],
    // plus
    [
        "........", "...##...", "...##...", ".######.", ".######.", "...##...", "...##...",
        "........",
    ],
    // horizontal bars
    [
        "........", ".######.", "........", ".######.", "........", ".######.", "........",
        "........",
    ],
    // vertical bars
    [
        "........", ".#.#.#..", ".#.#.#..", ".#.#.#..", ".#.#.#..", ".#.#.#..", ".#.#.#..",
        "........",
    ],
    // diamond
    [
        "........", "...##...", "..#..#..", ".#....#.", ".#....#.", "..#..#..", "...##...",
        "........",
    ],
    // corner L
    [
        "........", ".#......", ".#......", ".#......", ".#......", ".#......", ".######.",
        "........",
    ],
    // top T
    [
        "........", ".######.", "...##...", "...##...", "...##...", "...##...", "...##...",
        "........",
    ],
];

/// 1x8x8 glyph rasters, one glyph per class, with optional one-pixel
/// jitter and brightness in [0.6, 1.0]. With `randomize` off every sample
/// of a class is identical (unit brightness, no jitter). Pixels are mapped
/// to [-1, 1].
pub fn make_shapes_dataset(
    k: usize,
    n_per_class: usize,
    randomize: bool,
    rng: &mut Rng,
) -> Result<Dataset, HarnessError> {
    if k == 0 || k > GLYPHS.len() {
        return Err(HarnessError::Dataset(format!(
            "shapes dataset supports 1..={} classes, got {k}",
            GLYPHS.len()
        )));
    }
    let mut data = Vec::with_capacity(k * n_per_class * 64);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for class in 0..k {
        for _ in 0..n_per_class {
            let (dx, dy, brightness) = if randomize {
                (
                    rng.below(3) as isize - 1,
                    rng.below(3) as isize - 1,
                    0.6 + 0.4 * rng.uniform(),
                )
            } else {
                (0, 0, 1.0)
            };
            for y in 0..8isize {
                for x in 0..8isize {
                    let sy = y - dy;
                    let sx = x - dx;
                    let lit = (0..8).contains(&sy)
                        && (0..8).contains(&sx)
                        && GLYPHS[class][sy as usize].as_bytes()[sx as usize] == b'#';
                    let v = if lit { brightness } else { 0.0 };
                    data.push((v * 2.0 - 1.0) as f32);
                }
            }
            labels.push(class);
        }
    }
    Ok(Dataset {
        samples: Tensor::from_vec(vec![k * n_per_class, 1, 8, 8], data)
            .unwrap_or_else(|_| Tensor::zeros(vec![0, 1, 8, 8])),
        labels,
        sample_shape: vec![1, 8, 8],
        k,
    })
}

fn read_be_u32(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<u32, HarnessError> {
    if *pos + 4 > bytes.len() {
        return Err(HarnessError::IdxTruncated(path.display().to_string()));
    }
    let v = u32::from_be_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
    *pos += 4;
    Ok(v)
}

/// Read an IDX image/label file pair. Pixels are mapped from [0, 255] to
/// [-1, 1]; image and label counts must agree.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, HarnessError> {
    let img_bytes = fs::read(images_path)?;
    let lab_bytes = fs::read(labels_path)?;

    let mut pos = 0;
    let magic = read_be_u32(&img_bytes, &mut pos, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(HarnessError::IdxBadMagic {
            path: images_path.display().to_string(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n = read_be_u32(&img_bytes, &mut pos, images_path)? as usize;
    let h = read_be_u32(&img_bytes, &mut pos, images_path)? as usize;
    let w = read_be_u32(&img_bytes, &mut pos, images_path)? as usize;
    if img_bytes.len() != pos + n * h * w {
        return Err(HarnessError::IdxTruncated(images_path.display().to_string()));
    }

    let mut lpos = 0;
    let lmagic = read_be_u32(&lab_bytes, &mut lpos, labels_path)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(HarnessError::IdxBadMagic {
            path: labels_path.display().to_string(),
            found: lmagic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let ln = read_be_u32(&lab_bytes, &mut lpos, labels_path)? as usize;
    if lab_bytes.len() != lpos + ln {
        return Err(HarnessError::IdxTruncated(labels_path.display().to_string()));
    }
    if ln != n {
        return Err(HarnessError::IdxCountMismatch { images: n, labels: ln });
    }

    let data: Vec<f32> = img_bytes[pos..]
        .iter()
        .map(|&b| b as f32 / 255.0 * 2.0 - 1.0)
        .collect();
    let labels: Vec<usize> = lab_bytes[lpos..].iter().map(|&b| b as usize).collect();
    let k = labels.iter().copied().max().map_or(1, |m| m + 1);
    Ok(Dataset {
        samples: Tensor::from_vec(vec![n, 1, h, w], data)
            .map_err(|e| HarnessError::Dataset(e.to_string()))?,
        labels,
        sample_shape: vec![1, h, w],
        k,
    })
}

/// Write an IDX image/label pair (the inverse of [`load_idx`], for tests
/// and synthetic corpora). Pixel bytes are taken as-is.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    pixels: &[u8],
    labels: &[u8],
    h: usize,
    w: usize,
) -> Result<(), HarnessError> {
    let n = labels.len();
    if pixels.len() != n * h * w {
        return Err(HarnessError::Dataset(format!(
            "{} pixel bytes for {} images of {}x{}",
            pixels.len(),
            n,
            h,
            w
        )));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    fs::File::create(images_path)?.write_all(&img)?;

    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    fs::File::create(labels_path)?.write_all(&lab)?;
    Ok(())
}
