//! Synthetic shape/color classification datasets and IDX-format files.
//!
//! Generated images hold one colored glyph (square, circle, triangle, or
//! cross) at a jittered position and scale over a textured background; the
//! class is the shape and color combination. Generation is balanced over
//! classes and fully determined by (seed, sample index), so datasets are
//! reproducible regardless of generation order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// (n, C, H, W), values in [0, 1].
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: String,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.shape().len() != 4 || self.images.shape()[0] != self.labels.len() {
            return Err(Error::InvalidShape {
                op: "dataset",
                msg: format!(
                    "images {:?} vs {} labels",
                    self.images.shape(),
                    self.labels.len()
                ),
            });
        }
        for &l in &self.labels {
            if l >= self.classes {
                return Err(Error::LabelOutOfRange { label: l, classes: self.classes });
            }
        }
        if self.images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain { op: "dataset", msg: "pixel outside [0,1]".into() });
        }
        Ok(())
    }

    /// Subset by sample indices (copies).
    pub fn subset(&self, indices: &[usize], split: &str) -> Result<Dataset> {
        let (c, h, w) = self.image_shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidConfig(format!("subset index {i} out of range")));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            images: Tensor::new(vec![indices.len(), c, h, w], data)?,
            labels,
            classes: self.classes,
            split: split.into(),
            seed: self.seed,
        })
    }

    /// Deterministic train/validation split: every k-th sample (k from the
    /// validation fraction) goes to validation, preserving class balance of
    /// the round-robin label layout.
    pub fn split_train_val(&self, val_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "validation fraction must be in (0,1), got {val_fraction}"
            )));
        }
        let stride = (1.0 / val_fraction).round().max(2.0) as usize;
        // stratified: every stride-th sample of each class goes to validation
        let mut seen = vec![0usize; self.classes];
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if seen[l] % stride == stride - 1 {
                val.push(i);
            } else {
                train.push(i);
            }
            seen[l] += 1;
        }
        Ok((self.subset(&train, "train")?, self.subset(&val, "val")?))
    }
}

const SHAPES: usize = 4;
const PALETTE: [[f64; 3]; 8] = [
    [0.95, 0.15, 0.15],
    [0.15, 0.90, 0.20],
    [0.20, 0.25, 0.95],
    [0.95, 0.90, 0.15],
    [0.90, 0.20, 0.90],
    [0.15, 0.90, 0.90],
    [0.95, 0.55, 0.10],
    [0.90, 0.90, 0.90],
];

/// Per-sample RNG stream derived from the dataset seed and sample index.
fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64),
    )
}

/// Generate a balanced shape/color dataset of `n` images, `classes` classes,
/// image shape (c, h, w). Class k draws shape k mod 4 in palette color
/// k div 4.
pub fn gen_shapes(
    n: usize,
    classes: usize,
    image: (usize, usize, usize),
    seed: u64,
) -> Result<Dataset> {
    let (c, h, w) = image;
    if classes < 2 || classes > SHAPES * PALETTE.len() {
        return Err(Error::InvalidConfig(format!(
            "classes must be in [2, {}], got {classes}",
            SHAPES * PALETTE.len()
        )));
    }
    if !(c == 1 || c == 3) {
        return Err(Error::InvalidConfig(format!("images must have 1 or 3 channels, got {c}")));
    }
    if h < 12 || w < 12 {
        return Err(Error::InvalidConfig(format!(
            "image {h}x{w} too small for glyphs (need at least 12x12)"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }

    let mut data = vec![0.0; n * c * h * w];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        labels.push(label);
        let mut rng = image_rng(seed, i);
        let img = &mut data[i * c * h * w..(i + 1) * c * h * w];
        render_glyph(img, label, c, h, w, &mut rng);
    }
    Ok(Dataset {
        images: Tensor::new(vec![n, c, h, w], data)?,
        labels,
        classes,
        split: "full".into(),
        seed,
    })
}

fn render_glyph(img: &mut [f64], label: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) {
    // textured background: a per-image base tone plus pixel noise
    let base: Vec<f64> = (0..c).map(|_| rng.random_range(0.25..0.45)).collect();
    for ch in 0..c {
        for p in 0..h * w {
            img[ch * h * w + p] = (base[ch] + rng.random_range(-0.06..0.06)).clamp(0.0, 1.0);
        }
    }

    let shape = label % SHAPES;
    let color3 = PALETTE[label / SHAPES];
    let color: Vec<f64> = if c == 3 {
        color3.to_vec()
    } else {
        vec![0.299 * color3[0] + 0.587 * color3[1] + 0.114 * color3[2]]
    };

    let min_dim = h.min(w) as f64;
    let half = rng.random_range(min_dim * 0.18..min_dim * 0.28);
    let jitter = (min_dim * 0.10).floor();
    let cy = h as f64 / 2.0 + rng.random_range(-jitter..jitter);
    let cx = w as f64 / 2.0 + rng.random_range(-jitter..jitter);

    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            let inside = match shape {
                0 => dy.abs() <= half && dx.abs() <= half,
                1 => dy * dy + dx * dx <= half * half,
                // upward triangle: below the apex, inside the two slanted edges
                2 => dy >= -half && dy <= half && dx.abs() <= (dy + half) / 2.0,
                // cross: union of a horizontal and a vertical bar
                _ => {
                    let bar = (half * 0.4).max(1.0);
                    (dy.abs() <= bar && dx.abs() <= half) || (dx.abs() <= bar && dy.abs() <= half)
                }
            };
            if inside {
                for ch in 0..c {
                    img[ch * h * w + y * w + x] = color[ch].clamp(0.0, 1.0);
                }
            }
        }
    }
}

const IDX_IMAGES_3D: u32 = 0x0000_0803;
const IDX_IMAGES_4D: u32 = 0x0000_0804;
const IDX_LABELS: u32 = 0x0000_0801;

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    if *pos + 4 > bytes.len() {
        return Err(Error::IdxFormat("truncated header".into()));
    }
    let v = u32::from_be_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
    *pos += 4;
    Ok(v)
}

/// Encode images as IDX unsigned bytes: 3-dimensional for single-channel
/// data, 4-dimensional otherwise. Values quantize to the nearest of 256
/// levels.
pub fn encode_idx_images(ds: &Dataset) -> Vec<u8> {
    let (c, h, w) = ds.image_shape();
    let mut out = Vec::new();
    if c == 1 {
        write_u32(&mut out, IDX_IMAGES_3D);
        write_u32(&mut out, ds.len() as u32);
        write_u32(&mut out, h as u32);
        write_u32(&mut out, w as u32);
    } else {
        write_u32(&mut out, IDX_IMAGES_4D);
        write_u32(&mut out, ds.len() as u32);
        write_u32(&mut out, c as u32);
        write_u32(&mut out, h as u32);
        write_u32(&mut out, w as u32);
    }
    out.extend(ds.images.data().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

pub fn encode_idx_labels(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_u32(&mut out, IDX_LABELS);
    write_u32(&mut out, ds.len() as u32);
    out.extend(ds.labels.iter().map(|&l| l as u8));
    out
}

/// Parse IDX image and label byte streams into a dataset. Accepts
/// 3-dimensional (grayscale) and 4-dimensional (multichannel) image files;
/// pixel bytes scale to [0, 1].
pub fn decode_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut pos = 0usize;
    let magic = read_u32(images, &mut pos)?;
    let (n, c, h, w) = match magic {
        IDX_IMAGES_3D => {
            let n = read_u32(images, &mut pos)? as usize;
            let h = read_u32(images, &mut pos)? as usize;
            let w = read_u32(images, &mut pos)? as usize;
            (n, 1usize, h, w)
        }
        IDX_IMAGES_4D => {
            let n = read_u32(images, &mut pos)? as usize;
            let c = read_u32(images, &mut pos)? as usize;
            let h = read_u32(images, &mut pos)? as usize;
            let w = read_u32(images, &mut pos)? as usize;
            (n, c, h, w)
        }
        other => {
            return Err(Error::IdxFormat(format!(
                "bad image magic {other:#010x}, expected {IDX_IMAGES_3D:#010x} or {IDX_IMAGES_4D:#010x}"
            )))
        }
    };
    let need = n * c * h * w;
    if images.len() - pos != need {
        return Err(Error::IdxFormat(format!(
            "image payload has {} bytes, header promises {need}",
            images.len() - pos
        )));
    }
    let data: Vec<f64> = images[pos..].iter().map(|&b| b as f64 / 255.0).collect();

    let mut lpos = 0usize;
    let lmagic = read_u32(labels, &mut lpos)?;
    if lmagic != IDX_LABELS {
        return Err(Error::IdxFormat(format!(
            "bad label magic {lmagic:#010x}, expected {IDX_LABELS:#010x}"
        )));
    }
    let ln = read_u32(labels, &mut lpos)? as usize;
    if ln != n {
        return Err(Error::IdxFormat(format!("{n} images but {ln} labels")));
    }
    if labels.len() - lpos != ln {
        return Err(Error::IdxFormat(format!(
            "label payload has {} bytes, header promises {ln}",
            labels.len() - lpos
        )));
    }
    let labels: Vec<usize> = labels[lpos..].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Ok(Dataset {
        images: Tensor::new(vec![n, c, h, w], data)?,
        labels,
        classes,
        split: "idx".into(),
        seed: 0,
    })
}

pub fn save_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(images_path)?;
    f.write_all(&encode_idx_images(ds))?;
    let mut f = std::fs::File::create(labels_path)?;
    f.write_all(&encode_idx_labels(ds))?;
    Ok(())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = Vec::new();
    std::fs::File::open(images_path)?.read_to_end(&mut images)?;
    let mut labels = Vec::new();
    std::fs::File::open(labels_path)?.read_to_end(&mut labels)?;
    decode_idx(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = gen_shapes(24, 8, (3, 16, 16), 5).unwrap();
        let b = gen_shapes(24, 8, (3, 16, 16), 5).unwrap();
        assert_eq!(a, b);
        let c = gen_shapes(24, 8, (3, 16, 16), 6).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn classes_are_balanced() {
        let ds = gen_shapes(800, 8, (3, 16, 16), 1).unwrap();
        let mut counts = vec![0usize; 8];
        for &l in &ds.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100));
        ds.validate().unwrap();
    }

    #[test]
    fn too_small_or_bad_classes_rejected() {
        assert!(gen_shapes(10, 8, (3, 8, 8), 0).is_err());
        assert!(gen_shapes(10, 1, (3, 16, 16), 0).is_err());
        assert!(gen_shapes(10, 99, (3, 16, 16), 0).is_err());
    }

    #[test]
    fn idx_scaling_endpoints_and_count_mismatch() {
        let images = {
            let mut b = Vec::new();
            write_u32(&mut b, IDX_IMAGES_3D);
            write_u32(&mut b, 2);
            write_u32(&mut b, 2);
            write_u32(&mut b, 2);
            b.extend_from_slice(&[0, 255, 128, 64, 255, 0, 1, 254]);
            b
        };
        let labels = {
            let mut b = Vec::new();
            write_u32(&mut b, IDX_LABELS);
            write_u32(&mut b, 2);
            b.extend_from_slice(&[0, 1]);
            b
        };
        let ds = decode_idx(&images, &labels).unwrap();
        assert_eq!(ds.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(ds.images.data()[0], 0.0);
        assert_eq!(ds.images.data()[1], 1.0);

        // one label too few
        let short = {
            let mut b = Vec::new();
            write_u32(&mut b, IDX_LABELS);
            write_u32(&mut b, 1);
            b.push(0);
            b
        };
        assert!(matches!(decode_idx(&images, &short), Err(Error::IdxFormat(_))));

        let mut bad = images.clone();
        bad[3] = 0x99;
        assert!(matches!(decode_idx(&bad, &labels), Err(Error::IdxFormat(_))));

        assert!(decode_idx(&images[..images.len() - 2], &labels).is_err());
    }

    #[test]
    fn idx_roundtrip_within_quantization() {
        let ds = gen_shapes(12, 4, (3, 16, 16), 3).unwrap();
        let back = decode_idx(&encode_idx_images(&ds), &encode_idx_labels(&ds)).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.images.shape(), ds.images.shape());
        let max_err = ds
            .images
            .data()
            .iter()
            .zip(back.images.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-12, "max quantization error {max_err}");
    }

    #[test]
    fn split_preserves_balance_roughly() {
        let ds = gen_shapes(80, 4, (1, 16, 16), 9).unwrap();
        let (train, val) = ds.split_train_val(0.25).unwrap();
        assert_eq!(train.len() + val.len(), 80);
        assert_eq!(val.len(), 20);
        let mut counts = vec![0usize; 4];
        for &l in &val.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 5), "{counts:?}");
    }
}
