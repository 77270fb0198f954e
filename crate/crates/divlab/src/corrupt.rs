//! Parameterized natural-image corruptions: occlusion lines, periodic
//! checkerboard masking, fractal plasma noise, and waterdrop refraction
//! warps. Each takes a single nonnegative strength scalar; strength 0 is a
//! bitwise identity, and every generator derives its randomness from
//! (seed, sample index) so results are order-independent.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    Lines,
    Checkerboard,
    Plasma,
    Waterdrop,
}

impl CorruptionKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(Self::Lines),
            "checkerboard" => Ok(Self::Checkerboard),
            "plasma" => Ok(Self::Plasma),
            "waterdrop" => Ok(Self::Waterdrop),
            other => Err(Error::InvalidConfig(format!("unknown corruption kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Lines => "lines",
            Self::Checkerboard => "checkerboard",
            Self::Plasma => "plasma",
            Self::Waterdrop => "waterdrop",
        }
    }

    pub const ALL: [CorruptionKind; 4] =
        [Self::Lines, Self::Checkerboard, Self::Plasma, Self::Waterdrop];

    /// Reference strength for each kind (the severity the harness defaults
    /// to).
    pub fn reference_strength(&self) -> f64 {
        match self {
            Self::Lines => 1.6,
            Self::Checkerboard => 4.0,
            Self::Plasma => 4.0,
            Self::Waterdrop => 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub strength: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strength < 0.0 || !self.strength.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "corruption strength must be finite and >= 0, got {}",
                self.strength
            )));
        }
        Ok(())
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64),
    )
}

/// Apply a corruption to every image of a batch (n, C, H, W).
pub fn corrupt_images(images: &Tensor, spec: &CorruptionSpec) -> Result<Tensor> {
    spec.validate()?;
    if images.shape().len() != 4 {
        return Err(Error::InvalidShape {
            op: "corrupt",
            msg: format!("expected (n,c,h,w), got {:?}", images.shape()),
        });
    }
    if spec.strength == 0.0 {
        return Ok(images.clone());
    }
    let (n, c, h, w) = (
        images.shape()[0],
        images.shape()[1],
        images.shape()[2],
        images.shape()[3],
    );
    let mut out = images.clone();
    let per = c * h * w;
    for i in 0..n {
        let mut rng = sample_rng(spec.seed, i);
        let img = &mut out.data_mut()[i * per..(i + 1) * per];
        match spec.kind {
            CorruptionKind::Lines => lines(img, c, h, w, spec.strength, &mut rng),
            CorruptionKind::Checkerboard => checkerboard(img, c, h, w, spec.strength, &mut rng),
            CorruptionKind::Plasma => plasma(img, c, h, w, spec.strength, &mut rng),
            CorruptionKind::Waterdrop => waterdrop(img, c, h, w, spec.strength, &mut rng),
        }
        for v in img.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Corrupt a dataset; labels, shapes, and metadata pass through unchanged.
pub fn corrupt(ds: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    Ok(Dataset {
        images: corrupt_images(&ds.images, spec)?,
        labels: ds.labels.clone(),
        classes: ds.classes,
        split: ds.split.clone(),
        seed: ds.seed,
    })
}

/// Overlay straight occlusion segments; count and opacity grow with
/// strength.
fn lines(img: &mut [f64], c: usize, h: usize, w: usize, strength: f64, rng: &mut ChaCha8Rng) {
    let count = (strength * 4.0).ceil().max(1.0) as usize;
    let opacity = (0.25 + 0.25 * strength).min(1.0);
    for _ in 0..count {
        let shade = if rng.random_range(0..2) == 0 { 0.0 } else { 1.0 };
        let y0 = rng.random_range(0.0..h as f64);
        let x0 = rng.random_range(0.0..w as f64);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (dy, dx) = (angle.sin(), angle.cos());
        let len = (h.max(w) * 2) as f64;
        let steps = len as usize * 2;
        for s in 0..steps {
            let t = s as f64 / 2.0 - len / 2.0;
            let y = (y0 + t * dy).floor();
            let x = (x0 + t * dx).floor();
            if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                continue;
            }
            let (y, x) = (y as usize, x as usize);
            for ch in 0..c {
                let p = &mut img[ch * h * w + y * w + x];
                *p = (1.0 - opacity) * *p + opacity * shade;
            }
        }
    }
}

/// Multiplicative checkerboard mask; cell contrast grows with strength.
fn checkerboard(img: &mut [f64], c: usize, h: usize, w: usize, strength: f64, rng: &mut ChaCha8Rng) {
    let cell = rng.random_range(3..7usize);
    let (oy, ox) = (rng.random_range(0..cell), rng.random_range(0..cell));
    let contrast = (0.16 * strength).min(0.95);
    for y in 0..h {
        for x in 0..w {
            let parity = ((y + oy) / cell + (x + ox) / cell) % 2;
            let gain = if parity == 0 { 1.0 + contrast } else { 1.0 - contrast };
            for ch in 0..c {
                img[ch * h * w + y * w + x] *= gain;
            }
        }
    }
}

/// Diamond-square fractal heightfield on a (2^k + 1) grid.
fn diamond_square(side: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut grid = vec![0.0f64; side * side];
    let mut step = side - 1;
    let mut amp = 1.0;
    for corner in [0, step] {
        for corner2 in [0, step] {
            grid[corner * side + corner2] = rng.random_range(-1.0..1.0);
        }
    }
    while step > 1 {
        let half = step / 2;
        // diamond pass: centers of squares
        for y in (half..side).step_by(step) {
            for x in (half..side).step_by(step) {
                let avg = (grid[(y - half) * side + x - half]
                    + grid[(y - half) * side + x + half]
                    + grid[(y + half) * side + x - half]
                    + grid[(y + half) * side + x + half])
                    / 4.0;
                grid[y * side + x] = avg + rng.random_range(-amp..amp);
            }
        }
        // square pass: edge midpoints
        for y in (0..side).step_by(half) {
            let x0 = if (y / half) % 2 == 0 { half } else { 0 };
            for x in (x0..side).step_by(step) {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                if y >= half {
                    sum += grid[(y - half) * side + x];
                    cnt += 1.0;
                }
                if y + half < side {
                    sum += grid[(y + half) * side + x];
                    cnt += 1.0;
                }
                if x >= half {
                    sum += grid[y * side + x - half];
                    cnt += 1.0;
                }
                if x + half < side {
                    sum += grid[y * side + x + half];
                    cnt += 1.0;
                }
                grid[y * side + x] = sum / cnt + rng.random_range(-amp..amp);
            }
        }
        step = half;
        amp *= 0.55;
    }
    // normalize to [-1, 1]
    let max = grid.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
    for v in &mut grid {
        *v /= max;
    }
    grid
}

/// Additive fractal noise shared across channels; amplitude grows with
/// strength.
fn plasma(img: &mut [f64], c: usize, h: usize, w: usize, strength: f64, rng: &mut ChaCha8Rng) {
    let mut side = 2usize;
    while side < h.max(w) {
        side *= 2;
    }
    let grid = diamond_square(side + 1, rng);
    let amp = 0.09 * strength;
    for y in 0..h {
        for x in 0..w {
            let noise = grid[y * (side + 1) + x] * amp;
            for ch in 0..c {
                img[ch * h * w + y * w + x] += noise;
            }
        }
    }
}

/// Local radial warps around random drop centers; displacement grows with
/// strength. Samples the source image bilinearly.
fn waterdrop(img: &mut [f64], c: usize, h: usize, w: usize, strength: f64, rng: &mut ChaCha8Rng) {
    let src = img.to_vec();
    let drops = rng.random_range(2..5usize);
    let min_dim = h.min(w) as f64;
    for _ in 0..drops {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let radius = rng.random_range(min_dim * 0.25..min_dim * 0.5);
        let ripple = rng.random_range(2.0..4.0);
        let amp = 0.55 * strength;
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let dist = (dy * dy + dx * dx).sqrt();
                if dist >= radius || dist < 1e-9 {
                    continue;
                }
                let falloff = 1.0 - dist / radius;
                let shift =
                    amp * falloff * (std::f64::consts::PI * ripple * dist / radius).sin();
                let sy = (y as f64 + 0.5 + shift * dy / dist - 0.5).clamp(0.0, (h - 1) as f64);
                let sx = (x as f64 + 0.5 + shift * dx / dist - 0.5).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                for ch in 0..c {
                    let at = |yy: usize, xx: usize| src[ch * h * w + yy * w + xx];
                    img[ch * h * w + y * w + x] = (1.0 - fy) * (1.0 - fx) * at(y0, x0)
                        + (1.0 - fy) * fx * at(y0, x1)
                        + fy * (1.0 - fx) * at(y1, x0)
                        + fy * fx * at(y1, x1);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_shapes;

    fn spec(kind: CorruptionKind, strength: f64) -> CorruptionSpec {
        CorruptionSpec { kind, strength, seed: 7 }
    }

    #[test]
    fn strength_zero_is_bitwise_identity() {
        let ds = gen_shapes(6, 4, (3, 16, 16), 2).unwrap();
        for kind in CorruptionKind::ALL {
            let out = corrupt(&ds, &spec(kind, 0.0)).unwrap();
            assert_eq!(out, ds, "{kind:?}");
        }
    }

    #[test]
    fn deterministic_and_label_preserving() {
        let ds = gen_shapes(6, 4, (3, 16, 16), 2).unwrap();
        for kind in CorruptionKind::ALL {
            let s = spec(kind, kind.reference_strength());
            let a = corrupt(&ds, &s).unwrap();
            let b = corrupt(&ds, &s).unwrap();
            assert_eq!(a, b, "{kind:?}");
            assert_eq!(a.labels, ds.labels);
            assert_eq!(a.images.shape(), ds.images.shape());
            assert!(a.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_ne!(a.images, ds.images, "{kind:?} changed nothing");
        }
    }

    #[test]
    fn negative_strength_rejected() {
        let ds = gen_shapes(2, 4, (3, 16, 16), 2).unwrap();
        assert!(corrupt(&ds, &spec(CorruptionKind::Plasma, -1.0)).is_err());
    }

    fn mean_abs_change(ds: &Dataset, s: &CorruptionSpec) -> f64 {
        let out = corrupt(ds, s).unwrap();
        ds.images
            .data()
            .iter()
            .zip(out.images.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / ds.images.len() as f64
    }

    #[test]
    fn mean_change_nondecreasing_in_strength() {
        let ds = gen_shapes(8, 4, (3, 16, 16), 11).unwrap();
        for kind in CorruptionKind::ALL {
            let mut prev = 0.0;
            for strength in [0.0, 0.5, 1.0, 2.0, 4.0, 7.0] {
                let change = mean_abs_change(&ds, &spec(kind, strength));
                assert!(
                    change + 1e-12 >= prev,
                    "{kind:?}: change {change} at strength {strength} fell below {prev}"
                );
                prev = change;
            }
        }
    }

    #[test]
    fn lines_pixel_diff_fraction_regression() {
        // measured once on this reference (seed 7, strength 1.6, 32 images of
        // 3x32x32) and pinned as a band
        let ds = gen_shapes(32, 8, (3, 32, 32), 1).unwrap();
        let out = corrupt(&ds, &spec(CorruptionKind::Lines, 1.6)).unwrap();
        let changed = ds
            .images
            .data()
            .iter()
            .zip(out.images.data())
            .filter(|(a, b)| a != b)
            .count();
        let fraction = changed as f64 / ds.images.len() as f64;
        assert!(
            (0.15..=0.30).contains(&fraction),
            "changed-pixel fraction {fraction} outside pinned band"
        );
    }
}
