use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SHAPE_NAMES: [&str; 8] = [
    "hbar", "vbar", "disc", "cross", "ring", "diagonal", "frame", "x",
];

/// Appearance of one domain. Every term acts on image intensity only and
/// none depends on the class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainStyle {
    pub name: String,
    /// Multiplies the class mask.
    pub gain: f64,
    /// Additive pattern `c0 + c1·cos(2πx/W) + c2·cos(2πy/H)`.
    pub lowfreq: [f64; 3],
    /// Cycles of the multiplicative texture across the image; 0 disables it.
    pub texture_freq: f64,
    /// Texture modulation depth in `[0, 1]`.
    pub texture_depth: f64,
    pub noise_std: f64,
    /// Circular translation `(dy, dx)` of the finished image. Moves phase
    /// only; used as a negative control for calibration.
    pub shift: [i32; 2],
}

impl Default for DomainStyle {
    fn default() -> Self {
        DomainStyle {
            name: "neutral".into(),
            gain: 1.0,
            lowfreq: [0.0; 3],
            texture_freq: 0.0,
            texture_depth: 0.0,
            noise_std: 0.0,
            shift: [0, 0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "one")]
    pub version: u32,
    pub classes: usize,
    pub per_cell: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default = "default_size")]
    pub width: usize,
    /// Maximum mask offset in pixels.
    #[serde(default = "default_jitter")]
    pub jitter: usize,
    #[serde(default = "yes")]
    pub clamp: bool,
    pub seed: u64,
    pub domains: Vec<DomainStyle>,
}

fn one() -> u32 {
    1
}
fn default_size() -> usize {
    32
}
fn default_jitter() -> usize {
    3
}
fn yes() -> bool {
    true
}

impl SyntheticSpec {
    /// Four classes, four domains, 25 samples per cell, 32x32 grayscale.
    ///
    /// Domain 0 ("dim") is the intended held-out target: low contrast on a
    /// bright, textured background, outside the range of the three sources.
    pub fn amplitude_shift(seed: u64) -> Self {
        let style = |name: &str, gain, lowfreq, texture_freq, texture_depth| DomainStyle {
            name: name.into(),
            gain,
            lowfreq,
            texture_freq,
            texture_depth,
            noise_std: 0.03,
            shift: [0, 0],
        };
        SyntheticSpec {
            version: 1,
            classes: 4,
            per_cell: 25,
            height: 32,
            width: 32,
            jitter: 3,
            clamp: true,
            seed,
            domains: vec![
                style("dim", 0.35, [0.5, 0.08, 0.08], 6.0, 0.5),
                style("plain", 1.0, [0.0, 0.0, 0.0], 0.0, 0.0),
                style("shaded", 0.8, [0.1, 0.05, 0.0], 0.0, 0.0),
                style("striped", 0.9, [0.05, 0.0, 0.05], 4.0, 0.3),
            ],
        }
    }

    /// Like [`amplitude_shift`](Self::amplitude_shift) but the target domain
    /// differs from the sources by a spatial shift only.
    pub fn phase_shift_control(seed: u64) -> Self {
        let mut spec = Self::amplitude_shift(seed);
        spec.domains[0] = DomainStyle {
            name: "shifted".into(),
            gain: 0.9,
            lowfreq: [0.05, 0.0, 0.0],
            noise_std: 0.03,
            shift: [7, -9],
            ..DomainStyle::default()
        };
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > SHAPE_NAMES.len() {
            return Err(Error::InvalidArgument(format!(
                "classes must be in 2..={}, got {}",
                SHAPE_NAMES.len(),
                self.classes
            )));
        }
        if self.domains.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 domains, got {}",
                self.domains.len()
            )));
        }
        if self.per_cell == 0 {
            return Err(Error::InvalidArgument("per_cell must be >= 1".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidArgument("images must be at least 8x8".into()));
        }
        for d in &self.domains {
            if !(d.gain > 0.0) || !(0.0..=1.0).contains(&d.texture_depth) || d.noise_std < 0.0 {
                return Err(Error::InvalidArgument(format!("invalid style for domain {:?}", d.name)));
            }
        }
        Ok(())
    }
}

/// Deterministic per-sample stream keyed by its coordinates.
fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = (h ^ p).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Binary mask of `class` centered at `(cy, cx)` with scale `size`.
pub fn render_mask(class: usize, height: usize, width: usize, cy: f64, cx: f64, size: f64) -> Vec<f32> {
    let mut out = vec![0.0f32; height * width];
    let t = (size * 0.28).max(1.5);
    for y in 0..height {
        for x in 0..width {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            let r = dy.hypot(dx);
            let inside = match class {
                0 => dy.abs() <= t / 2.0 && dx.abs() <= size,
                1 => dx.abs() <= t / 2.0 && dy.abs() <= size,
                2 => r <= size * 0.8,
                3 => (dy.abs() <= t / 2.0 || dx.abs() <= t / 2.0) && dy.abs().max(dx.abs()) <= size,
                4 => (r - size * 0.75).abs() <= t / 2.0,
                5 => (dy - dx).abs() <= t / 1.4 && dy.abs().max(dx.abs()) <= size * 0.85,
                6 => {
                    let m = dy.abs().max(dx.abs());
                    m <= size * 0.8 && m >= size * 0.8 - t
                }
                7 => {
                    ((dy - dx).abs() <= t / 1.4 || (dy + dx).abs() <= t / 1.4)
                        && dy.abs().max(dx.abs()) <= size * 0.85
                }
                _ => false,
            };
            if inside {
                out[y * width + x] = 1.0;
            }
        }
    }
    out
}

/// `clamp(gain · mask · texture + lowfreq + noise)`, optionally shifted.
fn stylize(mask: &[f32], style: &DomainStyle, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (h, w) = (spec.height, spec.width);
    let noise = Normal::new(0.0, style.noise_std.max(0.0)).expect("valid std");
    let mut img = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64;
            let fx = x as f64 / w as f64;
            let texture = if style.texture_freq > 0.0 {
                let wave = (2.0 * PI * style.texture_freq * fy).cos() * (2.0 * PI * style.texture_freq * fx).cos();
                1.0 - style.texture_depth * 0.5 * (1.0 - wave)
            } else {
                1.0
            };
            let [c0, c1, c2] = style.lowfreq;
            let background = c0 + c1 * (2.0 * PI * fx).cos() + c2 * (2.0 * PI * fy).cos();
            let mut v = style.gain * mask[y * w + x] as f64 * texture + background;
            if style.noise_std > 0.0 {
                v += noise.sample(rng);
            }
            if spec.clamp {
                v = v.clamp(0.0, 1.0);
            }
            img[y * w + x] = v as f32;
        }
    }
    let [sy, sx] = style.shift;
    if sy != 0 || sx != 0 {
        let src = img.clone();
        for y in 0..h {
            for x in 0..w {
                let ty = (y as i64 + sy as i64).rem_euclid(h as i64) as usize;
                let tx = (x as i64 + sx as i64).rem_euclid(w as i64) as usize;
                img[ty * w + tx] = src[y * w + x];
            }
        }
    }
    img
}

/// Generates `classes × domains × per_cell` single-channel images ordered by
/// domain, then class, then index.
///
/// Mask placement depends only on `(seed, class, index)`, so the same
/// shape appears in every domain; noise depends on the domain as well.
pub fn generate(spec: &SyntheticSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let total = spec.classes * spec.domains.len() * spec.per_cell;
    let mut data = Vec::with_capacity(total * h * w);
    let mut labels = Vec::with_capacity(total);
    let mut domains = Vec::with_capacity(total);
    let j = spec.jitter as f64;
    for (d, style) in spec.domains.iter().enumerate() {
        for class in 0..spec.classes {
            for i in 0..spec.per_cell {
                let mut mask_rng = stream(spec.seed, &[0, class as u64, i as u64]);
                let cy = h as f64 / 2.0 + mask_rng.random_range(-j..=j);
                let cx = w as f64 / 2.0 + mask_rng.random_range(-j..=j);
                let size = h.min(w) as f64 * mask_rng.random_range(0.26..0.34);
                let mask = render_mask(class, h, w, cy, cx, size);
                let mut noise_rng = stream(spec.seed, &[1, d as u64, class as u64, i as u64]);
                data.extend(stylize(&mask, style, spec, &mut noise_rng));
                labels.push(class);
                domains.push(d);
            }
        }
    }
    DomainDataset::new(
        Tensor::from_vec([total, 1, h, w], data)?,
        labels,
        domains,
        SHAPE_NAMES[..spec.classes].iter().map(|s| s.to_string()).collect(),
        spec.domains.iter().map(|s| s.name.clone()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(classes: usize, per_cell: usize) -> SyntheticSpec {
        let mut spec = SyntheticSpec::amplitude_shift(5);
        spec.classes = classes;
        spec.per_cell = per_cell;
        spec
    }

    #[test]
    fn counts_per_cell() {
        let ds = generate(&SyntheticSpec::amplitude_shift(0)).unwrap();
        assert_eq!(ds.len(), 400);
        for d in 0..4 {
            for c in 0..4 {
                let n = (0..ds.len())
                    .filter(|&i| ds.labels[i] == c && ds.domains[i] == d)
                    .count();
                assert_eq!(n, 25);
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate(&small(3, 4)).unwrap();
        let b = generate(&small(3, 4)).unwrap();
        assert_eq!(a, b);
        let mut other = small(3, 4);
        other.seed += 1;
        assert_ne!(generate(&other).unwrap().images, a.images);
    }

    #[test]
    fn pixels_in_unit_interval() {
        let ds = generate(&small(4, 3)).unwrap();
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(generate(&small(1, 3)).is_err());
        assert!(generate(&small(4, 0)).is_err());
        let mut one_domain = small(4, 2);
        one_domain.domains.truncate(1);
        assert!(generate(&one_domain).is_err());
    }

    #[test]
    fn neutral_style_reproduces_masks_in_every_domain() {
        let mut spec = small(4, 3);
        for d in &mut spec.domains {
            *d = DomainStyle::default();
        }
        let ds = generate(&spec).unwrap();
        let per_domain = 4 * 3;
        for i in 0..per_domain {
            for d in 1..spec.domains.len() {
                assert_eq!(ds.images.item(i), ds.images.item(d * per_domain + i));
            }
            assert!(ds.images.item(i).iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(ds.images.item(i).iter().any(|&v| v == 1.0));
        }
    }

    #[test]
    fn shapes_are_distinct() {
        let masks: Vec<Vec<f32>> = (0..8).map(|c| render_mask(c, 32, 32, 16.0, 16.0, 9.6)).collect();
        for a in 0..8 {
            for b in a + 1..8 {
                assert_ne!(masks[a], masks[b], "classes {a} and {b}");
            }
        }
    }
}
