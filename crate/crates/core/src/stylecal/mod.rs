//! Fourier style calibration and amplitude-feature augmentation.
//!
//! Features at an insertion point are split into amplitude (style) and
//! phase (content). Training mixes amplitudes between samples of a batch
//! and, late in training, pulls them toward a running source prototype;
//! at test time every sample is pulled toward the stored prototype. The
//! phase is never modified.
//!
//! Nothing in this module takes a domain identifier.

mod bank;
mod layer;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{mirror, AmplitudeMap};
use crate::tensor::{lit, Real, Tensor};

pub use bank::{Prototype, PrototypeBank};
pub use layer::{apply_style, Mixing, StyleContext, StyleDecision, StyleMode, StyleOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Train-time calibration strength.
    pub eta: f64,
    /// Test-time calibration strength.
    pub tau: f64,
    /// Per-batch probability of calibrating during training.
    pub p_cal: f64,
    /// Fraction of the epoch budget after which train-time calibration may fire.
    pub stage_fraction: f64,
    /// 1-based index of the block whose output feeds the style layer.
    pub insertion_block: usize,
    /// Never calibrate a batch that was already amplitude-mixed.
    pub exclusive_with_aaf: bool,
    /// Record amplitudes into the bank after mixing instead of before.
    pub bank_after_aaf: bool,
    pub prototype: PrototypeKind,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            eta: 0.5,
            tau: 0.5,
            p_cal: 0.5,
            stage_fraction: 0.7,
            insertion_block: 2,
            exclusive_with_aaf: false,
            bank_after_aaf: false,
            prototype: PrototypeKind::Source,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("tau", self.tau), ("p_cal", self.p_cal)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("calibration.{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.stage_fraction > 0.0 && self.stage_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "calibration.stage_fraction must be in (0, 1], got {}",
                self.stage_fraction
            )));
        }
        Ok(())
    }

    /// Probability that calibration fires on a batch in `mode`.
    pub fn activation_probability(&self, mode: &StyleMode) -> f64 {
        match mode {
            StyleMode::Train { .. } => self.p_cal,
            StyleMode::Test => 1.0,
        }
    }
}

/// Where the calibration anchor comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeKind {
    /// Mean source amplitude.
    Source,
    /// Gaussian draw matched to the source prototype's bin mean and std.
    RandomGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AafMode {
    /// `delta ~ Beta(alpha, alpha)`.
    Mix,
    /// `delta = 0`: take the partner's amplitude.
    Swap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AafConfig {
    pub alpha: f64,
    pub p_aaf: f64,
    pub mode: AafMode,
}

impl Default for AafConfig {
    fn default() -> Self {
        AafConfig {
            alpha: 0.2,
            p_aaf: 0.5,
            mode: AafMode::Mix,
        }
    }
}

impl AafConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("aaf.alpha must be > 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.p_aaf) {
            return Err(Error::Config(format!("aaf.p_aaf must be in [0, 1], got {}", self.p_aaf)));
        }
        Ok(())
    }

    pub fn draw_delta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.mode {
            AafMode::Swap => 0.0,
            AafMode::Mix => sample_beta(rng, self.alpha),
        }
    }
}

/// `Beta(alpha, alpha)` as `X / (X + Y)` with `X, Y ~ Gamma(alpha, 1)`.
pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    loop {
        let x = gamma.sample(rng);
        let y = gamma.sample(rng);
        let s = x + y;
        if s > 0.0 && s.is_finite() {
            return (x / s).clamp(0.0, 1.0);
        }
    }
}

fn check_strength(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")))
    }
}

/// `strength · proto + (1 − strength) · amp`, bin-wise, with the batch-1
/// prototype broadcast over `amp`'s batch.
pub fn calibrate<T: Real>(
    amp: &AmplitudeMap<T>,
    proto: &AmplitudeMap<T>,
    strength: f64,
) -> Result<AmplitudeMap<T>> {
    check_strength("calibration strength", strength)?;
    let [n, c, h, w] = amp.shape();
    if proto.shape() != [1, c, h, w] {
        return Err(Error::shape("calibrate", [1, c, h, w], proto.shape()));
    }
    let (s, keep) = (lit::<T>(strength), lit::<T>(1.0 - strength));
    let p = proto.tensor().data();
    let mut out = amp.tensor().clone();
    for i in 0..n {
        for (o, &pv) in out.item_mut(i).iter_mut().zip(p) {
            *o = s * pv + keep * *o;
        }
    }
    Ok(AmplitudeMap(out))
}

/// `delta · a + (1 − delta) · b`, bin-wise.
pub fn aaf<T: Real>(a: &AmplitudeMap<T>, b: &AmplitudeMap<T>, delta: f64) -> Result<AmplitudeMap<T>> {
    check_strength("aaf delta", delta)?;
    let (d, rest) = (lit::<T>(delta), lit::<T>(1.0 - delta));
    let out = a
        .tensor()
        .zip_map(b.tensor(), |x, y| d * x + rest * y)
        .map_err(|_| Error::shape("aaf", a.shape(), b.shape()))?;
    Ok(AmplitudeMap(out))
}

/// Random-prototype control: bins drawn i.i.d. from a Gaussian with the
/// mean and standard deviation of `source`, clamped at zero.
///
/// Draws are mirrored onto conjugate-partner bins so that the prototype
/// stays a valid amplitude of a real signal.
pub fn random_prototype<T: Real, R: Rng + ?Sized>(
    source: &AmplitudeMap<T>,
    rng: &mut R,
) -> Result<AmplitudeMap<T>> {
    let t = source.tensor();
    let [n, c, h, w] = t.shape();
    if n != 1 {
        return Err(Error::shape("random_prototype", [1, c, h, w], t.shape()));
    }
    let count = t.numel() as f64;
    let mean = t.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>() / count;
    let var = t
        .data()
        .iter()
        .map(|v| (v.to_f64_lossy() - mean).powi(2))
        .sum::<f64>()
        / count;
    let normal = Normal::new(mean, var.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Tensor::<T>::zeros(t.shape());
    let mut filled = vec![false; h * w];
    for ch in 0..c {
        filled.fill(false);
        for m in 0..h {
            for k in 0..w {
                if filled[m * w + k] {
                    continue;
                }
                let v = lit::<T>(normal.sample(rng).max(0.0));
                let (mm, mk) = mirror(h, w, m, k);
                out.set([0, ch, m, k], v);
                out.set([0, ch, mm, mk], v);
                filled[m * w + k] = true;
                filled[mm * w + mk] = true;
            }
        }
    }
    Ok(AmplitudeMap(out))
}
