use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{calibrate, AafConfig, CalibrationConfig, PrototypeBank};
use crate::error::{Error, Result};
use crate::spectral::{self, AmplitudeMap, PhaseMap, Spectrum};
use crate::tensor::{lit, CustomOp, Graph, Real, Tensor, Var};

/// Gradient guard added under the square root of the amplitude in the
/// backward rule only.
const AMP_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StyleMode {
    Train { epoch: usize, total_epochs: usize },
    Test,
}

/// Amplitude pairing for one batch: sample `i` becomes
/// `delta[i] · A[i] + (1 − delta[i]) · A[partner[i]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixing {
    pub partner: Vec<usize>,
    pub delta: Vec<f64>,
}

/// The branches taken by the style layer on one batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StyleDecision {
    pub mixing: Option<Mixing>,
    /// Calibration strength, if calibration fires.
    pub calibration: Option<f64>,
}

/// Result of [`apply_style`].
pub struct StyleOutput<T: Real> {
    pub output: Var,
    /// Amplitudes of the input features.
    pub amplitude: AmplitudeMap<T>,
    /// Amplitudes after mixing, before calibration.
    pub mixed: AmplitudeMap<T>,
    pub imag_residual: T,
}

struct StyleBackward<T: Real> {
    spectrum: Spectrum<T>,
    phase: Tensor<T>,
    amp_out: Tensor<T>,
    decision: StyleDecision,
}

impl<T: Real> CustomOp<T> for StyleBackward<T> {
    fn name(&self) -> &str {
        "style_layer"
    }

    fn backward(&self, g: &Tensor<T>) -> Tensor<T> {
        let (gu, gv) = spectral::real_idft_adjoint(g);
        let n = g.shape()[0];
        let len = g.item_len();

        // Through the polar form: U = A' cos P, V = A' sin P.
        let mut g_amp_out = Tensor::zeros(g.shape());
        let mut g_phase = Tensor::zeros(g.shape());
        for i in 0..g.numel() {
            let (s, c) = self.phase.data()[i].sin_cos();
            let (u, v) = (gu.data()[i], gv.data()[i]);
            g_amp_out.data_mut()[i] = u * c + v * s;
            g_phase.data_mut()[i] = self.amp_out.data()[i] * (v * c - u * s);
        }

        // Through calibration (prototype is a constant) and mixing.
        let keep = lit::<T>(1.0 - self.decision.calibration.unwrap_or(0.0));
        let g_amp = match &self.decision.mixing {
            None => g_amp_out.scale(keep),
            Some(mix) => {
                let mut out = Tensor::zeros(g.shape());
                for i in 0..n {
                    let d = lit::<T>(mix.delta[i]);
                    let rest = lit::<T>(1.0 - mix.delta[i]);
                    let j = mix.partner[i];
                    for k in 0..len {
                        let gk = g_amp_out.data()[i * len + k] * keep;
                        out.data_mut()[i * len + k] += d * gk;
                        out.data_mut()[j * len + k] += rest * gk;
                    }
                }
                out
            }
        };

        // Through amplitude and phase of the spectrum.
        let eps = lit::<T>(AMP_EPS);
        let mut g_re = Tensor::zeros(g.shape());
        let mut g_im = Tensor::zeros(g.shape());
        for i in 0..g.numel() {
            let (r, im) = (self.spectrum.re.data()[i], self.spectrum.im.data()[i]);
            let mag2 = r * r + im * im + eps;
            let mag = mag2.sqrt();
            let (ga, gp) = (g_amp.data()[i], g_phase.data()[i]);
            g_re.data_mut()[i] = ga * r / mag - gp * im / mag2;
            g_im.data_mut()[i] = ga * im / mag + gp * r / mag2;
        }
        spectral::dft2d_adjoint(&g_re, &g_im)
    }
}

/// Runs the style pipeline on `z` with fixed branch choices:
/// transform, split, mix, calibrate toward `prototype`, recombine with the
/// original phase and invert.
pub fn apply_style<T: Real>(
    graph: &mut Graph<T>,
    z: Var,
    decision: &StyleDecision,
    prototype: Option<&AmplitudeMap<T>>,
) -> Result<StyleOutput<T>> {
    let x = graph.value(z);
    let [n, c, h, w] = x.shape();
    let spectrum = spectral::dft2d(x);
    let (amplitude, phase) = spectral::decompose(&spectrum);

    let mixed = match &decision.mixing {
        None => amplitude.clone(),
        Some(mix) => {
            if mix.partner.len() != n || mix.delta.len() != n || mix.partner.iter().any(|&j| j >= n) {
                return Err(Error::InvalidArgument(format!(
                    "mixing plan does not match batch of {n}"
                )));
            }
            if mix.delta.iter().any(|d| !(0.0..=1.0).contains(d)) {
                return Err(Error::InvalidArgument("aaf delta must be in [0, 1]".into()));
            }
            let a = amplitude.tensor();
            let len = c * h * w;
            let mut out = Tensor::zeros(a.shape());
            for i in 0..n {
                let d = lit::<T>(mix.delta[i]);
                let rest = lit::<T>(1.0 - mix.delta[i]);
                let (own, other) = (a.item(i), a.item(mix.partner[i]));
                let dst = &mut out.data_mut()[i * len..(i + 1) * len];
                for k in 0..len {
                    dst[k] = d * own[k] + rest * other[k];
                }
            }
            AmplitudeMap(out)
        }
    };

    let amp_out = match decision.calibration {
        None => mixed.clone(),
        Some(strength) => {
            let proto = prototype.ok_or(Error::Uncalibrated)?;
            calibrate(&mixed, proto, strength)?
        }
    };

    let recon = spectral::reconstruct(&amp_out, &phase)?;
    let imag_residual = recon.imag_residual;
    let PhaseMap(phase) = phase;
    let op = StyleBackward {
        spectrum,
        phase,
        amp_out: amp_out.0,
        decision: decision.clone(),
    };
    let output = graph.custom(z, recon.tensor, Box::new(op))?;
    Ok(StyleOutput {
        output,
        amplitude,
        mixed,
        imag_residual,
    })
}

/// Stateful style layer: draws per-batch coins, maintains the prototype
/// bank during training and applies the pipeline.
pub struct StyleContext<T: Real> {
    pub calibration: CalibrationConfig,
    pub aaf: AafConfig,
    pub mode: StyleMode,
    pub bank: PrototypeBank<T>,
    /// Fixed branch choices used instead of random coins.
    pub frozen: Option<StyleDecision>,
    /// Largest imaginary residual seen by `forward`.
    pub max_imag_residual: f64,
    /// Branches taken by the most recent `forward`.
    pub last: Option<StyleDecision>,
    rng: ChaCha8Rng,
}

impl<T: Real> StyleContext<T> {
    pub fn new(
        calibration: CalibrationConfig,
        aaf: AafConfig,
        mode: StyleMode,
        bank: PrototypeBank<T>,
        seed: u64,
    ) -> Self {
        StyleContext {
            calibration,
            aaf,
            mode,
            bank,
            frozen: None,
            max_imag_residual: 0.0,
            last: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Test-mode layer calibrating with strength `tau` against `bank`'s prototype.
    pub fn test(tau: f64, bank: PrototypeBank<T>) -> Self {
        let calibration = CalibrationConfig {
            tau,
            ..CalibrationConfig::default()
        };
        Self::new(calibration, AafConfig::default(), StyleMode::Test, bank, 0)
    }

    /// True when train-time calibration may fire in the current epoch.
    pub fn calibration_stage_active(&self) -> bool {
        match self.mode {
            StyleMode::Train {
                epoch,
                total_epochs,
            } => {
                epoch >= crate::tensor::stage_epoch(self.calibration.stage_fraction, total_epochs)
                    && self.bank.prototype().is_some()
            }
            StyleMode::Test => true,
        }
    }

    /// Draws the branch choices for a batch of `batch` samples.
    pub fn draw(&mut self, batch: usize) -> Result<StyleDecision> {
        if let Some(d) = &self.frozen {
            return Ok(d.clone());
        }
        match self.mode {
            StyleMode::Test => {
                let tau = self.calibration.tau;
                if tau > 0.0 && self.bank.prototype().is_none() {
                    return Err(Error::Uncalibrated);
                }
                Ok(StyleDecision {
                    mixing: None,
                    calibration: (tau > 0.0).then_some(tau),
                })
            }
            StyleMode::Train { .. } => {
                let mut decision = StyleDecision::default();
                if self.rng.random::<f64>() < self.aaf.p_aaf {
                    let mut partner: Vec<usize> = (0..batch).collect();
                    partner.shuffle(&mut self.rng);
                    let delta = (0..batch).map(|_| self.aaf.draw_delta(&mut self.rng)).collect();
                    decision.mixing = Some(Mixing { partner, delta });
                }
                if self.calibration_stage_active() {
                    let p = self.calibration.activation_probability(&self.mode);
                    let fire = self.rng.random::<f64>() < p;
                    let blocked = self.calibration.exclusive_with_aaf && decision.mixing.is_some();
                    if fire && !blocked {
                        decision.calibration = Some(self.calibration.eta);
                    }
                }
                Ok(decision)
            }
        }
    }

    pub fn forward(&mut self, graph: &mut Graph<T>, z: Var) -> Result<Var> {
        let shape = graph.value(z).shape();
        if let Some([c, h, w]) = self.bank.item_shape() {
            if [c, h, w] != shape[1..] {
                return Err(Error::shape("style_layer", [shape[0], c, h, w], shape));
            }
        }
        let decision = self.draw(shape[0])?;
        let proto = self.bank.prototype().map(|p| p.map.clone());
        let out = apply_style(graph, z, &decision, proto.as_ref())?;
        self.last = Some(decision);
        self.max_imag_residual = self.max_imag_residual.max(out.imag_residual.to_f64_lossy());
        if matches!(self.mode, StyleMode::Train { .. }) {
            let record = if self.calibration.bank_after_aaf {
                &out.mixed
            } else {
                &out.amplitude
            };
            self.bank.update(record)?;
        }
        Ok(out.output)
    }
}
