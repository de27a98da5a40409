//! Two-stage training, leave-one-domain-out evaluation, ablations, sweeps
//! and embedding export.

mod config;
mod export;
mod grid;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_ldo, DomainDataset};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Checkpoint, Model, NetworkSpec};
use crate::stylecal::{random_prototype, Prototype, PrototypeBank, PrototypeKind, StyleContext, StyleMode};
use crate::tensor::{sgd_step, Graph, Real, Tensor};

pub use config::{DataSource, TrainConfig, CONFIG_VERSION};
pub use export::{export_embeddings, Embeddings, Stage};
pub use grid::{
    ablate, ablation_rows, run_cells, run_configs, sweep, AblationRow, CellResult, CellSummary, GridReport, RunCache, SweepAxis,
    STRENGTH_GRID,
};

const EVAL_BATCH: usize = 100;

/// Independent generator streams derived from the run seed.
pub(crate) fn substream(seed: u64, stream: u64) -> u64 {
    let mut h = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Source validation accuracy, uncalibrated. Logged only.
    pub val_accuracy: Option<f64>,
    pub lr_extractor: f64,
    pub lr_head: f64,
    pub aaf_batches: usize,
    pub calibrated_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub config_digest: String,
    pub epochs: Vec<EpochLog>,
    pub target_domain: String,
    pub target_accuracy_uncalibrated: f64,
    /// With test-time calibration at `config.calibration.tau`; absent when
    /// no prototype was built.
    pub target_accuracy_calibrated: Option<f64>,
    pub prototype_epoch: Option<usize>,
    pub max_imag_residual: f64,
    pub wall_time_s: f64,
}

impl RunReport {
    /// Copy with wall time zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        RunReport {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainAccuracy {
    pub domain: usize,
    pub name: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub calibrated: bool,
    pub tau: Option<f64>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub per_domain: Vec<DomainAccuracy>,
}

pub fn network_spec(cfg: &TrainConfig, ds: &DomainDataset) -> NetworkSpec {
    NetworkSpec::conv_stack(
        ds.image_shape(),
        ds.num_classes(),
        &cfg.widths,
        cfg.calibration.insertion_block,
    )
}

/// Trains on every non-target domain of `ds` and evaluates on the target.
pub fn train<T: Real>(cfg: &TrainConfig, ds: &DomainDataset) -> Result<(Checkpoint<T>, RunReport)> {
    let start = Instant::now();
    cfg.validate()?;
    let split = split_ldo(ds, cfg.target_domain, cfg.val_fraction, cfg.seed)?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut model = Model::<T>::build(network_spec(cfg, ds), substream(cfg.seed, 1))?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, 2));
    let mut proto_rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, 4));
    let mut style = cfg.style_layer.then(|| {
        StyleContext::<T>::new(
            cfg.calibration.clone(),
            cfg.aaf.clone(),
            StyleMode::Train {
                epoch: 0,
                total_epochs: cfg.epochs,
            },
            PrototypeBank::new(),
            substream(cfg.seed, 3),
        )
    });

    let mut order = split.train.clone();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr_ext = cfg.optimizer.effective_lr(cfg.optimizer.lr_extractor, epoch, cfg.epochs);
        let lr_head = cfg.optimizer.effective_lr(cfg.optimizer.lr_head, epoch, cfg.epochs);
        if let Some(ctx) = style.as_mut() {
            ctx.mode = StyleMode::Train {
                epoch,
                total_epochs: cfg.epochs,
            };
        }
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut aaf_batches, mut cal_batches) = (0.0, 0, 0);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |loss: f64| Error::Divergence { epoch, step, loss };
            let x: Tensor<T> = ds.batch(idx).cast();
            let labels = ds.labels_of(idx);
            let mut graph = Graph::new();
            let fp = match model.forward(&mut graph, x, style.as_mut()) {
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                other => other?,
            };
            let loss = match graph.cross_entropy(fp.logits, &labels) {
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                other => other?,
            };
            let loss_value = graph.value(loss).data()[0].to_f64_lossy();
            if !loss_value.is_finite() {
                return Err(diverged(loss_value));
            }
            loss_sum += loss_value * idx.len() as f64;
            if let Some(d) = style.as_ref().and_then(|c| c.last.as_ref()) {
                aaf_batches += d.mixing.is_some() as usize;
                cal_batches += d.calibration.is_some() as usize;
            }
            match graph.backward(loss) {
                Err(Error::NonFinite(_)) => return Err(diverged(loss_value)),
                other => other?,
            }
            for (i, p) in model.params.iter_mut().enumerate() {
                let g = graph.grad_or_zeros(fp.params[i]);
                let lr = if model.head_mask[i] { lr_head } else { lr_ext };
                sgd_step(std::slice::from_mut(p), std::slice::from_ref(&g), lr, cfg.optimizer.weight_decay)?;
            }
        }
        if let Some(ctx) = style.as_mut() {
            if ctx.bank.count() > 0 {
                let map = ctx.bank.finalize(epoch)?;
                if cfg.calibration.prototype == PrototypeKind::RandomGaussian {
                    let map = random_prototype(&map, &mut proto_rng)?;
                    ctx.bank.set_prototype(Prototype { map, epoch })?;
                }
            }
        }
        let val_accuracy = if split.val.is_empty() {
            None
        } else {
            Some(accuracy(&model, ds, &split.val, None)?.0)
        };
        let train_loss = loss_sum / order.len() as f64;
        log::info!("epoch {epoch}: loss {train_loss:.4} val {val_accuracy:?} aaf {aaf_batches} cal {cal_batches}");
        logs.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
            lr_extractor: lr_ext,
            lr_head,
            aaf_batches,
            calibrated_batches: cal_batches,
        });
    }

    let prototype = style.as_ref().and_then(|c| c.bank.prototype().cloned());
    let target_accuracy_uncalibrated = accuracy(&model, ds, &split.test, None)?.0;
    let (target_accuracy_calibrated, cal_residual) = match &prototype {
        Some(p) => {
            let mut ctx = StyleContext::test(cfg.calibration.tau, PrototypeBank::with_prototype(p.clone()));
            let acc = accuracy(&model, ds, &split.test, Some(&mut ctx))?.0;
            (Some(acc), ctx.max_imag_residual)
        }
        None => (None, 0.0),
    };
    let max_imag_residual = style
        .as_ref()
        .map_or(0.0, |c| c.max_imag_residual)
        .max(cal_residual);
    let digest = cfg.digest();
    let report = RunReport {
        config: cfg.clone(),
        config_digest: digest.clone(),
        epochs: logs,
        target_domain: ds.domain_names[cfg.target_domain].clone(),
        target_accuracy_uncalibrated,
        target_accuracy_calibrated,
        prototype_epoch: prototype.as_ref().map(|p| p.epoch),
        max_imag_residual,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let ckpt = Checkpoint {
        model,
        prototype,
        seed: cfg.seed,
        config_digest: digest,
    };
    Ok((ckpt, report))
}

/// Predictions for `indices`, in order.
pub fn predict_indices<T: Real>(
    model: &Model<T>,
    ds: &DomainDataset,
    indices: &[usize],
    mut style: Option<&mut StyleContext<T>>,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let mut graph = Graph::new();
        let fp = model.forward(&mut graph, ds.batch(chunk).cast(), style.as_deref_mut())?;
        out.extend(argmax_rows(graph.value(fp.logits)));
    }
    Ok(out)
}

fn accuracy<T: Real>(
    model: &Model<T>,
    ds: &DomainDataset,
    indices: &[usize],
    style: Option<&mut StyleContext<T>>,
) -> Result<(f64, Vec<usize>)> {
    let pred = predict_indices(model, ds, indices, style)?;
    let correct = pred.iter().zip(indices).filter(|(p, &i)| **p == ds.labels[i]).count();
    Ok((correct as f64 / indices.len().max(1) as f64, pred))
}

/// Accuracy of `ckpt` on `indices` with a per-domain breakdown.
///
/// The calibrated path runs the style layer in test mode against the
/// checkpoint's prototype and fails with [`Error::Uncalibrated`] if there
/// is none.
pub fn evaluate<T: Real>(
    ckpt: &Checkpoint<T>,
    ds: &DomainDataset,
    indices: &[usize],
    calibrated: bool,
    tau: f64,
) -> Result<EvalReport> {
    let [c, h, w] = ckpt.model.spec.input;
    if ds.image_shape() != [c, h, w] {
        return Err(Error::shape("evaluate input", [1, c, h, w], {
            let [dc, dh, dw] = ds.image_shape();
            [1, dc, dh, dw]
        }));
    }
    let pred = if calibrated {
        let proto = ckpt.prototype.clone().ok_or(Error::Uncalibrated)?;
        let mut ctx = StyleContext::test(tau, PrototypeBank::with_prototype(proto));
        predict_indices(&ckpt.model, ds, indices, Some(&mut ctx))?
    } else {
        predict_indices(&ckpt.model, ds, indices, None)?
    };
    let mut per: Vec<(usize, usize)> = vec![(0, 0); ds.num_domains()];
    for (&p, &i) in pred.iter().zip(indices) {
        let e = &mut per[ds.domains[i]];
        e.1 += 1;
        e.0 += (p == ds.labels[i]) as usize;
    }
    let correct = per.iter().map(|e| e.0).sum();
    let per_domain = per
        .iter()
        .enumerate()
        .filter(|(_, e)| e.1 > 0)
        .map(|(d, &(correct, total))| DomainAccuracy {
            domain: d,
            name: ds.domain_names[d].clone(),
            correct,
            total,
            accuracy: correct as f64 / total as f64,
        })
        .collect();
    Ok(EvalReport {
        calibrated,
        tau: calibrated.then_some(tau),
        correct,
        total: indices.len(),
        accuracy: correct as f64 / indices.len().max(1) as f64,
        per_domain,
    })
}
