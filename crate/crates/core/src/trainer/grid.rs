//! Ablation grid and sensitivity sweeps: many independent runs, optionally
//! concurrent, summarized as mean ± std per cell.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{train, RunReport, TrainConfig};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::stylecal::PrototypeKind;
use crate::tensor::Precision;

/// The strength grid for `eta = tau`.
pub const STRENGTH_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.75, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub aaf: bool,
    pub cal_train: bool,
    pub cal_test: bool,
    pub random_prototype: bool,
}

/// Six component rows plus the random-prototype control.
pub fn ablation_rows() -> Vec<AblationRow> {
    let row = |name: &str, aaf, cal_train, cal_test, random_prototype| AblationRow {
        name: name.into(),
        aaf,
        cal_train,
        cal_test,
        random_prototype,
    };
    vec![
        row("baseline", false, false, false, false),
        row("aaf", true, false, false, false),
        row("cal_train", false, true, false, false),
        row("aaf+cal_train", true, true, false, false),
        row("cal_train+test", false, true, true, false),
        row("full", true, true, true, false),
        row("random_prototype", false, true, true, true),
    ]
}

impl AblationRow {
    /// Training config for this row. Rows that differ only in `cal_test`
    /// share it.
    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.style_layer = self.aaf || self.cal_train;
        if !self.aaf {
            cfg.aaf.p_aaf = 0.0;
        }
        if !self.cal_train {
            cfg.calibration.p_cal = 0.0;
        }
        cfg.calibration.prototype = if self.random_prototype {
            PrototypeKind::RandomGaussian
        } else {
            PrototypeKind::Source
        };
        if !cfg.style_layer {
            // Unused without a style layer; normalized so equal runs share a digest.
            cfg.aaf = base.aaf.clone();
            cfg.calibration = base.calibration.clone();
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `eta = tau` over [`STRENGTH_GRID`].
    Strength,
    /// Every insertion block of the network.
    Layer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    /// Swept parameter value, if any.
    pub value: Option<f64>,
    pub seed: u64,
    pub target_accuracy: f64,
    pub target_accuracy_uncalibrated: f64,
    pub target_accuracy_calibrated: Option<f64>,
    pub final_train_loss: f64,
    pub final_val_accuracy: Option<f64>,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub value: Option<f64>,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub kind: String,
    pub base_config: TrainConfig,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
    pub summary: Vec<CellSummary>,
}

impl GridReport {
    fn assemble(kind: &str, base: &TrainConfig, seeds: &[u64], cells: Vec<CellResult>) -> Self {
        let mut summary: Vec<CellSummary> = Vec::new();
        for c in &cells {
            if summary.iter().any(|s| s.cell == c.cell) {
                continue;
            }
            let xs: Vec<f64> = cells
                .iter()
                .filter(|o| o.cell == c.cell)
                .map(|o| o.target_accuracy)
                .collect();
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            summary.push(CellSummary {
                cell: c.cell.clone(),
                value: c.value,
                n,
                mean,
                std,
            });
        }
        GridReport {
            kind: kind.into(),
            base_config: base.clone(),
            seeds: seeds.to_vec(),
            cells,
            summary,
        }
    }

    pub fn summary_of(&self, cell: &str) -> Option<&CellSummary> {
        self.summary.iter().find(|s| s.cell == cell)
    }

    /// Accuracy of `cell` for `seed`.
    pub fn accuracy(&self, cell: &str, seed: u64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.cell == cell && c.seed == seed)
            .map(|c| c.target_accuracy)
    }

    /// One row per cell per seed.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
        w.write_record([
            "cell",
            "value",
            "seed",
            "target_accuracy",
            "target_accuracy_uncalibrated",
            "target_accuracy_calibrated",
            "final_train_loss",
            "final_val_accuracy",
            "config_digest",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.cell.clone(),
                opt(c.value),
                c.seed.to_string(),
                c.target_accuracy.to_string(),
                c.target_accuracy_uncalibrated.to_string(),
                opt(c.target_accuracy_calibrated),
                c.final_train_loss.to_string(),
                opt(c.final_val_accuracy),
                c.config_digest.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Runs `f(0..n)` on at most `jobs` threads; results keep index order.
pub fn run_cells<R: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

/// Reports of finished runs keyed by config digest, so grids that repeat a
/// configuration train it once.
#[derive(Default)]
pub struct RunCache {
    runs: Mutex<HashMap<String, RunReport>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, digest: &str) -> Option<RunReport> {
        self.runs.lock().expect("cache lock").get(digest).cloned()
    }

    fn put(&self, report: RunReport) {
        self.runs
            .lock()
            .expect("cache lock")
            .insert(report.config_digest.clone(), report);
    }
}

fn run_report(cfg: &TrainConfig, ds: &DomainDataset) -> Result<RunReport> {
    match cfg.precision {
        Precision::Single => train::<f32>(cfg, ds).map(|r| r.1),
        Precision::Double => train::<f64>(cfg, ds).map(|r| r.1),
    }
}

/// Trains each distinct config once (consulting `cache`) and returns
/// reports in input order.
pub fn run_configs(cfgs: &[TrainConfig], ds: &DomainDataset, jobs: usize, cache: &RunCache) -> Result<Vec<RunReport>> {
    let mut unique: Vec<&TrainConfig> = Vec::new();
    for c in cfgs {
        let d = c.digest();
        if cache.get(&d).is_none() && !unique.iter().any(|u| u.digest() == d) {
            unique.push(c);
        }
    }
    let fresh = run_cells(jobs, unique.len(), |i| {
        let r = run_report(unique[i], ds)?;
        log::info!(
            "run {} seed {} done: target {:.3} / {:?}",
            &r.config_digest[..8],
            r.config.seed,
            r.target_accuracy_uncalibrated,
            r.target_accuracy_calibrated
        );
        Ok(r)
    })?;
    for r in fresh {
        cache.put(r);
    }
    Ok(cfgs
        .iter()
        .map(|c| cache.get(&c.digest()).expect("trained above"))
        .collect())
}

fn cell(name: &str, value: Option<f64>, use_calibrated: bool, r: &RunReport) -> CellResult {
    let calibrated = if use_calibrated {
        r.target_accuracy_calibrated
    } else {
        None
    };
    let last = r.epochs.last();
    CellResult {
        cell: name.into(),
        value,
        seed: r.config.seed,
        target_accuracy: calibrated.unwrap_or(r.target_accuracy_uncalibrated),
        target_accuracy_uncalibrated: r.target_accuracy_uncalibrated,
        target_accuracy_calibrated: r.target_accuracy_calibrated,
        final_train_loss: last.map_or(f64::NAN, |e| e.train_loss),
        final_val_accuracy: last.and_then(|e| e.val_accuracy),
        config_digest: r.config_digest.clone(),
    }
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.clone()
    }
}

/// Component ablation over `seeds`.
pub fn ablate(base: &TrainConfig, seeds: &[u64], jobs: usize, cache: &RunCache) -> Result<GridReport> {
    base.validate()?;
    let ds = base.data.load()?;
    let rows = ablation_rows();
    let mut cfgs = Vec::new();
    for &seed in seeds {
        for row in &rows {
            cfgs.push(row.config(&with_seed(base, seed)));
        }
    }
    let reports = run_configs(&cfgs, &ds, jobs, cache)?;
    let cells = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let row = &rows[i % rows.len()];
            cell(&row.name, None, row.cal_test, r)
        })
        .collect();
    Ok(GridReport::assemble("ablation", base, seeds, cells))
}

/// Sensitivity sweep of the full method along `axis`.
pub fn sweep(
    base: &TrainConfig,
    axis: SweepAxis,
    seeds: &[u64],
    jobs: usize,
    cache: &RunCache,
) -> Result<GridReport> {
    base.validate()?;
    let ds = base.data.load()?;
    let values: Vec<f64> = match axis {
        SweepAxis::Strength => STRENGTH_GRID.to_vec(),
        SweepAxis::Layer => (1..=base.widths.len()).map(|b| b as f64).collect(),
    };
    let mut cfgs = Vec::new();
    for &seed in seeds {
        for &v in &values {
            let mut cfg = with_seed(base, seed);
            cfg.style_layer = true;
            match axis {
                SweepAxis::Strength => {
                    cfg.calibration.eta = v;
                    cfg.calibration.tau = v;
                }
                SweepAxis::Layer => cfg.calibration.insertion_block = v as usize,
            }
            cfgs.push(cfg);
        }
    }
    let reports = run_configs(&cfgs, &ds, jobs, cache)?;
    let cells = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v = values[i % values.len()];
            let name = match axis {
                SweepAxis::Strength => format!("strength={v}"),
                SweepAxis::Layer => format!("layer={v}"),
            };
            cell(&name, Some(v), true, r)
        })
        .collect();
    let kind = match axis {
        SweepAxis::Strength => "sweep_strength",
        SweepAxis::Layer => "sweep_layer",
    };
    Ok(GridReport::assemble(kind, base, seeds, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_documented_sizes() {
        assert_eq!(STRENGTH_GRID.len(), 5);
        assert_eq!(ablation_rows().len(), 7);
    }

    #[test]
    fn test_flag_rows_share_training() {
        let base = TrainConfig::default();
        let rows = ablation_rows();
        let digest = |name: &str| rows.iter().find(|r| r.name == name).unwrap().config(&base).digest();
        assert_eq!(digest("cal_train"), digest("cal_train+test"));
        assert_eq!(digest("aaf+cal_train"), digest("full"));
        assert_ne!(digest("baseline"), digest("aaf"));
        assert_ne!(digest("cal_train+test"), digest("random_prototype"));
        let mut distinct: Vec<String> = rows.iter().map(|r| r.config(&base).digest()).collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn baseline_row_has_no_style_layer() {
        let cfg = ablation_rows()[0].config(&TrainConfig::default());
        assert!(!cfg.style_layer);
    }

    #[test]
    fn run_cells_keeps_order_and_errors() {
        let out = run_cells(3, 10, |i| Ok(i * i)).unwrap();
        assert_eq!(out, (0..10).map(|i| i * i).collect::<Vec<_>>());
        let err = run_cells(2, 4, |i| if i == 2 { Err(Error::EmptyBank) } else { Ok(i) });
        assert!(err.is_err());
    }

    #[test]
    fn summary_statistics() {
        let mk = |seed, acc| CellResult {
            cell: "x".into(),
            value: None,
            seed,
            target_accuracy: acc,
            target_accuracy_uncalibrated: acc,
            target_accuracy_calibrated: None,
            final_train_loss: 0.0,
            final_val_accuracy: None,
            config_digest: String::new(),
        };
        let g = GridReport::assemble("t", &TrainConfig::default(), &[0, 1, 2], vec![mk(0, 0.5), mk(1, 0.7), mk(2, 0.9)]);
        let s = g.summary_of("x").unwrap();
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert!((s.std - 0.2).abs() < 1e-12);
        assert_eq!(g.accuracy("x", 1), Some(0.7));
    }
}
