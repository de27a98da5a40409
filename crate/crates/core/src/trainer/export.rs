use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::stylecal::{PrototypeBank, StyleContext};
use crate::tensor::{Graph, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    PreStyle,
    PostStyle,
}

/// Flattened insertion-layer features, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    /// `(C, H, W)` of one feature map.
    pub shape: [usize; 3],
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
}

/// Features at the style layer for every sample in `indices`.
///
/// `PostStyle` runs the style layer in test mode with strength `tau`
/// (0 is a plain roundtrip); `tau > 0` needs the checkpoint's prototype.
pub fn export_embeddings<T: Real>(
    ckpt: &Checkpoint<T>,
    ds: &DomainDataset,
    indices: &[usize],
    stage: Stage,
    tau: f64,
) -> Result<Embeddings> {
    let mut ctx = match stage {
        Stage::PreStyle => None,
        Stage::PostStyle => {
            let bank = match &ckpt.prototype {
                Some(p) => PrototypeBank::with_prototype(p.clone()),
                None if tau > 0.0 => return Err(Error::Uncalibrated),
                None => PrototypeBank::new(),
            };
            Some(StyleContext::test(tau, bank))
        }
    };
    let mut rows = Vec::with_capacity(indices.len());
    let mut shape = [0; 3];
    for chunk in indices.chunks(100) {
        let mut graph = Graph::new();
        let fp = ckpt.model.forward(&mut graph, ds.batch(chunk).cast(), ctx.as_mut())?;
        let v = match stage {
            Stage::PreStyle => fp.pre_style,
            Stage::PostStyle => fp.post_style,
        };
        let t = graph.value(v);
        let [_, c, h, w] = t.shape();
        shape = [c, h, w];
        for i in 0..chunk.len() {
            rows.push(t.item(i).iter().map(|x| x.to_f64_lossy()).collect());
        }
    }
    Ok(Embeddings {
        shape,
        rows,
        labels: indices.iter().map(|&i| ds.labels[i]).collect(),
        domains: indices.iter().map(|&i| ds.domains[i]).collect(),
    })
}

impl Embeddings {
    /// Header `class,domain,f0,f1,...`; one row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
        let width = self.rows.first().map_or(0, |r| r.len());
        let mut header = vec!["class".to_string(), "domain".to_string()];
        header.extend((0..width).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for ((row, &c), &d) in self.rows.iter().zip(&self.labels).zip(&self.domains) {
            let mut rec = vec![c.to_string(), d.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
