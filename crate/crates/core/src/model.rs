//! Small convolutional classifier with a style-layer insertion point.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stylecal::{Prototype, StyleContext};
use crate::tensor::{io, layer_forward, lit, Graph, Layer, Real, Shape, Tensor, Var};

/// Network topology. `blocks` form the feature extractor; `head` maps the
/// last block's output to logits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `(C, H, W)` of one input image.
    pub input: [usize; 3],
    pub classes: usize,
    pub blocks: Vec<Vec<Layer>>,
    pub head: Vec<Layer>,
    /// 1-based block after whose output the style layer runs.
    pub insertion_after_block: usize,
}

pub const DEFAULT_WIDTHS: [usize; 4] = [16, 32, 32, 64];

impl NetworkSpec {
    /// Four `conv3x3 → relu → avgpool2` blocks followed by `flatten → dense`.
    pub fn default_topology(input: [usize; 3], classes: usize, insertion_after_block: usize) -> Self {
        Self::conv_stack(input, classes, &DEFAULT_WIDTHS, insertion_after_block)
    }

    pub fn conv_stack(input: [usize; 3], classes: usize, widths: &[usize], insertion_after_block: usize) -> Self {
        let mut blocks = Vec::new();
        let mut ch = input[0];
        let (mut h, mut w) = (input[1], input[2]);
        for &out in widths {
            blocks.push(vec![
                Layer::Conv2d {
                    in_channels: ch,
                    out_channels: out,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
                Layer::AvgPool2,
            ]);
            ch = out;
            h /= 2;
            w /= 2;
        }
        NetworkSpec {
            input,
            classes,
            blocks,
            head: vec![
                Layer::Flatten,
                Layer::Dense {
                    in_features: ch * h * w,
                    out_features: classes,
                },
            ],
            insertion_after_block,
        }
    }

    /// Output shape of every extractor block and of the head, for a batch of `n`.
    pub fn block_shapes(&self, n: usize) -> Result<Vec<Shape>> {
        let [c, h, w] = self.input;
        let mut shape = [n, c, h, w];
        let mut out = Vec::with_capacity(self.blocks.len() + 1);
        for block in self.blocks.iter().chain(std::iter::once(&self.head)) {
            for layer in block {
                shape = layer.output_shape(shape)?;
            }
            out.push(shape);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument("network needs at least 2 classes".into()));
        }
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("invalid input shape {:?}", self.input)));
        }
        for block in &self.blocks {
            if block
                .iter()
                .any(|l| matches!(l, Layer::Flatten | Layer::Dense { .. }))
            {
                return Err(Error::InvalidArgument(
                    "extractor blocks may only hold conv2d, relu and avg_pool2".into(),
                ));
            }
        }
        if self.insertion_after_block == 0 || self.insertion_after_block > self.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "insertion_after_block {} out of range 1..={}",
                self.insertion_after_block,
                self.blocks.len()
            )));
        }
        let shapes = self.block_shapes(1)?;
        let logits = shapes[shapes.len() - 1];
        if logits != [1, self.classes, 1, 1] {
            return Err(Error::shape("network head", [1, self.classes, 1, 1], logits));
        }
        Ok(())
    }

    /// Every parameter shape in storage order.
    pub fn param_shapes(&self) -> Vec<Shape> {
        self.layers().flat_map(|(_, l)| l.param_shapes()).collect()
    }

    fn layers(&self) -> impl Iterator<Item = (bool, &Layer)> {
        self.blocks
            .iter()
            .flatten()
            .map(|l| (false, l))
            .chain(self.head.iter().map(|l| (true, l)))
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    pub spec: NetworkSpec,
    pub params: Vec<Tensor<T>>,
    /// `true` for classifier-head parameters.
    pub head_mask: Vec<bool>,
}

/// Nodes recorded by one forward pass.
pub struct ForwardPass {
    pub logits: Var,
    pub params: Vec<Var>,
    /// Output of the insertion block.
    pub pre_style: Var,
    /// Input of the block after the insertion point (equals `pre_style`
    /// when no style layer ran).
    pub post_style: Var,
}

impl<T: Real> Model<T> {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut head_mask = Vec::new();
        for (is_head, layer) in spec.layers() {
            let shapes = layer.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let w = Tensor::from_fn(shapes[0], |_| lit::<T>(normal.sample(&mut rng)));
            params.push(w);
            params.push(Tensor::zeros(shapes[1]));
            head_mask.extend([is_head, is_head]);
        }
        Ok(Model {
            spec,
            params,
            head_mask,
        })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "network expects {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(&shapes) {
            p.expect_shape("model parameters", *s)?;
        }
        let mut head_mask = Vec::new();
        for (is_head, layer) in spec.layers() {
            head_mask.extend(std::iter::repeat_n(is_head, layer.param_shapes().len()));
        }
        Ok(Model {
            spec,
            params,
            head_mask,
        })
    }

    /// Runs the network on `x`. With `style = None` this is the plain ERM
    /// network; otherwise the style layer transforms the insertion block's
    /// output before the remaining blocks run.
    pub fn forward(
        &self,
        graph: &mut Graph<T>,
        x: Tensor<T>,
        style: Option<&mut StyleContext<T>>,
    ) -> Result<ForwardPass> {
        let [c, h, w] = self.spec.input;
        let n = x.shape()[0];
        x.expect_shape("model input", [n, c, h, w])?;
        let params: Vec<Var> = self.params.iter().map(|p| graph.leaf(p.clone())).collect();
        let mut next_param = 0;
        let mut cur = graph.leaf(x);
        let mut pre_style = cur;
        let mut post_style = cur;
        let mut style = style;
        for (b, block) in self.spec.blocks.iter().enumerate() {
            cur = run_block(graph, cur, block, &params, &mut next_param)?;
            if b + 1 == self.spec.insertion_after_block {
                pre_style = cur;
                if let Some(ctx) = style.as_deref_mut() {
                    cur = ctx.forward(graph, cur)?;
                }
                post_style = cur;
            }
        }
        let logits = run_block(graph, cur, &self.spec.head, &params, &mut next_param)?;
        Ok(ForwardPass {
            logits,
            params,
            pre_style,
            post_style,
        })
    }

    /// Predicted class per sample.
    pub fn predict(&self, x: Tensor<T>, style: Option<&mut StyleContext<T>>) -> Result<Vec<usize>> {
        let mut graph = Graph::new();
        let fp = self.forward(&mut graph, x, style)?;
        Ok(argmax_rows(graph.value(fp.logits)))
    }
}

fn run_block<T: Real>(
    graph: &mut Graph<T>,
    mut cur: Var,
    block: &[Layer],
    params: &[Var],
    next_param: &mut usize,
) -> Result<Var> {
    for layer in block {
        let k = layer.param_shapes().len();
        cur = layer_forward(graph, cur, layer, &params[*next_param..*next_param + k])?;
        *next_param += k;
    }
    Ok(cur)
}

pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.shape()[0])
        .map(|i| {
            let row = logits.item(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub const PARAMS_FILE: &str = "params.tfc";
pub const PROTOTYPE_FILE: &str = "prototype.tfc";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Trained parameters plus everything needed to serve them.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub model: Model<T>,
    pub prototype: Option<Prototype<T>>,
    pub seed: u64,
    pub config_digest: String,
}

impl<T: Real> Checkpoint<T> {
    /// Writes `params.tfc`, `prototype.tfc` (if any) and `manifest.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_packed(&dir.join(PARAMS_FILE), &self.model.params)?;
        let mut manifest = String::new();
        manifest.push_str("format=tafcal-checkpoint\nversion=1\n");
        manifest.push_str(&format!("precision={}\n", precision_name::<T>()));
        manifest.push_str(&format!("seed={}\n", self.seed));
        manifest.push_str(&format!("config_digest={}\n", self.config_digest));
        manifest.push_str(&format!("params_file={PARAMS_FILE}\n"));
        let proto_path = dir.join(PROTOTYPE_FILE);
        if let Some(p) = &self.prototype {
            io::write(&proto_path, p.map.tensor())?;
            manifest.push_str(&format!("prototype_file={PROTOTYPE_FILE}\n"));
            manifest.push_str(&format!("prototype_epoch={}\n", p.epoch));
        } else if proto_path.exists() {
            fs::remove_file(&proto_path).map_err(|e| Error::io(&proto_path, e))?;
        }
        manifest.push_str(&format!("spec={}\n", serde_json::to_string(&self.model.spec)?));
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Loads a checkpoint. A prototype listed in the manifest but missing
    /// on disk leaves `prototype` empty, so calibrated use fails later with
    /// [`Error::Uncalibrated`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
        let spec: NetworkSpec = serde_json::from_str(manifest.get("spec")?)
            .map_err(|e| Error::Config(format!("checkpoint spec: {e}")))?;
        let params = io::read_packed(&dir.join(manifest.get("params_file")?))?;
        let model = Model::from_params(spec, params)?;
        let prototype = match manifest.find("prototype_file") {
            Some(file) => {
                let path = dir.join(file);
                if path.exists() {
                    let epoch = manifest.parse("prototype_epoch")?;
                    Some(Prototype {
                        map: crate::spectral::AmplitudeMap::new(io::read(&path)?)?,
                        epoch,
                    })
                } else {
                    log::warn!("prototype file {} is missing", path.display());
                    None
                }
            }
            None => None,
        };
        Ok(Checkpoint {
            model,
            prototype,
            seed: manifest.parse("seed")?,
            config_digest: manifest.get("config_digest")?.to_string(),
        })
    }
}

pub fn precision_name<T: Real>() -> &'static str {
    match T::PRECISION {
        crate::tensor::Precision::Single => "single",
        crate::tensor::Precision::Double => "double",
    }
}

/// `key=value` lines.
pub struct Manifest {
    path: std::path::PathBuf,
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                offset: i as u64,
                message: format!("line {} is not key=value", i + 1),
            })?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Manifest {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn find(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.find(key).ok_or_else(|| Error::Format {
            path: self.path.clone(),
            offset: 0,
            message: format!("manifest lacks key {key:?}"),
        })
    }

    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        self.get(key)?.parse().map_err(|_| Error::Format {
            path: self.path.clone(),
            offset: 0,
            message: format!("manifest key {key:?} is malformed"),
        })
    }
}
