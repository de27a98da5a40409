use serde::{Deserialize, Serialize};

use super::kernels::ConvGeom;
use super::{Graph, Real, Shape, Var};
use crate::error::{Error, Result};

/// One layer of a network, with the shapes of any parameters it owns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    AvgPool2,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::AvgPool2 => "avg_pool2",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }

    /// Weight shape first, then bias.
    pub fn param_shapes(&self) -> Vec<Shape> {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                [out_channels, in_channels, kernel, kernel],
                [1, out_channels, 1, 1],
            ],
            Layer::Dense {
                in_features,
                out_features,
            } => vec![[out_features, in_features, 1, 1], [1, out_features, 1, 1]],
            _ => vec![],
        }
    }

    /// Fan-in of the weight, used for initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            Layer::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }

    fn mismatch(&self, expected: Shape, got: Shape) -> Error {
        Error::shape(format!("layer {}", self.name()), expected, got)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let [n, c, h, w] = input;
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if stride == 0 || kernel == 0 {
                    return Err(Error::InvalidArgument(
                        "conv2d kernel and stride must be positive".into(),
                    ));
                }
                if c != in_channels || h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(self.mismatch([n, in_channels, h.max(kernel), w.max(kernel)], input));
                }
                let g = self.geom(input);
                Ok([n, out_channels, g.out_h(), g.out_w()])
            }
            Layer::Relu => Ok(input),
            Layer::AvgPool2 => {
                if h < 2 || w < 2 {
                    return Err(self.mismatch([n, c, h.max(2), w.max(2)], input));
                }
                Ok([n, c, h / 2, w / 2])
            }
            Layer::Flatten => Ok([n, c * h * w, 1, 1]),
            Layer::Dense {
                in_features,
                out_features,
            } => {
                if c != in_features || h != 1 || w != 1 {
                    return Err(self.mismatch([n, in_features, 1, 1], input));
                }
                Ok([n, out_features, 1, 1])
            }
        }
    }

    fn geom(&self, input: Shape) -> ConvGeom {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => ConvGeom {
                in_ch: in_channels,
                out_ch: out_channels,
                h: input[2],
                w: input[3],
                kernel,
                stride,
                pad: padding,
            },
            _ => unreachable!("geom of non-conv layer"),
        }
    }
}

/// Applies `layer` to `input`, recording the operation on `graph`.
///
/// `params` holds the layer's weight and bias nodes (empty for
/// parameter-free layers).
pub fn layer_forward<T: Real>(
    graph: &mut Graph<T>,
    input: Var,
    layer: &Layer,
    params: &[Var],
) -> Result<Var> {
    let in_shape = graph.value(input).shape();
    let out_shape = layer.output_shape(in_shape)?;
    let expected = layer.param_shapes();
    if params.len() != expected.len() {
        return Err(Error::InvalidArgument(format!(
            "layer {} takes {} parameters, got {}",
            layer.name(),
            expected.len(),
            params.len()
        )));
    }
    for (p, want) in params.iter().zip(&expected) {
        let got = graph.value(*p).shape();
        if got != *want {
            return Err(layer.mismatch(*want, got));
        }
    }
    match layer {
        Layer::Conv2d { .. } => graph.conv2d(input, params[0], params[1], layer.geom(in_shape)),
        Layer::Relu => graph.relu(input),
        Layer::AvgPool2 => graph.avg_pool2(input),
        Layer::Flatten => graph.reshape(input, out_shape),
        Layer::Dense { .. } => graph.dense(input, params[0], params[1]),
    }
}
