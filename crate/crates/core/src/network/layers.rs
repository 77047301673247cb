//! Layer vocabulary and the architecture-string grammar.
//!
//! ```text
//! arch   := input ( "-" layer )*
//! input  := INT                      flat input of INT channels
//!         | INT "x" INT "x" INT      channels x height x width
//! layer  := INT "C" INT              conv: out_channels C kernel (stride 1, no padding)
//!         | "P" INT                  average pool over INT x INT windows
//!         | INT                      dense layer with INT neurons
//! ```
//!
//! `784-400-10` is a two-layer dense network on flattened images and
//! `1x28x28-15C5-P2-40C5-P2-300-10` the convolutional MNIST network.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Self {
        Self {
            channels: n,
            height: 1,
            width: 1,
        }
    }

    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.height == 1 && self.width == 1 {
            write!(f, "{}", self.channels)
        } else {
            write!(f, "{}x{}x{}", self.channels, self.height, self.width)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Normal with std `sqrt(2 / fan_in)`.
    KaimingNormal,
    /// Uniform on `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
    KaimingUniform,
    /// Uniform on `[-1 / sqrt(fan_in), 1 / sqrt(fan_in)]`, the usual default for linear layers.
    UniformFanIn,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        n_in: usize,
        n_out: usize,
    },
    Conv2d {
        input: Shape,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool2d {
        input: Shape,
        window: usize,
    },
}

impl LayerSpec {
    pub fn dense(n_in: usize, n_out: usize) -> Result<Self> {
        let spec = LayerSpec::Dense { n_in, n_out };
        spec.validate()?;
        Ok(spec)
    }

    pub fn conv2d(input: Shape, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let spec = LayerSpec::Conv2d {
            input,
            out_channels,
            kernel,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn avg_pool2d(input: Shape, window: usize) -> Result<Self> {
        let spec = LayerSpec::AvgPool2d { input, window };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(SnnError::ShapeMismatch(reason));
        match *self {
            LayerSpec::Dense { n_in, n_out } => {
                if n_in == 0 || n_out == 0 {
                    return bad(format!("dense layer needs positive sizes, got {n_in}->{n_out}"));
                }
            }
            LayerSpec::Conv2d {
                input,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.size() == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("conv layer needs positive channels, kernel and stride".into());
                }
                if input.height + 2 * padding < kernel || input.width + 2 * padding < kernel {
                    return bad(format!("kernel {kernel} does not fit input {input} with padding {padding}"));
                }
            }
            LayerSpec::AvgPool2d { input, window } => {
                if window == 0 || input.size() == 0 {
                    return bad("pool layer needs positive window and input".into());
                }
                if input.height % window != 0 || input.width % window != 0 {
                    return bad(format!("pool window {window} does not divide input {input}"));
                }
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> Shape {
        match *self {
            LayerSpec::Dense { n_in, .. } => Shape::flat(n_in),
            LayerSpec::Conv2d { input, .. } | LayerSpec::AvgPool2d { input, .. } => input,
        }
    }

    pub fn output_shape(&self) -> Shape {
        match *self {
            LayerSpec::Dense { n_out, .. } => Shape::flat(n_out),
            LayerSpec::Conv2d {
                input,
                out_channels,
                kernel,
                stride,
                padding,
            } => Shape::new(
                out_channels,
                (input.height + 2 * padding - kernel) / stride + 1,
                (input.width + 2 * padding - kernel) / stride + 1,
            ),
            LayerSpec::AvgPool2d { input, window } => {
                Shape::new(input.channels, input.height / window, input.width / window)
            }
        }
    }

    /// `(rows, cols)` of the weight matrix; pooling has none.
    pub fn weight_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { n_in, n_out } => (n_out, n_in),
            LayerSpec::Conv2d {
                input,
                out_channels,
                kernel,
                ..
            } => (out_channels, input.channels * kernel * kernel),
            LayerSpec::AvgPool2d { .. } => (0, 0),
        }
    }

    pub fn init_scheme(&self) -> WeightInit {
        match self {
            LayerSpec::Dense { .. } => WeightInit::KaimingNormal,
            LayerSpec::Conv2d { .. } => WeightInit::KaimingUniform,
            LayerSpec::AvgPool2d { .. } => WeightInit::None,
        }
    }

    /// Whether the layer holds spiking neurons.
    pub fn is_spiking(&self) -> bool {
        !matches!(self, LayerSpec::AvgPool2d { .. })
    }
}

/// Parses an architecture string into layer specs.
pub fn parse_architecture(spec: &str) -> Result<Vec<LayerSpec>> {
    let err = |reason: String| SnnError::InvalidArchitecture {
        spec: spec.to_string(),
        reason,
    };
    let mut tokens = spec.split('-').map(str::trim);
    let head = tokens.next().filter(|t| !t.is_empty()).ok_or_else(|| err("empty".into()))?;
    let mut shape = parse_input(head).ok_or_else(|| err(format!("bad input token `{head}`")))?;
    let mut layers = Vec::new();
    for token in tokens {
        let layer = if let Some(rest) = token.strip_prefix(['P', 'p']) {
            let window = parse_positive(rest).ok_or_else(|| err(format!("bad pool token `{token}`")))?;
            LayerSpec::avg_pool2d(shape, window).map_err(|e| err(e.to_string()))?
        } else if let Some((ch, k)) = token.split_once(['C', 'c']) {
            let out = parse_positive(ch).ok_or_else(|| err(format!("bad conv token `{token}`")))?;
            let kernel = parse_positive(k).ok_or_else(|| err(format!("bad conv token `{token}`")))?;
            LayerSpec::conv2d(shape, out, kernel, 1, 0).map_err(|e| err(e.to_string()))?
        } else {
            let n = parse_positive(token).ok_or_else(|| err(format!("bad layer token `{token}`")))?;
            LayerSpec::dense(shape.size(), n).map_err(|e| err(e.to_string()))?
        };
        shape = layer.output_shape();
        layers.push(layer);
    }
    if layers.is_empty() {
        return Err(err("no layers after the input".into()));
    }
    Ok(layers)
}

fn parse_positive(s: &str) -> Option<usize> {
    s.parse::<usize>().ok().filter(|&n| n > 0)
}

fn parse_input(token: &str) -> Option<Shape> {
    let dims: Vec<usize> = token.split(['x', 'X']).map(parse_positive).collect::<Option<_>>()?;
    match dims[..] {
        [n] => Some(Shape::flat(n)),
        [c, h, w] => Some(Shape::new(c, h, w)),
        _ => None,
    }
}

/// Renders layer specs back into the architecture grammar.
pub fn format_architecture(layers: &[LayerSpec]) -> String {
    let Some(first) = layers.first() else {
        return String::new();
    };
    let mut parts = vec![first.input_shape().to_string()];
    for layer in layers {
        parts.push(match *layer {
            LayerSpec::Dense { n_out, .. } => n_out.to_string(),
            LayerSpec::Conv2d {
                out_channels, kernel, ..
            } => format!("{out_channels}C{kernel}"),
            LayerSpec::AvgPool2d { window, .. } => format!("P{window}"),
        });
    }
    parts.join("-")
}

#[inline]
fn conv_in_index(input: Shape, ci: usize, y: usize, x: usize) -> usize {
    (ci * input.height + y) * input.width + x
}

/// Per-step cross-correlation. `x` and the result are neuron-major `[neuron][t]`.
pub(crate) fn conv2d_currents(spec: &LayerSpec, weights: &[f64], x: &[f64], n_steps: usize) -> Vec<f64> {
    let LayerSpec::Conv2d {
        input,
        out_channels,
        kernel,
        stride,
        padding,
    } = *spec
    else {
        unreachable!("conv2d_currents on a non-conv layer");
    };
    let out = spec.output_shape();
    let per_out = input.channels * kernel * kernel;
    let mut c = vec![0.0; out.size() * n_steps];
    for o in 0..out_channels {
        let w_o = &weights[o * per_out..(o + 1) * per_out];
        for oy in 0..out.height {
            for ox in 0..out.width {
                let dst = ((o * out.height + oy) * out.width + ox) * n_steps;
                let acc = &mut c[dst..dst + n_steps];
                for ci in 0..input.channels {
                    for ky in 0..kernel {
                        let Some(iy) = (oy * stride + ky).checked_sub(padding).filter(|&v| v < input.height) else {
                            continue;
                        };
                        for kx in 0..kernel {
                            let Some(ix) = (ox * stride + kx).checked_sub(padding).filter(|&v| v < input.width)
                            else {
                                continue;
                            };
                            let w = w_o[(ci * kernel + ky) * kernel + kx];
                            if w == 0.0 {
                                continue;
                            }
                            let src = conv_in_index(input, ci, iy, ix) * n_steps;
                            for (a, &v) in acc.iter_mut().zip(&x[src..src + n_steps]) {
                                *a += w * v;
                            }
                        }
                    }
                }
            }
        }
    }
    c
}

/// Accumulates the conv weight gradient and, when requested, the upstream error.
pub(crate) fn conv2d_backward(
    spec: &LayerSpec,
    weights: &[f64],
    x: &[f64],
    delta: &[f64],
    n_steps: usize,
    mut weight_grad: Option<&mut [f64]>,
    mut upstream: Option<&mut [f64]>,
) {
    let LayerSpec::Conv2d {
        input,
        out_channels,
        kernel,
        stride,
        padding,
    } = *spec
    else {
        unreachable!("conv2d_backward on a non-conv layer");
    };
    let out = spec.output_shape();
    let per_out = input.channels * kernel * kernel;
    for o in 0..out_channels {
        for oy in 0..out.height {
            for ox in 0..out.width {
                let d_idx = ((o * out.height + oy) * out.width + ox) * n_steps;
                let d = &delta[d_idx..d_idx + n_steps];
                if d.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for ci in 0..input.channels {
                    for ky in 0..kernel {
                        let Some(iy) = (oy * stride + ky).checked_sub(padding).filter(|&v| v < input.height) else {
                            continue;
                        };
                        for kx in 0..kernel {
                            let Some(ix) = (ox * stride + kx).checked_sub(padding).filter(|&v| v < input.width)
                            else {
                                continue;
                            };
                            let w_idx = o * per_out + (ci * kernel + ky) * kernel + kx;
                            let src = conv_in_index(input, ci, iy, ix) * n_steps;
                            let xs = &x[src..src + n_steps];
                            if let Some(wg) = weight_grad.as_deref_mut() {
                                wg[w_idx] += xs.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(up) = upstream.as_deref_mut() {
                                let w = weights[w_idx];
                                for (u, &dv) in up[src..src + n_steps].iter_mut().zip(d) {
                                    *u += w * dv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-step spatial mean over non-overlapping windows.
pub(crate) fn avgpool2d_forward(input: Shape, window: usize, x: &[f64], n_steps: usize) -> Vec<f64> {
    let oh = input.height / window;
    let ow = input.width / window;
    let scale = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; input.channels * oh * ow * n_steps];
    for ch in 0..input.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = ((ch * oh + oy) * ow + ox) * n_steps;
                for dy in 0..window {
                    for dx in 0..window {
                        let src = conv_in_index(input, ch, oy * window + dy, ox * window + dx) * n_steps;
                        for t in 0..n_steps {
                            out[dst + t] += x[src + t] * scale;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Spreads each pooled error uniformly over its window.
pub(crate) fn avgpool2d_backward(input: Shape, window: usize, g_out: &[f64], n_steps: usize) -> Vec<f64> {
    let oh = input.height / window;
    let ow = input.width / window;
    let scale = 1.0 / (window * window) as f64;
    let mut g = vec![0.0; input.size() * n_steps];
    for ch in 0..input.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((ch * oh + oy) * ow + ox) * n_steps;
                for dy in 0..window {
                    for dx in 0..window {
                        let dst = conv_in_index(input, ch, oy * window + dy, ox * window + dx) * n_steps;
                        for t in 0..n_steps {
                            g[dst + t] = g_out[src + t] * scale;
                        }
                    }
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dense() {
        let layers = parse_architecture("784-400-10").unwrap();
        assert_eq!(layers, vec![LayerSpec::dense(784, 400).unwrap(), LayerSpec::dense(400, 10).unwrap()]);
        assert_eq!(format_architecture(&layers), "784-400-10");
    }

    #[test]
    fn parses_conv_network() {
        let layers = parse_architecture("1x28x28-15C5-P2-40C5-P2-300-10").unwrap();
        let shapes: Vec<Shape> = layers.iter().map(LayerSpec::output_shape).collect();
        assert_eq!(
            shapes,
            vec![
                Shape::new(15, 24, 24),
                Shape::new(15, 12, 12),
                Shape::new(40, 8, 8),
                Shape::new(40, 4, 4),
                Shape::flat(300),
                Shape::flat(10),
            ]
        );
        assert_eq!(layers[4].weight_shape(), (300, 640));
        assert_eq!(format_architecture(&layers), "1x28x28-15C5-P2-40C5-P2-300-10");
    }

    #[test]
    fn rejects_bad_strings() {
        for bad in ["", "784", "784-0", "1x28x28-15C29", "1x28x28-P3", "abc-10", "1x2-10", "784-P2"] {
            assert!(parse_architecture(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn pool_mean() {
        let input = Shape::new(1, 2, 2);
        let out = avgpool2d_forward(input, 2, &[0.0, 0.0, 0.0, 4.0], 1);
        assert_eq!(out, vec![1.0]);
        let constant = avgpool2d_forward(Shape::new(1, 4, 4), 2, &[0.3; 16], 1);
        assert!(constant.iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert!(avgpool2d_forward(input, 2, &[0.0; 4], 1).iter().all(|&v| v == 0.0));
        let g = avgpool2d_backward(input, 2, &[4.0], 1);
        assert_eq!(g, vec![1.0; 4]);
    }

    #[test]
    fn dirac_kernel_is_identity() {
        let input = Shape::new(1, 4, 4);
        let spec = LayerSpec::conv2d(input, 1, 3, 1, 1).unwrap();
        assert_eq!(spec.output_shape(), input);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let x: Vec<f64> = (0..32).map(|v| v as f64 * 0.1).collect();
        let c = conv2d_currents(&spec, &w, &x, 2);
        assert_eq!(c, x);
    }
}
