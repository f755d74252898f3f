//! Dense layers and small ReLU networks with hand-written reverse mode.
//!
//! Weights are row-major with shape `(out_dim, in_dim)`. A network applies
//! ReLU between consecutive affine layers and leaves the last layer linear;
//! callers attach softmax (or anything else) on top of the returned logits.

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("matrix entry {bad} is not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// One affine layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn num_params(&self) -> usize {
        self.weight.data.len() + self.bias.len()
    }
}

/// Returns `W x + b`.
pub fn affine_forward(x: &[f64], layer: &Dense) -> Result<Vec<f64>> {
    if x.len() != layer.in_dim() {
        return Err(Error::Shape(format!(
            "input length {} does not match layer input width {}",
            x.len(),
            layer.in_dim()
        )));
    }
    Ok(affine_unchecked(x, layer))
}

fn affine_unchecked(x: &[f64], layer: &Dense) -> Vec<f64> {
    let cols = layer.in_dim();
    layer
        .weight
        .data
        .chunks_exact(cols)
        .zip(&layer.bias)
        .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
        .collect()
}

/// Feed-forward network: affine layers with ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Gradient buffers shaped like an [`Mlp`].
pub type MlpGrads = Mlp;

/// Intermediate values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input seen by each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer; the last one is the network output.
    pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("trace of a non-empty network")
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `in_dim -> hidden -> out_dim` with He-uniform hidden weights and
    /// Glorot-uniform output weights; biases start at zero.
    pub fn two_layer(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || out_dim == 0 {
            return Err(Error::Parameter("layer widths must be positive".into()));
        }
        let first = init_layer(in_dim, hidden, (6.0 / in_dim as f64).sqrt(), rng);
        let second = init_layer(
            hidden,
            out_dim,
            (6.0 / (hidden + out_dim) as f64).sqrt(),
            rng,
        );
        Self::from_layers(vec![first, second])
    }

    pub fn zeros_like(other: &Mlp) -> Self {
        Self {
            layers: other
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim() == b.in_dim() && a.out_dim() == b.out_dim())
    }

    /// Flat view over every parameter, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.data.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn fill(&mut self, v: f64) {
        self.params_mut().for_each(|p| *p = v);
    }

    pub fn scale(&mut self, factor: f64) {
        self.params_mut().for_each(|p| *p *= factor);
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        debug_assert!(self.same_shape(other));
        self.params_mut().zip(other.params()).for_each(|(a, b)| *a += b);
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(x)?.pre.pop().unwrap_or_default())
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input length {} does not match network input width {}",
                x.len(),
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine_unchecked(&current, layer);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: i,
                    detail: "non-finite pre-activation".into(),
                });
            }
            inputs.push(current);
            current = if i + 1 < self.layers.len() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            pre.push(z);
        }
        Ok(ForwardTrace { inputs, pre })
    }

    /// Accumulates d⟨upstream, output⟩/dparams into `grads` and returns the
    /// gradient with respect to the network input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient length {} does not match output width {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        if !self.same_shape(grads) {
            return Err(Error::Shape("gradient buffer shape differs from network".into()));
        }
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &trace.inputs[i];
            let g = &mut grads.layers[i];
            let cols = layer.in_dim();
            for (r, d) in delta.iter().enumerate() {
                g.bias[r] += d;
                if *d != 0.0 {
                    let row = &mut g.weight.data[r * cols..(r + 1) * cols];
                    for (w, x) in row.iter_mut().zip(input) {
                        *w += d * x;
                    }
                }
            }
            let mut next = vec![0.0; cols];
            for (r, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (n, w) in next.iter_mut().zip(layer.weight.row(r)) {
                        *n += d * w;
                    }
                }
            }
            if i > 0 {
                for (n, z) in next.iter_mut().zip(&trace.pre[i - 1]) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: i,
                    detail: "non-finite gradient".into(),
                });
            }
            delta = next;
        }
        Ok(delta)
    }

    /// One-shot forward and backward for a fixed upstream gradient.
    pub fn forward_backward(
        &self,
        x: &[f64],
        upstream: &[f64],
    ) -> Result<(Vec<f64>, MlpGrads, Vec<f64>)> {
        let trace = self.forward_traced(x)?;
        let mut grads = Mlp::zeros_like(self);
        let input_grad = self.backward(&trace, upstream, &mut grads)?;
        Ok((trace.output().to_vec(), grads, input_grad))
    }
}

fn init_layer(in_dim: usize, out_dim: usize, limit: f64, rng: &mut Rng) -> Dense {
    let dist = Uniform::new(-limit, limit).expect("positive init limit");
    let data = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
    Dense {
        weight: Matrix {
            rows: out_dim,
            cols: in_dim,
            data,
        },
        bias: vec![0.0; out_dim],
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// On-disk form of a network: `{"layers":[{rows,cols,weight,bias}], "meta":{..}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    layers: Vec<LayerRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(mlp: &Mlp, meta: serde_json::Value) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weight.rows,
                    cols: l.weight.cols,
                    weight: l.weight.data.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            meta,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let layers = self
            .layers
            .iter()
            .map(|r| Dense::new(Matrix::new(r.rows, r.cols, r.weight.clone())?, r.bias.clone()))
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
