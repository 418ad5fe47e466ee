//! Density and color MLPs.
//!
//! Every layer computes `act(W_hat x + b)`. In Lipschitz mode `W_hat` is `W`
//! with each row rescaled so that its absolute row-sum is at most
//! `softplus(k)`, where `k` is a trainable scalar per layer; the product of
//! the per-layer bounds then bounds the infinity-norm Lipschitz constant of
//! the network. The normalization is applied functionally on every forward
//! pass, so `W` itself stays unconstrained.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{softplus, Graph, NodeId, ParamId, ParamNodes, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::None => Ok(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Softplus => g.softplus(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    /// Trainable bound parameter `k`; present only in Lipschitz mode.
    pub bound: Option<ParamId>,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Inverse of softplus for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1), rearranged to stay finite for large y
    y + (-(-y).exp_m1()).ln()
}

/// Row-sum normalization `W_hat = diag(min(1, softplus(k) / rowsum)) W` on
/// the tape; `k` is a one-element node.
pub fn lipschitz_normalize(g: &mut Graph, w: NodeId, k: NodeId) -> Result<NodeId> {
    let shape = g.shape(w).to_vec();
    if shape.len() != 2 || g.value(k).len() != 1 {
        return Err(Error::shape("lipschitz_normalize", &[&shape, g.shape(k)]));
    }
    let abs = g.abs(w)?;
    let rowsum = g.sum(abs, 1)?;
    let rowsum = g.reshape(rowsum, &[shape[0], 1])?;
    let rowsum = g.max_scalar(rowsum, 1e-12)?;
    let k = g.reshape(k, &[1])?;
    let bound = g.softplus(k)?;
    let ratio = g.div(bound, rowsum)?;
    let scale = g.min_scalar(ratio, 1.0)?;
    g.mul(w, scale)
}

/// Plain-array version of [`lipschitz_normalize`].
pub fn lipschitz_normalize_tensor(w: &Tensor, k: f64) -> Tensor {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let bound = softplus(k);
    let mut out = w.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let sum: f64 = row.iter().map(|v| v.abs()).sum();
        let scale = (bound / sum.max(1e-12)).min(1.0);
        row.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Largest absolute row-sum of a matrix (its infinity norm).
pub fn max_row_sum(w: &Tensor) -> f64 {
    let cols = w.shape()[1];
    w.data()
        .chunks(cols)
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// A stack of dense layers, optionally Lipschitz-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LipschitzLayer>,
    lipschitz: bool,
}

impl Mlp {
    /// Creates parameters for layers of widths `dims[0] -> ... -> dims[n]`
    /// with Xavier-uniform weights and zero biases.
    pub fn new(
        params: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        lipschitz: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("{prefix}: invalid layer widths {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Tensor::from_fn(&[fan_out, fan_in], |_| rng.gen_range(-limit..limit));
                let bound = lipschitz.then(|| {
                    // start exactly at the unnormalized function
                    let k = softplus_inverse(max_row_sum(&w).max(1e-6));
                    params.add(format!("{prefix}.{i}.k"), Tensor::vector(vec![k]))
                });
                LipschitzLayer {
                    weight: params.add(format!("{prefix}.{i}.weight"), w),
                    bias: params.add(format!("{prefix}.{i}.bias"), Tensor::zeros(&[fan_out])),
                    bound,
                    activation: if i + 1 == n { output } else { hidden },
                    in_dim: fan_in,
                    out_dim: fan_out,
                }
            })
            .collect();
        Ok(Self { layers, lipschitz })
    }

    pub fn layers(&self) -> &[LipschitzLayer] {
        &self.layers
    }

    pub fn is_lipschitz(&self) -> bool {
        self.lipschitz
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim
    }

    fn effective_weight(&self, g: &mut Graph, p: &ParamNodes, layer: &LipschitzLayer) -> Result<NodeId> {
        let w = p.get(layer.weight);
        match layer.bound {
            Some(k) => lipschitz_normalize(g, w, p.get(k)),
            None => Ok(w),
        }
    }

    fn run(&self, g: &mut Graph, p: &ParamNodes, x: NodeId, final_activation: bool) -> Result<NodeId> {
        let width = *g.shape(x).last().unwrap_or(&0);
        if g.shape(x).len() != 2 || width != self.in_dim() {
            return Err(Error::shape("mlp", &[g.shape(x), &[self.in_dim()]]));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = self.effective_weight(g, p, layer)?;
            let wt = g.transpose(w)?;
            let z = g.matmul(h, wt)?;
            h = g.add(z, p.get(layer.bias))?;
            if final_activation || i + 1 < self.layers.len() {
                h = layer.activation.apply(g, h)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamNodes, x: NodeId) -> Result<NodeId> {
        self.run(g, p, x, true)
    }

    /// Forward pass without the output squashing.
    pub fn forward_pre_output(&self, g: &mut Graph, p: &ParamNodes, x: NodeId) -> Result<NodeId> {
        self.run(g, p, x, false)
    }

    /// Evaluates the pre-output network on plain inputs `[P, in]`.
    pub fn eval_pre_output(&self, params: &ParamStore, x: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let xn = g.constant(x);
        let y = self.forward_pre_output(&mut g, &p, xn)?;
        Ok(g.value(y).clone())
    }

    /// Product of `softplus(k_i)` over layers.
    pub fn lipschitz_bound(&self, params: &ParamStore) -> Result<f64> {
        self.layers.iter().try_fold(1.0, |acc, layer| {
            let k = layer.bound.ok_or_else(|| {
                Error::Config("network is not Lipschitz-normalized; no bound available".into())
            })?;
            Ok(acc * softplus(params.get(k).data()[0]))
        })
    }

    /// Largest amount by which any normalized row-sum exceeds its layer's
    /// bound (zero or negative when the invariant holds).
    pub fn max_bound_excess(&self, params: &ParamStore) -> Option<f64> {
        if !self.lipschitz {
            return None;
        }
        let mut worst = f64::NEG_INFINITY;
        for layer in &self.layers {
            let k = params.get(layer.bound?).data()[0];
            let normalized = lipschitz_normalize_tensor(params.get(layer.weight), k);
            worst = worst.max(max_row_sum(&normalized) - softplus(k));
        }
        Some(worst)
    }
}

/// Maps masked position features to a density and a geometric feature
/// vector for the color network.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityNet {
    mlp: Mlp,
    geo_dim: usize,
}

impl DensityNet {
    pub fn new(
        params: &mut ParamStore,
        in_dim: usize,
        hidden: &[usize],
        geo_dim: usize,
        lipschitz: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(1 + geo_dim);
        let mlp = Mlp::new(params, "density", &dims, Activation::Relu, Activation::None, lipschitz, rng)?;
        Ok(Self { mlp, geo_dim })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn geo_dim(&self) -> usize {
        self.geo_dim
    }

    /// Returns `(sigma [P], geo [P, geo_dim])` with `sigma = softplus(raw)`.
    pub fn forward_density(&self, g: &mut Graph, p: &ParamNodes, x_enc: NodeId) -> Result<(NodeId, NodeId)> {
        let out = self.mlp.forward(g, p, x_enc)?;
        let rows = g.shape(out)[0];
        let raw = g.slice(out, 1, 0, 1)?;
        let raw = g.reshape(raw, &[rows])?;
        let sigma = g.softplus(raw)?;
        let geo = if self.geo_dim > 0 {
            g.slice(out, 1, 1, 1 + self.geo_dim)?
        } else {
            g.constant(Tensor::zeros(&[rows, 0]))
        };
        Ok((sigma, geo))
    }
}

/// Maps geometric features plus encoded view direction to RGB in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ColorNet {
    mlp: Mlp,
}

impl ColorNet {
    pub fn new(
        params: &mut ParamStore,
        geo_dim: usize,
        dir_dim: usize,
        hidden: &[usize],
        lipschitz: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![geo_dim + dir_dim];
        dims.extend_from_slice(hidden);
        dims.push(3);
        let mlp = Mlp::new(params, "color", &dims, Activation::Relu, Activation::Sigmoid, lipschitz, rng)?;
        Ok(Self { mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn forward_color(&self, g: &mut Graph, p: &ParamNodes, geo: NodeId, d_enc: NodeId) -> Result<NodeId> {
        let (gs, ds) = (g.shape(geo), g.shape(d_enc));
        if gs.len() != 2 || ds.len() != 2 || gs[0] != ds[0] {
            return Err(Error::shape("forward_color", &[gs, ds]));
        }
        let input = if gs[1] == 0 { d_enc } else { g.concat(&[geo, d_enc], 1)? };
        self.mlp.forward(g, p, input)
    }
}

/// Upper bound on the infinity-norm Lipschitz constant of a normalized
/// network's pre-output map.
pub fn network_lipschitz_bound(net: &Mlp, params: &ParamStore) -> Result<f64> {
    net.lipschitz_bound(params)
}
