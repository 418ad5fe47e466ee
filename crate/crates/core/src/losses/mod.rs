//! Loss terms on rendered rays and their weighted total.
//!
//! Batch reductions are means (per ray, per pair, or per patch) so that the
//! weights stay independent of batch size; [`rgb_loss`] alone returns the
//! plain sum of squared errors.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

pub const EPS_LOG: f64 = 1e-10;

/// Which per-sample quantity is normalized into the pdf compared by the KL
/// term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlSource {
    /// Rendering weights `w_i`.
    Weights,
    /// Opacities `alpha_i`.
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_dist: f64,
    pub lambda_fg: f64,
    pub lambda_kl: f64,
    pub lambda_ds: f64,
    pub lambda_entropy: f64,
    /// Weight on the product of the networks' Lipschitz bounds.
    pub lambda_lipschitz: f64,
    /// The distortion weight is zero before this iteration.
    pub dist_warmup_iters: usize,
    /// Fraction of primary rays on which the distortion loss is evaluated.
    pub dist_ray_fraction: f64,
    pub patch_size: usize,
    pub eps_log: f64,
    /// Rays whose total opacity does not exceed this are left out of the
    /// entropy loss.
    pub entropy_threshold: f64,
    pub kl_source: KlSource,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dist: 0.0,
            lambda_fg: 0.0,
            lambda_kl: 0.0,
            lambda_ds: 0.0,
            lambda_entropy: 0.0,
            lambda_lipschitz: 0.0,
            dist_warmup_iters: 1000,
            dist_ray_fraction: 0.5,
            patch_size: 4,
            eps_log: EPS_LOG,
            entropy_threshold: 0.1,
            kl_source: KlSource::Weights,
        }
    }
}

impl LossConfig {
    /// Forward-facing real scenes.
    pub fn llff() -> Self {
        Self {
            lambda_dist: 2e-5,
            lambda_fg: 1e-4,
            lambda_kl: 1e-5,
            lambda_ds: 0.1,
            patch_size: 4,
            ..Self::default()
        }
    }

    /// Object-centric synthetic scenes.
    pub fn synthetic() -> Self {
        Self {
            lambda_dist: 2e-3,
            lambda_fg: 1e-3,
            lambda_kl: 1e-5,
            lambda_ds: 0.01,
            patch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_dist", self.lambda_dist),
            ("lambda_fg", self.lambda_fg),
            ("lambda_kl", self.lambda_kl),
            ("lambda_ds", self.lambda_ds),
            ("lambda_entropy", self.lambda_entropy),
            ("lambda_lipschitz", self.lambda_lipschitz),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        if !(self.dist_ray_fraction > 0.0 && self.dist_ray_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "dist_ray_fraction {} outside (0, 1]",
                self.dist_ray_fraction
            )));
        }
        if self.patch_size < 2 {
            return Err(Error::Config(format!("patch_size must be >= 2, got {}", self.patch_size)));
        }
        if !(self.eps_log > 0.0) || !(self.entropy_threshold >= 0.0) {
            return Err(Error::Config("eps_log must be positive and entropy_threshold nonnegative".into()));
        }
        Ok(())
    }

    /// Distortion weight in effect at `iter`.
    pub fn lambda_dist_at(&self, iter: usize) -> f64 {
        if iter < self.dist_warmup_iters {
            0.0
        } else {
            self.lambda_dist
        }
    }
}

fn check_same_shape(g: &Graph, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, &[g.shape(a), g.shape(b)]));
    }
    Ok(())
}

fn check_rank2(g: &Graph, op: &'static str, a: NodeId) -> Result<(usize, usize)> {
    match *g.shape(a) {
        [b, n] => Ok((b, n)),
        _ => Err(Error::shape(op, &[g.shape(a)])),
    }
}

/// Sum over rays of the squared color error.
pub fn rgb_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    check_same_shape(g, "rgb_loss", pred, target)?;
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff)?;
    g.sum_all(sq)
}

/// Mean squared error per color channel, for logging.
pub fn rgb_mse(pred: &Tensor, target: &Tensor) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Normalizes each row of `w` (`[B, N]`) into a pdf. The returned flags mark
/// rays whose mass is below `eps`; those rows are near zero and must not be
/// used as distributions.
pub fn ray_pdf(g: &mut Graph, w: NodeId, eps: f64) -> Result<(NodeId, Vec<bool>)> {
    let (b, _) = check_rank2(g, "ray_pdf", w)?;
    let total = g.sum(w, 1)?;
    let degenerate = g.value(total).data().iter().map(|&s| s < eps).collect();
    let denom = g.max_scalar(total, eps)?;
    let denom = g.reshape(denom, &[b, 1])?;
    Ok((g.div(w, denom)?, degenerate))
}

/// Mean over rows of `sum_i p_i ln((p_i + eps) / (q_i + eps))`.
pub fn kl_divergence_loss(g: &mut Graph, p: NodeId, q: NodeId, eps: f64) -> Result<NodeId> {
    check_same_shape(g, "kl_divergence_loss", p, q)?;
    let (rows, _) = check_rank2(g, "kl_divergence_loss", p)?;
    if rows == 0 {
        return Ok(g.scalar(0.0));
    }
    let pe = g.add_scalar(p, eps)?;
    let qe = g.add_scalar(q, eps)?;
    let lp = g.log(pe)?;
    let lq = g.log(qe)?;
    let ratio = g.sub(lp, lq)?;
    let terms = g.mul(p, ratio)?;
    let per_row = g.sum(terms, 1)?;
    g.mean(per_row, 0)
}

/// KL between each primary ray and its paired neighbour, computed on the
/// normalized rows of `values` (`[R, N]`, weights or opacities). Pairs in
/// which either ray is degenerate are skipped. Returns the loss and the
/// number of pairs used.
pub fn neighbor_kl_loss(
    g: &mut Graph,
    values: NodeId,
    pairs: &[(usize, usize)],
    eps: f64,
) -> Result<(NodeId, usize)> {
    let (pdf, degenerate) = ray_pdf(g, values, eps)?;
    let (a, b): (Vec<usize>, Vec<usize>) = pairs
        .iter()
        .copied()
        .filter(|&(i, j)| !degenerate[i] && !degenerate[j])
        .unzip();
    if a.is_empty() {
        return Ok((g.scalar(0.0), 0));
    }
    let used = a.len();
    let p = g.index_select(pdf, a)?;
    let q = g.index_select(pdf, b)?;
    Ok((kl_divergence_loss(g, p, q, eps)?, used))
}

/// Bin edges `[t_1, ..., t_N, t_f]` for sample distances `t` (`[B, N]`) and
/// the far bound of each ray.
pub fn bin_edges(t: &Tensor, far: &[f64]) -> Result<Tensor> {
    let (b, n) = match *t.shape() {
        [b, n] => (b, n),
        _ => return Err(Error::shape("bin_edges", &[t.shape()])),
    };
    if far.len() != b {
        return Err(Error::shape("bin_edges", &[t.shape(), &[far.len()]]));
    }
    Ok(Tensor::from_fn(&[b, n + 1], |k| {
        let (r, i) = (k / (n + 1), k % (n + 1));
        if i < n {
            t.data()[r * n + i]
        } else {
            far[r]
        }
    }))
}

/// Mean over rays of
/// `(sum_ij w_i w_j |m_i - m_j| + sum_i w_i^2 (e_{i+1} - e_i) / 3) / max(depth, eps)`
/// with bin midpoints `m_i`. `w` is `[B, N]`, `edges` is `[B, N + 1]`,
/// `depth` is `[B]`.
pub fn distortion_loss(g: &mut Graph, w: NodeId, edges: &Tensor, depth: NodeId, eps: f64) -> Result<NodeId> {
    let (b, n) = check_rank2(g, "distortion_loss", w)?;
    if edges.shape() != [b, n + 1] || g.shape(depth) != [b] {
        return Err(Error::shape("distortion_loss", &[g.shape(w), edges.shape(), g.shape(depth)]));
    }
    if b == 0 {
        return Ok(g.scalar(0.0));
    }
    let e = edges.data();
    for r in 0..b {
        let row = &e[r * (n + 1)..(r + 1) * (n + 1)];
        if row.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::Domain {
                op: "distortion_loss",
                msg: format!("bin edges of ray {r} are not strictly increasing"),
            });
        }
    }
    let mid = |r: usize, i: usize| 0.5 * (e[r * (n + 1) + i] + e[r * (n + 1) + i + 1]);
    let gaps = g.constant(Tensor::from_fn(&[b, n, n], |k| {
        let (r, i, j) = (k / (n * n), (k / n) % n, k % n);
        (mid(r, i) - mid(r, j)).abs()
    }));
    let widths = g.constant(Tensor::from_fn(&[b, n], |k| {
        let (r, i) = (k / n, k % n);
        e[r * (n + 1) + i + 1] - e[r * (n + 1) + i]
    }));

    let wi = g.reshape(w, &[b, n, 1])?;
    let wj = g.reshape(w, &[b, 1, n])?;
    let outer = g.mul(wi, wj)?;
    let weighted = g.mul(outer, gaps)?;
    let pair_rows = g.sum(weighted, 2)?;
    let pairwise = g.sum(pair_rows, 1)?;
    let w2 = g.square(w)?;
    let own = g.mul(w2, widths)?;
    let own = g.sum(own, 1)?;
    let own = g.scale(own, 1.0 / 3.0)?;
    let per_ray = g.add(pairwise, own)?;
    let denom = g.max_scalar(depth, eps)?;
    let per_ray = g.div(per_ray, denom)?;
    g.mean(per_ray, 0)
}

/// Mean over rays of `(1 - sum_i w_i)^2`.
pub fn foreground_loss(g: &mut Graph, w: NodeId) -> Result<NodeId> {
    let (b, _) = check_rank2(g, "foreground_loss", w)?;
    if b == 0 {
        return Ok(g.scalar(0.0));
    }
    let acc = g.sum(w, 1)?;
    let neg = g.neg(acc)?;
    let gap = g.add_scalar(neg, 1.0)?;
    let sq = g.square(gap)?;
    g.mean(sq, 0)
}

/// Mean over patches of the squared differences between each depth and its
/// lower and right neighbours, taken over the leading `(S-1) x (S-1)`
/// block. `patches` is `[P, S, S]`.
pub fn depth_smoothness_loss(g: &mut Graph, patches: NodeId) -> Result<NodeId> {
    let (p, s) = match *g.shape(patches) {
        [p, s, s2] if s == s2 && s >= 2 => (p, s),
        _ => return Err(Error::shape("depth_smoothness_loss", &[g.shape(patches)])),
    };
    if p == 0 {
        return Ok(g.scalar(0.0));
    }
    let head_rows = g.slice(patches, 1, 0, s - 1)?;
    let base = g.slice(head_rows, 2, 0, s - 1)?;
    let below_rows = g.slice(patches, 1, 1, s)?;
    let below = g.slice(below_rows, 2, 0, s - 1)?;
    let right = g.slice(head_rows, 2, 1, s)?;
    let dv = g.sub(base, below)?;
    let dh = g.sub(base, right)?;
    let dv2 = g.square(dv)?;
    let dh2 = g.square(dh)?;
    let both = g.add(dv2, dh2)?;
    let total = g.sum_all(both)?;
    g.scale(total, 1.0 / p as f64)
}

/// Gathers per-ray depths (`[R]`) into `[P, S, S]` patches.
pub fn gather_patches(g: &mut Graph, depth: NodeId, patches: &[Vec<usize>], size: usize) -> Result<NodeId> {
    if let Some(bad) = patches.iter().find(|p| p.len() != size * size) {
        return Err(Error::Domain {
            op: "depth_smoothness_loss",
            msg: format!("incomplete patch with {} of {} rays", bad.len(), size * size),
        });
    }
    let indices: Vec<usize> = patches.concat();
    let gathered = g.index_select(depth, indices)?;
    g.reshape(gathered, &[patches.len(), size, size])
}

/// Mean over all rays of the masked Shannon entropy of the normalized
/// opacities (`[B, N]`). Rays with total opacity at or below `threshold`
/// contribute zero.
pub fn entropy_loss(g: &mut Graph, alpha: NodeId, threshold: f64, eps: f64) -> Result<NodeId> {
    let (b, _) = check_rank2(g, "entropy_loss", alpha)?;
    if b == 0 {
        return Ok(g.scalar(0.0));
    }
    let (q, _) = ray_pdf(g, alpha, eps)?;
    let totals = g.sum(alpha, 1)?;
    let mask = g.value(totals).map(|v| if v > threshold { 1.0 } else { 0.0 });
    let qe = g.add_scalar(q, eps)?;
    let lq = g.log(qe)?;
    let plogp = g.mul(q, lq)?;
    let neg_h = g.sum(plogp, 1)?;
    let h = g.neg(neg_h)?;
    let mask = g.constant(mask);
    let masked = g.mul(h, mask)?;
    g.mean(masked, 0)
}

/// Loss nodes for one step; absent terms count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub rgb: Option<NodeId>,
    pub dist: Option<NodeId>,
    pub fg: Option<NodeId>,
    pub kl: Option<NodeId>,
    pub ds: Option<NodeId>,
    pub entropy: Option<NodeId>,
    pub lipschitz: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dist: f64,
    pub fg: f64,
    pub kl: f64,
    pub ds: f64,
    pub entropy: f64,
    pub lipschitz: f64,
}

/// Term values, the weights applied, and the total for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rgb: f64,
    pub dist: f64,
    pub fg: f64,
    pub kl: f64,
    pub ds: f64,
    pub entropy: f64,
    pub lipschitz: f64,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossReport {
    /// `rgb + sum_k lambda_k term_k`, recomputed from the stored parts.
    pub fn weighted_sum(&self) -> f64 {
        let w = &self.weights;
        self.rgb
            + w.dist * self.dist
            + w.fg * self.fg
            + w.kl * self.kl
            + w.ds * self.ds
            + w.entropy * self.entropy
            + w.lipschitz * self.lipschitz
    }
}

/// Weighted total `L_rgb + sum_k lambda_k L_k` with the distortion warmup.
pub fn total_loss(g: &mut Graph, parts: &LossParts, cfg: &LossConfig, iter: usize) -> Result<(NodeId, LossReport)> {
    let weights = LossWeights {
        dist: cfg.lambda_dist_at(iter),
        fg: cfg.lambda_fg,
        kl: cfg.lambda_kl,
        ds: cfg.lambda_ds,
        entropy: cfg.lambda_entropy,
        lipschitz: cfg.lambda_lipschitz,
    };
    let mut report = LossReport {
        weights,
        ..LossReport::default()
    };
    let terms = [
        (parts.rgb, 1.0, &mut report.rgb),
        (parts.dist, weights.dist, &mut report.dist),
        (parts.fg, weights.fg, &mut report.fg),
        (parts.kl, weights.kl, &mut report.kl),
        (parts.ds, weights.ds, &mut report.ds),
        (parts.entropy, weights.entropy, &mut report.entropy),
        (parts.lipschitz, weights.lipschitz, &mut report.lipschitz),
    ];
    let mut total: Option<NodeId> = None;
    for (node, lambda, slot) in terms {
        let Some(node) = node else { continue };
        let value = g
            .value(node)
            .item()
            .ok_or_else(|| Error::NonScalarLoss(g.shape(node).to_vec()))?;
        *slot = value;
        if lambda == 0.0 {
            continue;
        }
        let scaled = if lambda == 1.0 { node } else { g.scale(node, lambda)? };
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.scalar(0.0),
    };
    report.total = g.value(total).item().expect("scalar");
    Ok((total, report))
}
