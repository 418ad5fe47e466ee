use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances `t` and widths `delta` of `n` samples on `[t_n, t_f]`.
///
/// The interval is split into `n` equal bins; deterministic mode takes bin
/// centers, stratified mode draws one uniform sample per bin. The last
/// width runs to the far bound.
pub fn sample_along_ray(
    t_n: f64,
    t_f: f64,
    n: usize,
    stratified: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(t_n < t_f) || n < 2 {
        return Err(Error::Domain {
            op: "sample_along_ray",
            msg: format!("need t_n < t_f and n >= 2, got [{t_n}, {t_f}] with n = {n}"),
        });
    }
    let bin = (t_f - t_n) / n as f64;
    let t: Vec<f64> = (0..n)
        .map(|i| {
            let u = if stratified { rng.gen::<f64>() } else { 0.5 };
            // stay strictly inside the bin so every width is positive
            (t_n + (i as f64 + u) * bin).clamp(t_n + i as f64 * bin, t_n + (i + 1) as f64 * bin)
        })
        .collect();
    let mut delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    delta.push(t_f - t[n - 1]);
    if delta.iter().any(|&d| d <= 0.0) {
        // a stratified draw landed exactly on a bin boundary
        for (i, d) in delta.iter_mut().enumerate() {
            if *d <= 0.0 {
                *d = f64::EPSILON * t[i].abs().max(1.0);
            }
        }
    }
    Ok((t, delta))
}

/// Space annealing: early in training, samples are confined to a shrunken
/// interval around `midpoint` that grows linearly to the full range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    /// Iterations until the full range is used.
    pub iterations: usize,
    /// Starting fraction of the range.
    pub start_fraction: f64,
    /// Center of the shrunken range; defaults to the middle of `[t_n, t_f]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub midpoint: Option<f64>,
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.start_fraction > 0.0 && self.start_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "anneal needs iterations >= 1 and start_fraction in (0, 1], got {} and {}",
                self.iterations, self.start_fraction
            )));
        }
        Ok(())
    }
}

pub fn anneal_range(iter: usize, cfg: &AnnealConfig, t_n: f64, t_f: f64) -> (f64, f64) {
    let eta = (iter as f64 / cfg.iterations as f64).max(cfg.start_fraction).min(1.0);
    if eta == 1.0 {
        return (t_n, t_f);
    }
    let t_m = cfg.midpoint.unwrap_or(0.5 * (t_n + t_f));
    (t_m + (t_n - t_m) * eta, t_m + (t_f - t_m) * eta)
}
