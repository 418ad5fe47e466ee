use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Linear ramp of the fraction of encoding features kept active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSchedule {
    /// Fraction of the run after which every feature is active.
    pub saturate_fraction: f64,
    pub total_iterations: usize,
    pub x_initial: f64,
}

impl MaskSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.saturate_fraction > 0.0 && self.saturate_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "mask saturate_fraction {} outside (0, 1]",
                self.saturate_fraction
            )));
        }
        if !(self.x_initial > 0.0 && self.x_initial <= 1.0) {
            return Err(Error::Config(format!("mask x_initial {} outside (0, 1]", self.x_initial)));
        }
        Ok(())
    }
}

pub fn mask_ratio(iter: usize, sched: &MaskSchedule) -> f64 {
    let saturation = sched.saturate_fraction * sched.total_iterations as f64;
    if iter as f64 >= saturation {
        return 1.0;
    }
    let x = sched.x_initial + (1.0 - sched.x_initial) * iter as f64 / saturation;
    x.clamp(sched.x_initial, 1.0)
}

/// Number of leading features the mask keeps for a vector of length `len`.
pub fn kept_features(len: usize, x: f64) -> usize {
    ((len as f64 * x.clamp(0.0, 1.0)).round() as usize).min(len)
}

/// Zeroes all but the first `round(l * x)` columns of a `[P, l]` node.
pub fn apply_encoding_mask(graph: &mut Graph, features: NodeId, x: f64) -> Result<NodeId> {
    let len = *graph
        .shape(features)
        .last()
        .ok_or_else(|| Error::shape("encoding_mask", &[graph.shape(features)]))?;
    let keep = kept_features(len, x);
    if keep == len {
        return Ok(features);
    }
    let mask = graph.constant(Tensor::from_fn(&[len], |i| if i < keep { 1.0 } else { 0.0 }));
    graph.mul(features, mask)
}
