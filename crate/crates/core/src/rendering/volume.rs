use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

pub const DEPTH_EPS: f64 = 1e-10;

/// Nodes produced by [`volume_render`]; per-sample quantities are `[B, N]`.
#[derive(Debug, Clone)]
pub struct RenderOutputs {
    pub rgb: NodeId,
    pub depth: NodeId,
    pub acc: NodeId,
    pub weights: NodeId,
    pub transmittance: NodeId,
    pub alpha: NodeId,
    pub sigma: NodeId,
    pub color: NodeId,
    pub t: Tensor,
    pub delta: Tensor,
}

/// Differentiable quadrature
/// `alpha_i = 1 - exp(-sigma_i delta_i)`, `T_i = exp(-sum_{j<i} sigma_j delta_j)`,
/// `w_i = T_i alpha_i`, `C = sum w_i c_i`, `depth = sum w_i t_i / max(sum w_i, eps)`.
///
/// `sigma` is `[B, N]`, `color` is `[B, N, 3]`, `t` and `delta` are `[B, N]`.
pub fn volume_render(g: &mut Graph, sigma: NodeId, color: NodeId, t: &Tensor, delta: &Tensor) -> Result<RenderOutputs> {
    let ss = g.shape(sigma).to_vec();
    let cs = g.shape(color).to_vec();
    if ss.len() != 2 || cs != [ss[0], ss[1], 3] || t.shape() != ss || delta.shape() != ss {
        return Err(Error::shape("volume_render", &[&ss, &cs, t.shape(), delta.shape()]));
    }
    if g.value(sigma).data().iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::Domain {
            op: "volume_render",
            msg: "densities must be nonnegative".into(),
        });
    }
    if delta.data().iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Domain {
            op: "volume_render",
            msg: "sample widths must be positive".into(),
        });
    }
    let (b, n) = (ss[0], ss[1]);
    let delta_n = g.constant(delta.clone());
    let t_n = g.constant(t.clone());

    let optical = g.mul(sigma, delta_n)?;
    let neg = g.neg(optical)?;
    let step = g.exp(neg)?;
    let one_minus = g.neg(step)?;
    let alpha = g.add_scalar(one_minus, 1.0)?;
    let before = g.cumsum(optical, 1, true)?;
    let neg_before = g.neg(before)?;
    let transmittance = g.exp(neg_before)?;
    let weights = g.mul(transmittance, alpha)?;

    let w3 = g.reshape(weights, &[b, n, 1])?;
    let weighted = g.mul(w3, color)?;
    let rgb = g.sum(weighted, 1)?;
    let acc = g.sum(weights, 1)?;
    let wt = g.mul(weights, t_n)?;
    let wt_sum = g.sum(wt, 1)?;
    let denom = g.max_scalar(acc, DEPTH_EPS)?;
    let depth = g.div(wt_sum, denom)?;

    Ok(RenderOutputs {
        rgb,
        depth,
        acc,
        weights,
        transmittance,
        alpha,
        sigma,
        color,
        t: t.clone(),
        delta: delta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(sigma: Vec<f64>, color: Vec<f64>, t: Vec<f64>, delta: Vec<f64>) -> (Graph, RenderOutputs) {
        let n = sigma.len();
        let mut g = Graph::new();
        let s = g.variable(Tensor::new(vec![1, n], sigma).unwrap());
        let c = g.variable(Tensor::new(vec![1, n, 3], color).unwrap());
        let out = volume_render(
            &mut g,
            s,
            c,
            &Tensor::new(vec![1, n], t).unwrap(),
            &Tensor::new(vec![1, n], delta).unwrap(),
        )
        .unwrap();
        (g, out)
    }

    #[test]
    fn empty_space_renders_nothing() {
        let (g, out) = render(vec![0.0; 3], vec![0.7; 9], vec![0.5, 1.5, 2.5], vec![1.0; 3]);
        assert_eq!(g.value(out.rgb).data(), &[0.0; 3]);
        assert_eq!(g.value(out.acc).data(), &[0.0]);
        assert_eq!(g.value(out.weights).data(), &[0.0; 3]);
        assert_eq!(g.value(out.transmittance).data(), &[1.0; 3]);
        assert_eq!(g.value(out.depth).data(), &[0.0]);
    }

    #[test]
    fn opaque_single_sample() {
        let (g, out) = render(vec![100.0], vec![0.2, 0.4, 0.6], vec![1.0], vec![0.5]);
        let w = g.value(out.weights).data()[0];
        assert!((w - 1.0).abs() < 1e-15);
        let rgb = g.value(out.rgb).data();
        assert!((rgb[0] - 0.2).abs() < 1e-15 && (rgb[2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_density_and_zero_width() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(vec![1, 2], vec![-1.0, 1.0]).unwrap());
        let c = g.constant(Tensor::zeros(&[1, 2, 3]));
        let t = Tensor::new(vec![1, 2], vec![0.25, 0.75]).unwrap();
        let d = Tensor::new(vec![1, 2], vec![0.5, 0.25]).unwrap();
        assert!(volume_render(&mut g, s, c, &t, &d).is_err());
        let s = g.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let d0 = Tensor::new(vec![1, 2], vec![0.5, 0.0]).unwrap();
        assert!(volume_render(&mut g, s, c, &t, &d0).is_err());
    }
}
