//! Central-difference verification of reverse-mode gradients.
//!
//! [`finite_diff_check`] compares the tape gradient of a scalar function
//! against `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate.
//! [`op_cases`] wraps every graph op in such a function so that the whole op
//! set can be checked in one sweep.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::ops::{CustomOp, Op};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-6;

/// `|a - b| / max(1e-12, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    /// Coordinates where a probe evaluation failed or was not finite.
    pub failed_probes: Vec<usize>,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.failed_probes.is_empty() && self.max_rel_error < tol
    }
}

fn eval_scalar<F>(f: &F, x: Tensor) -> Option<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let xn = g.constant(x);
    let out = f(&mut g, xn).ok()?;
    g.value(out).item().filter(|v| v.is_finite())
}

/// Checks the gradient of `f` at `x0`.
///
/// `f` builds a scalar from its input node. The tape gradient is taken with
/// `x0` as a variable; each finite-difference probe rebuilds the graph with
/// the perturbed input as a constant.
pub fn finite_diff_check<F>(f: F, x0: &Tensor, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let x = g.variable(x0.clone());
    let out = f(&mut g, x)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x0.shape()));

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_coordinate: None,
        failed_probes: Vec::new(),
    };
    for i in 0..x0.len() {
        let mut plus = x0.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x0.clone();
        minus.data_mut()[i] -= eps;
        let (Some(fp), Some(fm)) = (eval_scalar(&f, plus), eval_scalar(&f, minus)) else {
            report.failed_probes.push(i);
            report.max_rel_error = f64::INFINITY;
            report.worst_coordinate = Some(i);
            continue;
        };
        let numeric = (fp - fm) / (2.0 * eps);
        let err = relative_error(analytic.data()[i], numeric);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst_coordinate = Some(i);
        }
    }
    Ok(report)
}

/// Scalar function of one input node.
pub type BuildFn = Arc<dyn Fn(&mut Graph, NodeId) -> Result<NodeId> + Send + Sync>;

/// Builds a random input for one trial and the scalar function under test.
pub struct OpCase {
    pub name: &'static str,
    pub input: fn(&mut ChaCha8Rng) -> Tensor,
    pub build: BuildFn,
}

impl std::fmt::Debug for OpCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpCase").field("name", &self.name).finish()
    }
}

impl OpCase {
    /// Worst relative error over `trials` random inputs.
    pub fn run(&self, rng: &mut ChaCha8Rng, trials: usize, eps: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let x = (self.input)(rng);
            let check = finite_diff_check(|g, n| (self.build)(g, n), &x, eps)?;
            worst = if check.failed_probes.is_empty() {
                worst.max(check.max_rel_error)
            } else {
                f64::INFINITY
            };
        }
        Ok(worst)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform in `[lo, hi]` with a random sign, keeping inputs away from the
/// kinks of relu/abs/min/max.
fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Fixed pseudo-random weights so every op output contributes to the scalar
/// with an O(1) coefficient.
fn weights(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| 0.5 + ((i * 7919) % 13) as f64 / 13.0)
}

fn contract(g: &mut Graph, y: NodeId) -> Result<NodeId> {
    let w = g.constant(weights(g.shape(y)));
    let wy = g.mul(w, y)?;
    g.sum_all(wy)
}

fn case(
    name: &'static str,
    input: fn(&mut ChaCha8Rng) -> Tensor,
    op: impl Fn(&mut Graph, NodeId) -> Result<NodeId> + Send + Sync + 'static,
) -> OpCase {
    OpCase {
        name,
        input,
        build: Arc::new(move |g, x| {
            let y = op(g, x)?;
            contract(g, y)
        }),
    }
}

fn dense_3x4(rng: &mut ChaCha8Rng) -> Tensor {
    uniform(rng, &[3, 4], -1.5, 1.5)
}

fn positive_3x4(rng: &mut ChaCha8Rng) -> Tensor {
    uniform(rng, &[3, 4], 0.3, 2.0)
}

fn kinked_3x4(rng: &mut ChaCha8Rng) -> Tensor {
    signed_away_from_zero(rng, &[3, 4], 0.05, 1.5)
}

/// A second operand for binary ops, derived from the input so that both
/// operands vary with it.
fn partner(g: &mut Graph, x: NodeId, shape: &[usize]) -> Result<NodeId> {
    let n: usize = shape.iter().product();
    let src = g.reshape(x, &[12])?;
    let picked = g.index_select(src, (0..n).map(|i| (i * 5 + 3) % 12).collect())?;
    let picked = g.reshape(picked, shape)?;
    let sq = g.square(picked)?;
    g.add_scalar(sq, 0.5)
}

/// One case per registered op.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case("add", dense_3x4, |g, x| {
            let b = partner(g, x, &[4])?;
            g.add(x, b)
        }),
        case("sub", dense_3x4, |g, x| {
            let b = partner(g, x, &[3, 1])?;
            g.sub(x, b)
        }),
        case("mul", dense_3x4, |g, x| {
            let b = partner(g, x, &[3, 4])?;
            g.mul(x, b)
        }),
        case("div", dense_3x4, |g, x| {
            let b = partner(g, x, &[4])?;
            g.div(x, b)
        }),
        case("matmul", dense_3x4, |g, x| {
            let b = partner(g, x, &[4, 2])?;
            g.matmul(x, b)
        }),
        case("transpose", dense_3x4, |g, x| g.transpose(x)),
        case("exp", dense_3x4, |g, x| g.exp(x)),
        case("log", positive_3x4, |g, x| g.log(x)),
        case("softplus", dense_3x4, |g, x| g.softplus(x)),
        case("sigmoid", dense_3x4, |g, x| g.sigmoid(x)),
        case("relu", kinked_3x4, |g, x| g.relu(x)),
        case("min_scalar", kinked_3x4, |g, x| g.min_scalar(x, 0.0)),
        case("max_scalar", kinked_3x4, |g, x| g.max_scalar(x, 0.0)),
        case("square", dense_3x4, |g, x| g.square(x)),
        case("abs", kinked_3x4, |g, x| g.abs(x)),
        case("neg", dense_3x4, |g, x| g.neg(x)),
        case("scale", dense_3x4, |g, x| g.scale(x, -2.5)),
        case("add_scalar", dense_3x4, |g, x| g.add_scalar(x, 0.75)),
        case("sum", dense_3x4, |g, x| g.sum(x, 1)),
        case("mean", dense_3x4, |g, x| g.mean(x, 0)),
        case("sum_all", dense_3x4, |g, x| g.sum_all(x)),
        case("cumsum", dense_3x4, |g, x| g.cumsum(x, 1, false)),
        case("cumsum_exclusive", dense_3x4, |g, x| g.cumsum(x, 1, true)),
        case("concat", dense_3x4, |g, x| {
            let b = partner(g, x, &[3, 2])?;
            g.concat(&[x, b], 1)
        }),
        case("slice", dense_3x4, |g, x| g.slice(x, 1, 1, 3)),
        case("select", dense_3x4, |g, x| {
            let b = partner(g, x, &[3, 4])?;
            g.select((0..12).map(|i| i % 3 != 0).collect(), x, b)
        }),
        case("index_select", dense_3x4, |g, x| g.index_select(x, vec![2, 0, 2])),
        case("reshape", dense_3x4, |g, x| g.reshape(x, &[2, 6])),
    ]
}

/// Squares its input but reports a gradient of `x` instead of `2x`; used as
/// a negative control for the checker itself.
#[derive(Debug)]
pub struct FaultySquare;

impl CustomOp for FaultySquare {
    fn name(&self) -> &'static str {
        "faulty_square"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(|v| v * v))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(inputs[0].zip_map(grad, |x, g| x * g))]
    }
}

pub fn faulty_case() -> OpCase {
    case("faulty_square", dense_3x4, |g, x| g.apply(Op::Custom(Arc::new(FaultySquare)), &[x]))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn square_passes_tightly() {
        let check = finite_diff_check(
            |g, x| {
                let y = g.mul(x, x)?;
                g.sum_all(y)
            },
            &Tensor::vector(vec![1.5]),
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-9, "{check:?}");
    }

    #[test]
    fn softplus_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = uniform(&mut rng, &[4, 4], -1.0, 1.0);
        let x0 = uniform(&mut rng, &[4, 4], -1.0, 1.0);
        let check = finite_diff_check(
            move |g, x| {
                let wn = g.constant(w.clone());
                let h = g.matmul(x, wn)?;
                let h = g.softplus(h)?;
                let h = g.matmul(h, wn)?;
                let h = g.softplus(h)?;
                contract(g, h)
            },
            &x0,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-6, "{check:?}");
    }

    #[test]
    fn wrong_backward_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = faulty_case().run(&mut rng, 3, DEFAULT_EPS).unwrap();
        assert!(err > 1e-3, "{err}");
    }

    #[test]
    fn every_op_passes_ten_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for c in op_cases() {
            let err = c.run(&mut rng, 10, DEFAULT_EPS).unwrap();
            assert!(err < 1e-6, "{}: {err}", c.name);
        }
    }

    #[test]
    fn failing_probe_is_reported() {
        // log(x) near zero: the minus probe leaves the domain.
        let check = finite_diff_check(
            |g, x| {
                let y = g.log(x)?;
                g.sum_all(y)
            },
            &Tensor::vector(vec![1.0, 5e-7]),
            DEFAULT_EPS,
        )
        .unwrap();
        assert_eq!(check.failed_probes, vec![1]);
        assert!(!check.passed(1e-5));
    }
}
