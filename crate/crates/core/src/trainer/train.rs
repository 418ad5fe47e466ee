use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::evaluate_model;
use super::model::{Model, RaySamples};
use crate::diffcore::{adam_step, softplus, AdamState, Graph, NodeId, ParamNodes};
use crate::encodings::mask_ratio;
use crate::error::{Error, Result};
use crate::losses::{
    bin_edges, depth_smoothness_loss, distortion_loss, entropy_loss, foreground_loss, gather_patches,
    neighbor_kl_loss, rgb_loss, rgb_mse, total_loss, KlSource, LossParts, LossReport,
};
use crate::rendering::{
    adjacent_ray_pairs, anneal_range, generate_patch_rays, generate_rays, random_patch_anchor, RayBatch,
};
use crate::scenedata::Dataset;

/// Patches whose mean accumulation is below this are treated as background
/// and left out of the depth smoothness term.
const DS_MIN_ACC: f64 = 1e-3;

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub report: LossReport,
    /// Terms that were enabled, in log order.
    pub terms: Vec<&'static str>,
    pub mask_position: f64,
    pub mask_direction: f64,
    pub near: f64,
    pub far: f64,
    /// Largest normalized row-sum minus its bound over all Lipschitz layers.
    pub lipschitz_excess: Option<f64>,
    pub batch_psnr: f64,
    pub test_psnr: Option<f64>,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        let r = &self.report;
        let mut s = format!("iter={} total={} rgb={}", self.iter, r.total, r.rgb);
        for &term in &self.terms {
            let (value, weight) = match term {
                "dist" => (r.dist, r.weights.dist),
                "fg" => (r.fg, r.weights.fg),
                "kl" => (r.kl, r.weights.kl),
                "ds" => (r.ds, r.weights.ds),
                "entropy" => (r.entropy, r.weights.entropy),
                "lipschitz" => (r.lipschitz, r.weights.lipschitz),
                _ => unreachable!("unknown term"),
            };
            let _ = write!(s, " {term}={value} lambda_{term}={weight}");
        }
        let _ = write!(
            s,
            " mask_pos={} mask_dir={} near={} far={} batch_psnr={}",
            self.mask_position, self.mask_direction, self.near, self.far, self.batch_psnr
        );
        if let Some(e) = self.lipschitz_excess {
            let _ = write!(s, " lip_excess={e}");
        }
        if let Some(p) = self.test_psnr {
            let _ = write!(s, " test_psnr={p}");
        }
        s
    }
}

/// Outcome of a training run. When a step produced a non-finite loss,
/// `aborted` names it and `checkpoint` holds the last finite state.
#[derive(Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
    pub aborted: Option<Error>,
}

impl TrainRun {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| r.to_line() + "\n").collect()
    }
}

/// Hash-table learning rate at `iter`, decaying exponentially from
/// `lr_table` to `lr_table_final`.
pub fn table_learning_rate(cfg: &TrainConfig, iter: usize) -> f64 {
    let frac = if cfg.iterations == 0 {
        0.0
    } else {
        iter as f64 / cfg.iterations as f64
    };
    cfg.optim.lr_table * (cfg.optim.lr_table_final / cfg.optim.lr_table).powf(frac)
}

fn sample_batch(cfg: &TrainConfig, data: &Dataset, rng: &mut ChaCha8Rng) -> Result<RayBatch> {
    let n_patches = cfg.patches_per_iter();
    let s = cfg.loss.patch_size;
    let singles = cfg.rays_per_iter - n_patches * s * s;
    let mut batch = RayBatch::default();
    for _ in 0..singles {
        let view = data.train[rng.gen_range(0..data.train.len())];
        let cam = &data.cameras[view];
        let px = [rng.gen_range(0..cam.height), rng.gen_range(0..cam.width)];
        batch.extend(generate_rays(cam, view, &[px])?)?;
    }
    for _ in 0..n_patches {
        let view = data.train[rng.gen_range(0..data.train.len())];
        let cam = &data.cameras[view];
        let anchor = random_patch_anchor(cam, s, rng)?;
        batch.extend(generate_patch_rays(cam, view, &[anchor], s)?)?;
    }
    Ok(batch)
}

fn lipschitz_product(g: &mut Graph, model: &Model, p: &ParamNodes) -> Result<Option<NodeId>> {
    let mut product: Option<NodeId> = None;
    for net in model.lipschitz_nets() {
        for layer in net.layers() {
            let k = layer.bound.expect("Lipschitz layer has a bound");
            let b = g.softplus(p.get(k))?;
            product = Some(match product {
                Some(acc) => g.mul(acc, b)?,
                None => b,
            });
        }
    }
    match product {
        Some(node) => Ok(Some(g.sum_all(node)?)),
        None => Ok(None),
    }
}

fn lipschitz_excess(model: &Model) -> Option<f64> {
    model
        .lipschitz_nets()
        .iter()
        .filter_map(|net| net.max_bound_excess(&model.params))
        .reduce(f64::max)
}

/// Product of every layer bound across the Lipschitz networks.
pub fn lipschitz_bound_product(model: &Model) -> f64 {
    model
        .lipschitz_nets()
        .iter()
        .flat_map(|net| net.layers())
        .map(|l| softplus(model.params.get(l.bound.expect("bound")).data()[0]))
        .product()
}

struct Step {
    report: LossReport,
    terms: Vec<&'static str>,
    batch_psnr: f64,
    near: f64,
    far: f64,
    grads: Vec<Option<crate::diffcore::Tensor>>,
}

fn run_step(
    cfg: &TrainConfig,
    data: &Dataset,
    model: &Model,
    iter: usize,
    mask_x: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Step> {
    let t = &cfg.toggles;
    let lc = &cfg.loss;
    let batch = sample_batch(cfg, data, rng)?;
    let primary = batch.len();
    let (rays, neighbor) = if t.kl {
        let pairs = adjacent_ray_pairs(&batch, &data.cameras, rng)?;
        (pairs.rays, pairs.neighbor)
    } else {
        (batch, Vec::new())
    };

    let mut near_far = Vec::with_capacity(rays.len());
    let (mut near, mut far) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &rays.views {
        let cam = &data.cameras[v];
        let bounds = if t.anneal {
            anneal_range(iter, &cfg.anneal, cam.near, cam.far)
        } else {
            (cam.near, cam.far)
        };
        near = near.min(bounds.0);
        far = far.max(bounds.1);
        near_far.push(bounds);
    }
    let samples = RaySamples::draw(&near_far, cfg.samples_per_ray, true, rng)?;

    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let out = model.forward(&mut g, &p, &rays, &samples, mask_x, data.background)?;
    let first: Vec<usize> = (0..primary).collect();
    let restrict = |g: &mut Graph, node: NodeId| -> Result<NodeId> {
        if rays.len() == primary {
            Ok(node)
        } else {
            g.index_select(node, first.clone())
        }
    };

    let target: Vec<f64> = (0..primary)
        .flat_map(|i| {
            let [r, c] = rays.pixels[i];
            data.images[rays.views[i]].pixel(r, c)
        })
        .collect();
    let target = g.constant(crate::diffcore::Tensor::new(vec![primary, 3], target)?);
    let pred = restrict(&mut g, out.rgb)?;
    let rgb_sum = rgb_loss(&mut g, pred, target)?;
    let rgb = g.scale(rgb_sum, 1.0 / primary as f64)?;
    let batch_psnr = {
        let mse = rgb_mse(g.value(pred), g.value(target));
        if mse < 1e-10 {
            99.0
        } else {
            -10.0 * mse.log10()
        }
    };

    let mut parts = LossParts {
        rgb: Some(rgb),
        ..LossParts::default()
    };
    let mut terms = Vec::new();
    let weights = restrict(&mut g, out.render.weights)?;

    if t.dist {
        let k = ((lc.dist_ray_fraction * primary as f64).ceil() as usize).clamp(1, primary);
        let mut idx = sample_indices(rng, primary, k).into_vec();
        idx.sort_unstable();
        let w = g.index_select(out.render.weights, idx.clone())?;
        let d = g.index_select(out.render.depth, idx.clone())?;
        let t_sel = crate::diffcore::Tensor::from_fn(&[k, cfg.samples_per_ray], |j| {
            let (row, col) = (j / cfg.samples_per_ray, j % cfg.samples_per_ray);
            samples.t.data()[idx[row] * cfg.samples_per_ray + col]
        });
        let far_sel: Vec<f64> = idx.iter().map(|&i| samples.far[i]).collect();
        let edges = bin_edges(&t_sel, &far_sel)?;
        parts.dist = Some(distortion_loss(&mut g, w, &edges, d, lc.eps_log)?);
        terms.push("dist");
    }
    if t.fg {
        parts.fg = Some(foreground_loss(&mut g, weights)?);
        terms.push("fg");
    }
    if t.kl {
        let source = match lc.kl_source {
            KlSource::Weights => out.render.weights,
            KlSource::Alpha => out.render.alpha,
        };
        let pairs: Vec<(usize, usize)> = (0..primary).map(|i| (i, neighbor[i])).collect();
        parts.kl = Some(neighbor_kl_loss(&mut g, source, &pairs, lc.eps_log)?.0);
        terms.push("kl");
    }
    if t.ds {
        let acc = g.value(out.render.acc).data().to_vec();
        let patches: Vec<Vec<usize>> = rays
            .patches()
            .into_iter()
            .filter(|p| p.iter().map(|&i| acc[i]).sum::<f64>() / p.len() as f64 >= DS_MIN_ACC)
            .collect();
        let stacked = gather_patches(&mut g, out.render.depth, &patches, lc.patch_size)?;
        parts.ds = Some(depth_smoothness_loss(&mut g, stacked)?);
        terms.push("ds");
    }
    if t.entropy {
        let alpha = restrict(&mut g, out.render.alpha)?;
        parts.entropy = Some(entropy_loss(&mut g, alpha, lc.entropy_threshold, lc.eps_log)?);
        terms.push("entropy");
    }
    if lc.lambda_lipschitz > 0.0 {
        if let Some(node) = lipschitz_product(&mut g, model, &p)? {
            parts.lipschitz = Some(node);
            terms.push("lipschitz");
        }
    }

    let (total, report) = total_loss(&mut g, &parts, lc, iter)?;
    let named = [
        ("rgb", report.rgb),
        ("dist", report.dist),
        ("fg", report.fg),
        ("kl", report.kl),
        ("ds", report.ds),
        ("entropy", report.entropy),
        ("lipschitz", report.lipschitz),
        ("total", report.total),
    ];
    if let Some((name, v)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss term `{name}` = {v} at iteration {iter}")));
    }
    let mut grads = g.backward(total)?;
    let grads = p.collect(&mut grads);
    Ok(Step {
        report,
        terms,
        batch_psnr,
        near,
        far,
        grads,
    })
}

/// Trains on the dataset's training views.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainRun> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("dataset has no training views".into()));
    }
    let cam0 = &data.cameras[data.train[0]];
    let resolution = (cam0.width, cam0.height);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(cfg, &mut init_rng)?;
    let mut adam = AdamState::new(&model.params, cfg.optim.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let schedule = cfg.mask_schedule();
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut aborted = None;
    let mut iteration = 0;

    for iter in 0..cfg.iterations {
        let x = mask_ratio(iter, &schedule);
        let mask_x = (
            if cfg.toggles.mask_position { x } else { 1.0 },
            if cfg.toggles.mask_direction { x } else { 1.0 },
        );
        let step = match run_step(cfg, data, &model, iter, mask_x, &mut rng) {
            Ok(s) => s,
            Err(e @ Error::NonFinite(_)) => {
                aborted = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        let table_lr = table_learning_rate(cfg, iter);
        let lrs: Vec<f64> = model
            .params
            .ids()
            .map(|id| if model.is_table(id) { table_lr } else { cfg.optim.lr_net })
            .collect();
        adam_step(&mut model.params, &step.grads, &lrs, &mut adam);
        iteration = iter + 1;

        let test_psnr = if cfg.eval_interval > 0 && iteration % cfg.eval_interval == 0 && !data.test.is_empty() {
            Some(evaluate_model(&model, cfg, mask_x, data, &data.test)?.mean.psnr)
        } else {
            None
        };
        let record = LogRecord {
            iter,
            report: step.report,
            terms: step.terms,
            mask_position: mask_x.0,
            mask_direction: mask_x.1,
            near: step.near,
            far: step.far,
            lipschitz_excess: lipschitz_excess(&model),
            batch_psnr: step.batch_psnr,
            test_psnr,
        };
        if test_psnr.is_some() || iter % 100 == 0 {
            log::info!("{}", record.to_line());
        }
        log.push(record);
    }

    Ok(TrainRun {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            iteration,
            resolution,
            params: model.params,
            adam,
        },
        log,
        aborted,
    })
}
