use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::model::Model;
use crate::encodings::mask_ratio;
use crate::error::{Error, Result};
use crate::rendering::Camera;
use crate::scenedata::{
    average_metric, load_transforms_dataset, make_fewshot_split, psnr, sphere3_dataset, ssim, write_depth,
    write_image, Dataset, Image,
};

/// Stated at the top of every report.
pub const REPORT_HEADER: &str = "LPIPS is not computed (it needs a pretrained perceptual network); \
     average_metric is the geometric mean of MSE = 10^(-PSNR/10) and sqrt(1 - SSIM) only";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Per-view metrics plus their arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub header: String,
    pub iteration: usize,
    pub views: Vec<ViewMetrics>,
    pub mean: Metrics,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mask fractions `(position, direction)` in effect at `iter`.
pub fn mask_at(cfg: &TrainConfig, iter: usize) -> (f64, f64) {
    let x = mask_ratio(iter, &cfg.mask_schedule());
    (
        if cfg.toggles.mask_position { x } else { 1.0 },
        if cfg.toggles.mask_direction { x } else { 1.0 },
    )
}

/// Builds the configured dataset and applies the few-shot split.
pub fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let full = match &cfg.data.manifest {
        Some(path) => load_transforms_dataset(path)?,
        None if cfg.data.scene == "sphere3" => sphere3_dataset(cfg.data.image_size)?,
        None => return Err(Error::Config(format!("unknown scene `{}`", cfg.data.scene))),
    };
    make_fewshot_split(&full, cfg.data.views)
}

pub(crate) fn evaluate_model(
    model: &Model,
    cfg: &TrainConfig,
    mask_x: (f64, f64),
    data: &Dataset,
    views: &[usize],
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(views.len());
    for &view in views {
        let (img, _) = model.render_image(&data.cameras[view], cfg.samples_per_ray, mask_x, data.background)?;
        let reference = &data.images[view];
        let (p, s) = (psnr(&img, reference)?, ssim(&img, reference)?);
        rows.push(ViewMetrics {
            view,
            metrics: Metrics {
                psnr: p,
                ssim: s,
                average: average_metric(p, s),
            },
        });
    }
    let n = rows.len().max(1) as f64;
    let mean = Metrics {
        psnr: rows.iter().map(|r| r.metrics.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.metrics.ssim).sum::<f64>() / n,
        average: rows.iter().map(|r| r.metrics.average).sum::<f64>() / n,
    };
    Ok(EvalReport {
        header: REPORT_HEADER.into(),
        iteration: 0,
        views: rows,
        mean,
    })
}

/// Renders every test view of `data` with bin-center sampling and scores
/// it against the reference images.
pub fn evaluate(ckpt: &Checkpoint, data: &Dataset) -> Result<EvalReport> {
    for &v in &data.test {
        let cam = &data.cameras[v];
        if (cam.width, cam.height) != ckpt.resolution {
            return Err(Error::Config(format!(
                "test view {v} is {}x{} but the checkpoint was trained at {}x{}",
                cam.width, cam.height, ckpt.resolution.0, ckpt.resolution.1
            )));
        }
    }
    let model = Model::with_params(&ckpt.config, ckpt.params.clone())?;
    let mut report = evaluate_model(
        &model,
        &ckpt.config,
        mask_at(&ckpt.config, ckpt.iteration),
        data,
        &data.test,
    )?;
    report.iteration = ckpt.iteration;
    Ok(report)
}

/// Renders `camera` and writes the image and its depth map.
pub fn render_novel(
    ckpt: &Checkpoint,
    camera: &Camera,
    background: [f64; 3],
    image_path: &Path,
    depth_path: Option<&Path>,
) -> Result<(Image, Vec<f64>)> {
    let model = Model::with_params(&ckpt.config, ckpt.params.clone())?;
    let (img, depth) = model.render_image(
        camera,
        ckpt.config.samples_per_ray,
        mask_at(&ckpt.config, ckpt.iteration),
        background,
    )?;
    write_image(image_path, &img)?;
    if let Some(path) = depth_path {
        let depth32: Vec<f32> = depth.iter().map(|&d| d as f32).collect();
        write_depth(path, img.width, img.height, &depth32)?;
    }
    Ok((img, depth))
}
