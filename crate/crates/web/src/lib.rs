//! WebAssembly bindings for the static demo page in `www/`. The plain
//! functions hold the logic; the `#[wasm_bindgen]` wrappers only convert
//! errors.

use fewshot_nerf::diffcore::{Graph, Tensor};
use fewshot_nerf::encodings::{kept_features, mask_ratio, MaskSchedule};
use fewshot_nerf::rendering::{volume_render, Camera};
use fewshot_nerf::scenedata::{oracle_render, AnalyticScene};
use fewshot_nerf::Result;
use wasm_bindgen::prelude::*;

const CENTER: [f64; 3] = [0.5, 0.5, 0.5];
const RADIUS: f64 = 1.6;

/// Reference render of the three-sphere scene from an orbit camera, as
/// RGBA bytes (`size * size * 4`).
pub fn scene_rgba(azimuth_deg: f64, elevation_deg: f64, size: usize, samples: usize) -> Result<Vec<u8>> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.clamp(-89.0, 89.0).to_radians());
    let eye = [
        CENTER[0] + RADIUS * el.cos() * az.cos(),
        CENTER[1] + RADIUS * el.sin(),
        CENTER[2] + RADIUS * el.cos() * az.sin(),
    ];
    let focal = size as f64 / 2.0 / 20f64.to_radians().tan();
    let camera = Camera::look_at(eye, CENTER, [0.0, 1.0, 0.0], focal, size, size, RADIUS - 0.9, RADIUS + 0.9)?;
    let (image, _) = oracle_render(&AnalyticScene::sphere3(), &camera, samples)?;
    Ok(image
        .data
        .chunks(3)
        .flat_map(|p| {
            let [r, g, b] = [p[0], p[1], p[2]].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            [r, g, b, 255]
        })
        .collect())
}

/// Volume-renders one ray of `sigma.len()` samples spaced `delta` apart.
/// `colors` holds one RGB triple per sample. Returns
/// `[r, g, b, acc, depth, w_0.., T_0..]`.
pub fn ray(sigma: &[f64], colors: &[f64], delta: f64) -> Result<Vec<f64>> {
    let n = sigma.len();
    let mut g = Graph::new();
    let s = g.constant(Tensor::new(vec![1, n], sigma.to_vec())?);
    let c = g.constant(Tensor::new(vec![1, n, 3], colors.to_vec())?);
    let t = Tensor::new(vec![1, n], (0..n).map(|i| i as f64 * delta).collect())?;
    let d = Tensor::full(&[1, n], delta);
    let out = volume_render(&mut g, s, c, &t, &d)?;
    let mut result = g.value(out.rgb).data().to_vec();
    result.push(g.value(out.acc).data()[0]);
    result.push(g.value(out.depth).data()[0]);
    result.extend_from_slice(g.value(out.weights).data());
    result.extend_from_slice(g.value(out.transmittance).data());
    Ok(result)
}

/// Encoding mask ratio at every iteration of a run, followed by the number
/// of active hash-grid levels at each iteration.
pub fn mask_levels(iterations: usize, saturate_fraction: f64, levels: usize) -> Result<Vec<f64>> {
    let schedule = MaskSchedule {
        saturate_fraction,
        total_iterations: iterations,
        x_initial: 1.0 / levels.max(1) as f64,
    };
    schedule.validate()?;
    let ratios: Vec<f64> = (0..iterations).map(|i| mask_ratio(i, &schedule)).collect();
    let kept = ratios.iter().map(|&x| kept_features(levels, x) as f64);
    Ok(ratios.iter().copied().chain(kept).collect())
}

fn js(e: fewshot_nerf::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn render_scene(azimuth_deg: f64, elevation_deg: f64, size: usize, samples: usize) -> std::result::Result<Vec<u8>, JsError> {
    scene_rgba(azimuth_deg, elevation_deg, size, samples).map_err(js)
}

#[wasm_bindgen]
pub fn render_ray(sigma: &[f64], colors: &[f64], delta: f64) -> std::result::Result<Vec<f64>, JsError> {
    ray(sigma, colors, delta).map_err(js)
}

#[wasm_bindgen]
pub fn mask_curve(iterations: usize, saturate_fraction: f64, levels: usize) -> std::result::Result<Vec<f64>, JsError> {
    mask_levels(iterations, saturate_fraction, levels).map_err(js)
}
