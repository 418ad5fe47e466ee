use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rendering::Camera;

/// Density used for effectively opaque primitives.
pub const OPAQUE_DENSITY: f64 = 200.0;

/// Minimum number of quadrature bins accepted by [`oracle_render`].
pub const MIN_ORACLE_SAMPLES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box.
    Box { center: [f64; 3], half_size: [f64; 3] },
}

impl Shape {
    /// Parameter interval `(t0, t1)` where the ray is inside the shape.
    pub fn chord(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, f64)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
                let a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
                let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius;
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / a, (-b + s) / a))
            }
            Shape::Box { center, half_size } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    let (min, max) = (center[k] - half_size[k], center[k] + half_size[k]);
                    if d[k] == 0.0 {
                        if o[k] < min || o[k] > max {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min - o[k]) / d[k], (max - o[k]) / d[k]);
                    lo = lo.max(a.min(b));
                    hi = hi.min(a.max(b));
                }
                (lo < hi).then_some((lo, hi))
            }
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Shape::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            Shape::Box { center, half_size } => (
                std::array::from_fn(|k| center[k] - half_size[k]),
                std::array::from_fn(|k| center[k] + half_size[k]),
            ),
        }
    }
}

/// A primitive of constant density and color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub density: f64,
    pub albedo: [f64; 3],
}

/// Scene made of constant-density primitives inside the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.density >= 0.0) || p.albedo.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Config(format!("primitive {i}: density must be >= 0 and albedo in [0, 1]")));
            }
            let (lo, hi) = p.shape.bounds();
            if lo.iter().any(|&v| v < 0.0) || hi.iter().any(|&v| v > 1.0) {
                return Err(Error::Config(format!("primitive {i} leaves the unit cube")));
            }
        }
        Ok(())
    }

    /// Three opaque spheres of different colors over a black background.
    pub fn sphere3() -> Self {
        let sphere = |center, radius, albedo| Primitive {
            shape: Shape::Sphere { center, radius },
            density: OPAQUE_DENSITY,
            albedo,
        };
        Self {
            primitives: vec![
                sphere([0.5, 0.42, 0.45], 0.2, [0.9, 0.25, 0.2]),
                sphere([0.28, 0.62, 0.62], 0.13, [0.2, 0.8, 0.3]),
                sphere([0.72, 0.64, 0.6], 0.15, [0.25, 0.35, 0.9]),
            ],
            background: [0.0; 3],
        }
    }
}

/// Rendered color, expected depth, and accumulated opacity of one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRay {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub acc: f64,
}

/// Renders one ray over `[near, far]` with `bins` uniform bins.
///
/// Each bin is further split at primitive boundaries, so every piece has
/// constant density and color and its transmittance is integrated exactly.
/// Depth places each piece's absorbed mass at the piece midpoint; the
/// unabsorbed remainder terminates at `far` over the background.
pub fn oracle_ray(scene: &AnalyticScene, o: [f64; 3], d: [f64; 3], near: f64, far: f64, bins: usize) -> OracleRay {
    let chords: Vec<(f64, f64, &Primitive)> = scene
        .primitives
        .iter()
        .filter_map(|p| {
            let (a, b) = p.shape.chord(o, d)?;
            let (a, b) = (a.max(near), b.min(far));
            (a < b && p.density > 0.0).then_some((a, b, p))
        })
        .collect();

    let mut cuts: Vec<f64> = (0..=bins).map(|i| near + (far - near) * i as f64 / bins as f64).collect();
    for &(a, b, _) in &chords {
        cuts.push(a);
        cuts.push(b);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let (mut rgb, mut depth, mut trans) = ([0.0; 3], 0.0, 1.0);
    if !chords.is_empty() {
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let (mut sigma, mut color) = (0.0, [0.0; 3]);
            for &(ca, cb, p) in &chords {
                if ca <= mid && mid < cb {
                    sigma += p.density;
                    for (c, a) in color.iter_mut().zip(p.albedo) {
                        *c += p.density * a;
                    }
                }
            }
            if sigma == 0.0 {
                continue;
            }
            let absorbed = -(-sigma * (b - a)).exp_m1();
            let weight = trans * absorbed;
            for (c, v) in rgb.iter_mut().zip(color) {
                *c += weight * v / sigma;
            }
            depth += weight * mid;
            trans *= 1.0 - absorbed;
        }
    }
    let acc = 1.0 - trans;
    for (c, bg) in rgb.iter_mut().zip(scene.background) {
        *c += trans * bg;
    }
    OracleRay {
        rgb,
        depth: depth + trans * far,
        acc,
    }
}

/// Row-major `[H, W, 3]` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape("image", &[&[height, width, 3], &[data.len()]]));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: (0..width * height).flat_map(|_| rgb).collect(),
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Renders a full view of an analytic scene; returns the image and the
/// per-pixel expected depth.
pub fn oracle_render(scene: &AnalyticScene, camera: &Camera, samples_per_ray: usize) -> Result<(Image, Vec<f64>)> {
    if samples_per_ray < MIN_ORACLE_SAMPLES {
        return Err(Error::Config(format!(
            "oracle renders need at least {MIN_ORACLE_SAMPLES} samples per ray, got {samples_per_ray}"
        )));
    }
    camera.validate()?;
    let o = camera.origin();
    let mut data = Vec::with_capacity(camera.width * camera.height * 3);
    let mut depth = Vec::with_capacity(camera.width * camera.height);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let d = camera.pixel_direction(row, col);
            let r = oracle_ray(scene, o, d, camera.near, camera.far, samples_per_ray);
            data.extend(r.rgb);
            depth.push(r.depth);
        }
    }
    Ok((Image::new(camera.width, camera.height, data)?, depth))
}
