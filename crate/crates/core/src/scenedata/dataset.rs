use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_image, write_atomic, write_image};
use super::scene::{oracle_render, AnalyticScene, Image, MIN_ORACLE_SAMPLES};
use crate::error::{Error, Result};
use crate::rendering::Camera;

/// Views of one scene plus the current train/test assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub background: [f64; 3],
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn new(cameras: Vec<Camera>, images: Vec<Image>, background: [f64; 3]) -> Result<Self> {
        if cameras.len() != images.len() || cameras.is_empty() {
            return Err(Error::Config(format!(
                "dataset needs one image per camera, got {} cameras and {} images",
                cameras.len(),
                images.len()
            )));
        }
        for (i, (c, im)) in cameras.iter().zip(&images).enumerate() {
            c.validate()?;
            if (c.width, c.height) != (im.width, im.height) || (im.width, im.height) != (images[0].width, images[0].height)
            {
                return Err(Error::Config(format!("view {i}: inconsistent resolution")));
            }
        }
        let all = (0..cameras.len()).collect();
        Ok(Self {
            cameras,
            images,
            background,
            train: all,
            test: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// Every 8th view is held out for testing; `n_train` training views are
/// taken at a constant stride of `remaining / n_train` starting from the
/// first remaining view. Views are treated as cyclic (an orbit), so the
/// first and last remaining views are not both picked.
pub fn make_fewshot_split(dataset: &Dataset, n_train: usize) -> Result<Dataset> {
    let test: Vec<usize> = (0..dataset.len()).step_by(8).collect();
    let rest: Vec<usize> = (0..dataset.len()).filter(|i| i % 8 != 0).collect();
    if n_train == 0 || n_train > rest.len() {
        return Err(Error::Config(format!(
            "cannot pick {n_train} training views from {} non-test views",
            rest.len()
        )));
    }
    let train = (0..n_train).map(|k| rest[k * rest.len() / n_train]).collect();
    Ok(Dataset {
        train,
        test,
        ..dataset.clone()
    })
}

/// Camera placement of the built-in toy scenes: `views` cameras circling the
/// unit cube's center with alternating elevation.
pub fn orbit_cameras(views: usize, size: usize) -> Result<Vec<Camera>> {
    let center = [0.5, 0.5, 0.5];
    let radius = 1.6;
    let fov = 40f64.to_radians();
    let focal = size as f64 / 2.0 / (fov / 2.0).tan();
    (0..views)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / views as f64;
            let el = (25.0 + 15.0 * (3.0 * az).sin()).to_radians();
            let eye = [
                center[0] + radius * el.cos() * az.cos(),
                center[1] + radius * el.sin(),
                center[2] + radius * el.cos() * az.sin(),
            ];
            Camera::look_at(eye, center, [0.0, 1.0, 0.0], focal, size, size, radius - 0.9, radius + 0.9)
        })
        .collect()
}

/// Renders every camera of `scene` with the reference renderer.
pub fn render_dataset(scene: &AnalyticScene, cameras: Vec<Camera>, samples_per_ray: usize) -> Result<Dataset> {
    scene.validate()?;
    let images = cameras
        .iter()
        .map(|c| oracle_render(scene, c, samples_per_ray).map(|(im, _)| im))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(cameras, images, scene.background)
}

/// The `sphere3` toy dataset: 24 views at `size x size`.
pub fn sphere3_dataset(size: usize) -> Result<Dataset> {
    render_dataset(&AnalyticScene::sphere3(), orbit_cameras(24, size)?, MIN_ORACLE_SAMPLES)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    frames: Vec<Frame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
}

/// Loads a `transforms_*.json` manifest. Image paths are relative to the
/// manifest and may omit the `.png` extension. RGBA images are composited
/// over `background` (default white). Near and far default to 2 and 6.
pub fn load_transforms_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let (near, far) = (manifest.near.unwrap_or(2.0), manifest.far.unwrap_or(6.0));
    let background = manifest.background.unwrap_or([1.0; 3]);
    if !(manifest.camera_angle_x > 0.0 && manifest.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::format(path, format!("camera_angle_x {} out of range", manifest.camera_angle_x)));
    }
    let mut cameras = Vec::new();
    let mut images = Vec::new();
    for (i, frame) in manifest.frames.iter().enumerate() {
        let m = &frame.transform_matrix;
        if m.len() < 3 || m.iter().take(3).any(|r| r.len() != 4) {
            return Err(Error::format(path, format!("frame {i}: transform_matrix must be 4x4")));
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("frame {i}: non-finite transform_matrix entry")));
        }
        let image_path = resolve_image(dir, &frame.file_path);
        let image = read_image(&image_path, background)?;
        let focal = 0.5 * image.width as f64 / (0.5 * manifest.camera_angle_x).tan();
        let pose = std::array::from_fn(|r| std::array::from_fn(|c| m[r][c]));
        let camera = Camera {
            fx: focal,
            fy: focal,
            cx: image.width as f64 / 2.0,
            cy: image.height as f64 / 2.0,
            width: image.width,
            height: image.height,
            pose,
            near,
            far,
        };
        camera
            .validate()
            .map_err(|e| Error::format(path, format!("frame {i}: {e}")))?;
        cameras.push(camera);
        images.push(image);
    }
    Dataset::new(cameras, images, background).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes every view of `dataset` as `images/r_<i>.png` plus a
/// `transforms.json` manifest readable by [`load_transforms_dataset`].
/// All cameras must share one field of view, near and far.
pub fn write_transforms_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let first = dataset
        .cameras
        .first()
        .ok_or_else(|| Error::Config("cannot write an empty dataset".into()))?;
    let camera_angle_x = 2.0 * (0.5 * first.width as f64 / first.fx).atan();
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut frames = Vec::with_capacity(dataset.len());
    for (i, (camera, image)) in dataset.cameras.iter().zip(&dataset.images).enumerate() {
        let same_intrinsics = camera.fx == first.fx
            && camera.fy == camera.fx
            && camera.cx == camera.width as f64 / 2.0
            && camera.cy == camera.height as f64 / 2.0
            && (camera.near, camera.far) == (first.near, first.far);
        if !same_intrinsics {
            return Err(Error::Config(format!("view {i}: intrinsics differ from view 0")));
        }
        let file_path = format!("images/r_{i}.png");
        write_image(&dir.join(&file_path), image)?;
        let mut transform_matrix: Vec<Vec<f64>> = camera.pose.iter().map(|r| r.to_vec()).collect();
        transform_matrix.push(vec![0.0, 0.0, 0.0, 1.0]);
        frames.push(Frame {
            file_path,
            transform_matrix,
        });
    }
    let manifest = Manifest {
        camera_angle_x,
        frames,
        near: Some(first.near),
        far: Some(first.far),
        background: Some(dataset.background),
    };
    let path = dir.join("transforms.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn resolve_image(dir: &Path, file: &str) -> PathBuf {
    let p = dir.join(file);
    if p.extension().is_none() {
        let with_png = p.with_extension("png");
        if with_png.exists() {
            return with_png;
        }
    }
    p
}
