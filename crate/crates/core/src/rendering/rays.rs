use rand::Rng;

use super::camera::Camera;
use crate::error::{Error, Result};

/// A batch of rays. Single rays come first; patch rays follow as complete
/// `patch_size x patch_size` blocks in row-major order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    /// `(row, col)` of the source pixel.
    pub pixels: Vec<[usize; 2]>,
    /// Index of the source view for each ray.
    pub views: Vec<usize>,
    /// Patch id for rays belonging to a patch.
    pub patch: Vec<Option<usize>>,
    pub patch_size: usize,
    patch_count: usize,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn patch_count(&self) -> usize {
        self.patch_count
    }

    /// Ray indices of each patch, row-major within the patch.
    pub fn patches(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::with_capacity(self.patch_size * self.patch_size); self.patch_count];
        for (i, p) in self.patch.iter().enumerate() {
            if let Some(p) = p {
                out[*p].push(i);
            }
        }
        out
    }

    fn push(&mut self, camera: &Camera, view: usize, row: usize, col: usize, patch: Option<usize>) {
        self.origins.push(camera.origin());
        self.directions.push(camera.pixel_direction(row, col));
        self.pixels.push([row, col]);
        self.views.push(view);
        self.patch.push(patch);
    }

    /// Appends `other`, renumbering its patches.
    pub fn extend(&mut self, other: RayBatch) -> Result<()> {
        if other.patch_count > 0 && self.patch_count > 0 && other.patch_size != self.patch_size {
            return Err(Error::Config("cannot merge batches with different patch sizes".into()));
        }
        let offset = self.patch_count;
        if other.patch_count > 0 {
            self.patch_size = other.patch_size;
        }
        self.origins.extend(other.origins);
        self.directions.extend(other.directions);
        self.pixels.extend(other.pixels);
        self.views.extend(other.views);
        self.patch.extend(other.patch.into_iter().map(|p| p.map(|p| p + offset)));
        self.patch_count += other.patch_count;
        Ok(())
    }

    /// Sub-batch of the given rays; patch membership is dropped.
    pub fn subset(&self, indices: &[usize]) -> RayBatch {
        RayBatch {
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            directions: indices.iter().map(|&i| self.directions[i]).collect(),
            pixels: indices.iter().map(|&i| self.pixels[i]).collect(),
            views: indices.iter().map(|&i| self.views[i]).collect(),
            patch: vec![None; indices.len()],
            patch_size: 0,
            patch_count: 0,
        }
    }
}

fn check_pixel(camera: &Camera, row: usize, col: usize) -> Result<()> {
    if row >= camera.height || col >= camera.width {
        return Err(Error::Domain {
            op: "generate_rays",
            msg: format!("pixel ({row}, {col}) outside {}x{} image", camera.height, camera.width),
        });
    }
    Ok(())
}

/// Rays through the centers of the given `(row, col)` pixels of one view.
pub fn generate_rays(camera: &Camera, view: usize, pixels: &[[usize; 2]]) -> Result<RayBatch> {
    let mut batch = RayBatch::default();
    for &[row, col] in pixels {
        check_pixel(camera, row, col)?;
        batch.push(camera, view, row, col, None);
    }
    Ok(batch)
}

/// Complete `size x size` pixel blocks anchored at their top-left corners.
pub fn generate_patch_rays(camera: &Camera, view: usize, anchors: &[[usize; 2]], size: usize) -> Result<RayBatch> {
    if size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    let mut batch = RayBatch {
        patch_size: size,
        ..RayBatch::default()
    };
    for (p, &[r0, c0]) in anchors.iter().enumerate() {
        check_pixel(camera, r0 + size - 1, c0 + size - 1)?;
        for r in r0..r0 + size {
            for c in c0..c0 + size {
                batch.push(camera, view, r, c, Some(p));
            }
        }
        batch.patch_count += 1;
    }
    Ok(batch)
}

/// Uniformly random patch anchor such that the block fits in the image.
pub fn random_patch_anchor(camera: &Camera, size: usize, rng: &mut impl Rng) -> Result<[usize; 2]> {
    if size == 0 || size > camera.width || size > camera.height {
        return Err(Error::Config(format!(
            "patch size {size} does not fit a {}x{} image",
            camera.height, camera.width
        )));
    }
    Ok([rng.gen_range(0..=camera.height - size), rng.gen_range(0..=camera.width - size)])
}
