use std::collections::HashMap;

use rand::Rng;

use super::camera::Camera;
use super::rays::RayBatch;
use crate::error::{Error, Result};

/// Neighbour pairing for the first `primary` rays of `rays`. Rays at index
/// `primary..` were appended only to serve as neighbours.
#[derive(Debug, Clone)]
pub struct RayPairs {
    pub rays: RayBatch,
    pub primary: usize,
    /// `neighbor[i]` is the index in `rays` paired with primary ray `i`.
    pub neighbor: Vec<usize>,
}

const OFFSETS: [[isize; 2]; 4] = [[-1, 0], [1, 0], [0, -1], [0, 1]];

/// In-bounds 4-neighbours of a pixel.
pub fn pixel_neighbors(row: usize, col: usize, height: usize, width: usize) -> Vec<[usize; 2]> {
    OFFSETS
        .iter()
        .filter_map(|&[dr, dc]| {
            let r = row.checked_add_signed(dr)?;
            let c = col.checked_add_signed(dc)?;
            (r < height && c < width).then_some([r, c])
        })
        .collect()
}

/// Pairs every ray with one of its in-bounds 4-neighbours chosen uniformly;
/// neighbour rays not already in the batch are generated and appended.
pub fn adjacent_ray_pairs(batch: &RayBatch, cameras: &[Camera], rng: &mut impl Rng) -> Result<RayPairs> {
    let mut index: HashMap<(usize, usize, usize), usize> = HashMap::new();
    for i in 0..batch.len() {
        let [r, c] = batch.pixels[i];
        index.entry((batch.views[i], r, c)).or_insert(i);
    }
    let mut rays = batch.clone();
    let mut neighbor = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let view = batch.views[i];
        let cam = cameras.get(view).ok_or_else(|| Error::Domain {
            op: "adjacent_ray_pairs",
            msg: format!("ray {i} references missing view {view}"),
        })?;
        let [r, c] = batch.pixels[i];
        let options = pixel_neighbors(r, c, cam.height, cam.width);
        if options.is_empty() {
            return Err(Error::Domain {
                op: "adjacent_ray_pairs",
                msg: format!("pixel ({r}, {c}) has no neighbours in a {}x{} image", cam.height, cam.width),
            });
        }
        let [nr, nc] = options[rng.gen_range(0..options.len())];
        let j = *index.entry((view, nr, nc)).or_insert_with(|| {
            let extra = super::generate_rays(cam, view, &[[nr, nc]]).expect("neighbour is in bounds");
            rays.extend(extra).expect("single rays carry no patches");
            rays.len() - 1
        });
        neighbor.push(j);
    }
    Ok(RayPairs {
        rays,
        primary: batch.len(),
        neighbor,
    })
}
