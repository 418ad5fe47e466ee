//! Cameras, rays, sampling along rays, space annealing, the volume
//! rendering quadrature and neighbour-ray pairing.

mod camera;
mod pairs;
mod rays;
mod sampling;
mod volume;

pub use camera::Camera;
pub use pairs::{adjacent_ray_pairs, pixel_neighbors, RayPairs};
pub use rays::{generate_patch_rays, generate_rays, random_patch_anchor, RayBatch};
pub use sampling::{anneal_range, sample_along_ray, AnnealConfig};
pub use volume::{volume_render, RenderOutputs, DEPTH_EPS};
