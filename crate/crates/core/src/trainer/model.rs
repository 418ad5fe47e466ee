use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::diffcore::{Graph, NodeId, ParamId, ParamNodes, ParamStore, Tensor};
use crate::encodings::{apply_encoding_mask, HashGridEncoding, ShEncoding};
use crate::error::{Error, Result};
use crate::nets::{ColorNet, DensityNet, Mlp};
use crate::rendering::{sample_along_ray, volume_render, Camera, RayBatch, RenderOutputs};
use crate::scenedata::Image;

/// Sample distances and widths for a batch of rays.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    /// `[R, N]`
    pub t: Tensor,
    /// `[R, N]`
    pub delta: Tensor,
    pub far: Vec<f64>,
}

impl RaySamples {
    /// Samples `n` points on every ray between the given bounds.
    pub fn draw(
        bounds: &[(f64, f64)],
        n: usize,
        stratified: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut t = Vec::with_capacity(bounds.len() * n);
        let mut delta = Vec::with_capacity(bounds.len() * n);
        for &(near, far) in bounds {
            let (ti, di) = sample_along_ray(near, far, n, stratified, rng)?;
            t.extend(ti);
            delta.extend(di);
        }
        Ok(Self {
            t: Tensor::new(vec![bounds.len(), n], t)?,
            delta: Tensor::new(vec![bounds.len(), n], delta)?,
            far: bounds.iter().map(|b| b.1).collect(),
        })
    }
}

/// Result of rendering a batch on the tape.
#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub render: RenderOutputs,
    /// Pixel colors including the background term, `[R, 3]`.
    pub rgb: NodeId,
}

/// Hash-grid density network plus SH-conditioned color network.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: HashGridEncoding,
    pub sh: ShEncoding,
    pub density: DensityNet,
    pub color: ColorNet,
    pub tables: Vec<ParamId>,
    pub params: ParamStore,
    bounds_min: [f64; 3],
    bounds_max: [f64; 3],
    mask_position: bool,
    mask_direction: bool,
}

impl Model {
    /// Fresh parameters drawn from `rng`; creation order (tables, density,
    /// color) fixes the store layout.
    pub fn new(cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let grid = HashGridEncoding::new(cfg.model.hashgrid.clone())?;
        let sh = ShEncoding::new(cfg.model.sh_degree)?;
        let mut params = ParamStore::new();
        let tables = grid.init_tables(&mut params, "grid", rng);
        let density = DensityNet::new(
            &mut params,
            grid.output_len(),
            &cfg.model.density_hidden,
            cfg.model.geo_dim,
            cfg.toggles.lipschitz_density,
            rng,
        )?;
        let color = ColorNet::new(
            &mut params,
            cfg.model.geo_dim,
            sh.output_len(),
            &cfg.model.color_hidden,
            cfg.toggles.lipschitz_color,
            rng,
        )?;
        Ok(Self {
            grid,
            sh,
            density,
            color,
            tables,
            params,
            bounds_min: cfg.data.bounds_min,
            bounds_max: cfg.data.bounds_max,
            mask_position: cfg.toggles.mask_position,
            mask_direction: cfg.toggles.mask_direction,
        })
    }

    /// Rebuilds the model for `cfg` around existing parameters, checking
    /// every name and shape.
    pub fn with_params(cfg: &TrainConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        if params.len() != model.params.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match the configured model ({})",
                params.len(),
                model.params.len()
            )));
        }
        for ((name, fresh), (given_name, given)) in model.params.iter().zip(params.iter()) {
            if name != given_name || fresh.shape() != given.shape() {
                return Err(Error::Config(format!(
                    "parameter `{given_name}` {:?} does not match `{name}` {:?}",
                    given.shape(),
                    fresh.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    /// Networks that carry Lipschitz bounds.
    pub fn lipschitz_nets(&self) -> Vec<&Mlp> {
        [self.density.mlp(), self.color.mlp()]
            .into_iter()
            .filter(|m| m.is_lipschitz())
            .collect()
    }

    /// Whether a parameter belongs to the hash tables.
    pub fn is_table(&self, id: ParamId) -> bool {
        self.tables.contains(&id)
    }

    fn to_unit(&self, p: [f64; 3]) -> ([f64; 3], bool) {
        let u: [f64; 3] = std::array::from_fn(|k| (p[k] - self.bounds_min[k]) / (self.bounds_max[k] - self.bounds_min[k]));
        let inside = u.iter().all(|v| (0.0..=1.0).contains(v));
        (u, inside)
    }

    /// Renders `rays` on the tape. `mask_x` gives the kept fractions of the
    /// position and direction encodings.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &ParamNodes,
        rays: &RayBatch,
        samples: &RaySamples,
        mask_x: (f64, f64),
        background: [f64; 3],
    ) -> Result<ModelOutputs> {
        let (r, n) = (samples.t.shape()[0], samples.t.shape()[1]);
        if r != rays.len() {
            return Err(Error::shape("model_forward", &[&[rays.len()], samples.t.shape()]));
        }
        let mut points = Vec::with_capacity(r * n);
        let mut inside = Vec::with_capacity(r * n);
        let mut all_inside = true;
        let t = samples.t.data();
        for i in 0..r {
            let (o, d) = (rays.origins[i], rays.directions[i]);
            for s in 0..n {
                let ts = t[i * n + s];
                let (u, ok) = self.to_unit([o[0] + ts * d[0], o[1] + ts * d[1], o[2] + ts * d[2]]);
                points.push(u);
                inside.push(if ok { 1.0 } else { 0.0 });
                all_inside &= ok;
            }
        }

        let tables: Vec<NodeId> = self.tables.iter().map(|&id| p.get(id)).collect();
        let mut enc = self.grid.encode(g, &tables, &points)?;
        if self.mask_position {
            enc = apply_encoding_mask(g, enc, mask_x.0)?;
        }
        let (mut sigma, geo) = self.density.forward_density(g, p, enc)?;
        if !all_inside {
            let mask = g.constant(Tensor::vector(inside));
            sigma = g.mul(sigma, mask)?;
        }

        let dim = self.sh.output_len();
        let mut dirs = Vec::with_capacity(r * n * dim);
        for d in &rays.directions {
            let coeffs = self.sh.encode(*d);
            for _ in 0..n {
                dirs.extend_from_slice(&coeffs);
            }
        }
        let mut dir_enc = g.constant(Tensor::new(vec![r * n, dim], dirs)?);
        if self.mask_direction {
            dir_enc = apply_encoding_mask(g, dir_enc, mask_x.1)?;
        }
        let color = self.color.forward_color(g, p, geo, dir_enc)?;

        let sigma = g.reshape(sigma, &[r, n])?;
        let color = g.reshape(color, &[r, n, 3])?;
        let render = volume_render(g, sigma, color, &samples.t, &samples.delta)?;
        let mut rgb = render.rgb;
        if background.iter().any(|&b| b != 0.0) {
            let acc = g.reshape(render.acc, &[r, 1])?;
            let neg = g.neg(acc)?;
            let empty = g.add_scalar(neg, 1.0)?;
            let bg = g.constant(Tensor::vector(background.to_vec()));
            let fill = g.mul(empty, bg)?;
            rgb = g.add(rgb, fill)?;
        }
        if !g.value(rgb).is_finite() {
            return Err(Error::NonFinite("rendered color".into()));
        }
        Ok(ModelOutputs { render, rgb })
    }

    /// Deterministic (bin-center) render of a full view, in chunks of rays.
    pub fn render_image(
        &self,
        camera: &Camera,
        samples_per_ray: usize,
        mask_x: (f64, f64),
        background: [f64; 3],
    ) -> Result<(Image, Vec<f64>)> {
        const CHUNK: usize = 1024;
        camera.validate()?;
        let pixels: Vec<[usize; 2]> = (0..camera.height)
            .flat_map(|r| (0..camera.width).map(move |c| [r, c]))
            .collect();
        let mut rgb = Vec::with_capacity(pixels.len() * 3);
        let mut depth = Vec::with_capacity(pixels.len());
        // bin centers need no randomness
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        for chunk in pixels.chunks(CHUNK) {
            let rays = crate::rendering::generate_rays(camera, 0, chunk)?;
            let bounds = vec![(camera.near, camera.far); rays.len()];
            let samples = RaySamples::draw(&bounds, samples_per_ray, false, &mut unused)?;
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let out = self.forward(&mut g, &p, &rays, &samples, mask_x, background)?;
            rgb.extend_from_slice(g.value(out.rgb).data());
            depth.extend_from_slice(g.value(out.render.depth).data());
        }
        Ok((Image::new(camera.width, camera.height, rgb)?, depth))
    }
}
