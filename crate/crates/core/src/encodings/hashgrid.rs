use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{CustomOp, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    /// log2 of the maximum number of rows per level table.
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub max_resolution: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            features_per_level: 2,
            log2_table_size: 19,
            base_resolution: 16,
            max_resolution: 2048,
        }
    }
}

/// Multiresolution hash encoding of points in the unit cube.
///
/// Level `l` is a grid of resolution `N_l` whose `(N_l + 1)^3` corners map
/// into a table of `min(E, (N_l + 1)^3)` feature rows. Coarse levels that fit
/// are indexed densely; finer ones share rows through a spatial hash.
#[derive(Debug)]
pub struct HashGridEncoding {
    config: HashGridConfig,
    resolutions: Vec<usize>,
    rows: Vec<usize>,
    out_of_bounds: AtomicU64,
}

impl Clone for HashGridEncoding {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            resolutions: self.resolutions.clone(),
            rows: self.rows.clone(),
            out_of_bounds: AtomicU64::new(self.out_of_bounds()),
        }
    }
}

impl HashGridEncoding {
    pub fn new(config: HashGridConfig) -> Result<Self> {
        let HashGridConfig {
            levels,
            features_per_level,
            log2_table_size,
            base_resolution,
            max_resolution,
        } = config;
        if levels == 0 || features_per_level == 0 {
            return Err(Error::Config("hash grid needs at least one level and one feature".into()));
        }
        if base_resolution == 0 || max_resolution < base_resolution {
            return Err(Error::Config(format!(
                "hash grid resolutions must satisfy 1 <= base ({base_resolution}) <= max ({max_resolution})"
            )));
        }
        if !(1..=30).contains(&log2_table_size) {
            return Err(Error::Config(format!("log2_table_size {log2_table_size} outside 1..=30")));
        }
        let growth = if levels > 1 {
            ((max_resolution as f64).ln() - (base_resolution as f64).ln()) / (levels - 1) as f64
        } else {
            0.0
        };
        let resolutions: Vec<usize> = (0..levels)
            .map(|l| {
                let n = (base_resolution as f64 * (growth * l as f64).exp() + 1e-9).floor() as usize;
                n.clamp(base_resolution, max_resolution)
            })
            .collect();
        let capacity = 1usize << log2_table_size;
        let rows = resolutions
            .iter()
            .map(|&n| (n + 1).checked_pow(3).map_or(capacity, |c| c.min(capacity)))
            .collect();
        Ok(Self {
            config,
            resolutions,
            rows,
            out_of_bounds: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn levels(&self) -> usize {
        self.config.levels
    }

    pub fn features(&self) -> usize {
        self.config.features_per_level
    }

    pub fn output_len(&self) -> usize {
        self.config.levels * self.config.features_per_level
    }

    pub fn resolution(&self, level: usize) -> usize {
        self.resolutions[level]
    }

    pub fn table_rows(&self, level: usize) -> usize {
        self.rows[level]
    }

    pub fn capacity(&self) -> usize {
        1 << self.config.log2_table_size
    }

    /// Whether `level` can store every corner in its own row.
    pub fn is_dense(&self, level: usize) -> bool {
        let n = self.resolutions[level] + 1;
        n.checked_pow(3).is_some_and(|c| c <= self.capacity())
    }

    /// Number of points clamped into the unit cube so far.
    pub fn out_of_bounds(&self) -> u64 {
        self.out_of_bounds.load(Ordering::Relaxed)
    }

    /// Creates one table parameter per level, uniform in `[-1e-4, 1e-4]`.
    pub fn init_tables(&self, params: &mut ParamStore, prefix: &str, rng: &mut impl Rng) -> Vec<ParamId> {
        (0..self.levels())
            .map(|l| {
                let shape = [self.rows[l], self.features()];
                let t = Tensor::from_fn(&shape, |_| rng.gen_range(-1e-4..=1e-4));
                params.add(format!("{prefix}.level{l:02}"), t)
            })
            .collect()
    }

    /// Table row for an integer grid corner at `level`.
    pub fn hash_index(&self, corner: [u32; 3], level: usize) -> usize {
        if self.is_dense(level) {
            let side = self.resolutions[level] + 1;
            let [x, y, z] = corner.map(|c| c as usize);
            x + side * (y + side * z)
        } else {
            let h = (corner[0].wrapping_mul(PRIMES[0]))
                ^ (corner[1].wrapping_mul(PRIMES[1]))
                ^ (corner[2].wrapping_mul(PRIMES[2]));
            h as usize % self.capacity()
        }
    }

    /// Encodes `points` (unit-cube coordinates) into a `[P, L*F]` node,
    /// differentiable with respect to the level tables.
    pub fn encode(&self, graph: &mut Graph, tables: &[NodeId], points: &[[f64; 3]]) -> Result<NodeId> {
        if tables.len() != self.levels() {
            return Err(Error::Config(format!(
                "expected {} level tables, got {}",
                self.levels(),
                tables.len()
            )));
        }
        let op = self.gather(points);
        graph.custom(Arc::new(op), tables)
    }

    /// Corner rows and trilinear weights for every point and level.
    fn gather(&self, points: &[[f64; 3]]) -> HashGather {
        let mut clamped = 0;
        let unit: Vec<[f64; 3]> = points
            .iter()
            .map(|p| {
                let q = p.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
                if q != *p {
                    clamped += 1;
                }
                q
            })
            .collect();
        if clamped > 0 {
            self.out_of_bounds.fetch_add(clamped, Ordering::Relaxed);
        }
        let levels = (0..self.levels())
            .map(|l| {
                let n = self.resolutions[l];
                let mut rows = Vec::with_capacity(points.len() * 8);
                let mut weights = Vec::with_capacity(points.len() * 8);
                for p in &unit {
                    let mut cell = [0u32; 3];
                    let mut frac = [0.0; 3];
                    for d in 0..3 {
                        let x = p[d] * n as f64;
                        let c = (x.floor() as usize).min(n - 1);
                        cell[d] = c as u32;
                        frac[d] = x - c as f64;
                    }
                    for corner in 0..8u32 {
                        let mut w = 1.0;
                        let mut idx = cell;
                        for d in 0..3 {
                            if corner >> d & 1 == 1 {
                                idx[d] += 1;
                                w *= frac[d];
                            } else {
                                w *= 1.0 - frac[d];
                            }
                        }
                        rows.push(self.hash_index(idx, l));
                        weights.push(w);
                    }
                }
                LevelGather { rows, weights }
            })
            .collect();
        HashGather {
            levels,
            features: self.features(),
            points: points.len(),
        }
    }
}

#[derive(Debug)]
struct LevelGather {
    rows: Vec<usize>,
    weights: Vec<f64>,
}

/// Trilinear gather from the level tables. Rows shared through hash
/// collisions accumulate gradient from every point that touches them.
#[derive(Debug)]
struct HashGather {
    levels: Vec<LevelGather>,
    features: usize,
    points: usize,
}

impl CustomOp for HashGather {
    fn name(&self) -> &'static str {
        "hash_encode"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let f = self.features;
        let width = self.levels.len() * f;
        let mut out = vec![0.0; self.points * width];
        for (l, (level, table)) in self.levels.iter().zip(inputs).enumerate() {
            if table.ndim() != 2 || table.shape()[1] != f {
                return Err(Error::shape("hash_encode", &[table.shape(), &[f]]));
            }
            let td = table.data();
            if level.rows.iter().any(|&r| r >= table.shape()[0]) {
                return Err(Error::shape("hash_encode", &[table.shape()]));
            }
            for p in 0..self.points {
                let dst = &mut out[p * width + l * f..p * width + (l + 1) * f];
                for c in 0..8 {
                    let k = p * 8 + c;
                    let (row, w) = (level.rows[k], level.weights[k]);
                    if w == 0.0 {
                        continue;
                    }
                    for (o, v) in dst.iter_mut().zip(&td[row * f..(row + 1) * f]) {
                        *o += w * v;
                    }
                }
            }
        }
        Tensor::new(vec![self.points, width], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let f = self.features;
        let width = self.levels.len() * f;
        let gd = grad.data();
        self.levels
            .iter()
            .zip(inputs)
            .enumerate()
            .map(|(l, (level, table))| {
                let mut tg = Tensor::zeros(table.shape());
                let td = tg.data_mut();
                for p in 0..self.points {
                    let src = &gd[p * width + l * f..p * width + (l + 1) * f];
                    for c in 0..8 {
                        let k = p * 8 + c;
                        let (row, w) = (level.rows[k], level.weights[k]);
                        for (t, g) in td[row * f..(row + 1) * f].iter_mut().zip(src) {
                            *t += w * g;
                        }
                    }
                }
                Some(tg)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> HashGridEncoding {
        HashGridEncoding::new(HashGridConfig {
            levels: 3,
            features_per_level: 2,
            log2_table_size: 6,
            base_resolution: 2,
            max_resolution: 8,
        })
        .unwrap()
    }

    fn tables(grid: &HashGridEncoding, g: &mut Graph, fill: impl Fn(usize, usize) -> f64) -> Vec<NodeId> {
        (0..grid.levels())
            .map(|l| {
                let rows = grid.table_rows(l);
                let t = Tensor::from_fn(&[rows, grid.features()], |i| fill(l, i));
                g.constant(t)
            })
            .collect()
    }

    #[test]
    fn resolutions_grow_geometrically() {
        let grid = small();
        assert_eq!((0..3).map(|l| grid.resolution(l)).collect::<Vec<_>>(), vec![2, 4, 8]);
        // 27 and 125 corners fit in 64 rows only for the coarsest level
        assert!(grid.is_dense(0));
        assert!(!grid.is_dense(1));
        assert_eq!(grid.table_rows(0), 27);
        assert_eq!(grid.table_rows(1), 64);
        assert_eq!(grid.output_len(), 6);
    }

    #[test]
    fn dense_levels_use_linear_index() {
        let grid = small();
        assert_eq!(grid.hash_index([0, 0, 0], 0), 0);
        assert_eq!(grid.hash_index([1, 0, 0], 0), 1);
        assert_eq!(grid.hash_index([0, 1, 0], 0), 3);
        assert_eq!(grid.hash_index([2, 2, 2], 0), 26);
    }

    #[test]
    fn fine_levels_collide() {
        let grid = small();
        let n = grid.resolution(2) as u32;
        let mut seen = std::collections::HashMap::new();
        let mut collision = None;
        'scan: for z in 0..=n {
            for y in 0..=n {
                for x in 0..=n {
                    let row = grid.hash_index([x, y, z], 2);
                    assert!(row < grid.capacity());
                    if let Some(prev) = seen.insert(row, [x, y, z]) {
                        collision = Some((prev, [x, y, z]));
                        break 'scan;
                    }
                }
            }
        }
        let (a, b) = collision.expect("pigeonhole guarantees a collision");
        assert_ne!(a, b);
        assert_eq!(grid.hash_index(a, 2), grid.hash_index(b, 2));
    }

    #[test]
    fn zero_tables_encode_to_zero() {
        let grid = small();
        let mut g = Graph::new();
        let t = tables(&grid, &mut g, |_, _| 0.0);
        let out = grid.encode(&mut g, &t, &[[0.3, 0.7, 0.1]]).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 6]);
    }

    #[test]
    fn grid_corner_returns_corner_row() {
        let grid = small();
        let mut g = Graph::new();
        let t = tables(&grid, &mut g, |l, i| (l * 1000 + i) as f64);
        // a grid corner of the N = 4 and N = 8 levels
        let p = [0.5, 0.25, 0.75];
        let out = grid.encode(&mut g, &t, &[p]).unwrap();
        let v = g.value(out).data().to_vec();
        for l in 1..3 {
            let n = grid.resolution(l) as f64;
            let corner = p.map(|c| (c * n).round() as u32);
            let row = grid.hash_index(corner, l);
            assert_eq!(v[l * 2], (l * 1000 + row * 2) as f64);
            assert_eq!(v[l * 2 + 1], (l * 1000 + row * 2 + 1) as f64);
        }
    }

    #[test]
    fn cell_center_averages_corners() {
        let grid = small();
        let mut g = Graph::new();
        // features in {0, 1} by a fixed pattern
        let t = tables(&grid, &mut g, |l, i| ((i * 7 + l * 3) % 5 < 2) as u8 as f64);
        let n0 = grid.resolution(0) as f64;
        let p = [1.5 / n0, 0.5 / n0, 0.5 / n0];
        let out = grid.encode(&mut g, &t, &[p]).unwrap();
        let table0 = g.value(t[0]).clone();
        for f in 0..2 {
            let mut sum = 0.0;
            for c in 0..8u32 {
                let corner = [1 + (c & 1), (c >> 1) & 1, (c >> 2) & 1];
                sum += table0.data()[grid.hash_index(corner, 0) * 2 + f];
            }
            assert!((g.value(out).data()[f] - sum / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_cube_points_are_clamped_and_counted() {
        let grid = small();
        let mut g = Graph::new();
        let t = tables(&grid, &mut g, |l, i| (l + i) as f64 * 0.01);
        let a = grid.encode(&mut g, &t, &[[1.3, -0.2, 0.5]]).unwrap();
        let b = grid.encode(&mut g, &t, &[[1.0, 0.0, 0.5]]).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert_eq!(grid.out_of_bounds(), 1);
    }

    #[test]
    fn init_is_small_and_symmetric() {
        let grid = small();
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids = grid.init_tables(&mut params, "grid", &mut rng);
        assert_eq!(ids.len(), 3);
        for id in ids {
            assert!(params.get(id).max_abs() <= 1e-4);
        }
    }
}
