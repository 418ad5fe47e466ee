use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 4;

/// Real spherical-harmonic encoding of unit view directions, `degree` bands
/// giving `degree^2` coefficients.
#[derive(Debug)]
pub struct ShEncoding {
    degree: usize,
    renormalized: AtomicU64,
}

impl Clone for ShEncoding {
    fn clone(&self) -> Self {
        Self {
            degree: self.degree,
            renormalized: AtomicU64::new(self.renormalized()),
        }
    }
}

impl ShEncoding {
    pub fn new(degree: usize) -> Result<Self> {
        if !(1..=MAX_SH_DEGREE).contains(&degree) {
            return Err(Error::Config(format!(
                "spherical harmonics degree {degree} outside 1..={MAX_SH_DEGREE}"
            )));
        }
        Ok(Self {
            degree,
            renormalized: AtomicU64::new(0),
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn output_len(&self) -> usize {
        self.degree * self.degree
    }

    /// Directions that had to be renormalized so far.
    pub fn renormalized(&self) -> u64 {
        self.renormalized.load(Ordering::Relaxed)
    }

    pub fn encode(&self, dir: [f64; 3]) -> Vec<f64> {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit = if (norm - 1.0).abs() > 1e-9 {
            self.renormalized.fetch_add(1, Ordering::Relaxed);
            if norm > 0.0 {
                dir.map(|v| v / norm)
            } else {
                [0.0, 0.0, 1.0]
            }
        } else {
            dir
        };
        let mut out = vec![0.0; self.output_len()];
        sh_basis(unit, self.degree, &mut out);
        out
    }
}

/// Real spherical-harmonic basis up to `degree` bands for a unit direction.
///
/// Within a band the order is m = -l..=l, so band 1 reads (y, z, x).
pub fn sh_encode(dir: [f64; 3], degree: usize) -> Result<Vec<f64>> {
    Ok(ShEncoding::new(degree)?.encode(dir))
}

fn sh_basis([x, y, z]: [f64; 3], degree: usize, out: &mut [f64]) {
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let (x2, y2, z2) = (x * x, y * y, z * z);
    out[0] = 0.282_094_791_773_878_14;
    if degree <= 1 {
        return;
    }
    out[1] = -0.488_602_511_902_919_9 * y;
    out[2] = 0.488_602_511_902_919_9 * z;
    out[3] = -0.488_602_511_902_919_9 * x;
    if degree <= 2 {
        return;
    }
    out[4] = 1.092_548_430_592_079_2 * xy;
    out[5] = -1.092_548_430_592_079_2 * yz;
    out[6] = 0.946_174_695_757_560_1 * z2 - 0.315_391_565_252_520_05;
    out[7] = -1.092_548_430_592_079_2 * xz;
    out[8] = 0.546_274_215_296_039_6 * (x2 - y2);
    if degree <= 3 {
        return;
    }
    out[9] = 0.590_043_589_926_643_5 * y * (y2 - 3.0 * x2);
    out[10] = 2.890_611_442_640_554 * xy * z;
    out[11] = 0.457_045_799_464_465_8 * y * (1.0 - 5.0 * z2);
    out[12] = 0.373_176_332_590_115_4 * z * (5.0 * z2 - 3.0);
    out[13] = 0.457_045_799_464_465_8 * x * (1.0 - 5.0 * z2);
    out[14] = 1.445_305_721_320_277 * z * (x2 - y2);
    out[15] = 0.590_043_589_926_643_5 * x * (3.0 * y2 - x2);
}
