use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera. Camera space looks down `-z` with `+y` up; `pose` maps
/// camera coordinates to world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world matrix, rows of `[R | t]`.
    pub pose: [[f64; 4]; 3],
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera has an empty image".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(self.near < self.far && self.near >= 0.0) {
            return Err(Error::Config(format!("need 0 <= near < far, got {} {}", self.near, self.far)));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.pose[k][i] * self.pose[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-6 {
                    return Err(Error::Config("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, principal point at the image
    /// center.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let back = normalize(sub(eye, target)).ok_or_else(|| Error::Config("eye equals target".into()))?;
        let right = normalize(cross(up, back)).ok_or_else(|| Error::Config("up is parallel to view axis".into()))?;
        let true_up = cross(back, right);
        let mut pose = [[0.0; 4]; 3];
        for k in 0..3 {
            pose[k] = [right[k], true_up[k], back[k], eye[k]];
        }
        let cam = Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            pose,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn origin(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// Unit world-space direction `-z` of the camera.
    pub fn forward(&self) -> [f64; 3] {
        [-self.pose[0][2], -self.pose[1][2], -self.pose[2][2]]
    }

    /// Unit world-space direction through the center of pixel `(row, col)`.
    pub fn pixel_direction(&self, row: usize, col: usize) -> [f64; 3] {
        let x = (col as f64 + 0.5 - self.cx) / self.fx;
        let y = -(row as f64 + 0.5 - self.cy) / self.fy;
        let local = [x, y, -1.0];
        let world = std::array::from_fn(|k| (0..3).map(|j| self.pose[k][j] * local[j]).sum());
        normalize(world).expect("camera-space direction has unit z component")
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(v, v).sqrt();
    (n > 1e-300).then(|| v.map(|c| c / n))
}
