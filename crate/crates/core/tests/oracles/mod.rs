//! Straightforward reference implementations used as test oracles: plain
//! nested loops over `f64` slices, no tape, no vectorization.

#![allow(dead_code, clippy::needless_range_loop)]

use std::path::PathBuf;

use rand::Rng;
use serde::Deserialize;

/// Rays as rows of a row-major `[rows, cols]` buffer.
pub fn rows(data: &[f64], cols: usize) -> impl Iterator<Item = &[f64]> {
    data.chunks(cols)
}

/// Sum over rays and channels of the squared error.
pub fn rgb_loss(pred: &[f64], target: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        let d = pred[i] - target[i];
        total += d * d;
    }
    total
}

fn normalized(row: &[f64], eps: f64) -> (Vec<f64>, bool) {
    let mut s = 0.0;
    for v in row {
        s += v;
    }
    let denom = if s > eps { s } else { eps };
    (row.iter().map(|v| v / denom).collect(), s < eps)
}

/// Mean KL over usable pairs of normalized rows; rows with mass below
/// `eps` are skipped. Returns `(loss, pairs used)`.
pub fn neighbor_kl(values: &[f64], n: usize, pairs: &[(usize, usize)], eps: f64) -> (f64, usize) {
    let rows: Vec<(Vec<f64>, bool)> = values.chunks(n).map(|r| normalized(r, eps)).collect();
    let mut total = 0.0;
    let mut used = 0;
    for &(a, b) in pairs {
        let (p, dp) = &rows[a];
        let (q, dq) = &rows[b];
        if *dp || *dq {
            continue;
        }
        let mut kl = 0.0;
        for i in 0..n {
            kl += p[i] * ((p[i] + eps).ln() - (q[i] + eps).ln());
        }
        total += kl;
        used += 1;
    }
    if used == 0 {
        (0.0, 0)
    } else {
        (total / used as f64, used)
    }
}

/// Mean over rays of the distortion sum divided by `max(depth, eps)`.
/// `edges` has `n + 1` entries per ray.
pub fn distortion(w: &[f64], edges: &[f64], depth: &[f64], n: usize, eps: f64) -> f64 {
    let b = depth.len();
    if b == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for r in 0..b {
        let e = &edges[r * (n + 1)..(r + 1) * (n + 1)];
        let wr = &w[r * n..(r + 1) * n];
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mi = 0.5 * (e[i] + e[i + 1]);
                let mj = 0.5 * (e[j] + e[j + 1]);
                s += wr[i] * wr[j] * (mi - mj).abs();
            }
        }
        for i in 0..n {
            s += wr[i] * wr[i] * (e[i + 1] - e[i]) / 3.0;
        }
        total += s / depth[r].max(eps);
    }
    total / b as f64
}

/// Mean over rays of `(1 - sum w)^2`.
pub fn foreground(w: &[f64], n: usize) -> f64 {
    let b = w.len() / n;
    if b == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for r in rows(w, n) {
        let mut acc = 0.0;
        for v in r {
            acc += v;
        }
        total += (1.0 - acc) * (1.0 - acc);
    }
    total / b as f64
}

/// Per patch, squared differences of each depth in the leading
/// `(s-1) x (s-1)` block with its lower and right neighbours; averaged over
/// patches.
pub fn depth_smoothness(d: &[f64], p: usize, s: usize) -> f64 {
    if p == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..p {
        let at = |r: usize, c: usize| d[k * s * s + r * s + c];
        for r in 0..s - 1 {
            for c in 0..s - 1 {
                total += (at(r, c) - at(r + 1, c)).powi(2) + (at(r, c) - at(r, c + 1)).powi(2);
            }
        }
    }
    total / p as f64
}

/// Mean over rays of the Shannon entropy of normalized opacities; rays with
/// total opacity at or below `threshold` contribute zero.
pub fn entropy(alpha: &[f64], n: usize, threshold: f64, eps: f64) -> f64 {
    let b = alpha.len() / n;
    if b == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for r in rows(alpha, n) {
        let mut s = 0.0;
        for v in r {
            s += v;
        }
        if s <= threshold {
            continue;
        }
        let (q, _) = normalized(r, eps);
        let mut h = 0.0;
        for v in q {
            h -= v * (v + eps).ln();
        }
        total += h;
    }
    total / b as f64
}

/// PSNR from the per-channel mean squared error, with the same 99 dB cap.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    let mse = s / a.len() as f64;
    if mse < 1e-10 {
        return 99.0;
    }
    (-10.0 * mse.log10()).min(99.0)
}

/// SSIM with an explicit 11x11 Gaussian window (sigma 1.5) evaluated
/// directly at every valid position, averaged over positions and channels.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> f64 {
    const K: usize = 11;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut window = [[0.0; K]; K];
    let mut norm = 0.0;
    for (i, row) in window.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            norm += *v;
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let px = |img: &[f64], r: usize, c: usize| img[(r * width + c) * 3 + ch];
        for r0 in 0..=height - K {
            for c0 in 0..=width - K {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let w = window[i][j] / norm;
                        let (x, y) = (px(a, r0 + i, c0 + j), px(b, r0 + i, c0 + j));
                        mx += w * x;
                        my += w * y;
                        sxx += w * x * x;
                        syy += w * y * y;
                        sxy += w * x * y;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// One volume-rendering instance with reference outputs computed at 50
/// significant digits.
#[derive(Debug, Deserialize)]
pub struct RenderCase {
    pub sigma: Vec<f64>,
    pub delta: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub rgb: [f64; 3],
    pub transmittance: Vec<f64>,
    pub weights: Vec<f64>,
    pub final_transmittance: f64,
}

#[derive(Deserialize)]
struct RenderFixture {
    cases: Vec<RenderCase>,
}

pub fn render_cases() -> Vec<RenderCase> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/render_oracle.json");
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let fixture: RenderFixture = serde_json::from_str(&text).expect("render fixture parses");
    fixture.cases
}

/// Sorted sample distances with positive widths, `[b, n]` each.
pub fn sorted_samples(rng: &mut impl Rng, b: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::with_capacity(b * n);
    let mut delta = Vec::with_capacity(b * n);
    for _ in 0..b {
        let mut x = rng.gen_range(0.5..1.0);
        for _ in 0..n {
            let d = rng.gen_range(0.01..0.3);
            t.push(x);
            delta.push(d);
            x += d;
        }
    }
    (t, delta)
}
