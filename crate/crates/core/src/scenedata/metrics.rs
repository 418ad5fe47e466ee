use super::scene::Image;
use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check(img: &Image, reference: &Image) -> Result<()> {
    if (img.width, img.height) != (reference.width, reference.height) {
        return Err(Error::shape(
            "metric",
            &[&[img.height, img.width, 3], &[reference.height, reference.width, 3]],
        ));
    }
    Ok(())
}

pub fn mse(img: &Image, reference: &Image) -> Result<f64> {
    check(img, reference)?;
    let n = img.data.len().max(1) as f64;
    Ok(img.data.iter().zip(&reference.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `-10 log10(MSE)`, capped at 99 dB.
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    let m = mse(img, reference)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean SSIM over all fully covered 11x11 Gaussian windows, averaged over
/// the three channels.
pub fn ssim(img: &Image, reference: &Image) -> Result<f64> {
    check(img, reference)?;
    let (w, h) = (img.width, img.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Domain {
            op: "ssim",
            msg: format!("image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = img.data.iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = reference.data.iter().skip(ch).step_by(3).copied().collect();
        let planes = [
            x.clone(),
            y.clone(),
            x.iter().map(|v| v * v).collect(),
            y.iter().map(|v| v * v).collect(),
            x.iter().zip(&y).map(|(a, b)| a * b).collect(),
        ];
        let [mx, my, xx, yy, xy] = planes.map(|p| filter_valid(&p, w, h, &taps));
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let (vx, vy, cov) = (xx[i] - mx[i] * mx[i], yy[i] - my[i] * my[i], xy[i] - mx[i] * my[i]);
            sum += ((2.0 * mx[i] * my[i] + C1) * (2.0 * cov + C2))
                / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

/// Separable Gaussian filtering keeping only fully covered positions.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let mut rows = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|t| taps[t] * plane[r * w + c + t]).sum();
        }
    }
    let oh = h - k + 1;
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|t| taps[t] * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Geometric mean of `MSE = 10^(-PSNR/10)` and `sqrt(1 - SSIM)`; the second
/// factor is floored at 1e-10.
pub fn average_metric(psnr: f64, ssim: f64) -> f64 {
    let mse = 10f64.powf(-psnr / 10.0);
    let structural = (1.0 - ssim).max(0.0).sqrt().max(1e-10);
    (mse * structural).sqrt()
}
