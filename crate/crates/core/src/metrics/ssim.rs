use serde::{Deserialize, Serialize};

use crate::datakit::ImageTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    /// One SSIM value from whole-image statistics.
    #[default]
    Global,
    /// Mean SSIM over all `window x window` patches (stride 1, uniform weights).
    Windowed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
    pub mode: SsimMode,
    pub window: usize,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self::with_range(2.0)
    }
}

impl SsimParams {
    /// Stabilizers `c1 = (0.01 L)^2`, `c2 = (0.03 L)^2`.
    pub fn with_range(dynamic_range: f64) -> Self {
        Self {
            c1: (0.01 * dynamic_range).powi(2),
            c2: (0.03 * dynamic_range).powi(2),
            mode: SsimMode::Global,
            window: 11,
            dynamic_range,
        }
    }

    pub fn windowed(mut self, window: usize) -> Self {
        self.mode = SsimMode::Windowed;
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config(format!(
                "SSIM stabilizers must be > 0, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.mode == SsimMode::Windowed && self.window == 0 {
            return Err(Error::Config("SSIM window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Single SSIM formula from first and second moments.
pub fn ssim_from_stats(
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
        / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
}

fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cxy += da * db;
    }
    (mx, my, vx / n, vy / n, cxy / n)
}

/// SSIM of two grayscale planes of `height x width` values.
pub fn ssim_gray(
    x: &[f64],
    y: &[f64],
    height: usize,
    width: usize,
    params: &SsimParams,
) -> Result<f64> {
    params.validate()?;
    if x.len() != y.len() || x.len() != height * width || x.is_empty() {
        return Err(Error::shape(
            "ssim",
            format!("{} values", height * width),
            format!("{} and {}", x.len(), y.len()),
        ));
    }
    match params.mode {
        SsimMode::Global => {
            let (mx, my, vx, vy, c) = moments(x, y);
            Ok(ssim_from_stats(mx, my, vx, vy, c, params.c1, params.c2))
        }
        SsimMode::Windowed => {
            let w = params.window;
            if w > height || w > width {
                return Err(Error::InvalidArgument(format!(
                    "SSIM window {w} exceeds image {height}x{width}"
                )));
            }
            let n = (w * w) as f64;
            let (mut total, mut count) = (0.0, 0usize);
            let mut px = Vec::with_capacity(w * w);
            let mut py = Vec::with_capacity(w * w);
            for r in 0..=height - w {
                for c in 0..=width - w {
                    px.clear();
                    py.clear();
                    for i in r..r + w {
                        px.extend_from_slice(&x[i * width + c..i * width + c + w]);
                        py.extend_from_slice(&y[i * width + c..i * width + c + w]);
                    }
                    let (mx, my, vx, vy, cv) = moments(&px, &py);
                    debug_assert_eq!(px.len() as f64, n);
                    total += ssim_from_stats(mx, my, vx, vy, cv, params.c1, params.c2);
                    count += 1;
                }
            }
            Ok(total / count as f64)
        }
    }
}

/// SSIM of two images after reducing each to grayscale by the unweighted channel mean.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, params: &SsimParams) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(
            "ssim",
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    ssim_gray(
        &a.grayscale(),
        &b.grayscale(),
        a.height(),
        a.width(),
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images_closed_form() {
        let p = SsimParams {
            c1: 1e-4,
            c2: 9e-4,
            ..SsimParams::with_range(1.0)
        };
        let x = vec![0.0; 16];
        let y = vec![1.0; 16];
        let s = ssim_gray(&x, &y, 4, 4, &p).unwrap();
        assert!((s - 1e-4 / (1.0 + 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn full_window_equals_global() {
        let x: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let y: Vec<f64> = (0..25).map(|i| ((i * 3) % 5) as f64 / 5.0).collect();
        let g = ssim_gray(&x, &y, 5, 5, &SsimParams::default()).unwrap();
        let w = ssim_gray(&x, &y, 5, 5, &SsimParams::default().windowed(5)).unwrap();
        assert!((g - w).abs() < 1e-15);
    }
}
