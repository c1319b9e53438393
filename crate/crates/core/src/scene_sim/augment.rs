use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Image;

/// Focal length over image width for the default camera; sets the
/// vignette's angular falloff independent of resolution.
const VIGNETTE_FOCAL_RATIO: f64 = 0.6875;
/// Sobel magnitude mapped to full black.
const PENCIL_SCALE: f32 = 2.0;

/// Photometric shift parameters. Ranges are sampled uniformly per image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// 0 disables; 1 applies the full cos⁴ falloff.
    pub vignette: f64,
    pub blur_sigma: [f64; 2],
    pub noise_std: f64,
    pub exposure: [f64; 2],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig::none()
    }
}

impl AugmentationConfig {
    pub fn none() -> Self {
        AugmentationConfig { vignette: 0.0, blur_sigma: [0.0, 0.0], noise_std: 0.0, exposure: [1.0, 1.0] }
    }

    pub fn real_shift() -> Self {
        AugmentationConfig { vignette: 0.5, blur_sigma: [0.5, 1.5], noise_std: 0.08, exposure: [0.6, 1.3] }
    }

    /// Scales every strength by `s`; exposure is scaled around 1.
    pub fn scaled(&self, s: f64) -> Self {
        AugmentationConfig {
            vignette: self.vignette * s,
            blur_sigma: [self.blur_sigma[0] * s, self.blur_sigma[1] * s],
            noise_std: self.noise_std * s,
            exposure: [1.0 + s * (self.exposure[0] - 1.0), 1.0 + s * (self.exposure[1] - 1.0)],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == AugmentationConfig::none()
    }
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Blur, vignette, multiplicative noise and exposure gain, in that order.
pub fn apply_augmentations<R: Rng + ?Sized>(img: &Image, cfg: &AugmentationConfig, rng: &mut R) -> Image {
    if cfg.is_identity() {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let sigma = sample_range(rng, cfg.blur_sigma);
    let mut px = if sigma > 0.0 { gaussian_blur(img.pixels(), w, h, sigma) } else { img.pixels().to_vec() };

    if cfg.vignette > 0.0 {
        let f = VIGNETTE_FOCAL_RATIO * w as f64;
        let (cx, cy) = (0.5 * w as f64, 0.5 * h as f64);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let cos2 = f * f / (f * f + dx * dx + dy * dy);
                let gain = 1.0 - cfg.vignette * (1.0 - cos2 * cos2);
                px[y * w + x] *= gain as f32;
            }
        }
    }

    if cfg.noise_std > 0.0 {
        for p in px.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *p *= (1.0 + cfg.noise_std * n) as f32;
        }
    }

    let gain = sample_range(rng, cfg.exposure);
    if gain != 1.0 {
        for p in px.iter_mut() {
            *p *= gain as f32;
        }
    }
    Image::from_clamped(w, h, px)
}

/// Separable Gaussian blur with clamped borders; output is not clamped.
pub fn gaussian_blur(px: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * px[y * w + clamp(x as isize + j as isize - radius, w)] as f64;
            }
            tmp[y * w + x] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * tmp[clamp(y as isize + j as isize - radius, h) * w + x] as f64;
            }
            out[y * w + x] = acc as f32;
        }
    }
    out
}

/// Sobel edge magnitude, inverted so edges are dark on white.
pub fn pencil_filter(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let p = img.pixels();
    let at = |x: isize, y: isize| p[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let mag = (gx * gx + gy * gy).sqrt();
            out.push(1.0 - (mag / PENCIL_SCALE).min(1.0));
        }
    }
    Image::from_clamped(w, h, out)
}
