use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply_augmentations, Beam, CameraIntrinsics, DomainConfig, GateGeometry, Image};
use crate::pose_algebra::{Pose, Vec3};

const NEAR_PLANE: f64 = 0.05;
const SUPERSAMPLE: usize = 4;
const HORIZON_SOFTNESS: f64 = 0.05;

/// Per-sequence background distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    pub wall: [f64; 2],
    pub floor: [f64; 2],
    pub texture_amplitude: f64,
    pub texture_waves: usize,
    pub max_frequency: f64,
    pub stripes: usize,
    pub stripe_intensity: [f64; 2],
    pub stripe_width: [f64; 2],
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig::plain()
    }
}

impl BackgroundConfig {
    pub fn plain() -> Self {
        BackgroundConfig {
            wall: [0.6, 0.8],
            floor: [0.4, 0.55],
            texture_amplitude: 0.03,
            texture_waves: 2,
            max_frequency: 4.0,
            stripes: 0,
            stripe_intensity: [0.3, 0.5],
            stripe_width: [0.02, 0.06],
        }
    }

    pub fn textured() -> Self {
        BackgroundConfig {
            wall: [0.5, 0.85],
            floor: [0.3, 0.55],
            texture_amplitude: 0.1,
            texture_waves: 6,
            max_frequency: 12.0,
            stripes: 3,
            stripe_intensity: [0.3, 0.5],
            stripe_width: [0.02, 0.06],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Wave {
    azimuth_freq: f64,
    elevation_freq: f64,
    phase: f64,
    amplitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Stripe {
    azimuth: f64,
    half_width: f64,
    intensity: f64,
}

/// A panorama at infinity, indexed by ray direction in the gate frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    wall: f64,
    floor: f64,
    waves: Vec<Wave>,
    stripes: Vec<Stripe>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

impl Background {
    pub fn uniform(intensity: f64) -> Self {
        Background { wall: intensity, floor: intensity, waves: Vec::new(), stripes: Vec::new() }
    }

    pub fn sample<R: Rng + ?Sized>(cfg: &BackgroundConfig, rng: &mut R) -> Self {
        let wall = uniform(rng, cfg.wall);
        let floor = uniform(rng, cfg.floor);
        let per_wave = cfg.texture_amplitude / (cfg.texture_waves.max(1) as f64).sqrt();
        let waves = (0..cfg.texture_waves)
            .map(|_| Wave {
                azimuth_freq: rng.random_range(1.0..cfg.max_frequency.max(1.0 + 1e-9)),
                elevation_freq: rng.random_range(-cfg.max_frequency..=cfg.max_frequency),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amplitude: per_wave * rng.random_range(0.5..1.5),
            })
            .collect();
        let stripes = (0..cfg.stripes)
            .map(|_| Stripe {
                azimuth: rng.random_range(-1.0..1.0),
                half_width: 0.5 * uniform(rng, cfg.stripe_width),
                intensity: uniform(rng, cfg.stripe_intensity),
            })
            .collect();
        Background { wall, floor, waves, stripes }
    }

    /// Intensity seen along a gate-frame direction.
    pub fn intensity(&self, dir: &Vec3) -> f64 {
        let horiz = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        let elevation = dir[2].atan2(horiz);
        let azimuth = dir[1].atan2(dir[0]);
        let s = 1.0 / (1.0 + (-elevation / HORIZON_SOFTNESS).exp());
        let mut value = self.floor + (self.wall - self.floor) * s;
        for w in &self.waves {
            value += w.amplitude * (w.azimuth_freq * azimuth + w.elevation_freq * elevation + w.phase).sin();
        }
        // Dark vertical bars on the wall behind the gate.
        for st in &self.stripes {
            let d = crate::pose_algebra::wrap_angle(azimuth - st.azimuth).abs();
            if d < st.half_width && elevation > -0.2 {
                value = st.intensity;
            }
        }
        value.clamp(0.0, 1.0)
    }
}

/// Renders the background alone for a camera at relative pose `rel`
/// (gate → camera).
pub fn render_background(rel: &Pose, cam: &CameraIntrinsics, bg: &Background) -> Image {
    let rt = rel.rot.transpose();
    let mut px = Vec::with_capacity(cam.width * cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            px.push(bg.intensity(&rt.apply(&cam.ray(x, y))) as f32);
        }
    }
    Image::from_clamped(cam.width, cam.height, px)
}

/// Per-pixel fraction of the pixel area covered by gate beams.
pub fn gate_mask(rel: &Pose, cam: &CameraIntrinsics, gate: &GateGeometry) -> Vec<f32> {
    let (w, h) = (cam.width, cam.height);
    let mut bits = vec![0u16; w * h];
    if rel.t[0] > 0.0 {
        for beam in gate.beams() {
            if let Some(poly) = beam_silhouette(&beam, rel, cam) {
                rasterize(&poly, w, h, &mut bits);
            }
        }
    }
    let denom = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    bits.iter().map(|b| b.count_ones() as f32 / denom).collect()
}

/// Deterministic scene render: background plus gate beams, no domain shift.
pub fn render_scene(
    rel: &Pose,
    cam: &CameraIntrinsics,
    gate: &GateGeometry,
    bg: &Background,
    gate_intensity: f64,
) -> Image {
    let base = render_background(rel, cam, bg);
    if rel.t[0] <= 0.0 {
        return base;
    }
    let mask = gate_mask(rel, cam, gate);
    let g = gate_intensity as f32;
    let px = base
        .pixels()
        .iter()
        .zip(&mask)
        .map(|(&b, &c)| b * (1.0 - c) + g * c)
        .collect();
    Image::from_clamped(cam.width, cam.height, px)
}

/// Renders one frame with a freshly sampled background and the domain's
/// appearance shift.
pub fn render_gate<R: Rng + ?Sized>(
    rel: &Pose,
    cam: &CameraIntrinsics,
    gate: &GateGeometry,
    domain: &DomainConfig,
    rng: &mut R,
) -> Image {
    let bg = Background::sample(&domain.background, rng);
    let img = render_scene(rel, cam, gate, &bg, domain.gate_intensity);
    apply_augmentations(&img, &domain.shift, rng)
}

/// Projected outline of a beam, clipped against the near plane.
fn beam_silhouette(beam: &Beam, rel: &Pose, cam: &CameraIntrinsics) -> Option<Vec<(f64, f64)>> {
    let corners: Vec<Vec3> = beam.corners().iter().map(|c| rel.transform_point(c)).collect();
    let mut pts = Vec::with_capacity(16);
    for c in &corners {
        if c[0] >= NEAR_PLANE {
            pts.push(c.to_owned());
        }
    }
    if pts.is_empty() {
        return None;
    }
    for &(i, j) in Beam::EDGES.iter() {
        let (a, b) = (corners[i], corners[j]);
        if (a[0] - NEAR_PLANE) * (b[0] - NEAR_PLANE) < 0.0 {
            let s = (NEAR_PLANE - a[0]) / (b[0] - a[0]);
            pts.push([NEAR_PLANE, a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]);
        }
    }
    let projected: Vec<(f64, f64)> = pts.iter().filter_map(|p| cam.project(p)).collect();
    let hull = convex_hull(projected);
    (hull.len() >= 3).then_some(hull)
}

/// Monotone-chain hull, counter-clockwise in `(u, v)` coordinates.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn rasterize(poly: &[(f64, f64)], w: usize, h: usize, bits: &mut [u16]) {
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(u, v) in poly {
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    if umax < 0.0 || vmax < 0.0 || umin >= w as f64 || vmin >= h as f64 {
        return;
    }
    let x0 = umin.max(0.0).floor() as usize;
    let x1 = (umax.ceil().max(0.0) as usize).min(w);
    let y0 = vmin.max(0.0).floor() as usize;
    let y1 = (vmax.ceil().max(0.0) as usize).min(h);
    let edges: Vec<(f64, f64, f64, f64)> = (0..poly.len())
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            (a.0, a.1, b.0 - a.0, b.1 - a.1)
        })
        .collect();
    let inside = |u: f64, v: f64| edges.iter().all(|&(ax, ay, dx, dy)| dx * (v - ay) - dy * (u - ax) >= 0.0);
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let mut mask = 0u16;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = x as f64 + (sx as f64 + 0.5) * step;
                    let v = y as f64 + (sy as f64 + 0.5) * step;
                    if inside(u, v) {
                        mask |= 1 << (sy * SUPERSAMPLE + sx);
                    }
                }
            }
            bits[y * w + x] |= mask;
        }
    }
}
