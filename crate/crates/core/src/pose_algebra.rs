//! Rigid-body algebra on SE(3), the odometry warp used by the
//! state-consistency loss, and the continuous 6D rotation encoding.
//!
//! Conventions used throughout the crate:
//!
//! * A pose named `X→Y` maps coordinates expressed in frame `X` into frame
//!   `Y`. Composition is the homogeneous-matrix product, so
//!   `compose(a, b)` applies `b` first.
//! * Drone body and camera frames share axes: `x` forward (optical axis),
//!   `y` left, `z` up.
//! * Euler angles use the intrinsic Z-Y-X (yaw, pitch, roll) order, see
//!   [`EULER_CONVENTION`].
//! * Angles are wrapped to `(-π, π]`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Euler decomposition used by [`yaw_of`] and [`Rotation::from_euler_zyx`].
pub const EULER_CONVENTION: &str = "intrinsic Z-Y-X (yaw, pitch, roll)";

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// Minimum norm accepted by the Gram–Schmidt decode of a 6D encoding.
pub const DEGENERATE_NORM: f64 = 1e-8;

/// Composition chains longer than this are renormalized by [`compose_chain`].
pub const RENORMALIZE_EVERY: usize = 16;

/// Size in bytes of a serialized [`Pose`].
pub const POSE_BYTES: usize = 12 * 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("degenerate 6D rotation encoding: {0}")]
    DegenerateInput(&'static str),
    #[error("gimbal lock: pitch is within 1e-9 of ±90°, yaw is ill-defined (atan2 fallback {fallback_yaw})")]
    GimbalLock { fallback_yaw: f64 },
    #[error("matrix is not a proper rotation (orthonormality error {ortho_err:e}, det {det})")]
    NotARotation { ortho_err: f64, det: f64 },
    #[error("non-finite translation component")]
    NonFinite,
    #[error("pose buffer holds {0} bytes, expected {POSE_BYTES}")]
    BadLength(usize),
}

/// A 3×3 rotation matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    m: Mat3,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validates orthonormality and determinant before accepting `m`.
    pub fn from_matrix(m: Mat3) -> Result<Self, PoseError> {
        let r = Rotation { m };
        let ortho_err = r.orthonormality_error();
        let det = r.det();
        if !ortho_err.is_finite() || ortho_err >= ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL
        {
            return Err(PoseError::NotARotation { ortho_err, det });
        }
        Ok(r)
    }

    /// Wraps `m` without validation. Callers must guarantee it is a rotation.
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation { m }
    }

    pub fn rot_x(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rotation { m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]] }
    }

    pub fn rot_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rotation { m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]] }
    }

    pub fn rot_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rotation { m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// `Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        Rotation::rot_z(yaw)
            .mul(&Rotation::rot_y(pitch))
            .mul(&Rotation::rot_x(roll))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn col(&self, j: usize) -> Vec3 {
        [self.m[0][j], self.m[1][j], self.m[2][j]]
    }

    pub fn mul(&self, other: &Rotation) -> Rotation {
        Rotation { m: mat_mul(&self.m, &other.m) }
    }

    pub fn transpose(&self) -> Rotation {
        Rotation { m: mat_transpose(&self.m) }
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        mat_vec(&self.m, v)
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `‖MᵀM − I‖_∞` (max absolute entry).
    pub fn orthonormality_error(&self) -> f64 {
        let mtm = mat_mul(&mat_transpose(&self.m), &self.m);
        let mut err = 0.0f64;
        for (i, row) in mtm.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((v - target).abs());
            }
        }
        err
    }

    /// Re-orthonormalizes through the 6D encoding.
    pub fn renormalized(&self) -> Rotation {
        rot_from_6d(&rot_to_6d(self)).unwrap_or(*self)
    }
}

/// A rigid transform: `x ↦ rot·x + t`, translation in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rot: Rotation,
    pub t: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yaw = yaw_unchecked(self);
        write!(
            f,
            "Pose(t=[{:.4}, {:.4}, {:.4}], yaw={:.4} rad)",
            self.t[0], self.t[1], self.t[2], yaw
        )
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rot: Rotation::IDENTITY, t: [0.0; 3] };

    pub fn new(rot: Rotation, t: Vec3) -> Result<Self, PoseError> {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(PoseError::NonFinite);
        }
        Ok(Pose { rot, t })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose { rot: Rotation::IDENTITY, t }
    }

    pub fn from_parts(rot: Rotation, t: Vec3) -> Self {
        Pose { rot, t }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        add(&self.rot.apply(p), &self.t)
    }

    /// 4×4 homogeneous matrix, row-major.
    pub fn to_homogeneous(&self) -> [[f64; 4]; 4] {
        let m = self.rot.matrix();
        [
            [m[0][0], m[0][1], m[0][2], self.t[0]],
            [m[1][0], m[1][1], m[1][2], self.t[1]],
            [m[2][0], m[2][1], m[2][2], self.t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn renormalized(&self) -> Pose {
        Pose { rot: self.rot.renormalized(), t: self.t }
    }

    /// Largest absolute difference over rotation entries and translation.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let mut d = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.rot.m[i][j] - other.rot.m[i][j]).abs());
            }
            d = d.max((self.t[i] - other.t[i]).abs());
        }
        d
    }

    /// 12 little-endian `f64`: row-major rotation, then translation.
    pub fn to_le_bytes(&self) -> [u8; POSE_BYTES] {
        let mut out = [0u8; POSE_BYTES];
        let values = self
            .rot
            .m
            .iter()
            .flat_map(|row| row.iter().copied())
            .chain(self.t.iter().copied());
        for (chunk, v) in out.chunks_exact_mut(8).zip(values) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Pose, PoseError> {
        if bytes.len() != POSE_BYTES {
            return Err(PoseError::BadLength(bytes.len()));
        }
        let mut vals = [0.0f64; 12];
        for (v, chunk) in vals.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        let m = [
            [vals[0], vals[1], vals[2]],
            [vals[3], vals[4], vals[5]],
            [vals[6], vals[7], vals[8]],
        ];
        Pose::new(Rotation::from_matrix(m)?, [vals[9], vals[10], vals[11]])
    }
}

/// Homogeneous product `a · b`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rot: a.rot.mul(&b.rot),
        t: add(&a.rot.apply(&b.t), &a.t),
    }
}

pub fn inverse(p: &Pose) -> Pose {
    let rt = p.rot.transpose();
    let t = rt.apply(&p.t);
    Pose { rot: rt, t: [-t[0], -t[1], -t[2]] }
}

/// Composes left to right, renormalizing the rotation every
/// [`RENORMALIZE_EVERY`] factors to bound round-off drift.
pub fn compose_chain(poses: &[Pose]) -> Pose {
    let mut acc = Pose::IDENTITY;
    for (i, p) in poses.iter().enumerate() {
        acc = compose(&acc, p);
        if (i + 1) % RENORMALIZE_EVERY == 0 {
            acc = acc.renormalized();
        }
    }
    acc
}

/// Operand order of the odometry warp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpOrder {
    /// `P̂¹ · Ô²ʷ · (Ô¹ʷ)⁻¹`, the operand order as usually printed.
    Printed,
    /// `(Ô²ʷ)⁻¹ · Ô¹ʷ · P̂¹`, which maps a gate pose seen from the drone at
    /// time 1 into the drone frame at time 2 under this crate's frame
    /// conventions. It is the only order that reproduces the ground-truth
    /// relation `P² = (D²)⁻¹·D¹·P¹`, hence the default.
    #[default]
    Textbook,
}

impl WarpOrder {
    /// Constant left and right factors `(L, R)` so that the warp reads
    /// `L · P̂¹ · R`.
    pub fn factors(self, o1: &Pose, o2: &Pose) -> (Pose, Pose) {
        match self {
            WarpOrder::Printed => (Pose::IDENTITY, compose(o2, &inverse(o1))),
            WarpOrder::Textbook => (compose(&inverse(o2), o1), Pose::IDENTITY),
        }
    }

    pub fn warp(self, p1_hat: &Pose, o1: &Pose, o2: &Pose) -> Pose {
        match self {
            WarpOrder::Printed => warp_prediction(p1_hat, o1, o2),
            WarpOrder::Textbook => warp_prediction_alt(p1_hat, o1, o2),
        }
    }
}

/// Warps a gate pose predicted at time 1 with the literal operand order
/// `P̂¹ · Ô²ʷ · (Ô¹ʷ)⁻¹`; `o1`, `o2` are drone→world odometry poses.
pub fn warp_prediction(p1_hat: &Pose, o1: &Pose, o2: &Pose) -> Pose {
    compose(&compose(p1_hat, o2), &inverse(o1))
}

/// Warps a gate pose predicted at time 1 into the drone frame at time 2:
/// `(Ô²ʷ)⁻¹ · Ô¹ʷ · P̂¹`.
pub fn warp_prediction_alt(p1_hat: &Pose, o1: &Pose, o2: &Pose) -> Pose {
    compose(&compose(&inverse(o2), o1), p1_hat)
}

/// First two columns of a rotation matrix, column-stacked.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub fn first(&self) -> Vec3 {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn second(&self) -> Vec3 {
        [self.0[3], self.0[4], self.0[5]]
    }
}

pub fn rot_to_6d(r: &Rotation) -> Rot6D {
    let c0 = r.col(0);
    let c1 = r.col(1);
    Rot6D([c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]])
}

/// Gram–Schmidt decode of a 6D encoding.
pub fn rot_from_6d(v: &Rot6D) -> Result<Rotation, PoseError> {
    Ok(gram_schmidt(v)?.rotation())
}

/// Intermediate quantities of the Gram–Schmidt decode, kept for
/// differentiating through it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GramSchmidt {
    pub b: Vec3,
    pub a_norm: f64,
    pub u_norm: f64,
    pub c1: Vec3,
    pub c2: Vec3,
    pub c3: Vec3,
}

impl GramSchmidt {
    pub fn rotation(&self) -> Rotation {
        Rotation::from_matrix_unchecked([
            [self.c1[0], self.c2[0], self.c3[0]],
            [self.c1[1], self.c2[1], self.c3[1]],
            [self.c1[2], self.c2[2], self.c3[2]],
        ])
    }

    /// Pulls gradients on the three output columns back onto the 6D input.
    pub fn backward(&self, g1: &Vec3, g2: &Vec3, g3: &Vec3) -> [f64; 6] {
        // c3 = c1 × c2
        let mut gc1 = add(g1, &cross(&self.c2, g3));
        let gc2 = add(g2, &cross(g3, &self.c1));
        // c2 = u / ‖u‖
        let gu = scale(&project_out(&gc2, &self.c2), 1.0 / self.u_norm);
        // u = b − (c1·b) c1
        let c1b = dot(&self.c1, &self.b);
        let gb = project_out(&gu, &self.c1);
        let c1gu = dot(&self.c1, &gu);
        for k in 0..3 {
            gc1[k] -= c1b * gu[k] + self.b[k] * c1gu;
        }
        // c1 = a / ‖a‖
        let ga = scale(&project_out(&gc1, &self.c1), 1.0 / self.a_norm);
        [ga[0], ga[1], ga[2], gb[0], gb[1], gb[2]]
    }
}

pub(crate) fn gram_schmidt(v: &Rot6D) -> Result<GramSchmidt, PoseError> {
    if v.0.iter().any(|x| !x.is_finite()) {
        return Err(PoseError::DegenerateInput("non-finite component"));
    }
    let a = v.first();
    let b = v.second();
    let a_norm = norm(&a);
    if a_norm <= DEGENERATE_NORM {
        return Err(PoseError::DegenerateInput("first column has near-zero norm"));
    }
    let c1 = scale(&a, 1.0 / a_norm);
    let u = sub(&b, &scale(&c1, dot(&c1, &b)));
    let u_norm = norm(&u);
    if u_norm <= DEGENERATE_NORM {
        return Err(PoseError::DegenerateInput("columns are near-parallel"));
    }
    let c2 = scale(&u, 1.0 / u_norm);
    let c3 = cross(&c1, &c2);
    Ok(GramSchmidt { b, a_norm, u_norm, c1, c2, c3 })
}

/// Network output layout: position followed by the 6D rotation encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseVector9 {
    pub t: Vec3,
    pub r6: Rot6D,
}

impl PoseVector9 {
    pub fn to_array(&self) -> [f64; 9] {
        let r = &self.r6.0;
        [self.t[0], self.t[1], self.t[2], r[0], r[1], r[2], r[3], r[4], r[5]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 9, "pose vector must have 9 components");
        PoseVector9 {
            t: [v[0], v[1], v[2]],
            r6: Rot6D([v[3], v[4], v[5], v[6], v[7], v[8]]),
        }
    }
}

pub fn pose_to_vector9(p: &Pose) -> PoseVector9 {
    PoseVector9 { t: p.t, r6: rot_to_6d(&p.rot) }
}

pub fn vector9_to_pose(v: &PoseVector9) -> Result<Pose, PoseError> {
    Pose::new(rot_from_6d(&v.r6)?, v.t)
}

/// Wraps an angle to `(-π, π]`; `-π` maps to `+π`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = theta.rem_euclid(two_pi);
    if w > PI {
        w - two_pi
    } else {
        w
    }
}

/// Yaw of the Z-Y-X Euler decomposition, `atan2(R₁₀, R₀₀)`.
pub fn yaw_of(p: &Pose) -> Result<f64, PoseError> {
    let m = p.rot.matrix();
    let yaw = yaw_unchecked(p);
    if m[2][0].abs() > 1.0 - ROTATION_TOL {
        return Err(PoseError::GimbalLock { fallback_yaw: yaw });
    }
    Ok(yaw)
}

/// [`yaw_of`] without the gimbal-lock check.
pub fn yaw_unchecked(p: &Pose) -> f64 {
    let m = p.rot.matrix();
    wrap_angle(m[1][0].atan2(m[0][0]))
}

/// `(yaw, pitch, roll)` of the Z-Y-X decomposition.
pub fn euler_zyx(r: &Rotation) -> (f64, f64, f64) {
    let m = r.matrix();
    let pitch = (-m[2][0]).clamp(-1.0, 1.0).asin();
    let yaw = m[1][0].atan2(m[0][0]);
    let roll = m[2][1].atan2(m[2][2]);
    (wrap_angle(yaw), pitch, wrap_angle(roll))
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub(crate) fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub(crate) fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `(I − n nᵀ) g` for a unit vector `n`.
fn project_out(g: &Vec3, n: &Vec3) -> Vec3 {
    sub(g, &scale(n, dot(n, g)))
}
