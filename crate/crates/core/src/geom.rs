//! Two-view geometry primitives.
//!
//! Conventions used throughout the crate:
//!
//! * A [`Pose`] is camera-to-world: `X_world = R * X_cam + position`.
//! * Camera frame is `+z` forward, `+x` right, `+y` down.
//! * The epipolar constraint is `r_jᵀ E r_i = 0` with `E = R [b]ₓ`, where `R`
//!   rotates camera-`i` axes into camera-`j` axes and `b` is the unit position
//!   of camera `j`'s centre expressed in camera `i`'s frame. A point therefore
//!   moves between frames as `X_j = R (X_i − b·s)` for some scale `s > 0`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `‖RᵀR − I‖_F` accepted for a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Minimum angle between two rays (radians) before they count as parallel.
pub const MIN_RAY_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("rotation is not orthonormal with determinant +1 (deviation {0:.3e})")]
    InvalidRotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("camera centres coincide, relative translation is undefined")]
    DegenerateBaseline,
    #[error("point maps to a null epipolar line (it is the epipole)")]
    DegeneratePoint,
    #[error("two decomposition candidates tie for maximum cheiral consensus ({0} points each)")]
    AmbiguousCheirality(usize),
    #[error("rays are parallel, triangulation is undefined")]
    ParallelRays,
    #[error("triangulated point lies behind a camera")]
    PointBehindCamera,
    #[error("matrix is not a valid essential matrix")]
    NotEssential,
    #[error("at least one correspondence is required")]
    NoCorrespondences,
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    position: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Result<Self, GeomError> {
        let deviation = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if !deviation.is_finite() || deviation >= ROTATION_TOLERANCE || rotation.determinant() <= 0.0 {
            return Err(GeomError::InvalidRotation(deviation));
        }
        if !position.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidRotation(f64::NAN));
        }
        Ok(Self { rotation, position })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), position: Vector3::zeros() }
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image `-y`
    /// points roughly along `up`).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, GeomError> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(GeomError::DegenerateBaseline);
        }
        let z = forward.normalize();
        let mut x = z.cross(&(-up));
        if x.norm() < 1e-9 {
            // up is parallel to the viewing direction, pick any perpendicular
            let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            x = helper.cross(&z);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn world_to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (world - self.position)
    }

    pub fn camera_to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * cam + self.position
    }

    /// Same orientation, position moved by `offset` (world frame).
    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self { rotation: self.rotation, position: self.position + offset }
    }

    /// Same orientation, position moved by `offset` expressed in this camera's frame.
    pub fn translated_local(&self, offset: &Vector3<f64>) -> Self {
        self.translated(&(self.rotation * offset))
    }

    /// Interpret `relative` as a pose expressed in this camera's frame and
    /// return it in the world frame.
    pub fn compose(&self, relative: &Pose) -> Self {
        Self {
            rotation: self.rotation * relative.rotation,
            position: self.rotation * relative.position + self.position,
        }
    }

    /// Scale the position about the world origin.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { rotation: self.rotation, position: self.position * factor }
    }

    /// Row-major `[R | t]`, 12 numbers.
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.position[r];
        }
        out
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self, GeomError> {
        if values.len() != 12 {
            return Err(GeomError::WrongLength { expected: 12, got: values.len() });
        }
        let rotation = Matrix3::from_fn(|r, c| values[r * 4 + c]);
        let position = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, position)
    }

    /// Rotation angle (radians) between the orientations of two poses.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }
}

/// Angle of a rotation matrix.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    sin.atan2((r.trace() - 1.0) / 2.0)
}

/// Angle between two 3-vectors.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form stays accurate for tiny angles
    a.cross(b).norm().atan2(a.dot(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeomError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let bad = |msg: &str| Err(GeomError::InvalidIntrinsics(msg.to_string()));
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return bad("cx must lie inside the image");
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return bad("cy must lie inside the image");
        }
        Ok(())
    }

    /// Project a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, cam: &Vector3<f64>) -> Option<PixelPoint> {
        if cam.z <= 0.0 {
            return None;
        }
        Some(uncalibrate(&NormalizedPoint::new(cam.x / cam.z, cam.y / cam.z), self))
    }

    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }

    /// Equal-focal-length camera with the principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self { fx: focal, fy: focal, cx: width as f64 / 2.0, cy: height as f64 / 2.0, width, height }
    }
}

/// Calibrated image coordinate with implied homogeneous `1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint {
    pub x: f64,
    pub y: f64,
}

impl NormalizedPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }

    /// Perspective division of a camera-frame point.
    pub fn from_camera(cam: &Vector3<f64>) -> Self {
        Self::new(cam.x / cam.z, cam.y / cam.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

pub fn calibrate(p: &PixelPoint, k: &CameraIntrinsics) -> NormalizedPoint {
    NormalizedPoint::new((p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy)
}

pub fn uncalibrate(p: &NormalizedPoint, k: &CameraIntrinsics) -> PixelPoint {
    PixelPoint::new(p.x * k.fx + k.cx, p.y * k.fy + k.cy)
}

/// Cross-product matrix: `skew(v) * b == v × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rank-2 matrix with singular values `(1, 1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Project an arbitrary 3×3 matrix onto the normalized essential manifold
    /// by replacing its singular values with `(1, 1, 0)`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeomError> {
        if !m.iter().all(|v| v.is_finite()) || m.norm() == 0.0 {
            return Err(GeomError::NotEssential);
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeomError::NotEssential),
        };
        let s = svd.singular_values;
        let smallest = s.imin();
        let mut diag = Vector3::new(1.0, 1.0, 1.0);
        diag[smallest] = 0.0;
        Ok(Self(u * Matrix3::from_diagonal(&diag) * v_t))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Singular values sorted in decreasing order.
    pub fn singular_values(&self) -> Vector3<f64> {
        let mut s = self.0.singular_values();
        s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        s
    }
}

/// Relative motion between two calibrated cameras in the `E = R [b]ₓ` form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMotion {
    /// Rotates camera-`i` axes into camera-`j` axes.
    pub rotation: Matrix3<f64>,
    /// Unit direction to camera `j`'s centre, in camera `i`'s frame.
    pub baseline: Vector3<f64>,
}

impl RelativeMotion {
    pub fn between(pose_i: &Pose, pose_j: &Pose) -> Result<Self, GeomError> {
        let offset = pose_j.position - pose_i.position;
        let local = pose_i.rotation.transpose() * offset;
        let scale = pose_i.position.norm().max(pose_j.position.norm()).max(1.0);
        if local.norm() <= 1e-12 * scale {
            return Err(GeomError::DegenerateBaseline);
        }
        Ok(Self {
            rotation: pose_j.rotation.transpose() * pose_i.rotation,
            baseline: local.normalize(),
        })
    }

    pub fn essential(&self) -> Result<EssentialMatrix, GeomError> {
        EssentialMatrix::from_matrix(&(self.rotation * skew(&self.baseline)))
    }

    /// Two-view triangulation in camera `i`'s frame with the baseline taken as
    /// unit length. Returns the point and its depths in both cameras.
    pub fn triangulate(&self, p_i: &NormalizedPoint, p_j: &NormalizedPoint) -> Result<(Vector3<f64>, f64, f64), GeomError> {
        let ray_i = p_i.homogeneous();
        let ray_j = self.rotation.transpose() * p_j.homogeneous();
        let (point, lambda_i, lambda_j) = closest_point(&Vector3::zeros(), &ray_i, &self.baseline, &ray_j)?;
        Ok((point, lambda_i, lambda_j))
    }
}

/// Least-squares intersection of two rays `o_a + λ_a d_a` and `o_b + λ_b d_b`.
/// Returns the midpoint of the closest approach and both ray parameters.
fn closest_point(
    o_a: &Vector3<f64>,
    d_a: &Vector3<f64>,
    o_b: &Vector3<f64>,
    d_b: &Vector3<f64>,
) -> Result<(Vector3<f64>, f64, f64), GeomError> {
    if angle_between(d_a, d_b) < MIN_RAY_ANGLE {
        return Err(GeomError::ParallelRays);
    }
    // [d_a, -d_b] [λ_a, λ_b]ᵀ = o_b - o_a
    let rhs = o_b - o_a;
    let ata = Matrix2::new(d_a.dot(d_a), -d_a.dot(d_b), -d_a.dot(d_b), d_b.dot(d_b));
    let atb = Vector2::new(d_a.dot(&rhs), -d_b.dot(&rhs));
    let lambdas = ata.try_inverse().ok_or(GeomError::ParallelRays)? * atb;
    let on_a = o_a + d_a * lambdas.x;
    let on_b = o_b + d_b * lambdas.y;
    Ok(((on_a + on_b) * 0.5, lambdas.x, lambdas.y))
}

/// Normalized essential matrix relating image `i` to image `j`.
pub fn essential_from_poses(pose_i: &Pose, pose_j: &Pose) -> Result<EssentialMatrix, GeomError> {
    RelativeMotion::between(pose_i, pose_j)?.essential()
}

/// Signed algebraic residual `r_jᵀ E r_i`.
pub fn epipolar_residual(e: &EssentialMatrix, p_i: &NormalizedPoint, p_j: &NormalizedPoint) -> f64 {
    p_j.homogeneous().dot(&(e.0 * p_i.homogeneous()))
}

/// First-order geometric error of a correspondence, in pixels.
///
/// The residual and its gradient are evaluated in normalized coordinates and
/// the gradient is rescaled by the focal lengths, which is exactly the
/// Sampson distance of the pixel-space fundamental matrix `K⁻ᵀ E K⁻¹`.
pub fn sampson_distance(e: &EssentialMatrix, p_i: &NormalizedPoint, p_j: &NormalizedPoint, k: &CameraIntrinsics) -> f64 {
    let xi = p_i.homogeneous();
    let xj = p_j.homogeneous();
    let line_j = e.0 * xi;
    let line_i = e.0.transpose() * xj;
    let residual = xj.dot(&line_j);
    if residual == 0.0 {
        return 0.0;
    }
    let grad = (line_j.x / k.fx).powi(2)
        + (line_j.y / k.fy).powi(2)
        + (line_i.x / k.fx).powi(2)
        + (line_i.y / k.fy).powi(2);
    if grad == 0.0 {
        return f64::INFINITY;
    }
    residual.abs() / grad.sqrt()
}

/// Line `a x + b y + c = 0` in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EpipolarLine {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, GeomError> {
        if a == 0.0 && b == 0.0 {
            return Err(GeomError::DegeneratePoint);
        }
        Ok(Self { a, b, c })
    }

    pub fn normal_norm(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn evaluate(&self, p: &NormalizedPoint) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    pub fn signed_distance(&self, p: &NormalizedPoint) -> f64 {
        self.evaluate(p) / self.normal_norm()
    }

    /// Unit direction along the line.
    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(-self.b, self.a) / self.normal_norm()
    }
}

/// Epipolar line `E r_i` in image `j`.
pub fn epipolar_line_of(e: &EssentialMatrix, p_i: &NormalizedPoint) -> Result<EpipolarLine, GeomError> {
    let l = e.0 * p_i.homogeneous();
    let scale = e.0.norm() * p_i.homogeneous().norm();
    if l.x.hypot(l.y) <= 1e-12 * scale {
        return Err(GeomError::DegeneratePoint);
    }
    EpipolarLine::new(l.x, l.y, l.z)
}

/// Orthogonal projection of a point onto a line.
pub fn project_to_line(p: &NormalizedPoint, l: &EpipolarLine) -> NormalizedPoint {
    let n2 = l.a * l.a + l.b * l.b;
    let k = l.evaluate(p) / n2;
    NormalizedPoint::new(p.x - k * l.a, p.y - k * l.b)
}

/// Result of splitting an essential matrix into motion and cheiral inliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub motion: RelativeMotion,
    /// Per-correspondence flag: positive depth in both cameras under `motion`.
    pub cheiral_inliers: Vec<bool>,
}

impl Decomposition {
    pub fn inlier_count(&self) -> usize {
        self.cheiral_inliers.iter().filter(|&&f| f).count()
    }
}

/// The four `(R, ±b)` factorizations of `E`.
pub fn motion_candidates(e: &EssentialMatrix) -> Result<[RelativeMotion; 4], GeomError> {
    let svd = e.0.svd(true, true);
    let (mut u, mut v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeomError::NotEssential),
    };
    // order columns by singular value so the null direction is last
    let s = svd.singular_values;
    let null = s.imin();
    if null != 2 {
        u.swap_columns(null, 2);
        v_t.swap_rows(null, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned();
    // standard form is E ~ [t]ₓ R, so b = -Rᵀ t
    let make = |r: Matrix3<f64>, t: Vector3<f64>| RelativeMotion { rotation: r, baseline: -(r.transpose() * t) };
    Ok([make(r1, t), make(r1, -t), make(r2, t), make(r2, -t)])
}

/// Whether a correspondence triangulates in front of both cameras.
pub fn is_cheiral(motion: &RelativeMotion, p_i: &NormalizedPoint, p_j: &NormalizedPoint) -> bool {
    match motion.triangulate(p_i, p_j) {
        Ok((point, _, _)) => {
            let depth_i = point.z;
            let depth_j = (motion.rotation * (point - motion.baseline)).z;
            depth_i > 0.0 && depth_j > 0.0
        }
        Err(_) => false,
    }
}

/// Choose the factorization of `E` with maximum cheiral consensus.
pub fn decompose_essential(
    e: &EssentialMatrix,
    correspondences: &[(NormalizedPoint, NormalizedPoint)],
) -> Result<Decomposition, GeomError> {
    if correspondences.is_empty() {
        return Err(GeomError::NoCorrespondences);
    }
    let candidates = motion_candidates(e)?;
    let scored: Vec<Decomposition> = candidates
        .iter()
        .map(|motion| Decomposition {
            motion: *motion,
            cheiral_inliers: correspondences.iter().map(|(a, b)| is_cheiral(motion, a, b)).collect(),
        })
        .collect();
    let best = scored.iter().map(Decomposition::inlier_count).max().unwrap_or(0);
    let winners = scored.iter().filter(|d| d.inlier_count() == best).count();
    if winners > 1 {
        return Err(GeomError::AmbiguousCheirality(best));
    }
    Ok(scored.into_iter().find(|d| d.inlier_count() == best).expect("one winner"))
}

/// Linear two-view triangulation in the world frame.
pub fn triangulate(pose_a: &Pose, pose_b: &Pose, p_a: &NormalizedPoint, p_b: &NormalizedPoint) -> Result<Vector3<f64>, GeomError> {
    let baseline = pose_b.position - pose_a.position;
    let scale = pose_a.position.norm().max(pose_b.position.norm()).max(f64::MIN_POSITIVE);
    if baseline.norm() <= 1e-12 * scale {
        return Err(GeomError::ParallelRays);
    }
    let d_a = pose_a.rotation * p_a.homogeneous();
    let d_b = pose_b.rotation * p_b.homogeneous();
    let (point, lambda_a, lambda_b) = closest_point(&pose_a.position, &d_a, &pose_b.position, &d_b)?;
    // rays have unit z in their camera frames, so λ is the depth
    if lambda_a <= 0.0 || lambda_b <= 0.0 {
        return Err(GeomError::PointBehindCamera);
    }
    Ok(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Matrix3<f64> {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(-max_angle..max_angle);
        *nalgebra::Rotation3::from_scaled_axis(axis.normalize() * angle).matrix()
    }

    fn random_pair(rng: &mut ChaCha8Rng) -> (Pose, Pose) {
        let a = Pose::new(random_rotation(rng, 0.3), Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -5.0)).unwrap();
        let b = Pose::new(
            random_rotation(rng, 0.3),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-5.5..-4.5)),
        )
        .unwrap();
        (a, b)
    }

    fn in_front_point(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    #[test]
    fn calibrate_examples() {
        let k = k();
        assert_eq!(calibrate(&PixelPoint::new(320.0, 240.0), &k), NormalizedPoint::new(0.0, 0.0));
        assert_eq!(calibrate(&PixelPoint::new(820.0, 240.0), &k), NormalizedPoint::new(1.0, 0.0));
        let p = calibrate(&PixelPoint::new(400.0, 300.0), &k);
        assert!((p.x - 0.16).abs() < 1e-15 && (p.y - 0.12).abs() < 1e-15);
        let back = uncalibrate(&p, &k);
        assert!((back.u - 400.0).abs() < 1e-12 && (back.v - 300.0).abs() < 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 500.0, 320.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 700.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 320.0, 0.0, 640, 480).is_err());
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(skew(&Vector3::x()), Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0));
        let v = skew(&Vector3::new(1.0, 2.0, 3.0)) * Vector3::new(4.0, 5.0, 6.0);
        assert_eq!(v, Vector3::new(-3.0, 6.0, -3.0));
        let s = skew(&Vector3::new(0.3, -2.0, 7.0));
        assert_eq!(s.transpose(), -s);
    }

    #[test]
    fn pose_rejects_non_rotation() {
        assert!(Pose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
        assert!(Pose::new(-Matrix3::identity(), Vector3::zeros()).is_err());
        let p = Pose::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(Pose::from_row_major(&p.to_row_major()).unwrap(), p);
        assert!(Pose::from_row_major(&[0.0; 11]).is_err());
    }

    #[test]
    fn essential_pure_x_translation() {
        let a = Pose::identity();
        let b = a.translated(&Vector3::new(1.0, 0.0, 0.0));
        let e = essential_from_poses(&a, &b).unwrap();
        let expected = skew(&Vector3::x());
        let m = e.matrix();
        // equal up to sign
        let err = (m - expected).norm().min((m + expected).norm());
        assert!(err < 1e-12, "{m}");
        assert_eq!(essential_from_poses(&a, &a), Err(GeomError::DegenerateBaseline));
    }

    #[test]
    fn essential_satisfies_epipolar_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, b) = random_pair(&mut rng);
            let e = essential_from_poses(&a, &b).unwrap();
            let s = e.singular_values();
            assert!((s[0] - 1.0).abs() < 1e-9 && (s[1] - 1.0).abs() < 1e-9 && s[2].abs() < 1e-9);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let x = in_front_point(&mut rng);
                let pa = NormalizedPoint::from_camera(&a.world_to_camera(&x));
                let pb = NormalizedPoint::from_camera(&b.world_to_camera(&x));
                worst = worst.max(epipolar_residual(&e, &pa, &pb).abs());
            }
            assert!(worst < 1e-10, "{worst}");
        }
    }

    #[test]
    fn essential_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = random_pair(&mut rng);
        let e1 = essential_from_poses(&a, &b).unwrap();
        let e2 = essential_from_poses(&a.scaled(37.0), &b.scaled(37.0)).unwrap();
        assert!((e1.matrix() - e2.matrix()).norm() < 1e-12);
    }

    #[test]
    fn residual_scales_with_perpendicular_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, b) = random_pair(&mut rng);
        let e = essential_from_poses(&a, &b).unwrap();
        let x = in_front_point(&mut rng);
        let pa = NormalizedPoint::from_camera(&a.world_to_camera(&x));
        let pb = NormalizedPoint::from_camera(&b.world_to_camera(&x));
        let line = epipolar_line_of(&e, &pa).unwrap();
        assert!(line.evaluate(&pb).abs() < 1e-10);
        let n = Vector2::new(line.a, line.b) / line.normal_norm();
        let d = 0.003;
        let moved = NormalizedPoint::new(pb.x + d * n.x, pb.y + d * n.y);
        let r = epipolar_residual(&e, &pa, &moved);
        assert!((r.abs() - d * line.normal_norm()).abs() < 1e-12);
    }

    #[test]
    fn sampson_zero_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = k();
        let (a, b) = random_pair(&mut rng);
        let e = essential_from_poses(&a, &b).unwrap();
        let x = in_front_point(&mut rng);
        let pa = NormalizedPoint::from_camera(&a.world_to_camera(&x));
        let pb = NormalizedPoint::from_camera(&b.world_to_camera(&x));
        assert!(sampson_distance(&e, &pa, &pb, &k) < 1e-9);
        let off = NormalizedPoint::new(pb.x + 0.004, pb.y - 0.002);
        let d1 = sampson_distance(&e, &pa, &off, &k);
        let d2 = sampson_distance(&e.transpose(), &off, &pa, &k);
        assert!(d1 > 0.0);
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn epipole_is_degenerate() {
        let a = Pose::identity();
        let b = a.translated(&Vector3::new(0.2, 0.1, 1.0));
        let e = essential_from_poses(&a, &b).unwrap();
        // the epipole in image a is the projection of camera b's centre
        let epipole = NormalizedPoint::new(0.2, 0.1);
        assert_eq!(epipolar_line_of(&e, &epipole), Err(GeomError::DegeneratePoint));
    }

    #[test]
    fn two_depths_share_a_line() {
        let a = Pose::identity();
        let b = Pose::new(*nalgebra::Rotation3::from_euler_angles(0.05, -0.02, 0.01).matrix(), Vector3::new(0.3, -0.1, 0.05)).unwrap();
        let e = essential_from_poses(&a, &b).unwrap();
        let ray = Vector3::new(0.1, -0.2, 1.0);
        let pa = NormalizedPoint::from_camera(&ray);
        let line = epipolar_line_of(&e, &pa).unwrap();
        for depth in [2.0, 9.0] {
            let pb = NormalizedPoint::from_camera(&b.world_to_camera(&(ray * depth)));
            assert!(line.evaluate(&pb).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let l = EpipolarLine::new(1.0, -1.0, 0.0).unwrap();
        assert_eq!(project_to_line(&NormalizedPoint::new(1.0, 1.0), &l), NormalizedPoint::new(1.0, 1.0));
        let p = project_to_line(&NormalizedPoint::new(1.0, 0.0), &l);
        assert!((p.x - 0.5).abs() < 1e-15 && (p.y - 0.5).abs() < 1e-15);
        assert!(EpipolarLine::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn projection_is_idempotent_and_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let l = EpipolarLine::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).unwrap();
            let p = NormalizedPoint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let q = project_to_line(&p, &l);
            assert!(l.evaluate(&q).abs() < 1e-12);
            let qq = project_to_line(&q, &l);
            assert!((qq.x - q.x).abs() < 1e-12 && (qq.y - q.y).abs() < 1e-12);
            let moved = (q.x - p.x).hypot(q.y - p.y);
            assert!((moved - l.signed_distance(&p).abs()).abs() < 1e-12);
            // dense sampling along the line never gets closer
            let dir = l.direction();
            for step in -200..=200 {
                let t = step as f64 * 0.02;
                let s = NormalizedPoint::new(q.x + t * dir.x, q.y + t * dir.y);
                assert!((s.x - p.x).hypot(s.y - p.y) >= moved - 1e-12);
            }
        }
    }

    #[test]
    fn decomposition_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let (a, b) = random_pair(&mut rng);
            let truth = RelativeMotion::between(&a, &b).unwrap();
            let e = truth.essential().unwrap();
            let corrs: Vec<_> = (0..10)
                .map(|_| {
                    let x = in_front_point(&mut rng);
                    (
                        NormalizedPoint::from_camera(&a.world_to_camera(&x)),
                        NormalizedPoint::from_camera(&b.world_to_camera(&x)),
                    )
                })
                .collect();
            let d = decompose_essential(&e, &corrs).unwrap();
            assert_eq!(d.inlier_count(), 10);
            assert!(rotation_angle(&(d.motion.rotation.transpose() * truth.rotation)) < 1e-8);
            assert!(angle_between(&d.motion.baseline, &truth.baseline) < 1e-8);
        }
    }

    fn behind_both(truth: &RelativeMotion) -> (NormalizedPoint, NormalizedPoint) {
        // a point behind both cameras still projects through the centre
        let x_i = Vector3::new(0.1, 0.05, -3.0);
        let x_j = truth.rotation * (x_i - truth.baseline);
        assert!(x_j.z < 0.0);
        (NormalizedPoint::from_camera(&x_i), NormalizedPoint::from_camera(&x_j))
    }

    #[test]
    fn behind_point_is_flagged() {
        let a = Pose::identity();
        let b = a.translated(&Vector3::new(0.5, 0.0, 0.1));
        let truth = RelativeMotion::between(&a, &b).unwrap();
        let e = truth.essential().unwrap();
        let mut corrs: Vec<_> = (0..10)
            .map(|i| {
                let x = Vector3::new(-0.5 + 0.1 * i as f64, 0.2 - 0.03 * i as f64, 4.0 + 0.2 * i as f64);
                (NormalizedPoint::from_camera(&x), NormalizedPoint::from_camera(&b.world_to_camera(&x)))
            })
            .collect();
        corrs.push(behind_both(&truth));
        let d = decompose_essential(&e, &corrs).unwrap();
        assert_eq!(d.inlier_count(), 10);
        assert!(!d.cheiral_inliers[10]);
    }

    #[test]
    fn straddling_points_are_ambiguous() {
        let a = Pose::identity();
        let b = a.translated(&Vector3::new(0.5, 0.0, 0.1));
        let truth = RelativeMotion::between(&a, &b).unwrap();
        let e = truth.essential().unwrap();
        let x = Vector3::new(0.2, -0.1, 4.0);
        let front = (NormalizedPoint::from_camera(&x), NormalizedPoint::from_camera(&b.world_to_camera(&x)));
        let corrs = vec![front, behind_both(&truth)];
        assert_eq!(decompose_essential(&e, &corrs), Err(GeomError::AmbiguousCheirality(1)));
        assert_eq!(decompose_essential(&e, &[]), Err(GeomError::NoCorrespondences));
    }

    #[test]
    fn triangulation_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let (a, b) = random_pair(&mut rng);
            let x = in_front_point(&mut rng);
            let pa = NormalizedPoint::from_camera(&a.world_to_camera(&x));
            let pb = NormalizedPoint::from_camera(&b.world_to_camera(&x));
            let got = triangulate(&a, &b, &pa, &pb).unwrap();
            assert!((got - x).norm() < 1e-8);
            let ra = NormalizedPoint::from_camera(&a.world_to_camera(&got));
            assert!((ra.x - pa.x).abs() < 1e-8 && (ra.y - pa.y).abs() < 1e-8);
        }
    }

    #[test]
    fn triangulation_errors() {
        let a = Pose::identity();
        let p = NormalizedPoint::new(0.1, 0.1);
        assert_eq!(triangulate(&a, &a, &p, &p), Err(GeomError::ParallelRays));
        let b = a.translated(&Vector3::new(1.0, 0.0, 0.0));
        // reflect a scene point behind camera a
        let x = Vector3::new(0.3, 0.2, -4.0);
        let pa = NormalizedPoint::from_camera(&a.world_to_camera(&x));
        let pb = NormalizedPoint::from_camera(&b.world_to_camera(&x));
        assert_eq!(triangulate(&a, &b, &pa, &pb), Err(GeomError::PointBehindCamera));
    }
}
