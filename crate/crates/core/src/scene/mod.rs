//! Synthetic scenes, a point-splat renderer, an exact flow oracle and a
//! pose-keyed image-directory backend.

mod directory;
mod oracle;
mod render;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::GrayImage;
use crate::geom::{CameraIntrinsics, Pose};

pub use directory::{load_image, save_png, ImageDirectoryBackend, Manifest, ManifestFlow, ManifestView, ViewKey};
pub use oracle::{OracleFlowBackend, OracleFlowConfig};
pub use render::{project_visible, SceneRenderer, VisiblePoint, SPLAT_RADIUS_PX, SPLAT_SIGMA_PX, SUBPIXEL_LATTICE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("no scene point projects into the frame")]
    EmptyView,
    #[error("invalid scene specification: {0}")]
    InvalidSpec(String),
    #[error("no stored view at the requested pose (nearest is {nearest_position:.3e} units / {nearest_rotation:.3e} rad away)")]
    PoseNotFound { nearest_position: f64, nearest_rotation: f64 },
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("cannot decode image {0}")]
    ImageDecode(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Something that can produce an image of the scene at a pose.
pub trait RenderBackend: Sync {
    fn intrinsics(&self) -> &CameraIntrinsics;
    fn render(&self, pose: &Pose) -> Result<GrayImage, SceneError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Points filling a cube (non-planar).
    RandomBox,
    /// Points on the plane `z = 0`.
    TexturedPlane,
    /// The plane perturbed by a smooth height function.
    Heightfield,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    /// Gray level; the luma of `rgb`.
    pub intensity: f32,
    pub rgb: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    points: Vec<ScenePoint>,
    min: Vector3<f64>,
    max: Vector3<f64>,
    kind: SceneKind,
    seed: u64,
}

pub const MIN_SCENE_POINTS: usize = 10;

impl SyntheticScene {
    pub fn from_points(points: Vec<ScenePoint>, kind: SceneKind, seed: u64) -> Result<Self, SceneError> {
        if points.is_empty() {
            return Err(SceneError::InvalidSpec("scene needs at least one point".into()));
        }
        if points.iter().any(|p| !p.position.iter().all(|c| c.is_finite())) {
            return Err(SceneError::InvalidSpec("non-finite point".into()));
        }
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for p in &points {
            min = min.inf(&p.position);
            max = max.sup(&p.position);
        }
        Ok(Self { points, min, max, kind, seed })
    }

    pub fn points(&self) -> &[ScenePoint] {
        &self.points
    }

    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.min, self.max)
    }

    pub fn kind(&self) -> SceneKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().map(|p| p.position).sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Uniformly scaled copy about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        let points = self.points.iter().map(|p| ScenePoint { position: p.position * factor, ..*p }).collect();
        Self { points, min: self.min * factor, max: self.max * factor, ..*self }
    }
}

/// Deterministic scene of `n_points` within `[-extent, extent]³`.
pub fn generate_scene(kind: SceneKind, n_points: usize, extent: f64, seed: u64) -> Result<SyntheticScene, SceneError> {
    if n_points < MIN_SCENE_POINTS {
        return Err(SceneError::InvalidSpec(format!("need at least {MIN_SCENE_POINTS} points, got {n_points}")));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(SceneError::InvalidSpec("extent must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy, phase) = (rng.random_range(0.8..1.6), rng.random_range(0.8..1.6), rng.random_range(0.0..std::f64::consts::TAU));
    let points = (0..n_points)
        .map(|_| {
            let x = rng.random_range(-extent..extent);
            let y = rng.random_range(-extent..extent);
            let z = match kind {
                SceneKind::RandomBox => rng.random_range(-extent..extent),
                SceneKind::TexturedPlane => 0.0,
                SceneKind::Heightfield => {
                    0.25 * extent * (fx * std::f64::consts::PI * x / extent + phase).sin() * (fy * std::f64::consts::PI * y / extent).cos()
                }
            };
            let rgb = [rng.random_range(0.25..1.0f32), rng.random_range(0.25..1.0f32), rng.random_range(0.25..1.0f32)];
            let intensity = rgb[0] * crate::flow::LUMA_WEIGHTS[0] + rgb[1] * crate::flow::LUMA_WEIGHTS[1] + rgb[2] * crate::flow::LUMA_WEIGHTS[2];
            ScenePoint { position: Vector3::new(x, y, z), intensity, rgb }
        })
        .collect();
    SyntheticScene::from_points(points, kind, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_is_exact() {
        let s = generate_scene(SceneKind::TexturedPlane, 300, 2.0, 1).unwrap();
        assert!(s.points().iter().all(|p| p.position.z.abs() < 1e-12));
    }

    #[test]
    fn box_is_not_planar() {
        for seed in 0..20 {
            let s = generate_scene(SceneKind::RandomBox, 500, 1.0, seed).unwrap();
            let c = s.centroid();
            let cov = s.points().iter().map(|p| (p.position - c) * (p.position - c).transpose()).sum::<nalgebra::Matrix3<f64>>();
            let ev = cov.symmetric_eigenvalues();
            assert!(ev.min() > 0.05 * ev.max(), "seed {seed}");
        }
    }

    #[test]
    fn heightfield_is_bounded_and_curved() {
        let s = generate_scene(SceneKind::Heightfield, 400, 2.0, 3).unwrap();
        let (min, max) = s.bounds();
        assert!(max.z - min.z > 0.1 && max.z <= 0.5 + 1e-12 && min.z >= -0.5 - 1e-12);
    }

    #[test]
    fn deterministic() {
        let a = generate_scene(SceneKind::RandomBox, 50, 1.0, 9).unwrap();
        let b = generate_scene(SceneKind::RandomBox, 50, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(SceneKind::RandomBox, 50, 1.0, 10).unwrap());
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(generate_scene(SceneKind::RandomBox, 9, 1.0, 0), Err(SceneError::InvalidSpec(_))));
    }
}
