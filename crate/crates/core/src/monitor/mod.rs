//! Position-estimate verifiers. Each turns a sensor image and a pose
//! estimate into a confidence that the estimate lies within `ε` of the true
//! camera position.
//!
//! Failures in the pipeline (nothing rendered, too few correspondences, no
//! essential matrix) are reported with confidence 0 and an incorrect
//! decision rather than as errors; `Err` is reserved for violated
//! preconditions.

mod disparity;
mod light;
mod pnp;

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::flow::{shi_tomasi, FlowError, GrayImage, ShiTomasiParams};
use crate::geom::{CameraIntrinsics, EssentialMatrix, GeomError, PixelPoint, Pose, RelativeMotion};
use crate::robust::RansacParams;
use crate::scene::{RenderBackend, SceneError};

pub use disparity::{disparity_check, disparity_confidence};
pub use light::{verf_light, verf_light_traced, LightSample};
pub use pnp::{pnp_confidence, verf_pnp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("invalid monitor configuration: {0}")]
    InvalidConfig(String),
    #[error("sensor image is {got:?}, intrinsics expect {expected:?}")]
    SensorSizeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("invalid override: {0}")]
    InvalidOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Light,
    Pnp,
    Disparity,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Light => "light",
            Method::Pnp => "pnp",
            Method::Disparity => "disparity",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Correct,
    Incorrect,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Correct => "correct",
            Decision::Incorrect => "incorrect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// Nothing of the scene is visible from a required viewpoint.
    EmptyRender,
    /// The render backend failed for another reason (e.g. no stored view).
    RenderFailed,
    TooFewFeatures,
    FlowFailed,
    EssentialFailed,
    /// Fewer than `min_inliers` points survived filtering.
    TooFewSurvivors,
    PnpDiverged,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::EmptyRender => "empty_render",
            FailureReason::RenderFailed => "render_failed",
            FailureReason::TooFewFeatures => "too_few_features",
            FailureReason::FlowFailed => "flow_failed",
            FailureReason::EssentialFailed => "essential_failed",
            FailureReason::TooFewSurvivors => "too_few_survivors",
            FailureReason::PnpDiverged => "pnp_diverged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            FailureReason::EmptyRender,
            FailureReason::RenderFailed,
            FailureReason::TooFewFeatures,
            FailureReason::FlowFailed,
            FailureReason::EssentialFailed,
            FailureReason::TooFewSurvivors,
            FailureReason::PnpDiverged,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    /// Acceptable position error, in scene units.
    pub epsilon: f64,
    pub light_sigma_px: f64,
    /// Standard deviation of the PnP offset norm, in scene units; `ε/4` when absent.
    pub pnp_sigma: Option<f64>,
    pub disparity_sigma_px: f64,
    pub confidence_cutoff: f64,
    /// Stereo baseline for VERF-PnP as a multiple of `ε`.
    pub pnp_baseline_factor: f64,
    pub min_inliers: usize,
    pub ransac: RansacParams,
    pub features: ShiTomasiParams,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            light_sigma_px: 0.5,
            pnp_sigma: None,
            disparity_sigma_px: 4.0,
            confidence_cutoff: 0.5,
            pnp_baseline_factor: 2.0,
            min_inliers: 10,
            ransac: RansacParams::default(),
            features: ShiTomasiParams::default(),
        }
    }
}

impl MonitorConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn pnp_sigma(&self) -> f64 {
        self.pnp_sigma.unwrap_or(self.epsilon / 4.0)
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.epsilon) {
            return Err(MonitorError::InvalidConfig("epsilon must be positive".into()));
        }
        if !positive(self.light_sigma_px) || !positive(self.pnp_sigma()) || !positive(self.disparity_sigma_px) {
            return Err(MonitorError::InvalidConfig("standard deviations must be positive".into()));
        }
        if !(self.confidence_cutoff > 0.0 && self.confidence_cutoff < 1.0) {
            return Err(MonitorError::InvalidConfig("confidence_cutoff must be in (0, 1)".into()));
        }
        if !positive(self.pnp_baseline_factor) {
            return Err(MonitorError::InvalidConfig("pnp_baseline_factor must be positive".into()));
        }
        self.ransac.validate().map_err(|e| MonitorError::InvalidConfig(e.to_string()))
    }

    pub fn decide(&self, confidence: f64) -> Decision {
        if confidence >= self.confidence_cutoff {
            Decision::Correct
        } else {
            Decision::Incorrect
        }
    }
}

/// True relative geometry between the estimate and the sensor, injected in
/// place of the estimated essential matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthEssentialOverride {
    pub essential: EssentialMatrix,
    /// Unit direction of the true camera centre in the estimate's camera frame.
    pub direction: Vector3<f64>,
}

impl TruthEssentialOverride {
    pub fn from_poses(x_est: &Pose, x_gt: &Pose) -> Result<Self, GeomError> {
        let motion = RelativeMotion::between(x_est, x_gt)?;
        Ok(Self { essential: motion.essential()?, direction: motion.baseline })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub method: Method,
    pub confidence: f64,
    pub decision: Decision,
    /// Estimated unit direction from the estimate to the true position, world frame.
    pub direction_estimate: Option<Vector3<f64>>,
    /// Correspondences entering each filtering stage.
    pub n: usize,
    pub n_prime: usize,
    pub n_double_prime: usize,
    /// PnP estimate of the true position minus the estimate, world frame.
    pub estimated_offset: Option<Vector3<f64>>,
    pub corrected_pose: Option<Pose>,
    pub failure_reason: Option<FailureReason>,
    /// Human-readable context for a failure.
    pub detail: Option<String>,
}

impl VerificationReport {
    fn new(method: Method) -> Self {
        Self {
            method,
            confidence: 0.0,
            decision: Decision::Incorrect,
            direction_estimate: None,
            n: 0,
            n_prime: 0,
            n_double_prime: 0,
            estimated_offset: None,
            corrected_pose: None,
            failure_reason: None,
            detail: None,
        }
    }

    fn failed(mut self, reason: FailureReason, detail: impl Into<String>) -> Self {
        self.confidence = 0.0;
        self.decision = Decision::Incorrect;
        self.corrected_pose = None;
        self.failure_reason = Some(reason);
        self.detail = Some(detail.into());
        self
    }

    fn scored(mut self, confidence: f64, cfg: &MonitorConfig) -> Self {
        self.confidence = confidence.clamp(0.0, 1.0);
        self.decision = cfg.decide(self.confidence);
        self
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn check_inputs(sensor: &GrayImage, k: &CameraIntrinsics, cfg: &MonitorConfig) -> Result<(), MonitorError> {
    cfg.validate()?;
    if sensor.width() != k.width || sensor.height() != k.height {
        return Err(MonitorError::SensorSizeMismatch { expected: (k.width, k.height), got: (sensor.width(), sensor.height()) });
    }
    Ok(())
}

pub(crate) fn render_view(render: &dyn RenderBackend, pose: &Pose) -> Result<GrayImage, (FailureReason, String)> {
    render.render(pose).map_err(|e| match e {
        SceneError::EmptyView => (FailureReason::EmptyRender, e.to_string()),
        other => (FailureReason::RenderFailed, other.to_string()),
    })
}

pub(crate) fn detect(img: &GrayImage, cfg: &MonitorConfig) -> Result<Vec<PixelPoint>, (FailureReason, String)> {
    shi_tomasi(img, &cfg.features).map_err(|e| (FailureReason::TooFewFeatures, e.to_string()))
}

pub(crate) fn flow_failure(e: FlowError) -> (FailureReason, String) {
    (FailureReason::FlowFailed, e.to_string())
}

#[cfg(test)]
pub(crate) mod fixture {
    use std::sync::Arc;

    use nalgebra::Vector3;

    use crate::geom::{CameraIntrinsics, Pose};
    use crate::scene::{generate_scene, OracleFlowBackend, OracleFlowConfig, SceneKind, SceneRenderer, SyntheticScene};

    pub const EPS: f64 = 0.125;

    pub fn k() -> CameraIntrinsics {
        CameraIntrinsics::centered(500.0, 640, 480)
    }

    pub fn scene(kind: SceneKind) -> Arc<SyntheticScene> {
        Arc::new(generate_scene(kind, 500, 1.0, 7).unwrap())
    }

    pub fn gt_pose() -> Pose {
        Pose::look_at(Vector3::new(1.2, -2.2, 1.6), Vector3::zeros(), Vector3::z()).unwrap()
    }

    pub fn backends(scene: Arc<SyntheticScene>, gt: Pose, cfg: OracleFlowConfig) -> (SceneRenderer, OracleFlowBackend) {
        (SceneRenderer::new(scene.clone(), k()), OracleFlowBackend::new(scene, k(), gt, cfg))
    }

    /// Estimate displaced from `gt` by `magnitude` along a fixed oblique direction.
    pub fn estimate(gt: &Pose, magnitude: f64) -> Pose {
        gt.translated(&(Vector3::new(0.6, 0.3, -0.5).normalize() * magnitude))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Φ by its Maclaurin series, independent of erfc.
    fn series_cdf(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for k in 1..50 {
            term *= -x * x / 2.0 / k as f64;
            sum += term / (2 * k + 1) as f64;
        }
        0.5 + sum / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn cdf_matches_series() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            assert!((normal_cdf(x) - series_cdf(x)).abs() < 1e-7, "{x}");
        }
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(MonitorConfig::default().validate().is_ok());
        assert!(MonitorConfig::with_epsilon(0.0).validate().is_err());
        assert!(MonitorConfig { confidence_cutoff: 1.0, ..Default::default() }.validate().is_err());
        assert!(MonitorConfig { light_sigma_px: -1.0, ..Default::default() }.validate().is_err());
        assert_eq!(MonitorConfig::with_epsilon(2.0).pnp_sigma(), 0.5);
    }

    #[test]
    fn decision_boundary() {
        let cfg = MonitorConfig::default();
        assert_eq!(cfg.decide(0.5), Decision::Correct);
        assert_eq!(cfg.decide(0.4999999), Decision::Incorrect);
    }

    #[test]
    fn failure_names_round_trip() {
        for r in [FailureReason::EmptyRender, FailureReason::PnpDiverged, FailureReason::TooFewSurvivors] {
            assert_eq!(FailureReason::parse(r.as_str()), Some(r));
        }
        assert_eq!(FailureReason::parse("nope"), None);
    }
}
