//! Robust estimation of relative and absolute camera geometry.
//!
//! Both estimators share one hypothesize-and-verify loop ([`consensus`]) that
//! draws every sample from its own RNG stream keyed by `(seed, iteration)`,
//! so results do not depend on how hypotheses are scheduled across threads.

mod consensus;
mod essential;
mod five_point;
mod pnp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{GeomError, NormalizedPoint, PixelPoint};

pub use essential::{eight_point, estimate_essential_ransac, EssentialEstimate};
pub use five_point::five_point;
pub use pnp::{dlt_pose, refine_pose, reprojection_error, solve_pnp_ransac, PnpEstimate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustError {
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("best model has {inliers} inliers, need at least {needed}")]
    NoConsensus { inliers: usize, needed: usize },
    #[error("every sampled hypothesis was degenerate")]
    AllHypothesesDegenerate,
    #[error("refinement did not reach the inlier threshold (mean error {error_px:.3} px)")]
    Diverged { error_px: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// Minimal solver used to generate essential-matrix hypotheses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimalSolver {
    #[default]
    EightPoint,
    FivePoint,
}

impl MinimalSolver {
    pub fn sample_size(self) -> usize {
        match self {
            MinimalSolver::EightPoint => 8,
            MinimalSolver::FivePoint => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Inlier threshold δ in pixels; Sampson distance for essential
    /// matrices, reprojection error for PnP.
    pub sampson_threshold_px: f64,
    pub max_iterations: usize,
    /// Probability of drawing at least one all-inlier sample, used for
    /// adaptive termination.
    pub confidence: f64,
    pub seed: u64,
    pub solver: MinimalSolver,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { sampson_threshold_px: 2.0, max_iterations: 2000, confidence: 0.999, seed: 0, solver: MinimalSolver::EightPoint }
    }
}

impl RansacParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), RobustError> {
        if !(self.sampson_threshold_px > 0.0 && self.sampson_threshold_px.is_finite()) {
            return Err(RobustError::InvalidParams("threshold must be positive".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RobustError::InvalidParams("confidence must be in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(RobustError::InvalidParams("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Calibrated correspondence between image `a` and image `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p_a: NormalizedPoint,
    pub p_b: NormalizedPoint,
    /// Pixel location in image `a` before calibration.
    pub source_pixel: PixelPoint,
}
