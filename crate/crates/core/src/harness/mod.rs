//! Batch experiments over synthetic scenes: trial sampling, running the
//! verifiers, confusion accounting and report files.

mod report;
mod run;

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, Pose};
use crate::monitor::{MonitorConfig, MonitorError};
use crate::scene::{OracleFlowConfig, SceneError, SceneKind};

pub use report::{
    emit_reports, emit_summary, read_summary_settings, read_trials_csv, render_scatter_svg, report_from_csv, summary_csv, trials_csv, CsvRow,
    TrialsCsvWriter,
};
pub use run::{run_experiment, run_experiment_streaming, summarize, Confusion, ConfusionSummary, MethodOutcome, MethodSummary, TrialRecord};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "VERF_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Verifier variants a run can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Light,
    /// VERF-Light with the true essential matrix injected.
    LightTrueE,
    Pnp,
    Disparity,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [MethodKind::Light, MethodKind::LightTrueE, MethodKind::Pnp, MethodKind::Disparity];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Light => "light",
            MethodKind::LightTrueE => "light_true_e",
            MethodKind::Pnp => "pnp",
            MethodKind::Disparity => "disparity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub n_points: usize,
    pub extent: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { kind: SceneKind::RandomBox, n_points: 500, extent: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    /// Probability that a trial's error is drawn from the low regime `[0, ε]`.
    pub low_probability: f64,
    /// Upper bound of the high regime `(ε, k·ε]` as a multiple of `ε`.
    pub high_factor: f64,
    /// When set, every trial's error is exactly this multiple of `ε`.
    pub fixed_ratio: Option<f64>,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self { low_probability: 0.5, high_factor: 4.0, fixed_ratio: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_trials: usize,
    /// Error radius in unscaled scene units.
    pub epsilon: f64,
    /// Global similarity factor applied to scene, poses and `epsilon`.
    pub scale: f64,
    pub scene: SceneSpec,
    pub intrinsics: CameraIntrinsics,
    pub regimes: RegimeConfig,
    pub flow: OracleFlowConfig,
    pub methods: Vec<MethodKind>,
    /// Verifier settings; `epsilon` and the RANSAC seed are set per trial.
    pub monitor: MonitorConfig,
    /// Errors within `[lo·ε, hi·ε]` are left out of the band-excluded tallies.
    pub exclusion_band: [f64; 2],
    pub parallel: bool,
    /// Record per-method wall time; off keeps outputs byte-reproducible.
    pub record_timing: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_trials: 200,
            epsilon: 0.05,
            scale: 1.0,
            scene: SceneSpec::default(),
            intrinsics: CameraIntrinsics::centered(500.0, 640, 480),
            regimes: RegimeConfig::default(),
            flow: OracleFlowConfig { noise_sigma_px: 0.5, outlier_fraction: 0.1, ..OracleFlowConfig::default() },
            methods: vec![MethodKind::Light, MethodKind::Pnp, MethodKind::Disparity],
            monitor: MonitorConfig::default(),
            exclusion_band: [0.8, 1.2],
            parallel: false,
            record_timing: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Replace the seed with `VERF_SEED` when set.
    pub fn apply_env_seed(&mut self) -> Result<(), HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn scaled_epsilon(&self) -> f64 {
        self.epsilon * self.scale
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("scale must be positive");
        }
        if !(self.regimes.high_factor > 1.0 && self.regimes.high_factor.is_finite()) {
            return bad("regimes.high_factor must exceed 1");
        }
        if !(0.0..=1.0).contains(&self.regimes.low_probability) {
            return bad("regimes.low_probability must be in [0, 1]");
        }
        if self.regimes.fixed_ratio.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
            return bad("regimes.fixed_ratio must be non-negative");
        }
        if self.scene.n_points < 10 || !(self.scene.extent > 0.0) {
            return bad("scene needs at least 10 points and a positive extent");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        let [lo, hi] = self.exclusion_band;
        if !(lo <= hi && lo >= 0.0) {
            return bad("exclusion_band must be [lo, hi] with 0 <= lo <= hi");
        }
        self.intrinsics.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.flow.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        MonitorConfig { epsilon: self.scaled_epsilon(), ..self.monitor }.validate()?;
        Ok(())
    }
}

/// One sampled trial in scaled scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub id: usize,
    pub true_pose: Pose,
    pub estimated_pose: Pose,
    pub true_error: f64,
    pub low_regime: bool,
}

/// Sample true camera poses around the scene and perturbed estimates.
pub fn sample_trials(cfg: &ExperimentConfig, centroid: &Vector3<f64>) -> Result<Vec<Trial>, HarnessError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extent = cfg.scene.extent;
    (0..cfg.n_trials)
        .map(|id| {
            let radius = rng.random_range(2.0 * extent..=4.0 * extent);
            let azimuth = rng.random_range(0.0..2.0 * PI);
            let elevation = rng.random_range(35f64.to_radians()..=85f64.to_radians());
            let roll = rng.random_range(-10f64.to_radians()..=10f64.to_radians());
            let eye = centroid + radius * Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin());
            let look = Pose::look_at(eye, *centroid, Vector3::z()).map_err(|e| HarnessError::Config(e.to_string()))?;
            let rolled = look.compose(&Pose::new(*Rotation3::from_axis_angle(&Vector3::z_axis(), roll).matrix(), Vector3::zeros()).expect("rotation"));

            let dir = loop {
                let v = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let n: f64 = v.norm();
                if n > 1e-9 {
                    break v / n;
                }
            };
            let low = rng.random_bool(cfg.regimes.low_probability);
            let magnitude = if let Some(ratio) = cfg.regimes.fixed_ratio {
                ratio * cfg.epsilon
            } else if low {
                rng.random_range(0.0..=cfg.epsilon)
            } else {
                let u: f64 = rng.random_range(0.0..1.0);
                // (ε, kε]: flip the half-open draw so ε itself is excluded
                cfg.epsilon * (cfg.regimes.high_factor - u * (cfg.regimes.high_factor - 1.0))
            };
            let true_pose = rolled.scaled(cfg.scale);
            let offset = dir * (magnitude * cfg.scale);
            Ok(Trial {
                id,
                true_pose,
                estimated_pose: true_pose.translated(&offset),
                true_error: offset.norm(),
                low_regime: magnitude <= cfg.epsilon,
            })
        })
        .collect()
}
