use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{sample_trials, ExperimentConfig, HarnessError, MethodKind, Trial};
use crate::geom::Pose;
use crate::monitor::{
    disparity_check, verf_light, verf_pnp, Decision, FailureReason, MonitorConfig, TruthEssentialOverride, VerificationReport,
};
use crate::scene::{generate_scene, OracleFlowBackend, OracleFlowConfig, RenderBackend, SceneError, SceneRenderer, SyntheticScene};

/// Trials processed per parallel batch before records are handed on.
const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: MethodKind,
    pub confidence: f64,
    pub decision: Decision,
    pub failure_reason: Option<FailureReason>,
    /// Wall time in milliseconds; zero unless timing is recorded.
    pub ms: f64,
    pub estimated_offset: Option<Vector3<f64>>,
    pub corrected_pose: Option<Pose>,
}

impl MethodOutcome {
    fn from_report(method: MethodKind, r: VerificationReport, ms: f64) -> Self {
        Self {
            method,
            confidence: r.confidence,
            decision: r.decision,
            failure_reason: r.failure_reason,
            ms,
            estimated_offset: r.estimated_offset,
            corrected_pose: r.corrected_pose,
        }
    }

    fn failed(method: MethodKind, reason: FailureReason) -> Self {
        Self {
            method,
            confidence: 0.0,
            decision: Decision::Incorrect,
            failure_reason: Some(reason),
            ms: 0.0,
            estimated_offset: None,
            corrected_pose: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub true_pose: Pose,
    pub estimated_pose: Pose,
    pub true_error: f64,
    pub outcomes: Vec<MethodOutcome>,
}

impl TrialRecord {
    pub fn outcome(&self, method: MethodKind) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

/// Confusion counts with "estimate within ε" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Trials whose verifier reported a failure; already counted as negatives.
    pub failed: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn total_correct_pct(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        100.0 * (self.tp + self.tn) as f64 / self.total() as f64
    }

    fn add(&mut self, within: bool, decision: Decision, failed: bool) {
        match (within, decision) {
            (true, Decision::Correct) => self.tp += 1,
            (false, Decision::Incorrect) => self.tn += 1,
            (false, Decision::Correct) => self.fp += 1,
            (true, Decision::Incorrect) => self.fn_ += 1,
        }
        self.failed += failed as usize;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSummary {
    pub method: MethodKind,
    pub all: Confusion,
    pub band_excluded: Confusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionSummary {
    pub epsilon: f64,
    pub exclusion_band: [f64; 2],
    pub methods: Vec<MethodSummary>,
}

impl ConfusionSummary {
    pub fn method(&self, method: MethodKind) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Tally decisions per method. Methods appear in first-seen order.
pub fn summarize<'a>(
    rows: impl IntoIterator<Item = (f64, MethodKind, Decision, bool)> + 'a,
    epsilon: f64,
    exclusion_band: [f64; 2],
) -> ConfusionSummary {
    let mut methods: Vec<MethodSummary> = Vec::new();
    for (true_error, method, decision, failed) in rows {
        let idx = match methods.iter().position(|m| m.method == method) {
            Some(i) => i,
            None => {
                methods.push(MethodSummary { method, all: Confusion::default(), band_excluded: Confusion::default() });
                methods.len() - 1
            }
        };
        let within = true_error <= epsilon;
        let entry = &mut methods[idx];
        entry.all.add(within, decision, failed);
        let in_band = true_error >= exclusion_band[0] * epsilon && true_error <= exclusion_band[1] * epsilon;
        if !in_band {
            entry.band_excluded.add(within, decision, failed);
        }
    }
    ConfusionSummary { epsilon, exclusion_band, methods }
}

fn summarize_records(records: &[TrialRecord], cfg: &ExperimentConfig) -> ConfusionSummary {
    summarize(
        records
            .iter()
            .flat_map(|r| r.outcomes.iter().map(move |o| (r.true_error, o.method, o.decision, o.failure_reason.is_some()))),
        cfg.scaled_epsilon(),
        cfg.exclusion_band,
    )
}

struct Context {
    scene: Arc<SyntheticScene>,
    renderer: SceneRenderer,
}

fn run_trial(ctx: &Context, cfg: &ExperimentConfig, trial: &Trial) -> Result<TrialRecord, HarnessError> {
    let k = cfg.intrinsics;
    let mut monitor = MonitorConfig { epsilon: cfg.scaled_epsilon(), ..cfg.monitor };
    monitor.ransac.seed = cfg.seed.wrapping_add(trial.id as u64);
    let flow_cfg = OracleFlowConfig { seed: cfg.flow.seed.wrapping_add(cfg.seed).wrapping_add(trial.id as u64), ..cfg.flow };
    let flow = OracleFlowBackend::new(ctx.scene.clone(), k, trial.true_pose, flow_cfg);

    let record = |outcomes| TrialRecord {
        trial_id: trial.id,
        true_pose: trial.true_pose,
        estimated_pose: trial.estimated_pose,
        true_error: trial.true_error,
        outcomes,
    };
    let sensor = match ctx.renderer.render(&trial.true_pose) {
        Ok(img) => img,
        Err(e) => {
            let reason = if e == SceneError::EmptyView { FailureReason::EmptyRender } else { FailureReason::RenderFailed };
            return Ok(record(cfg.methods.iter().map(|&m| MethodOutcome::failed(m, reason)).collect()));
        }
    };

    let mut outcomes = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let start = Instant::now();
        let est = &trial.estimated_pose;
        let report = match method {
            MethodKind::Light => verf_light(&sensor, est, &ctx.renderer, &flow, &monitor, None)?,
            MethodKind::LightTrueE => {
                let truth = TruthEssentialOverride::from_poses(est, &trial.true_pose);
                match truth {
                    Ok(t) => verf_light(&sensor, est, &ctx.renderer, &flow, &monitor, Some(&t))?,
                    Err(_) => {
                        // coincident positions have no epipolar geometry
                        outcomes.push(MethodOutcome::failed(method, FailureReason::EssentialFailed));
                        continue;
                    }
                }
            }
            MethodKind::Pnp => verf_pnp(&sensor, est, &ctx.renderer, &flow, &monitor)?,
            MethodKind::Disparity => disparity_check(&sensor, est, &ctx.renderer, &flow, &monitor)?,
        };
        let ms = if cfg.record_timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        outcomes.push(MethodOutcome::from_report(method, report, ms));
    }
    Ok(record(outcomes))
}

/// Run every trial, handing records to `sink` in trial order as they
/// complete.
pub fn run_experiment_streaming(
    cfg: &ExperimentConfig,
    sink: &mut dyn FnMut(&TrialRecord) -> Result<(), HarnessError>,
) -> Result<ConfusionSummary, HarnessError> {
    cfg.validate()?;
    let base = generate_scene(cfg.scene.kind, cfg.scene.n_points, cfg.scene.extent, cfg.scene.seed)?;
    let trials = sample_trials(cfg, &base.centroid())?;
    let scene = Arc::new(if cfg.scale == 1.0 { base } else { base.scaled(cfg.scale) });
    let ctx = Context { renderer: SceneRenderer::new(scene.clone(), cfg.intrinsics), scene };

    let mut records = Vec::with_capacity(trials.len());
    if cfg.parallel {
        for chunk in trials.chunks(BATCH) {
            let batch: Vec<_> = chunk.par_iter().map(|t| run_trial(&ctx, cfg, t)).collect::<Result<_, _>>()?;
            for r in batch {
                sink(&r)?;
                records.push(r);
            }
        }
    } else {
        for t in &trials {
            let r = run_trial(&ctx, cfg, t)?;
            sink(&r)?;
            records.push(r);
        }
    }
    Ok(summarize_records(&records, cfg))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<TrialRecord>, ConfusionSummary), HarnessError> {
    let mut records = Vec::new();
    let summary = run_experiment_streaming(cfg, &mut |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((records, summary))
}
