use nalgebra::{Vector2, Vector3};

use super::{check_inputs, detect, flow_failure, normal_cdf, render_view, Method, MonitorConfig, MonitorError, TruthEssentialOverride, VerificationReport};
use crate::flow::{FlowBackend, GrayImage, View, ViewRole};
use crate::geom::{
    calibrate, epipolar_line_of, is_cheiral, motion_candidates, project_to_line, sampson_distance, CameraIntrinsics,
    EssentialMatrix, NormalizedPoint, Pose, RelativeMotion,
};
use crate::robust::{estimate_essential_ransac, Correspondence};
use crate::scene::RenderBackend;

/// One correspondence that entered the confidence score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightSample {
    pub est: NormalizedPoint,
    /// Sensor-image match projected onto the epipolar line of `est`.
    pub gt_on_line: NormalizedPoint,
    /// Test-image match projected onto the same line.
    pub test_on_line: NormalizedPoint,
    /// Signed displacement of the test match beyond the sensor match along
    /// the line, in pixels.
    pub margin_px: f64,
}

struct Geometry {
    essential: EssentialMatrix,
    motion: RelativeMotion,
    /// Query indices in R′.
    inliers: Vec<usize>,
}

/// The candidate of `E` whose baseline is `direction`, breaking the
/// rotation ambiguity by cheiral consensus.
fn motion_for_direction(
    e: &EssentialMatrix,
    direction: &Vector3<f64>,
    pairs: &[(NormalizedPoint, NormalizedPoint)],
) -> Result<RelativeMotion, String> {
    let candidates = motion_candidates(e).map_err(|e| e.to_string())?;
    candidates
        .iter()
        .filter(|m| m.baseline.dot(direction) > 0.0)
        .max_by_key(|m| pairs.iter().filter(|(a, b)| is_cheiral(m, a, b)).count())
        .copied()
        .ok_or_else(|| "override direction is inconsistent with E".into())
}

/// Unit direction along the epipolar line of `x` in which the match moves
/// as the other camera recedes along the baseline.
fn outward_direction(motion: &RelativeMotion, x: &NormalizedPoint) -> Option<Vector2<f64>> {
    let b = motion.rotation * motion.baseline;
    let y = motion.rotation * x.homogeneous();
    if y.z <= 0.0 {
        return None;
    }
    let h = Vector2::new(y.x / y.z, y.y / y.z);
    let d = h * b.z - Vector2::new(b.x, b.y);
    let norm = d.norm();
    (norm > 1e-12).then(|| d / norm)
}

/// VERF-Light with per-point detail.
#[allow(clippy::too_many_arguments)]
pub fn verf_light_traced(
    sensor: &GrayImage,
    x_est: &Pose,
    render: &dyn RenderBackend,
    flow: &dyn FlowBackend,
    cfg: &MonitorConfig,
    truth: Option<&TruthEssentialOverride>,
) -> Result<(VerificationReport, Vec<LightSample>), MonitorError> {
    let k = *render.intrinsics();
    check_inputs(sensor, &k, cfg)?;
    if let Some(t) = truth {
        if !((t.direction.norm() - 1.0).abs() < 1e-6) {
            return Err(MonitorError::InvalidOverride("direction must be a unit vector".into()));
        }
    }
    let report = VerificationReport::new(Method::Light);
    Ok(match run(sensor, x_est, render, flow, cfg, truth, &k, report.clone()) {
        Ok(done) => done,
        Err((reason, detail)) => (report.failed(reason, detail), Vec::new()),
    })
}

/// VERF-Light: render a test view `ε` along the estimated direction to the
/// true position and compare flow magnitudes along shared epipolar lines.
pub fn verf_light(
    sensor: &GrayImage,
    x_est: &Pose,
    render: &dyn RenderBackend,
    flow: &dyn FlowBackend,
    cfg: &MonitorConfig,
    truth: Option<&TruthEssentialOverride>,
) -> Result<VerificationReport, MonitorError> {
    verf_light_traced(sensor, x_est, render, flow, cfg, truth).map(|(r, _)| r)
}

type Failure = (super::FailureReason, String);

#[allow(clippy::too_many_arguments)]
fn run(
    sensor: &GrayImage,
    x_est: &Pose,
    render: &dyn RenderBackend,
    flow: &dyn FlowBackend,
    cfg: &MonitorConfig,
    truth: Option<&TruthEssentialOverride>,
    k: &CameraIntrinsics,
    mut report: VerificationReport,
) -> Result<(VerificationReport, Vec<LightSample>), Failure> {
    use super::FailureReason::*;

    let img_est = render_view(render, x_est)?;
    let features = detect(&img_est, cfg)?;
    let est_view = View { role: ViewRole::Estimate, pose: Some(*x_est), image: &img_est };
    let gt_view = View { role: ViewRole::Sensor, pose: None, image: sensor };
    let gt_flow = flow.sparse_flow(&est_view, &gt_view, &features).map_err(flow_failure)?;
    report.n = gt_flow.len();

    let corrs: Vec<Correspondence> = (0..gt_flow.len())
        .map(|i| Correspondence { p_a: calibrate(&gt_flow.points[i], k), p_b: calibrate(&gt_flow.target(i), k), source_pixel: gt_flow.points[i] })
        .collect();
    let pairs: Vec<_> = corrs.iter().map(|c| (c.p_a, c.p_b)).collect();

    let geometry = match truth {
        None => {
            let est = estimate_essential_ransac(&corrs, &cfg.ransac, k).map_err(|e| (EssentialFailed, e.to_string()))?;
            Geometry {
                essential: est.essential,
                motion: RelativeMotion { rotation: est.rotation, baseline: est.unit_translation },
                inliers: est.inliers,
            }
        }
        Some(t) => {
            let passing: Vec<usize> =
                (0..pairs.len()).filter(|&i| sampson_distance(&t.essential, &pairs[i].0, &pairs[i].1, k) < cfg.ransac.sampson_threshold_px).collect();
            let passing_pairs: Vec<_> = passing.iter().map(|&i| pairs[i]).collect();
            if passing_pairs.is_empty() {
                return Err((TooFewSurvivors, "no correspondence agrees with the supplied E".into()));
            }
            let motion = motion_for_direction(&t.essential, &t.direction, &passing_pairs).map_err(|e| (EssentialFailed, e))?;
            let inliers = passing.into_iter().filter(|&i| is_cheiral(&motion, &pairs[i].0, &pairs[i].1)).collect();
            Geometry { essential: t.essential, motion, inliers }
        }
    };
    report.n_prime = geometry.inliers.len();
    let world_dir = x_est.rotation() * geometry.motion.baseline;
    report.direction_estimate = Some(world_dir);

    let x_test = x_est.translated(&(world_dir * cfg.epsilon));
    let img_test = render_view(render, &x_test)?;
    let test_view = View { role: ViewRole::Test, pose: Some(x_test), image: &img_test };
    let queries: Vec<_> = geometry.inliers.iter().map(|&i| features[gt_flow.source[i]]).collect();
    let test_flow = flow.sparse_flow(&est_view, &test_view, &queries).map_err(flow_failure)?;

    let delta = cfg.ransac.sampson_threshold_px;
    let mut samples = Vec::new();
    let mut margins = Vec::new();
    for j in 0..test_flow.len() {
        let gi = geometry.inliers[test_flow.source[j]];
        let x = pairs[gi].0;
        let x_gt = pairs[gi].1;
        let x_tst = calibrate(&test_flow.target(j), k);
        if sampson_distance(&geometry.essential, &x, &x_tst, k) >= delta || !is_cheiral(&geometry.motion, &x, &x_tst) {
            continue;
        }
        let Ok(line) = epipolar_line_of(&geometry.essential, &x) else { continue };
        let Some(u) = outward_direction(&geometry.motion, &x) else { continue };
        let gt_on = project_to_line(&x_gt, &line);
        let test_on = project_to_line(&x_tst, &line);
        let u_px = Vector2::new(u.x * k.fx, u.y * k.fy).normalize();
        let diff_px = Vector2::new((test_on.x - gt_on.x) * k.fx, (test_on.y - gt_on.y) * k.fy);
        let margin = diff_px.dot(&u_px);
        margins.push(margin);
        samples.push(LightSample { est: x, gt_on_line: gt_on, test_on_line: test_on, margin_px: margin });
    }
    report.n_double_prime = samples.len();
    if samples.len() < cfg.min_inliers {
        return Err((TooFewSurvivors, format!("{} of {} points survived filtering", samples.len(), report.n_prime)));
    }
    let q = margins.iter().map(|m| normal_cdf(m / cfg.light_sigma_px)).sum::<f64>() / margins.len() as f64;
    Ok((report.scored(q, cfg), samples))
}
