use std::collections::HashMap;

use nalgebra::Vector3;

use super::{check_inputs, detect, flow_failure, normal_cdf, render_view, FailureReason, Method, MonitorConfig, MonitorError, VerificationReport};
use crate::flow::{FlowBackend, GrayImage, View, ViewRole};
use crate::geom::{calibrate, triangulate, CameraIntrinsics, Pose};
use crate::robust::{solve_pnp_ransac, RobustError};
use crate::scene::RenderBackend;

type Failure = (FailureReason, String);

/// VERF-PnP: triangulate features from a rendered stereo pair at the
/// estimate, locate the sensor camera against them and score the offset.
pub fn verf_pnp(
    sensor: &GrayImage,
    x_est: &Pose,
    render: &dyn RenderBackend,
    flow: &dyn FlowBackend,
    cfg: &MonitorConfig,
) -> Result<VerificationReport, MonitorError> {
    let k = *render.intrinsics();
    check_inputs(sensor, &k, cfg)?;
    let report = VerificationReport::new(Method::Pnp);
    Ok(run(sensor, x_est, render, flow, cfg, &k, report.clone()).unwrap_or_else(|(reason, detail)| report.failed(reason, detail)))
}

fn run(
    sensor: &GrayImage,
    x_est: &Pose,
    render: &dyn RenderBackend,
    flow: &dyn FlowBackend,
    cfg: &MonitorConfig,
    k: &CameraIntrinsics,
    mut report: VerificationReport,
) -> Result<VerificationReport, Failure> {
    let img_est = render_view(render, x_est)?;
    let baseline = cfg.pnp_baseline_factor * cfg.epsilon;
    let (offset_x, x_right, img_right) = {
        let right = x_est.translated_local(&Vector3::new(baseline, 0.0, 0.0));
        match render_view(render, &right) {
            Ok(img) => (baseline, right, img),
            Err((FailureReason::EmptyRender, _)) => {
                let left = x_est.translated_local(&Vector3::new(-baseline, 0.0, 0.0));
                (-baseline, left, render_view(render, &left)?)
            }
            Err(e) => return Err(e),
        }
    };

    let features = detect(&img_est, cfg)?;
    let est_view = View { role: ViewRole::Estimate, pose: Some(*x_est), image: &img_est };
    let right_view = View { role: ViewRole::StereoRight, pose: Some(x_right), image: &img_right };
    let gt_view = View { role: ViewRole::Sensor, pose: None, image: sensor };
    let stereo = flow.sparse_flow(&est_view, &right_view, &features).map_err(flow_failure)?;
    let to_gt = flow.sparse_flow(&est_view, &gt_view, &features).map_err(flow_failure)?;
    report.n = to_gt.len();

    // triangulate in the estimate's camera frame, in units of the stereo baseline,
    // so the solve is independent of the scene's metric scale
    let left_local = Pose::identity();
    let right_local = Pose::identity().translated(&Vector3::new(offset_x.signum(), 0.0, 0.0));
    let stereo_by_source: HashMap<usize, usize> = stereo.source.iter().enumerate().map(|(j, &s)| (s, j)).collect();
    let mut world = Vec::new();
    let mut image = Vec::new();
    for i in 0..to_gt.len() {
        let Some(&j) = stereo_by_source.get(&to_gt.source[i]) else { continue };
        let p_est = calibrate(&to_gt.points[i], k);
        let p_right = calibrate(&stereo.target(j), k);
        if let Ok(x) = triangulate(&left_local, &right_local, &p_est, &p_right) {
            world.push(x);
            image.push(to_gt.target(i));
        }
    }
    report.n_prime = world.len();
    if world.len() < cfg.min_inliers {
        return Err((FailureReason::TooFewSurvivors, format!("{} triangulated points", world.len())));
    }

    let est = solve_pnp_ransac(&world, &image, k, &cfg.ransac).map_err(|e| match e {
        RobustError::Diverged { .. } => (FailureReason::PnpDiverged, e.to_string()),
        other => (FailureReason::TooFewSurvivors, other.to_string()),
    })?;
    report.n_double_prime = est.inliers.len();
    if est.inliers.len() < cfg.min_inliers {
        return Err((FailureReason::TooFewSurvivors, format!("{} PnP inliers", est.inliers.len())));
    }

    let local = est.pose.position() * baseline;
    let offset = x_est.rotation() * local;
    let norm = offset.norm();
    report.estimated_offset = Some(offset);
    if norm > 0.0 {
        report.direction_estimate = Some(offset / norm);
    }
    let relative = Pose::new(*est.pose.rotation(), local).map_err(|e| (FailureReason::PnpDiverged, e.to_string()))?;
    report.corrected_pose = Some(x_est.compose(&relative));
    Ok(report.scored(pnp_confidence(norm, cfg), cfg))
}

/// Probability that a normal with mean `offset_norm` and the configured
/// spread lies below `ε`.
pub fn pnp_confidence(offset_norm: f64, cfg: &MonitorConfig) -> f64 {
    normal_cdf((cfg.epsilon - offset_norm) / cfg.pnp_sigma())
}
