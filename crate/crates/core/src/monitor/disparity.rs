use super::{check_inputs, detect, flow_failure, normal_cdf, render_view, Method, MonitorConfig, MonitorError, VerificationReport};
use crate::flow::{FlowBackend, GrayImage, View, ViewRole};
use crate::geom::Pose;
use crate::scene::RenderBackend;

/// Baseline verifier: mean sparse-flow magnitude between the estimate's
/// render and the sensor image, scored by a zero-mean folded normal.
pub fn disparity_check(
    sensor: &GrayImage,
    x_est: &Pose,
    render: &dyn RenderBackend,
    flow: &dyn FlowBackend,
    cfg: &MonitorConfig,
) -> Result<VerificationReport, MonitorError> {
    check_inputs(sensor, render.intrinsics(), cfg)?;
    let mut report = VerificationReport::new(Method::Disparity);
    let result = (|| {
        let img_est = render_view(render, x_est)?;
        let features = detect(&img_est, cfg)?;
        let est_view = View { role: ViewRole::Estimate, pose: Some(*x_est), image: &img_est };
        let gt_view = View { role: ViewRole::Sensor, pose: None, image: sensor };
        flow.sparse_flow(&est_view, &gt_view, &features).map_err(flow_failure)
    })();
    let sparse = match result {
        Ok(s) => s,
        Err((reason, detail)) => return Ok(report.failed(reason, detail)),
    };
    report.n = sparse.len();
    report.n_prime = sparse.len();
    report.n_double_prime = sparse.len();
    if sparse.len() < cfg.min_inliers {
        return Ok(report.failed(super::FailureReason::TooFewSurvivors, format!("{} flow vectors", sparse.len())));
    }
    Ok(report.scored(disparity_confidence(mean_disparity(&sparse.vectors), cfg.disparity_sigma_px), cfg))
}

fn mean_disparity(vectors: &[nalgebra::Vector2<f64>]) -> f64 {
    vectors.iter().map(|v| v.norm()).sum::<f64>() / vectors.len() as f64
}

/// Upper tail of the folded normal at `d`.
pub fn disparity_confidence(d: f64, sigma: f64) -> f64 {
    2.0 * (1.0 - normal_cdf(d / sigma))
}
