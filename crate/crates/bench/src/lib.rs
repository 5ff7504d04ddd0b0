//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use nalgebra::Vector3;
use verf_core::{
    calibrate, generate_scene, CameraIntrinsics, Correspondence, GrayImage, OracleFlowBackend, OracleFlowConfig, Pose,
    RenderBackend, SceneKind, SceneRenderer, SyntheticScene,
};

pub const EPSILON: f64 = 0.05;

pub struct Fixture {
    pub k: CameraIntrinsics,
    pub scene: Arc<SyntheticScene>,
    pub truth: Pose,
    pub estimate: Pose,
    pub renderer: SceneRenderer,
    pub flow: OracleFlowBackend,
    pub sensor: GrayImage,
}

impl Fixture {
    /// 500-point box scene viewed from 3 units away, estimate off by 0.03.
    pub fn new() -> Self {
        let k = CameraIntrinsics::centered(500.0, 640, 480);
        let scene = Arc::new(generate_scene(SceneKind::RandomBox, 500, 1.0, 7).expect("scene"));
        let truth = Pose::look_at(Vector3::new(1.2, -2.2, 1.6), Vector3::zeros(), Vector3::z()).expect("pose");
        let estimate = truth.translated(&(Vector3::new(0.6, 0.3, -0.5).normalize() * 0.03));
        let renderer = SceneRenderer::new(scene.clone(), k);
        let cfg = OracleFlowConfig { noise_sigma_px: 0.5, outlier_fraction: 0.1, seed: 1, ..Default::default() };
        let flow = OracleFlowBackend::new(scene.clone(), k, truth, cfg);
        let sensor = renderer.render(&truth).expect("render");
        Self { k, scene, truth, estimate, renderer, flow, sensor }
    }

    /// Exact correspondences between the truth and estimate views.
    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.scene
            .points()
            .iter()
            .filter_map(|p| {
                let a = self.k.project(&self.truth.world_to_camera(&p.position))?;
                let b = self.k.project(&self.estimate.world_to_camera(&p.position))?;
                (self.k.contains(&a) && self.k.contains(&b))
                    .then(|| Correspondence { p_a: calibrate(&a, &self.k), p_b: calibrate(&b, &self.k), source_pixel: a })
            })
            .collect()
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
