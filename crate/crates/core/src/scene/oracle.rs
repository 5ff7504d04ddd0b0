use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::render::{project_visible, VisiblePoint};
use super::SyntheticScene;
use crate::flow::{FlowBackend, FlowError, SparseFlow, View, ViewRole};
use crate::geom::{CameraIntrinsics, PixelPoint, Pose};

/// Query points farther than this from every visible projection are dropped.
const SNAP_RADIUS_PX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleFlowConfig {
    pub noise_sigma_px: f64,
    pub outlier_fraction: f64,
    /// Outliers move by a uniform offset in `[-outlier_max_px, outlier_max_px]²`.
    pub outlier_max_px: f64,
    pub seed: u64,
}

impl Default for OracleFlowConfig {
    fn default() -> Self {
        Self { noise_sigma_px: 0.0, outlier_fraction: 0.0, outlier_max_px: 50.0, seed: 0 }
    }
}

impl OracleFlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.noise_sigma_px >= 0.0 && self.noise_sigma_px.is_finite()) {
            return Err(FlowError::Unsupported("noise_sigma_px must be ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(FlowError::Unsupported("outlier_fraction must be in [0, 1]".into()));
        }
        if !(self.outlier_max_px >= 0.0 && self.outlier_max_px.is_finite()) {
            return Err(FlowError::Unsupported("outlier_max_px must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Flow computed from the scene geometry. The sensor view is resolved to the
/// true pose, which only the oracle knows.
#[derive(Debug, Clone)]
pub struct OracleFlowBackend {
    scene: Arc<SyntheticScene>,
    k: CameraIntrinsics,
    sensor_pose: Pose,
    cfg: OracleFlowConfig,
}

impl OracleFlowBackend {
    pub fn new(scene: Arc<SyntheticScene>, k: CameraIntrinsics, sensor_pose: Pose, cfg: OracleFlowConfig) -> Self {
        Self { scene, k, sensor_pose, cfg }
    }

    fn pose_of(&self, view: &View) -> Result<Pose, FlowError> {
        match (view.role, view.pose) {
            (ViewRole::Sensor, _) => Ok(self.sensor_pose),
            (_, Some(p)) => Ok(p),
            (role, None) => Err(FlowError::Unsupported(format!("{role:?} view without a pose"))),
        }
    }

    /// Flow between two known poses. The noise stream is keyed by the pair of
    /// view roles so that it does not depend on scene scale.
    pub fn flow_between(&self, from: &Pose, to: &Pose, points: &[PixelPoint], stream: u64) -> Result<SparseFlow, FlowError> {
        self.cfg.validate()?;
        let vis_a = project_visible(&self.scene, from, &self.k);
        let vis_b: HashMap<usize, VisiblePoint> = project_visible(&self.scene, to, &self.k).into_iter().map(|v| (v.index, v)).collect();

        // bucket visible projections by integer pixel for the snap search
        let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, v) in vis_a.iter().enumerate() {
            grid.entry((v.pixel.u.floor() as i64, v.pixel.v.floor() as i64)).or_default().push(i);
        }

        let mut out = SparseFlow::default();
        for (q, p) in points.iter().enumerate() {
            let (cx, cy) = (p.u.floor() as i64, p.v.floor() as i64);
            let mut best: Option<(f64, usize)> = None;
            for gy in cy - 1..=cy + 1 {
                for gx in cx - 1..=cx + 1 {
                    for &i in grid.get(&(gx, gy)).into_iter().flatten() {
                        let d = vis_a[i].pixel.distance(p);
                        if d <= SNAP_RADIUS_PX && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                            best = Some((d, i));
                        }
                    }
                }
            }
            let Some((_, i)) = best else {
                out.dropped.push(q);
                continue;
            };
            let a = vis_a[i];
            let Some(b) = vis_b.get(&a.index) else {
                out.dropped.push(q);
                continue;
            };
            out.points.push(a.pixel);
            out.vectors.push(Vector2::new(b.pixel.u - a.pixel.u, b.pixel.v - a.pixel.v));
            out.inliers.push(true);
            out.source.push(q);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream);
        if self.cfg.noise_sigma_px > 0.0 {
            let noise = Normal::new(0.0, self.cfg.noise_sigma_px).expect("validated sigma");
            for v in &mut out.vectors {
                *v += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        let n_out = (self.cfg.outlier_fraction * out.len() as f64).floor() as usize;
        if n_out > 0 {
            let mut order: Vec<usize> = (0..out.len()).collect();
            order.shuffle(&mut rng);
            let m = self.cfg.outlier_max_px;
            for &i in &order[..n_out] {
                let offset = if m > 0.0 { Vector2::new(rng.random_range(-m..=m), rng.random_range(-m..=m)) } else { Vector2::zeros() };
                out.vectors[i] += offset;
                out.inliers[i] = false;
            }
        }
        Ok(out)
    }
}

impl FlowBackend for OracleFlowBackend {
    fn sparse_flow(&self, from: &View, to: &View, points: &[PixelPoint]) -> Result<SparseFlow, FlowError> {
        let (a, b) = (self.pose_of(from)?, self.pose_of(to)?);
        self.flow_between(&a, &b, points, from.role.code() * 4 + to.role.code())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{calibrate, epipolar_line_of, essential_from_poses, sampson_distance};
    use crate::scene::{generate_scene, SceneKind, ScenePoint};
    use nalgebra::Vector3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::centered(500.0, 640, 480)
    }

    fn setup() -> (Arc<SyntheticScene>, Pose, Pose) {
        let scene = Arc::new(generate_scene(SceneKind::RandomBox, 800, 1.0, 11).unwrap());
        let a = Pose::look_at(Vector3::new(0.5, -3.0, 2.0), Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let b = Pose::look_at(Vector3::new(0.7, -2.9, 2.1), Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        (scene, a, b)
    }

    fn queries(scene: &SyntheticScene, pose: &Pose) -> Vec<PixelPoint> {
        project_visible(scene, pose, &k()).iter().map(|v| PixelPoint::new(v.pixel.u.round(), v.pixel.v.round())).collect()
    }

    #[test]
    fn noiseless_flow_is_epipolar() {
        let (scene, a, b) = setup();
        let backend = OracleFlowBackend::new(scene.clone(), k(), b, OracleFlowConfig::default());
        let f = backend.flow_between(&a, &b, &queries(&scene, &a), 0).unwrap();
        assert!(f.len() > 300);
        let e = essential_from_poses(&a, &b).unwrap();
        for i in 0..f.len() {
            // off the line by at most the projection lattice
            let r = sampson_distance(&e, &calibrate(&f.points[i], &k()), &calibrate(&f.target(i), &k()), &k());
            assert!(r < super::super::render::SUBPIXEL_LATTICE, "{r}");
        }
    }

    #[test]
    fn noise_level_band() {
        let (scene, a, b) = setup();
        let cfg = OracleFlowConfig { noise_sigma_px: 0.5, ..Default::default() };
        let backend = OracleFlowBackend::new(scene.clone(), k(), b, cfg);
        let f = backend.flow_between(&a, &b, &queries(&scene, &a), 0).unwrap();
        assert!(f.len() >= 200);
        let e = essential_from_poses(&a, &b).unwrap();
        let mean = (0..f.len())
            .map(|i| {
                let l = epipolar_line_of(&e, &calibrate(&f.points[i], &k())).unwrap();
                l.signed_distance(&calibrate(&f.target(i), &k())).abs() * k().fx
            })
            .sum::<f64>()
            / f.len() as f64;
        // E|N(0, 0.5)| ≈ 0.399
        assert!((0.3..=0.7).contains(&mean), "{mean}");
    }

    #[test]
    fn exact_outlier_count() {
        let (scene, a, b) = setup();
        let cfg = OracleFlowConfig { outlier_fraction: 0.3, seed: 5, ..Default::default() };
        let backend = OracleFlowBackend::new(scene.clone(), k(), b, cfg);
        let f = backend.flow_between(&a, &b, &queries(&scene, &a), 0).unwrap();
        assert_eq!(f.inliers.iter().filter(|&&x| !x).count(), (0.3 * f.len() as f64).floor() as usize);
    }

    #[test]
    fn occluded_target_is_dropped() {
        // the far point is visible from `a` but hidden behind the near one from `b`
        let far = ScenePoint { position: Vector3::new(0.0, 0.0, 10.0), intensity: 1.0, rgb: [1.0; 3] };
        let near = ScenePoint { position: Vector3::new(0.5, 0.0, 5.0), intensity: 1.0, rgb: [1.0; 3] };
        let scene = Arc::new(SyntheticScene::from_points(vec![far, near], SceneKind::RandomBox, 0).unwrap());
        let a = Pose::identity();
        let b = Pose::identity().translated(&Vector3::new(1.0, 0.0, 0.0));
        let backend = OracleFlowBackend::new(scene, k(), b, OracleFlowConfig::default());
        let f = backend.flow_between(&a, &b, &[PixelPoint::new(320.0, 240.0), PixelPoint::new(370.0, 240.0)], 0).unwrap();
        assert_eq!(f.dropped, vec![0]);
        assert_eq!(f.source, vec![1]);
    }

    #[test]
    fn far_queries_are_dropped() {
        let (scene, a, b) = setup();
        let backend = OracleFlowBackend::new(scene, k(), b, OracleFlowConfig::default());
        let f = backend.flow_between(&a, &b, &[PixelPoint::new(2.0, 2.0)], 0).unwrap();
        assert_eq!(f.dropped, vec![0]);
    }

    #[test]
    fn sensor_resolves_to_true_pose() {
        let (scene, a, b) = setup();
        let img = crate::flow::GrayImage::filled(640, 480, 0.0);
        let backend = OracleFlowBackend::new(scene.clone(), k(), b, OracleFlowConfig::default());
        let q = queries(&scene, &a);
        let from = View { role: ViewRole::Estimate, pose: Some(a), image: &img };
        let to = View { role: ViewRole::Sensor, pose: None, image: &img };
        let via_view = backend.sparse_flow(&from, &to, &q).unwrap();
        assert_eq!(via_view, backend.flow_between(&a, &b, &q, 4).unwrap());
    }

    #[test]
    fn similarity_invariant_flow() {
        let (scene, a, b) = setup();
        let cfg = OracleFlowConfig { noise_sigma_px: 0.5, outlier_fraction: 0.1, seed: 3, ..Default::default() };
        let q = queries(&scene, &a);
        let f1 = OracleFlowBackend::new(scene.clone(), k(), b, cfg).flow_between(&a, &b, &q, 1).unwrap();
        let s = Arc::new(scene.scaled(4.0));
        let f2 = OracleFlowBackend::new(s, k(), b.scaled(4.0), cfg).flow_between(&a.scaled(4.0), &b.scaled(4.0), &q, 1).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn renders_and_oracle_agree() {
        use crate::flow::{shi_tomasi, ShiTomasiParams};
        use crate::scene::{RenderBackend, SceneRenderer, SPLAT_RADIUS_PX};
        let (scene, a, b) = setup();
        let renderer = SceneRenderer::new(scene.clone(), k());
        let img_a = renderer.render(&a).unwrap();
        let feats = shi_tomasi(&img_a, &ShiTomasiParams::default()).unwrap();
        let vis = project_visible(&scene, &a, &k());
        let mut near = 0;
        for p in &feats {
            let mut d: Vec<f64> = vis.iter().map(|v| v.pixel.distance(p)).collect();
            d.sort_by(f64::total_cmp);
            if d[0] <= 1.5 {
                near += 1;
            }
            // a corner can form between two overlapping splats; isolated ones are exact
            if d[1] > 2.0 * SPLAT_RADIUS_PX as f64 + 1.5 {
                assert!(d[0] <= 1.5, "isolated feature {p:?} is {} px from its splat", d[0]);
            }
        }
        assert!(near as f64 >= 0.99 * feats.len() as f64, "{near}/{}", feats.len());
        let backend = OracleFlowBackend::new(scene.clone(), k(), b, OracleFlowConfig::default());
        let f = backend.flow_between(&a, &b, &feats, 0).unwrap();
        assert!(f.len() > feats.len() / 2);
        let vis_b = project_visible(&scene, &b, &k());
        for i in 0..f.len() {
            let t = f.target(i);
            let d = vis_b.iter().map(|v| v.pixel.distance(&t)).fold(f64::INFINITY, f64::min);
            assert!(d < 1.0);
        }
    }
}
