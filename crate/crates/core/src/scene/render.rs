use std::sync::Arc;

use super::{RenderBackend, SceneError, SyntheticScene};
use crate::flow::{GrayImage, RgbImage};
use crate::geom::{CameraIntrinsics, PixelPoint, Pose};

pub const SPLAT_SIGMA_PX: f64 = 1.0;
/// Splats are truncated beyond this many pixels from their centre.
pub const SPLAT_RADIUS_PX: i64 = 2;
/// Projections are snapped to this sub-pixel lattice so that renders and
/// oracle flow do not depend on floating-point roundoff in scene units.
pub const SUBPIXEL_LATTICE: f64 = 1.0 / 65536.0;
/// A point is hidden when a neighbour within one pixel is nearer by more than this fraction.
const DEPTH_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisiblePoint {
    /// Index into the scene's point list.
    pub index: usize,
    pub pixel: PixelPoint,
    pub depth: f64,
}

/// Points of `scene` in front of the camera, inside the frame and not
/// occluded, in scene order.
pub fn project_visible(scene: &SyntheticScene, pose: &Pose, k: &CameraIntrinsics) -> Vec<VisiblePoint> {
    let (w, h) = (k.width, k.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let projected: Vec<Option<(PixelPoint, f64, usize)>> = scene
        .points()
        .iter()
        .map(|p| {
            let cam = pose.world_to_camera(&p.position);
            let px = k.project(&cam)?;
            let px = PixelPoint::new(snap(px.u), snap(px.v));
            if !k.contains(&px) {
                return None;
            }
            let (x, y) = (px.u.round() as usize, px.v.round() as usize);
            if x >= w || y >= h {
                return None;
            }
            Some((px, cam.z, y * w + x))
        })
        .collect();
    for &(_, depth, cell) in projected.iter().flatten() {
        if depth < zbuf[cell] {
            zbuf[cell] = depth;
        }
    }
    projected
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let (pixel, depth, cell) = (*p)?;
            let (x, y) = ((cell % w) as i64, (cell / w) as i64);
            let mut nearest = f64::INFINITY;
            for yy in (y - 1).max(0)..=(y + 1).min(h as i64 - 1) {
                for xx in (x - 1).max(0)..=(x + 1).min(w as i64 - 1) {
                    nearest = nearest.min(zbuf[yy as usize * w + xx as usize]);
                }
            }
            (depth <= nearest * (1.0 + DEPTH_TOLERANCE)).then_some(VisiblePoint { index, pixel, depth })
        })
        .collect()
}

fn snap(x: f64) -> f64 {
    (x / SUBPIXEL_LATTICE).round() * SUBPIXEL_LATTICE
}

fn splat(visible: &[VisiblePoint], k: &CameraIntrinsics, mut add: impl FnMut(usize, usize, f64)) {
    let inv = 1.0 / (2.0 * SPLAT_SIGMA_PX * SPLAT_SIGMA_PX);
    for v in visible {
        let (cx, cy) = (v.pixel.u.round() as i64, v.pixel.v.round() as i64);
        for y in cy - SPLAT_RADIUS_PX..=cy + SPLAT_RADIUS_PX {
            for x in cx - SPLAT_RADIUS_PX..=cx + SPLAT_RADIUS_PX {
                if x < 0 || y < 0 || x >= k.width as i64 || y >= k.height as i64 {
                    continue;
                }
                let d2 = (x as f64 - v.pixel.u).powi(2) + (y as f64 - v.pixel.v).powi(2);
                add(x as usize, y as usize, (-d2 * inv).exp());
            }
        }
    }
}

/// Gaussian point-splat renderer over a synthetic scene.
#[derive(Debug, Clone)]
pub struct SceneRenderer {
    scene: Arc<SyntheticScene>,
    k: CameraIntrinsics,
}

impl SceneRenderer {
    pub fn new(scene: Arc<SyntheticScene>, k: CameraIntrinsics) -> Self {
        Self { scene, k }
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }

    pub fn render_rgb(&self, pose: &Pose) -> Result<RgbImage, SceneError> {
        let visible = project_visible(&self.scene, pose, &self.k);
        if visible.is_empty() {
            return Err(SceneError::EmptyView);
        }
        let mut acc = vec![[0.0f64; 3]; self.k.width * self.k.height];
        let points = self.scene.points();
        for v in &visible {
            let rgb = points[v.index].rgb;
            splat(std::slice::from_ref(v), &self.k, |x, y, wgt| {
                let a = &mut acc[y * self.k.width + x];
                for c in 0..3 {
                    a[c] += wgt * rgb[c] as f64;
                }
            });
        }
        let data = acc.iter().map(|a| [a[0].min(1.0) as f32, a[1].min(1.0) as f32, a[2].min(1.0) as f32]).collect();
        Ok(RgbImage::new(self.k.width, self.k.height, data).expect("sized from intrinsics"))
    }
}

impl RenderBackend for SceneRenderer {
    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.k
    }

    fn render(&self, pose: &Pose) -> Result<GrayImage, SceneError> {
        let visible = project_visible(&self.scene, pose, &self.k);
        if visible.is_empty() {
            return Err(SceneError::EmptyView);
        }
        let mut acc = vec![0.0f64; self.k.width * self.k.height];
        let points = self.scene.points();
        for v in &visible {
            let intensity = points[v.index].intensity as f64;
            splat(std::slice::from_ref(v), &self.k, |x, y, wgt| acc[y * self.k.width + x] += wgt * intensity);
        }
        let data = acc.iter().map(|&a| a.min(1.0) as f32).collect();
        Ok(GrayImage::new(self.k.width, self.k.height, data).expect("sized from intrinsics"))
    }
}
