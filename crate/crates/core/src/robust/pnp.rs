use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector3, Vector6};

use super::consensus;
use super::{RansacParams, RobustError};
use crate::geom::{CameraIntrinsics, PixelPoint, Pose};

/// Points in a minimal DLT sample.
const DLT_SAMPLE: usize = 6;
/// Fewest inliers accepted for a final pose.
pub const MIN_PNP_INLIERS: usize = 6;
const LM_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct PnpEstimate {
    /// Camera-to-world pose in the frame of the supplied 3D points.
    pub pose: Pose,
    pub inliers: Vec<usize>,
    pub mean_reprojection_error_px: f64,
}

/// World-to-camera transform `X_c = R X + t`.
#[derive(Debug, Clone, Copy)]
struct Extrinsics {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Extrinsics {
    fn from_pose(pose: &Pose) -> Self {
        let r = pose.rotation().transpose();
        Self { r, t: -(r * pose.position()) }
    }

    fn to_pose(self) -> Result<Pose, RobustError> {
        let rt = self.r.transpose();
        Ok(Pose::new(rt, -(rt * self.t))?)
    }
}

/// Pixel distance between the projection of `world` under `pose` and `observed`.
/// Infinite when the point is not in front of the camera.
pub fn reprojection_error(pose: &Pose, world: &Vector3<f64>, observed: &PixelPoint, k: &CameraIntrinsics) -> f64 {
    let cam = pose.world_to_camera(world);
    if cam.z <= 0.0 {
        return f64::INFINITY;
    }
    let u = k.fx * cam.x / cam.z + k.cx;
    let v = k.fy * cam.y / cam.z + k.cy;
    (u - observed.u).hypot(v - observed.v)
}

/// Linear pose from six or more 2D-3D correspondences. `None` for degenerate
/// (collinear or coplanar) structure.
pub fn dlt_pose(world: &[Vector3<f64>], image: &[PixelPoint], k: &CameraIntrinsics) -> Option<Pose> {
    let n = world.len();
    if n < DLT_SAMPLE || image.len() != n {
        return None;
    }
    let centroid = world.iter().sum::<Vector3<f64>>() / n as f64;
    let spread = world.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n as f64;
    if spread <= 0.0 {
        return None;
    }
    let s = 3f64.sqrt() / spread;
    let mut a = DMatrix::<f64>::zeros((2 * n).max(12), 12);
    for (i, (p, q)) in world.iter().zip(image).enumerate() {
        let x = (p - centroid) * s;
        let xn = (q.u - k.cx) / k.fx;
        let yn = (q.v - k.cy) / k.fy;
        let h = [x.x, x.y, x.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 8 + j)] = -xn * h[j];
            a[(2 * i + 1, 4 + j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -yn * h[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    if svd.singular_values[order[1]] < 1e-8 * svd.singular_values[order[11]] {
        return None;
    }
    let row = v_t.row(order[0]);
    let mut m = Matrix3::from_fn(|r, c| row[r * 4 + c]);
    let mut t = Vector3::new(row[3], row[7], row[11]);
    if m.determinant() < 0.0 {
        m = -m;
        t = -t;
    }
    let msvd = m.svd(true, true);
    let (u, vt) = (msvd.u?, msvd.v_t?);
    let scale = msvd.singular_values.mean();
    if scale <= 0.0 {
        return None;
    }
    let r = u * vt;
    // M = (α/s) R and t = α (R c + t_true) for X_n = s (X - c)
    let ext = Extrinsics { r, t: t / (scale * s) - r * centroid };
    ext.to_pose().ok()
}

/// Levenberg-Marquardt refinement of pixel reprojection error.
pub fn refine_pose(pose: &Pose, world: &[Vector3<f64>], image: &[PixelPoint], k: &CameraIntrinsics) -> Pose {
    let mut ext = Extrinsics::from_pose(pose);
    let cost = |e: &Extrinsics| -> f64 {
        world
            .iter()
            .zip(image)
            .map(|(p, q)| {
                let c = e.r * p + e.t;
                if c.z <= 0.0 {
                    return 1e12;
                }
                let du = k.fx * c.x / c.z + k.cx - q.u;
                let dv = k.fy * c.y / c.z + k.cy - q.v;
                du * du + dv * dv
            })
            .sum()
    };
    let mut current = cost(&ext);
    let mut lambda = 1e-3;
    for _ in 0..LM_ITERATIONS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (p, q) in world.iter().zip(image) {
            let rp = ext.r * p;
            let c = rp + ext.t;
            if c.z <= 0.0 {
                continue;
            }
            let iz = 1.0 / c.z;
            let du = k.fx * c.x * iz + k.cx - q.u;
            let dv = k.fy * c.y * iz + k.cy - q.v;
            let dproj = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * c.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * c.y * iz * iz,
            );
            let dw = -crate::geom::skew(&rp);
            let mut jac = nalgebra::Matrix2x6::<f64>::zeros();
            jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * dw));
            jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            let res = nalgebra::Vector2::new(du, dv);
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * res;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let candidate = Extrinsics {
                r: *Rotation3::new(omega).matrix() * ext.r,
                t: ext.t + Vector3::new(step[3], step[4], step[5]),
            };
            let next = cost(&candidate);
            if next < current {
                let gain = current - next;
                ext = candidate;
                current = next;
                lambda = (lambda * 0.3).max(1e-12);
                improved = gain > 1e-14 * (1.0 + current);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    ext.to_pose().unwrap_or_else(|_| pose.clone())
}

/// RANSAC over six-point DLT hypotheses with the threshold taken as a
/// reprojection error in pixels, followed by refinement on the inliers.
pub fn solve_pnp_ransac(
    world: &[Vector3<f64>],
    image: &[PixelPoint],
    k: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<PnpEstimate, RobustError> {
    if world.len() != image.len() {
        return Err(RobustError::InvalidParams(format!("{} world points but {} image points", world.len(), image.len())));
    }
    let threshold = params.sampson_threshold_px;
    let fit = |sample: &[usize]| -> Vec<Pose> {
        let w: Vec<_> = sample.iter().map(|&i| world[i]).collect();
        let p: Vec<_> = sample.iter().map(|&i| image[i]).collect();
        dlt_pose(&w, &p, k).into_iter().collect()
    };
    let residual = |pose: &Pose, i: usize| reprojection_error(pose, &world[i], &image[i], k);
    let best = match consensus::run(world.len(), DLT_SAMPLE, params, threshold, fit, residual) {
        Err(RobustError::AllHypothesesDegenerate) => {
            return Err(RobustError::NoConsensus { inliers: 0, needed: MIN_PNP_INLIERS })
        }
        other => other?,
    };
    if best.count < MIN_PNP_INLIERS {
        return Err(RobustError::NoConsensus { inliers: best.count, needed: MIN_PNP_INLIERS });
    }

    let mut pose = best.model;
    let mut inliers: Vec<usize> = (0..world.len()).filter(|&i| best.inliers[i]).collect();
    for _ in 0..3 {
        let w: Vec<_> = inliers.iter().map(|&i| world[i]).collect();
        let p: Vec<_> = inliers.iter().map(|&i| image[i]).collect();
        let start = dlt_pose(&w, &p, k).unwrap_or_else(|| pose.clone());
        let start = if mean_error(&start, &w, &p, k) <= mean_error(&pose, &w, &p, k) { start } else { pose.clone() };
        let refined = refine_pose(&start, &w, &p, k);
        let next: Vec<usize> = (0..world.len()).filter(|&i| residual(&refined, i) < threshold).collect();
        if next.len() < inliers.len() {
            break;
        }
        let stable = next == inliers;
        pose = refined;
        inliers = next;
        if stable {
            break;
        }
    }
    if inliers.len() < MIN_PNP_INLIERS {
        return Err(RobustError::NoConsensus { inliers: inliers.len(), needed: MIN_PNP_INLIERS });
    }
    let w: Vec<_> = inliers.iter().map(|&i| world[i]).collect();
    let p: Vec<_> = inliers.iter().map(|&i| image[i]).collect();
    let err = mean_error(&pose, &w, &p, k);
    if !(err <= threshold) {
        return Err(RobustError::Diverged { error_px: err });
    }
    Ok(PnpEstimate { pose, inliers, mean_reprojection_error_px: err })
}

fn mean_error(pose: &Pose, world: &[Vector3<f64>], image: &[PixelPoint], k: &CameraIntrinsics) -> f64 {
    if world.is_empty() {
        return f64::INFINITY;
    }
    world.iter().zip(image).map(|(w, p)| reprojection_error(pose, w, p, k)).sum::<f64>() / world.len() as f64
}
