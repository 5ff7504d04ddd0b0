use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use super::consensus;
use super::five_point::five_point;
use super::{Correspondence, MinimalSolver, RansacParams, RobustError};
use crate::geom::{
    decompose_essential, motion_candidates, sampson_distance, skew, CameraIntrinsics, EssentialMatrix, GeomError, NormalizedPoint,
};

/// Fewest inliers accepted for a final essential-matrix model.
pub const MIN_ESSENTIAL_INLIERS: usize = 8;

/// Rounds of inlier re-selection and refitting after the sampling stage.
const REFINE_ROUNDS: usize = 3;
const LM_ITERATIONS: usize = 30;
const LMEDS_SAMPLES: usize = 32;
const NUMERIC_STEP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct EssentialEstimate {
    pub essential: EssentialMatrix,
    /// Rotates camera-`a` axes into camera-`b` axes.
    pub rotation: Matrix3<f64>,
    /// Unit direction of camera `b`'s centre in camera `a`'s frame.
    pub unit_translation: Vector3<f64>,
    /// Indices passing both the Sampson test and the cheirality test.
    pub inliers: Vec<usize>,
    /// Indices passing the Sampson test alone.
    pub sampson_inliers: Vec<usize>,
    pub iterations: usize,
}

/// Isotropic scaling that centres points at the origin with mean distance √2.
fn normalizing_transform(points: &[NormalizedPoint]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = points.iter().map(|p| (p.x - mx).hypot(p.y - my)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Normalized eight-point estimate from eight or more correspondences,
/// projected onto the essential manifold. `None` for rank-deficient input.
pub fn eight_point(pairs: &[(NormalizedPoint, NormalizedPoint)]) -> Option<EssentialMatrix> {
    let n = pairs.len();
    if n < 8 {
        return None;
    }
    let a_pts: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let b_pts: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let ta = normalizing_transform(&a_pts);
    let tb = normalizing_transform(&b_pts);
    // pad to at least 9 rows so the full right singular basis is available
    let mut design = DMatrix::<f64>::zeros(n.max(9), 9);
    for (row, (pa, pb)) in pairs.iter().enumerate() {
        let xa = ta * pa.homogeneous();
        let xb = tb * pb.homogeneous();
        for r in 0..3 {
            for c in 0..3 {
                design[(row, r * 3 + c)] = xb[r] * xa[c];
            }
        }
    }
    let svd = design.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    // a second (near) null direction means the sample does not pin down E
    if largest <= 0.0 || svd.singular_values[order[1]] < 1e-10 * largest {
        return None;
    }
    let f = v_t.row(order[0]);
    let normalized = Matrix3::from_fn(|r, c| f[r * 3 + c]);
    let e = tb.transpose() * normalized * ta;
    EssentialMatrix::from_matrix(&e).ok()
}

fn signed_sampson(e: &Matrix3<f64>, pa: &NormalizedPoint, pb: &NormalizedPoint, k: &CameraIntrinsics) -> f64 {
    let (xa, xb) = (pa.homogeneous(), pb.homogeneous());
    let lb = e * xa;
    let la = e.transpose() * xb;
    let denom = (lb.x / k.fx).powi(2) + (lb.y / k.fy).powi(2) + (la.x / k.fx).powi(2) + (la.y / k.fy).powi(2);
    if denom <= 0.0 {
        return 0.0;
    }
    xb.dot(&lb) / denom.sqrt()
}

/// Levenberg-Marquardt on the Sampson distances of `pairs`, over the five
/// degrees of freedom of `E = R [b]ₓ`.
fn refine_essential(e: &EssentialMatrix, pairs: &[(NormalizedPoint, NormalizedPoint)], k: &CameraIntrinsics) -> Option<EssentialMatrix> {
    if pairs.len() < 6 {
        return None;
    }
    let start = motion_candidates(e).ok()?[0];
    let (mut r, mut b) = (start.rotation, start.baseline);
    let residuals = |r: &Matrix3<f64>, b: &Vector3<f64>| -> DVector<f64> {
        let e = r * skew(b);
        DVector::from_iterator(pairs.len(), pairs.iter().map(|(pa, pb)| signed_sampson(&e, pa, pb, k)))
    };
    let tangent = |b: &Vector3<f64>| -> (Vector3<f64>, Vector3<f64>) {
        let helper = if b.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let t1 = b.cross(&helper).normalize();
        (t1, b.cross(&t1))
    };
    let apply = |r: &Matrix3<f64>, b: &Vector3<f64>, step: &[f64]| {
        let (t1, t2) = tangent(b);
        let r = Rotation3::new(Vector3::new(step[0], step[1], step[2])).matrix() * r;
        let b = (b + t1 * step[3] + t2 * step[4]).normalize();
        (r, b)
    };
    let mut res = residuals(&r, &b);
    let mut cost = res.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..LM_ITERATIONS {
        if cost == 0.0 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(pairs.len(), 5);
        for p in 0..5 {
            let mut step = [0.0; 5];
            step[p] = NUMERIC_STEP;
            let (rp, bp) = apply(&r, &b, &step);
            step[p] = -NUMERIC_STEP;
            let (rm, bm) = apply(&r, &b, &step);
            jac.set_column(p, &((residuals(&rp, &bp) - residuals(&rm, &bm)) / (2.0 * NUMERIC_STEP)));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj.clone();
            for i in 0..5 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let (rn, bn) = apply(&r, &b, step.as_slice());
            let next_res = residuals(&rn, &bn);
            let next = next_res.norm_squared();
            if next < cost {
                improved = cost - next > 1e-12 * cost;
                r = rn;
                b = bn;
                res = next_res;
                cost = next;
                lambda = (lambda * 0.3).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    EssentialMatrix::from_matrix(&(r * skew(&b))).ok()
}

fn robust_scale(mut residuals: Vec<f64>) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    residuals.sort_by(f64::total_cmp);
    1.4826 * residuals[residuals.len() / 2]
}

/// Essential matrix by sampling + Sampson-distance consensus, followed by
/// cheirality-based recovery of the relative motion.
///
/// The returned inlier set drops correspondences whose Sampson distance is
/// not below `params.sampson_threshold_px` as well as those that do not
/// triangulate in front of both cameras under the chosen motion.
pub fn estimate_essential_ransac(
    corrs: &[Correspondence],
    params: &RansacParams,
    k: &CameraIntrinsics,
) -> Result<EssentialEstimate, RobustError> {
    let sample_size = params.solver.sample_size();
    if corrs.len() < sample_size {
        return Err(RobustError::InsufficientCorrespondences { needed: sample_size, got: corrs.len() });
    }
    let pairs: Vec<(NormalizedPoint, NormalizedPoint)> = corrs.iter().map(|c| (c.p_a, c.p_b)).collect();
    let threshold = params.sampson_threshold_px;
    let residual = |e: &EssentialMatrix, i: usize| sampson_distance(e, &pairs[i].0, &pairs[i].1, k);

    let fit = |sample: &[usize]| -> Vec<EssentialMatrix> {
        let chosen: Vec<_> = sample.iter().map(|&i| pairs[i]).collect();
        match params.solver {
            MinimalSolver::EightPoint => eight_point(&chosen).into_iter().collect(),
            MinimalSolver::FivePoint => five_point(&chosen),
        }
    };
    let mut best = consensus::run(pairs.len(), sample_size, params, threshold, fit, residual)?;
    let iterations = best.iterations;

    // Least-median-of-squares pass over the consensus set: an outlier that
    // happens to lie within the threshold can win the count, but a sample
    // free of it fits the rest better in the median.
    let members: Vec<usize> = (0..pairs.len()).filter(|&i| best.inliers[i]).collect();
    let median_over = |e: &EssentialMatrix| {
        let mut r: Vec<f64> = members.iter().map(|&i| residual(e, i)).collect();
        let mid = r.len() / 2;
        *r.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    let mut lmeds = (median_over(&best.model), best.model);
    if members.len() > sample_size {
        for j in 0..LMEDS_SAMPLES {
            let sample = consensus::draw_sample(params.seed, usize::MAX - j, members.len(), sample_size);
            let idx: Vec<usize> = sample.iter().map(|&s| members[s]).collect();
            for e in fit(&idx) {
                let m = median_over(&e);
                if m < lmeds.0 {
                    lmeds = (m, e);
                }
            }
        }
    }
    if lmeds.1 != best.model {
        best = consensus::score(lmeds.1, pairs.len(), threshold, &residual, iterations);
    }

    // Refit on the inliers whose residual is consistent with the inlier noise
    // level, so that near-threshold outliers do not bias the final model.
    for _ in 0..REFINE_ROUNDS {
        let residuals: Vec<f64> = (0..pairs.len()).map(|i| residual(&best.model, i)).collect();
        let inlier_res: Vec<f64> = residuals.iter().copied().filter(|&r| r < threshold).collect();
        let cutoff = (3.0 * robust_scale(inlier_res)).max(1e-9);
        let subset: Vec<_> = (0..pairs.len()).filter(|&i| residuals[i] <= cutoff.min(threshold)).map(|i| pairs[i]).collect();
        let Some(linear) = eight_point(&subset) else { break };
        let refit = refine_essential(&linear, &subset, k).unwrap_or(linear);
        let candidate = consensus::score(refit, pairs.len(), threshold, &residual, iterations);
        if candidate.cost >= best.cost {
            break;
        }
        let settled = (candidate.model.matrix() - best.model.matrix()).norm() < 1e-14;
        best = candidate;
        if settled {
            break;
        }
    }

    let sampson_inliers: Vec<usize> = (0..pairs.len()).filter(|&i| best.inliers[i]).collect();
    let inlier_pairs: Vec<_> = sampson_inliers.iter().map(|&i| pairs[i]).collect();
    let decomposition = match decompose_essential(&best.model, &inlier_pairs) {
        Ok(d) => d,
        Err(GeomError::AmbiguousCheirality(_)) => {
            return Err(RobustError::NoConsensus { inliers: 0, needed: MIN_ESSENTIAL_INLIERS })
        }
        Err(e) => return Err(e.into()),
    };
    let inliers: Vec<usize> = sampson_inliers
        .iter()
        .zip(&decomposition.cheiral_inliers)
        .filter(|(_, &ok)| ok)
        .map(|(&i, _)| i)
        .collect();
    if inliers.len() < MIN_ESSENTIAL_INLIERS {
        return Err(RobustError::NoConsensus { inliers: inliers.len(), needed: MIN_ESSENTIAL_INLIERS });
    }
    Ok(EssentialEstimate {
        essential: best.model,
        rotation: decomposition.motion.rotation,
        unit_translation: decomposition.motion.baseline,
        inliers,
        sampson_inliers,
        iterations,
    })
}
