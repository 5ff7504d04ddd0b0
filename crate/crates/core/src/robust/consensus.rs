use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{RansacParams, RobustError};

/// Hypotheses evaluated between adaptive-termination checks.
const BATCH: usize = 16;

#[derive(Debug, Clone)]
pub(crate) struct Consensus<M> {
    pub model: M,
    pub inliers: Vec<bool>,
    pub count: usize,
    /// Truncated quadratic cost.
    pub cost: f64,
    /// Median inlier residual, used to break inlier-count ties.
    pub median: f64,
    pub iterations: usize,
}

impl<M> Consensus<M> {
    pub(crate) fn beats(&self, other: &Self) -> bool {
        self.count > other.count
            || (self.count == other.count && (self.median < other.median || (self.median == other.median && self.cost < other.cost)))
    }
}

/// Sample for a given iteration. Depends only on `(seed, iteration)`.
pub(crate) fn draw_sample(seed: u64, iteration: usize, n: usize, k: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    index::sample(&mut rng, n, k).into_vec()
}

/// Iterations needed to draw one all-inlier sample with probability `confidence`.
pub(crate) fn required_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64) -> usize {
    if inlier_ratio <= 0.0 {
        return usize::MAX;
    }
    let good = inlier_ratio.powi(sample_size as i32);
    if good >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

pub(crate) fn score<M>(model: M, n: usize, threshold: f64, residual: &(impl Fn(&M, usize) -> f64 + Sync), iteration: usize) -> Consensus<M> {
    let t2 = threshold * threshold;
    let mut inliers = vec![false; n];
    let mut count = 0;
    let mut cost = 0.0;
    let mut kept = Vec::new();
    for (i, flag) in inliers.iter_mut().enumerate() {
        let r = residual(&model, i);
        if r < threshold {
            *flag = true;
            count += 1;
            cost += r * r;
            kept.push(r);
        } else {
            cost += t2;
        }
    }
    let median = if kept.is_empty() {
        f64::INFINITY
    } else {
        let mid = kept.len() / 2;
        *kept.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    Consensus { model, inliers, count, cost, median, iterations: iteration }
}

/// Hypothesize-and-verify loop. `fit` maps a sample to zero or more models
/// (zero means the sample was degenerate).
pub(crate) fn run<M, F, R>(
    n: usize,
    sample_size: usize,
    params: &RansacParams,
    threshold: f64,
    fit: F,
    residual: R,
) -> Result<Consensus<M>, RobustError>
where
    M: Send,
    F: Fn(&[usize]) -> Vec<M> + Sync,
    R: Fn(&M, usize) -> f64 + Sync,
{
    params.validate()?;
    if n < sample_size {
        return Err(RobustError::InsufficientCorrespondences { needed: sample_size, got: n });
    }
    let mut best: Option<Consensus<M>> = None;
    let mut limit = params.max_iterations;
    let mut done = 0;
    while done < limit {
        let end = (done + BATCH).min(limit);
        let batch: Vec<Option<Consensus<M>>> = (done..end)
            .into_par_iter()
            .map(|iteration| {
                let sample = draw_sample(params.seed, iteration, n, sample_size);
                fit(&sample)
                    .into_iter()
                    .map(|model| score(model, n, threshold, &residual, iteration))
                    .reduce(|a, b| if b.beats(&a) { b } else { a })
            })
            .collect();
        for candidate in batch.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| candidate.beats(b)) {
                best = Some(candidate);
            }
        }
        done = end;
        if let Some(b) = &best {
            let ratio = b.count as f64 / n as f64;
            limit = limit.min(required_iterations(ratio, sample_size, params.confidence));
        }
    }
    let mut best = best.ok_or(RobustError::AllHypothesesDegenerate)?;
    best.iterations = done;
    Ok(best)
}
