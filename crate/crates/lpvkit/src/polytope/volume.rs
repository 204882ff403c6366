//! Polytope volume: exact for boxes, seeded Monte Carlo otherwise.
//!
//! Samples are drawn in fixed-size chunks with one derived RNG stream per
//! chunk and integer hit counts, so the estimate is identical whatever the
//! thread count or schedule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::seed::derive_rng;

use super::{membership_lp, ParamPolytope, MEMBERSHIP_TOL};

const CHUNK: usize = 1024;

/// Volume estimate and its standard error. Boxes are exact (standard error
/// zero); general polytopes use hit-or-miss Monte Carlo over their own
/// bounding box with a binomial error model.
pub fn polytope_volume(
    poly: &ParamPolytope,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (lo, hi) = poly.own_bounds();
    if poly.is_box() {
        let mut v = 1.0;
        for i in 0..poly.r {
            v *= hi[i] - lo[i];
        }
        return Ok((v, 0.0));
    }
    if n_samples < 1000 {
        return Err(Error::Dimension {
            context: "volume sampling",
            expected: "at least 1000 samples for non-box polytopes".into(),
            found: format!("{n_samples}"),
        });
    }
    let mut box_vol = 1.0;
    for i in 0..poly.r {
        box_vol *= hi[i] - lo[i];
    }
    if box_vol <= 0.0 {
        // Flat along some axis: measure-zero polytope.
        return Ok((0.0, 0.0));
    }

    let n_chunks = n_samples.div_ceil(CHUNK);
    let hits: u64 = par::map_indexed(n_chunks, |c| {
        let count = CHUNK.min(n_samples - c * CHUNK);
        let samples = draw_chunk(&lo, &hi, count, seed, "volume", c as u64);
        membership_hits(&poly.vertices, &samples)
    })
    .into_iter()
    .sum();

    let p_hat = hits as f64 / n_samples as f64;
    let est = box_vol * p_hat;
    let se = box_vol * (p_hat * (1.0 - p_hat) / n_samples as f64).sqrt();
    Ok((est, se))
}

/// Uniform samples in `[lo, hi]` for one deterministic chunk.
pub(crate) fn draw_chunk(
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    count: usize,
    seed: u64,
    label: &str,
    chunk: u64,
) -> Vec<DVector<f64>> {
    let r = lo.len();
    let mut rng = derive_rng(seed, label, chunk);
    (0..count)
        .map(|_| DVector::from_fn(r, |i, _| lo[i] + rng.gen_range(0.0..1.0) * (hi[i] - lo[i])))
        .collect()
}

/// Deterministic pre-drawn sample set spanning several chunks.
pub(crate) fn draw_samples(
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    n: usize,
    seed: u64,
    label: &str,
) -> Vec<DVector<f64>> {
    let n_chunks = n.div_ceil(CHUNK);
    let mut out = Vec::with_capacity(n);
    for c in 0..n_chunks {
        let count = CHUNK.min(n - c * CHUNK);
        out.extend(draw_chunk(lo, hi, count, seed, label, c as u64));
    }
    out
}

/// Number of samples inside the convex hull of `vertices`.
pub(crate) fn membership_hits(vertices: &DMatrix<f64>, samples: &[DVector<f64>]) -> u64 {
    samples
        .iter()
        .filter(|s| {
            membership_lp(vertices, s)
                .map(|(t, _)| t <= MEMBERSHIP_TOL)
                .unwrap_or(false)
        })
        .count() as u64
}
