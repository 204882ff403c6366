//! Genetic search for a low-vertex polytope that underbids the bounding box.
//!
//! A candidate is a set of `n_k` added points; the scored polytope is the
//! convex hull of the data's own hull vertices together with those points,
//! so every generating datum is contained by construction. Fitness trades
//! estimated volume (fraction of the bounding-box volume) against the
//! effective vertex count. All randomness flows through derived streams and
//! all parallel work returns integers or pure values, so a seed fixes the
//! result exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::seed::{derive_key, derive_rng, matrix_digest};

use super::volume::{draw_samples, membership_hits, polytope_volume};
use super::{
    bounding_box, cloud_bounds, expand_bounds, hull_vertex_filter, membership_lp,
    ParamPolytope, PolytopeKind, Provenance, MAX_BOX_DIM, MEMBERSHIP_TOL,
};

/// Genetic-algorithm settings for `optimize_polytope`.
#[derive(Debug, Clone)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    /// Gaussian mutation sigma as a fraction of the per-axis data range.
    pub mutation_scale: f64,
    /// Per-coordinate mutation probability.
    pub mutation_prob: f64,
    /// Probability of slot-wise crossover (otherwise the child clones one parent).
    pub crossover_prob: f64,
    /// Scalarization weight on the effective-vertex term.
    pub beta: f64,
    /// Monte Carlo samples shared by all fitness evaluations of a run.
    pub fitness_samples: usize,
    /// Return the bounding box (flagged) when the winner does not underbid
    /// it; error out instead when false.
    pub allow_fallback: bool,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 40,
            generations: 200,
            mutation_scale: 0.05,
            mutation_prob: 0.25,
            crossover_prob: 0.6,
            beta: 1.0,
            fitness_samples: 2048,
            allow_fallback: true,
        }
    }
}

/// Optimizes a scheduling polytope over a point cloud. The result either
/// underbids the bounding box in volume with at most 2^r vertices, or is the
/// bounding box itself with the fallback flag set.
pub fn optimize_polytope(
    points: &DMatrix<f64>,
    n_k: usize,
    ga: &GaParams,
    seed: u64,
) -> Result<ParamPolytope> {
    let (r, n) = points.shape();
    if r == 0 || n == 0 || n_k == 0 {
        return Err(Error::Dimension {
            context: "polytope optimization",
            expected: "nonempty cloud and n_k >= 1".into(),
            found: format!("{r}x{n} cloud, n_k = {n_k}"),
        });
    }
    if r > MAX_BOX_DIM {
        return Err(Error::DimensionTooLarge(r));
    }
    if ga.population < 4 || ga.generations == 0 || ga.fitness_samples < 64 {
        return Err(Error::Dimension {
            context: "ga parameters",
            expected: "population >= 4, generations >= 1, fitness_samples >= 64".into(),
            found: format!(
                "population {}, generations {}, fitness_samples {}",
                ga.population, ga.generations, ga.fitness_samples
            ),
        });
    }

    let digest = matrix_digest(points);
    let hull_idx = hull_vertex_filter(points)?;
    let hull = points.select_columns(hull_idx.iter());
    let bbox = bounding_box(points, 0.0)?;
    let (bbox_vol, _) = polytope_volume(&bbox, 1000, 0)?;

    // Fixed sampling box: the data box widened enough to hold every
    // candidate (mutations are clamped into it), so hit counting measures
    // the true hull volume with common random numbers across candidates.
    let (mut lo_s, mut hi_s) = cloud_bounds(points);
    expand_bounds(&mut lo_s, &mut hi_s, 0.25);
    let mut sample_vol = 1.0;
    for i in 0..r {
        sample_vol *= hi_s[i] - lo_s[i];
    }
    let samples = draw_samples(&lo_s, &hi_s, ga.fitness_samples, seed, "ga-mc");
    let sides = DVector::from_fn(r, |i, _| hi_s[i] - lo_s[i]);

    // Initial population: candidates sit on scaled hull directions from the
    // centroid, spread by farthest-point order so they surround the cloud.
    let centroid = points.column_mean();
    let fps = farthest_point_order(&hull, &centroid);
    let mut population: Vec<DMatrix<f64>> = (0..ga.population)
        .map(|idx| {
            let mut rng = derive_rng(seed, "ga-init", idx as u64);
            let mut cand = DMatrix::zeros(r, n_k);
            for j in 0..n_k {
                let dir = hull.column(fps[j % fps.len()]) - &centroid;
                let s = rng.gen_range(1.35..1.9);
                for i in 0..r {
                    let mut v = centroid[i] + s * dir[i];
                    if idx > 0 {
                        v += 0.08 * sides[i] * gauss(&mut rng);
                    }
                    cand[(i, j)] = v.clamp(lo_s[i], hi_s[i]);
                }
            }
            cand
        })
        .collect();

    let two_r = (1u64 << r) as f64;
    let evaluate = |pop: &[DMatrix<f64>]| -> Vec<(f64, usize)> {
        par::map_slice(pop, |cand| {
            let union = stack_columns(&hull, cand);
            let eff = effective_union_vertices(&union, hull.ncols());
            let eff_mat = union.select_columns(eff.iter());
            let hits = membership_hits(&eff_mat, &samples);
            let vol = sample_vol * hits as f64 / samples.len() as f64;
            (vol / bbox_vol + ga.beta * eff.len() as f64 / two_r, eff.len())
        })
    };

    let mut fitness = evaluate(&population);
    let mut best = select_best(&population, &fitness);
    let mut rng = derive_rng(seed, "ga-evo", 0);

    for _ in 0..ga.generations {
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| fitness[a].0.partial_cmp(&fitness[b].0).unwrap().then(a.cmp(&b)));

        let mut next: Vec<DMatrix<f64>> =
            vec![population[order[0]].clone(), population[order[1]].clone()];
        while next.len() < ga.population {
            let pa = tournament(&mut rng, &fitness);
            let pb = tournament(&mut rng, &fitness);
            let mut child = if rng.gen_bool(ga.crossover_prob) {
                let mut c = population[pa].clone();
                for j in 0..n_k {
                    if rng.gen_bool(0.5) {
                        c.set_column(j, &population[pb].column(j));
                    }
                }
                c
            } else {
                population[pa].clone()
            };
            for j in 0..n_k {
                for i in 0..r {
                    if rng.gen_range(0.0..1.0) < ga.mutation_prob {
                        let v = child[(i, j)] + ga.mutation_scale * sides[i] * gauss(&mut rng);
                        child[(i, j)] = v.clamp(lo_s[i], hi_s[i]);
                    }
                }
            }
            next.push(child);
        }
        population = next;
        fitness = evaluate(&population);
        let gen_best = select_best(&population, &fitness);
        if gen_best.1 < best.1 {
            best = gen_best;
        }
    }

    // Rebuild the winner and verify the underbidding contract with a fresh,
    // larger Monte Carlo estimate.
    let union = stack_columns(&hull, &best.0);
    let eff = effective_union_vertices(&union, hull.ncols());
    let optimized = ParamPolytope {
        r,
        vertices: union.select_columns(eff.iter()),
        kind: PolytopeKind::Optimized,
        u_pc: None,
        provenance: Provenance { source_digest: digest.clone(), seed },
        fallback: false,
        notes: Vec::new(),
    };
    let final_seed = u64::from_le_bytes(derive_key(seed, "ga-final", 0)[..8].try_into().unwrap());
    let (vol_est, _) = polytope_volume(&optimized, (4 * ga.fitness_samples).max(4000), final_seed)?;

    if eff.len() <= (1usize << r) && vol_est < bbox_vol {
        Ok(optimized)
    } else if ga.allow_fallback {
        let mut fb = bounding_box(points, 0.0)?;
        fb.provenance.seed = seed;
        fb.fallback = true;
        fb.notes.push("optimizer did not underbid the bounding box; returned the box".into());
        Ok(fb)
    } else {
        Err(Error::OptimizationFailed(format!(
            "winner has {} vertices and volume {vol_est:.6e} vs box {bbox_vol:.6e}",
            eff.len()
        )))
    }
}

fn stack_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let r = a.nrows();
    let mut out = DMatrix::zeros(r, a.ncols() + b.ncols());
    out.view_mut((0, 0), (r, a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (r, b.ncols())).copy_from(b);
    out
}

/// Hull vertices of `[hull | candidates]`, exploiting that a hull point
/// inside the candidates' own hull can be discarded without the full LP.
fn effective_union_vertices(union: &DMatrix<f64>, n_hull: usize) -> Vec<usize> {
    let n = union.ncols();
    let scale = union.amax().max(1.0);
    let mut unique: Vec<usize> = Vec::new();
    for j in 0..n {
        let dup = unique
            .iter()
            .any(|&u| (union.column(j) - union.column(u)).amax() <= 1e-12 * scale);
        if !dup {
            unique.push(j);
        }
    }
    if unique.len() == 1 {
        return unique;
    }
    let cand_cols: Vec<usize> = unique.iter().copied().filter(|&j| j >= n_hull).collect();
    let cand = union.select_columns(cand_cols.iter());

    let votes = par::map_indexed(unique.len(), |m| {
        let idx = unique[m];
        let point = union.column(idx).into_owned();
        if idx < n_hull && !cand_cols.is_empty() {
            let (defect, _) = membership_lp(&cand, &point).expect("well-formed LP");
            if defect <= MEMBERSHIP_TOL {
                return false;
            }
        }
        let others: Vec<usize> = unique.iter().copied().filter(|&j| j != idx).collect();
        let rest = union.select_columns(others.iter());
        let (defect, _) = membership_lp(&rest, &point).expect("well-formed LP");
        defect > MEMBERSHIP_TOL
    });
    unique
        .into_iter()
        .zip(votes)
        .filter_map(|(idx, keep)| keep.then_some(idx))
        .collect()
}

/// Greedy farthest-point ordering of the hull columns (deterministic ties).
fn farthest_point_order(hull: &DMatrix<f64>, centroid: &DVector<f64>) -> Vec<usize> {
    let h = hull.ncols();
    let mut start = 0;
    let mut best = f64::NEG_INFINITY;
    for j in 0..h {
        let d = (hull.column(j) - centroid).norm();
        if d > best {
            best = d;
            start = j;
        }
    }
    let mut order = vec![start];
    let mut dist: Vec<f64> = (0..h)
        .map(|j| (hull.column(j) - hull.column(start)).norm())
        .collect();
    while order.len() < h {
        let mut pick = 0;
        let mut far = f64::NEG_INFINITY;
        for (j, &d) in dist.iter().enumerate() {
            if !order.contains(&j) && d > far {
                far = d;
                pick = j;
            }
        }
        order.push(pick);
        for j in 0..h {
            dist[j] = dist[j].min((hull.column(j) - hull.column(pick)).norm());
        }
    }
    order
}

fn tournament(rng: &mut ChaCha20Rng, fitness: &[(f64, usize)]) -> usize {
    let n = fitness.len();
    let mut best = rng.gen_range(0..n);
    for _ in 0..2 {
        let c = rng.gen_range(0..n);
        if fitness[c].0 < fitness[best].0 || (fitness[c].0 == fitness[best].0 && c < best) {
            best = c;
        }
    }
    best
}

fn select_best(pop: &[DMatrix<f64>], fitness: &[(f64, usize)]) -> (DMatrix<f64>, f64) {
    let mut bi = 0;
    for i in 1..pop.len() {
        if fitness[i].0 < fitness[bi].0 {
            bi = i;
        }
    }
    (pop[bi].clone(), fitness[bi].0)
}

/// Standard normal deviate by Box-Muller (keeps `rand` as the only RNG dep).
fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn small_ga() -> GaParams {
        GaParams {
            population: 12,
            generations: 10,
            fitness_samples: 256,
            ..GaParams::default()
        }
    }

    #[test]
    fn corner_filling_cloud_falls_back_to_the_box() {
        // The cloud is already a box: nothing can underbid it.
        let corners = super::super::gray_box_vertices(
            &DVector::from_vec(vec![0.0, 0.0, 0.0]),
            &DVector::from_vec(vec![1.0, 1.0, 1.0]),
        );
        let poly = optimize_polytope(&corners, 4, &small_ga(), 11).unwrap();
        assert!(poly.fallback);
        assert_eq!(poly.kind, PolytopeKind::Box);
        assert_eq!(poly.n_vertices(), 8);
        assert!(!poly.notes.is_empty());

        let strict = GaParams { allow_fallback: false, ..small_ga() };
        assert!(matches!(
            optimize_polytope(&corners, 4, &strict, 11),
            Err(Error::OptimizationFailed(_))
        ));
    }

    #[test]
    fn optimized_polytope_meets_the_underbid_contract() {
        // Thin curved cloud: easy to enclose with few vertices.
        let mut rng = StdRng::seed_from_u64(5);
        let cloud = DMatrix::from_fn(3, 160, |i, j| {
            let t = j as f64 / 159.0 * 2.0 - 1.0;
            match i {
                0 => t + 0.02 * rng.gen_range(-1.0..1.0),
                1 => t * t + 0.02 * rng.gen_range(-1.0..1.0),
                _ => 0.1 * t + 0.02 * rng.gen_range(-1.0..1.0),
            }
        });
        let poly = optimize_polytope(&cloud, 6, &small_ga(), 3).unwrap();
        // Either outcome must satisfy the contract; this cloud should win.
        assert!(poly.n_vertices() <= 8, "vertices {}", poly.n_vertices());
        for j in 0..cloud.ncols() {
            let p = cloud.column(j).into_owned();
            assert!(poly.contains(&p, MEMBERSHIP_TOL).unwrap(), "point {j} escaped");
        }
        if !poly.fallback {
            let bbox = bounding_box(&cloud, 0.0).unwrap();
            let (vb, _) = polytope_volume(&bbox, 1000, 0).unwrap();
            let (vo, se) = polytope_volume(&poly, 20_000, 99).unwrap();
            assert!(vo < vb, "optimized volume {vo} vs box {vb} (se {se})");
        }
    }

    #[test]
    fn optimization_is_deterministic_per_seed() {
        let mut rng = StdRng::seed_from_u64(6);
        let cloud = DMatrix::from_fn(3, 60, |_, _| rng.gen_range(-1.0..1.0f64).powi(3));
        let a = optimize_polytope(&cloud, 5, &small_ga(), 21).unwrap();
        let b = optimize_polytope(&cloud, 5, &small_ga(), 21).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.fallback, b.fallback);
        assert_eq!(a.provenance, b.provenance);
    }

    #[test]
    fn wake_like_cloud_keeps_at_most_the_added_vertex_budget() {
        // Six-dimensional damped multi-harmonic loop, a stand-in for the
        // leading parameter components of a wake flow.
        let cloud = DMatrix::from_fn(6, 80, |i, j| {
            let t = j as f64 / 79.0 * 12.0;
            let damp = (-t / 8.0).exp();
            match i {
                0 => damp * t.sin(),
                1 => damp * t.cos(),
                2 => 0.6 * damp * (2.0 * t).sin(),
                3 => 0.6 * damp * (2.0 * t).cos(),
                4 => 0.3 * damp * (3.0 * t).sin(),
                _ => 0.3 * damp * (3.0 * t).cos(),
            }
        });
        let ga = GaParams {
            population: 10,
            generations: 8,
            fitness_samples: 256,
            ..GaParams::default()
        };
        let poly = optimize_polytope(&cloud, 20, &ga, 17).unwrap();
        assert!(!poly.fallback, "expected a winner on a thin wake-like cloud");
        assert!(poly.n_vertices() <= 20, "vertices {}", poly.n_vertices());
        for j in 0..cloud.ncols() {
            let p = cloud.column(j).into_owned();
            assert!(poly.contains(&p, MEMBERSHIP_TOL).unwrap(), "point {j} escaped");
        }
    }
}
