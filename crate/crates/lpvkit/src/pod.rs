//! Proper orthogonal decomposition and the affine LPV surrogate model.
//!
//! A snapshot matrix is factored once by a thin SVD; any nested pair of
//! orders `r <= k` then shares the same leading columns. The surrogate
//! approximates the state-dependent coefficient `A0 + L(x)` by scheduling
//! only on the leading `r` POD coordinates,
//! `rho_bar' = (Abar_0 + sum_i rho_bar_i Abar_i) rho_bar + Bbar u`,
//! with `Abar_i` the Galerkin compressions of `A_i = L(v_i)`. The parameter
//! order `r` and the reduction order `k` can be chosen independently.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{integrate_ode, OdeOptions, OdeRhs};
use crate::sdc::QuadraticSystem;
use crate::signal::{signal_value, SignalSpec};
use crate::trajectory::{Trajectory, TrajectoryMeta};

/// Full-order coefficient matrices are cached in the surrogate only up to
/// this state dimension.
pub const FULL_COEFF_CACHE_LIMIT: usize = 512;

/// Orthonormal POD basis with the complete singular spectrum of the
/// snapshot matrix it was computed from.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// Basis columns (leading left singular vectors), sign-normalized so the
    /// largest-magnitude entry of each column is positive.
    pub v: DMatrix<f64>,
    /// All singular values of the snapshot matrix, descending.
    pub singular_values: DVector<f64>,
    /// Requested number of columns.
    pub requested: usize,
    /// Set when the numerical rank fell short of the request and the basis
    /// was truncated to the attained rank.
    pub truncated: bool,
}

impl PodBasis {
    pub fn order(&self) -> usize {
        self.v.ncols()
    }

    /// Leading `k` columns as an owned matrix.
    pub fn leading(&self, k: usize) -> Result<DMatrix<f64>> {
        if k > self.order() {
            return Err(Error::Dimension {
                context: "basis truncation",
                expected: format!("k <= {}", self.order()),
                found: format!("{k}"),
            });
        }
        Ok(self.v.columns(0, k).into_owned())
    }
}

/// Computes a POD basis of order `k` from an `n x N` snapshot matrix.
///
/// If the numerical rank of the snapshots is below `k`, the basis of the
/// attained rank is returned with the `truncated` flag set.
pub fn pod_basis(snapshots: &DMatrix<f64>, k: usize) -> Result<PodBasis> {
    let (n, cols) = snapshots.shape();
    if k == 0 || n == 0 || cols == 0 {
        return Err(Error::Dimension {
            context: "pod basis",
            expected: "nonempty snapshots and k >= 1".into(),
            found: format!("{n}x{cols}, k = {k}"),
        });
    }
    let svd = snapshots.clone().svd(true, false);
    let u = svd.u.as_ref().ok_or_else(|| {
        Error::NumericalBreakdown("SVD did not produce left singular vectors".into())
    })?;
    // Order columns by singular value, largest first (stable under ties).
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
            .then(a.cmp(&b))
    });
    let sigma = DVector::from_fn(idx.len(), |i, _| svd.singular_values[idx[i]]);

    let tol = (n.max(cols) as f64) * f64::EPSILON * sigma[0].max(0.0);
    let rank = sigma.iter().take_while(|&&s| s > tol).count();
    let attained = k.min(rank);
    if attained == 0 {
        return Err(Error::NumericalBreakdown("snapshot matrix is numerically zero".into()));
    }

    let mut v = DMatrix::zeros(n, attained);
    for (col, &src) in idx.iter().take(attained).enumerate() {
        v.set_column(col, &u.column(src));
        // Sign convention: largest-magnitude entry positive, first index on
        // ties, so bases are reproducible across runs and platforms.
        let mut pivot = 0;
        for i in 1..n {
            if v[(i, col)].abs() > v[(pivot, col)].abs() {
                pivot = i;
            }
        }
        if v[(pivot, col)] < 0.0 {
            for i in 0..n {
                v[(i, col)] = -v[(i, col)];
            }
        }
    }
    Ok(PodBasis {
        v,
        singular_values: sigma,
        requested: k,
        truncated: attained < k,
    })
}

/// Projects a full state onto basis coordinates, `rho = V^T x`.
pub fn encode(v: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != v.nrows() {
        return Err(Error::Dimension {
            context: "encode",
            expected: format!("length {}", v.nrows()),
            found: format!("length {}", x.len()),
        });
    }
    Ok(v.transpose() * x)
}

/// Lifts basis coordinates back to the full space, `x = V rho`.
pub fn decode(v: &DMatrix<f64>, rho: &DVector<f64>) -> Result<DVector<f64>> {
    if rho.len() != v.ncols() {
        return Err(Error::Dimension {
            context: "decode",
            expected: format!("length {}", v.ncols()),
            found: format!("length {}", rho.len()),
        });
    }
    Ok(v * rho)
}

/// Squared Frobenius error of projecting the snapshots on the leading `k`
/// basis columns. Equals the tail sum of the discarded squared singular
/// values.
pub fn projection_error_sq(basis: &PodBasis, snapshots: &DMatrix<f64>, k: usize) -> Result<f64> {
    let vk = basis.leading(k)?;
    let residual = snapshots - &vk * (vk.transpose() * snapshots);
    Ok(residual.norm_squared())
}

/// Affine LPV surrogate of a quadratic system.
#[derive(Debug, Clone)]
pub struct AffineLpvModel {
    pub r: usize,
    pub k: usize,
    /// `a_bar[0]` is the constant part; `a_bar[i]`, `i = 1..=r`, multiplies
    /// the i-th scheduling coordinate.
    pub a_bar: Vec<DMatrix<f64>>,
    pub b_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub v_r: DMatrix<f64>,
    pub v_k: DMatrix<f64>,
    /// Full-order coefficient matrices `A_i = L(v_i)`, cached for small
    /// state dimensions.
    pub full_ai: Option<Vec<DMatrix<f64>>>,
    pub name: String,
}

impl AffineLpvModel {
    pub fn p(&self) -> usize {
        self.b_bar.ncols()
    }

    pub fn q(&self) -> usize {
        self.c_bar.nrows()
    }

    /// `Abar_0 + sum_i rho_i Abar_i` for a scheduling vector of length `r`.
    pub fn scheduled_state_matrix(&self, rho: &[f64]) -> Result<DMatrix<f64>> {
        if rho.len() != self.r {
            return Err(Error::Dimension {
                context: "scheduled state matrix",
                expected: format!("length {}", self.r),
                found: format!("length {}", rho.len()),
            });
        }
        let mut a = self.a_bar[0].clone();
        for (i, &w) in rho.iter().enumerate() {
            a.zip_apply(&self.a_bar[i + 1], |acc, v| *acc += w * v);
        }
        Ok(a)
    }
}

/// Builds the affine LPV surrogate of orders `(k, r)` from a POD basis.
pub fn build_affine_lpv(
    sys: &QuadraticSystem,
    basis: &PodBasis,
    k: usize,
    r: usize,
) -> Result<AffineLpvModel> {
    if r > k {
        return Err(Error::ParameterOrder { r, k });
    }
    if r == 0 {
        return Err(Error::ParameterOrder { r, k });
    }
    if basis.v.nrows() != sys.n {
        return Err(Error::Dimension {
            context: "lpv assembly",
            expected: format!("{} basis rows", sys.n),
            found: format!("{}", basis.v.nrows()),
        });
    }
    let v_k = basis.leading(k)?;
    let v_r = basis.leading(r)?;

    let mut a_bar = Vec::with_capacity(r + 1);
    a_bar.push(v_k.transpose() * &sys.a0 * &v_k);
    let mut full = Vec::with_capacity(r);
    for i in 0..r {
        let vi = v_r.column(i).into_owned();
        let ai = sys.quad.coefficient_matrix(&vi);
        a_bar.push(v_k.transpose() * &ai * &v_k);
        if sys.n <= FULL_COEFF_CACHE_LIMIT {
            full.push(ai);
        }
    }
    Ok(AffineLpvModel {
        r,
        k,
        a_bar,
        b_bar: v_k.transpose() * &sys.b,
        c_bar: &sys.c * &v_k,
        v_r,
        v_k,
        full_ai: (sys.n <= FULL_COEFF_CACHE_LIMIT).then_some(full),
        name: format!("lpv({}, k={k}, r={r})", sys.name),
    })
}

/// Right-hand side of the self-scheduled surrogate: the scheduling vector is
/// the leading `r` components of the reduced state itself.
pub fn lpv_rhs(model: &AffineLpvModel, rho_bar: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if rho_bar.len() != model.k {
        return Err(Error::Dimension {
            context: "lpv state",
            expected: format!("length {}", model.k),
            found: format!("length {}", rho_bar.len()),
        });
    }
    if u.len() != model.p() {
        return Err(Error::Dimension {
            context: "lpv input",
            expected: format!("length {}", model.p()),
            found: format!("length {}", u.len()),
        });
    }
    let mut out = &model.a_bar[0] * rho_bar + &model.b_bar * u;
    for i in 0..model.r {
        out += (&model.a_bar[i + 1] * rho_bar) * rho_bar[i];
    }
    Ok(out)
}

/// Forced LPV surrogate as an ODE right-hand side.
pub struct ForcedLpv<'a> {
    pub model: &'a AffineLpvModel,
    pub input: &'a SignalSpec,
}

impl OdeRhs for ForcedLpv<'_> {
    fn dim(&self) -> usize {
        self.model.k
    }

    fn eval(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        let u = signal_value(self.input, t, self.model.p()).expect("validated amplitude");
        out.gemv(1.0, &self.model.a_bar[0], x, 0.0);
        out.gemv(1.0, &self.model.b_bar, &u, 1.0);
        for i in 0..self.model.r {
            out.gemv(x[i], &self.model.a_bar[i + 1], x, 1.0);
        }
    }

    fn jacobian(&self, _t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.copy_from(&self.model.a_bar[0]);
        for i in 0..self.model.r {
            let w = x[i];
            out.zip_apply(&self.model.a_bar[i + 1], |acc, v| *acc += w * v);
            let col = &self.model.a_bar[i + 1] * x;
            for row in 0..self.model.k {
                out[(row, i)] += col[row];
            }
        }
    }
}

/// Integrates the forced surrogate and samples it like a plant trajectory.
pub fn integrate_lpv(
    model: &AffineLpvModel,
    rho0: &DVector<f64>,
    input: &SignalSpec,
    t_span: (f64, f64),
    n_out: usize,
    opts: &OdeOptions,
) -> Result<Trajectory> {
    signal_value(input, t_span.0, model.p())?;
    let rhs = ForcedLpv { model, input };
    let sol = integrate_ode(&rhs, rho0, t_span, n_out, opts)?;
    let meta = TrajectoryMeta {
        model: model.name.clone(),
        role: "reduced_open_loop".into(),
        method: opts.method,
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        stats: sol.stats,
        input: Some(input.clone()),
    };
    let p = model.p();
    Trajectory::from_samples(
        sol.times,
        sol.states,
        &model.c_bar.clone(),
        |t, _| signal_value(input, t, p).expect("validated amplitude"),
        p,
        meta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdc::{make_benchmark, quadratic_rhs, sdc_coefficient};
    use crate::trajectory::{integrate, snapshot_matrix, InputSource};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn burgers_snapshots(n: usize) -> (QuadraticSystem, DMatrix<f64>) {
        let mut p = BTreeMap::new();
        p.insert("n".to_string(), n as f64);
        let sys = make_benchmark("burgers", &p).unwrap();
        let spec = SignalSpec::fading(vec![1.0, -0.6]);
        let traj = integrate(
            &sys,
            &DVector::zeros(n),
            InputSource::Signal(&spec),
            (0.0, 5.0),
            101,
            &OdeOptions { rel_tol: 1e-8, abs_tol: 1e-10, ..OdeOptions::default() },
        )
        .unwrap();
        let snap = snapshot_matrix(&[&traj]).unwrap();
        (sys, snap)
    }

    #[test]
    fn basis_columns_are_orthonormal_and_sign_normalized() {
        let (_, snap) = burgers_snapshots(32);
        for k in [2usize, 4, 8] {
            let basis = pod_basis(&snap, k).unwrap();
            assert_eq!(basis.order(), k);
            assert!(!basis.truncated);
            let gram = basis.v.transpose() * &basis.v;
            let defect = (&gram - DMatrix::identity(k, k)).amax();
            assert!(defect <= 1e-10, "orthonormality defect {defect}");
            for col in 0..k {
                let c = basis.v.column(col);
                let mut pivot = 0;
                for i in 1..c.len() {
                    if c[i].abs() > c[pivot].abs() {
                        pivot = i;
                    }
                }
                assert!(c[pivot] > 0.0, "column {col} not sign normalized");
            }
        }
    }

    #[test]
    fn bases_are_nested_and_deterministic() {
        let (_, snap) = burgers_snapshots(32);
        let b8 = pod_basis(&snap, 8).unwrap();
        let b3 = pod_basis(&snap, 3).unwrap();
        assert_eq!(b8.v.columns(0, 3).into_owned(), b3.v);
        let again = pod_basis(&snap, 8).unwrap();
        assert_eq!(b8.v, again.v);
    }

    #[test]
    fn projection_error_matches_singular_value_tail() {
        let (_, snap) = burgers_snapshots(32);
        let basis = pod_basis(&snap, 12).unwrap();
        for k in [2usize, 4, 8] {
            let direct = projection_error_sq(&basis, &snap, k).unwrap();
            let tail: f64 = basis
                .singular_values
                .iter()
                .skip(k)
                .map(|s| s * s)
                .sum();
            let denom = tail.max(1e-300);
            assert!(
                (direct - tail).abs() <= 1e-8 * denom.max(1.0),
                "k = {k}: direct {direct} tail {tail}"
            );
        }
    }

    #[test]
    fn rank_deficient_snapshots_truncate_with_flag() {
        let mut snap = DMatrix::zeros(10, 20);
        let mut rng = StdRng::seed_from_u64(3);
        let cols: Vec<DVector<f64>> =
            (0..3).map(|_| DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0))).collect();
        for j in 0..20 {
            snap.set_column(j, &cols[j % 3]);
        }
        let basis = pod_basis(&snap, 5).unwrap();
        assert!(basis.truncated);
        assert_eq!(basis.order(), 3);
        assert_eq!(basis.requested, 5);
    }

    #[test]
    fn exact_embedding_reproduces_quadratic_rhs() {
        let mut p = BTreeMap::new();
        p.insert("n".to_string(), 8.0);
        let sys = make_benchmark("burgers", &p).unwrap();
        // Diagonal snapshots with descending weights give the identity basis.
        let snap = DMatrix::from_fn(8, 8, |i, j| if i == j { 8.0 - i as f64 } else { 0.0 });
        let basis = pod_basis(&snap, 8).unwrap();
        assert_relative_eq!(basis.v, DMatrix::identity(8, 8), epsilon = 1e-12);
        let model = build_affine_lpv(&sys, &basis, 8, 8).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let x = DVector::from_fn(8, |_, _| rng.gen_range(-2.0..2.0));
            let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let full = quadratic_rhs(&sys, &x, &u).unwrap();
            let reduced = lpv_rhs(&model, &x, &u).unwrap();
            let denom = full.norm().max(1.0);
            assert!((&full - &reduced).norm() <= 1e-12 * denom);
        }
    }

    #[test]
    fn reduced_matrices_match_direct_compression() {
        let (sys, snap) = burgers_snapshots(32);
        let basis = pod_basis(&snap, 8).unwrap();
        let model = build_affine_lpv(&sys, &basis, 8, 4).unwrap();
        assert_eq!(model.a_bar.len(), 5);
        let vk = basis.leading(8).unwrap();
        for i in 0..4 {
            let vi = basis.v.column(i).into_owned();
            // Independent route: A_i = (A0 + L(v_i)) - A0 via the SDC map.
            let ai = sdc_coefficient(&sys, &vi).unwrap() - &sys.a0;
            let oracle = vk.transpose() * &ai * &vk;
            let defect = (&model.a_bar[i + 1] - &oracle).amax();
            assert!(defect <= 1e-10, "coefficient {i} defect {defect}");
        }
        let full = model.full_ai.as_ref().unwrap();
        assert_eq!(full.len(), 4);
        assert_eq!(full[0].nrows(), 32);
    }

    #[test]
    fn parameter_order_is_independent_of_reduction_order() {
        let (sys, snap) = burgers_snapshots(32);
        let basis = pod_basis(&snap, 10).unwrap();
        let m_low = build_affine_lpv(&sys, &basis, 8, 2).unwrap();
        let m_high = build_affine_lpv(&sys, &basis, 8, 4).unwrap();
        for i in 0..=2 {
            assert_eq!(m_low.a_bar[i], m_high.a_bar[i]);
        }
        let m_other_k = build_affine_lpv(&sys, &basis, 10, 2).unwrap();
        assert_eq!(m_low.v_r, m_other_k.v_r);
    }

    #[test]
    fn paper_scale_orders_produce_seven_reduced_matrices() {
        let mut p = BTreeMap::new();
        p.insert("n".to_string(), 64.0);
        let sys = make_benchmark("burgers", &p).unwrap();
        let spec = SignalSpec::fading(vec![1.0, -0.6]);
        let traj = integrate(
            &sys,
            &DVector::zeros(64),
            InputSource::Signal(&spec),
            (0.0, 5.0),
            417,
            &OdeOptions { rel_tol: 1e-6, abs_tol: 1e-8, ..OdeOptions::default() },
        )
        .unwrap();
        let snap = snapshot_matrix(&[&traj]).unwrap();
        let basis = pod_basis(&snap, 36).unwrap();
        let model = build_affine_lpv(&sys, &basis, 36, 6).unwrap();
        assert_eq!(model.a_bar.len(), 7);
        for a in &model.a_bar {
            assert_eq!(a.shape(), (36, 36));
        }
        assert_eq!(model.b_bar.shape(), (36, 2));
        assert_eq!(model.c_bar.shape(), (6, 36));
    }

    #[test]
    fn encode_decode_roundtrip_in_span() {
        let (_, snap) = burgers_snapshots(32);
        let basis = pod_basis(&snap, 6).unwrap();
        let rho = DVector::from_vec(vec![0.3, -1.0, 0.2, 0.9, -0.4, 0.1]);
        let x = decode(&basis.v, &rho).unwrap();
        let back = encode(&basis.v, &x).unwrap();
        assert_relative_eq!(back, rho, epsilon = 1e-12);
    }

    #[test]
    fn order_violations_are_rejected() {
        let (sys, snap) = burgers_snapshots(32);
        let basis = pod_basis(&snap, 6).unwrap();
        assert!(matches!(
            build_affine_lpv(&sys, &basis, 4, 5),
            Err(Error::ParameterOrder { r: 5, k: 4 })
        ));
        assert!(build_affine_lpv(&sys, &basis, 8, 2).is_err(), "k beyond basis order");
        let model = build_affine_lpv(&sys, &basis, 6, 3).unwrap();
        assert!(lpv_rhs(&model, &DVector::zeros(5), &DVector::zeros(2)).is_err());
        assert!(lpv_rhs(&model, &DVector::zeros(6), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn reduced_trajectory_tracks_full_model_when_k_equals_n() {
        let mut p = BTreeMap::new();
        p.insert("n".to_string(), 12.0);
        let sys = make_benchmark("burgers", &p).unwrap();
        let spec = SignalSpec::fading(vec![0.8, -0.5]);
        let opts = OdeOptions { rel_tol: 1e-9, abs_tol: 1e-11, ..OdeOptions::default() };
        let full = integrate(
            &sys,
            &DVector::zeros(12),
            InputSource::Signal(&spec),
            (0.0, 3.0),
            61,
            &opts,
        )
        .unwrap();
        let snap = snapshot_matrix(&[&full]).unwrap();
        let basis = pod_basis(&snap, 12).unwrap();
        assert_eq!(basis.order(), 12, "snapshots should have full rank");
        let model = build_affine_lpv(&sys, &basis, 12, 12).unwrap();
        let rho0 = encode(&basis.v, &DVector::zeros(12)).unwrap();
        let red = integrate_lpv(&model, &rho0, &spec, (0.0, 3.0), 61, &opts).unwrap();
        for j in [15usize, 30, 60] {
            let lifted = decode(&basis.v, &red.states.column(j).into_owned()).unwrap();
            let err = (&lifted - full.states.column(j)).norm();
            let denom = full.states.column(j).norm().max(1e-6);
            assert!(err / denom <= 5.0 * 1e-9 * 100.0, "column {j}: rel err {}", err / denom);
        }
    }
}
