//! Quadratic state-space systems in state-dependent coefficient (SDC) form.
//!
//! A system `x' = A0 x + Q(x, x) + B u`, `y = C x` is stored with its
//! quadratic term as a sparse order-3 tensor. Because `Q(x, x)` is bilinear,
//! the right-hand side can be rewritten as `x' = (A0 + L(x)) x + B u` where
//! `L(v)` is linear in `v`; that factorization is what the parameter-varying
//! embedding downstream is built on. The convention is fixed once: in every
//! stored monomial `value * x_j * x_l` of component `i`, the first index `j`
//! is the coefficient argument, so `L(v)[i, l] = sum_j Q[i][j][l] v_j`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One entry `Q[i][j][l] = value` of the sparse quadratic tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEntry {
    pub i: u32,
    pub j: u32,
    pub l: u32,
    pub value: f64,
}

/// Sparse order-3 tensor holding the quadratic term.
///
/// Entries are kept sorted lexicographically by `(i, j, l)` with duplicates
/// summed, so equal tensors have equal representations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTensor {
    n: usize,
    entries: Vec<QuadEntry>,
}

impl QuadTensor {
    /// Builds the canonical representation from an arbitrary coordinate list.
    pub fn from_entries(n: usize, raw: impl IntoIterator<Item = QuadEntry>) -> Result<Self> {
        let mut map: BTreeMap<(u32, u32, u32), f64> = BTreeMap::new();
        for e in raw {
            if e.i as usize >= n || e.j as usize >= n || e.l as usize >= n {
                return Err(Error::Dimension {
                    context: "quadratic tensor entry",
                    expected: format!("indices < {n}"),
                    found: format!("({}, {}, {})", e.i, e.j, e.l),
                });
            }
            *map.entry((e.i, e.j, e.l)).or_insert(0.0) += e.value;
        }
        let entries = map
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((i, j, l), value)| QuadEntry { i, j, l, value })
            .collect();
        Ok(Self { n, entries })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Canonically ordered coordinate list.
    pub fn entries(&self) -> &[QuadEntry] {
        &self.entries
    }

    /// Number of stored structural monomials.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Evaluates the bilinear form `Q(v, w)[i] = sum Q[i][j][l] v_j w_l`.
    pub fn bilinear(&self, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for e in &self.entries {
            out[e.i as usize] += e.value * v[e.j as usize] * w[e.l as usize];
        }
        out
    }

    /// The coefficient matrix `L(v)` with `L(v)[i, l] = sum_j Q[i][j][l] v_j`.
    pub fn coefficient_matrix(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for e in &self.entries {
            out[(e.i as usize, e.l as usize)] += e.value * v[e.j as usize];
        }
        out
    }

    /// Contraction over the state argument, `R(v)[i, j] = sum_l Q[i][j][l] v_l`.
    /// Together with `L`, this gives the Jacobian of `Q(x, x)`.
    pub fn state_contraction(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for e in &self.entries {
            out[(e.i as usize, e.j as usize)] += e.value * v[e.l as usize];
        }
        out
    }
}

/// Quadratic system `x' = A0 x + Q(x, x) + B u`, `y = C x`, pre-shifted so
/// that the origin is an equilibrium of the unforced dynamics.
#[derive(Debug, Clone)]
pub struct QuadraticSystem {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub a0: DMatrix<f64>,
    pub quad: QuadTensor,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Steady state of the original (unshifted) coordinates; the stored
    /// dynamics describe deviations from it.
    pub x_ss: DVector<f64>,
    /// Human-readable model name for manifests.
    pub name: String,
}

impl QuadraticSystem {
    pub fn new(
        a0: DMatrix<f64>,
        quad: QuadTensor,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        x_ss: DVector<f64>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let n = a0.nrows();
        if a0.ncols() != n {
            return Err(Error::Dimension {
                context: "state matrix",
                expected: format!("{n}x{n}"),
                found: format!("{}x{}", a0.nrows(), a0.ncols()),
            });
        }
        if quad.n() != n {
            return Err(Error::Dimension {
                context: "quadratic tensor",
                expected: format!("order {n}"),
                found: format!("order {}", quad.n()),
            });
        }
        if b.nrows() != n {
            return Err(Error::Dimension {
                context: "input matrix",
                expected: format!("{n} rows"),
                found: format!("{} rows", b.nrows()),
            });
        }
        if c.ncols() != n {
            return Err(Error::Dimension {
                context: "output matrix",
                expected: format!("{n} columns"),
                found: format!("{} columns", c.ncols()),
            });
        }
        if x_ss.len() != n {
            return Err(Error::Dimension {
                context: "steady state",
                expected: format!("length {n}"),
                found: format!("length {}", x_ss.len()),
            });
        }
        Ok(Self {
            n,
            p: b.ncols(),
            q: c.nrows(),
            a0,
            quad,
            b,
            c,
            x_ss,
            name: name.into(),
        })
    }
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            context,
            expected: format!("length {expected}"),
            found: format!("length {found}"),
        });
    }
    Ok(())
}

/// Right-hand side `A0 x + Q(x, x) + B u`.
pub fn quadratic_rhs(sys: &QuadraticSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("state", sys.n, x.len())?;
    check_len("input", sys.p, u.len())?;
    let mut out = &sys.a0 * x + &sys.b * u;
    for e in sys.quad.entries() {
        out[e.i as usize] += e.value * x[e.j as usize] * x[e.l as usize];
    }
    Ok(out)
}

/// State-dependent coefficient `A(v) = A0 + L(v)`, so that
/// `quadratic_rhs(sys, x, u) = A(x) x + B u`.
pub fn sdc_coefficient(sys: &QuadraticSystem, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_len("coefficient argument", sys.n, v.len())?;
    let mut a = sys.quad.coefficient_matrix(v);
    a += &sys.a0;
    Ok(a)
}

/// Jacobian of the unforced right-hand side at `x`, used by the implicit
/// integrator and the steady-state solver.
pub fn rhs_jacobian(sys: &QuadraticSystem, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_len("state", sys.n, x.len())?;
    let mut j = sys.quad.coefficient_matrix(x);
    j += sys.quad.state_contraction(x);
    j += &sys.a0;
    Ok(j)
}

/// Builds a named benchmark system.
///
/// Names and parameters (all values `f64`, unknown keys rejected):
///
/// * `"burgers"`: viscous Burgers equation on (0, 1) with homogeneous
///   Dirichlet boundaries, central differences on `n` interior nodes
///   (default 32), viscosity `nu` (default 0.05) and an optional
///   destabilizing zero-order reaction `mu` (default 0) added to the
///   diffusion operator. Advection uses the energy-conserving split form, so
///   the quadratic term is exactly skew: `x . Q(x, x) = 0`. Two parabolic
///   actuation shapes on (0.2, 0.4) and (0.6, 0.8) form the columns of `B`;
///   six window-averaged outputs (three windows of width 0.2 centered at
///   0.25, 0.5, 0.75, each repeated staggered by +0.05) form `C`.
/// * `"lorenz"`: the 3-state chaotic system with parameters `sigma`
///   (default 10), `rho` (default 28), `beta` (default 8/3), `B = e1` and
///   `C` the identity. `shift = 1` (default) shifts about the nontrivial
///   equilibrium with positive coordinates; `shift = 0` keeps the origin.
///
/// Both systems are returned pre-shifted about their computed steady state
/// (Newton with analytic Jacobian; non-convergence is an error).
pub fn make_benchmark(name: &str, params: &BTreeMap<String, f64>) -> Result<QuadraticSystem> {
    match name {
        "burgers" => burgers(params),
        "lorenz" => lorenz(params),
        other => Err(Error::UnknownBenchmark(other.to_string())),
    }
}

fn take_params(
    benchmark: &str,
    params: &BTreeMap<String, f64>,
    allowed: &[(&str, f64)],
) -> Result<Vec<f64>> {
    for key in params.keys() {
        if !allowed.iter().any(|(k, _)| k == key) {
            return Err(Error::UnknownBenchmark(format!(
                "parameter '{key}' not recognized for '{benchmark}'"
            )));
        }
    }
    Ok(allowed
        .iter()
        .map(|(k, d)| params.get(*k).copied().unwrap_or(*d))
        .collect())
}

fn burgers(params: &BTreeMap<String, f64>) -> Result<QuadraticSystem> {
    let vals = take_params(
        "burgers",
        params,
        &[("n", 32.0), ("nu", 0.05), ("mu", 0.0)],
    )?;
    let (n, nu, mu) = (vals[0] as usize, vals[1], vals[2]);
    if n < 4 || vals[0] != n as f64 {
        return Err(Error::UnknownBenchmark(format!(
            "burgers needs integer n >= 4, got {}",
            vals[0]
        )));
    }
    let h = 1.0 / (n as f64 + 1.0);

    let mut a0 = DMatrix::zeros(n, n);
    let diff = nu / (h * h);
    for i in 0..n {
        a0[(i, i)] = -2.0 * diff + mu;
        if i > 0 {
            a0[(i, i - 1)] = diff;
        }
        if i + 1 < n {
            a0[(i, i + 1)] = diff;
        }
    }

    // Split-form advection -(1/3) [u (D u) + D (u o u)] with the central
    // difference D; the split keeps x . Q(x, x) = 0 so the discrete energy
    // only changes through diffusion, reaction and forcing.
    let s = 1.0 / (6.0 * h);
    let mut entries = Vec::new();
    for i in 0..n as u32 {
        if (i as usize) + 1 < n {
            entries.push(QuadEntry { i, j: i, l: i + 1, value: -s });
            entries.push(QuadEntry { i, j: i + 1, l: i + 1, value: -s });
        }
        if i > 0 {
            entries.push(QuadEntry { i, j: i, l: i - 1, value: s });
            entries.push(QuadEntry { i, j: i - 1, l: i - 1, value: s });
        }
    }
    let quad = QuadTensor::from_entries(n, entries)?;

    let node = |i: usize| (i as f64 + 1.0) * h;
    let mut b = DMatrix::zeros(n, 2);
    for (col, (lo, hi)) in [(0.2, 0.4), (0.6, 0.8)].into_iter().enumerate() {
        for i in 0..n {
            let x = node(i);
            if x > lo && x < hi {
                b[(i, col)] = 4.0 * (x - lo) * (hi - x) / ((hi - lo) * (hi - lo));
            }
        }
    }

    let mut c = DMatrix::zeros(6, n);
    let centers = [0.25, 0.5, 0.75];
    for (row, &center) in centers.iter().enumerate() {
        window_average_row(&mut c, row, center, 0.2, n, h);
        window_average_row(&mut c, row + 3, center + 0.05, 0.2, n, h);
    }

    let sys = QuadraticSystem::new(
        a0,
        quad,
        b,
        c,
        DVector::zeros(n),
        format!("burgers(n={n}, nu={nu}, mu={mu})"),
    )?;
    // Unforced Burgers with Dirichlet boundaries settles at zero; Newton from
    // zero confirms it and guards against future construction changes.
    let x_ss = solve_steady_state(&sys, &DVector::zeros(n))?;
    shift_about(sys, x_ss)
}

fn window_average_row(c: &mut DMatrix<f64>, row: usize, center: f64, width: f64, n: usize, h: f64) {
    let (lo, hi) = (center - width / 2.0, center + width / 2.0);
    let idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let x = (i as f64 + 1.0) * h;
            x >= lo && x <= hi
        })
        .collect();
    for &i in &idx {
        c[(row, i)] = 1.0 / idx.len() as f64;
    }
}

fn lorenz(params: &BTreeMap<String, f64>) -> Result<QuadraticSystem> {
    let vals = take_params(
        "lorenz",
        params,
        &[
            ("sigma", 10.0),
            ("rho", 28.0),
            ("beta", 8.0 / 3.0),
            ("shift", 1.0),
        ],
    )?;
    let (sigma, rho, beta, shift) = (vals[0], vals[1], vals[2], vals[3]);

    let a0 = DMatrix::from_row_slice(
        3,
        3,
        &[-sigma, sigma, 0.0, rho, -1.0, 0.0, 0.0, 0.0, -beta],
    );
    let quad = QuadTensor::from_entries(
        3,
        [
            QuadEntry { i: 1, j: 0, l: 2, value: -1.0 },
            QuadEntry { i: 2, j: 0, l: 1, value: 1.0 },
        ],
    )?;
    let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
    let c = DMatrix::identity(3, 3);
    let sys = QuadraticSystem::new(
        a0,
        quad,
        b,
        c,
        DVector::zeros(3),
        format!("lorenz(sigma={sigma}, rho={rho}, beta={beta})"),
    )?;

    let guess = if shift == 0.0 {
        DVector::zeros(3)
    } else {
        let d = beta * (rho - 1.0);
        if !(d > 0.0) {
            return Err(Error::Equilibrium(format!(
                "nontrivial equilibrium needs beta (rho - 1) > 0, got {d}"
            )));
        }
        DVector::from_vec(vec![d.sqrt(), d.sqrt(), rho - 1.0])
    };
    let x_ss = solve_steady_state(&sys, &guess)?;
    shift_about(sys, x_ss)
}

/// Newton iteration for `A0 x + Q(x, x) = 0` with the analytic Jacobian.
fn solve_steady_state(sys: &QuadraticSystem, guess: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = sys.a0.norm().max(1.0);
    let zero_u = DVector::zeros(sys.p);
    let mut x = guess.clone();
    for _ in 0..50 {
        let f = quadratic_rhs(sys, &x, &zero_u)?;
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::Equilibrium("residual became non-finite".into()));
        }
        if f.norm() <= 1e-13 * scale {
            return Ok(x);
        }
        let j = rhs_jacobian(sys, &x)?;
        let step = j.lu().solve(&f).ok_or_else(|| {
            Error::Equilibrium("singular Jacobian in steady-state solve".into())
        })?;
        x -= step;
    }
    Err(Error::Equilibrium(format!(
        "Newton did not converge from guess {:?}",
        guess.as_slice()
    )))
}

/// Rewrites the dynamics in deviation coordinates about `x_ss`. The
/// quadratic tensor is unchanged; the linear part absorbs both contractions
/// of the tensor with the steady state.
fn shift_about(sys: QuadraticSystem, x_ss: DVector<f64>) -> Result<QuadraticSystem> {
    let mut a0 = sys.a0.clone();
    a0 += sys.quad.coefficient_matrix(&x_ss);
    a0 += sys.quad.state_contraction(&x_ss);
    QuadraticSystem::new(a0, sys.quad, sys.b, sys.c, x_ss, sys.name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unshifted_lorenz() -> QuadraticSystem {
        let mut p = BTreeMap::new();
        p.insert("shift".to_string(), 0.0);
        make_benchmark("lorenz", &p).unwrap()
    }

    fn default_burgers() -> QuadraticSystem {
        make_benchmark("burgers", &BTreeMap::new()).unwrap()
    }

    /// Dense triple-loop contraction, independent of the sparse evaluation
    /// path. Expected values for the structured tests were frozen from this.
    fn dense_rhs(sys: &QuadraticSystem, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = sys.n;
        let mut dense = vec![0.0; n * n * n];
        for e in sys.quad.entries() {
            dense[(e.i as usize * n + e.j as usize) * n + e.l as usize] += e.value;
        }
        let mut out = &sys.a0 * x + &sys.b * u;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    out[i] += dense[(i * n + j) * n + l] * x[j] * x[l];
                }
            }
        }
        out
    }

    fn random_vec(rng: &mut StdRng, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn lorenz_rhs_matches_hand_values() {
        let sys = unshifted_lorenz();
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let u = DVector::zeros(1);
        let f = quadratic_rhs(&sys, &x, &u).unwrap();
        assert_relative_eq!(f[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(f[1], 26.0, epsilon = 1e-13);
        assert_relative_eq!(f[2], -5.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn lorenz_structure() {
        let sys = unshifted_lorenz();
        assert_eq!((sys.n, sys.p, sys.q), (3, 1, 3));
        assert_eq!(sys.quad.nnz(), 2);
        assert_eq!(sys.b.column(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(sys.c, DMatrix::identity(3, 3));
    }

    #[test]
    fn lorenz_sdc_coefficient_hand_values() {
        let sys = unshifted_lorenz();
        let v = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let a = sdc_coefficient(&sys, &v).unwrap();
        let mut expected = sys.a0.clone();
        expected[(1, 2)] += -1.0;
        expected[(2, 1)] += 1.0;
        assert_relative_eq!(a, expected, epsilon = 1e-14);
    }

    #[test]
    fn lorenz_shifted_equilibrium() {
        let sys = make_benchmark("lorenz", &BTreeMap::new()).unwrap();
        let d: f64 = (8.0 / 3.0) * 27.0;
        assert_relative_eq!(sys.x_ss[0], d.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(sys.x_ss[1], d.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(sys.x_ss[2], 27.0, epsilon = 1e-12);
        let f = quadratic_rhs(&sys, &DVector::zeros(3), &DVector::zeros(1)).unwrap();
        assert!(f.norm() <= 1e-12 * sys.a0.norm().max(1.0), "residual {}", f.norm());
    }

    #[test]
    fn lorenz_without_positive_discriminant_fails() {
        let mut p = BTreeMap::new();
        p.insert("rho".to_string(), 0.5);
        let err = make_benchmark("lorenz", &p).unwrap_err();
        assert!(matches!(err, Error::Equilibrium(_)), "got {err:?}");
    }

    #[test]
    fn burgers_a0_matches_stencil_oracle() {
        let mut p = BTreeMap::new();
        p.insert("n".to_string(), 32.0);
        p.insert("nu".to_string(), 0.05);
        let sys = make_benchmark("burgers", &p).unwrap();
        let n = 32;
        let h = 1.0 / 33.0;
        let mut oracle = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    oracle[(i, j)] = -2.0 * 0.05 / (h * h);
                } else if i.abs_diff(j) == 1 {
                    oracle[(i, j)] = 0.05 / (h * h);
                }
            }
        }
        assert_relative_eq!(sys.a0, oracle, epsilon = 1e-12);
    }

    #[test]
    fn burgers_reaction_shifts_diagonal() {
        let mut p = BTreeMap::new();
        p.insert("mu".to_string(), 1.5);
        let with = make_benchmark("burgers", &p).unwrap();
        let without = default_burgers();
        let diff = &with.a0 - &without.a0;
        assert_relative_eq!(diff, DMatrix::identity(32, 32) * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn burgers_steady_state_is_zero() {
        let sys = default_burgers();
        assert_eq!(sys.x_ss, DVector::zeros(32));
        assert_eq!((sys.n, sys.p, sys.q), (32, 2, 6));
        for row in 0..6 {
            let sum: f64 = sys.c.row(row).iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn burgers_quadratic_term_is_energy_conserving() {
        let sys = default_burgers();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_vec(&mut rng, sys.n, 2.0);
            let qx = sys.quad.bilinear(&x, &x);
            let e = x.dot(&qx).abs();
            assert!(e <= 1e-11 * x.norm().powi(3).max(1.0), "energy defect {e}");
        }
    }

    #[test]
    fn rhs_matches_dense_tensor_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        for sys in [default_burgers(), unshifted_lorenz()] {
            for _ in 0..10 {
                let x = random_vec(&mut rng, sys.n, 3.0);
                let u = random_vec(&mut rng, sys.p, 1.0);
                let fast = quadratic_rhs(&sys, &x, &u).unwrap();
                let oracle = dense_rhs(&sys, &x, &u);
                let denom = oracle.norm().max(1.0);
                assert!((&fast - &oracle).norm() <= 1e-13 * denom);
            }
        }
    }

    #[test]
    fn sdc_consistency_over_random_pairs() {
        let mut rng = StdRng::seed_from_u64(13);
        for sys in [default_burgers(), make_benchmark("lorenz", &BTreeMap::new()).unwrap()] {
            for _ in 0..100 {
                let x = random_vec(&mut rng, sys.n, 2.0);
                let u = random_vec(&mut rng, sys.p, 2.0);
                let direct = quadratic_rhs(&sys, &x, &u).unwrap();
                let via_sdc = sdc_coefficient(&sys, &x).unwrap() * &x + &sys.b * &u;
                let denom = direct.norm().max(1.0);
                assert!(
                    (&direct - &via_sdc).norm() <= 1e-13 * denom,
                    "defect {}",
                    (&direct - &via_sdc).norm() / denom
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let sys = unshifted_lorenz();
        let x = DVector::from_vec(vec![0.7, -1.2, 0.4]);
        let u = DVector::zeros(1);
        let j = rhs_jacobian(&sys, &x).unwrap();
        let eps = 1e-6;
        for col in 0..3 {
            let mut xp = x.clone();
            xp[col] += eps;
            let mut xm = x.clone();
            xm[col] -= eps;
            let fd = (quadratic_rhs(&sys, &xp, &u).unwrap()
                - quadratic_rhs(&sys, &xm, &u).unwrap())
                / (2.0 * eps);
            for row in 0..3 {
                assert_relative_eq!(j[(row, col)], fd[row], epsilon = 1e-7, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn duplicate_entries_are_summed_and_sorted() {
        let t = QuadTensor::from_entries(
            3,
            [
                QuadEntry { i: 2, j: 1, l: 0, value: 0.5 },
                QuadEntry { i: 0, j: 1, l: 2, value: 1.0 },
                QuadEntry { i: 2, j: 1, l: 0, value: 0.25 },
            ],
        )
        .unwrap();
        assert_eq!(t.nnz(), 2);
        assert_eq!(t.entries()[0], QuadEntry { i: 0, j: 1, l: 2, value: 1.0 });
        assert_eq!(t.entries()[1], QuadEntry { i: 2, j: 1, l: 0, value: 0.75 });
    }

    #[test]
    fn dimension_violations_are_reported() {
        let sys = unshifted_lorenz();
        let bad_x = DVector::zeros(4);
        let u = DVector::zeros(1);
        assert!(matches!(
            quadratic_rhs(&sys, &bad_x, &u),
            Err(Error::Dimension { .. })
        ));
        let x = DVector::zeros(3);
        let bad_u = DVector::zeros(2);
        assert!(matches!(
            quadratic_rhs(&sys, &x, &bad_u),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            sdc_coefficient(&sys, &bad_x),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn unknown_names_and_parameters_are_rejected() {
        assert!(matches!(
            make_benchmark("heat", &BTreeMap::new()),
            Err(Error::UnknownBenchmark(_))
        ));
        let mut p = BTreeMap::new();
        p.insert("viscosity".to_string(), 0.1);
        assert!(matches!(
            make_benchmark("burgers", &p),
            Err(Error::UnknownBenchmark(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        /// L built from the tensor must be linear in its argument.
        #[test]
        fn coefficient_map_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let sys = default_burgers();
            let mut rng = StdRng::seed_from_u64(seed);
            let u = random_vec(&mut rng, sys.n, 2.0);
            let v = random_vec(&mut rng, sys.n, 2.0);
            let combo = sdc_coefficient(&sys, &(&u * alpha + &v * beta)).unwrap();
            let parts = (sdc_coefficient(&sys, &u).unwrap() - &sys.a0) * alpha
                + (sdc_coefficient(&sys, &v).unwrap() - &sys.a0) * beta
                + &sys.a0;
            let denom = parts.norm().max(1.0);
            prop_assert!((combo - parts).norm() <= 1e-12 * denom);
        }
    }
}
