//! Log-barrier interior-point solver for small semidefinite feasibility
//! problems with an optional linear objective.
//!
//! A problem holds a vector of scalar variables `x` and a list of constraint
//! blocks `F_j(x) = F0_j + sum_i x_i C_{j,i} >= margin_j * I` (Loewner order,
//! `margin_j >= 0`). Symmetric matrix variables are registered through
//! [`SymVar`], which packs the upper triangle into scalar slots.
//!
//! Coefficients are stored as sums of symmetric outer products
//! `w * (u v^T + v u^T)`. LMI constraints produced by controller synthesis
//! have rank at most four per scalar variable in this representation, which
//! keeps gradient and Hessian assembly linear in the number of terms instead
//! of quadratic in the block dimension.
//!
//! Phase 1 minimizes the slack `s` in `F_j(x) - margin_j I + s I > 0` from a
//! cold start; the run ends as soon as `s` crosses `-feas_slack` (feasible),
//! or when the barrier duality gap certifies `inf s > 0` (infeasible), or at
//! the iteration cap (no verdict, an error). Feasibility claims are accepted
//! only after an independent dense eigenvalue recheck of every block in
//! original units; the recheck, not the solver's claim, defines the outcome.
//! The solver is deterministic: block contributions are reduced in index
//! order regardless of thread count.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::par;

/// Largest admitted constraint block, rows = columns.
pub const MAX_BLOCK_DIM: usize = 40;
/// Largest admitted number of constraint blocks.
pub const MAX_BLOCKS: usize = 70;
/// Largest admitted number of scalar variables.
pub const MAX_VARS: usize = 600;
/// A posteriori acceptance threshold on `lambda_min(F_j(x)) - margin_j`.
pub const VERIFY_MARGIN: f64 = -1e-7;

const MAX_INNER_NEWTON: usize = 100;
const CENTER_TOL: f64 = 1e-9;
/// Symmetric log-barrier box `|z_i| < PHASE_BOX` on every variable. Feasible
/// sets of pure feasibility programs are often unbounded (scaling a Lyapunov
/// candidate up never hurts), which leaves the centering subproblem without a
/// minimizer and sends Newton down a recession ray. The box makes sublevel
/// sets compact; it is far outside any solution of a normalized problem, and
/// its two log terms per variable are counted in the duality-gap bounds.
const PHASE_BOX: f64 = 1e6;

/// One symmetric outer-product term `w * (u v^T + v u^T)`.
#[derive(Debug, Clone)]
struct Term {
    u: DVector<f64>,
    v: DVector<f64>,
    w: f64,
}

/// Symmetric coefficient matrix stored as a sum of outer-product terms.
#[derive(Debug, Clone)]
pub struct CoeffMatrix {
    dim: usize,
    terms: Vec<Term>,
}

impl CoeffMatrix {
    pub fn zeros(dim: usize) -> Self {
        CoeffMatrix { dim, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `w * (u v^T + v u^T)`. Zero weights are dropped.
    pub fn add_pair(&mut self, u: DVector<f64>, v: DVector<f64>, w: f64) {
        assert_eq!(u.len(), self.dim, "coefficient term length");
        assert_eq!(v.len(), self.dim, "coefficient term length");
        if w != 0.0 {
            self.terms.push(Term { u, v, w });
        }
    }

    /// Exact term list for a dense symmetric matrix via its eigensystem:
    /// `C = sum_i lambda_i q_i q_i^T`, one term per nonzero eigenvalue.
    pub fn from_dense(c: &DMatrix<f64>) -> Self {
        assert_eq!(c.nrows(), c.ncols(), "coefficient must be square");
        let dim = c.nrows();
        let sym = (c + c.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
        let tol = lmax * (dim as f64) * f64::EPSILON;
        let mut out = CoeffMatrix::zeros(dim);
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l.abs() > tol {
                let q = eig.eigenvectors.column(i).into_owned();
                out.add_pair(q.clone(), q, 0.5 * l);
            }
        }
        out
    }

    /// Multiplies every term weight by `f`.
    pub fn scale(&mut self, f: f64) {
        for t in &mut self.terms {
            t.w *= f;
        }
    }

    /// Materializes the dense symmetric matrix (tests and rechecks only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for t in &self.terms {
            m.ger(t.w, &t.u, &t.v, 1.0);
            m.ger(t.w, &t.v, &t.u, 1.0);
        }
        m
    }
}

/// Handle for a symmetric matrix variable packed into scalar slots.
///
/// Entry `(p, q)` with `p <= q` lives at `base + q (q + 1) / 2 + p`. The
/// coefficient of that scalar in an expression `M X N` is obtained with the
/// basis matrix `E_pq = e_p e_q^T + e_q e_p^T` (halved on the diagonal),
/// which [`SymVar::basis_weight`] encodes.
#[derive(Debug, Clone, Copy)]
pub struct SymVar {
    pub base: usize,
    pub dim: usize,
}

impl SymVar {
    pub fn n_entries(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    /// Scalar slot of entry `(p, q)`, requires `p <= q`.
    pub fn index(&self, p: usize, q: usize) -> usize {
        assert!(p <= q && q < self.dim, "symmetric entry out of range");
        self.base + q * (q + 1) / 2 + p
    }

    /// Weight for the symmetric basis pair `(e_p, e_q)`: the basis matrix is
    /// `e_p e_q^T + e_q e_p^T` off the diagonal and `e_p e_p^T` on it.
    pub fn basis_weight(p: usize, q: usize) -> f64 {
        if p == q {
            0.5
        } else {
            1.0
        }
    }

    /// Reads the matrix value out of a solution vector.
    pub fn extract(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for q in 0..self.dim {
            for p in 0..=q {
                let v = x[self.index(p, q)];
                m[(p, q)] = v;
                m[(q, p)] = v;
            }
        }
        m
    }
}

/// One PSD constraint `F0 + sum_i x_i C_i >= margin * I`.
#[derive(Debug, Clone)]
pub struct SdpBlock {
    pub dim: usize,
    pub f0: DMatrix<f64>,
    pub coeffs: Vec<(usize, CoeffMatrix)>,
    pub margin: f64,
}

/// Semidefinite feasibility problem over scalar variables.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    n_vars: usize,
    blocks: Vec<SdpBlock>,
    objective: Option<DVector<f64>>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn add_scalar(&mut self) -> usize {
        let i = self.n_vars;
        self.n_vars += 1;
        i
    }

    pub fn add_symmetric(&mut self, dim: usize) -> SymVar {
        let v = SymVar { base: self.n_vars, dim };
        self.n_vars += SymVar::n_entries(dim);
        v
    }

    /// Adds `f0 + sum x_i C_i >= margin * I`. `f0` is symmetrized; the
    /// margin must be nonnegative and every coefficient must match the block
    /// dimension and reference a registered variable.
    pub fn add_block(
        &mut self,
        f0: DMatrix<f64>,
        coeffs: Vec<(usize, CoeffMatrix)>,
        margin: f64,
    ) -> Result<()> {
        if f0.nrows() != f0.ncols() {
            return Err(Error::Dimension {
                context: "sdp block",
                expected: "square F0".into(),
                found: format!("{}x{}", f0.nrows(), f0.ncols()),
            });
        }
        let dim = f0.nrows();
        if dim == 0 || dim > MAX_BLOCK_DIM {
            return Err(Error::SdpCap(format!(
                "block dimension {dim} outside 1..={MAX_BLOCK_DIM}"
            )));
        }
        if self.blocks.len() == MAX_BLOCKS {
            return Err(Error::SdpCap(format!("more than {MAX_BLOCKS} blocks")));
        }
        if !(margin >= 0.0) {
            return Err(Error::Dimension {
                context: "sdp block margin",
                expected: "margin >= 0".into(),
                found: format!("{margin}"),
            });
        }
        for (var, c) in &coeffs {
            if *var >= self.n_vars {
                return Err(Error::Dimension {
                    context: "sdp block coefficient",
                    expected: format!("variable < {}", self.n_vars),
                    found: format!("{var}"),
                });
            }
            if c.dim != dim {
                return Err(Error::Dimension {
                    context: "sdp block coefficient",
                    expected: format!("dimension {dim}"),
                    found: format!("{}", c.dim),
                });
            }
        }
        let f0 = (&f0 + f0.transpose()) * 0.5;
        self.blocks.push(SdpBlock { dim, f0, coeffs, margin });
        Ok(())
    }

    /// Sets a linear objective `min c^T x`, solved after feasibility.
    pub fn set_objective(&mut self, c: DVector<f64>) {
        assert_eq!(c.len(), self.n_vars, "objective length");
        self.objective = Some(c);
    }

    fn check_caps(&self) -> Result<()> {
        if self.n_vars > MAX_VARS {
            return Err(Error::SdpCap(format!(
                "{} scalar variables exceed cap {MAX_VARS}",
                self.n_vars
            )));
        }
        if self.blocks.len() > MAX_BLOCKS {
            return Err(Error::SdpCap(format!(
                "{} blocks exceed cap {MAX_BLOCKS}",
                self.blocks.len()
            )));
        }
        Ok(())
    }
}

/// Verified-feasible solution. `block_margins[j]` is the rechecked
/// `lambda_min(F_j(x)) - margin_j` in original (unnormalized) units.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: DVector<f64>,
    pub block_margins: Vec<f64>,
    pub objective: Option<f64>,
    pub newton_iters: usize,
}

/// Certified-infeasible report. `slack_lower_bound` is a duality bound, in
/// block-normalized units, on the smallest slack any point can achieve;
/// it is strictly positive.
#[derive(Debug, Clone)]
pub struct InfeasReport {
    pub slack_lower_bound: f64,
    pub newton_iters: usize,
}

#[derive(Debug, Clone)]
pub enum SdpOutcome {
    Feasible(SdpSolution),
    Infeasible(InfeasReport),
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    /// Global Newton iteration budget across both phases.
    pub max_newton: usize,
    /// Phase 1 stops as soon as the normalized slack falls below `-feas_slack`.
    pub feas_slack: f64,
    /// Phase 2 stops when the duality gap drops below
    /// `obj_tol * (1 + |objective|)`.
    pub obj_tol: f64,
    /// Barrier parameter growth factor per centering round.
    pub mu: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { max_newton: 4000, feas_slack: 1e-7, obj_tol: 1e-6, mu: 8.0 }
    }
}

/// Block with the margin folded in and rescaled to unit size:
/// `G = (F0 - margin I) / beta + sum x_i (C_i / beta)`.
struct NBlock {
    dim: usize,
    f0: DMatrix<f64>,
    coeffs: Vec<(usize, CoeffMatrix)>,
}

fn normalize_block(b: &SdpBlock) -> NBlock {
    let mut f0 = b.f0.clone();
    for i in 0..b.dim {
        f0[(i, i)] -= b.margin;
    }
    let beta = f0.amax().max(1.0);
    f0 /= beta;
    let coeffs = b
        .coeffs
        .iter()
        .map(|(var, c)| {
            let mut c = c.clone();
            c.scale(1.0 / beta);
            (*var, c)
        })
        .collect();
    NBlock { dim: b.dim, f0, coeffs }
}

/// Dense `G_j(z) = f0 + sum x_i C_i (+ s I)`; `s_idx` points past the `x`
/// slots in phase 1.
fn block_matrix(nb: &NBlock, z: &DVector<f64>, s_idx: Option<usize>) -> DMatrix<f64> {
    let mut g = nb.f0.clone();
    for (var, c) in &nb.coeffs {
        let xv = z[*var];
        if xv != 0.0 {
            for t in &c.terms {
                let a = t.w * xv;
                g.ger(a, &t.u, &t.v, 1.0);
                g.ger(a, &t.v, &t.u, 1.0);
            }
        }
    }
    if let Some(si) = s_idx {
        let s = z[si];
        for i in 0..nb.dim {
            g[(i, i)] += s;
        }
    }
    g
}

/// Log-determinant via Cholesky; `None` when the block is not positive
/// definite at `z`.
fn block_logdet(nb: &NBlock, z: &DVector<f64>, s_idx: Option<usize>) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(block_matrix(nb, z, s_idx))?;
    let mut ld = 0.0;
    let l = chol.l();
    for i in 0..nb.dim {
        ld += l[(i, i)].ln();
    }
    Some(2.0 * ld)
}

/// Barrier value `t c^T z - sum_j logdet G_j(z)` plus the box terms;
/// `None` off the interior.
fn barrier_value(
    nblocks: &[NBlock],
    z: &DVector<f64>,
    s_idx: Option<usize>,
    t: f64,
    c: &DVector<f64>,
) -> Option<f64> {
    let lds = par::map_slice(nblocks, |nb| block_logdet(nb, z, s_idx));
    let mut total = t * c.dot(z);
    for ld in lds {
        total -= ld?;
    }
    for &zi in z.iter() {
        if zi.abs() >= PHASE_BOX {
            return None;
        }
        total -= (PHASE_BOX - zi).ln() + (PHASE_BOX + zi).ln();
    }
    Some(total)
}

/// Gradient and Hessian of the barrier at an interior point. Contributions
/// are computed per block in parallel and reduced in index order.
fn barrier_derivs(
    nblocks: &[NBlock],
    z: &DVector<f64>,
    s_idx: Option<usize>,
    t: f64,
    c: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let nv = z.len();
    let parts: Vec<Option<(DVector<f64>, DMatrix<f64>)>> = par::map_slice(nblocks, |nb| {
        let chol = nalgebra::Cholesky::new(block_matrix(nb, z, s_idx))?;
        let y = chol.inverse();
        let mut g = DVector::zeros(nv);
        let mut h = DMatrix::zeros(nv, nv);

        // Flatten coefficient terms and whiten them against Y = G^{-1}.
        struct Flat<'a> {
            var: usize,
            w: f64,
            u: &'a DVector<f64>,
            v: &'a DVector<f64>,
            p: DVector<f64>,
            q: DVector<f64>,
        }
        let mut flats = Vec::new();
        for (var, cm) in &nb.coeffs {
            for term in &cm.terms {
                flats.push(Flat {
                    var: *var,
                    w: term.w,
                    u: &term.u,
                    v: &term.v,
                    p: &y * &term.u,
                    q: &y * &term.v,
                });
            }
        }

        // d/dx_i [-logdet] = -tr(Y C_i); C_i = sum w (u v^T + v u^T).
        for f in &flats {
            g[f.var] -= 2.0 * f.w * f.u.dot(&f.q);
        }
        // Hessian entry tr(Y C_a Y C_b) expanded over term pairs.
        for a in 0..flats.len() {
            let fa = &flats[a];
            for b in a..flats.len() {
                let fb = &flats[b];
                let val = 2.0
                    * fa.w
                    * fb.w
                    * (fa.v.dot(&fb.p) * fb.v.dot(&fa.p) + fa.v.dot(&fb.q) * fa.u.dot(&fb.p));
                h[(fa.var, fb.var)] += val;
                if a != b {
                    h[(fb.var, fa.var)] += val;
                }
            }
        }
        // Slack variable has coefficient I: tr(Y), tr(Y^2), tr(Y^2 C_i).
        if let Some(si) = s_idx {
            g[si] -= y.trace();
            let ynorm = y.norm();
            h[(si, si)] += ynorm * ynorm;
            for f in &flats {
                let cross = 2.0 * f.w * f.p.dot(&f.q);
                h[(si, f.var)] += cross;
                if f.var != si {
                    h[(f.var, si)] += cross;
                }
            }
        }
        Some((g, h))
    });

    let mut grad = c * t;
    let mut hess = DMatrix::zeros(nv, nv);
    for part in parts {
        let (g, h) = part.ok_or_else(|| {
            Error::NumericalBreakdown("barrier evaluated off the interior".into())
        })?;
        grad += g;
        hess += h;
    }
    for i in 0..nv {
        let lo = PHASE_BOX + z[i];
        let hi = PHASE_BOX - z[i];
        grad[i] += 1.0 / hi - 1.0 / lo;
        hess[(i, i)] += 1.0 / (hi * hi) + 1.0 / (lo * lo);
    }
    Ok((grad, hess))
}

/// Solves `H d = -g` with an escalating ridge when `H` is near-singular.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let nv = grad.len();
    let diag_scale = (0..nv).fold(0.0f64, |a, i| a.max(hess[(i, i)].abs()));
    let mut reg = 1e-12 * (1.0 + diag_scale);
    for _ in 0..8 {
        let mut h = hess.clone();
        for i in 0..nv {
            h[(i, i)] += reg;
        }
        if let Some(chol) = nalgebra::Cholesky::new(h) {
            return Ok(chol.solve(&(-grad)));
        }
        reg *= 100.0;
    }
    Err(Error::NumericalBreakdown("barrier Hessian not factorizable".into()))
}

#[derive(Debug)]
enum CenterResult {
    /// Newton decrement below tolerance: `z` is (numerically) central.
    Centered,
    /// Line search could not make progress; `z` is the best point found.
    Stalled,
    /// Phase 1 slack crossed the feasibility target; stop early.
    EarlyFeasible,
    /// Global Newton budget exhausted mid-centering.
    Budget,
}

/// Damped Newton centering of `t c^T z - sum logdet G_j(z)` in place.
fn center(
    nblocks: &[NBlock],
    z: &mut DVector<f64>,
    s_idx: Option<usize>,
    t: f64,
    c: &DVector<f64>,
    slack_target: Option<f64>,
    iters: &mut usize,
    max_newton: usize,
) -> Result<CenterResult> {
    for _ in 0..MAX_INNER_NEWTON {
        if *iters >= max_newton {
            return Ok(CenterResult::Budget);
        }
        *iters += 1;
        let (grad, hess) = barrier_derivs(nblocks, z, s_idx, t, c)?;
        let dir = newton_direction(&hess, &grad)?;
        let slope = grad.dot(&dir);
        if !slope.is_finite() {
            return Err(Error::NumericalBreakdown("non-finite Newton slope".into()));
        }
        // lambda^2 = -g.d is the squared Newton decrement.
        if -slope * 0.5 <= CENTER_TOL {
            return Ok(CenterResult::Centered);
        }
        let f0 = barrier_value(nblocks, z, s_idx, t, c)
            .ok_or_else(|| Error::NumericalBreakdown("interior point lost".into()))?;
        let mut try_dir = |z: &mut DVector<f64>, d: &DVector<f64>, sl: f64| -> bool {
            let mut alpha = 1.0;
            for _ in 0..60 {
                let trial = &*z + d * alpha;
                if let Some(f) = barrier_value(nblocks, &trial, s_idx, t, c) {
                    if f <= f0 + 1e-4 * alpha * sl {
                        *z = trial;
                        return true;
                    }
                }
                alpha *= 0.5;
            }
            false
        };
        let mut accepted = slope < 0.0 && try_dir(z, &dir, slope);
        if !accepted {
            // A factorizable Hessian spanning more orders of magnitude than
            // double precision resolves can yield an ascent "Newton"
            // direction. Escalating diagonal damping trades the quadratic
            // model for guaranteed descent (gradient direction in the
            // limit), which un-sticks the iteration at the cost of speed.
            let nv = grad.len();
            let dmax = (0..nv).fold(0.0f64, |a, i| a.max(hess[(i, i)].abs())).max(1e-300);
            let mut lam = 1e-10 * dmax;
            for _ in 0..12 {
                let mut hreg = hess.clone();
                for i in 0..nv {
                    hreg[(i, i)] += lam;
                }
                if let Ok(d) = newton_direction(&hreg, &grad) {
                    let sl = grad.dot(&d);
                    if sl < 0.0 && try_dir(z, &d, sl) {
                        accepted = true;
                        break;
                    }
                }
                lam *= 100.0;
            }
        }
        if !accepted {
            return Ok(CenterResult::Stalled);
        }
        if let (Some(si), Some(target)) = (s_idx, slack_target) {
            if z[si] <= -target {
                return Ok(CenterResult::EarlyFeasible);
            }
        }
    }
    Ok(CenterResult::Stalled)
}

/// Dense eigenvalue recheck in original units: `lambda_min(F_j(x)) - margin_j`
/// per block.
fn recheck_margins(prob: &SdpProblem, x: &DVector<f64>) -> Vec<f64> {
    par::map_slice(&prob.blocks, |b| {
        let mut f = b.f0.clone();
        for (var, c) in &b.coeffs {
            let xv = x[*var];
            if xv != 0.0 {
                for t in &c.terms {
                    let a = t.w * xv;
                    f.ger(a, &t.u, &t.v, 1.0);
                    f.ger(a, &t.v, &t.u, 1.0);
                }
            }
        }
        let eig = f.symmetric_eigen();
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        lmin - b.margin
    })
}

/// Solves the problem. `Feasible` is returned only when the a posteriori
/// eigenvalue recheck holds every block margin above [`VERIFY_MARGIN`];
/// `Infeasible` only with a positive duality bound from a centered phase-1
/// point. Anything else is an `IterationLimit` error.
pub fn solve_sdp(prob: &SdpProblem, opts: &SdpOptions) -> Result<SdpOutcome> {
    prob.check_caps()?;
    let n = prob.n_vars;
    if prob.blocks.is_empty() {
        return Ok(SdpOutcome::Feasible(SdpSolution {
            x: DVector::zeros(n),
            block_margins: Vec::new(),
            objective: prob.objective.as_ref().map(|_| 0.0),
            newton_iters: 0,
        }));
    }

    let nblocks: Vec<NBlock> = prob.blocks.iter().map(normalize_block).collect();
    // Barrier complexity: block dimensions plus two box terms per variable.
    let m_total: f64 = nblocks.iter().map(|b| b.dim as f64).sum();
    let m_phase1 = m_total + 2.0 * (n as f64 + 1.0);
    let m_phase2 = m_total + 2.0 * n as f64;
    let mut iters = 0usize;

    // Phase 1: minimize s subject to G_j(x) + s I > 0, from x = 0.
    let mut z = DVector::zeros(n + 1);
    let s_idx = n;
    let mut s0 = f64::NEG_INFINITY;
    for nb in &nblocks {
        let eig = block_matrix(nb, &z, None).symmetric_eigen();
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        s0 = s0.max(-lmin);
    }
    z[s_idx] = s0 + 1.0;
    let mut c1 = DVector::zeros(n + 1);
    c1[s_idx] = 1.0;

    let mut t = 1.0;
    let mut stagnant_rounds = 0usize;
    let mut s_prev = f64::INFINITY;
    loop {
        let res = center(
            &nblocks,
            &mut z,
            Some(s_idx),
            t,
            &c1,
            Some(opts.feas_slack),
            &mut iters,
            opts.max_newton,
        )?;
        let s = z[s_idx];
        if std::env::var("LPVKIT_SDP_TRACE").is_ok() {
            let xmax = z.rows(0, n).amax();
            eprintln!("  sdp p1: t={t:.3e} s={s:.6e} xmax={xmax:.3e} res={res:?} iters={iters}");
        }
        match res {
            CenterResult::EarlyFeasible => break,
            CenterResult::Centered => {
                if s <= -opts.feas_slack {
                    break;
                }
                // Duality gap at a central point is m/t; the factor 2 guards
                // against residual de-centering. Positive bound certifies
                // that no point reaches slack zero.
                let bound = s - 2.0 * m_phase1 / t;
                if bound > 0.0 {
                    return Ok(SdpOutcome::Infeasible(InfeasReport {
                        slack_lower_bound: bound,
                        newton_iters: iters,
                    }));
                }
            }
            CenterResult::Stalled => {
                if s <= -opts.feas_slack {
                    break;
                }
            }
            CenterResult::Budget => {
                return Err(Error::IterationLimit(format!(
                    "phase 1 stopped after {iters} Newton steps with slack {s:.3e}"
                )));
            }
        }
        // A round that leaves the slack essentially unchanged cannot make
        // progress at larger t either, so give up before the budget burns.
        // While the slack is still positive it has to shrink geometrically
        // to ever reach feasibility, so demand relative progress there.
        let floor = if s > 0.0 { 1e-3 * s } else { 1e-10 * (1.0 + s.abs()) };
        if s_prev - s <= floor {
            stagnant_rounds += 1;
            if stagnant_rounds >= 3 {
                return Err(Error::IterationLimit(format!(
                    "phase 1 slack stagnated at {s:.3e} (t = {t:.3e})"
                )));
            }
        } else {
            stagnant_rounds = 0;
        }
        s_prev = s;
        if t > 1e18 {
            return Err(Error::IterationLimit(format!(
                "barrier parameter overflow with slack {s:.3e}"
            )));
        }
        t *= opts.mu;
    }

    let mut x = z.rows(0, n).into_owned();

    // Phase 2: follow the central path of min c^T x over the found interior.
    // The duality-gap bound m/t is only valid at centered points; stalled
    // rounds instead stop once the objective stops moving, returning the
    // best strictly feasible point reached (the posterior recheck still
    // guards the result).
    if let Some(c) = &prob.objective {
        let mut t2 = 1.0;
        let mut stalled_rounds = 0usize;
        let mut obj_prev = f64::INFINITY;
        loop {
            let res = center(&nblocks, &mut x, None, t2, c, None, &mut iters, opts.max_newton)?;
            if matches!(res, CenterResult::Budget) {
                return Err(Error::IterationLimit(format!(
                    "objective phase stopped after {iters} Newton steps"
                )));
            }
            let obj = c.dot(&x);
            if matches!(res, CenterResult::Centered) {
                stalled_rounds = 0;
                if m_phase2 / t2 <= opts.obj_tol * (1.0 + obj.abs()) {
                    break;
                }
            } else if obj_prev - obj <= 1e-10 * (1.0 + obj.abs()) {
                stalled_rounds += 1;
                if stalled_rounds >= 3 {
                    break;
                }
            } else {
                stalled_rounds = 0;
            }
            obj_prev = obj;
            if t2 > 1e16 {
                break;
            }
            t2 *= opts.mu;
        }
    }

    let margins = recheck_margins(prob, &x);
    if let Some(worst) = margins.iter().cloned().fold(None::<f64>, |a, m| {
        Some(a.map_or(m, |v| v.min(m)))
    }) {
        if worst < VERIFY_MARGIN {
            return Err(Error::IterationLimit(format!(
                "posterior eigenvalue recheck failed (worst margin {worst:.3e})"
            )));
        }
    }
    let objective = prob.objective.as_ref().map(|c| c.dot(&x));
    Ok(SdpOutcome::Feasible(SdpSolution {
        x,
        block_margins: margins,
        objective,
        newton_iters: iters,
    }))
}

/// Coefficients of `-(A^T X + X A)` in the scalar slots of `X`: the entry
/// `(p, q)` of `X` contributes `-(A^T E_pq + E_pq A)` with
/// `E_pq = e_p e_q^T + e_q e_p^T` (halved on the diagonal), which is a sum
/// of at most two outer-product pairs.
pub fn lyapunov_coeffs(a: &DMatrix<f64>, xv: &SymVar) -> Vec<(usize, CoeffMatrix)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "state matrix must be square");
    assert_eq!(n, xv.dim, "Lyapunov variable dimension");
    let at = a.transpose();
    let mut out = Vec::with_capacity(SymVar::n_entries(n));
    for q in 0..n {
        for p in 0..=q {
            let w = SymVar::basis_weight(p, q);
            let mut c = CoeffMatrix::zeros(n);
            let e_p = DVector::from_fn(n, |i, _| if i == p { 1.0 } else { 0.0 });
            let e_q = DVector::from_fn(n, |i, _| if i == q { 1.0 } else { 0.0 });
            // A^T E_pq + E_pq A = (A^T e_p) e_q^T + e_q (A^T e_p)^T
            //                   + (A^T e_q) e_p^T + e_p (A^T e_q)^T, halved
            // diagonals are covered by the basis weight.
            c.add_pair(&at * &e_p, e_q.clone(), -w);
            c.add_pair(&at * &e_q, e_p.clone(), -w);
            out.push((xv.index(p, q), c));
        }
    }
    out
}

/// Coefficients of `X` itself embedded at `offset` in a larger block.
pub fn identity_embedding_coeffs(
    xv: &SymVar,
    block_dim: usize,
    offset: usize,
) -> Vec<(usize, CoeffMatrix)> {
    assert!(offset + xv.dim <= block_dim, "embedding out of range");
    let mut out = Vec::with_capacity(SymVar::n_entries(xv.dim));
    for q in 0..xv.dim {
        for p in 0..=q {
            let mut c = CoeffMatrix::zeros(block_dim);
            let e_p = DVector::from_fn(block_dim, |i, _| if i == offset + p { 1.0 } else { 0.0 });
            let e_q = DVector::from_fn(block_dim, |i, _| if i == offset + q { 1.0 } else { 0.0 });
            c.add_pair(e_p, e_q, SymVar::basis_weight(p, q));
            out.push((xv.index(p, q), c));
        }
    }
    out
}
