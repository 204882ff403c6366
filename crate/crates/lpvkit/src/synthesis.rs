//! Polytopic H-infinity output-feedback synthesis for affine LPV models.
//!
//! The generalized plant weighs the performance output `z = [W_y y; W_u u]`
//! and feeds disturbances through the control input channels, `B_1 = W_d B`.
//! Only the state matrix varies with the scheduling parameter, so the closed
//! loop over the polytope is the convex hull of the vertex closed loops and
//! vertex arguments suffice.
//!
//! Feasibility of a performance level is decided by the projected vertex
//! inequalities in a common pair `(R, S)` plus the coupling condition
//! `[R I; I S] >= delta I`, solved as one semidefinite program. The optimal
//! level is bisected to a relative width of 1e-2; every probe is logged with
//! its level, Newton iteration count, and CPU seconds. A common closed-loop
//! certificate `X_cl` is completed from `(R, S)` and one controller per
//! vertex is recovered from the bounded-real inequality at `X_cl`; among the
//! valid controllers the minimal-Frobenius-norm one is selected, which makes
//! the reconstruction deterministic.

use std::time::Instant;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::par;
use crate::pod::AffineLpvModel;
use crate::polytope::ParamPolytope;
use crate::sdp::{
    identity_embedding_coeffs, lyapunov_coeffs, solve_sdp, CoeffMatrix, SdpOptions, SdpOutcome,
    SdpProblem, SymVar,
};

/// Scalar loop-shaping weights of the generalized plant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PerformanceWeights {
    /// Disturbance gain into the input channels, `B_1 = w_d B`.
    pub w_d: f64,
    /// Output tracking weight in `z`.
    pub w_y: f64,
    /// Control effort weight in `z`; must be positive so the problem stays
    /// regular.
    pub w_u: f64,
}

impl Default for PerformanceWeights {
    fn default() -> Self {
        PerformanceWeights { w_d: 1.0, w_y: 1.0, w_u: 0.1 }
    }
}

impl PerformanceWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_d > 0.0) || !self.w_d.is_finite() {
            return Err(Error::WeightError(format!("w_d must be positive, got {}", self.w_d)));
        }
        if !(self.w_y >= 0.0) || !self.w_y.is_finite() {
            return Err(Error::WeightError(format!("w_y must be nonnegative, got {}", self.w_y)));
        }
        if !(self.w_u > 0.0) || !self.w_u.is_finite() {
            return Err(Error::WeightError(format!("w_u must be positive, got {}", self.w_u)));
        }
        Ok(())
    }
}

/// Generalized plant with a parameter-varying state matrix and constant
/// input/output maps. Signal dimensions: state `k`, control `p`, measurement
/// `q`, disturbance `q1 = p`, performance `p1 = q + p`.
#[derive(Debug, Clone)]
pub struct GeneralizedPlant {
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub d11: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub d21: DMatrix<f64>,
    pub k: usize,
    pub p: usize,
    pub q: usize,
    pub q1: usize,
    pub p1: usize,
}

/// Builds the weighted plant around a reduced model.
pub fn assemble_generalized_plant(
    model: &AffineLpvModel,
    weights: &PerformanceWeights,
) -> Result<GeneralizedPlant> {
    weights.validate()?;
    let k = model.k;
    let p = model.p();
    let q = model.q();
    let p1 = q + p;
    let q1 = p;
    let b2 = model.b_bar.clone();
    let b1 = &b2 * weights.w_d;
    let mut c1 = DMatrix::zeros(p1, k);
    c1.view_mut((0, 0), (q, k)).copy_from(&(&model.c_bar * weights.w_y));
    let mut d12 = DMatrix::zeros(p1, p);
    for i in 0..p {
        d12[(q + i, i)] = weights.w_u;
    }
    Ok(GeneralizedPlant {
        b1,
        b2,
        c1,
        c2: model.c_bar.clone(),
        d11: DMatrix::zeros(p1, q1),
        d12,
        d21: DMatrix::zeros(q, q1),
        k,
        p,
        q,
        q1,
        p1,
    })
}

/// One interpolated (or vertex) controller realization.
#[derive(Debug, Clone)]
pub struct ControllerGain {
    pub ak: DMatrix<f64>,
    pub bk: DMatrix<f64>,
    pub ck: DMatrix<f64>,
    pub dk: DMatrix<f64>,
}

/// Vertex controllers sharing one closed-loop certificate.
#[derive(Debug, Clone)]
pub struct VertexControllerSet {
    pub ak: Vec<DMatrix<f64>>,
    pub bk: Vec<DMatrix<f64>>,
    pub ck: Vec<DMatrix<f64>>,
    pub dk: Vec<DMatrix<f64>>,
    /// Certified closed-loop performance level.
    pub gamma: f64,
    /// Common closed-loop Lyapunov matrix `X_cl` (dimension `2 k_c`).
    pub lyapunov: DMatrix<f64>,
    pub weights: PerformanceWeights,
    /// Controller order; equals the reduced model order.
    pub k_c: usize,
    /// Scheduling polytope the controllers interpolate over.
    pub polytope: ParamPolytope,
    /// Frequency-sampled closed-loop norm at each frozen vertex; every entry
    /// is bounded by `gamma`.
    pub frozen_vertex_norms: Vec<f64>,
}

impl VertexControllerSet {
    pub fn n_vertices(&self) -> usize {
        self.ak.len()
    }

    /// Convex interpolation of the vertex gains. The coordinate vector must
    /// be a valid barycentric weight: nonnegative entries summing to one.
    pub fn scheduled_gain(&self, lambda: &DVector<f64>) -> Result<ControllerGain> {
        let nv = self.n_vertices();
        if lambda.len() != nv {
            return Err(Error::WeightError(format!(
                "barycentric weight length {} does not match {} vertices",
                lambda.len(),
                nv
            )));
        }
        if lambda.iter().any(|w| *w < -1e-10 || !w.is_finite()) {
            return Err(Error::WeightError("negative barycentric weight".into()));
        }
        let total: f64 = lambda.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::WeightError(format!(
                "barycentric weights sum to {total}, expected 1"
            )));
        }
        let mut ak = DMatrix::zeros(self.k_c, self.k_c);
        let mut bk = DMatrix::zeros(self.k_c, self.bk[0].ncols());
        let mut ck = DMatrix::zeros(self.ck[0].nrows(), self.k_c);
        let mut dk = DMatrix::zeros(self.ck[0].nrows(), self.bk[0].ncols());
        for i in 0..nv {
            let w = lambda[i];
            if w == 0.0 {
                continue;
            }
            ak.zip_apply(&self.ak[i], |a, v| *a += w * v);
            bk.zip_apply(&self.bk[i], |a, v| *a += w * v);
            ck.zip_apply(&self.ck[i], |a, v| *a += w * v);
            dk.zip_apply(&self.dk[i], |a, v| *a += w * v);
        }
        Ok(ControllerGain { ak, bk, ck, dk })
    }
}

/// One bisection probe: the tested level, solver effort, wall-clock cost of
/// the solve, and its verdict.
#[derive(Debug, Clone)]
pub struct SynthesisLogRow {
    pub gamma: f64,
    pub feasible: bool,
    pub newton_iters: usize,
    pub cpu_seconds: f64,
}

/// Probe-by-probe record of the synthesis run.
#[derive(Debug, Clone, Default)]
pub struct SynthesisLog {
    pub rows: Vec<SynthesisLogRow>,
    /// Set when any probe ended without a certified verdict.
    pub stagnation: bool,
}

impl SynthesisLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,feasible,newton_iters,cpu_seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{},{},{:.6}\n",
                r.gamma, r.feasible, r.newton_iters, r.cpu_seconds
            ));
        }
        out
    }
}

/// Performance level request.
#[derive(Debug, Clone, Copy)]
pub enum GammaSpec {
    /// Certify one level; fail with `SynthesisInfeasible` if it does not hold.
    Fixed(f64),
    /// Bisect the smallest certifiable level.
    Minimize,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Upper end of the bisection bracket.
    pub gamma_hi: f64,
    /// Bisection stops at this relative bracket width.
    pub rel_width: f64,
    /// Margin of the coupling condition `[R I; I S] >= delta I`.
    pub coupling_margin: f64,
    /// Margin of the negated vertex inequalities.
    pub lmi_margin: f64,
    pub sdp: SdpOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            gamma_hi: 1e4,
            rel_width: 1e-2,
            coupling_margin: 1e-6,
            lmi_margin: 1e-7,
            sdp: SdpOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub controllers: VertexControllerSet,
    pub log: SynthesisLog,
}

/// Orthonormal basis of the null space of `m`, from the eigensystem of
/// `m^T m`. Columns are ordered by ascending eigenvalue and sign-normalized,
/// so the basis is deterministic.
fn null_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l));
    let dim_factor = m.nrows().max(n) as f64;
    let tol = lmax * (dim_factor * f64::EPSILON).powi(2).max(f64::EPSILON * dim_factor);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let null_dim = order.iter().filter(|&&i| eig.eigenvalues[i] <= tol).count();
    let mut basis = DMatrix::zeros(n, null_dim);
    for (j, &i) in order.iter().take(null_dim).enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let lead = col.iter().enumerate().fold((0usize, 0.0f64), |best, (idx, &v)| {
            if v.abs() > best.1.abs() {
                (idx, v)
            } else {
                best
            }
        });
        if lead.1 < 0.0 {
            col.neg_mut();
        }
        basis.set_column(j, &col);
    }
    basis
}

fn unit(dim: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(dim, |j, _| if j == i { 1.0 } else { 0.0 })
}

/// Lifts a state-space vector into the projected R-inequality frame:
/// `[Ns^T x; 0]` with `Ns` the state rows of the null basis.
fn lift(ns: &DMatrix<f64>, x: &DVector<f64>, tail: usize) -> DVector<f64> {
    let top = ns.transpose() * x;
    let mut out = DVector::zeros(top.len() + tail);
    out.rows_mut(0, top.len()).copy_from(&top);
    out
}

/// Negated, projected R-side vertex inequality as one SDP block.
fn r_side_block(
    plant: &GeneralizedPlant,
    a: &DMatrix<f64>,
    gamma: f64,
    rvar: &SymVar,
    n12: &DMatrix<f64>,
) -> (DMatrix<f64>, Vec<(usize, CoeffMatrix)>) {
    let (k, p1, q1) = (plant.k, plant.p1, plant.q1);
    let m12 = n12.ncols();
    let dim = m12 + q1;
    let ns = n12.rows(0, k).into_owned();
    let nz = n12.rows(k, p1).into_owned();

    // Constant part: [[0, 0, B1], [0, -g I, D11], [B1^T, D11^T, -g I]]
    // conjugated by diag(N12, I) and negated.
    let big = k + p1 + q1;
    let mut k0 = DMatrix::zeros(big, big);
    k0.view_mut((0, k + p1), (k, q1)).copy_from(&plant.b1);
    k0.view_mut((k + p1, 0), (q1, k)).copy_from(&plant.b1.transpose());
    k0.view_mut((k, k + p1), (p1, q1)).copy_from(&plant.d11);
    k0.view_mut((k + p1, k), (q1, p1)).copy_from(&plant.d11.transpose());
    for i in 0..p1 + q1 {
        k0[(k + i, k + i)] = -gamma;
    }
    let mut proj = DMatrix::zeros(big, dim);
    proj.view_mut((0, 0), (k + p1, m12)).copy_from(n12);
    for i in 0..q1 {
        proj[(k + p1 + i, m12 + i)] = 1.0;
    }
    let f0 = -(proj.transpose() * k0 * &proj);

    // R enters through A R + R A^T (states) and R C1^T (state-z coupling).
    let mut coeffs = Vec::with_capacity(SymVar::n_entries(k));
    for qq in 0..k {
        for pp in 0..=qq {
            let mut c = CoeffMatrix::zeros(dim);
            let e_p = unit(k, pp);
            let e_q = unit(k, qq);
            c.add_pair(lift(&ns, &(a * &e_p), q1), lift(&ns, &e_q, q1), -1.0);
            c.add_pair(lift(&ns, &e_p, q1), lift(&nz, &(&plant.c1 * &e_q), q1), -1.0);
            if pp != qq {
                c.add_pair(lift(&ns, &(a * &e_q), q1), lift(&ns, &e_p, q1), -1.0);
                c.add_pair(lift(&ns, &e_q, q1), lift(&nz, &(&plant.c1 * &e_p), q1), -1.0);
            }
            coeffs.push((rvar.index(pp, qq), c));
        }
    }
    (f0, coeffs)
}

/// Negated, projected S-side vertex inequality as one SDP block.
fn s_side_block(
    plant: &GeneralizedPlant,
    a: &DMatrix<f64>,
    gamma: f64,
    svar: &SymVar,
    n21: &DMatrix<f64>,
) -> (DMatrix<f64>, Vec<(usize, CoeffMatrix)>) {
    let (k, p1, q1) = (plant.k, plant.p1, plant.q1);
    let m21 = n21.ncols();
    let dim = m21 + p1;
    let ns = n21.rows(0, k).into_owned();
    let nw = n21.rows(k, q1).into_owned();

    // Constant part: [[0, 0, C1^T], [0, -g I, D11^T], [C1, D11, -g I]]
    // conjugated by diag(N21, I) and negated.
    let big = k + q1 + p1;
    let mut k0 = DMatrix::zeros(big, big);
    k0.view_mut((0, k + q1), (k, p1)).copy_from(&plant.c1.transpose());
    k0.view_mut((k + q1, 0), (p1, k)).copy_from(&plant.c1);
    k0.view_mut((k, k + q1), (q1, p1)).copy_from(&plant.d11.transpose());
    k0.view_mut((k + q1, k), (p1, q1)).copy_from(&plant.d11);
    for i in 0..q1 + p1 {
        k0[(k + i, k + i)] = -gamma;
    }
    let mut proj = DMatrix::zeros(big, dim);
    proj.view_mut((0, 0), (k + q1, m21)).copy_from(n21);
    for i in 0..p1 {
        proj[(k + q1 + i, m21 + i)] = 1.0;
    }
    let f0 = -(proj.transpose() * k0 * &proj);

    // S enters through A^T S + S A (states) and S B1 (state-w coupling).
    let at = a.transpose();
    let mut coeffs = Vec::with_capacity(SymVar::n_entries(k));
    for qq in 0..k {
        for pp in 0..=qq {
            let mut c = CoeffMatrix::zeros(dim);
            let e_p = unit(k, pp);
            let e_q = unit(k, qq);
            c.add_pair(lift(&ns, &(&at * &e_p), p1), lift(&ns, &e_q, p1), -1.0);
            c.add_pair(lift(&ns, &e_p, p1), lift(&nw, &(plant.b1.transpose() * &e_q), p1), -1.0);
            if pp != qq {
                c.add_pair(lift(&ns, &(&at * &e_q), p1), lift(&ns, &e_p, p1), -1.0);
                c.add_pair(lift(&ns, &e_q, p1), lift(&nw, &(plant.b1.transpose() * &e_p), p1), -1.0);
            }
            coeffs.push((svar.index(pp, qq), c));
        }
    }
    (f0, coeffs)
}

/// Rescales the performance channels so level `gamma` becomes level one:
/// `|T_zw| < gamma` for the original plant iff `|T_z'w'| < 1` for the plant
/// with `B1/sqrt(g)`, `C1/sqrt(g)`, `D11/g`, `D12/sqrt(g)`, `D21/sqrt(g)`.
/// The congruence keeps the controller and certificates unchanged while the
/// inequality data stays well-scaled for any level.
fn scaled_plant(plant: &GeneralizedPlant, gamma: f64) -> GeneralizedPlant {
    let rg = gamma.sqrt();
    GeneralizedPlant {
        b1: &plant.b1 / rg,
        b2: plant.b2.clone(),
        c1: &plant.c1 / rg,
        c2: plant.c2.clone(),
        d11: &plant.d11 / gamma,
        d12: &plant.d12 / rg,
        d21: &plant.d21 / rg,
        k: plant.k,
        p: plant.p,
        q: plant.q,
        q1: plant.q1,
        p1: plant.p1,
    }
}

/// Null bases of `[B2^T D12^T]` and `[C2 D21]`, defining the projections of
/// the two solvability inequalities.
fn projection_bases(plant: &GeneralizedPlant) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut m12 = DMatrix::zeros(plant.p, plant.k + plant.p1);
    m12.view_mut((0, 0), (plant.p, plant.k)).copy_from(&plant.b2.transpose());
    m12.view_mut((0, plant.k), (plant.p, plant.p1)).copy_from(&plant.d12.transpose());
    let mut m21 = DMatrix::zeros(plant.q, plant.k + plant.q1);
    m21.view_mut((0, 0), (plant.q, plant.k)).copy_from(&plant.c2);
    m21.view_mut((0, plant.k), (plant.q, plant.q1)).copy_from(&plant.d21);
    (null_space_basis(&m12), null_space_basis(&m21))
}

/// Outcome of one feasibility probe at a fixed level.
#[derive(Clone)]
struct Probe {
    r: DMatrix<f64>,
    s: DMatrix<f64>,
    gamma: f64,
}

/// Builds the vertex solvability program at level one for a scaled plant:
/// both projected inequalities per vertex plus the coupling block.
fn assemble_probe_sdp(
    sp: &GeneralizedPlant,
    vertex_a: &[DMatrix<f64>],
    coupling_margin: f64,
    opts: &SynthesisOptions,
) -> Result<(SdpProblem, SymVar, SymVar)> {
    let k = sp.k;
    let (n12, n21) = projection_bases(sp);
    let mut prob = SdpProblem::new();
    let rvar = prob.add_symmetric(k);
    let svar = prob.add_symmetric(k);
    for a in vertex_a {
        let (f0, coeffs) = r_side_block(sp, a, 1.0, &rvar, &n12);
        prob.add_block(f0, coeffs, opts.lmi_margin)?;
        let (f0, coeffs) = s_side_block(sp, a, 1.0, &svar, &n21);
        prob.add_block(f0, coeffs, opts.lmi_margin)?;
    }
    let mut coupling = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        coupling[(i, k + i)] = 1.0;
        coupling[(k + i, i)] = 1.0;
    }
    let mut coeffs = identity_embedding_coeffs(&rvar, 2 * k, 0);
    coeffs.extend(identity_embedding_coeffs(&svar, 2 * k, k));
    prob.add_block(coupling, coeffs, coupling_margin)?;
    Ok((prob, rvar, svar))
}

fn probe_gamma(
    plant: &GeneralizedPlant,
    vertex_a: &[DMatrix<f64>],
    gamma: f64,
    opts: &SynthesisOptions,
    log: &mut SynthesisLog,
) -> Result<Option<Probe>> {
    let sp = scaled_plant(plant, gamma);
    let (prob, rvar, svar) = assemble_probe_sdp(&sp, vertex_a, opts.coupling_margin, opts)?;

    let started = Instant::now();
    let solved = solve_sdp(&prob, &opts.sdp);
    let cpu_seconds = started.elapsed().as_secs_f64();
    match solved {
        Ok(SdpOutcome::Feasible(sol)) => {
            log.rows.push(SynthesisLogRow {
                gamma,
                feasible: true,
                newton_iters: sol.newton_iters,
                cpu_seconds,
            });
            Ok(Some(Probe { r: rvar.extract(&sol.x), s: svar.extract(&sol.x), gamma }))
        }
        Ok(SdpOutcome::Infeasible(rep)) => {
            log.rows.push(SynthesisLogRow {
                gamma,
                feasible: false,
                newton_iters: rep.newton_iters,
                cpu_seconds,
            });
            Ok(None)
        }
        Err(Error::IterationLimit(_)) => {
            log.rows.push(SynthesisLogRow {
                gamma,
                feasible: false,
                newton_iters: opts.sdp.max_newton,
                cpu_seconds,
            });
            log.stagnation = true;
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// One conditioning solve: maximize the coupling margin `t` in
/// `[R I; I S] - t I >= 0` subject to the vertex inequalities at the probe
/// level and a cap on `tr(R) + tr(S)` ruling out escape toward the variable
/// box. The margin controls the distance of `I - S R` from singularity,
/// which bounds the conditioning of the completed certificate and with it
/// the magnitude of the reconstructed gains.
fn conditioning_probe(
    sp: &GeneralizedPlant,
    vertex_a: &[DMatrix<f64>],
    cap: f64,
    gamma: f64,
    opts: &SynthesisOptions,
) -> Result<Option<Probe>> {
    let k = sp.k;
    let (mut prob, rvar, svar) = assemble_probe_sdp(sp, vertex_a, opts.coupling_margin, opts)?;
    let tvar = prob.add_scalar();

    let mut coupling = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        coupling[(i, k + i)] = 1.0;
        coupling[(k + i, i)] = 1.0;
    }
    let mut coeffs = identity_embedding_coeffs(&rvar, 2 * k, 0);
    coeffs.extend(identity_embedding_coeffs(&svar, 2 * k, k));
    let mut c = CoeffMatrix::zeros(2 * k);
    for i in 0..2 * k {
        c.add_pair(unit(2 * k, i), unit(2 * k, i), -0.5);
    }
    coeffs.push((tvar, c));
    prob.add_block(coupling, coeffs, 0.0)?;

    let mut coeffs = Vec::with_capacity(2 * k);
    for var in [&rvar, &svar] {
        for i in 0..k {
            let mut c = CoeffMatrix::zeros(1);
            c.add_pair(unit(1, 0), unit(1, 0), -0.5);
            coeffs.push((var.index(i, i), c));
        }
    }
    prob.add_block(DMatrix::from_element(1, 1, cap), coeffs, 0.0)?;

    let mut objective = DVector::zeros(prob.n_vars());
    objective[tvar] = -1.0;
    prob.set_objective(objective);

    match solve_sdp(&prob, &opts.sdp) {
        Ok(SdpOutcome::Feasible(sol)) => {
            Ok(Some(Probe { r: rvar.extract(&sol.x), s: svar.extract(&sol.x), gamma }))
        }
        Ok(SdpOutcome::Infeasible(_)) | Err(Error::IterationLimit(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Replaces the accepted probe point with a well-conditioned one. The
/// early-exit point of a plain probe sits near the analytic center of the
/// box-bounded feasible set, where traces reach box scale and the coupling
/// is nearly singular, so the completed certificate cannot be reconstructed
/// from. Re-solving with the coupling margin as objective under a moderate
/// trace cap yields a point built for completion; the cap ladder only widens
/// when the tight one fails. Keeps the raw point when nothing succeeds.
fn condition_probe(
    plant: &GeneralizedPlant,
    vertex_a: &[DMatrix<f64>],
    raw: Probe,
    opts: &SynthesisOptions,
) -> Result<Probe> {
    let sp = scaled_plant(plant, raw.gamma);
    let base = 32.0 * sp.k as f64;
    for cap in [base, 4.0 * base, 16.0 * base] {
        if let Some(p) = conditioning_probe(&sp, vertex_a, cap, raw.gamma, opts)? {
            return Ok(p);
        }
    }
    Ok(raw)
}

/// Completes the common closed-loop certificate from `(R, S)`:
/// with `N M^T = I - S R` (SVD split), `X_cl` solves
/// `X_cl [R I; M^T 0] = [I S; 0 N^T]`.
fn complete_lyapunov(r: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = r.nrows();
    let isr = DMatrix::<f64>::identity(k, k) - s * r;
    let svd = isr.svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 1e-12 * svd.singular_values.amax() {
        return Err(Error::NumericalBreakdown(
            "I - S R is numerically singular; coupling condition too tight".into(),
        ));
    }
    let sqrt = DMatrix::from_diagonal(&svd.singular_values.map(f64::sqrt));
    let n = u * &sqrt;
    let m = vt.transpose() * &sqrt;

    let mut pi1 = DMatrix::zeros(2 * k, 2 * k);
    pi1.view_mut((0, 0), (k, k)).copy_from(r);
    pi1.view_mut((0, k), (k, k)).copy_from(&DMatrix::identity(k, k));
    pi1.view_mut((k, 0), (k, k)).copy_from(&m.transpose());
    let mut pi2 = DMatrix::zeros(2 * k, 2 * k);
    pi2.view_mut((0, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
    pi2.view_mut((0, k), (k, k)).copy_from(s);
    pi2.view_mut((k, k), (k, k)).copy_from(&n.transpose());

    // X pi1 = pi2  =>  pi1^T X^T = pi2^T; X is symmetric in exact arithmetic.
    let lu = pi1.transpose().lu();
    let xt = lu
        .solve(&pi2.transpose())
        .ok_or_else(|| Error::NumericalBreakdown("Lyapunov completion solve failed".into()))?;
    let x = (&xt + xt.transpose()) * 0.5;
    let lmin = x.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin < 1e-8 {
        return Err(Error::NumericalBreakdown(format!(
            "completed Lyapunov matrix not positive definite (lambda_min {lmin:.3e})"
        )));
    }
    Ok(x)
}

/// Closed-loop realization of one plant vertex with one controller gain.
pub fn vertex_closed_loop(
    plant: &GeneralizedPlant,
    a: &DMatrix<f64>,
    gain: &ControllerGain,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (k, q1, p1) = (plant.k, plant.q1, plant.p1);
    let kc = gain.ak.nrows();
    let n = k + kc;
    let mut a_cl = DMatrix::zeros(n, n);
    a_cl.view_mut((0, 0), (k, k))
        .copy_from(&(a + &plant.b2 * &gain.dk * &plant.c2));
    a_cl.view_mut((0, k), (k, kc)).copy_from(&(&plant.b2 * &gain.ck));
    a_cl.view_mut((k, 0), (kc, k)).copy_from(&(&gain.bk * &plant.c2));
    a_cl.view_mut((k, k), (kc, kc)).copy_from(&gain.ak);
    let mut b_cl = DMatrix::zeros(n, q1);
    b_cl.view_mut((0, 0), (k, q1))
        .copy_from(&(&plant.b1 + &plant.b2 * &gain.dk * &plant.d21));
    b_cl.view_mut((k, 0), (kc, q1)).copy_from(&(&gain.bk * &plant.d21));
    let mut c_cl = DMatrix::zeros(p1, n);
    c_cl.view_mut((0, 0), (p1, k))
        .copy_from(&(&plant.c1 + &plant.d12 * &gain.dk * &plant.c2));
    c_cl.view_mut((0, k), (p1, kc)).copy_from(&(&plant.d12 * &gain.ck));
    let d_cl = &plant.d11 + &plant.d12 * &gain.dk * &plant.d21;
    (a_cl, b_cl, c_cl, d_cl)
}

/// Largest sampled singular value of `C (jwI - A)^{-1} B + D` over a
/// log-spaced frequency grid.
pub fn sampled_hinf_norm(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    n_points: usize,
    w_lo: f64,
    w_hi: f64,
) -> f64 {
    assert!(n_points >= 2 && w_lo > 0.0 && w_hi > w_lo, "frequency grid");
    let to_c = |m: &DMatrix<f64>| m.map(|x| Complex::new(x, 0.0));
    let (ac, bc, cc, dc) = (to_c(a), to_c(b), to_c(c), to_c(d));
    let n = a.nrows();
    let ratio = w_hi / w_lo;
    let gains = par::map_indexed(n_points, |i| {
        let w = w_lo * ratio.powf(i as f64 / (n_points - 1) as f64);
        let mut m = -&ac;
        for j in 0..n {
            m[(j, j)] += Complex::new(0.0, w);
        }
        let x = match m.lu().solve(&bc) {
            Some(x) => x,
            None => return f64::INFINITY,
        };
        let g = &cc * x + &dc;
        g.svd(false, false).singular_values.iter().cloned().fold(0.0f64, f64::max)
    });
    gains.into_iter().fold(0.0f64, f64::max)
}

/// Recovers one vertex controller from the bounded-real inequality at the
/// completed certificate, picking the minimal-Frobenius-norm solution.
fn reconstruct_vertex(
    plant: &GeneralizedPlant,
    a: &DMatrix<f64>,
    x_cl: &DMatrix<f64>,
    gamma: f64,
    opts: &SynthesisOptions,
) -> Result<ControllerGain> {
    let (k, p, q, q1, p1) = (plant.k, plant.p, plant.q, plant.q1, plant.p1);
    let n2 = 2 * k;
    let m = n2 + q1 + p1;

    // Open part (controller zeroed): A0 = diag(A, 0), B0 = [B1; 0],
    // C0 = [C1 0].
    let mut a0 = DMatrix::zeros(n2, n2);
    a0.view_mut((0, 0), (k, k)).copy_from(a);
    let mut b0 = DMatrix::zeros(n2, q1);
    b0.view_mut((0, 0), (k, q1)).copy_from(&plant.b1);
    let mut c0 = DMatrix::zeros(p1, n2);
    c0.view_mut((0, 0), (p1, k)).copy_from(&plant.c1);

    let mut psi = DMatrix::zeros(m, m);
    let xa = x_cl * &a0;
    psi.view_mut((0, 0), (n2, n2)).copy_from(&(&xa.transpose() + &xa));
    let xb = x_cl * &b0;
    psi.view_mut((0, n2), (n2, q1)).copy_from(&xb);
    psi.view_mut((n2, 0), (q1, n2)).copy_from(&xb.transpose());
    psi.view_mut((0, n2 + q1), (n2, p1)).copy_from(&c0.transpose());
    psi.view_mut((n2 + q1, 0), (p1, n2)).copy_from(&c0);
    psi.view_mut((n2, n2 + q1), (q1, p1)).copy_from(&plant.d11.transpose());
    psi.view_mut((n2 + q1, n2), (p1, q1)).copy_from(&plant.d11);
    for i in 0..q1 + p1 {
        psi[(n2 + i, n2 + i)] = -gamma;
    }

    // Controller channels: Btil = [0 B2; I 0], Ctil = [0 I; C2 0],
    // D12til = [0 D12], D21til = [0; D21].
    let mut btil = DMatrix::zeros(n2, k + p);
    btil.view_mut((0, k), (k, p)).copy_from(&plant.b2);
    btil.view_mut((k, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
    let mut ctil = DMatrix::zeros(k + q, n2);
    ctil.view_mut((0, k), (k, k)).copy_from(&DMatrix::identity(k, k));
    ctil.view_mut((k, 0), (q, k)).copy_from(&plant.c2);

    // Q = [Btil^T X, 0, D12til^T], P = [Ctil, D21til, 0].
    let mut qmat = DMatrix::zeros(k + p, m);
    qmat.view_mut((0, 0), (k + p, n2)).copy_from(&(btil.transpose() * x_cl));
    qmat.view_mut((k, n2 + q1), (p, p1)).copy_from(&plant.d12.transpose());
    let mut pmat = DMatrix::zeros(k + q, m);
    pmat.view_mut((0, 0), (k + q, n2)).copy_from(&ctil);
    pmat.view_mut((k, n2), (q, q1)).copy_from(&plant.d21);

    // Precondition with the congruence diag(X^{-1/2}, I): definiteness, and
    // with it the set of feasible gains, is congruence-invariant, while the
    // intrinsic spread of the certificate (tiny eigenvalues in strongly
    // damped directions, large ones on the coupled side) is scaled out of
    // the inequality so the barrier solver sees balanced data.
    let eig = x_cl.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::NumericalBreakdown(
            "closed-loop Lyapunov matrix lost positive definiteness".into(),
        ));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let w_half = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let mut t_cong = DMatrix::identity(m, m);
    t_cong.view_mut((0, 0), (n2, n2)).copy_from(&w_half);
    let mut psi = t_cong.transpose() * psi * &t_cong;
    let mut qmat = qmat * &t_cong;
    let mut pmat = pmat * &t_cong;

    let rows = k + p;
    let cols = k + q;

    // The certificate scaling leaves the state block carrying the plant's
    // stiffness, so level the remaining spread with a few sweeps of
    // symmetric equilibration. A positive diagonal congruence preserves
    // definiteness and leaves the gain variable untouched.
    let mut d = vec![1.0f64; m];
    for _ in 0..4 {
        for l in 0..m {
            let mut r: f64 = 0.0;
            for j in 0..m {
                r = r.max((psi[(l, j)] * d[l] * d[j]).abs());
            }
            for i in 0..rows {
                r = r.max((qmat[(i, l)] * d[l]).abs());
            }
            for i in 0..cols {
                r = r.max((pmat[(i, l)] * d[l]).abs());
            }
            if r > 0.0 {
                d[l] /= r.sqrt();
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            psi[(i, j)] *= d[i] * d[j];
        }
    }
    for j in 0..m {
        for i in 0..rows {
            qmat[(i, j)] *= d[j];
        }
        for i in 0..cols {
            pmat[(i, j)] *= d[j];
        }
    }

    // The solver boxes every scalar, so the Schur trace bound silently caps
    // the recoverable gain norm. Strongly destabilized plants can demand
    // gains above that cap, which shows up as the feasibility phase jamming
    // at a small positive slack. Re-solving for Omega / scale lifts the cap
    // without disturbing the conditioning of the data.
    let mut last_err: Option<Error> = None;
    for omega_scale in [1.0, 32.0, 1024.0] {
        let mut prob = SdpProblem::new();
        let tvar = prob.add_symmetric(rows);
        let mut omega_idx = vec![0usize; rows * cols];
        for j in 0..cols {
            for i in 0..rows {
                omega_idx[j * rows + i] = prob.add_scalar();
            }
        }

        // -(Psi + Q^T Omega P + P^T Omega^T Q) >= margin I.
        let mut brl_coeffs = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                let mut c = CoeffMatrix::zeros(m);
                c.add_pair(qmat.row(i).transpose(), pmat.row(j).transpose(), -omega_scale);
                brl_coeffs.push((omega_idx[j * rows + i], c));
            }
        }
        prob.add_block(-&psi, brl_coeffs, opts.lmi_margin)?;

        // [T Omega; Omega^T I] >= 0 bounds tr(T) >= |Omega|_F^2.
        let schur_dim = rows + cols;
        let mut f0 = DMatrix::zeros(schur_dim, schur_dim);
        for i in 0..cols {
            f0[(rows + i, rows + i)] = 1.0;
        }
        let mut schur_coeffs = identity_embedding_coeffs(&tvar, schur_dim, 0);
        for j in 0..cols {
            for i in 0..rows {
                let mut c = CoeffMatrix::zeros(schur_dim);
                c.add_pair(unit(schur_dim, i), unit(schur_dim, rows + j), 1.0);
                schur_coeffs.push((omega_idx[j * rows + i], c));
            }
        }
        prob.add_block(f0, schur_coeffs, 0.0)?;

        let mut objective = DVector::zeros(prob.n_vars());
        for i in 0..rows {
            objective[tvar.index(i, i)] = 1.0;
        }
        prob.set_objective(objective);

        let sol = match solve_sdp(&prob, &opts.sdp) {
            Ok(SdpOutcome::Feasible(s)) => s,
            Ok(SdpOutcome::Infeasible(_)) => {
                last_err = Some(Error::NumericalBreakdown(
                    "controller reconstruction inequality infeasible at the certified level"
                        .into(),
                ));
                continue;
            }
            Err(e @ Error::IterationLimit(_)) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let omega =
            DMatrix::from_fn(rows, cols, |i, j| omega_scale * sol.x[omega_idx[j * rows + i]]);
        return Ok(ControllerGain {
            ak: omega.view((0, 0), (k, k)).into_owned(),
            bk: omega.view((0, k), (k, q)).into_owned(),
            ck: omega.view((k, 0), (p, k)).into_owned(),
            dk: omega.view((k, k), (p, q)).into_owned(),
        });
    }
    Err(last_err.unwrap_or_else(|| {
        Error::NumericalBreakdown("controller reconstruction produced no outcome".into())
    }))
}

/// Synthesizes one controller per polytope vertex for the reduced model.
pub fn synthesize(
    model: &AffineLpvModel,
    polytope: &ParamPolytope,
    weights: &PerformanceWeights,
    gamma: GammaSpec,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    if polytope.r != model.r {
        return Err(Error::Dimension {
            context: "synthesis polytope",
            expected: format!("parameter dimension {}", model.r),
            found: format!("{}", polytope.r),
        });
    }
    let plant = assemble_generalized_plant(model, weights)?;
    let verts = polytope.ambient_vertices();
    let vertex_a: Vec<DMatrix<f64>> = (0..verts.ncols())
        .map(|j| {
            let rho: Vec<f64> = verts.column(j).iter().cloned().collect();
            model.scheduled_state_matrix(&rho)
        })
        .collect::<Result<_>>()?;

    let mut log = SynthesisLog::default();
    let best = match gamma {
        GammaSpec::Fixed(g) => {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::WeightError(format!("gamma must be positive, got {g}")));
            }
            probe_gamma(&plant, &vertex_a, g, opts, &mut log)?
                .ok_or(Error::SynthesisInfeasible { gamma: g })?
        }
        GammaSpec::Minimize => {
            let mut hi = opts.gamma_hi;
            let mut best = probe_gamma(&plant, &vertex_a, hi, opts, &mut log)?
                .ok_or(Error::SynthesisInfeasible { gamma: hi })?;
            // Geometric descent to bracket the optimum, then bisection.
            let mut lo = 0.0;
            for _ in 0..12 {
                let g = hi / 10.0;
                match probe_gamma(&plant, &vertex_a, g, opts, &mut log)? {
                    Some(p) => {
                        best = p;
                        hi = g;
                    }
                    None => {
                        lo = g;
                        break;
                    }
                }
            }
            while hi - lo > opts.rel_width * hi {
                let mid = 0.5 * (hi + lo);
                match probe_gamma(&plant, &vertex_a, mid, opts, &mut log)? {
                    Some(p) => {
                        best = p;
                        hi = mid;
                    }
                    None => lo = mid,
                }
            }
            best
        }
    };

    // Reconstruction can need a relaxed level: at the bisection endpoint the
    // feasible set is razor thin, so conditioning floors and the recovery
    // inequality may only open up slightly above it. Each rung re-probes,
    // re-conditions and re-completes at its own level; the reported gamma is
    // the level actually used.
    let mut reconstructed: Option<(f64, DMatrix<f64>, Vec<ControllerGain>)> = None;
    'relax: for relax in [1.0, 1.01, 1.05, 1.1, 1.25] {
        let g = best.gamma * relax;
        let point = if relax == 1.0 {
            best.clone()
        } else {
            match probe_gamma(&plant, &vertex_a, g, opts, &mut log)? {
                Some(p) => p,
                None => continue,
            }
        };
        let point = condition_probe(&plant, &vertex_a, point, opts)?;
        let trace = std::env::var_os("LPVKIT_SYNTH_TRACE").is_some();
        let x_cl = match complete_lyapunov(&point.r, &point.s) {
            Ok(x) => x,
            Err(Error::NumericalBreakdown(msg)) => {
                if trace {
                    eprintln!("synth trace: relax {relax} completion failed: {msg}");
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        if trace {
            let eigs = x_cl.clone().symmetric_eigen().eigenvalues;
            eprintln!(
                "synth trace: relax {relax} g={g:.4e} tr(R)={:.3e} tr(S)={:.3e} xcl [{:.3e}, {:.3e}]",
                point.r.trace(),
                point.s.trace(),
                eigs.iter().cloned().fold(f64::INFINITY, f64::min),
                eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            );
        }
        let sp = scaled_plant(&plant, g);
        let mut gains = Vec::with_capacity(vertex_a.len());
        if trace {
            std::env::set_var("LPVKIT_SDP_TRACE", "1");
        }
        for a in &vertex_a {
            match reconstruct_vertex(&sp, a, &x_cl, 1.0, opts) {
                Ok(gain) => gains.push(gain),
                Err(Error::NumericalBreakdown(msg)) => {
                    if trace {
                        eprintln!("synth trace: relax {relax} reconstruct: {msg}");
                    }
                    continue 'relax;
                }
                Err(Error::IterationLimit(msg)) => {
                    if trace {
                        eprintln!("synth trace: relax {relax} reconstruct limit: {msg}");
                    }
                    continue 'relax;
                }
                Err(e) => return Err(e),
            }
        }
        if trace {
            std::env::remove_var("LPVKIT_SDP_TRACE");
        }
        reconstructed = Some((g, x_cl, gains));
        break;
    }
    let (gamma_star, x_cl, gains) = reconstructed.ok_or_else(|| {
        Error::NumericalBreakdown("controller reconstruction failed at all relaxations".into())
    })?;

    let frozen_vertex_norms: Vec<f64> = vertex_a
        .iter()
        .zip(&gains)
        .map(|(a, gain)| {
            let (acl, bcl, ccl, dcl) = vertex_closed_loop(&plant, a, gain);
            sampled_hinf_norm(&acl, &bcl, &ccl, &dcl, 400, 1e-3, 1e3)
        })
        .collect();

    let controllers = VertexControllerSet {
        ak: gains.iter().map(|g| g.ak.clone()).collect(),
        bk: gains.iter().map(|g| g.bk.clone()).collect(),
        ck: gains.iter().map(|g| g.ck.clone()).collect(),
        dk: gains.iter().map(|g| g.dk.clone()).collect(),
        gamma: gamma_star,
        lyapunov: x_cl,
        weights: *weights,
        k_c: model.k,
        polytope: polytope.clone(),
        frozen_vertex_norms,
    };
    Ok(SynthesisResult { controllers, log })
}

/// Outcome of the a posteriori quadratic stability check.
#[derive(Debug, Clone)]
pub enum StabilityCertificate {
    /// `X > 0` with `A_i^T X + X A_i < 0` at every vertex; `margin` is the
    /// largest (least negative) derivative eigenvalue over the vertices.
    Certified { x: DMatrix<f64>, margin: f64 },
    /// No common quadratic certificate was found; the bound is the certified
    /// minimal slack of the feasibility program (positive).
    Failure { best_margin: f64 },
}

/// Closed-loop vertex state matrices of a controller set on its model.
pub fn closed_loop_vertex_matrices(
    model: &AffineLpvModel,
    set: &VertexControllerSet,
) -> Result<Vec<DMatrix<f64>>> {
    let plant = assemble_generalized_plant(model, &set.weights)?;
    let verts = set.polytope.ambient_vertices();
    if verts.ncols() != set.n_vertices() {
        return Err(Error::Dimension {
            context: "closed-loop vertices",
            expected: format!("{} controllers", verts.ncols()),
            found: format!("{}", set.n_vertices()),
        });
    }
    (0..verts.ncols())
        .map(|j| {
            let rho: Vec<f64> = verts.column(j).iter().cloned().collect();
            let a = model.scheduled_state_matrix(&rho)?;
            let gain = ControllerGain {
                ak: set.ak[j].clone(),
                bk: set.bk[j].clone(),
                ck: set.ck[j].clone(),
                dk: set.dk[j].clone(),
            };
            Ok(vertex_closed_loop(&plant, &a, &gain).0)
        })
        .collect()
}

/// Searches a fresh common quadratic Lyapunov certificate for a family of
/// vertex state matrices and verifies it with dense eigensolves. The
/// returned matrix is scaled so the verified margins clear the absolute
/// thresholds `lambda_min(X) >= 1e-8` and
/// `lambda_max(A_i^T X + X A_i) <= -1e-8`.
pub fn quadratic_stability_certificate(a_cls: &[DMatrix<f64>]) -> Result<StabilityCertificate> {
    if a_cls.is_empty() {
        return Err(Error::Dimension {
            context: "stability certificate",
            expected: "at least one vertex".into(),
            found: "0".into(),
        });
    }
    let n = a_cls[0].nrows();
    let scale = a_cls.iter().map(|a| a.amax()).fold(1.0f64, f64::max);
    let delta = 1e-2 * scale;
    let mut prob = SdpProblem::new();
    let xv = prob.add_symmetric(n);
    prob.add_block(DMatrix::zeros(n, n), identity_embedding_coeffs(&xv, n, 0), 1e-2)?;
    for a in a_cls {
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::Dimension {
                context: "stability certificate",
                expected: format!("{n}x{n} vertices"),
                found: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        prob.add_block(DMatrix::zeros(n, n), lyapunov_coeffs(a, &xv), delta)?;
    }
    let sol = match solve_sdp(&prob, &SdpOptions::default())? {
        SdpOutcome::Feasible(s) => s,
        SdpOutcome::Infeasible(rep) => {
            return Ok(StabilityCertificate::Failure { best_margin: rep.slack_lower_bound })
        }
    };
    let mut x = xv.extract(&sol.x);
    let xmin = x.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut worst_deriv = f64::NEG_INFINITY;
    for a in a_cls {
        let d = a.transpose() * &x + &x * a;
        let dmax = d.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst_deriv = worst_deriv.max(dmax);
    }
    if xmin <= 0.0 || worst_deriv >= 0.0 {
        return Ok(StabilityCertificate::Failure { best_margin: worst_deriv.max(-xmin) });
    }
    // Rescaling moves both verified margins past the absolute thresholds.
    let c = (1e-8 / xmin).max(1e-8 / -worst_deriv) * 4.0;
    if c > 1.0 {
        x *= c;
        worst_deriv *= c;
    }
    Ok(StabilityCertificate::Certified { x, margin: worst_deriv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::bounding_box;

    /// LTI plant wrapped as a one-parameter model whose coefficient matrix
    /// is zero, so every vertex sees the same dynamics.
    fn lti_model(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> AffineLpvModel {
        let k = a.nrows();
        AffineLpvModel {
            r: 1,
            k,
            a_bar: vec![a, DMatrix::zeros(k, k)],
            b_bar: b,
            c_bar: c,
            v_r: DMatrix::identity(k, 1),
            v_k: DMatrix::identity(k, k),
            full_ai: None,
            name: "lti".into(),
        }
    }

    fn interval_polytope() -> ParamPolytope {
        let cloud = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        bounding_box(&cloud, 0.0).unwrap()
    }

    fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
        a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn weight_validation_rejects_degenerate_weights() {
        let bad = PerformanceWeights { w_u: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::WeightError(_))));
        let bad = PerformanceWeights { w_d: -1.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::WeightError(_))));
        let bad = PerformanceWeights { w_y: f64::NAN, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::WeightError(_))));
    }

    #[test]
    fn lti_gamma_matches_sampled_closed_loop_norm() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let model = lti_model(a, b, c);
        let poly = interval_polytope();
        let res = synthesize(
            &model,
            &poly,
            &PerformanceWeights::default(),
            GammaSpec::Minimize,
            &SynthesisOptions::default(),
        )
        .unwrap();
        let set = &res.controllers;
        assert_eq!(set.n_vertices(), 2);
        let sampled = set.frozen_vertex_norms.iter().cloned().fold(0.0f64, f64::max);
        assert!(sampled <= set.gamma * (1.0 + 1e-6), "sampled {sampled} > gamma {}", set.gamma);
        assert!(
            set.gamma <= 1.10 * sampled,
            "gamma {} not within 10% of sampled norm {sampled}",
            set.gamma
        );
    }

    #[test]
    fn unstable_scalar_plant_is_stabilized() {
        let model = lti_model(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        );
        let poly = interval_polytope();
        let res = synthesize(
            &model,
            &poly,
            &PerformanceWeights::default(),
            GammaSpec::Minimize,
            &SynthesisOptions::default(),
        )
        .unwrap();
        let set = &res.controllers;
        let acls = closed_loop_vertex_matrices(&model, set).unwrap();
        for acl in &acls {
            assert!(spectral_abscissa(acl) < 0.0, "closed loop not Hurwitz");
        }
        let sampled = set.frozen_vertex_norms.iter().cloned().fold(0.0f64, f64::max);
        assert!(sampled <= set.gamma * (1.0 + 1e-6));
        assert!(!res.log.rows.is_empty());
        let csv = res.log.to_csv();
        assert!(csv.starts_with("gamma,feasible,newton_iters,cpu_seconds\n"));
        assert_eq!(csv.lines().count(), res.log.rows.len() + 1);
    }

    fn varying_model() -> AffineLpvModel {
        let a0 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
        let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.4, 0.0]);
        AffineLpvModel {
            r: 1,
            k: 2,
            a_bar: vec![a0, a1],
            b_bar: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            c_bar: DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            v_r: DMatrix::identity(2, 1),
            v_k: DMatrix::identity(2, 2),
            full_ai: None,
            name: "varying".into(),
        }
    }

    #[test]
    fn varying_model_synthesis_certifies_all_vertices() {
        let model = varying_model();
        let poly = interval_polytope();
        let res = synthesize(
            &model,
            &poly,
            &PerformanceWeights::default(),
            GammaSpec::Minimize,
            &SynthesisOptions::default(),
        )
        .unwrap();
        let set = &res.controllers;
        assert_eq!(set.k_c, 2);
        assert_eq!(set.n_vertices(), 2);
        let lmin = set
            .lyapunov
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(lmin >= 1e-8, "certificate not positive definite");
        for (j, norm) in set.frozen_vertex_norms.iter().enumerate() {
            assert!(
                *norm <= set.gamma * (1.0 + 1e-6),
                "vertex {j} sampled norm {norm} exceeds gamma {}",
                set.gamma
            );
        }
    }

    #[test]
    fn fixed_gamma_is_monotone_in_feasibility() {
        let model = varying_model();
        let poly = interval_polytope();
        let weights = PerformanceWeights::default();
        let opts = SynthesisOptions::default();
        let res =
            synthesize(&model, &poly, &weights, GammaSpec::Minimize, &opts).unwrap();
        let gstar = res.controllers.gamma;
        for factor in [1.5, 4.0] {
            let relaxed =
                synthesize(&model, &poly, &weights, GammaSpec::Fixed(gstar * factor), &opts);
            assert!(relaxed.is_ok(), "feasible level became infeasible when relaxed");
        }
        let tightened =
            synthesize(&model, &poly, &weights, GammaSpec::Fixed(gstar / 4.0), &opts);
        assert!(matches!(tightened, Err(Error::SynthesisInfeasible { .. })));
    }

    #[test]
    fn scheduled_gain_interpolates_vertices() {
        let model = varying_model();
        let poly = interval_polytope();
        let res = synthesize(
            &model,
            &poly,
            &PerformanceWeights::default(),
            GammaSpec::Minimize,
            &SynthesisOptions::default(),
        )
        .unwrap();
        let set = res.controllers;
        let e0 = DVector::from_column_slice(&[1.0, 0.0]);
        let g0 = set.scheduled_gain(&e0).unwrap();
        assert!((&g0.ak - &set.ak[0]).amax() < 1e-14);
        let mid = DVector::from_column_slice(&[0.5, 0.5]);
        let gm = set.scheduled_gain(&mid).unwrap();
        let expect = (&set.ak[0] + &set.ak[1]) * 0.5;
        assert!((&gm.ak - expect).amax() < 1e-14);

        let bad = DVector::from_column_slice(&[0.7, 0.7]);
        assert!(matches!(set.scheduled_gain(&bad), Err(Error::WeightError(_))));
        let neg = DVector::from_column_slice(&[1.5, -0.5]);
        assert!(matches!(set.scheduled_gain(&neg), Err(Error::WeightError(_))));
    }

    #[test]
    fn certificate_covers_closed_loop_vertices() {
        let model = varying_model();
        let poly = interval_polytope();
        let res = synthesize(
            &model,
            &poly,
            &PerformanceWeights::default(),
            GammaSpec::Minimize,
            &SynthesisOptions::default(),
        )
        .unwrap();
        let acls = closed_loop_vertex_matrices(&model, &res.controllers).unwrap();
        match quadratic_stability_certificate(&acls).unwrap() {
            StabilityCertificate::Certified { x, margin } => {
                assert!(margin < -1e-8, "margin {margin} not strictly negative");
                let xmin = x
                    .clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                assert!(xmin >= 1e-8);
                for a in &acls {
                    let d = a.transpose() * &x + &x * a;
                    let dmax = d
                        .symmetric_eigen()
                        .eigenvalues
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert!(dmax <= -1e-8, "vertex derivative max {dmax}");
                }
            }
            StabilityCertificate::Failure { best_margin } => {
                panic!("expected certificate, best margin {best_margin}")
            }
        }
    }

    #[test]
    fn unstable_vertex_family_fails_certification() {
        let stable = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let unstable = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match quadratic_stability_certificate(&[stable, unstable]).unwrap() {
            StabilityCertificate::Failure { best_margin } => assert!(best_margin > 0.0),
            StabilityCertificate::Certified { .. } => {
                panic!("unstable vertex certified stable")
            }
        }
    }

    #[test]
    fn sampled_norm_matches_analytic_first_order_peak() {
        // G(s) = 1 / (s + 1): peak gain 1 at w -> 0.
        let a = DMatrix::from_element(1, 1, -1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let c = DMatrix::from_element(1, 1, 1.0);
        let d = DMatrix::zeros(1, 1);
        let norm = sampled_hinf_norm(&a, &b, &c, &d, 400, 1e-3, 1e3);
        assert!((norm - 1.0).abs() < 1e-4, "sampled {norm}");
    }
}
