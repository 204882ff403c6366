//! Closed-loop simulation of a plant under the scheduled vertex controller,
//! with parameter-exit handling, phase portraits and range metrics.
//!
//! The coupled state is `[x; x_K]`. At every right-hand-side evaluation the
//! scheduling vector is read off the plant state, projected onto the
//! polytope when necessary, and the controller matrices are interpolated
//! with its barycentric coordinates. Violations of polytope membership are
//! detected on the output grid; the `HardError` policy truncates the run at
//! the violating sample (the result keeps the partial trajectory and a
//! single exit event, convertible to the matching error), while `Project`
//! keeps integrating with the projected parameter and records one event per
//! violation interval.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{integrate_ode, OdeOptions, OdeRhs, OdeStats};
use crate::pod::AffineLpvModel;
use crate::polytope::ParamPolytope;
use crate::sdc::QuadraticSystem;
use crate::signal::{signal_value, SignalSpec};
use crate::synthesis::VertexControllerSet;
use crate::trajectory::{Trajectory, TrajectoryMeta};

/// Distance from the polytope (in the scheduling space) above which a sample
/// counts as a membership violation.
const EXIT_TOL: f64 = 1e-8;

/// Output-norm thresholds the settling indicators are computed for.
const SETTLE_LEVELS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// The system the controller is wired to: the nonlinear plant itself or a
/// reduced surrogate (possibly of different order than the controller's).
pub enum PlantRef<'a> {
    Full(&'a QuadraticSystem),
    Reduced(&'a AffineLpvModel),
}

impl PlantRef<'_> {
    fn dim(&self) -> usize {
        match self {
            PlantRef::Full(sys) => sys.n,
            PlantRef::Reduced(model) => model.k,
        }
    }

    fn name(&self) -> String {
        match self {
            PlantRef::Full(sys) => sys.name.clone(),
            PlantRef::Reduced(model) => model.name.clone(),
        }
    }

    fn p(&self) -> usize {
        match self {
            PlantRef::Full(sys) => sys.p,
            PlantRef::Reduced(model) => model.p(),
        }
    }

    fn q(&self) -> usize {
        match self {
            PlantRef::Full(sys) => sys.q,
            PlantRef::Reduced(model) => model.q(),
        }
    }

    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            PlantRef::Full(sys) => &sys.c * x,
            PlantRef::Reduced(model) => &model.c_bar * x,
        }
    }
}

/// What happens when the scheduling parameter leaves the polytope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitPolicy {
    /// Faithful mode: the run ends at the violating sample.
    HardError,
    /// Mitigation: schedule with the Euclidean projection onto the polytope.
    Project,
}

/// One recorded membership violation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExitEvent {
    /// Start of the violation (first violating sample instant).
    pub time: f64,
    /// Largest distance from the polytope over the violation interval.
    pub magnitude: f64,
    /// Action taken: `"hard_error"` or `"project"`.
    pub action: String,
}

/// Earliest time from which the output norm stays at or below `level`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SettleMark {
    pub level: f64,
    pub time: Option<f64>,
}

/// Norm summaries of a closed-loop run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClosedLoopMetrics {
    pub max_output_norm: f64,
    pub final_output_norm: f64,
    pub max_state_norm: f64,
    pub settling: Vec<SettleMark>,
}

/// Everything sampled during a closed-loop run.
#[derive(Debug, Clone)]
pub struct ClosedLoopResult {
    pub plant_traj: Trajectory,
    /// Controller trajectory: states are `x_K`, outputs the control `u`,
    /// inputs the measurement `y` fed to the controller.
    pub controller_traj: Trajectory,
    /// Scheduling samples, one column per instant (the model's full `r`
    /// coordinates, of which the controller uses the leading block).
    pub rho_traj: DMatrix<f64>,
    pub exit_events: Vec<ExitEvent>,
    pub metrics: ClosedLoopMetrics,
}

impl ClosedLoopResult {
    /// The error corresponding to a hard-policy exit, when one was recorded.
    pub fn exit_error(&self) -> Option<Error> {
        self.exit_events
            .iter()
            .find(|e| e.action == "hard_error")
            .map(|e| Error::ParameterExit { time: e.time, magnitude: e.magnitude })
    }
}

/// Scheduling state shared by the right-hand side and the sampling loop.
struct Scheduler<'a> {
    w: &'a ParamPolytope,
    ctrl: &'a VertexControllerSet,
    model_r: usize,
    v_r: Option<&'a DMatrix<f64>>,
}

impl Scheduler<'_> {
    /// Full scheduling vector of the model (length `model_r`).
    fn rho_full(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.v_r {
            Some(v_r) => v_r.transpose() * x,
            None => x.rows(0, self.model_r).into_owned(),
        }
    }

    /// Controller-side coordinates: the leading block of the full vector.
    fn rho_sched(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.v_r {
            Some(v_r) => v_r.columns(0, self.w.r).transpose() * x,
            None => x.rows(0, self.w.r).into_owned(),
        }
    }

    /// Projection distance and barycentric weights of (the projection of)
    /// the scheduling point.
    fn weights(&self, rho: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (lambda, projected) = self.w.project(rho)?;
        Ok(((rho - projected).norm(), lambda))
    }

    /// Control value at the current coupled state.
    fn control(&self, x: &DVector<f64>, xk: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, lambda) = self.weights(&self.rho_sched(x))?;
        let gain = self.ctrl.scheduled_gain(&lambda)?;
        Ok(&gain.ck * xk + &gain.dk * y)
    }
}

struct CoupledRhs<'a> {
    plant: &'a PlantRef<'a>,
    sched: &'a Scheduler<'a>,
    disturbance: &'a SignalSpec,
    n_x: usize,
    k_c: usize,
}

impl OdeRhs for CoupledRhs<'_> {
    fn dim(&self) -> usize {
        self.n_x + self.k_c
    }

    fn eval(&self, t: f64, z: &DVector<f64>, out: &mut DVector<f64>) {
        let x = z.rows(0, self.n_x).into_owned();
        let xk = z.rows(self.n_x, self.k_c).into_owned();
        let y = self.plant.output(&x);

        // Projection keeps the vector field defined slightly outside the
        // polytope; the sampling loop is what enforces the exit policy.
        let (_, lambda) = self
            .sched
            .weights(&self.sched.rho_sched(&x))
            .expect("projection failed inside the integrator");
        let gain = self.sched.ctrl.scheduled_gain(&lambda).expect("validated weights");
        let u = &gain.ck * &xk + &gain.dk * &y;
        let d = signal_value(self.disturbance, t, self.plant.p()).expect("validated amplitude");
        let total = &u + &d;

        match self.plant {
            PlantRef::Full(sys) => {
                let mut dx = out.rows_mut(0, self.n_x);
                dx.gemv(1.0, &sys.a0, &x, 0.0);
                dx.gemv(1.0, &sys.b, &total, 1.0);
                for e in sys.quad.entries() {
                    dx[e.i as usize] += e.value * x[e.j as usize] * x[e.l as usize];
                }
            }
            PlantRef::Reduced(model) => {
                let mut dx = out.rows_mut(0, self.n_x);
                dx.gemv(1.0, &model.a_bar[0], &x, 0.0);
                dx.gemv(1.0, &model.b_bar, &total, 1.0);
                for i in 0..model.r {
                    dx.gemv(x[i], &model.a_bar[i + 1], &x, 1.0);
                }
            }
        }
        let mut dk = out.rows_mut(self.n_x, self.k_c);
        dk.gemv(1.0, &gain.ak, &xk, 0.0);
        dk.gemv(1.0, &gain.bk, &y, 1.0);
    }
}

fn accumulate(total: &mut OdeStats, part: &OdeStats) {
    total.steps += part.steps;
    total.rejected += part.rejected;
    total.rhs_evals += part.rhs_evals;
    total.jacobians += part.jacobians;
    total.factorizations += part.factorizations;
}

/// Simulates the plant under the scheduled controller over `t_span`, sampled
/// at `n_out` equispaced instants. The disturbance enters through the plant's
/// input channels on top of the control. Deterministic.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    plant: &PlantRef<'_>,
    model: &AffineLpvModel,
    w: &ParamPolytope,
    ctrl: &VertexControllerSet,
    disturbance: &SignalSpec,
    x0: &DVector<f64>,
    t_span: (f64, f64),
    n_out: usize,
    policy: ExitPolicy,
    opts: &OdeOptions,
) -> Result<ClosedLoopResult> {
    let n_x = plant.dim();
    let k_c = ctrl.k_c;
    let (p, q) = (plant.p(), plant.q());
    if x0.len() != n_x {
        return Err(Error::Dimension {
            context: "closed-loop initial state",
            expected: format!("length {n_x}"),
            found: format!("length {}", x0.len()),
        });
    }
    if ctrl.bk[0].ncols() != q || ctrl.ck[0].nrows() != p {
        return Err(Error::Dimension {
            context: "controller i/o",
            expected: format!("measures {q} outputs, drives {p} inputs"),
            found: format!(
                "measures {}, drives {}",
                ctrl.bk[0].ncols(),
                ctrl.ck[0].nrows()
            ),
        });
    }
    if w.r > model.r || w.r != ctrl.polytope.r {
        return Err(Error::Dimension {
            context: "scheduling polytope",
            expected: format!("dimension <= {} matching the controller's", model.r),
            found: format!("{} (controller {})", w.r, ctrl.polytope.r),
        });
    }
    if n_out < 2 || t_span.1 <= t_span.0 {
        return Err(Error::Dimension {
            context: "closed-loop sampling",
            expected: "n_out >= 2 over a forward time span".into(),
            found: format!("n_out = {n_out}, span = {t_span:?}"),
        });
    }
    signal_value(disturbance, t_span.0, p)?;

    let sched = Scheduler {
        w,
        ctrl,
        model_r: model.r,
        v_r: match plant {
            PlantRef::Full(_) => Some(&model.v_r),
            PlantRef::Reduced(_) => None,
        },
    };
    if let PlantRef::Full(sys) = plant {
        if model.v_r.nrows() != sys.n {
            return Err(Error::Dimension {
                context: "scheduling encoder",
                expected: format!("{} rows", sys.n),
                found: format!("{}", model.v_r.nrows()),
            });
        }
    }
    let rhs = CoupledRhs { plant, sched: &sched, disturbance, n_x, k_c };

    let dt = (t_span.1 - t_span.0) / (n_out - 1) as f64;
    let mut times = Vec::with_capacity(n_out);
    let mut states: Vec<DVector<f64>> = Vec::with_capacity(n_out);
    let mut exit_events: Vec<ExitEvent> = Vec::new();
    let mut stats = OdeStats::default();
    let mut violating = false;

    let mut z = DVector::zeros(n_x + k_c);
    z.rows_mut(0, n_x).copy_from(x0);

    for j in 0..n_out {
        let t = t_span.0 + dt * j as f64;
        if j > 0 {
            let sol = integrate_ode(&rhs, &z, (t - dt, t), 2, opts)?;
            accumulate(&mut stats, &sol.stats);
            z = sol.states.last().expect("two samples requested").clone();
        }
        times.push(t);
        states.push(z.clone());

        let x = z.rows(0, n_x).into_owned();
        let defect = sched.weights(&sched.rho_sched(&x))?.0;
        if defect > EXIT_TOL {
            match policy {
                ExitPolicy::HardError => {
                    exit_events.push(ExitEvent {
                        time: t,
                        magnitude: defect,
                        action: "hard_error".into(),
                    });
                    break;
                }
                ExitPolicy::Project => {
                    if violating {
                        let last = exit_events.last_mut().expect("open violation interval");
                        last.magnitude = last.magnitude.max(defect);
                    } else {
                        exit_events.push(ExitEvent {
                            time: t,
                            magnitude: defect,
                            action: "project".into(),
                        });
                        violating = true;
                    }
                }
            }
        } else {
            violating = false;
        }
    }

    // Per-sample resolution of the stored blocks.
    let cols = times.len();
    let mut plant_states = DMatrix::zeros(n_x, cols);
    let mut plant_inputs = DMatrix::zeros(p, cols);
    let mut ctrl_states = DMatrix::zeros(k_c, cols);
    let mut ctrl_outputs = DMatrix::zeros(p, cols);
    let mut ctrl_inputs = DMatrix::zeros(q, cols);
    let mut rho_traj = DMatrix::zeros(model.r, cols);
    for (j, z) in states.iter().enumerate() {
        let x = z.rows(0, n_x).into_owned();
        let xk = z.rows(n_x, k_c).into_owned();
        let y = plant.output(&x);
        let u = sched.control(&x, &xk, &y)?;
        let d = signal_value(disturbance, times[j], p)?;
        plant_states.set_column(j, &x);
        plant_inputs.set_column(j, &(&u + d));
        ctrl_states.set_column(j, &xk);
        ctrl_outputs.set_column(j, &u);
        ctrl_inputs.set_column(j, &y);
        rho_traj.set_column(j, &sched.rho_full(&x));
    }
    let plant_outputs = match plant {
        PlantRef::Full(sys) => &sys.c * &plant_states,
        PlantRef::Reduced(model) => &model.c_bar * &plant_states,
    };

    let metrics = output_metrics(&times, &plant_outputs, &plant_states);
    let meta = |role: &str| TrajectoryMeta {
        model: plant.name(),
        role: role.into(),
        method: opts.method,
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        stats,
        input: Some(disturbance.clone()),
    };
    let result = ClosedLoopResult {
        plant_traj: Trajectory {
            times: times.clone(),
            states: plant_states,
            outputs: plant_outputs,
            inputs: plant_inputs,
            meta: meta("closed_loop_plant"),
        },
        controller_traj: Trajectory {
            times,
            states: ctrl_states,
            outputs: ctrl_outputs,
            inputs: ctrl_inputs,
            meta: meta("closed_loop_controller"),
        },
        rho_traj,
        exit_events,
        metrics,
    };
    Ok(result)
}

fn output_metrics(times: &[f64], outputs: &DMatrix<f64>, states: &DMatrix<f64>) -> ClosedLoopMetrics {
    let cols = outputs.ncols();
    let norms: Vec<f64> = (0..cols).map(|j| outputs.column(j).norm()).collect();
    let max_output_norm = norms.iter().cloned().fold(0.0, f64::max);
    let final_output_norm = norms.last().copied().unwrap_or(0.0);
    let max_state_norm = (0..cols).map(|j| states.column(j).norm()).fold(0.0, f64::max);
    let settling = SETTLE_LEVELS
        .iter()
        .map(|&level| {
            // Earliest sample from which the norm never rises above level.
            let mut mark = None;
            for j in (0..cols).rev() {
                if norms[j] <= level {
                    mark = Some(times[j]);
                } else {
                    break;
                }
            }
            SettleMark { level, time: mark }
        })
        .collect();
    ClosedLoopMetrics { max_output_norm, final_output_norm, max_state_norm, settling }
}

/// Samples the output pair `(a, b)` at `n_points` equidistant instants
/// spanning the trajectory window, interpolating linearly between samples.
pub fn phase_portrait(
    traj: &Trajectory,
    pair: (usize, usize),
    n_points: usize,
) -> Result<Vec<(f64, f64)>> {
    let q = traj.outputs.nrows();
    for index in [pair.0, pair.1] {
        if index >= q {
            return Err(Error::IndexError { index, q });
        }
    }
    if traj.is_empty() || n_points == 0 {
        return Err(Error::Dimension {
            context: "phase portrait",
            expected: "a nonempty trajectory and n_points >= 1".into(),
            found: format!("{} samples, {n_points} points", traj.len()),
        });
    }
    let (t0, t1) = (traj.times[0], *traj.times.last().expect("nonempty"));
    let last = traj.len() - 1;
    let sample = |t: f64| -> (f64, f64) {
        // The grid is equispaced, so the bracket is a direct index.
        let pos = if t1 > t0 { (t - t0) / (t1 - t0) * last as f64 } else { 0.0 };
        let j0 = (pos.floor() as usize).min(last);
        let j1 = (j0 + 1).min(last);
        let w = pos - j0 as f64;
        let at = |row: usize| {
            (1.0 - w) * traj.outputs[(row, j0)] + w * traj.outputs[(row, j1)]
        };
        (at(pair.0), at(pair.1))
    };
    Ok((0..n_points)
        .map(|i| {
            let tau = if n_points == 1 { 0.0 } else { i as f64 / (n_points - 1) as f64 };
            sample(t0 + tau * (t1 - t0))
        })
        .collect())
}

/// Axis-aligned extent of a point set.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    fn of(points: &[(f64, f64)], axis: usize) -> AxisRange {
        let coord = |p: &(f64, f64)| if axis == 0 { p.0 } else { p.1 };
        AxisRange {
            min: points.iter().map(coord).fold(f64::INFINITY, f64::min),
            max: points.iter().map(coord).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Range coverage of a candidate portrait against a reference portrait:
/// pure bounding-box geometry, no pointwise comparison.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RangeReport {
    pub reference: [AxisRange; 2],
    pub candidate: [AxisRange; 2],
    /// Candidate extent over reference extent, per axis (1 when both
    /// degenerate).
    pub range_ratio: [f64; 2],
    /// Largest distance from a candidate bounding-box corner to the
    /// reference bounding box.
    pub corner_distance: f64,
}

/// Compares the axis ranges of two portraits. Both lists must be nonempty.
pub fn portrait_range_metrics(reference: &[(f64, f64)], candidate: &[(f64, f64)]) -> RangeReport {
    assert!(
        !reference.is_empty() && !candidate.is_empty(),
        "portrait range metrics need nonempty point lists"
    );
    let reference_r = [AxisRange::of(reference, 0), AxisRange::of(reference, 1)];
    let candidate_r = [AxisRange::of(candidate, 0), AxisRange::of(candidate, 1)];
    let ratio = |axis: usize| {
        let (r, c) = (reference_r[axis].span(), candidate_r[axis].span());
        if r == 0.0 && c == 0.0 {
            1.0
        } else {
            c / r
        }
    };
    let clamp = |v: f64, r: &AxisRange| v.max(r.min).min(r.max);
    let mut corner_distance = 0.0f64;
    for cx in [candidate_r[0].min, candidate_r[0].max] {
        for cy in [candidate_r[1].min, candidate_r[1].max] {
            let dx = cx - clamp(cx, &reference_r[0]);
            let dy = cy - clamp(cy, &reference_r[1]);
            corner_distance = corner_distance.max(dx.hypot(dy));
        }
    }
    RangeReport {
        reference: reference_r,
        candidate: candidate_r,
        range_ratio: [ratio(0), ratio(1)],
        corner_distance,
    }
}
