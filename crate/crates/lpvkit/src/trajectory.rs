//! Sampled trajectories of forced systems.
//!
//! A [`Trajectory`] holds states, outputs and applied inputs on an
//! equispaced time grid together with provenance metadata. Outputs are
//! always recomputed from the stored states with the model's output matrix,
//! so the three blocks stay consistent by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{integrate_ode, OdeMethod, OdeOptions, OdeRhs, OdeStats};
use crate::sdc::QuadraticSystem;
use crate::signal::{signal_value, SignalSpec};

/// Provenance of a sampled trajectory, written next to CSV artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub role: String,
    pub method: OdeMethod,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub stats: OdeStats,
    pub input: Option<SignalSpec>,
}

/// States, outputs and inputs sampled on an equispaced grid (one column per
/// instant).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    /// Assembles a trajectory from integrator samples. Outputs are
    /// `output_map * state`; inputs are re-evaluated per instant.
    pub fn from_samples(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        output_map: &DMatrix<f64>,
        mut input_at: impl FnMut(f64, &DVector<f64>) -> DVector<f64>,
        input_dim: usize,
        meta: TrajectoryMeta,
    ) -> Result<Self> {
        let cols = times.len();
        if states.len() != cols || cols == 0 {
            return Err(Error::Dimension {
                context: "trajectory assembly",
                expected: format!("{cols} state columns"),
                found: format!("{}", states.len()),
            });
        }
        let n = states[0].len();
        let mut state_mat = DMatrix::zeros(n, cols);
        let mut input_mat = DMatrix::zeros(input_dim, cols);
        for (j, x) in states.iter().enumerate() {
            state_mat.set_column(j, x);
            input_mat.set_column(j, &input_at(times[j], x));
        }
        let outputs = output_map * &state_mat;
        Ok(Self {
            times,
            states: state_mat,
            outputs,
            inputs: input_mat,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Source of the applied input during integration: an open-loop signal or a
/// state-feedback closure evaluated at each right-hand-side call.
pub enum InputSource<'a> {
    Signal(&'a SignalSpec),
    Feedback(&'a dyn Fn(f64, &DVector<f64>) -> DVector<f64>),
}

struct ForcedQuadratic<'a> {
    sys: &'a QuadraticSystem,
    input: &'a InputSource<'a>,
}

impl ForcedQuadratic<'_> {
    fn input_at(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match self.input {
            InputSource::Signal(spec) => {
                signal_value(spec, t, self.sys.p).expect("validated amplitude")
            }
            InputSource::Feedback(f) => f(t, x),
        }
    }
}

impl OdeRhs for ForcedQuadratic<'_> {
    fn dim(&self) -> usize {
        self.sys.n
    }

    fn eval(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        let u = self.input_at(t, x);
        out.gemv(1.0, &self.sys.a0, x, 0.0);
        out.gemv(1.0, &self.sys.b, &u, 1.0);
        for e in self.sys.quad.entries() {
            out[e.i as usize] += e.value * x[e.j as usize] * x[e.l as usize];
        }
    }

    fn jacobian(&self, t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        // Exact for open-loop signals; feedback terms fall back to the
        // quadratic part only, which the modified Newton tolerates.
        let _ = t;
        out.copy_from(&self.sys.a0);
        *out += self.sys.quad.coefficient_matrix(x);
        *out += self.sys.quad.state_contraction(x);
    }
}

/// Integrates a forced quadratic system and samples it on `n_out` equispaced
/// instants spanning `t_span` (endpoints included).
pub fn integrate(
    sys: &QuadraticSystem,
    x0: &DVector<f64>,
    input: InputSource<'_>,
    t_span: (f64, f64),
    n_out: usize,
    opts: &OdeOptions,
) -> Result<Trajectory> {
    if let InputSource::Signal(spec) = &input {
        // Validate amplitude broadcasting once, before the solver loop.
        signal_value(spec, t_span.0, sys.p)?;
    }
    let rhs = ForcedQuadratic { sys, input: &input };
    let sol = integrate_ode(&rhs, x0, t_span, n_out, opts)?;
    let meta = TrajectoryMeta {
        model: sys.name.clone(),
        role: "open_loop".into(),
        method: opts.method,
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        stats: sol.stats,
        input: match &input {
            InputSource::Signal(s) => Some((*s).clone()),
            InputSource::Feedback(_) => None,
        },
    };
    Trajectory::from_samples(
        sol.times,
        sol.states,
        &sys.c,
        |t, x| rhs.input_at(t, x),
        sys.p,
        meta,
    )
}

/// Stacks the state columns of one or more trajectories into a snapshot
/// matrix (states must share the dimension).
pub fn snapshot_matrix(trajs: &[&Trajectory]) -> Result<DMatrix<f64>> {
    if trajs.is_empty() {
        return Err(Error::Dimension {
            context: "snapshot matrix",
            expected: "at least one trajectory".into(),
            found: "0".into(),
        });
    }
    let n = trajs[0].states.nrows();
    let total: usize = trajs.iter().map(|t| t.states.ncols()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut col = 0;
    for t in trajs {
        if t.states.nrows() != n {
            return Err(Error::Dimension {
                context: "snapshot matrix",
                expected: format!("{n} state rows"),
                found: format!("{}", t.states.nrows()),
            });
        }
        out.view_mut((0, col), (n, t.states.ncols()))
            .copy_from(&t.states);
        col += t.states.ncols();
    }
    Ok(out)
}
