//! Deterministic test-input signals for trajectory generation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of an input signal. Amplitudes are per channel; a single amplitude
/// broadcasts to every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// Identically zero input.
    Zero,
    /// Constant `amplitude` from `t = 0` on.
    Step { amplitude: Vec<f64> },
    /// `amplitude * blend(t)` where the polynomial blend starts at 1, decays
    /// monotonically, and is identically zero from `t_fade` on. With
    /// `smoothness >= 2` (the default) the signal is continuously
    /// differentiable at the cut-off.
    Fading {
        amplitude: Vec<f64>,
        t_fade: f64,
        #[serde(default = "default_smoothness")]
        smoothness: u32,
    },
}

fn default_smoothness() -> u32 {
    2
}

impl SignalSpec {
    /// Fading signal with the default cut-off `t_fade = 2` and blend order 2.
    pub fn fading(amplitude: Vec<f64>) -> Self {
        SignalSpec::Fading { amplitude, t_fade: 2.0, smoothness: 2 }
    }

    /// Scalar blend factor of the fading kind; 1 for step, 0 for zero.
    pub fn blend(&self, t: f64) -> f64 {
        match self {
            SignalSpec::Zero => 0.0,
            SignalSpec::Step { .. } => 1.0,
            SignalSpec::Fading { t_fade, smoothness, .. } => {
                if t >= *t_fade {
                    0.0
                } else {
                    let tau = (t / t_fade).max(0.0);
                    (1.0 - tau).powi((*smoothness).max(2) as i32)
                }
            }
        }
    }
}

/// Evaluates the signal at time `t` for a `p`-channel input.
pub fn signal_value(spec: &SignalSpec, t: f64, p: usize) -> Result<DVector<f64>> {
    let amp = match spec {
        SignalSpec::Zero => return Ok(DVector::zeros(p)),
        SignalSpec::Step { amplitude } | SignalSpec::Fading { amplitude, .. } => amplitude,
    };
    let amp = broadcast(amp, p)?;
    Ok(amp * spec.blend(t))
}

fn broadcast(amplitude: &[f64], p: usize) -> Result<DVector<f64>> {
    if amplitude.len() == p {
        Ok(DVector::from_column_slice(amplitude))
    } else if amplitude.len() == 1 {
        Ok(DVector::from_element(p, amplitude[0]))
    } else {
        Err(Error::Dimension {
            context: "signal amplitude",
            expected: format!("1 or {p} channels"),
            found: format!("{} channels", amplitude.len()),
        })
    }
}
