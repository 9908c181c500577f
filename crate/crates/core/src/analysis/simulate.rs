//! Trajectory recording for the coupled system, including the reconstructed
//! coupling values at every step.

use crate::coupling::CoupledSystem;
use crate::error::ModelError;
use crate::model::DiscreteSystem;

/// Input source for one simulated signal vector.
#[derive(Debug, Clone)]
pub enum InputSeq {
    Constant(Vec<f64>),
    /// One vector per step; the last entry repeats if the run is longer.
    PerStep(Vec<Vec<f64>>),
}

impl InputSeq {
    fn at(&self, k: usize) -> &[f64] {
        match self {
            InputSeq::Constant(v) => v,
            InputSeq::PerStep(rows) => {
                let i = k.min(rows.len().saturating_sub(1));
                &rows[i]
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            InputSeq::Constant(v) => v.len(),
            InputSeq::PerStep(rows) => rows.first().map(|r| r.len()).unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DivergenceInfo {
    /// Step index at which the state went non-finite.
    pub step: usize,
    pub signal: String,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Row k is the state at step k; row 0 is the initial state.
    pub states: Vec<Vec<f64>>,
    /// Row k holds the coupling values evaluated at state row k (term
    /// declaration order).
    pub couplings: Vec<Vec<f64>>,
    pub diverged: Option<DivergenceInfo>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has an initial row")
    }
}

/// Iterates the coupled step for `steps` steps, recording every state and
/// the coupling values seen along the way. A divergence truncates the
/// trajectory and is flagged, not raised.
pub fn simulate(
    sys: &CoupledSystem,
    x0: &[f64],
    u: &InputSeq,
    d: &InputSeq,
    steps: usize,
) -> Result<Trajectory, ModelError> {
    if steps == 0 {
        return Err(ModelError::usage("simulate needs at least one step"));
    }
    if x0.len() != sys.state_dim() {
        return Err(ModelError::usage(format!(
            "initial state has {} entries, system has {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    if u.dim() != sys.control_dim() || d.dim() != sys.disturbance_dim() {
        return Err(ModelError::usage(format!(
            "input dims ({}, {}) do not match the system ({}, {})",
            u.dim(),
            d.dim(),
            sys.control_dim(),
            sys.disturbance_dim()
        )));
    }

    let n_terms = sys.coupling_names().len();
    let mut env = sys.scratch();
    let mut states = Vec::with_capacity(steps + 1);
    let mut couplings = Vec::with_capacity(steps + 1);

    let mut x = x0.to_vec();
    let mut cvals = vec![0.0; n_terms];
    sys.coupling_values_into(&x, u.at(0), d.at(0), &mut cvals, &mut env);
    states.push(x.clone());
    couplings.push(cvals.clone());

    let mut next = vec![0.0; x.len()];
    let mut diverged = None;
    for k in 0..steps {
        match sys.step_buffered(&x, u.at(k), d.at(k), &mut next, &mut env) {
            Ok(()) => {}
            Err(i) => {
                diverged = Some(DivergenceInfo {
                    step: k + 1,
                    signal: sys.state_name(i),
                });
                break;
            }
        }
        std::mem::swap(&mut x, &mut next);
        let k_next = k + 1;
        sys.coupling_values_into(&x, u.at(k_next), d.at(k_next), &mut cvals, &mut env);
        states.push(x.clone());
        couplings.push(cvals.clone());
    }

    Ok(Trajectory {
        states,
        couplings,
        diverged,
        dt: sys.dt(),
    })
}
