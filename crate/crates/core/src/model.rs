//! Common discrete-time state-space abstraction.
//!
//! A [`SubsystemModel`] is a map `x_k = step(x_{k-1}, u_{k-1}, d_{k-1})`
//! together with its signal declarations and timestep. Continuous models are
//! turned into this form with [`discretize_euler`]; data-driven models can be
//! constructed directly. Models are immutable after construction and safe to
//! evaluate concurrently.

use std::sync::Arc;

use crate::error::{require_positive, ModelError};
use crate::signal::{SignalSet, StateVector};

/// `(x, u, d, out)` — writes the next state (or the derivative) into `out`.
pub type StepFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// `(x, out)` — writes the outputs for the current state into `out`.
pub type OutputFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Anything that can be stepped like a discrete-time state-space system.
///
/// `step_into` returns `Err(i)` when state `i` came out non-finite; wrappers
/// translate that into a named divergence signal.
pub trait DiscreteSystem: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    fn step_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) -> Result<(), usize>;
    fn state_name(&self, i: usize) -> String;
    fn control_name(&self, i: usize) -> String;
    fn disturbance_name(&self, i: usize) -> String;
    fn dt(&self) -> f64;
}

fn first_non_finite(values: &[f64]) -> Result<(), usize> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(i),
        None => Ok(()),
    }
}

/// A discrete-time subsystem: `x_k = step(x_{k-1}, u_{k-1}, d_{k-1})`,
/// `y = output_map(x)`.
#[derive(Clone)]
pub struct SubsystemModel {
    id: String,
    states: Arc<SignalSet>,
    controls: Arc<SignalSet>,
    disturbances: Arc<SignalSet>,
    outputs: Arc<SignalSet>,
    dt: f64,
    step: StepFn,
    output_map: OutputFn,
}

impl SubsystemModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        states: SignalSet,
        controls: SignalSet,
        disturbances: SignalSet,
        outputs: SignalSet,
        dt: f64,
        step: StepFn,
        output_map: OutputFn,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        require_positive(&format!("{id}.dt"), dt)?;
        Ok(SubsystemModel {
            id,
            states: Arc::new(states),
            controls: Arc::new(controls),
            disturbances: Arc::new(disturbances),
            outputs: Arc::new(outputs),
            dt,
            step,
            output_map,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn states(&self) -> &Arc<SignalSet> {
        &self.states
    }

    pub fn controls(&self) -> &Arc<SignalSet> {
        &self.controls
    }

    pub fn disturbances(&self) -> &Arc<SignalSet> {
        &self.disturbances
    }

    pub fn outputs(&self) -> &Arc<SignalSet> {
        &self.outputs
    }

    /// Evaluates the outputs for a raw state slice.
    pub fn output_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.states.len());
        debug_assert_eq!(out.len(), self.outputs.len());
        (self.output_map)(x, out);
    }

    /// Checked single step working on named vectors. Dimension mismatches are
    /// usage errors; a non-finite result is reported as a divergence signal
    /// carrying the offending state name.
    pub fn eval_step(
        &self,
        x: &StateVector,
        u: &[f64],
        d: &[f64],
    ) -> Result<StateVector, ModelError> {
        if x.len() != self.states.len() {
            return Err(ModelError::usage(format!(
                "model `{}` expects {} states, got {}",
                self.id,
                self.states.len(),
                x.len()
            )));
        }
        if u.len() != self.controls.len() {
            return Err(ModelError::usage(format!(
                "model `{}` expects {} control inputs, got {}",
                self.id,
                self.controls.len(),
                u.len()
            )));
        }
        if d.len() != self.disturbances.len() {
            return Err(ModelError::usage(format!(
                "model `{}` expects {} disturbance inputs, got {}",
                self.id,
                self.disturbances.len(),
                d.len()
            )));
        }
        let mut out = vec![0.0; x.len()];
        (self.step)(x.values(), u, d, &mut out);
        if let Err(i) = first_non_finite(&out) {
            return Err(ModelError::Divergence {
                signal: self.states.get(i).name().to_string(),
            });
        }
        StateVector::new(Arc::clone(x.signals()), out)
    }
}

impl std::fmt::Debug for SubsystemModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubsystemModel")
            .field("id", &self.id)
            .field("states", &self.states.len())
            .field("controls", &self.controls.len())
            .field("disturbances", &self.disturbances.len())
            .field("dt", &self.dt)
            .finish()
    }
}

impl DiscreteSystem for SubsystemModel {
    fn state_dim(&self) -> usize {
        self.states.len()
    }

    fn control_dim(&self) -> usize {
        self.controls.len()
    }

    fn disturbance_dim(&self) -> usize {
        self.disturbances.len()
    }

    fn step_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) -> Result<(), usize> {
        (self.step)(x, u, d, out);
        first_non_finite(out)
    }

    fn state_name(&self, i: usize) -> String {
        self.states.get(i).name().to_string()
    }

    fn control_name(&self, i: usize) -> String {
        self.controls.get(i).name().to_string()
    }

    fn disturbance_name(&self, i: usize) -> String {
        self.disturbances.get(i).name().to_string()
    }

    fn dt(&self) -> f64 {
        self.dt
    }
}

/// A continuous-time model `ẋ = derivative(x, u, d)` with the same signal
/// declarations as a subsystem.
#[derive(Clone)]
pub struct ContinuousModel {
    id: String,
    states: SignalSet,
    controls: SignalSet,
    disturbances: SignalSet,
    outputs: SignalSet,
    derivative: StepFn,
    output_map: OutputFn,
}

impl ContinuousModel {
    pub fn new(
        id: impl Into<String>,
        states: SignalSet,
        controls: SignalSet,
        disturbances: SignalSet,
        derivative: StepFn,
    ) -> Self {
        ContinuousModel {
            id: id.into(),
            states,
            controls,
            disturbances,
            outputs: SignalSet::empty(),
            derivative,
            output_map: Arc::new(|_x, _out| {}),
        }
    }

    pub fn with_outputs(mut self, outputs: SignalSet, output_map: OutputFn) -> Self {
        self.outputs = outputs;
        self.output_map = output_map;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state_dim(&self) -> usize {
        self.states.len()
    }

    pub fn derivative_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        (self.derivative)(x, u, d, out);
    }
}

impl std::fmt::Debug for ContinuousModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuousModel")
            .field("id", &self.id)
            .field("states", &self.states.len())
            .finish()
    }
}

/// Forward-Euler discretization: the returned step computes exactly
/// `x + dt * derivative(x, u, d)` — the same formula, not an approximation
/// of it. Signal declarations are carried over unchanged.
pub fn discretize_euler(model: &ContinuousModel, dt: f64) -> Result<SubsystemModel, ModelError> {
    require_positive(&format!("{}.dt", model.id()), dt)?;
    let derivative = Arc::clone(&model.derivative);
    let step: StepFn = Arc::new(move |x, u, d, out| {
        derivative(x, u, d, out);
        for (o, xi) in out.iter_mut().zip(x.iter()) {
            *o = xi + dt * *o;
        }
    });
    SubsystemModel::new(
        model.id.clone(),
        model.states.clone(),
        model.controls.clone(),
        model.disturbances.clone(),
        model.outputs.clone(),
        dt,
        step,
        Arc::clone(&model.output_map),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Signal;
    use proptest::prelude::*;

    fn scalar_continuous(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ContinuousModel {
        ContinuousModel::new(
            "test",
            SignalSet::new(vec![Signal::state("x", "-")]).unwrap(),
            SignalSet::empty(),
            SignalSet::empty(),
            Arc::new(move |x, _u, _d, out| out[0] = f(x[0])),
        )
    }

    #[test]
    fn zero_derivative_is_fixed_point() {
        let m = discretize_euler(&scalar_continuous(|_| 0.0), 0.5).unwrap();
        let x = StateVector::new(Arc::clone(m.states()), vec![3.25]).unwrap();
        let next = m.eval_step(&x, &[], &[]).unwrap();
        assert_eq!(next.values(), &[3.25]);
    }

    #[test]
    fn single_euler_step_of_decay() {
        let m = discretize_euler(&scalar_continuous(|x| -x), 0.001).unwrap();
        let x = StateVector::new(Arc::clone(m.states()), vec![1.0]).unwrap();
        let next = m.eval_step(&x, &[], &[]).unwrap();
        assert_eq!(next.values()[0], 0.999);
    }

    #[test]
    fn non_positive_dt_is_config_error() {
        let err = discretize_euler(&scalar_continuous(|x| x), 0.0).unwrap_err();
        assert!(matches!(err, ModelError::Config { .. }));
    }

    #[test]
    fn doubling_map() {
        let states = SignalSet::new(vec![Signal::state("x", "-")]).unwrap();
        let m = SubsystemModel::new(
            "double",
            states,
            SignalSet::empty(),
            SignalSet::empty(),
            SignalSet::empty(),
            1.0,
            Arc::new(|x, _u, _d, out| out[0] = 2.0 * x[0]),
            Arc::new(|_x, _out| {}),
        )
        .unwrap();
        let x = StateVector::new(Arc::clone(m.states()), vec![1.0]).unwrap();
        assert_eq!(m.eval_step(&x, &[], &[]).unwrap().values(), &[2.0]);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let m = discretize_euler(&scalar_continuous(|x| x), 0.1).unwrap();
        let x = StateVector::new(Arc::clone(m.states()), vec![1.0]).unwrap();
        assert!(matches!(
            m.eval_step(&x, &[1.0], &[]),
            Err(ModelError::Usage(_))
        ));
    }

    #[test]
    fn non_finite_step_is_divergence_with_signal_name() {
        let states = SignalSet::new(vec![Signal::state("p", "-"), Signal::state("q", "-")]).unwrap();
        let m = SubsystemModel::new(
            "nan",
            states,
            SignalSet::empty(),
            SignalSet::empty(),
            SignalSet::empty(),
            1.0,
            Arc::new(|x, _u, _d, out| {
                out[0] = x[0];
                out[1] = f64::INFINITY;
            }),
            Arc::new(|_x, _out| {}),
        )
        .unwrap();
        let x = StateVector::new(Arc::clone(m.states()), vec![1.0, 2.0]).unwrap();
        let err = m.eval_step(&x, &[], &[]).unwrap_err();
        assert_eq!(err, ModelError::Divergence { signal: "q".into() });
    }

    #[test]
    fn eval_step_is_bit_deterministic() {
        let m = discretize_euler(&scalar_continuous(|x| x.sin() * x.exp()), 0.001).unwrap();
        let x = StateVector::new(Arc::clone(m.states()), vec![0.731]).unwrap();
        let a = m.eval_step(&x, &[], &[]).unwrap();
        let b = m.eval_step(&x, &[], &[]).unwrap();
        assert_eq!(a.values()[0].to_bits(), b.values()[0].to_bits());
    }

    proptest! {
        // Euler consistency: the discretized step equals x + dt*f(x) exactly,
        // for a family of polynomial derivatives.
        #[test]
        fn euler_consistency(
            x0 in -1e3f64..1e3,
            c0 in -10.0f64..10.0,
            c1 in -10.0f64..10.0,
            c2 in -1.0f64..1.0,
            dt in 1e-6f64..1.0,
        ) {
            let m = discretize_euler(
                &scalar_continuous(move |x| c0 + c1 * x + c2 * x * x),
                dt,
            ).unwrap();
            let mut out = [0.0];
            m.step_into(&[x0], &[], &[], &mut out).ok();
            let expected = x0 + dt * (c0 + c1 * x0 + c2 * x0 * x0);
            prop_assert_eq!(out[0].to_bits(), expected.to_bits());
        }
    }
}
