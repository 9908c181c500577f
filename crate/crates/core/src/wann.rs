//! Data-driven load model: a delayed-input feedforward network in which only
//! the previous output cascades into the next neuron, together with its exact
//! discrete-time state-space realization.
//!
//! Two evaluation routes exist on purpose. [`narma_eval`] computes the output
//! directly from a delay history; [`realize_state_space`] builds an N-state
//! subsystem whose trajectory must match it step for step. The direct
//! evaluator is the oracle for the realization throughout the test suite.

use std::sync::Arc;

use crate::error::{require_positive, ModelError};
use crate::model::{OutputFn, StepFn, SubsystemModel};
use crate::signal::{Signal, SignalSet};

const EXP_CLAMP: f64 = 700.0;

/// Logistic gate used by the cascaded neuron: `1 / (1 + exp(-0.5 s + 10))`,
/// with the exponent saturated so solver probing cannot overflow.
fn gate(s: f64) -> f64 {
    1.0 / (1.0 + (-0.5 * s + 10.0).clamp(-EXP_CLAMP, EXP_CLAMP).exp())
}

/// Neuron activation families selectable by name in scenario files.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    /// `w * s1 + b` — reads only its first argument.
    Affine { weight: f64, bias: f64 },
    /// `w * s3 / (1 + exp(-0.5 s2 + 10))` — the input-weighted gate.
    WaterfallSigmoid { weight: f64 },
}

impl Activation {
    pub fn eval(&self, sigma: &[f64]) -> f64 {
        match self {
            Activation::Affine { weight, bias } => weight * sigma[0] + bias,
            Activation::WaterfallSigmoid { weight } => weight * sigma[2] * gate(sigma[1]),
        }
    }

    /// Number of arguments the activation actually reads.
    pub fn min_arity(&self) -> usize {
        match self {
            Activation::Affine { .. } => 1,
            Activation::WaterfallSigmoid { .. } => 3,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Activation::Affine { .. } => "affine",
            Activation::WaterfallSigmoid { .. } => "waterfall-sigmoid",
        }
    }

    /// Builds an activation from its scenario-file name and argument list.
    pub fn from_name(name: &str, args: &[f64]) -> Result<Self, ModelError> {
        match name {
            "affine" => {
                if args.len() != 2 {
                    return Err(ModelError::usage(format!(
                        "activation `affine` takes (weight, bias), got {} arguments",
                        args.len()
                    )));
                }
                Ok(Activation::Affine {
                    weight: args[0],
                    bias: args[1],
                })
            }
            "waterfall-sigmoid" => {
                if args.len() != 1 {
                    return Err(ModelError::usage(format!(
                        "activation `waterfall-sigmoid` takes (weight), got {} arguments",
                        args.len()
                    )));
                }
                Ok(Activation::WaterfallSigmoid { weight: args[0] })
            }
            other => Err(ModelError::usage(format!("unknown activation family `{other}`"))),
        }
    }

    fn weights_finite(&self) -> bool {
        match self {
            Activation::Affine { weight, bias } => weight.is_finite() && bias.is_finite(),
            Activation::WaterfallSigmoid { weight } => weight.is_finite(),
        }
    }
}

/// Network description: one activation per delay tap plus the shared
/// timestep. The neuron count N equals the number of delays.
#[derive(Debug, Clone, PartialEq)]
pub struct WannParams {
    pub activations: Vec<Activation>,
    pub dt: f64,
}

impl WannParams {
    pub fn new(activations: Vec<Activation>, dt: f64) -> Result<Self, ModelError> {
        let p = WannParams { activations, dt };
        p.validate()?;
        Ok(p)
    }

    /// The case-study network: three neurons, input in kW, output in °C.
    pub fn reference() -> Self {
        WannParams {
            activations: vec![
                Activation::Affine {
                    weight: 1.0,
                    bias: 2.2213e-4,
                },
                Activation::WaterfallSigmoid { weight: -9.7182e-6 },
                Activation::Affine {
                    weight: -1.1106e-6,
                    bias: 2.7766e-5,
                },
            ],
            dt: 0.001,
        }
    }

    pub fn delays(&self) -> usize {
        self.activations.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.activations.is_empty() {
            return Err(ModelError::config("wann.delays", "at least one neuron is required"));
        }
        require_positive("wann.dt", self.dt)?;
        for (i, a) in self.activations.iter().enumerate() {
            if !a.weights_finite() {
                return Err(ModelError::config(
                    format!("wann.activation_{}", i + 1),
                    "weights must be finite",
                ));
            }
        }
        // The first neuron only ever sees (y_{k-1}, u_{k-1}).
        if self.activations[0].min_arity() > 2 {
            return Err(ModelError::config(
                "wann.activation_1",
                "the first neuron receives two arguments and cannot use a three-argument family",
            ));
        }
        Ok(())
    }
}

/// Delay history: index 0 holds the most recent sample (k-1), index N-1 the
/// oldest (k-N). Outputs in °C, inputs in kW.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistory {
    pub past_outputs: Vec<f64>,
    pub past_inputs: Vec<f64>,
}

impl DelayHistory {
    pub fn new(past_outputs: Vec<f64>, past_inputs: Vec<f64>) -> Self {
        DelayHistory {
            past_outputs,
            past_inputs,
        }
    }

    pub fn constant(y: f64, u: f64, n: usize) -> Self {
        DelayHistory {
            past_outputs: vec![y; n],
            past_inputs: vec![u; n],
        }
    }

    fn check(&self, n: usize) -> Result<(), ModelError> {
        if self.past_outputs.len() != n || self.past_inputs.len() != n {
            return Err(ModelError::usage(format!(
                "delay history must hold {n} outputs and {n} inputs, got {} and {}",
                self.past_outputs.len(),
                self.past_inputs.len()
            )));
        }
        if self
            .past_outputs
            .iter()
            .chain(self.past_inputs.iter())
            .any(|v| !v.is_finite())
        {
            return Err(ModelError::usage("delay history must be finite"));
        }
        Ok(())
    }

    /// Pushes one (output, input) pair, dropping the oldest.
    pub fn push(&mut self, y: f64, u: f64) {
        self.past_outputs.rotate_right(1);
        self.past_outputs[0] = y;
        self.past_inputs.rotate_right(1);
        self.past_inputs[0] = u;
    }
}

/// Realized network state; the output is the first component.
#[derive(Debug, Clone, PartialEq)]
pub struct WannState {
    pub x: Vec<f64>,
}

impl WannState {
    pub fn output(&self) -> f64 {
        self.x[0]
    }
}

/// Evaluates neuron `n` (1-based) on an explicit argument vector. The first
/// neuron takes two arguments, all later ones three.
pub fn activation(p: &WannParams, n: usize, sigma: &[f64]) -> Result<f64, ModelError> {
    if n == 0 || n > p.delays() {
        return Err(ModelError::usage(format!(
            "neuron index {n} out of range 1..={}",
            p.delays()
        )));
    }
    let expected = if n == 1 { 2 } else { 3 };
    if sigma.len() != expected {
        return Err(ModelError::usage(format!(
            "neuron {n} takes {expected} arguments, got {}",
            sigma.len()
        )));
    }
    Ok(p.activations[n - 1].eval(sigma))
}

/// Direct evaluation: the next output as a sum of neuron contributions over
/// the delay history. Neuron n sees (y_{k-n}, y_{k-(n-1)}, u_{k-n}); the
/// first neuron sees (y_{k-1}, u_{k-1}).
pub fn narma_eval(p: &WannParams, h: &DelayHistory) -> Result<f64, ModelError> {
    let n = p.delays();
    h.check(n)?;
    let mut y = p.activations[0].eval(&[h.past_outputs[0], h.past_inputs[0]]);
    for m in 2..=n {
        let sigma = [
            h.past_outputs[m - 1],
            h.past_outputs[m - 2],
            h.past_inputs[m - 1],
        ];
        y += p.activations[m - 1].eval(&sigma);
    }
    Ok(y)
}

/// Builds the N-state realization:
///
/// ```text
/// x1_k = x2_{k-1} + phi1(x1_{k-1}, u_{k-1})
/// xi_k = x{i+1}_{k-1} + phi_i(x1_{k-1}, x2_{k-1} + phi1, u_{k-1})   (1 < i < N)
/// xN_k = phi_N(x1_{k-1}, x2_{k-1} + phi1, u_{k-1})
/// y    = x1
/// ```
pub fn realize_state_space(p: &WannParams) -> Result<SubsystemModel, ModelError> {
    p.validate()?;
    let n = p.delays();
    let mut states = Vec::with_capacity(n);
    states.push(Signal::state("x1", "°C"));
    for i in 2..=n {
        states.push(Signal::state(format!("x{i}"), "-"));
    }
    let controls = vec![Signal::control("u_DC", "kW")];
    let outputs = vec![Signal::output("y_DC", "°C")];

    let acts = p.activations.clone();
    let step: StepFn = Arc::new(move |x, u, _d, out| {
        let n = acts.len();
        let u0 = u[0];
        let phi1 = acts[0].eval(&[x[0], u0]);
        if n == 1 {
            out[0] = phi1;
            return;
        }
        let sigma = [x[0], x[1] + phi1, u0];
        out[0] = x[1] + phi1;
        for i in 1..n - 1 {
            out[i] = x[i + 1] + acts[i].eval(&sigma);
        }
        out[n - 1] = acts[n - 1].eval(&sigma);
    });
    let output: OutputFn = Arc::new(|x, out| out[0] = x[0]);

    SubsystemModel::new(
        "dc",
        SignalSet::new(states)?,
        SignalSet::new(controls)?,
        SignalSet::empty(),
        SignalSet::new(outputs)?,
        p.dt,
        step,
        output,
    )
}

/// Seeds the realized state from measured delay data.
///
/// Returns the state at the most recent history instant: stepping it with
/// the most recent recorded input (`past_inputs[0]`) reproduces the next
/// direct-evaluation output, and the trajectories agree from then on. Built
/// by unrolling the realization against the history.
pub fn init_from_history(p: &WannParams, h: &DelayHistory) -> Result<WannState, ModelError> {
    let n = p.delays();
    h.check(n)?;
    let mut x = vec![0.0; n];
    x[0] = h.past_outputs[0];
    for i in 2..=n {
        let mut acc = 0.0;
        for m in i..=n {
            let lag = m - i; // 0-based extra delay of neuron m's window
            let sigma = [
                h.past_outputs[lag + 1],
                h.past_outputs[lag],
                h.past_inputs[lag + 1],
            ];
            acc += p.activations[m - 1].eval(&sigma);
        }
        x[i - 1] = acc;
    }
    Ok(WannState { x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DiscreteSystem;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const B1: f64 = 2.2213e-4;
    const B2: f64 = 2.7766e-5;
    const W21: f64 = -9.7182e-6;

    #[test]
    fn first_neuron_ignores_second_argument() {
        let p = WannParams::reference();
        let v = activation(&p, 1, &[0.0, 99.0]).unwrap();
        assert_eq!(v, B1);
        assert_eq!(activation(&p, 1, &[0.0, -5.0]).unwrap(), v);
    }

    #[test]
    fn gate_midpoint_halves_the_weight() {
        let p = WannParams::reference();
        // exponent -0.5*20 + 10 = 0, so the gate is exactly 1/2
        let v = activation(&p, 2, &[123.0, 20.0, 7.0]).unwrap();
        assert_relative_eq!(v, W21 * 7.0 * 0.5, max_relative = 1e-15);
    }

    #[test]
    fn gate_saturates_to_zero() {
        let p = WannParams::reference();
        // the clamped exponent keeps this finite instead of overflowing
        let v = activation(&p, 2, &[0.0, -1e9, 5.0]).unwrap();
        assert!(v.is_finite());
        assert!(v.abs() < 1e-300, "gate should saturate, got {v}");
    }

    #[test]
    fn arity_mismatch_is_usage_error() {
        let p = WannParams::reference();
        assert!(activation(&p, 1, &[0.0, 0.0, 0.0]).is_err());
        assert!(activation(&p, 2, &[0.0, 0.0]).is_err());
        assert!(activation(&p, 4, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn all_zero_history_sums_the_biases() {
        let p = WannParams::reference();
        let y = narma_eval(&p, &DelayHistory::constant(0.0, 0.0, 3)).unwrap();
        assert_relative_eq!(y, B1 + B2, max_relative = 1e-15);
        assert_relative_eq!(y, 2.49896e-4, max_relative = 1e-12);
    }

    #[test]
    fn single_recent_output_feeds_first_and_second_neuron() {
        let p = WannParams::reference();
        let h = DelayHistory::new(vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]);
        // neuron 2 sees u_{k-2} = 0, so its product form vanishes
        let y = narma_eval(&p, &h).unwrap();
        assert_relative_eq!(y, 1.0 + B1 + B2, max_relative = 1e-12);
    }

    #[test]
    fn zero_input_history_kills_the_gated_neuron() {
        let p = WannParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ys: Vec<f64> = (0..3).map(|_| rng.gen_range(-50.0..150.0)).collect();
            let h0 = DelayHistory::new(ys.clone(), vec![0.0; 3]);
            let y0 = narma_eval(&p, &h0).unwrap();
            // only neuron 2 reads the input history
            let expected = p.activations[0].eval(&[ys[0], 0.0])
                + p.activations[2].eval(&[ys[2], ys[1], 0.0]);
            assert_relative_eq!(y0, expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn perturbations_touch_only_their_neuron() {
        let p = WannParams::reference();
        let base = DelayHistory::new(vec![20.0, 21.0, 22.0], vec![5.0, 6.0, 7.0]);
        let y0 = narma_eval(&p, &base).unwrap();

        // oldest output reaches only the affine third neuron
        let mut h = base.clone();
        h.past_outputs[2] += 1.0;
        let dy = narma_eval(&p, &h).unwrap() - y0;
        assert_relative_eq!(dy, -1.1106e-6, max_relative = 1e-9);

        // u_{k-2} reaches only the gated second neuron
        let mut h = base.clone();
        h.past_inputs[1] += 1.0;
        let dy = narma_eval(&p, &h).unwrap() - y0;
        let gate_at = 1.0 / (1.0 + (-0.5 * 20.0f64 + 10.0).exp());
        assert_relative_eq!(dy, W21 * gate_at, max_relative = 1e-9);

        // u_{k-1} and u_{k-3} reach no neuron at all
        let mut h = base.clone();
        h.past_inputs[0] += 123.0;
        h.past_inputs[2] -= 55.0;
        assert_eq!(narma_eval(&p, &h).unwrap(), y0);
    }

    #[test]
    fn realization_has_n_states_and_output_is_first_state() {
        let p = WannParams::reference();
        let m = realize_state_space(&p).unwrap();
        assert_eq!(m.state_dim(), 3);
        let x = [13.5, 0.2, -0.4];
        let mut y = [0.0];
        m.output_into(&x, &mut y);
        assert_eq!(y[0], 13.5);
    }

    #[test]
    fn one_step_from_rest_is_the_first_bias() {
        let p = WannParams::reference();
        let m = realize_state_space(&p).unwrap();
        let mut out = [0.0; 3];
        m.step_into(&[0.0; 3], &[0.0], &[], &mut out).unwrap();
        assert_eq!(out[0], B1);
    }

    /// Drives the direct evaluator and the realization with the same input
    /// stream. `inputs[0]` must be the most recent recorded input
    /// (`h.past_inputs[0]`): the realization consumes it for its first step,
    /// while the direct evaluator already carries it in the history and
    /// pushes the *following* input after each output.
    fn drive_both(
        p: &WannParams,
        h: &DelayHistory,
        inputs: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let m = realize_state_space(p).unwrap();
        let mut x = init_from_history(p, h).unwrap().x;
        let mut hist = h.clone();
        let mut direct = Vec::with_capacity(inputs.len());
        let mut realized = Vec::with_capacity(inputs.len());
        let mut out = vec![0.0; p.delays()];
        for (j, &u) in inputs.iter().enumerate() {
            let y_direct = narma_eval(p, &hist).unwrap();
            let u_next = inputs.get(j + 1).copied().unwrap_or(u);
            hist.push(y_direct, u_next);
            direct.push(y_direct);

            m.step_into(&x, &[u], &[], &mut out).unwrap();
            x.copy_from_slice(&out);
            realized.push(x[0]);
        }
        (direct, realized)
    }

    #[test]
    fn init_from_zero_history_matches_direct_next_output() {
        let p = WannParams::reference();
        let h = DelayHistory::constant(0.0, 0.0, 3);
        let (direct, realized) = drive_both(&p, &h, &[0.0]);
        assert_relative_eq!(direct[0], realized[0], epsilon = 1e-15);
    }

    #[test]
    fn constant_history_matches_over_n_steps() {
        let p = WannParams::reference();
        let h = DelayHistory::constant(17.5, 0.0, 3);
        let (direct, realized) = drive_both(&p, &h, &[0.0, 0.0, 0.0]);
        for (a, b) in direct.iter().zip(&realized) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_history_matches_over_fifty_steps() {
        let p = WannParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let h = DelayHistory::new(
                (0..3).map(|_| rng.gen_range(-30.0..120.0)).collect(),
                (0..3).map(|_| rng.gen_range(0.0..60.0)).collect(),
            );
            // continue the recorded input stream: most recent first
            let mut inputs = vec![h.past_inputs[0]];
            inputs.extend((0..49).map(|_| rng.gen_range(0.0..60.0)));
            let (direct, realized) = drive_both(&p, &h, &inputs);
            for (k, (a, b)) in direct.iter().zip(&realized).enumerate() {
                assert!((a - b).abs() < 1e-12, "step {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn thousand_step_equivalence() {
        let p = WannParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let h = DelayHistory::new(
            (0..3).map(|_| rng.gen_range(0.0..40.0)).collect(),
            (0..3).map(|_| rng.gen_range(0.0..40.0)).collect(),
        );
        let mut inputs = vec![h.past_inputs[0]];
        inputs.extend((0..999).map(|_| rng.gen_range(0.0..40.0)));
        let (direct, realized) = drive_both(&p, &h, &inputs);
        let max_dev = direct
            .iter()
            .zip(&realized)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-12, "max deviation {max_dev}");
    }

    proptest! {
        #[test]
        fn realization_equivalence_property(
            seed in 0u64..10_000,
            y0 in -50.0f64..150.0,
            u_scale in 0.0f64..80.0,
        ) {
            let p = WannParams::reference();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = DelayHistory::new(
                (0..3).map(|_| y0 + rng.gen_range(-5.0..5.0)).collect(),
                (0..3).map(|_| rng.gen_range(0.0..=u_scale.max(1e-9))).collect(),
            );
            let mut inputs = vec![h.past_inputs[0]];
            inputs.extend((0..200).map(|_| rng.gen_range(0.0..=u_scale.max(1e-9))));
            let (direct, realized) = drive_both(&p, &h, &inputs);
            for (a, b) in direct.iter().zip(&realized) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
