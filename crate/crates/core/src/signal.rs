//! Signal naming and ordered state vectors.
//!
//! Every subsystem declares its signals (states, controls, disturbances,
//! outputs) as named, unit-carrying entries. Vectors are always stored in
//! declaration order so that Jacobians, eigenvector components and report
//! rows stay reproducible across runs.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalRole {
    State,
    Control,
    Disturbance,
    Output,
}

impl SignalRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignalRole::State => "state",
            SignalRole::Control => "control",
            SignalRole::Disturbance => "disturbance",
            SignalRole::Output => "output",
        }
    }
}

/// A named scalar signal. The role is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    name: String,
    role: SignalRole,
    unit: String,
}

impl Signal {
    pub fn new(name: impl Into<String>, role: SignalRole, unit: impl Into<String>) -> Self {
        Signal {
            name: name.into(),
            role,
            unit: unit.into(),
        }
    }

    pub fn state(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Signal::new(name, SignalRole::State, unit)
    }

    pub fn control(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Signal::new(name, SignalRole::Control, unit)
    }

    pub fn disturbance(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Signal::new(name, SignalRole::Disturbance, unit)
    }

    pub fn output(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Signal::new(name, SignalRole::Output, unit)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> SignalRole {
        self.role
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }
}

/// An ordered collection of signals of one role with name lookup.
#[derive(Debug, Clone)]
pub struct SignalSet {
    signals: Vec<Signal>,
    index: HashMap<String, usize>,
}

impl SignalSet {
    /// All signals must share the same role and names must be unique.
    pub fn new(signals: Vec<Signal>) -> Result<Self, ModelError> {
        let mut index = HashMap::with_capacity(signals.len());
        for (i, s) in signals.iter().enumerate() {
            if let Some(first) = signals.first() {
                if s.role() != first.role() {
                    return Err(ModelError::usage(format!(
                        "signal `{}` has role {} but the set is {}",
                        s.name(),
                        s.role().as_str(),
                        first.role().as_str()
                    )));
                }
            }
            if index.insert(s.name().to_string(), i).is_some() {
                return Err(ModelError::config(
                    s.name(),
                    format!("duplicate {} signal name", s.role().as_str()),
                ));
            }
        }
        Ok(SignalSet { signals, index })
    }

    pub fn empty() -> Self {
        SignalSet {
            signals: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn get(&self, i: usize) -> &Signal {
        &self.signals[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Signal> {
        self.signals.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.signals.iter().map(|s| s.name().to_string()).collect()
    }

    pub fn units(&self) -> Vec<String> {
        self.signals.iter().map(|s| s.unit().to_string()).collect()
    }
}

/// A state vector tied to a signal set. Construction rejects dimension
/// mismatches and non-finite entries, naming the offending signal.
#[derive(Debug, Clone)]
pub struct StateVector {
    set: Arc<SignalSet>,
    values: Vec<f64>,
}

impl StateVector {
    pub fn new(set: Arc<SignalSet>, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != set.len() {
            return Err(ModelError::usage(format!(
                "state vector has {} values but {} state signals are declared",
                values.len(),
                set.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::Divergence {
                signal: set.get(i).name().to_string(),
            });
        }
        Ok(StateVector { set, values })
    }

    pub fn signals(&self) -> &Arc<SignalSet> {
        &self.set
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.set.position(name).map(|i| self.values[i])
    }

    pub fn set_value(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        if !value.is_finite() {
            return Err(ModelError::Divergence {
                signal: name.to_string(),
            });
        }
        match self.set.position(name) {
            Some(i) => {
                self.values[i] = value;
                Ok(())
            }
            None => Err(ModelError::usage(format!("unknown state signal `{name}`"))),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> Arc<SignalSet> {
        Arc::new(
            SignalSet::new(vec![Signal::state("a", "V"), Signal::state("b", "A")]).unwrap(),
        )
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = SignalSet::new(vec![Signal::state("a", "V"), Signal::state("a", "A")]);
        assert!(matches!(err, Err(ModelError::Config { .. })));
    }

    #[test]
    fn rejects_non_finite_values() {
        let err = StateVector::new(set(), vec![1.0, f64::NAN]).unwrap_err();
        assert_eq!(
            err,
            ModelError::Divergence {
                signal: "b".into()
            }
        );
    }

    #[test]
    fn rejects_dimension_mismatch() {
        assert!(StateVector::new(set(), vec![1.0]).is_err());
    }

    #[test]
    fn index_round_trip() {
        let mut x = StateVector::new(set(), vec![1.5, -2.5]).unwrap();
        x.set_value("b", 7.25).unwrap();
        assert_eq!(x.value("b"), Some(7.25));
        assert_eq!(x.value("a"), Some(1.5));
        assert_eq!(x.values(), &[1.5, 7.25]);
    }
}
