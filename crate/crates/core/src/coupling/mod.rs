//! Coupling terms, their validation rules, and composition of subsystem
//! models into one coupled discrete-time system.
//!
//! A coupling term assigns one subsystem input from an expression over
//! another subsystem's signals. Four rules keep the composed system
//! analyzable:
//!
//! 1. a term may draw on at most one subsystem besides the receiver's,
//! 2. the left side is a single input signal of the receiving subsystem,
//! 3. no input receives more than once,
//! 4. no input may depend on itself, directly or through other terms.
//!
//! Rule 4 guarantees the terms form a DAG, so composition substitutes them
//! in dependency order and each step stays an explicit update — no algebraic
//! loop ever needs solving.

mod expr;

pub use expr::{parse_expression, BinOp, Expr};

use std::collections::HashMap;
use std::fmt;

use crate::error::{require_positive, ModelError};
use crate::model::{DiscreteSystem, SubsystemModel};
use crate::signal::SignalRole;

use expr::Node;

/// One coupling assignment: `receiver := unit_scale * expression`.
///
/// `unit_scale` is the explicit unit adapter between the expression's
/// natural unit and the receiver's declared unit (the case study maps watts
/// onto a kilowatt input with `@ scale 1e-3`).
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTerm {
    pub receiver_subsystem: String,
    pub receiver_signal: String,
    pub expression: Expr,
    pub unit_scale: f64,
    pub source: String,
}

impl CouplingTerm {
    pub fn new(
        receiver_subsystem: impl Into<String>,
        receiver_signal: impl Into<String>,
        expression: Expr,
    ) -> Self {
        let receiver_subsystem = receiver_subsystem.into();
        let receiver_signal = receiver_signal.into();
        let source = format!("{receiver_subsystem}.{receiver_signal} = <expr>");
        CouplingTerm {
            receiver_subsystem,
            receiver_signal,
            expression,
            unit_scale: 1.0,
            source,
        }
    }

    pub fn with_unit_scale(mut self, scale: f64) -> Self {
        self.unit_scale = scale;
        self
    }

    pub fn receiver(&self) -> String {
        format!("{}.{}", self.receiver_subsystem, self.receiver_signal)
    }

    /// Parses `subsystem.signal = expression [@ scale <number>]`.
    pub fn parse(line: &str) -> Result<Self, ModelError> {
        let eq = line.find('=').ok_or_else(|| ModelError::Parse {
            line: 1,
            column: 1,
            message: "coupling term must have the form `subsystem.signal = expression`".into(),
        })?;
        let (lhs, rest) = line.split_at(eq);
        let rhs_full = &rest[1..];

        let recv = lhs.trim();
        let mut parts = recv.split('.');
        let (sub, sig) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(g), None) if !s.is_empty() && !g.is_empty() => (s, g),
            _ => {
                return Err(ModelError::Parse {
                    line: 1,
                    column: 1,
                    message: format!("receiver `{recv}` must be written as `subsystem.signal`"),
                })
            }
        };

        let (expr_src, scale) = match rhs_full.find('@') {
            Some(at) => {
                let tail = rhs_full[at + 1..].trim();
                let scale_val = match tail.strip_prefix("scale") {
                    Some(num) => num.trim().parse::<f64>().map_err(|_| ModelError::Parse {
                        line: 1,
                        column: eq + 2 + at,
                        message: format!("invalid scale `{}`", num.trim()),
                    })?,
                    None => {
                        return Err(ModelError::Parse {
                            line: 1,
                            column: eq + 2 + at,
                            message: "expected `@ scale <number>`".into(),
                        })
                    }
                };
                (&rhs_full[..at], scale_val)
            }
            None => (rhs_full, 1.0),
        };

        let expression = parse_expression(expr_src.trim()).map_err(|e| match e {
            ModelError::Parse { column, message, .. } => ModelError::Parse {
                line: 1,
                column: eq + 1
                    + (expr_src.len() - expr_src.trim_start().len())
                    + column,
                message,
            },
            other => other,
        })?;

        Ok(CouplingTerm {
            receiver_subsystem: sub.to_string(),
            receiver_signal: sig.to_string(),
            expression,
            unit_scale: scale,
            source: line.trim().to_string(),
        })
    }
}

fn interp_table(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        let slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        return ys[0] + slope * (x - xs[0]);
    }
    if x >= xs[n - 1] {
        let slope = (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2]);
        return ys[n - 1] + slope * (x - xs[n - 1]);
    }
    let k = xs.partition_point(|&p| p <= x) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

/// Temperature-dependent inverse impedance (1/Ω) used by the loss-current
/// term. The linear family `H0 * (1 + gamma * (T - T_ref))` is the default;
/// a breakpoint table or a custom expression in `T` can replace it.
#[derive(Debug, Clone, PartialEq)]
pub enum HFamily {
    Linear { h0: f64, t_ref: f64, gamma: f64 },
    Table { t: Vec<f64>, h: Vec<f64> },
    Expression { expr: Expr },
}

impl Default for HFamily {
    fn default() -> Self {
        HFamily::Linear {
            h0: 1.02e-4,
            t_ref: 20.0,
            gamma: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingParams {
    /// Coefficient of performance of the cooling path.
    pub cop: f64,
    /// Effective load resistance, ohms.
    pub r_dc: f64,
    pub h: HFamily,
}

impl Default for CouplingParams {
    fn default() -> Self {
        CouplingParams {
            cop: 3.5,
            r_dc: 3.7,
            h: HFamily::default(),
        }
    }
}

impl CouplingParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        require_positive("coupling.cop", self.cop)?;
        require_positive("coupling.r_dc_ohm", self.r_dc)?;
        match &self.h {
            HFamily::Linear { h0, t_ref, gamma } => {
                if !h0.is_finite() || !t_ref.is_finite() || !gamma.is_finite() {
                    return Err(ModelError::config("coupling.h", "parameters must be finite"));
                }
            }
            HFamily::Table { t, h } => {
                if t.len() < 2 || t.len() != h.len() {
                    return Err(ModelError::config(
                        "coupling.h_table",
                        "needs at least two (T, H) rows",
                    ));
                }
                for w in t.windows(2) {
                    if w[1] <= w[0] {
                        return Err(ModelError::config(
                            "coupling.h_table",
                            "temperatures must be strictly increasing",
                        ));
                    }
                }
            }
            HFamily::Expression { expr } => {
                if !expr.signal_refs().is_empty() {
                    return Err(ModelError::config(
                        "coupling.h_expr",
                        "may only use the free variable T and constants",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Current gamma of the linear family, if that family is configured.
    pub fn gamma(&self) -> Option<f64> {
        match &self.h {
            HFamily::Linear { gamma, .. } => Some(*gamma),
            _ => None,
        }
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<(), ModelError> {
        match &mut self.h {
            HFamily::Linear { gamma: g, .. } => {
                *g = gamma;
                Ok(())
            }
            _ => Err(ModelError::usage(
                "gamma can only be varied for the linear H family",
            )),
        }
    }

    pub fn eval_h(&self, t_rack: f64) -> f64 {
        match &self.h {
            HFamily::Linear { h0, t_ref, gamma } => h0 * (1.0 + gamma * (t_rack - t_ref)),
            HFamily::Table { t, h } => interp_table(t, h, t_rack),
            HFamily::Expression { expr } => eval_h_expr(expr, t_rack),
        }
    }
}

fn eval_h_expr(e: &Expr, t: f64) -> f64 {
    match e {
        Expr::Number(v) => *v,
        Expr::Param(name) if name == "T" => t,
        Expr::Param(_) => f64::NAN,
        Expr::SignalRef { .. } => f64::NAN,
        Expr::Call { .. } => f64::NAN,
        Expr::Neg(inner) => -eval_h_expr(inner, t),
        Expr::Bin { op, lhs, rhs } => {
            let a = eval_h_expr(lhs, t);
            let b = eval_h_expr(rhs, t);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            }
        }
    }
}

/// Convenience free function mirroring the params method.
pub fn eval_h(params: &CouplingParams, t_rack: f64) -> f64 {
    params.eval_h(t_rack)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub rule: u8,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "all coupling rules satisfied");
        }
        for v in &self.violations {
            writeln!(f, "rule {}: {}", v.rule, v.message)?;
        }
        Ok(())
    }
}

fn find_subsystem<'a>(
    subsystems: &'a [SubsystemModel],
    id: &str,
) -> Result<&'a SubsystemModel, ModelError> {
    subsystems
        .iter()
        .find(|s| s.id() == id)
        .ok_or_else(|| ModelError::config(id, "unknown subsystem in coupling term"))
}

fn signal_role(sub: &SubsystemModel, name: &str) -> Option<SignalRole> {
    if sub.states().position(name).is_some() {
        Some(SignalRole::State)
    } else if sub.outputs().position(name).is_some() {
        Some(SignalRole::Output)
    } else if sub.controls().position(name).is_some() {
        Some(SignalRole::Control)
    } else if sub.disturbances().position(name).is_some() {
        Some(SignalRole::Disturbance)
    } else {
        None
    }
}

/// Checks the four coupling rules. Unknown subsystems or signals are
/// configuration errors; rule breaches are collected into the report so
/// every violation is visible at once.
pub fn validate(
    terms: &[CouplingTerm],
    subsystems: &[SubsystemModel],
) -> Result<ValidationReport, ModelError> {
    let mut report = ValidationReport::default();

    // existence of every referenced signal, and rule 2 on receivers
    for (idx, term) in terms.iter().enumerate() {
        let recv_sub = find_subsystem(subsystems, &term.receiver_subsystem)?;
        match signal_role(recv_sub, &term.receiver_signal) {
            None => {
                return Err(ModelError::config(
                    term.receiver(),
                    "receiver names a signal that does not exist",
                ))
            }
            Some(SignalRole::Control) | Some(SignalRole::Disturbance) => {}
            Some(role) => report.violations.push(Violation {
                rule: 2,
                message: format!(
                    "term #{}: receiver `{}` is a {} signal; only inputs can receive",
                    idx + 1,
                    term.receiver(),
                    role.as_str()
                ),
            }),
        }
        for (sub_id, sig) in term.expression.signal_refs() {
            let sub = find_subsystem(subsystems, &sub_id)?;
            if signal_role(sub, &sig).is_none() {
                return Err(ModelError::config(
                    format!("{sub_id}.{sig}"),
                    "coupling expression references a signal that does not exist",
                ));
            }
        }
    }

    // rule 1: at most one foreign subsystem per term
    for (idx, term) in terms.iter().enumerate() {
        let mut foreign: Vec<String> = Vec::new();
        for (sub_id, _) in term.expression.signal_refs() {
            if sub_id != term.receiver_subsystem && !foreign.contains(&sub_id) {
                foreign.push(sub_id);
            }
        }
        if foreign.len() > 1 {
            report.violations.push(Violation {
                rule: 1,
                message: format!(
                    "term #{}: `{}` draws signals from {} subsystems besides the receiver's ({})",
                    idx + 1,
                    term.receiver(),
                    foreign.len(),
                    foreign.join(", ")
                ),
            });
        }
    }

    // rule 3: no duplicate receivers
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, term) in terms.iter().enumerate() {
        if let Some(first) = seen.insert(term.receiver(), idx) {
            report.violations.push(Violation {
                rule: 3,
                message: format!(
                    "input `{}` receives more than once (terms #{} and #{})",
                    term.receiver(),
                    first + 1,
                    idx + 1
                ),
            });
        }
    }

    // rule 4: the dependency graph over receivers must be acyclic
    let receiver_of: HashMap<String, usize> = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.receiver(), i))
        .collect();
    let deps: Vec<Vec<usize>> = terms
        .iter()
        .map(|t| {
            let mut ds = Vec::new();
            for (sub, sig) in t.expression.signal_refs() {
                if let Some(&j) = receiver_of.get(&format!("{sub}.{sig}")) {
                    if !ds.contains(&j) {
                        ds.push(j);
                    }
                }
            }
            ds
        })
        .collect();
    if let Err(cycle) = topological_order(&deps) {
        let trace: Vec<String> = cycle.iter().map(|&i| terms[i].receiver()).collect();
        let first = trace.first().cloned().unwrap_or_default();
        report.violations.push(Violation {
            rule: 4,
            message: format!(
                "input `{first}` is a function of itself: {} -> {first}",
                trace.join(" -> ")
            ),
        });
    }

    Ok(report)
}

/// Stable topological order (dependencies first). On a cycle, returns the
/// members of one cycle in dependency order.
fn topological_order(deps: &[Vec<usize>]) -> Result<Vec<usize>, Vec<usize>> {
    let n = deps.len();
    let mut order = Vec::with_capacity(n);
    let mut emitted = vec![false; n];
    loop {
        let mut progressed = false;
        for i in 0..n {
            if !emitted[i] && deps[i].iter().all(|&j| emitted[j]) {
                emitted[i] = true;
                order.push(i);
                progressed = true;
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        if !progressed {
            break;
        }
    }
    // walk the remaining nodes to extract one cycle
    let start = (0..n).find(|&i| !emitted[i]).unwrap();
    let mut path = vec![start];
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut cur = start;
    loop {
        let next = *deps[cur].iter().find(|&&j| !emitted[j]).unwrap();
        if seen[next] {
            let pos = path.iter().position(|&p| p == next).unwrap();
            let mut cycle = path[pos..].to_vec();
            cycle.reverse(); // dependency order: what `next` needs comes first
            return Err(cycle);
        }
        seen[next] = true;
        path.push(next);
        cur = next;
    }
}

struct SubLayout {
    state_start: usize,
    state_len: usize,
    out_start: usize,
    out_len: usize,
    ctrl_start: usize,
    ctrl_len: usize,
    dist_start: usize,
    dist_len: usize,
}

struct CompiledTerm {
    slot: usize,
    node: Node,
    scale: f64,
    /// position in the original declaration order, for reporting
    source_index: usize,
}

/// The composed system: merged state vector in subsystem declaration order,
/// external inputs with every receiver removed, and the coupling terms
/// evaluated in dependency order before each synchronous step.
pub struct CoupledSystem {
    subsystems: Vec<SubsystemModel>,
    params: CouplingParams,
    terms: Vec<CouplingTerm>,
    compiled: Vec<CompiledTerm>,
    layouts: Vec<SubLayout>,
    env_len: usize,
    n_states: usize,
    state_names: Vec<String>,
    state_units: Vec<String>,
    control_names: Vec<String>,
    control_units: Vec<String>,
    ext_control_slots: Vec<usize>,
    disturbance_names: Vec<String>,
    disturbance_units: Vec<String>,
    ext_disturbance_slots: Vec<usize>,
    dt: f64,
}

/// Substitutes validated coupling terms into the subsystem inputs and merges
/// the vectors. Fails with the full validation report if any rule is broken.
pub fn compose(
    subsystems: Vec<SubsystemModel>,
    terms: Vec<CouplingTerm>,
    params: CouplingParams,
) -> Result<CoupledSystem, ModelError> {
    params.validate()?;
    if subsystems.is_empty() {
        return Err(ModelError::usage("compose needs at least one subsystem"));
    }
    for (i, a) in subsystems.iter().enumerate() {
        for b in subsystems.iter().skip(i + 1) {
            if a.id() == b.id() {
                return Err(ModelError::config(a.id(), "duplicate subsystem id"));
            }
        }
    }
    let dt = subsystems[0].dt();
    for s in &subsystems {
        if (s.dt() - dt).abs() > 0.0 {
            return Err(ModelError::config(
                format!("{}.dt", s.id()),
                format!("timestep {} differs from shared timestep {}", s.dt(), dt),
            ));
        }
    }

    let report = validate(&terms, &subsystems)?;
    if !report.is_valid() {
        return Err(ModelError::config(
            "coupling.terms",
            format!("coupling validation failed:\n{report}"),
        ));
    }

    // env layout: [states | outputs | per-subsystem controls+disturbances]
    let mut layouts = Vec::with_capacity(subsystems.len());
    let mut cursor = 0;
    for s in &subsystems {
        layouts.push(SubLayout {
            state_start: cursor,
            state_len: s.state_dim(),
            out_start: 0,
            out_len: s.outputs().len(),
            ctrl_start: 0,
            ctrl_len: s.control_dim(),
            dist_start: 0,
            dist_len: s.disturbance_dim(),
        });
        cursor += s.state_dim();
    }
    let n_states = cursor;
    for (l, s) in layouts.iter_mut().zip(&subsystems) {
        l.out_start = cursor;
        cursor += s.outputs().len();
    }
    let outputs_end = cursor;
    for (l, s) in layouts.iter_mut().zip(&subsystems) {
        l.ctrl_start = cursor;
        cursor += s.control_dim();
        l.dist_start = cursor;
        cursor += s.disturbance_dim();
    }
    let env_len = cursor;
    debug_assert!(outputs_end <= env_len);

    let slot_of = |sub_id: &str, sig: &str| -> Result<usize, ModelError> {
        let (k, s) = subsystems
            .iter()
            .enumerate()
            .find(|(_, s)| s.id() == sub_id)
            .ok_or_else(|| ModelError::config(sub_id, "unknown subsystem in coupling term"))?;
        let l = &layouts[k];
        if let Some(i) = s.states().position(sig) {
            return Ok(l.state_start + i);
        }
        if let Some(i) = s.outputs().position(sig) {
            return Ok(l.out_start + i);
        }
        if let Some(i) = s.controls().position(sig) {
            return Ok(l.ctrl_start + i);
        }
        if let Some(i) = s.disturbances().position(sig) {
            return Ok(l.dist_start + i);
        }
        Err(ModelError::config(
            format!("{sub_id}.{sig}"),
            "coupling expression references a signal that does not exist",
        ))
    };
    let resolve_param = |name: &str| -> Result<f64, ModelError> {
        match name {
            "COP" => Ok(params.cop),
            "R_DC" => Ok(params.r_dc),
            "H0" => match &params.h {
                HFamily::Linear { h0, .. } => Ok(*h0),
                _ => Err(ModelError::usage("H0 is only defined for the linear H family")),
            },
            "T_REF" => match &params.h {
                HFamily::Linear { t_ref, .. } => Ok(*t_ref),
                _ => Err(ModelError::usage("T_REF is only defined for the linear H family")),
            },
            "GAMMA" => match &params.h {
                HFamily::Linear { gamma, .. } => Ok(*gamma),
                _ => Err(ModelError::usage("GAMMA is only defined for the linear H family")),
            },
            other => Err(ModelError::usage(format!(
                "unknown parameter `{other}` in coupling expression"
            ))),
        }
    };

    // dependency order for evaluation
    let receiver_of: HashMap<String, usize> = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.receiver(), i))
        .collect();
    let deps: Vec<Vec<usize>> = terms
        .iter()
        .map(|t| {
            let mut ds = Vec::new();
            for (sub, sig) in t.expression.signal_refs() {
                if let Some(&j) = receiver_of.get(&format!("{sub}.{sig}")) {
                    if !ds.contains(&j) {
                        ds.push(j);
                    }
                }
            }
            ds
        })
        .collect();
    let order = topological_order(&deps).expect("validated terms are acyclic");

    let mut compiled = Vec::with_capacity(terms.len());
    for &i in &order {
        let t = &terms[i];
        let slot = slot_of(&t.receiver_subsystem, &t.receiver_signal)?;
        let node = expr::compile(&t.expression, &slot_of, &resolve_param)?;
        compiled.push(CompiledTerm {
            slot,
            node,
            scale: t.unit_scale,
            source_index: i,
        });
    }

    // external (merged) inputs exclude every receiver
    let replaced: Vec<String> = terms.iter().map(|t| t.receiver()).collect();
    let mut control_names = Vec::new();
    let mut control_units = Vec::new();
    let mut ext_control_slots = Vec::new();
    let mut disturbance_names = Vec::new();
    let mut disturbance_units = Vec::new();
    let mut ext_disturbance_slots = Vec::new();
    let mut state_names = Vec::new();
    let mut state_units = Vec::new();
    for (k, s) in subsystems.iter().enumerate() {
        let l = &layouts[k];
        for (i, sig) in s.states().iter().enumerate() {
            state_names.push(format!("{}.{}", s.id(), sig.name()));
            state_units.push(sig.unit().to_string());
            debug_assert_eq!(l.state_start + i, state_names.len() - 1);
        }
        for (i, sig) in s.controls().iter().enumerate() {
            let q = format!("{}.{}", s.id(), sig.name());
            if !replaced.contains(&q) {
                control_names.push(q);
                control_units.push(sig.unit().to_string());
                ext_control_slots.push(l.ctrl_start + i);
            }
        }
        for (i, sig) in s.disturbances().iter().enumerate() {
            let q = format!("{}.{}", s.id(), sig.name());
            if !replaced.contains(&q) {
                disturbance_names.push(q);
                disturbance_units.push(sig.unit().to_string());
                ext_disturbance_slots.push(l.dist_start + i);
            }
        }
    }

    Ok(CoupledSystem {
        subsystems,
        params,
        terms,
        compiled,
        layouts,
        env_len,
        n_states,
        state_names,
        state_units,
        control_names,
        control_units,
        ext_control_slots,
        disturbance_names,
        disturbance_units,
        ext_disturbance_slots,
        dt,
    })
}

impl CoupledSystem {
    pub fn subsystems(&self) -> &[SubsystemModel] {
        &self.subsystems
    }

    pub fn params(&self) -> &CouplingParams {
        &self.params
    }

    pub fn terms(&self) -> &[CouplingTerm] {
        &self.terms
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn state_units(&self) -> &[String] {
        &self.state_units
    }

    pub fn control_names(&self) -> &[String] {
        &self.control_names
    }

    pub fn control_units(&self) -> &[String] {
        &self.control_units
    }

    pub fn disturbance_names(&self) -> &[String] {
        &self.disturbance_names
    }

    pub fn disturbance_units(&self) -> &[String] {
        &self.disturbance_units
    }

    pub fn state_position(&self, qualified: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == qualified)
    }

    /// Receiver names in declaration order — the columns of
    /// [`coupling_values_into`].
    pub fn coupling_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.receiver()).collect()
    }

    pub fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.env_len]
    }

    fn fill_env(&self, x: &[f64], u: &[f64], d: &[f64], env: &mut [f64]) {
        env[..self.n_states].copy_from_slice(x);
        // outputs are pure functions of the current state
        for (k, s) in self.subsystems.iter().enumerate() {
            let l = &self.layouts[k];
            if l.out_len > 0 {
                let (head, tail) = env.split_at_mut(l.out_start);
                s.output_into(
                    &head[l.state_start..l.state_start + l.state_len],
                    &mut tail[..l.out_len],
                );
            }
        }
        for (slot, value) in self.ext_control_slots.iter().zip(u) {
            env[*slot] = *value;
        }
        for (slot, value) in self.ext_disturbance_slots.iter().zip(d) {
            env[*slot] = *value;
        }
        let h = |t: f64| self.params.eval_h(t);
        for term in &self.compiled {
            env[term.slot] = term.scale * term.node.eval(env, &h);
        }
    }

    /// One synchronous step with caller-provided scratch. All coupling
    /// expressions see the same previous-step values; every subsystem then
    /// advances with its substituted inputs.
    pub fn step_buffered(
        &self,
        x: &[f64],
        u: &[f64],
        d: &[f64],
        out: &mut [f64],
        env: &mut [f64],
    ) -> Result<(), usize> {
        debug_assert_eq!(x.len(), self.n_states);
        debug_assert_eq!(u.len(), self.ext_control_slots.len());
        debug_assert_eq!(d.len(), self.ext_disturbance_slots.len());
        self.fill_env(x, u, d, env);
        for (k, s) in self.subsystems.iter().enumerate() {
            let l = &self.layouts[k];
            s.step_into(
                &env[l.state_start..l.state_start + l.state_len],
                &env[l.ctrl_start..l.ctrl_start + l.ctrl_len],
                &env[l.dist_start..l.dist_start + l.dist_len],
                &mut out[l.state_start..l.state_start + l.state_len],
            )
            .map_err(|i| l.state_start + i)?;
        }
        match out.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(i),
            None => Ok(()),
        }
    }

    /// Evaluates the coupling expressions at `(x, u, d)` without stepping,
    /// in term declaration order.
    pub fn coupling_values_into(&self, x: &[f64], u: &[f64], d: &[f64], values: &mut [f64], env: &mut [f64]) {
        self.fill_env(x, u, d, env);
        for c in &self.compiled {
            values[c.source_index] = env[c.slot];
        }
    }
}

impl fmt::Debug for CoupledSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoupledSystem")
            .field("subsystems", &self.subsystems.len())
            .field("states", &self.n_states)
            .field("terms", &self.terms.len())
            .finish()
    }
}

impl DiscreteSystem for CoupledSystem {
    fn state_dim(&self) -> usize {
        self.n_states
    }

    fn control_dim(&self) -> usize {
        self.ext_control_slots.len()
    }

    fn disturbance_dim(&self) -> usize {
        self.ext_disturbance_slots.len()
    }

    fn step_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) -> Result<(), usize> {
        let mut env = self.scratch();
        self.step_buffered(x, u, d, out, &mut env)
    }

    fn state_name(&self, i: usize) -> String {
        self.state_names[i].clone()
    }

    fn control_name(&self, i: usize) -> String {
        self.control_names[i].clone()
    }

    fn disturbance_name(&self, i: usize) -> String {
        self.disturbance_names[i].clone()
    }

    fn dt(&self) -> f64 {
        self.dt
    }
}

#[cfg(test)]
mod tests;
