//! Scenario files: a line-oriented, sectioned `key = value` format that
//! fully describes one study — plant parameters, network weights, coupling
//! terms, free variables and solver options.
//!
//! The schema is strict: misspelled sections or keys fail loudly with their
//! line number. Defaults exist for the documented parameter set only, and
//! every default actually applied is echoed so run logs can list them.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::analysis::{EquilibriumOptions, FdOptions};
use crate::coupling::{compose, CoupledSystem, CouplingParams, CouplingTerm, HFamily};
use crate::error::ModelError;
use crate::microgrid::{build_microgrid, MicrogridParams, VocCurve};
use crate::model::discretize_euler;
use crate::wann::{init_from_history, realize_state_space, Activation, DelayHistory, WannParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Coupled,
    Uncoupled,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Coupled => "coupled",
            Mode::Uncoupled => "uncoupled",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UncoupledFree {
    pub i_o: f64,
    pub i_loss: f64,
    pub u_dc: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub fd_epsilon: f64,
    pub unit_circle_tol: f64,
    pub lyapunov_samples: usize,
    pub lyapunov_radius: f64,
    pub seed: u64,
    pub sweep_gamma_min: f64,
    pub sweep_gamma_max: f64,
    pub sweep_points: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            fd_epsilon: 1e-6,
            unit_circle_tol: 1e-9,
            lyapunov_samples: 10_000,
            lyapunov_radius: 1e-3,
            seed: 0,
            sweep_gamma_min: -1.0,
            sweep_gamma_max: 0.005,
            sweep_points: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub dt: f64,
    pub microgrid: MicrogridParams,
    pub wann: WannParams,
    pub coupling: Option<(CouplingParams, Vec<CouplingTerm>)>,
    /// `[D_sd, D_su, D_load]`
    pub u_bar: Vec<f64>,
    /// `[G, T_inf]`
    pub d_bar: Vec<f64>,
    pub uncoupled_free: Option<UncoupledFree>,
    pub initial_overrides: Vec<(String, f64)>,
    pub equilibrium: EquilibriumOptions,
    pub analysis: AnalysisConfig,
    /// `section.key = value (default)` lines for the run log.
    pub applied_defaults: Vec<String>,
}

/// A scenario compiled into a steppable system with its operating point.
#[derive(Debug)]
pub struct Built {
    pub system: CoupledSystem,
    pub u_bar: Vec<f64>,
    pub d_bar: Vec<f64>,
    x0: Vec<f64>,
}

impl Built {
    pub fn default_initial_state(&self) -> Vec<f64> {
        self.x0.clone()
    }
}

// ---------------------------------------------------------------------------
// raw file parsing

struct RawEntry {
    key: String,
    value: String,
    line: usize,
    used: std::cell::Cell<bool>,
}

struct RawSection {
    line: usize,
    entries: Vec<RawEntry>,
}

struct RawConfig {
    sections: HashMap<String, RawSection>,
    order: Vec<String>,
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_raw(src: &str) -> Result<RawConfig, ModelError> {
    let mut sections: HashMap<String, RawSection> = HashMap::new();
    let mut order = Vec::new();
    let mut current: Option<String> = None;
    for (idx, raw_line) in src.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw_line).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ModelError::Parse {
                line: line_no,
                column: line.len(),
                message: "section header must close with `]`".into(),
            })?;
            let name = name.trim().to_string();
            if sections.contains_key(&name) {
                return Err(ModelError::Parse {
                    line: line_no,
                    column: 1,
                    message: format!("duplicate section `[{name}]`"),
                });
            }
            sections.insert(
                name.clone(),
                RawSection {
                    line: line_no,
                    entries: Vec::new(),
                },
            );
            order.push(name.clone());
            current = Some(name);
            continue;
        }
        let eq = line.find('=').ok_or(ModelError::Parse {
            line: line_no,
            column: 1,
            message: "expected `key = value`".into(),
        })?;
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ModelError::Parse {
                line: line_no,
                column: eq + 1,
                message: "expected `key = value`".into(),
            });
        }
        let section = current.as_ref().ok_or(ModelError::Parse {
            line: line_no,
            column: 1,
            message: "key outside any [section]".into(),
        })?;
        let sec = sections.get_mut(section).expect("current section exists");
        if sec.entries.iter().any(|e| e.key == key) {
            return Err(ModelError::Parse {
                line: line_no,
                column: 1,
                message: format!("duplicate key `{key}` in `[{section}]`"),
            });
        }
        sec.entries.push(RawEntry {
            key,
            value,
            line: line_no,
            used: std::cell::Cell::new(false),
        });
    }
    Ok(RawConfig { sections, order })
}

struct SectionReader<'a> {
    name: &'static str,
    section: Option<&'a RawSection>,
    defaults: &'a mut Vec<String>,
}

fn reader<'a>(
    raw: &'a RawConfig,
    name: &'static str,
    defaults: &'a mut Vec<String>,
) -> SectionReader<'a> {
    SectionReader {
        name,
        section: raw.sections.get(name),
        defaults,
    }
}

fn unquote(v: &str) -> String {
    let t = v.trim();
    if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
        t[1..t.len() - 1].to_string()
    } else {
        t.to_string()
    }
}

impl<'a> SectionReader<'a> {
    fn entry(&self, key: &str) -> Option<&'a RawEntry> {
        let e = self.section?.entries.iter().find(|e| e.key == key)?;
        e.used.set(true);
        Some(e)
    }

    fn note_default(&mut self, key: &str, value: impl std::fmt::Display) {
        self.defaults.push(format!("{}.{} = {} (default)", self.name, key, value));
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, ModelError> {
        match self.entry(key) {
            Some(e) => e.value.parse::<f64>().map_err(|_| ModelError::Parse {
                line: e.line,
                column: 1,
                message: format!("`{}.{}`: expected a number, got `{}`", self.name, key, e.value),
            }),
            None => {
                self.note_default(key, default);
                Ok(default)
            }
        }
    }

    fn f64_required(&mut self, key: &str) -> Result<f64, ModelError> {
        match self.entry(key) {
            Some(e) => e.value.parse::<f64>().map_err(|_| ModelError::Parse {
                line: e.line,
                column: 1,
                message: format!("`{}.{}`: expected a number, got `{}`", self.name, key, e.value),
            }),
            None => Err(ModelError::config(
                format!("{}.{}", self.name, key),
                "required key is missing",
            )),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize, ModelError> {
        match self.entry(key) {
            Some(e) => e.value.parse::<usize>().map_err(|_| ModelError::Parse {
                line: e.line,
                column: 1,
                message: format!("`{}.{}`: expected a non-negative integer", self.name, key),
            }),
            None => {
                self.note_default(key, default);
                Ok(default)
            }
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, ModelError> {
        match self.entry(key) {
            Some(e) => e.value.parse::<u64>().map_err(|_| ModelError::Parse {
                line: e.line,
                column: 1,
                message: format!("`{}.{}`: expected an unsigned integer", self.name, key),
            }),
            None => {
                self.note_default(key, default);
                Ok(default)
            }
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, ModelError> {
        match self.entry(key) {
            Some(e) => match e.value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(ModelError::Parse {
                    line: e.line,
                    column: 1,
                    message: format!("`{}.{}`: expected true/false, got `{other}`", self.name, key),
                }),
            },
            None => {
                self.note_default(key, default);
                Ok(default)
            }
        }
    }

    fn string(&mut self, key: &str, default: Option<&str>) -> Result<Option<String>, ModelError> {
        match self.entry(key) {
            Some(e) => Ok(Some(unquote(&e.value))),
            None => {
                if let Some(d) = default {
                    self.note_default(key, d);
                    Ok(Some(d.to_string()))
                } else {
                    Ok(None)
                }
            }
        }
    }

    fn string_required(&mut self, key: &str) -> Result<String, ModelError> {
        self.string(key, None)?.ok_or_else(|| {
            ModelError::config(format!("{}.{}", self.name, key), "required key is missing")
        })
    }

    fn list_f64(&mut self, key: &str, default: Option<&[f64]>) -> Result<Vec<f64>, ModelError> {
        match self.entry(key) {
            Some(e) => e
                .value
                .split(',')
                .map(|part| {
                    part.trim().parse::<f64>().map_err(|_| ModelError::Parse {
                        line: e.line,
                        column: 1,
                        message: format!(
                            "`{}.{}`: expected comma-separated numbers, got `{}`",
                            self.name, key, part.trim()
                        ),
                    })
                })
                .collect(),
            None => match default {
                Some(d) => {
                    self.note_default(
                        key,
                        d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "),
                    );
                    Ok(d.to_vec())
                }
                None => Err(ModelError::config(
                    format!("{}.{}", self.name, key),
                    "required key is missing",
                )),
            },
        }
    }

    /// Keys with the given prefix and a numeric suffix, sorted by suffix.
    fn numbered(&self, prefix: &str) -> Result<Vec<(usize, String, usize)>, ModelError> {
        let mut out = Vec::new();
        if let Some(sec) = self.section {
            for e in &sec.entries {
                if let Some(tail) = e.key.strip_prefix(prefix) {
                    let idx = tail.parse::<usize>().map_err(|_| ModelError::Parse {
                        line: e.line,
                        column: 1,
                        message: format!("`{}{}`: suffix must be a number", prefix, tail),
                    })?;
                    e.used.set(true);
                    out.push((idx, unquote(&e.value), e.line));
                }
            }
        }
        out.sort_by_key(|(i, _, _)| *i);
        Ok(out)
    }
}

fn parse_call(src: &str) -> Result<(String, Vec<f64>), ModelError> {
    let open = src.find('(').ok_or_else(|| {
        ModelError::usage(format!("expected `name(arg, ...)`, got `{src}`"))
    })?;
    let close = src.rfind(')').ok_or_else(|| {
        ModelError::usage(format!("missing `)` in `{src}`"))
    })?;
    let name = src[..open].trim().to_string();
    let args: Result<Vec<f64>, _> = src[open + 1..close]
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| ModelError::usage(format!("invalid number `{}` in `{src}`", s.trim())))
        })
        .collect();
    Ok((name, args?))
}

fn load_two_column(path: &Path, what: &str) -> Result<Vec<(f64, f64)>, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ModelError::config(what, format!("cannot read `{}`: {e}", path.display()))
    })?;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if parts.len() != 2 {
            return Err(ModelError::Parse {
                line: idx + 1,
                column: 1,
                message: format!("{what}: expected two columns, got `{line}`"),
            });
        }
        let a = parts[0].parse::<f64>().map_err(|_| ModelError::Parse {
            line: idx + 1,
            column: 1,
            message: format!("{what}: invalid number `{}`", parts[0]),
        })?;
        let b = parts[1].parse::<f64>().map_err(|_| ModelError::Parse {
            line: idx + 1,
            column: 1,
            message: format!("{what}: invalid number `{}`", parts[1]),
        })?;
        rows.push((a, b));
    }
    Ok(rows)
}

const KNOWN_SECTIONS: &[&str] = &[
    "scenario",
    "microgrid.battery",
    "microgrid.buck",
    "microgrid.boost",
    "microgrid.pv",
    "microgrid.bus",
    "wann",
    "coupling",
    "free_variables",
    "initial_state",
    "equilibrium",
    "analysis",
];

/// The three case-study coupling terms in their canonical spelling.
pub fn default_coupling_terms() -> Vec<String> {
    vec![
        "dc.u_DC = COP * mg.D_load * mg.V_bus * mg.I_O @ scale 1e-3".to_string(),
        "mg.I_O = mg.V_bus / R_DC".to_string(),
        "mg.I_loss = mg.V_bus * H(dc.x1)".to_string(),
    ]
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| {
            ModelError::config("scenario", format!("cannot read `{}`: {e}", path.display()))
        })?;
        Scenario::from_str_with_base(&src, path.parent())
    }

    pub fn from_str_with_base(src: &str, base: Option<&Path>) -> Result<Self, ModelError> {
        let raw = parse_raw(src)?;

        for name in &raw.order {
            if !KNOWN_SECTIONS.contains(&name.as_str()) {
                let line = raw.sections[name].line;
                return Err(ModelError::Parse {
                    line,
                    column: 1,
                    message: format!("unknown section `[{name}]`"),
                });
            }
        }

        let mut defaults: Vec<String> = Vec::new();

        // [scenario]
        let mut sec = reader(&raw, "scenario", &mut defaults);
        let name = sec.string_required("name")?;
        let mode = match sec.string_required("mode")?.as_str() {
            "coupled" => Mode::Coupled,
            "uncoupled" => Mode::Uncoupled,
            other => {
                return Err(ModelError::config(
                    "scenario.mode",
                    format!("must be `coupled` or `uncoupled`, got `{other}`"),
                ))
            }
        };
        let dt = sec.f64("dt", 0.001)?;

        // [microgrid.battery]
        let mut sec = reader(&raw, "microgrid.battery", &mut defaults);
        let mut microgrid = MicrogridParams::default();
        microgrid.battery.n_parallel = sec.f64("n_parallel", 400.0)?;
        microgrid.battery.n_series = sec.f64("n_series", 100.0)?;
        microgrid.battery.capacity_ah = sec.f64("capacity_ah", 1.21)?;
        microgrid.battery.c2 = sec.f64("c2_farad", 15_000.0)?;
        microgrid.battery.r1 = sec.f64("r1_ohm", 0.0198)?;
        microgrid.battery.r2 = sec.f64("r2_ohm", 0.2331)?;
        microgrid.battery.coulomb_capacity = sec.bool("coulomb_capacity", true)?;
        let voc_table = sec.string("voc_table", None)?;
        match voc_table {
            Some(rel) => {
                if sec.entry("voc_cubic").is_some() {
                    return Err(ModelError::config(
                        "microgrid.battery.voc_cubic",
                        "give either voc_cubic or voc_table, not both",
                    ));
                }
                let path = match base {
                    Some(b) => b.join(&rel),
                    None => PathBuf::from(&rel),
                };
                let rows = load_two_column(&path, "microgrid.battery.voc_table")?;
                microgrid.battery.voc = VocCurve::from_breakpoints(rows)?;
            }
            None => {
                let c = sec.list_f64("voc_cubic", Some(&[3.0, 1.65, -1.5, 1.05]))?;
                if c.len() != 4 {
                    return Err(ModelError::config(
                        "microgrid.battery.voc_cubic",
                        format!("expected 4 coefficients, got {}", c.len()),
                    ));
                }
                microgrid.battery.voc = VocCurve::Cubic {
                    c: [c[0], c[1], c[2], c[3]],
                };
            }
        }

        // converters
        {
            let mut sec = reader(&raw, "microgrid.buck", &mut defaults);
            let conv = &mut microgrid.buck;
            conv.l = sec.f64("l_henry", 1.0)?;
            conv.c1 = sec.f64("c1_farad", 1000.0)?;
            conv.c2 = sec.f64("c2_farad", 1000.0)?;
            conv.r1 = sec.f64("r1_ohm", 10_000.0)?;
            conv.r2 = sec.f64("r2_ohm", 10_000.0)?;
            conv.r3 = sec.f64("r3_ohm", 0.0050)?;
        }
        {
            let mut sec = reader(&raw, "microgrid.boost", &mut defaults);
            let conv = &mut microgrid.boost;
            conv.l = sec.f64("l_henry", 1.0)?;
            conv.c1 = sec.f64("c1_farad", 1000.0)?;
            conv.c2 = sec.f64("c2_farad", 1000.0)?;
            conv.r1 = sec.f64("r1_ohm", 10_000.0)?;
            conv.r2 = sec.f64("r2_ohm", 10_000.0)?;
            conv.r3 = sec.f64("r3_ohm", 0.0050)?;
        }

        // [microgrid.pv]
        let mut sec = reader(&raw, "microgrid.pv", &mut defaults);
        microgrid.pv.n_parallel = sec.f64("n_parallel", 100.0)?;
        microgrid.pv.c_thermal = sec.f64("c_thermal_j_per_k", 4580.0)?;
        microgrid.pv.absorptivity = sec.f64("absorptivity", 0.7)?;
        microgrid.pv.area = sec.f64("area_m2", 0.8)?;
        microgrid.pv.h_conv = sec.f64("h_conv_w_per_m2k", 13.39)?;
        microgrid.pv.diode.isc_ref = sec.f64("isc_ref_a", 3.6)?;
        microgrid.pv.diode.voc_ref = sec.f64("voc_ref_v", 33.0)?;
        microgrid.pv.diode.k_i = sec.f64("k_i_a_per_k", 0.0015)?;
        microgrid.pv.diode.k_v = sec.f64("k_v_v_per_k", -0.123)?;
        microgrid.pv.diode.ideality = sec.f64("ideality", 1.3)?;
        microgrid.pv.diode.cells_series = sec.f64("cells_series", 54.0)?;
        microgrid.pv.diode.r_series = sec.f64("r_series_ohm", 0.2)?;
        microgrid.pv.diode.r_shunt = sec.f64("r_shunt_ohm", 400.0)?;
        microgrid.pv.diode.g_ref = sec.f64("g_ref_w_per_m2", 1000.0)?;
        microgrid.pv.diode.t_ref_c = sec.f64("t_ref_c", 25.0)?;

        // [microgrid.bus]
        let mut sec = reader(&raw, "microgrid.bus", &mut defaults);
        microgrid.bus.l1 = sec.f64("l1_henry", 1.0)?;
        microgrid.bus.l2 = sec.f64("l2_henry", 1.0)?;
        microgrid.bus.c = sec.f64("c_farad", 100.0)?;
        microgrid.bus.r1 = sec.f64("r1_ohm", 0.0001)?;
        microgrid.bus.r2 = sec.f64("r2_ohm", 0.0001)?;

        // [wann]
        let mut sec = reader(&raw, "wann", &mut defaults);
        let delays = sec.usize("delays", 3)?;
        let listed = sec.numbered("activation_")?;
        let activations: Vec<Activation> = if listed.is_empty() {
            if delays != 3 {
                return Err(ModelError::config(
                    "wann.delays",
                    "default activations exist only for delays = 3; list activation_1.. explicitly",
                ));
            }
            sec.note_default("activation_1", "affine(1, 2.2213e-4)");
            sec.note_default("activation_2", "waterfall-sigmoid(-9.7182e-6)");
            sec.note_default("activation_3", "affine(-1.1106e-6, 2.7766e-5)");
            WannParams::reference().activations
        } else {
            if listed.len() != delays {
                return Err(ModelError::config(
                    "wann",
                    format!("expected {delays} activations, found {}", listed.len()),
                ));
            }
            let mut acts = Vec::with_capacity(delays);
            for (expected, (idx, value, line)) in listed.iter().enumerate() {
                if *idx != expected + 1 {
                    return Err(ModelError::Parse {
                        line: *line,
                        column: 1,
                        message: format!(
                            "activation indices must be 1..={delays} without gaps, found {idx}"
                        ),
                    });
                }
                let (fam, args) = parse_call(value)?;
                acts.push(Activation::from_name(&fam, &args)?);
            }
            acts
        };
        let wann = WannParams::new(activations, dt)?;

        // [coupling]
        let coupling = if mode == Mode::Coupled {
            let mut sec = reader(&raw, "coupling", &mut defaults);
            if sec.section.is_none() {
                return Err(ModelError::config(
                    "coupling",
                    "coupled mode requires a [coupling] section",
                ));
            }
            let cop = sec.f64("cop", 3.5)?;
            let r_dc = sec.f64_required("r_dc_ohm")?;
            let family = sec
                .string("h_family", Some("linear"))?
                .expect("default present");
            let h = match family.as_str() {
                "linear" => {
                    let h0 = sec.f64("h0", 1.02e-4)?;
                    let t_ref = sec.f64("t_ref_c", 20.0)?;
                    let gamma = sec.f64_required("gamma")?;
                    HFamily::Linear { h0, t_ref, gamma }
                }
                "table" => {
                    let rel = sec.string("h_table", None)?.ok_or_else(|| {
                        ModelError::config("coupling.h_table", "required for h_family = table")
                    })?;
                    let path = match base {
                        Some(b) => b.join(&rel),
                        None => PathBuf::from(&rel),
                    };
                    let rows = load_two_column(&path, "coupling.h_table")?;
                    HFamily::Table {
                        t: rows.iter().map(|r| r.0).collect(),
                        h: rows.iter().map(|r| r.1).collect(),
                    }
                }
                "expr" => {
                    let text = sec.string("h_expr", None)?.ok_or_else(|| {
                        ModelError::config("coupling.h_expr", "required for h_family = expr")
                    })?;
                    HFamily::Expression {
                        expr: crate::coupling::parse_expression(&text)?,
                    }
                }
                other => {
                    return Err(ModelError::config(
                        "coupling.h_family",
                        format!("must be linear, table or expr, got `{other}`"),
                    ))
                }
            };
            let params = CouplingParams { cop, r_dc, h };
            params.validate()?;

            let listed = sec.numbered("term_")?;
            let term_sources: Vec<(String, usize)> = if listed.is_empty() {
                for (i, t) in default_coupling_terms().iter().enumerate() {
                    sec.note_default(&format!("term_{}", i + 1), format!("\"{t}\""));
                }
                default_coupling_terms().into_iter().map(|t| (t, 0)).collect()
            } else {
                listed.into_iter().map(|(_, v, l)| (v, l)).collect()
            };
            let mut terms = Vec::with_capacity(term_sources.len());
            for (text, line) in term_sources {
                let term = CouplingTerm::parse(&text).map_err(|e| match e {
                    ModelError::Parse { column, message, .. } if line > 0 => ModelError::Parse {
                        line,
                        column,
                        message,
                    },
                    other => other,
                })?;
                terms.push(term);
            }
            Some((params, terms))
        } else {
            if raw.sections.contains_key("coupling") {
                return Err(ModelError::config(
                    "coupling",
                    "a [coupling] section is only allowed in coupled mode",
                ));
            }
            None
        };

        // [free_variables]
        let mut sec = reader(&raw, "free_variables", &mut defaults);
        let u_bar = sec.list_f64("u_bar", Some(&[0.5, 0.15, 1.0]))?;
        if u_bar.len() != 3 {
            return Err(ModelError::config(
                "free_variables.u_bar",
                format!("expected 3 duty cycles, got {}", u_bar.len()),
            ));
        }
        for (i, v) in u_bar.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(ModelError::config(
                    "free_variables.u_bar",
                    format!("duty cycle #{} = {v} is outside [0, 1]", i + 1),
                ));
            }
        }
        let d_bar = sec.list_f64("d_bar", Some(&[1000.0, 25.0]))?;
        if d_bar.len() != 2 {
            return Err(ModelError::config(
                "free_variables.d_bar",
                format!("expected [G, T_inf], got {} values", d_bar.len()),
            ));
        }
        if d_bar[0] < 0.0 {
            return Err(ModelError::config(
                "free_variables.d_bar",
                "irradiance must be non-negative",
            ));
        }
        let uncoupled_free = if mode == Mode::Uncoupled {
            Some(UncoupledFree {
                i_o: sec.f64("i_o_bar", 20.5)?,
                i_loss: sec.f64("i_loss_bar", 0.0165)?,
                u_dc: sec.f64("u_dc_bar", 31.0)?,
            })
        } else {
            for key in ["i_o_bar", "i_loss_bar", "u_dc_bar"] {
                if sec.entry(key).is_some() {
                    return Err(ModelError::config(
                        format!("free_variables.{key}"),
                        "only allowed in uncoupled mode (the coupling terms supply it)",
                    ));
                }
            }
            None
        };

        // [initial_state]
        let sec = reader(&raw, "initial_state", &mut defaults);
        let mut initial_overrides = Vec::new();
        if let Some(s) = sec.section {
            for e in &s.entries {
                e.used.set(true);
                let v = e.value.parse::<f64>().map_err(|_| ModelError::Parse {
                    line: e.line,
                    column: 1,
                    message: format!("`initial_state.{}`: expected a number", e.key),
                })?;
                initial_overrides.push((e.key.clone(), v));
            }
        }

        // [equilibrium]
        let mut sec = reader(&raw, "equilibrium", &mut defaults);
        let equilibrium = EquilibriumOptions {
            tolerance: sec.f64("tolerance", 1e-9)?,
            max_iterations: sec.usize("max_iterations", 300)?,
            max_halvings: sec.usize("max_halvings", 30)?,
            pre_roll_steps: sec.usize("pre_roll_steps", 20_000)?,
            fd: FdOptions::default(),
        };

        // [analysis]
        let mut sec = reader(&raw, "analysis", &mut defaults);
        let defaults_cfg = AnalysisConfig::default();
        let analysis = AnalysisConfig {
            fd_epsilon: sec.f64("fd_epsilon", defaults_cfg.fd_epsilon)?,
            unit_circle_tol: sec.f64("unit_circle_tol", defaults_cfg.unit_circle_tol)?,
            lyapunov_samples: sec.usize("lyapunov_samples", defaults_cfg.lyapunov_samples)?,
            lyapunov_radius: sec.f64("lyapunov_radius", defaults_cfg.lyapunov_radius)?,
            seed: sec.u64("seed", defaults_cfg.seed)?,
            sweep_gamma_min: sec.f64("sweep_gamma_min", defaults_cfg.sweep_gamma_min)?,
            sweep_gamma_max: sec.f64("sweep_gamma_max", defaults_cfg.sweep_gamma_max)?,
            sweep_points: sec.usize("sweep_points", defaults_cfg.sweep_points)?,
        };

        // strictness: every present key must have been consumed
        for name in &raw.order {
            let s = &raw.sections[name];
            for e in &s.entries {
                if !e.used.get() {
                    return Err(ModelError::Parse {
                        line: e.line,
                        column: 1,
                        message: format!("unknown key `{}.{}`", name, e.key),
                    });
                }
            }
        }

        let mut equilibrium = equilibrium;
        equilibrium.fd = FdOptions {
            epsilon: analysis.fd_epsilon,
            ..FdOptions::default()
        };

        let scenario = Scenario {
            name,
            mode,
            dt,
            microgrid,
            wann,
            coupling,
            u_bar,
            d_bar,
            uncoupled_free,
            initial_overrides,
            equilibrium,
            analysis,
            applied_defaults: defaults,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        crate::error::require_positive("scenario.dt", self.dt)?;
        self.microgrid.validate()?;
        self.wann.validate()?;
        if let Some((params, _)) = &self.coupling {
            params.validate()?;
        }
        Ok(())
    }

    /// Copy of the scenario with the linear H slope replaced. Only coupled
    /// scenarios with the linear family can sweep gamma.
    pub fn with_gamma(&self, gamma: f64) -> Result<Scenario, ModelError> {
        let mut out = self.clone();
        match &mut out.coupling {
            Some((params, _)) => {
                params.set_gamma(gamma)?;
                Ok(out)
            }
            None => Err(ModelError::usage(
                "gamma sweeps need a coupled scenario",
            )),
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        self.coupling.as_ref().and_then(|(p, _)| p.gamma())
    }

    /// Builds the steppable system, the merged operating point and the
    /// default initial state.
    pub fn build(&self) -> Result<Built, ModelError> {
        let mg_cont = build_microgrid(self.microgrid.clone())?;
        let mg = discretize_euler(&mg_cont, self.dt)?;
        let mut wann = self.wann.clone();
        wann.dt = self.dt;
        let dc = realize_state_space(&wann)?;

        let (system, u_bar, d_bar, u_dc_guess) = match (&self.coupling, &self.uncoupled_free) {
            (Some((params, terms)), _) => {
                let sys = compose(vec![mg, dc], terms.clone(), params.clone())?;
                (sys, self.u_bar.clone(), self.d_bar.clone(), 20.0)
            }
            (None, Some(free)) => {
                let sys = compose(vec![mg, dc], Vec::new(), CouplingParams::default())?;
                let mut u = self.u_bar.clone();
                u.push(free.u_dc);
                let mut d = self.d_bar.clone();
                d.push(free.i_o);
                d.push(free.i_loss);
                (sys, u, d, free.u_dc)
            }
            (None, None) => {
                return Err(ModelError::config(
                    "scenario.mode",
                    "uncoupled mode needs free_variables; coupled mode needs [coupling]",
                ))
            }
        };

        // heuristic cold-start state, overridable per signal
        let voc_mid = self.microgrid.battery.voc.eval(0.5);
        let v_bat0 = self.microgrid.battery.n_series * voc_mid;
        let dc0 = init_from_history(
            &wann,
            &DelayHistory::constant(25.0, u_dc_guess, wann.delays()),
        )?;
        let mut x0 = vec![
            0.5,            // SOC
            0.0,            // q2_bat
            0.0,            // I_L_sd
            v_bat0,         // V_bat
            0.5 * v_bat0,   // V_c2_sd
            45.0,           // T_pv
            100.0,          // I_L_su
            25.0,           // V_pv
            0.47 * v_bat0,  // V_c2_su
            20.0,           // I_L1_bus
            0.0,            // I_L2_bus
            0.47 * v_bat0,  // V_bus
        ];
        x0.extend(dc0.x.iter());

        use crate::model::DiscreteSystem;
        debug_assert_eq!(x0.len(), system.state_dim());
        for (key, value) in &self.initial_overrides {
            match system.state_position(key) {
                Some(i) => x0[i] = *value,
                None => {
                    return Err(ModelError::config(
                        format!("initial_state.{key}"),
                        "no such state signal",
                    ))
                }
            }
        }

        Ok(Built {
            system,
            u_bar,
            d_bar,
            x0,
        })
    }
}
