//! Physics-based microgrid equivalent-circuit model.
//!
//! The plant is a battery pack feeding a buck converter, a photovoltaic
//! array feeding a boost converter, and a DC bus joining both through two
//! inductors. Twelve states, three duty-cycle controls and four exogenous
//! inputs (irradiance, ambient temperature, load current draw and a
//! temperature-dependent loss current).

mod pv;
mod voc;

pub use pv::{pv_current, DiodeParams};
pub use voc::VocCurve;

use std::sync::Arc;

use crate::error::{require_positive, ModelError};
use crate::model::{ContinuousModel, StepFn};
use crate::signal::{Signal, SignalSet};

/// State ordering of the assembled model. Kept stable so eigenvector and
/// report indexing is reproducible.
pub mod state_index {
    pub const SOC: usize = 0;
    pub const Q2_BAT: usize = 1;
    pub const I_L_SD: usize = 2;
    pub const V_BAT: usize = 3;
    pub const V_C2_SD: usize = 4;
    pub const T_PV: usize = 5;
    pub const I_L_SU: usize = 6;
    pub const V_PV: usize = 7;
    pub const V_C2_SU: usize = 8;
    pub const I_L1_BUS: usize = 9;
    pub const I_L2_BUS: usize = 10;
    pub const V_BUS: usize = 11;
    pub const COUNT: usize = 12;
}

/// Battery pack constants. `n_parallel` cells form a module and `n_series`
/// modules form the pack.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryParams {
    pub n_parallel: f64,
    pub n_series: f64,
    /// Cell capacity in amp-hours.
    pub capacity_ah: f64,
    /// Relaxation capacitance, F.
    pub c2: f64,
    pub r1: f64,
    pub r2: f64,
    pub voc: VocCurve,
    /// When set (the default) the capacity is converted to coulombs inside
    /// the SOC derivative so that all dynamics share seconds as the time
    /// base. Disabling it keeps the raw amp-hour figure for sensitivity
    /// studies.
    pub coulomb_capacity: bool,
}

impl Default for BatteryParams {
    fn default() -> Self {
        BatteryParams {
            n_parallel: 400.0,
            n_series: 100.0,
            capacity_ah: 1.21,
            c2: 15_000.0,
            r1: 0.0198,
            r2: 0.2331,
            voc: VocCurve::default(),
            coulomb_capacity: true,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        require_positive("battery.n_parallel", self.n_parallel)?;
        require_positive("battery.n_series", self.n_series)?;
        require_positive("battery.capacity_ah", self.capacity_ah)?;
        require_positive("battery.c2_farad", self.c2)?;
        require_positive("battery.r1_ohm", self.r1)?;
        require_positive("battery.r2_ohm", self.r2)?;
        self.voc.validate()
    }

    /// Charge capacity used by the SOC derivative, in ampere-seconds unless
    /// the raw amp-hour variant was requested.
    pub fn charge_capacity(&self) -> f64 {
        if self.coulomb_capacity {
            self.capacity_ah * 3600.0
        } else {
            self.capacity_ah
        }
    }
}

/// SOC range within which the open-circuit curve is trusted; solvers may
/// probe outside and callers can use this to flag excursions.
pub fn soc_within_bounds(soc: f64) -> bool {
    (-0.2..=1.2).contains(&soc)
}

/// Averaged DC-DC converter constants, shared by the buck and boost stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverterParams {
    pub l: f64,
    pub c1: f64,
    pub c2: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

impl Default for ConverterParams {
    fn default() -> Self {
        ConverterParams {
            l: 1.0,
            c1: 1000.0,
            c2: 1000.0,
            r1: 10_000.0,
            r2: 10_000.0,
            r3: 0.0050,
        }
    }
}

impl ConverterParams {
    pub fn validate(&self, prefix: &str) -> Result<(), ModelError> {
        require_positive(&format!("{prefix}.l_henry"), self.l)?;
        require_positive(&format!("{prefix}.c1_farad"), self.c1)?;
        require_positive(&format!("{prefix}.c2_farad"), self.c2)?;
        require_positive(&format!("{prefix}.r1_ohm"), self.r1)?;
        require_positive(&format!("{prefix}.r2_ohm"), self.r2)?;
        require_positive(&format!("{prefix}.r3_ohm"), self.r3)
    }
}

/// Photovoltaic array constants: thermal side plus the single-diode panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PvParams {
    pub n_parallel: f64,
    /// Thermal capacitance per panel, J/K.
    pub c_thermal: f64,
    pub absorptivity: f64,
    /// Panel surface area, m².
    pub area: f64,
    /// Convection coefficient, W/(m²·K).
    pub h_conv: f64,
    pub diode: DiodeParams,
}

impl Default for PvParams {
    fn default() -> Self {
        PvParams {
            n_parallel: 100.0,
            c_thermal: 4580.0,
            absorptivity: 0.7,
            area: 0.8,
            h_conv: 13.39,
            diode: DiodeParams::default(),
        }
    }
}

impl PvParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        require_positive("pv.n_parallel", self.n_parallel)?;
        require_positive("pv.c_thermal_j_per_k", self.c_thermal)?;
        if !(self.absorptivity > 0.0 && self.absorptivity <= 1.0) {
            return Err(ModelError::config(
                "pv.absorptivity",
                format!("must lie in (0, 1], got {}", self.absorptivity),
            ));
        }
        require_positive("pv.area_m2", self.area)?;
        require_positive("pv.h_conv_w_per_m2k", self.h_conv)?;
        self.diode.validate("pv")
    }
}

/// DC bus constants.
#[derive(Debug, Clone, PartialEq)]
pub struct BusParams {
    pub l1: f64,
    pub l2: f64,
    pub c: f64,
    pub r1: f64,
    pub r2: f64,
}

impl Default for BusParams {
    fn default() -> Self {
        BusParams {
            l1: 1.0,
            l2: 1.0,
            c: 100.0,
            r1: 0.0001,
            r2: 0.0001,
        }
    }
}

impl BusParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        require_positive("bus.l1_henry", self.l1)?;
        require_positive("bus.l2_henry", self.l2)?;
        require_positive("bus.c_farad", self.c)?;
        require_positive("bus.r1_ohm", self.r1)?;
        require_positive("bus.r2_ohm", self.r2)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MicrogridParams {
    pub battery: BatteryParams,
    pub buck: ConverterParams,
    pub boost: ConverterParams,
    pub pv: PvParams,
    pub bus: BusParams,
}

impl MicrogridParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.battery.validate()?;
        self.buck.validate("buck")?;
        self.boost.validate("boost")?;
        self.pv.validate()?;
        self.bus.validate()
    }
}

fn check_duty(name: &str, d: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&d) {
        Ok(())
    } else {
        Err(ModelError::usage(format!(
            "duty cycle {name} must lie in [0, 1], got {d}"
        )))
    }
}

/// Pack terminal current. Positive current discharges the battery.
pub fn battery_current(p: &BatteryParams, soc: f64, q2: f64, v_bat: f64) -> f64 {
    (p.n_parallel / p.r1) * (p.voc.eval(soc) + q2 / p.c2 - v_bat / p.n_series)
}

/// SOC and relaxation-charge derivatives.
pub fn battery_derivatives(p: &BatteryParams, soc: f64, q2: f64, v_bat: f64) -> (f64, f64) {
    let i_bat = battery_current(p, soc, q2, v_bat);
    let d_soc = -i_bat / (p.n_parallel * p.charge_capacity());
    let d_q2 = -i_bat / p.n_parallel - q2 / (p.r2 * p.c2);
    (d_soc, d_q2)
}

fn buck_derivatives_raw(
    p: &ConverterParams,
    i_l: f64,
    v_bat: f64,
    v_c2: f64,
    d_sd: f64,
    i_bat: f64,
    i_l2_bus: f64,
) -> (f64, f64, f64) {
    let di_l = (d_sd * v_bat - p.r3 * i_l - v_c2) / p.l;
    let dv_bat = (i_bat - d_sd * i_l - v_bat / p.r1) / p.c1;
    let dv_c2 = (i_l - i_l2_bus - v_c2 / p.r2) / p.c2;
    (di_l, dv_bat, dv_c2)
}

/// Buck converter state derivatives `(dI_L, dV_bat, dV_c2)`.
pub fn buck_derivatives(
    p: &ConverterParams,
    i_l: f64,
    v_bat: f64,
    v_c2: f64,
    d_sd: f64,
    i_bat: f64,
    i_l2_bus: f64,
) -> Result<(f64, f64, f64), ModelError> {
    check_duty("D_sd", d_sd)?;
    Ok(buck_derivatives_raw(p, i_l, v_bat, v_c2, d_sd, i_bat, i_l2_bus))
}

fn boost_derivatives_raw(
    p: &ConverterParams,
    pv: &PvParams,
    i_l: f64,
    v_pv: f64,
    v_c2: f64,
    d_su: f64,
    i_pv: f64,
    i_l1_bus: f64,
) -> (f64, f64, f64) {
    let di_l = (v_pv - p.r3 * i_l - d_su * v_c2) / p.l;
    let dv_pv = (pv.n_parallel * i_pv - i_l - v_pv / p.r1) / p.c1;
    let dv_c2 = (d_su * i_l - i_l1_bus - v_c2 / p.r2) / p.c2;
    (di_l, dv_pv, dv_c2)
}

/// Boost converter state derivatives `(dI_L, dV_pv, dV_c2)`. Solves the
/// panel current internally.
#[allow(clippy::too_many_arguments)]
pub fn boost_derivatives(
    p: &ConverterParams,
    pv: &PvParams,
    i_l: f64,
    v_pv: f64,
    v_c2: f64,
    d_su: f64,
    g: f64,
    t_pv: f64,
    i_l1_bus: f64,
) -> Result<(f64, f64, f64), ModelError> {
    check_duty("D_su", d_su)?;
    let i_pv = pv_current(&pv.diode, v_pv, t_pv, g)?;
    Ok(boost_derivatives_raw(p, pv, i_l, v_pv, v_c2, d_su, i_pv, i_l1_bus))
}

/// Panel temperature derivative, K/s.
pub fn pv_thermal_derivative(
    p: &PvParams,
    t_pv: f64,
    g: f64,
    t_inf: f64,
    v_pv: f64,
) -> Result<f64, ModelError> {
    let i_pv = pv_current(&p.diode, v_pv, t_pv, g)?;
    Ok(pv_thermal_derivative_raw(p, t_pv, g, t_inf, v_pv, i_pv))
}

fn pv_thermal_derivative_raw(p: &PvParams, t_pv: f64, g: f64, t_inf: f64, v_pv: f64, i_pv: f64) -> f64 {
    (p.absorptivity * p.area * g - p.h_conv * p.area * (t_pv - t_inf) - v_pv * i_pv) / p.c_thermal
}

fn bus_derivatives_raw(
    p: &BusParams,
    i_l1: f64,
    i_l2: f64,
    v_bus: f64,
    v_c2_su: f64,
    v_c2_sd: f64,
    d_load: f64,
    i_o: f64,
    i_loss: f64,
) -> (f64, f64, f64) {
    let di_l1 = (v_c2_su - v_bus - p.r1 * i_l1) / p.l1;
    let di_l2 = (v_c2_sd - v_bus - p.r2 * i_l2) / p.l2;
    let dv_bus = (i_l1 + i_l2 - i_loss - d_load * i_o) / p.c;
    (di_l1, di_l2, dv_bus)
}

/// Bus state derivatives `(dI_L1, dI_L2, dV_bus)`.
#[allow(clippy::too_many_arguments)]
pub fn bus_derivatives(
    p: &BusParams,
    i_l1: f64,
    i_l2: f64,
    v_bus: f64,
    v_c2_su: f64,
    v_c2_sd: f64,
    d_load: f64,
    i_o: f64,
    i_loss: f64,
) -> Result<(f64, f64, f64), ModelError> {
    check_duty("D_load", d_load)?;
    Ok(bus_derivatives_raw(p, i_l1, i_l2, v_bus, v_c2_su, v_c2_sd, d_load, i_o, i_loss))
}

/// Full twelve-state derivative. Exposed for oracles and direct use; the
/// assembled [`ContinuousModel`] wraps this.
///
/// Duty cycles are evaluated as given, without clamping: the averaged
/// converter equations are algebraic in the duty cycle, so the tiny
/// excursions made by finite-difference probing stay exact. Range
/// enforcement happens at the configuration boundary instead.
pub fn microgrid_derivative(p: &MicrogridParams, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
    use state_index::*;
    let (d_sd, d_su, d_load) = (u[0], u[1], u[2]);
    let (g, t_inf, i_o, i_loss) = (d[0], d[1], d[2], d[3]);

    let i_bat = battery_current(&p.battery, x[SOC], x[Q2_BAT], x[V_BAT]);
    let (d_soc, d_q2) = battery_derivatives(&p.battery, x[SOC], x[Q2_BAT], x[V_BAT]);
    out[SOC] = d_soc;
    out[Q2_BAT] = d_q2;

    let (di_l_sd, dv_bat, dv_c2_sd) = buck_derivatives_raw(
        &p.buck, x[I_L_SD], x[V_BAT], x[V_C2_SD], d_sd, i_bat, x[I_L2_BUS],
    );
    out[I_L_SD] = di_l_sd;
    out[V_BAT] = dv_bat;
    out[V_C2_SD] = dv_c2_sd;

    // One diode solve shared by the thermal and boost blocks.
    let i_pv = pv::pv_current_or_nan(&p.pv.diode, x[V_PV], x[T_PV], g);
    out[T_PV] = pv_thermal_derivative_raw(&p.pv, x[T_PV], g, t_inf, x[V_PV], i_pv);

    let (di_l_su, dv_pv, dv_c2_su) = boost_derivatives_raw(
        &p.boost, &p.pv, x[I_L_SU], x[V_PV], x[V_C2_SU], d_su, i_pv, x[I_L1_BUS],
    );
    out[I_L_SU] = di_l_su;
    out[V_PV] = dv_pv;
    out[V_C2_SU] = dv_c2_su;

    let (di_l1, di_l2, dv_bus) = bus_derivatives_raw(
        &p.bus, x[I_L1_BUS], x[I_L2_BUS], x[V_BUS], x[V_C2_SU], x[V_C2_SD], d_load, i_o, i_loss,
    );
    out[I_L1_BUS] = di_l1;
    out[I_L2_BUS] = di_l2;
    out[V_BUS] = dv_bus;
}

pub fn microgrid_signals() -> (Vec<Signal>, Vec<Signal>, Vec<Signal>) {
    let states = vec![
        Signal::state("SOC", "-"),
        Signal::state("q2_bat", "C"),
        Signal::state("I_L_sd", "A"),
        Signal::state("V_bat", "V"),
        Signal::state("V_c2_sd", "V"),
        Signal::state("T_pv", "°C"),
        Signal::state("I_L_su", "A"),
        Signal::state("V_pv", "V"),
        Signal::state("V_c2_su", "V"),
        Signal::state("I_L1_bus", "A"),
        Signal::state("I_L2_bus", "A"),
        Signal::state("V_bus", "V"),
    ];
    let controls = vec![
        Signal::control("D_sd", "-"),
        Signal::control("D_su", "-"),
        Signal::control("D_load", "-"),
    ];
    let disturbances = vec![
        Signal::disturbance("G", "W/m²"),
        Signal::disturbance("T_inf", "°C"),
        Signal::disturbance("I_O", "A"),
        Signal::disturbance("I_loss", "A"),
    ];
    (states, controls, disturbances)
}

/// Assembles the twelve-state continuous model with signals named after the
/// circuit quantities.
pub fn build_microgrid(params: MicrogridParams) -> Result<ContinuousModel, ModelError> {
    params.validate()?;
    let (states, controls, disturbances) = microgrid_signals();
    let p = Arc::new(params);
    let derivative: StepFn = Arc::new(move |x, u, d, out| {
        microgrid_derivative(&p, x, u, d, out);
    });
    Ok(ContinuousModel::new(
        "mg",
        SignalSet::new(states)?,
        SignalSet::new(controls)?,
        SignalSet::new(disturbances)?,
        derivative,
    ))
}
