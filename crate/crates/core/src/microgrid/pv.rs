//! Single-diode photovoltaic panel model.
//!
//! The terminal current solves the implicit relation
//!
//! ```text
//! I = Iph(T, G) - I0(T) * (exp((V + I*Rs) / (a*Ns*Vt)) - 1) - (V + I*Rs) / Rp
//! ```
//!
//! with photocurrent proportional to irradiance and both short-circuit
//! current and open-circuit voltage shifted linearly with temperature. The
//! residual is strictly decreasing in `I`, so a damped Newton iteration with
//! a bisection fallback always lands on the unique root.

use crate::error::{require_positive, ModelError};

/// K/eV reciprocal: Boltzmann constant over elementary charge, in V/K.
const K_OVER_Q: f64 = 8.617333262e-5;
const C_TO_K: f64 = 273.15;
/// Largest exponent fed to `exp`; beyond this double precision overflows.
const EXP_CLAMP: f64 = 700.0;

fn exp_clamped(x: f64) -> f64 {
    x.min(EXP_CLAMP).exp()
}

fn expm1_clamped(x: f64) -> f64 {
    x.min(EXP_CLAMP).exp_m1()
}

/// Single-diode constants at reference conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiodeParams {
    /// Short-circuit current at reference irradiance/temperature, A.
    pub isc_ref: f64,
    /// Open-circuit voltage at reference conditions, V.
    pub voc_ref: f64,
    /// Short-circuit current temperature coefficient, A/K.
    pub k_i: f64,
    /// Open-circuit voltage temperature coefficient, V/K.
    pub k_v: f64,
    /// Diode ideality factor.
    pub ideality: f64,
    /// Series cell count per panel.
    pub cells_series: f64,
    /// Series resistance, ohms.
    pub r_series: f64,
    /// Shunt resistance, ohms.
    pub r_shunt: f64,
    /// Reference irradiance, W/m².
    pub g_ref: f64,
    /// Reference temperature, °C.
    pub t_ref_c: f64,
}

impl Default for DiodeParams {
    fn default() -> Self {
        // A small-panel fit: ~26 V near maximum power at 1000 W/m², 25 °C.
        DiodeParams {
            isc_ref: 3.6,
            voc_ref: 33.0,
            k_i: 0.0015,
            k_v: -0.123,
            ideality: 1.3,
            cells_series: 54.0,
            r_series: 0.2,
            r_shunt: 400.0,
            g_ref: 1000.0,
            t_ref_c: 25.0,
        }
    }
}

impl DiodeParams {
    pub fn validate(&self, prefix: &str) -> Result<(), ModelError> {
        require_positive(&format!("{prefix}.isc_ref_a"), self.isc_ref)?;
        require_positive(&format!("{prefix}.voc_ref_v"), self.voc_ref)?;
        require_positive(&format!("{prefix}.ideality"), self.ideality)?;
        require_positive(&format!("{prefix}.cells_series"), self.cells_series)?;
        require_positive(&format!("{prefix}.r_series_ohm"), self.r_series)?;
        require_positive(&format!("{prefix}.r_shunt_ohm"), self.r_shunt)?;
        require_positive(&format!("{prefix}.g_ref_w_per_m2"), self.g_ref)?;
        if !self.k_i.is_finite() || !self.k_v.is_finite() || !self.t_ref_c.is_finite() {
            return Err(ModelError::config(
                prefix,
                "temperature coefficients and reference temperature must be finite",
            ));
        }
        Ok(())
    }

    /// Modified thermal voltage `a * Ns * k * T / q` at temperature `t_c` (°C).
    fn n_vt(&self, t_c: f64) -> f64 {
        self.ideality * self.cells_series * K_OVER_Q * (t_c + C_TO_K)
    }

    /// Light-generated current at temperature `t_c` (°C) and irradiance `g`.
    pub fn photocurrent(&self, t_c: f64, g: f64) -> f64 {
        (self.isc_ref + self.k_i * (t_c - self.t_ref_c)) * g / self.g_ref
    }

    fn saturation_current(&self, t_c: f64) -> f64 {
        let dt = t_c - self.t_ref_c;
        (self.isc_ref + self.k_i * dt) / expm1_clamped((self.voc_ref + self.k_v * dt) / self.n_vt(t_c))
    }

    fn residual(&self, i: f64, v: f64, t_c: f64, g: f64) -> f64 {
        let vd = v + i * self.r_series;
        self.photocurrent(t_c, g) - self.saturation_current(t_c) * expm1_clamped(vd / self.n_vt(t_c))
            - vd / self.r_shunt
            - i
    }

    fn residual_slope(&self, i: f64, v: f64, t_c: f64) -> f64 {
        let n_vt = self.n_vt(t_c);
        let vd = v + i * self.r_series;
        -self.saturation_current(t_c) * exp_clamped(vd / n_vt) * self.r_series / n_vt
            - self.r_series / self.r_shunt
            - 1.0
    }
}

/// Solves the implicit diode equation for the panel current at terminal
/// voltage `v` (V), panel temperature `t_c` (°C) and irradiance `g` (W/m²).
///
/// Negative irradiance is rejected; the voltage is not range-checked because
/// equilibrium solvers legitimately probe outside the first quadrant. The
/// absolute residual tolerance is 1e-10 A.
pub fn pv_current(p: &DiodeParams, v: f64, t_c: f64, g: f64) -> Result<f64, ModelError> {
    if g < 0.0 || !g.is_finite() {
        return Err(ModelError::usage(format!(
            "irradiance must be non-negative and finite, got {g}"
        )));
    }
    if !v.is_finite() || !t_c.is_finite() {
        return Err(ModelError::usage("voltage and temperature must be finite"));
    }
    if t_c + C_TO_K <= 0.0 {
        return Err(ModelError::numerical(format!(
            "panel temperature {t_c} °C is at or below absolute zero"
        )));
    }

    const TOL: f64 = 1e-10;

    // Explicit estimate ignoring the series resistance.
    let mut i = p.photocurrent(t_c, g)
        - p.saturation_current(t_c) * expm1_clamped(v / p.n_vt(t_c))
        - v / p.r_shunt;
    if !i.is_finite() {
        i = 0.0;
    }

    let mut r = p.residual(i, v, t_c, g);
    for _ in 0..60 {
        if r.abs() <= TOL {
            return Ok(i);
        }
        let slope = p.residual_slope(i, v, t_c);
        if !slope.is_finite() || slope >= 0.0 {
            break;
        }
        let mut step = -r / slope;
        // Damping keeps the iterate out of the exponential blow-up region.
        let cap = 10.0 + i.abs();
        if step.abs() > cap {
            step = step.signum() * cap;
        }
        let i_next = i + step;
        let r_next = p.residual(i_next, v, t_c, g);
        if !r_next.is_finite() {
            break;
        }
        i = i_next;
        r = r_next;
    }
    if r.abs() <= TOL {
        return Ok(i);
    }

    // Bisection fallback. The residual is strictly decreasing in `i`, so a
    // sign change brackets the unique root.
    let mut lo = i.min(0.0) - 1.0;
    let mut hi = i.max(p.photocurrent(t_c, g)) + 1.0;
    let mut width = hi - lo;
    for _ in 0..80 {
        if p.residual(lo, v, t_c, g) > 0.0 {
            break;
        }
        lo -= width;
        width *= 2.0;
    }
    let mut width = hi - lo;
    for _ in 0..80 {
        if p.residual(hi, v, t_c, g) < 0.0 {
            break;
        }
        hi += width;
        width *= 2.0;
    }
    let (mut r_lo, r_hi) = (p.residual(lo, v, t_c, g), p.residual(hi, v, t_c, g));
    if !(r_lo > 0.0 && r_hi < 0.0) {
        return Err(ModelError::numerical(format!(
            "diode current solve failed to bracket a root at V={v}, T={t_c}, G={g} (residual {r:.3e})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r_mid = p.residual(mid, v, t_c, g);
        if r_mid.abs() <= TOL {
            return Ok(mid);
        }
        if r_mid > 0.0 {
            lo = mid;
            r_lo = r_mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    let i = 0.5 * (lo + hi);
    let r = p.residual(i, v, t_c, g);
    if r.abs() <= 1e-8 {
        // Root is pinned to machine precision in `i` even though the residual
        // tolerance was not met (steep exponential branch).
        let _ = r_lo;
        return Ok(i);
    }
    Err(ModelError::numerical(format!(
        "diode current solve did not converge at V={v}, T={t_c}, G={g} (residual {r:.3e})"
    )))
}

/// Infallible wrapper used inside derivative closures: a solver failure
/// surfaces as NaN, which the stepping layer reports as a divergence.
pub(crate) fn pv_current_or_nan(p: &DiodeParams, v: f64, t_c: f64, g: f64) -> f64 {
    pv_current(p, v, t_c, g).unwrap_or(f64::NAN)
}
