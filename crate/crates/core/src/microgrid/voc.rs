//! Battery open-circuit voltage as a function of state of charge.

use crate::error::ModelError;

/// Open-circuit voltage curve, either a cubic polynomial in SOC or a
/// breakpoint table with linear interpolation. The default cubic spans
/// 3.0 V at SOC 0 to 4.2 V at SOC 1 and is strictly increasing, so it
/// extrapolates sanely when a solver probes slightly outside [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum VocCurve {
    /// `c[0] + c[1]*s + c[2]*s^2 + c[3]*s^3`
    Cubic { c: [f64; 4] },
    /// Sorted (SOC, volts) breakpoints; linear interpolation inside,
    /// end-segment extrapolation outside.
    Table { soc: Vec<f64>, volts: Vec<f64> },
}

impl Default for VocCurve {
    fn default() -> Self {
        VocCurve::Cubic {
            c: [3.0, 1.65, -1.5, 1.05],
        }
    }
}

impl VocCurve {
    pub fn from_breakpoints(points: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if points.len() < 2 {
            return Err(ModelError::config(
                "battery.voc_table",
                "needs at least two breakpoints",
            ));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(ModelError::config(
                    "battery.voc_table",
                    format!("SOC breakpoints must be strictly increasing near {}", w[1].0),
                ));
            }
        }
        let curve = VocCurve::Table {
            soc: points.iter().map(|p| p.0).collect(),
            volts: points.iter().map(|p| p.1).collect(),
        };
        curve.validate()?;
        Ok(curve)
    }

    /// Monotone non-decreasing on [0, 1]. The cubic is checked on a dense
    /// grid, the table pairwise.
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            VocCurve::Cubic { c } => {
                for v in c {
                    if !v.is_finite() {
                        return Err(ModelError::config("battery.voc_cubic", "non-finite coefficient"));
                    }
                }
                let n = 1000;
                for i in 0..n {
                    let s = i as f64 / n as f64;
                    // derivative c1 + 2 c2 s + 3 c3 s^2
                    let d = c[1] + 2.0 * c[2] * s + 3.0 * c[3] * s * s;
                    if d < 0.0 {
                        return Err(ModelError::config(
                            "battery.voc_cubic",
                            format!("curve decreases at SOC {s:.3}; it must be monotone on [0, 1]"),
                        ));
                    }
                }
                Ok(())
            }
            VocCurve::Table { soc, volts } => {
                for w in volts.windows(2) {
                    if w[1] < w[0] {
                        return Err(ModelError::config(
                            "battery.voc_table",
                            "voltages must be monotone non-decreasing",
                        ));
                    }
                }
                if soc.first().copied().unwrap_or(0.0) > 0.0 || soc.last().copied().unwrap_or(1.0) < 1.0
                {
                    return Err(ModelError::config(
                        "battery.voc_table",
                        "breakpoints must cover [0, 1]",
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            VocCurve::Cubic { c } => c[0] + s * (c[1] + s * (c[2] + s * c[3])),
            VocCurve::Table { soc, volts } => {
                let n = soc.len();
                if s <= soc[0] {
                    let slope = (volts[1] - volts[0]) / (soc[1] - soc[0]);
                    return volts[0] + slope * (s - soc[0]);
                }
                if s >= soc[n - 1] {
                    let slope = (volts[n - 1] - volts[n - 2]) / (soc[n - 1] - soc[n - 2]);
                    return volts[n - 1] + slope * (s - soc[n - 1]);
                }
                let k = soc.partition_point(|&p| p <= s) - 1;
                let t = (s - soc[k]) / (soc[k + 1] - soc[k]);
                volts[k] + t * (volts[k + 1] - volts[k])
            }
        }
    }
}
