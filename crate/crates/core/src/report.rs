//! Plot-ready CSV writers with fixed headers and deterministic float
//! formatting (17 significant digits, no timestamps), so identical runs
//! produce byte-identical files.

use std::io::{self, Write};

use crate::analysis::{
    ControllabilityReport, EquilibriumResult, SampledDecrease, StabilityReport, SweepTable,
    Trajectory,
};

/// 17 significant digits — enough to round-trip any f64 exactly.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// `equilibrium.csv`: one row per state, `signal,value,unit`.
pub fn write_equilibrium_csv<W: Write>(
    w: &mut W,
    names: &[String],
    units: &[String],
    eq: &EquilibriumResult,
) -> io::Result<()> {
    writeln!(w, "signal,value,unit")?;
    for ((name, unit), value) in names.iter().zip(units).zip(&eq.x_bar) {
        writeln!(w, "{name},{},{unit}", fmt_float(*value))?;
    }
    Ok(())
}

/// `eigenvalues.csv`: `re,im,magnitude,index`, sorted by descending
/// magnitude.
pub fn write_eigenvalues_csv<W: Write>(w: &mut W, report: &StabilityReport) -> io::Result<()> {
    writeln!(w, "re,im,magnitude,index")?;
    for (i, e) in report.eigenvalues.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{i}",
            fmt_float(e.re),
            fmt_float(e.im),
            fmt_float(e.norm())
        )?;
    }
    Ok(())
}

/// `sweep.csv`: `gamma,spectral_radius,n_outside,converged`.
pub fn write_sweep_csv<W: Write>(w: &mut W, table: &SweepTable) -> io::Result<()> {
    writeln!(w, "gamma,spectral_radius,n_outside,converged")?;
    for row in &table.rows {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_float(row.gamma),
            fmt_float(row.spectral_radius),
            row.n_outside,
            row.converged
        )?;
    }
    Ok(())
}

/// `sweep_eigenvalues.csv`: the tracked spectrum per sweep point.
pub fn write_sweep_eigenvalues_csv<W: Write>(w: &mut W, table: &SweepTable) -> io::Result<()> {
    writeln!(w, "gamma,index,re,im,magnitude")?;
    for row in &table.rows {
        for (i, e) in row.eigenvalues.iter().enumerate() {
            writeln!(
                w,
                "{},{i},{},{},{}",
                fmt_float(row.gamma),
                fmt_float(e.re),
                fmt_float(e.im),
                fmt_float(e.norm())
            )?;
        }
    }
    Ok(())
}

/// `trajectory.csv`: `step,time_s`, one column per state signal, then one
/// column per coupling receiver (reconstructed values).
pub fn write_trajectory_csv<W: Write>(
    w: &mut W,
    state_names: &[String],
    coupling_names: &[String],
    traj: &Trajectory,
) -> io::Result<()> {
    write!(w, "step,time_s")?;
    for n in state_names {
        write!(w, ",{n}")?;
    }
    for n in coupling_names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (k, (state, coupling)) in traj.states.iter().zip(&traj.couplings).enumerate() {
        write!(w, "{k},{}", fmt_float(k as f64 * traj.dt))?;
        for v in state {
            write!(w, ",{}", fmt_float(*v))?;
        }
        for v in coupling {
            write!(w, ",{}", fmt_float(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// `controllability.csv`: the singular-value spectrum of the
/// controllability matrix, `index,singular_value`.
pub fn write_controllability_csv<W: Write>(
    w: &mut W,
    report: &ControllabilityReport,
) -> io::Result<()> {
    writeln!(w, "index,singular_value")?;
    for (i, s) in report.singular_values.iter().enumerate() {
        writeln!(w, "{i},{}", fmt_float(*s))?;
    }
    Ok(())
}

/// `lyapunov.csv`: one row summarizing the certificate and the sampled
/// decrease check.
pub fn write_lyapunov_csv<W: Write>(
    w: &mut W,
    certified: bool,
    detail: &str,
    sampled: Option<&SampledDecrease>,
) -> io::Result<()> {
    writeln!(
        w,
        "certified,detail,samples,violations_at_tried_radius,radius_tried,verified_radius"
    )?;
    match sampled {
        Some(s) => writeln!(
            w,
            "{certified},{detail},{},{},{},{}",
            s.samples,
            s.violations,
            fmt_float(s.radius_tried),
            s.verified_radius.map(fmt_float).unwrap_or_else(|| "none".into())
        ),
        None => writeln!(w, "{certified},{detail},0,0,none,none"),
    }
}
