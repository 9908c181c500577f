//! Sensitivity sweep over the coupling slope gamma: re-compose, re-solve
//! the equilibrium (warm-started along the sweep), and track the spectrum.

use crate::error::ModelError;
use crate::parallel::map_indexed;
use crate::scenario::Scenario;

use super::equilibrium::{find_equilibrium, EquilibriumOptions, EquilibriumResult};
use super::jacobian::jacobian_states;
use super::stability::{eigen_report, max_paired_distance, Complex64};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub equilibrium: EquilibriumOptions,
    pub tol_margin: f64,
    /// Parallelize the per-point linearization/eigenvalue phase. The
    /// equilibrium chain itself is warm-started point to point and stays
    /// sequential.
    pub parallel: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            equilibrium: EquilibriumOptions::default(),
            tol_margin: 1e-9,
            parallel: cfg!(feature = "parallel"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub gamma: f64,
    pub converged: bool,
    pub residual: f64,
    pub spectral_radius: f64,
    pub n_outside: usize,
    pub eigenvalues: Vec<Complex64>,
    pub x_bar: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Largest nearest-neighbor eigenvalue jump between adjacent converged
    /// points — the continuity audit for the sweep.
    pub max_paired_jump: f64,
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Runs the sweep. Per-point failures are recorded in their row and the
/// sweep continues from the last good warm start.
pub fn gamma_sweep(
    scenario: &Scenario,
    gammas: &[f64],
    opts: &SweepOptions,
) -> Result<SweepTable, ModelError> {
    if gammas.is_empty() {
        return Err(ModelError::usage("gamma sweep needs at least one point"));
    }

    // phase 1: sequential equilibrium chain with warm starts
    struct Solved {
        gamma: f64,
        system: crate::coupling::CoupledSystem,
        eq: Result<EquilibriumResult, String>,
    }
    let mut solved: Vec<Solved> = Vec::with_capacity(gammas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &gamma in gammas {
        let scn = scenario.with_gamma(gamma)?;
        let built = scn.build()?;
        let x0 = warm.clone().unwrap_or_else(|| built.default_initial_state());
        let eq_opts = EquilibriumOptions {
            // warm starts skip the pre-roll after the first point
            pre_roll_steps: if warm.is_some() { 0 } else { opts.equilibrium.pre_roll_steps },
            ..opts.equilibrium.clone()
        };
        let eq = find_equilibrium(&built.system, &x0, &built.u_bar, &built.d_bar, &eq_opts);
        let eq = match eq {
            Ok(r) => {
                if r.converged {
                    warm = Some(r.x_bar.clone());
                }
                Ok(r)
            }
            Err(e) => Err(e.to_string()),
        };
        solved.push(Solved {
            gamma,
            system: built.system,
            eq,
        });
    }

    // phase 2: per-point linearization and spectrum, order-preserving
    let fd = opts.equilibrium.fd;
    let tol = opts.tol_margin;
    let rows: Vec<SweepRow> = map_indexed(opts.parallel, solved.len(), |i| {
        let s = &solved[i];
        match &s.eq {
            Ok(eq) if eq.converged => {
                let report = jacobian_states(&s.system, &eq.x_bar, &eq.u_bar, &eq.d_bar, &fd)
                    .and_then(|a| eigen_report(&a, tol));
                match report {
                    Ok(r) => SweepRow {
                        gamma: s.gamma,
                        converged: true,
                        residual: eq.residual_norm,
                        spectral_radius: r.spectral_radius,
                        n_outside: r.n_outside_unit_circle,
                        eigenvalues: r.eigenvalues,
                        x_bar: eq.x_bar.clone(),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        gamma: s.gamma,
                        converged: false,
                        residual: eq.residual_norm,
                        spectral_radius: f64::NAN,
                        n_outside: 0,
                        eigenvalues: Vec::new(),
                        x_bar: eq.x_bar.clone(),
                        error: Some(e.to_string()),
                    },
                }
            }
            Ok(eq) => SweepRow {
                gamma: s.gamma,
                converged: false,
                residual: eq.residual_norm,
                spectral_radius: f64::NAN,
                n_outside: 0,
                eigenvalues: Vec::new(),
                x_bar: eq.x_bar.clone(),
                error: Some("equilibrium did not converge".into()),
            },
            Err(e) => SweepRow {
                gamma: s.gamma,
                converged: false,
                residual: f64::NAN,
                spectral_radius: f64::NAN,
                n_outside: 0,
                eigenvalues: Vec::new(),
                x_bar: Vec::new(),
                error: Some(e.clone()),
            },
        }
    });

    let mut max_jump = 0.0f64;
    for pair in rows.windows(2) {
        if pair[0].converged && pair[1].converged {
            max_jump = max_jump.max(max_paired_distance(&pair[0].eigenvalues, &pair[1].eigenvalues));
        }
    }

    Ok(SweepTable {
        rows,
        max_paired_jump: max_jump,
    })
}
