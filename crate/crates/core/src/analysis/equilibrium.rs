//! Fixed-point solving: damped Newton on `G(x) = F(x, ū, d̄) - x` with an
//! optional simulation pre-roll to move the initial guess into the basin.

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::model::DiscreteSystem;

use super::jacobian::{jacobian_states, FdOptions};

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    /// Convergence threshold on the infinity norm of `F(x) - x`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Line-search halvings per Newton step.
    pub max_halvings: usize,
    /// Steps simulated from the initial guess before Newton starts.
    pub pre_roll_steps: usize,
    pub fd: FdOptions,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            tolerance: 1e-9,
            max_iterations: 300,
            max_halvings: 30,
            pre_roll_steps: 20_000,
            fd: FdOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub x_bar: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub d_bar: Vec<f64>,
    /// `max_i |F(x̄)_i - x̄_i|`
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn residual<S: DiscreteSystem + ?Sized>(
    sys: &S,
    x: &[f64],
    u: &[f64],
    d: &[f64],
    g: &mut [f64],
) -> Result<f64, usize> {
    sys.step_into(x, u, d, g)?;
    let mut norm = 0.0f64;
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi -= xi;
        norm = norm.max(gi.abs());
    }
    Ok(norm)
}

/// Solves `jac * delta = rhs`, reporting rank deficiency with the near-null
/// direction when the matrix is singular.
fn newton_direction(
    jac: DMatrix<f64>,
    rhs: &DVector<f64>,
    name_of: impl Fn(usize) -> String,
) -> Result<DVector<f64>, ModelError> {
    match jac.clone().lu().solve(rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => Ok(sol),
        _ => {
            let svd = jac.svd(true, true);
            let smin = svd
                .singular_values
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let v_t = svd.v_t.as_ref().expect("svd requested v");
            let null_dir = v_t.row(v_t.nrows() - 1);
            let mut top: Vec<(usize, f64)> = null_dir
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .collect();
            top.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let names: Vec<String> = top
                .iter()
                .take(3)
                .map(|(i, w)| format!("{} ({w:.3})", name_of(*i)))
                .collect();
            Err(ModelError::numerical(format!(
                "Newton matrix is singular (smallest singular value {smin:.3e}); \
                 near-null direction dominated by {}",
                names.join(", ")
            )))
        }
    }
}

/// Finds `x̄` with `F(x̄, ū, d̄) = x̄`.
///
/// Newton direction from the finite-difference Jacobian `A - I`, backtracking
/// line search on the residual norm, warm-started by simulating the system
/// for `pre_roll_steps`. Non-convergence returns the best iterate flagged
/// rather than an error; a singular Newton matrix is reported with its
/// near-null direction.
pub fn find_equilibrium<S: DiscreteSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    u_bar: &[f64],
    d_bar: &[f64],
    opts: &EquilibriumOptions,
) -> Result<EquilibriumResult, ModelError> {
    let n = sys.state_dim();
    if x0.len() != n {
        return Err(ModelError::usage(format!(
            "initial guess has {} entries, system has {n} states",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::usage("initial guess must be finite"));
    }

    // pre-roll: follow the flow to get basin-adjacent
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..opts.pre_roll_steps {
        if sys.step_into(&x, u_bar, d_bar, &mut next).is_err() {
            break; // keep the last finite iterate
        }
        std::mem::swap(&mut x, &mut next);
    }

    let mut g = vec![0.0; n];
    let mut norm = match residual(sys, &x, u_bar, d_bar, &mut g) {
        Ok(v) => v,
        Err(i) => {
            return Err(ModelError::Divergence {
                signal: sys.state_name(i),
            })
        }
    };

    let mut iterations = 0;
    while norm > opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        let a = jacobian_states(sys, &x, u_bar, d_bar, &opts.fd)?;
        let jac = &a - DMatrix::identity(n, n);
        let rhs = DVector::from_iterator(n, g.iter().map(|v| -v));
        let delta = newton_direction(jac, &rhs, |i| sys.state_name(i))?;

        // backtracking on the residual norm
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut trial = vec![0.0; n];
        for _ in 0..=opts.max_halvings {
            for i in 0..n {
                trial[i] = x[i] + alpha * delta[i];
            }
            match residual(sys, &trial, u_bar, d_bar, &mut g) {
                Ok(new_norm) if new_norm < norm => {
                    x.copy_from_slice(&trial);
                    norm = new_norm;
                    accepted = true;
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        if !accepted {
            // restore g to the current iterate before reporting
            let _ = residual(sys, &x, u_bar, d_bar, &mut g);
            break;
        }
    }

    Ok(EquilibriumResult {
        x_bar: x,
        u_bar: u_bar.to_vec(),
        d_bar: d_bar.to_vec(),
        residual_norm: norm,
        iterations,
        converged: norm <= opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubsystemModel;
    use crate::signal::{Signal, SignalSet};
    use std::sync::Arc;

    fn contraction() -> SubsystemModel {
        SubsystemModel::new(
            "c",
            SignalSet::new(vec![Signal::state("x", "-"), Signal::state("y", "-")]).unwrap(),
            SignalSet::empty(),
            SignalSet::empty(),
            SignalSet::empty(),
            1.0,
            Arc::new(|x, _u, _d, out| {
                out[0] = 0.5 * x[0] + 1.0;
                out[1] = 0.25 * x[1] - 0.5;
            }),
            Arc::new(|_x, _out| {}),
        )
        .unwrap()
    }

    #[test]
    fn linear_contraction_fixed_point() {
        let sys = contraction();
        let res = find_equilibrium(
            &sys,
            &[10.0, -10.0],
            &[],
            &[],
            &EquilibriumOptions {
                pre_roll_steps: 0,
                ..EquilibriumOptions::default()
            },
        )
        .unwrap();
        assert!(res.converged);
        assert!((res.x_bar[0] - 2.0).abs() < 1e-9);
        assert!((res.x_bar[1] + 2.0 / 3.0).abs() < 1e-9);
        assert!(res.residual_norm < 1e-9);
    }

    #[test]
    fn pure_decay_equilibrium_is_origin() {
        let sys = SubsystemModel::new(
            "d",
            SignalSet::new(vec![Signal::state("x", "-")]).unwrap(),
            SignalSet::empty(),
            SignalSet::empty(),
            SignalSet::empty(),
            1.0,
            Arc::new(|x, _u, _d, out| out[0] = 0.5 * x[0]),
            Arc::new(|_x, _out| {}),
        )
        .unwrap();
        let res =
            find_equilibrium(&sys, &[3.0], &[], &[], &EquilibriumOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.x_bar[0].abs() < 1e-9);
    }

    #[test]
    fn exactly_singular_direction_reports_near_null_states() {
        let jac = DMatrix::<f64>::zeros(2, 2);
        let rhs = DVector::from_vec(vec![-1.0, 0.5]);
        let err = newton_direction(jac, &rhs, |i| format!("s{i}")).unwrap_err();
        match err {
            ModelError::Numerical(msg) => {
                assert!(msg.contains("singular"), "{msg}");
                assert!(msg.contains("s0") || msg.contains("s1"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shift_map_has_no_fixed_point_and_is_flagged() {
        // x -> x + 1 has no equilibrium; the Jacobian A - I is singular up
        // to finite-difference rounding, so the solver either diagnoses the
        // singularity or returns its best iterate flagged as unconverged.
        let sys = SubsystemModel::new(
            "i",
            SignalSet::new(vec![Signal::state("w", "-")]).unwrap(),
            SignalSet::empty(),
            SignalSet::empty(),
            SignalSet::empty(),
            1.0,
            Arc::new(|x, _u, _d, out| out[0] = x[0] + 1.0),
            Arc::new(|_x, _out| {}),
        )
        .unwrap();
        let opts = EquilibriumOptions {
            pre_roll_steps: 0,
            max_iterations: 20,
            ..EquilibriumOptions::default()
        };
        match find_equilibrium(&sys, &[0.0], &[], &[], &opts) {
            Ok(res) => assert!(!res.converged),
            Err(ModelError::Numerical(msg)) => assert!(msg.contains("singular"), "{msg}"),
            Err(other) => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_guess_is_usage_error() {
        let sys = contraction();
        assert!(find_equilibrium(&sys, &[1.0], &[], &[], &EquilibriumOptions::default()).is_err());
        assert!(find_equilibrium(
            &sys,
            &[f64::NAN, 0.0],
            &[],
            &[],
            &EquilibriumOptions::default()
        )
        .is_err());
    }
}
