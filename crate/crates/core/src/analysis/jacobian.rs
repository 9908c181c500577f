//! Central finite-difference linearization.

use nalgebra::DMatrix;

use crate::error::ModelError;
use crate::model::DiscreteSystem;
use crate::parallel::map_indexed;

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    /// Relative step: each probe uses `epsilon * max(1, |x_i|)`.
    pub epsilon: f64,
    pub parallel: bool,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            epsilon: 1e-6,
            parallel: cfg!(feature = "parallel"),
        }
    }
}

/// Discrete-time linearization `x_k ≈ A (x - x̄) + B (u - ū) + F(x̄, ū, d̄)`.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
}

fn fd_column<S: DiscreteSystem + ?Sized>(
    sys: &S,
    x: &[f64],
    u: &[f64],
    d: &[f64],
    col: usize,
    vary_state: bool,
    epsilon: f64,
) -> Result<Vec<f64>, String> {
    let n = sys.state_dim();
    let base = if vary_state { x[col] } else { u[col] };
    let h = epsilon * base.abs().max(1.0);
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    let mut up = u.to_vec();
    let mut um = u.to_vec();
    if vary_state {
        xp[col] = base + h;
        xm[col] = base - h;
    } else {
        up[col] = base + h;
        um[col] = base - h;
    }
    let name = if vary_state {
        sys.state_name(col)
    } else {
        sys.control_name(col)
    };
    sys.step_into(&xp, &up, d, &mut plus)
        .map_err(|i| format!("probing column `{name}` diverged in `{}`", sys.state_name(i)))?;
    sys.step_into(&xm, &um, d, &mut minus)
        .map_err(|i| format!("probing column `{name}` diverged in `{}`", sys.state_name(i)))?;
    let inv = 0.5 / h;
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| (p - m) * inv)
        .collect())
}

/// Central differences column by column, for both the state Jacobian `A`
/// and the input Jacobian `B`. A divergence during probing is reported with
/// the offending column.
pub fn jacobian_fd<S: DiscreteSystem + ?Sized>(
    sys: &S,
    x_bar: &[f64],
    u_bar: &[f64],
    d_bar: &[f64],
    opts: &FdOptions,
) -> Result<LinearizedSystem, ModelError> {
    let a = jacobian_states(sys, x_bar, u_bar, d_bar, opts)?;
    let n = sys.state_dim();
    let m = sys.control_dim();
    let cols = map_indexed(opts.parallel, m, |j| {
        fd_column(sys, x_bar, u_bar, d_bar, j, false, opts.epsilon)
    });
    let mut b = DMatrix::zeros(n, m);
    for (j, col) in cols.into_iter().enumerate() {
        let col = col.map_err(ModelError::Numerical)?;
        b.column_mut(j).copy_from_slice(&col);
    }
    Ok(LinearizedSystem {
        a,
        b,
        state_names: (0..n).map(|i| sys.state_name(i)).collect(),
        control_names: (0..m).map(|i| sys.control_name(i)).collect(),
    })
}

/// State Jacobian only — the workhorse of the equilibrium solver.
pub fn jacobian_states<S: DiscreteSystem + ?Sized>(
    sys: &S,
    x_bar: &[f64],
    u_bar: &[f64],
    d_bar: &[f64],
    opts: &FdOptions,
) -> Result<DMatrix<f64>, ModelError> {
    let n = sys.state_dim();
    let cols = map_indexed(opts.parallel, n, |j| {
        fd_column(sys, x_bar, u_bar, d_bar, j, true, opts.epsilon)
    });
    let mut a = DMatrix::zeros(n, n);
    for (j, col) in cols.into_iter().enumerate() {
        let col = col.map_err(ModelError::Numerical)?;
        a.column_mut(j).copy_from_slice(&col);
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubsystemModel;
    use crate::signal::{Signal, SignalSet};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    pub(crate) fn linear_system(m: DMatrix<f64>, n: DMatrix<f64>) -> SubsystemModel {
        let (rows, _) = m.shape();
        let inputs = n.ncols();
        let states =
            SignalSet::new((0..rows).map(|i| Signal::state(format!("x{i}"), "-")).collect())
                .unwrap();
        let controls =
            SignalSet::new((0..inputs).map(|i| Signal::control(format!("u{i}"), "-")).collect())
                .unwrap();
        SubsystemModel::new(
            "lin",
            states,
            controls,
            SignalSet::empty(),
            SignalSet::empty(),
            1.0,
            Arc::new(move |x, u, _d, out| {
                for i in 0..rows {
                    let mut acc = 0.0;
                    for j in 0..rows {
                        acc += m[(i, j)] * x[j];
                    }
                    for j in 0..inputs {
                        acc += n[(i, j)] * u[j];
                    }
                    out[i] = acc;
                }
            }),
            Arc::new(|_x, _out| {}),
        )
        .unwrap()
    }

    #[test]
    fn identity_step_gives_identity_jacobian() {
        let n = 4;
        let sys = linear_system(DMatrix::identity(n, n), DMatrix::zeros(n, 1));
        let lin = jacobian_fd(&sys, &vec![0.3; n], &[0.0], &[], &FdOptions::default()).unwrap();
        assert!((lin.a - DMatrix::identity(n, n)).norm() < 1e-9);
    }

    #[test]
    fn linear_system_recovered_to_tight_tolerance() {
        // Linear maps carry no truncation error, so a larger step only
        // shrinks the rounding floor of the central difference.
        let fd = FdOptions {
            epsilon: 1e-3,
            ..FdOptions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let n = rng.gen_range(2..8);
            let m_true = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
            let b_true = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
            let sys = linear_system(m_true.clone(), b_true.clone());
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let lin = jacobian_fd(&sys, &x, &[0.1, -0.2], &[], &fd).unwrap();
            assert!(
                (&lin.a - &m_true).norm() / m_true.norm() < 1e-9,
                "A mismatch"
            );
            assert!(
                (&lin.b - &b_true).norm() / b_true.norm() < 1e-9,
                "B mismatch"
            );
        }
    }

    #[test]
    fn parallel_and_sequential_columns_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 6;
        let m_true = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let sys = linear_system(m_true, DMatrix::zeros(n, 1));
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = jacobian_states(
            &sys,
            &x,
            &[0.0],
            &[],
            &FdOptions { epsilon: 1e-6, parallel: false },
        )
        .unwrap();
        let par = jacobian_states(
            &sys,
            &x,
            &[0.0],
            &[],
            &FdOptions { epsilon: 1e-6, parallel: true },
        )
        .unwrap();
        assert_eq!(
            seq.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            par.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
