//! Quadratic Lyapunov certificates for the linearized step, plus a sampled
//! decrease check of the full nonlinear step around the equilibrium.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::model::DiscreteSystem;
use crate::parallel::map_indexed;

use super::equilibrium::EquilibriumResult;

/// Outcome of solving `AᵀPA - P = -I` and factoring `P`.
#[derive(Debug, Clone)]
pub enum LyapunovSolve {
    /// `P` is symmetric positive definite: a quadratic certificate exists.
    Certified { p: DMatrix<f64>, min_diag_of_chol: f64 },
    /// The linear solve succeeded but `P` is not positive definite.
    NotDefinite { p: DMatrix<f64> },
    /// The vectorized solve is singular (an eigenvalue product hits one).
    Marginal { message: String },
}

impl LyapunovSolve {
    pub fn certificate(&self) -> Option<&DMatrix<f64>> {
        match self {
            LyapunovSolve::Certified { p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn is_certified(&self) -> bool {
        matches!(self, LyapunovSolve::Certified { .. })
    }
}

/// Solves the discrete Lyapunov equation `AᵀPA - P = -I` by the direct
/// vectorized linear solve and checks positive definiteness by attempting a
/// Cholesky factorization of the symmetrized solution.
pub fn lyapunov_quadratic(a: &DMatrix<f64>) -> Result<LyapunovSolve, ModelError> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(ModelError::usage("Lyapunov solve needs a square matrix"));
    }
    let at = a.transpose();
    let kron = at.kronecker(&at);
    let system = DMatrix::identity(n * n, n * n) - kron;
    let q = DMatrix::identity(n, n);
    let rhs = DVector::from_iterator(n * n, q.iter().cloned());
    let solution = match system.lu().solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => sol,
        _ => {
            return Ok(LyapunovSolve::Marginal {
                message: "vectorized Lyapunov system is singular (eigenvalue product on the unit circle)"
                    .into(),
            })
        }
    };
    let p_raw = DMatrix::from_iterator(n, n, solution.iter().cloned());
    let p = 0.5 * (&p_raw + p_raw.transpose());
    match p.clone().cholesky() {
        Some(chol) => {
            let min_diag = (0..n).map(|i| chol.l()[(i, i)]).fold(f64::INFINITY, f64::min);
            Ok(LyapunovSolve::Certified {
                p,
                min_diag_of_chol: min_diag,
            })
        }
        None => Ok(LyapunovSolve::NotDefinite { p }),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplingOptions {
    pub samples: usize,
    /// Relative perturbation radius: each component is perturbed by
    /// `radius * max(1, |x̄_i|)` times a unit direction component.
    pub radius: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            samples: 10_000,
            radius: 1e-3,
            seed: 0,
            parallel: cfg!(feature = "parallel"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampledDecrease {
    pub samples: usize,
    pub violations: usize,
    pub radius_tried: f64,
    /// Largest tested radius at which every sample satisfied
    /// `V(F(x) - x̄) < V(x - x̄)`; `None` if even the smallest tried failed.
    pub verified_radius: Option<f64>,
}

fn decrease_violations<S: DiscreteSystem + ?Sized>(
    sys: &S,
    eq: &EquilibriumResult,
    p: &DMatrix<f64>,
    radius: f64,
    opts: &SamplingOptions,
) -> usize {
    let n = sys.state_dim();
    let scale: Vec<f64> = eq.x_bar.iter().map(|v| v.abs().max(1.0)).collect();
    let quad = |delta: &[f64]| -> f64 {
        let v = DVector::from_row_slice(delta);
        (v.transpose() * p * &v)[(0, 0)]
    };
    let results = map_indexed(opts.parallel, opts.samples, |k| {
        // one independent generator per sample keeps the check deterministic
        // under any thread schedule
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1)));
        let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut dir {
            *v /= norm;
        }
        let x: Vec<f64> = eq
            .x_bar
            .iter()
            .zip(&dir)
            .zip(&scale)
            .map(|((xb, di), s)| xb + radius * s * di)
            .collect();
        let delta0: Vec<f64> = x.iter().zip(&eq.x_bar).map(|(a, b)| a - b).collect();
        let mut next = vec![0.0; n];
        if sys.step_into(&x, &eq.u_bar, &eq.d_bar, &mut next).is_err() {
            return 1usize;
        }
        let delta1: Vec<f64> = next.iter().zip(&eq.x_bar).map(|(a, b)| a - b).collect();
        usize::from(quad(&delta1) >= quad(&delta0))
    });
    results.into_iter().sum()
}

/// Monte-Carlo decrease check of the nonlinear step under the quadratic
/// form `V(δ) = δᵀPδ`. Starts at the configured radius and halves it until
/// every sample decreases, reporting the verified neighborhood.
pub fn sampled_decrease<S: DiscreteSystem + ?Sized>(
    sys: &S,
    eq: &EquilibriumResult,
    p: &DMatrix<f64>,
    opts: &SamplingOptions,
) -> SampledDecrease {
    let mut radius = opts.radius;
    let mut violations = decrease_violations(sys, eq, p, radius, opts);
    let first_violations = violations;
    let mut verified = if violations == 0 { Some(radius) } else { None };
    let mut shrink = 0;
    while violations > 0 && shrink < 6 {
        radius *= 0.5;
        violations = decrease_violations(sys, eq, p, radius, opts);
        if violations == 0 {
            verified = Some(radius);
            break;
        }
        shrink += 1;
    }
    SampledDecrease {
        samples: opts.samples,
        violations: first_violations,
        radius_tried: opts.radius,
        verified_radius: verified,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_closed_form() {
        // A = 0.5 I: P solves 0.25 P - P = -I, so P = 4/3 I
        let a = DMatrix::from_diagonal_element(3, 3, 0.5);
        let s = lyapunov_quadratic(&a).unwrap();
        let p = s.certificate().expect("stable system certifies");
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 4.0 / 3.0 } else { 0.0 };
                assert_relative_eq!(p[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unstable_system_has_no_certificate() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.4, 0.2]));
        let s = lyapunov_quadratic(&a).unwrap();
        assert!(!s.is_certified());
    }

    #[test]
    fn unit_circle_pair_is_marginal() {
        // eigenvalues 2 and 0.5: product exactly 1 makes the solve singular
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let s = lyapunov_quadratic(&a).unwrap();
        assert!(matches!(s, LyapunovSolve::Marginal { .. }));
    }

    #[test]
    fn certificate_satisfies_the_equation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, -0.1, 0.6]);
        let s = lyapunov_quadratic(&a).unwrap();
        let p = s.certificate().unwrap();
        let lhs = a.transpose() * p * &a - p;
        let q = -DMatrix::<f64>::identity(2, 2);
        assert!((lhs - q).norm() < 1e-10);
    }
}
