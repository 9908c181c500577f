//! Local stability from the eigenvalues of the step Jacobian.

use nalgebra::{Complex, DMatrix};

use crate::error::ModelError;
use crate::model::DiscreteSystem;

use super::equilibrium::EquilibriumResult;
use super::jacobian::{jacobian_fd, FdOptions, LinearizedSystem};

pub type Complex64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityClass {
    Stable,
    Marginal,
    Unstable,
}

impl StabilityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityClass::Stable => "stable",
            StabilityClass::Marginal => "marginal",
            StabilityClass::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// Sorted by descending magnitude; ties broken by real then imaginary
    /// part so output order is reproducible.
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub n_outside_unit_circle: usize,
    pub classification: StabilityClass,
    pub tol_margin: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityOptions {
    /// Unit-circle classification margin.
    pub tol_margin: f64,
    pub fd: FdOptions,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            tol_margin: 1e-9,
            fd: FdOptions::default(),
        }
    }
}

/// Eigenvalues of a step matrix with unit-circle classification. Stable when
/// the spectral radius is below `1 - tol`, unstable when any magnitude
/// exceeds `1 + tol`, marginal in between.
pub fn eigen_report(a: &DMatrix<f64>, tol_margin: f64) -> Result<StabilityReport, ModelError> {
    if a.nrows() != a.ncols() {
        return Err(ModelError::usage("stability needs a square matrix"));
    }
    let mut eigenvalues: Vec<Complex64> = a.clone().complex_eigenvalues().iter().cloned().collect();
    if eigenvalues.iter().any(|e| !e.re.is_finite() || !e.im.is_finite()) {
        return Err(ModelError::numerical("eigenvalue computation failed"));
    }
    eigenvalues.sort_by(|x, y| {
        y.norm()
            .partial_cmp(&x.norm())
            .unwrap()
            .then(x.re.partial_cmp(&y.re).unwrap())
            .then(x.im.partial_cmp(&y.im).unwrap())
    });
    let spectral_radius = eigenvalues.first().map(|e| e.norm()).unwrap_or(0.0);
    let n_outside = eigenvalues.iter().filter(|e| e.norm() > 1.0 + tol_margin).count();
    let classification = if n_outside > 0 {
        StabilityClass::Unstable
    } else if spectral_radius < 1.0 - tol_margin {
        StabilityClass::Stable
    } else {
        StabilityClass::Marginal
    };
    Ok(StabilityReport {
        eigenvalues,
        spectral_radius,
        n_outside_unit_circle: n_outside,
        classification,
        tol_margin,
    })
}

/// Linearizes at a converged equilibrium and classifies it.
pub fn stability_local<S: DiscreteSystem + ?Sized>(
    sys: &S,
    eq: &EquilibriumResult,
    opts: &StabilityOptions,
) -> Result<(LinearizedSystem, StabilityReport), ModelError> {
    if !eq.converged {
        return Err(ModelError::usage(
            "stability analysis needs a converged equilibrium",
        ));
    }
    let lin = jacobian_fd(sys, &eq.x_bar, &eq.u_bar, &eq.d_bar, &opts.fd)?;
    let report = eigen_report(&lin.a, opts.tol_margin)?;
    Ok((lin, report))
}

/// Greedy nearest-neighbor pairing between two eigenvalue sets; returns the
/// largest paired distance. Dense solvers return eigenvalues in arbitrary
/// order, so continuity across a parameter sweep is judged after matching.
pub fn max_paired_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for ea in a {
        let mut best = f64::INFINITY;
        let mut best_j = None;
        for (j, eb) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let dist = (ea - eb).norm();
            if dist < best {
                best = dist;
                best_j = Some(j);
            }
        }
        if let Some(j) = best_j {
            used[j] = true;
            worst = worst.max(best);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn contraction_is_stable() {
        let a = DMatrix::from_diagonal_element(3, 3, 0.5);
        let r = eigen_report(&a, 1e-9).unwrap();
        assert_eq!(r.classification, StabilityClass::Stable);
        assert_relative_eq!(r.spectral_radius, 0.5);
        assert_eq!(r.n_outside_unit_circle, 0);
    }

    #[test]
    fn slow_growth_is_flagged_unstable() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.000003, 0.5]));
        let r = eigen_report(&a, 1e-9).unwrap();
        assert_eq!(r.classification, StabilityClass::Unstable);
        assert_eq!(r.n_outside_unit_circle, 1);
        assert_relative_eq!(r.spectral_radius, 1.000003, max_relative = 1e-12);
    }

    #[test]
    fn unit_eigenvalue_is_marginal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.3]));
        let r = eigen_report(&a, 1e-9).unwrap();
        assert_eq!(r.classification, StabilityClass::Marginal);
    }

    #[test]
    fn rotation_eigenvalues_are_complex_on_the_circle() {
        let theta: f64 = 0.3;
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        let r = eigen_report(&(0.9 * a), 1e-9).unwrap();
        assert_eq!(r.classification, StabilityClass::Stable);
        assert_relative_eq!(r.spectral_radius, 0.9, max_relative = 1e-10);
        assert_relative_eq!(r.eigenvalues[0].im.abs(), 0.9 * theta.sin(), max_relative = 1e-10);
    }

    #[test]
    fn pairing_distance_is_zero_for_permutations() {
        let a = vec![
            Complex64::new(1.0, 0.5),
            Complex64::new(-0.2, 0.0),
            Complex64::new(0.3, -0.7),
        ];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(max_paired_distance(&a, &b), 0.0);
    }

    #[test]
    fn pairing_detects_a_moved_eigenvalue() {
        let a = vec![Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0)];
        let b = vec![Complex64::new(0.5, 0.0), Complex64::new(1.1, 0.0)];
        assert_relative_eq!(max_paired_distance(&a, &b), 0.1, max_relative = 1e-12);
    }
}
