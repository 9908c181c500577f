//! Controllability: numerical rank of `[B, AB, A²B, …, Aⁿ⁻¹B]` via singular
//! values, with the spectrum reported so near-uncontrollability is visible
//! instead of hidden behind a hard threshold.

use nalgebra::DMatrix;

use crate::error::ModelError;

use super::jacobian::LinearizedSystem;

#[derive(Debug, Clone)]
pub struct ControllabilityReport {
    pub n_states: usize,
    pub rank: usize,
    /// Full singular-value spectrum of the controllability matrix,
    /// descending.
    pub singular_values: Vec<f64>,
    /// Threshold actually used for the rank decision.
    pub threshold: f64,
    pub controllable: bool,
}

/// Builds the controllability matrix block by block (repeated
/// multiplication, no explicit matrix powers) and counts singular values
/// above `σ_max · max(n, cols) · ε` plus an optional absolute floor.
pub fn controllability_rank(
    lin: &LinearizedSystem,
    absolute_floor: Option<f64>,
) -> Result<ControllabilityReport, ModelError> {
    let a = &lin.a;
    let b = &lin.b;
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(ModelError::usage(
            "controllability needs A square and B with matching rows",
        ));
    }
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
        if k + 1 < n {
            block = a * &block;
        }
    }
    let svd = ctrb.svd(false, false);
    let mut singular_values: Vec<f64> = svd.singular_values.iter().cloned().collect();
    singular_values.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let dims = n.max(n * m) as f64;
    let threshold = (sigma_max * dims * f64::EPSILON).max(absolute_floor.unwrap_or(0.0));
    let rank = singular_values.iter().filter(|s| **s > threshold).count();
    Ok(ControllabilityReport {
        n_states: n,
        rank,
        singular_values,
        threshold,
        controllable: rank == n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(a: DMatrix<f64>, b: DMatrix<f64>) -> LinearizedSystem {
        let n = a.nrows();
        let m = b.ncols();
        LinearizedSystem {
            a,
            b,
            state_names: (0..n).map(|i| format!("x{i}")).collect(),
            control_names: (0..m).map(|i| format!("u{i}")).collect(),
        }
    }

    #[test]
    fn double_integrator_is_controllable() {
        let dt = 0.1;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, dt]);
        let r = controllability_rank(&lin(a, b), None).unwrap();
        assert_eq!(r.rank, 2);
        assert!(r.controllable);
    }

    #[test]
    fn zero_input_matrix_has_rank_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]);
        let b = DMatrix::zeros(2, 1);
        let r = controllability_rank(&lin(a, b), None).unwrap();
        assert_eq!(r.rank, 0);
        assert!(!r.controllable);
    }

    #[test]
    fn decoupled_mode_is_detected() {
        // second mode never sees the input
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let r = controllability_rank(&lin(a, b), None).unwrap();
        assert_eq!(r.rank, 1);
    }

    #[test]
    fn rank_is_invariant_under_state_permutation_and_input_scaling() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let n = rng.gen_range(2..7);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
            let base = controllability_rank(&lin(a.clone(), b.clone()), None).unwrap();

            // permutation similarity
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let p = DMatrix::from_fn(n, n, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
            let a_p = &p * &a * p.transpose();
            let b_p = &p * &b;
            let permuted = controllability_rank(&lin(a_p, b_p), None).unwrap();
            assert_eq!(base.rank, permuted.rank);

            // nonsingular input-channel scaling
            let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                rng.gen_range(0.1..5.0),
                rng.gen_range(0.1..5.0),
            ]));
            let scaled = controllability_rank(&lin(a.clone(), &b * s), None).unwrap();
            assert_eq!(base.rank, scaled.rank);
        }
    }
}
