//! Randomized validation suite for group arithmetic: associativity,
//! identity and inverse laws, the dilation automorphism property, norm
//! homogeneity and the unit left-translation Jacobian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::group::StratifiedGroup;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupValidationReport {
    pub trials: usize,
    pub max_associativity_error: f64,
    pub max_identity_error: f64,
    pub max_inverse_error: f64,
    pub max_automorphism_error: f64,
    pub max_norm_homogeneity_error: f64,
    pub max_norm_inverse_error: f64,
    pub max_jacobian_gap: f64,
    pub passed: bool,
}

/// Run `trials` randomized checks with coordinates in [-5, 5].
pub fn group_suite(group: &StratifiedGroup, trials: usize, seed: u64) -> Result<GroupValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = group.dim();
    let random_point =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect() };

    let mut assoc = 0.0f64;
    let mut ident = 0.0f64;
    let mut inv = 0.0f64;
    let mut auto = 0.0f64;
    let mut norm_hom = 0.0f64;
    let mut norm_inv = 0.0f64;
    for _ in 0..trials {
        let x = random_point(&mut rng);
        let y = random_point(&mut rng);
        let z = random_point(&mut rng);

        let xy_z = group.multiply(&group.multiply(&x, &y)?, &z)?;
        let x_yz = group.multiply(&x, &group.multiply(&y, &z)?)?;
        for (a, b) in xy_z.iter().zip(&x_yz) {
            assoc = assoc.max((a - b).abs());
        }

        let e = group.identity();
        let xe = group.multiply(&x, &e)?;
        let ex = group.multiply(&e, &x)?;
        for ((a, b), c) in xe.iter().zip(&ex).zip(&x) {
            ident = ident.max((a - c).abs()).max((b - c).abs());
        }
        let cancel = group.multiply(&x, &group.inverse(&x))?;
        for v in &cancel {
            inv = inv.max(v.abs());
        }

        let r: f64 = rng.random_range(0.1..10.0);
        let lhs = group.dilate(r, &group.multiply(&x, &y)?)?;
        let rhs = group.multiply(&group.dilate(r, &x)?, &group.dilate(r, &y)?)?;
        for (a, b) in lhs.iter().zip(&rhs) {
            auto = auto.max((a - b).abs() / b.abs().max(1.0));
        }

        let n = group.homogeneous_norm(&x)?;
        let s: f64 = rng.random_range(0.1..10.0);
        let ns = group.homogeneous_norm(&group.dilate(s, &x)?)?;
        norm_hom = norm_hom.max((ns - s * n).abs() / (s * n).max(1e-30));
        let ni = group.homogeneous_norm(&group.inverse(&x))?;
        norm_inv = norm_inv.max((ni - n).abs() / n.max(1e-30));
    }

    // Left-translation Jacobian determinant at a smaller random sample.
    let mut jac = 0.0f64;
    for _ in 0..(trials / 100).max(10) {
        let x = random_point(&mut rng);
        let y = random_point(&mut rng);
        let det = group.left_translation_jacobian(&x, &y)?.det();
        jac = jac.max((det - 1.0).abs());
    }

    let passed = assoc <= 1e-12
        && ident <= 1e-14
        && inv <= 1e-14
        && auto <= 1e-12
        && norm_hom <= 1e-10
        && norm_inv <= 1e-10
        && jac <= 1e-10;
    Ok(GroupValidationReport {
        trials,
        max_associativity_error: assoc,
        max_identity_error: ident,
        max_inverse_error: inv,
        max_automorphism_error: auto,
        max_norm_homogeneity_error: norm_hom,
        max_norm_inverse_error: norm_inv,
        max_jacobian_gap: jac,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_groups_pass_small_suite() {
        for group in [
            StratifiedGroup::abelian(1),
            StratifiedGroup::abelian(3),
            StratifiedGroup::heisenberg(),
        ] {
            let report = group_suite(&group, 500, 7).unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn suite_is_deterministic_per_seed() {
        let g = StratifiedGroup::heisenberg();
        let a = group_suite(&g, 200, 11).unwrap();
        let b = group_suite(&g, 200, 11).unwrap();
        assert_eq!(a.max_associativity_error, b.max_associativity_error);
        assert_eq!(a.max_jacobian_gap, b.max_jacobian_gap);
    }
}
