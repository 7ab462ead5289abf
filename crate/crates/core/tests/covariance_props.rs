mod support;

use contact_smpc_core::covariance::{posterior_update, propagate_flow, propagate_jump_apriori};
use contact_smpc_core::linalg::Matrix;
use contact_smpc_core::saltation::{saltation, EPS_TRANSVERSAL};
use proptest::prelude::*;
use support::{asym, bits, cov_instance, min_eig, single_guard_jump, xorshift};

fn check_cov(m: &Matrix) -> Result<(), TestCaseError> {
    prop_assert!(asym(m) <= 1e-12, "asymmetry {}", asym(m));
    prop_assert!(min_eig(m) >= -1e-10, "min eigenvalue {}", min_eig(m));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn propagation_keeps_covariances_symmetric_psd(
        nx in 2usize..7,
        nu in 1usize..3,
        ng in 1usize..3,
        values in prop::collection::vec(-1.0f64..1.0, 400),
    ) {
        let ng = ng.min(nx);
        let mut it = values.into_iter().cycle();
        let inst = cov_instance(nx, nu, ng, &mut || it.next().unwrap());
        let flowed = propagate_flow(&inst.p, &inst.a, &inst.b, &inst.k, &inst.gamma, &inst.w).unwrap();
        check_cov(&flowed)?;
        let salt = saltation(&inst.lin, EPS_TRANSVERSAL);
        prop_assert_eq!(salt.num_transversal(), ng);
        let prior = propagate_jump_apriori(&flowed, &salt, &inst.c_g).unwrap();
        check_cov(&prior)?;
        let (_, post) = posterior_update(&prior, &inst.lin.dg_dx, &inst.c_g).unwrap();
        check_cov(&post)?;
        prop_assert!(post.trace() <= prior.trace() * (1.0 + 1e-12), "{} > {}", post.trace(), prior.trace());
    }
}

#[test]
fn single_component_multi_guard_sum_equals_single_guard_formula_bitwise() {
    let mut next = xorshift(0x2545_f491_4f6c_dd1d);
    for nx in 2..7 {
        let inst = cov_instance(nx, 1, 1, &mut next);
        let salt = saltation(&inst.lin, EPS_TRANSVERSAL);
        let multi = propagate_jump_apriori(&inst.p, &salt, &inst.c_g).unwrap();
        assert_eq!(bits(&multi), bits(&single_guard_jump(&inst)), "nx = {nx}");
    }
}

#[test]
fn gamma_matches_bisection_on_the_normal_cdf() {
    use contact_smpc_core::covariance::gamma_from_probability;
    for (p, expected) in [(0.95, 1.6448536), (0.8, 0.8416212)] {
        let g = gamma_from_probability(p).unwrap();
        let oracle = support::normal_quantile_bisection(p);
        assert!((g - oracle).abs() <= 1e-9, "{g} vs {oracle}");
        assert!((g - expected).abs() <= 1e-6);
    }
}

#[test]
fn thousand_seeded_instances_keep_the_invariants() {
    let s = support::cov_invariants(1000, 7);
    assert!(s.max_asym <= 1e-12 && s.min_eig >= -1e-10 && s.trace_increases == 0, "{s:?}");
}
