use proptest::prelude::*;

use smallnoise::branching::{solve_ct_phi, BranchingMechanism, MechanismKind};
use smallnoise::flow::{flow, invert_w, rescaled_point};
use smallnoise::limit_law::WLaw;
use smallnoise::model::ModelSpec;
use smallnoise::rng::derive_seed;
use smallnoise::verify::ExperimentConfig;

fn logistic() -> smallnoise::DiffusionModel {
    ModelSpec::named("logistic_feller").build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rescaled_flow_inverts_and_stays_below_capacity(y in 1e-3f64..50.0) {
        let m = logistic();
        let (x, _) = rescaled_point(&m, y).unwrap();
        prop_assert!(x > 0.0 && x < 1.0);
        prop_assert!((invert_w(&m, x).unwrap() - y).abs() <= 1e-7 * y.max(1.0));
    }

    #[test]
    fn flow_is_monotone_in_the_start_point(a in 1e-4f64..0.99, b in 1e-4f64..0.99, t in 0.0f64..5.0) {
        let m = logistic();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(flow(&m, lo, t).unwrap() <= flow(&m, hi, t).unwrap() + 1e-12);
    }

    #[test]
    fn w_quantile_inverts_cdf(p in 0.2f64..0.999, gamma in 0.5f64..2.0, a in 0.5f64..2.0) {
        let law = WLaw::new(gamma, a).unwrap();
        prop_assume!(p > law.atom() + 1e-6);
        let q = law.quantile(p).unwrap();
        prop_assert!((law.cdf(q) - p).abs() < 1e-8);
    }

    #[test]
    fn binary_splitting_phi_is_decreasing_and_bounded(s in 0.0f64..50.0) {
        let mech = BranchingMechanism::binary_splitting(MechanismKind::CtMechanism);
        let v = solve_ct_phi(&mech, &[s, s + 0.5]).unwrap().values;
        prop_assert!(v[0] <= 1.0 && v[1] > 0.0 && v[1] < v[0]);
    }

    #[test]
    fn derived_seeds_differ_by_index(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(seed, i), derive_seed(seed, j));
    }

    #[test]
    fn config_round_trips(seed in 0..=i64::MAX as u64, n in 1usize..100_000, c in 0.55f64..0.95) {
        let mut cfg = ExperimentConfig::for_model("kimura_fisher_wright");
        cfg.seed = seed;
        cfg.n_paths = n;
        cfg.c = c;
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg.clone());
        cfg.seed = u64::MAX;
        prop_assert!(cfg.validate().is_err());
    }
}
