//! Property-based invariants for the path space, conditioning, and the
//! tree value function.

use proptest::prelude::*;

use pathcontrol::control::ControlProcess;
use pathcontrol::pathspace::{concat, sup_distance, Path, PathPrefix, TimeGrid};
use pathcontrol::registry::{make_model, make_payoff, Params};
use pathcontrol::sde::{conditioned_coefficients, euler_solve, member_noise};
use pathcontrol::value::{value_tree, Payoff, TreeModel};
use pathcontrol::rng::NoiseModel;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, n + 1)
}

fn path(n: usize, vals: Vec<f64>) -> Path {
    Path::new(TimeGrid::uniform(1.0, n), 1, vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // sup-distance is a pseudo-metric on prefixes up to the cut
    #[test]
    fn sup_distance_pseudo_metric(a in values(6), b in values(6), c in values(6), k in 0usize..=6) {
        let (pa, pb, pc) = (path(6, a), path(6, b), path(6, c));
        let dab = sup_distance(&pa, &pb, k).unwrap();
        let dba = sup_distance(&pb, &pa, k).unwrap();
        prop_assert_eq!(dab.to_bits(), dba.to_bits());
        prop_assert_eq!(sup_distance(&pa, &pa, k).unwrap(), 0.0);
        let dac = sup_distance(&pa, &pc, k).unwrap();
        let dcb = sup_distance(&pc, &pb, k).unwrap();
        prop_assert!(dab <= dac + dcb + 1e-12);
    }

    // concatenating a path's own restriction with itself is the identity
    #[test]
    fn concat_section_identity(vals in values(6), k in 0usize..=6) {
        let p = path(6, vals);
        let prefix = p.restrict(k).unwrap();
        let glued = concat(&prefix, &p.tail(k).unwrap()).unwrap();
        for j in 0..=6 {
            prop_assert_eq!(glued.point(j)[0].to_bits(), p.point(j)[0].to_bits());
        }
    }

    // concatenation only reads the continuation's increments: shifting the
    // continuation by a constant does not change the glued path
    #[test]
    fn concat_depends_on_increments_only(vals in values(6), shift in -3.0f64..3.0, k in 0usize..=6) {
        let p = path(6, vals.clone());
        let shifted = path(6, vals.iter().map(|v| v + shift).collect());
        let prefix = p.restrict(k).unwrap();
        let a = concat(&prefix, &p.tail(k).unwrap()).unwrap();
        let b = concat(&prefix, &shifted.tail(k).unwrap()).unwrap();
        for j in 0..=6 {
            prop_assert!((a.point(j)[0] - b.point(j)[0]).abs() <= 1e-12);
        }
    }

    // conditioned coefficients agree with the originals on continuations of
    // the conditioning history (section–retraction)
    #[test]
    fn conditioned_section_retraction(vals in values(6), k in 0usize..=6, seed in 0u64..1000) {
        let coeff = make_model("runningmax_drift", &Params::new()).unwrap();
        let p = path(6, vals);
        let history = p.restrict(k).unwrap();
        let cond = conditioned_coefficients(&coeff, k, &history).unwrap();
        let control = ControlProcess::constant("hi", vec![1.0]);
        let grid = TimeGrid::uniform(1.0, 6);
        let noise = member_noise(&grid, 1, k, seed, 0, NoiseModel::Gaussian);
        let orig = euler_solve(&coeff, &control, k, &history, &noise).unwrap();
        let conditioned = euler_solve(&cond, &control, k, &history, &noise).unwrap();
        for j in k..=6 {
            prop_assert_eq!(orig.point(j)[0].to_bits(), conditioned.point(j)[0].to_bits());
        }
    }

    // declared Lipschitz constants of the registry payoffs are honored
    #[test]
    fn payoff_lipschitz_quotients(a in values(4), b in values(4)) {
        for name in ["lookback", "asian"] {
            let payoff = make_payoff(name, &Params::new()).unwrap();
            let l = payoff.lipschitz.unwrap();
            let pa = path(4, a.clone());
            let pb = path(4, b.clone());
            let dist = sup_distance(&pa, &pb, 4).unwrap();
            let gap = (payoff.eval(&pa).unwrap() - payoff.eval(&pb).unwrap()).abs();
            prop_assert!(gap <= l * dist + 1e-12, "{name}: {gap} > {l} * {dist}");
        }
    }

    // tree value: monotone in the payoff and exact under constant shifts
    #[test]
    fn tree_value_monotone_translation(c in -2.0f64..2.0, x0 in -1.0f64..1.0) {
        let coeff = make_model("controlled_vol", &Params::new()).unwrap();
        let payoff = make_payoff("lookback", &Params::new()).unwrap();
        let grid = TimeGrid::uniform(1.0, 3);
        let h = PathPrefix::origin(grid.clone(), &[x0]);
        let base = TreeModel::new(coeff.clone(), payoff.clone(), grid.clone());
        let shifted = TreeModel::new(coeff, payoff.offset(c), grid);
        let (v, _) = value_tree(&base, &h).unwrap();
        let (vc, _) = value_tree(&shifted, &h).unwrap();
        prop_assert!((vc.value - v.value - c).abs() <= 1e-12);
        if c >= 0.0 {
            prop_assert!(vc.value + 1e-12 >= v.value);
        }
    }

    // value process terminal consistency for arbitrary payoff scalings
    #[test]
    fn tree_scaling_homogeneous(lambda in 0.0f64..3.0) {
        let coeff = make_model("controlled_vol", &Params::new()).unwrap();
        let payoff: Payoff = make_payoff("square", &Params::new()).unwrap();
        let grid = TimeGrid::uniform(1.0, 3);
        let h = PathPrefix::origin(grid.clone(), &[0.0]);
        let base = TreeModel::new(coeff.clone(), payoff.clone(), grid.clone());
        let scaled = TreeModel::new(coeff, payoff.scale(lambda), grid);
        let (v, _) = value_tree(&base, &h).unwrap();
        let (vl, _) = value_tree(&scaled, &h).unwrap();
        prop_assert!((vl.value - lambda * v.value).abs() <= 1e-12);
    }
}
