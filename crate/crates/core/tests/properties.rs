use crystalflow::base::{sample_base, BaseKind, BaseModel, DEFAULT_SMOOTHING};
use crystalflow::cif::{parse_cif, parse_symop, render_symop, write_cif};
use crystalflow::crystal::{structural_validity, wrap_delta, Crystal};
use crystalflow::geometry::{endpoint_target, torus_exp, torus_log};
use crystalflow::metrics::{structure_fingerprint, wasserstein_1d};
use crystalflow::niggli::niggli_cell;
use crystalflow::synthetic::{synthetic_family, Perturbation};
use crystalflow::{Element, FlowState, LatticeParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lattice() -> impl Strategy<Value = LatticeParams<f64>> {
    ([2.5..9.0f64, 2.5..9.0, 2.5..9.0], [62.0..118.0f64, 62.0..118.0, 62.0..118.0])
        .prop_filter_map("degenerate cell", |(l, a)| LatticeParams::new(l, a).ok())
}

fn crystal(max_atoms: usize) -> impl Strategy<Value = Crystal<f64>> {
    (lattice(), prop::collection::vec((1u8..=83, [0.0..1.0f64, 0.0..1.0, 0.0..1.0]), 1..=max_atoms)).prop_map(|(lp, atoms)| {
        let species = atoms.iter().map(|(z, _)| Element::from_z(*z).unwrap()).collect();
        Crystal::new(species, atoms.into_iter().map(|(_, f)| f).collect(), lp).unwrap()
    })
}

proptest! {
    #[test]
    fn torus_log_is_shortest_and_exp_inverts_it(f0 in 0.0..1.0f64, f1 in 0.0..1.0f64) {
        let v = torus_log(f0, f1);
        prop_assert!(v.abs() <= 0.5);
        prop_assert!(wrap_delta(torus_exp(f0, v) - f1).abs() < 1e-12);
    }

    #[test]
    fn endpoint_target_vanishes_on_identical_states(c in crystal(8)) {
        let s = FlowState::from_crystal(&c).unwrap();
        let v = endpoint_target(&s, &s).unwrap();
        prop_assert!(v.coords.iter().flatten().chain(v.lattice().iter()).all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn validity_ignores_order_and_origin(c in crystal(6), shift in [0.0..1.0f64, 0.0..1.0, 0.0..1.0]) {
        let perm: Vec<usize> = (0..c.n_atoms()).rev().collect();
        prop_assert_eq!(structural_validity(&c), structural_validity(&c.permuted(&perm).translated(&shift)));
    }

    #[test]
    fn fingerprint_ignores_order_and_origin(c in crystal(4), shift in [0.0..1.0f64, 0.0..1.0, 0.0..1.0]) {
        let perm: Vec<usize> = (0..c.n_atoms()).rev().collect();
        let a = structure_fingerprint(&c);
        let b = structure_fingerprint(&c.permuted(&perm).translated(&shift));
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn niggli_reduction_is_idempotent(lp in lattice()) {
        let once = niggli_cell(&lp).unwrap().lattice;
        let twice = niggli_cell(&once).unwrap().lattice;
        for k in 0..3 {
            prop_assert!((once.lengths[k] - twice.lengths[k]).abs() < 1e-8);
            prop_assert!((once.angles[k] - twice.angles[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn wasserstein_is_a_symmetric_shift_invariant_distance(
        a in prop::collection::vec(-10.0..10.0f64, 1..12),
        b in prop::collection::vec(-10.0..10.0f64, 1..12),
        c in -5.0..5.0f64,
    ) {
        let d = wasserstein_1d(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - wasserstein_1d(&b, &a).unwrap()).abs() < 1e-12);
        let shift = |x: &[f64]| x.iter().map(|v| v + c).collect::<Vec<_>>();
        prop_assert!((d - wasserstein_1d(&shift(&a), &shift(&b)).unwrap()).abs() < 1e-9);
        prop_assert!(wasserstein_1d(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cif_round_trip(c in crystal(10)) {
        let back = parse_cif(&write_cif(&c)).unwrap();
        prop_assert_eq!(&back.species, &c.species);
        for (x, y) in back.frac_coords.iter().flatten().zip(c.frac_coords.iter().flatten()) {
            prop_assert!(wrap_delta(x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn symop_render_parse_identity(
        perm in Just([0usize, 1, 2]).prop_shuffle(),
        signs in [prop::bool::ANY, prop::bool::ANY, prop::bool::ANY],
        shifts in [0i64..12, 0i64..12, 0i64..12],
    ) {
        let axes = ["x", "y", "z"];
        let text = (0..3)
            .map(|k| format!("{}{}+{}/12", if signs[k] { "-" } else { "" }, axes[perm[k]], shifts[k]))
            .collect::<Vec<_>>()
            .join(", ");
        let op = parse_symop(&text).unwrap();
        prop_assert_eq!(parse_symop(&render_symop(&op)).unwrap(), op);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn base_draws_keep_the_requested_species(seed in 0u64..1000, pick in 0usize..200) {
        let data = synthetic_family(200, &Perturbation::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for kind in [BaseKind::Quantized, BaseKind::Uninformed] {
            let base = BaseModel::fit(&kind, &data, DEFAULT_SMOOTHING).unwrap();
            let species = data[pick].species.clone();
            let (c, _) = sample_base::<f64, _>(&base, &species, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(&c.species, &species);
            prop_assert!(c.lattice.angles.iter().all(|a| (60.0..=120.0).contains(a)));
        }
    }
}
