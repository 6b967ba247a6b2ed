use crystalflow::metrics::{calibrate_stability_threshold, toy_relax, RelaxConfig, DEFAULT_STABILITY_THRESHOLD};
use crystalflow::synthetic::{synthetic_family, Perturbation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn default_threshold_passes_about_a_tenth_of_a_holdout() {
    let holdout = synthetic_family(500, &Perturbation::default(), &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let relax = RelaxConfig::default();
    let energies: Vec<f64> = holdout.iter().map(|c| toy_relax(c, &relax).unwrap().delta_energy_per_atom()).collect();
    let passing = |t: f64| energies.iter().filter(|&&e| e < t).count();

    let rate = passing(DEFAULT_STABILITY_THRESHOLD) as f64 / holdout.len() as f64;
    assert!((0.05..=0.15).contains(&rate), "pass rate {rate}");
    // nothing sits just above the default, so it is not sensitive to jitter
    assert_eq!(passing(DEFAULT_STABILITY_THRESHOLD), passing(4.0 * DEFAULT_STABILITY_THRESHOLD));

    for target in [0.05, 0.1, 0.3] {
        let t = calibrate_stability_threshold(&holdout, target, &relax).unwrap();
        assert_eq!(passing(t), (target * holdout.len() as f64).round() as usize, "rate {target}, threshold {t}");
    }
}

#[test]
fn calibration_rejects_bad_input() {
    let relax = RelaxConfig::default();
    assert!(calibrate_stability_threshold::<f64>(&[], 0.1, &relax).is_err());
    let one = synthetic_family(1, &Perturbation::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(calibrate_stability_threshold(&one, 1.5, &relax).is_err());
}
