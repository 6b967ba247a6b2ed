use rand::{Rng, RngCore};

use crate::assign::hungarian;
use crate::base::{add_noise_state, in_flow_domain, reject_invalid, BaseSampler};
use crate::crystal::{wrap_delta, Crystal};
use crate::error::{Error, Result};
use crate::geometry::FlowState;
use crate::real::Real;

pub const MAX_CONSECUTIVE_REJECTIONS: usize = 1000;

/// Fixed set of (base sample, data sample) pairs with atoms aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset<T> {
    pub pairs: Vec<(Crystal<T>, Crystal<T>)>,
    /// Name of the base that produced the first member of each pair.
    pub base: String,
    pub base_draws: usize,
    pub rejected_draws: usize,
}

impl<T: Real> PairDataset<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.base_draws == 0 {
            0.0
        } else {
            self.rejected_draws as f64 / self.base_draws as f64
        }
    }
}

fn torus_sq_dist<T: Real>(a: &[T; 3], b: &[T; 3]) -> f64 {
    (0..3).map(|k| wrap_delta(b[k] - a[k]).to_f64_lossy().powi(2)).sum()
}

/// Permutation `perm` such that `c0.permuted(&perm)` puts on every site of
/// `c1` an atom of the same species, minimizing the summed squared torus
/// distance within each species.
pub fn atom_alignment<T: Real>(c0: &Crystal<T>, c1: &Crystal<T>) -> Result<Vec<usize>> {
    let comp = c1.composition();
    if c0.composition() != comp {
        return Err(Error::CompositionMismatch(format!("{} vs {}", c0.composition(), comp)));
    }
    let mut perm = vec![0; c1.n_atoms()];
    for &el in comp.0.keys() {
        let sites: Vec<usize> = (0..c1.n_atoms()).filter(|&k| c1.species[k] == el).collect();
        let atoms: Vec<usize> = (0..c0.n_atoms()).filter(|&k| c0.species[k] == el).collect();
        let cost: Vec<Vec<f64>> = sites
            .iter()
            .map(|&s| atoms.iter().map(|&a| torus_sq_dist(&c0.frac_coords[a], &c1.frac_coords[s])).collect())
            .collect();
        for (row, col) in hungarian(&cost).into_iter().enumerate() {
            perm[sites[row]] = atoms[col];
        }
    }
    Ok(perm)
}

/// Draws `n_pairs` data crystals with replacement and, for each, a base
/// sample with the same species list, optionally noised, then aligned.
/// Invalid base draws are redrawn and counted.
pub fn build_pair_dataset<T: Real, S: BaseSampler<T> + ?Sized>(
    dataset: &[Crystal<T>],
    base: &S,
    n_pairs: usize,
    noise: f64,
    rng: &mut dyn RngCore,
) -> Result<PairDataset<T>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if n_pairs == 0 {
        return Err(Error::Config("number of pairs must be at least 1".into()));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut base_draws = 0;
    let mut rejected_draws = 0;
    for _ in 0..n_pairs {
        let c1 = &dataset[rng.random_range(0..dataset.len())];
        if !in_flow_domain(c1) {
            return Err(Error::AngleOutOfRange(
                c1.lattice.angles.iter().map(|a| a.to_f64_lossy()).fold(f64::NAN, f64::max),
            ));
        }
        let mut consecutive = 0;
        let c0 = loop {
            base_draws += 1;
            let accepted = reject_invalid(&base.draw(&c1.species, rng)?)
                .ok()
                .filter(|c| in_flow_domain(c) && c.species == c1.species)
                .and_then(|c| {
                    let state = FlowState::from_crystal(&c).ok()?;
                    add_noise_state(&state, noise, rng).to_crystal().ok()
                });
            match accepted {
                Some(c) => break c,
                None => {
                    rejected_draws += 1;
                    consecutive += 1;
                    if consecutive > MAX_CONSECUTIVE_REJECTIONS {
                        return Err(Error::Sampler(format!(
                            "more than {MAX_CONSECUTIVE_REJECTIONS} consecutive rejected draws from `{}`",
                            base.name()
                        )));
                    }
                }
            }
        };
        let perm = atom_alignment(&c0, c1)?;
        pairs.push((c0.permuted(&perm), c1.clone()));
    }
    Ok(PairDataset { pairs, base: base.name(), base_draws, rejected_draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{Candidate, QuantizedEmpiricalBase, Support};
    use crate::crystal::LatticeParams;
    use crate::elements::Element;
    use crate::testing::{el, random_crystal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nacl(a: f64) -> Crystal<f64> {
        Crystal::new(vec![el("Na"), el("Cl")], vec![[0.0; 3], [0.5; 3]], LatticeParams::cubic(a)).unwrap()
    }

    #[test]
    fn contract_and_determinism() {
        let data = vec![nacl(5.6), Crystal::new(vec![el("K")], vec![[0.1; 3]], LatticeParams::cubic(4.0)).unwrap()];
        let base = QuantizedEmpiricalBase::fit(&data, 1.0).unwrap();
        let run = |seed| build_pair_dataset(&data, &base, 5, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let pd = run(1);
        assert_eq!(pd.len(), 5);
        for (c0, c1) in &pd.pairs {
            assert_eq!(c0.species, c1.species);
        }
        assert_eq!(pd, run(1));
    }

    struct Flaky;

    impl BaseSampler<f64> for Flaky {
        fn name(&self) -> String {
            "flaky".into()
        }
        fn support(&self) -> Support {
            Support::Continuous
        }
        fn draw(&self, species: &[Element], rng: &mut dyn RngCore) -> Result<Candidate<f64>> {
            let length = if rng.random::<f64>() < 0.1 { -1.0 } else { 5.0 };
            Ok(Candidate {
                species: species.iter().map(|e| e.symbol().to_string()).collect(),
                frac_coords: species.iter().map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
                lengths: [length, 5.0, 5.0],
                angles: [90.0; 3],
            })
        }
    }

    #[test]
    fn rejection_rate_matches_injected_fraction() {
        let data = vec![nacl(5.6)];
        let pd = build_pair_dataset(&data, &Flaky, 10_000, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((pd.rejection_rate() - 0.10).abs() < 0.01, "{}", pd.rejection_rate());
    }

    struct Broken;

    impl BaseSampler<f64> for Broken {
        fn name(&self) -> String {
            "broken".into()
        }
        fn support(&self) -> Support {
            Support::Continuous
        }
        fn draw(&self, species: &[Element], _rng: &mut dyn RngCore) -> Result<Candidate<f64>> {
            Ok(Candidate { species: species.iter().map(|_| "Xx".to_string()).collect(), frac_coords: vec![[0.0; 3]; species.len()], lengths: [1.0; 3], angles: [90.0; 3] })
        }
    }

    #[test]
    fn persistent_rejection_is_an_error() {
        assert!(build_pair_dataset(&[nacl(5.0)], &Broken, 1, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn alignment_examples() {
        let c = random_crystal(&mut ChaCha8Rng::seed_from_u64(3), 5);
        assert_eq!(atom_alignment(&c, &c).unwrap(), vec![0, 1, 2, 3, 4]);

        let two = Crystal::new(vec![el("O"), el("O")], vec![[0.1, 0.2, 0.3], [0.6, 0.7, 0.8]], LatticeParams::cubic(4.0)).unwrap();
        let swapped = two.permuted(&[1, 0]);
        assert_eq!(atom_alignment(&swapped, &two).unwrap(), vec![1, 0]);

        let other = Crystal::new(vec![el("O"), el("N")], vec![[0.0; 3], [0.5; 3]], LatticeParams::cubic(4.0)).unwrap();
        assert!(atom_alignment(&two, &other).is_err());
    }

    #[test]
    fn species_never_cross_assigned() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let species = vec![el("Na"), el("Cl"), el("Na"), el("Cl"), el("O"), el("Na")];
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| {
                Crystal::new(species.clone(), (0..6).map(|_| [rng.random(), rng.random(), rng.random()]).collect(), LatticeParams::cubic(5.0)).unwrap()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let mut order: Vec<usize> = (0..6).collect();
            for k in (1..6).rev() {
                order.swap(k, rng.random_range(0..=k));
            }
            let shuffled = a.permuted(&order);
            let perm = atom_alignment(&shuffled, &b).unwrap();
            assert_eq!(shuffled.permuted(&perm).species, b.species);
            let mut sorted = perm.clone();
            sorted.sort();
            assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        }
    }
}
