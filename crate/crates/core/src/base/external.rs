use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{in_flow_domain, reject_invalid, BaseSampler, Candidate, CompositionPool, Rejection, Support};
use crate::crystal::{Composition, Crystal};
use crate::elements::Element;
use crate::error::{Error, Result};
use crate::io::read_records;
use crate::real::Real;

/// Provenance of externally generated samples. Recorded, not interpreted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalMetadata {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub generator: Option<String>,
}

/// Crystals produced by some outside generator, read from JSONL and
/// served back by composition.
#[derive(Clone, Debug)]
pub struct ExternalSampleSource {
    pub path: PathBuf,
    pub metadata: ExternalMetadata,
    pub n_records: usize,
    /// Rejected records by reason; unparseable lines count as `malformed`.
    pub rejected: BTreeMap<Rejection, usize>,
    by_composition: BTreeMap<String, Vec<Crystal<f64>>>,
}

impl ExternalSampleSource {
    pub fn load(path: &Path, metadata: ExternalMetadata) -> Result<Self> {
        let mut rejected = BTreeMap::new();
        let mut by_composition: BTreeMap<String, Vec<Crystal<f64>>> = BTreeMap::new();
        let records = read_records(path)?;
        let n_records = records.len();
        for (line, rec) in records {
            let outcome = rec.map_err(|_| Rejection::Malformed).and_then(|r| {
                let c = reject_invalid::<f64>(&r.to_candidate())?;
                let key = c.composition().key();
                if r.composition_key.as_ref().is_some_and(|k| *k != key) {
                    return Err(Rejection::Malformed);
                }
                if !in_flow_domain(&c) {
                    return Err(Rejection::AngleOutOfRange);
                }
                Ok((key, c))
            });
            match outcome {
                Ok((key, c)) => by_composition.entry(key).or_default().push(c),
                Err(reason) => {
                    log::debug!("{}:{line}: rejected ({reason})", path.display());
                    *rejected.entry(reason).or_insert(0) += 1;
                }
            }
        }
        if by_composition.is_empty() {
            return Err(Error::Empty("valid external samples"));
        }
        Ok(ExternalSampleSource { path: path.to_path_buf(), metadata, n_records, rejected, by_composition })
    }

    pub fn n_accepted(&self) -> usize {
        self.by_composition.values().map(Vec::len).sum()
    }

    pub fn n_rejected(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn compositions(&self) -> CompositionPool {
        CompositionPool { entries: self.by_composition.values().flatten().map(|c| c.species.clone()).collect() }
    }
}

impl<T: Real> BaseSampler<T> for ExternalSampleSource {
    fn name(&self) -> String {
        format!("external:{}", self.path.display())
    }

    fn support(&self) -> Support {
        Support::Continuous
    }

    /// A stored sample of the same composition with atoms reordered to
    /// follow `species`.
    fn draw(&self, species: &[Element], rng: &mut dyn RngCore) -> Result<Candidate<T>> {
        let key = Composition::from_species(species).key();
        let pool = self
            .by_composition
            .get(&key)
            .ok_or_else(|| Error::Sampler(format!("no external sample with composition {key}")))?;
        let c = &pool[rng.random_range(0..pool.len())];
        let mut used = vec![false; c.n_atoms()];
        let mut frac_coords = Vec::with_capacity(species.len());
        for s in species {
            let k = (0..c.n_atoms()).find(|&k| !used[k] && c.species[k] == *s).expect("composition matched");
            used[k] = true;
            frac_coords.push(c.frac_coords[k].map(T::lit));
        }
        Ok(Candidate {
            species: species.iter().map(|e| e.symbol().to_string()).collect(),
            frac_coords,
            lengths: c.lattice.lengths.map(T::lit),
            angles: c.lattice.angles.map(T::lit),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::sample_base;
    use crate::testing::el;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loads_counts_and_reorders() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("llm.jsonl");
        let lat = r#""lattice":{"a":5.6,"b":5.6,"c":5.6,"alpha":90,"beta":90,"gamma":90}"#;
        let text = [
            format!(r#"{{"species":["Cl","Na"],"frac_coords":[[0.5,0.5,0.5],[0,0,0]],{lat},"composition_key":"Na1Cl1"}}"#),
            format!(r#"{{"species":["Xx","Na"],"frac_coords":[[0.5,0.5,0.5],[0,0,0]],{lat}}}"#),
            "not json".to_string(),
            format!(r#"{{"species":["Na"],"frac_coords":[[0,0,0]],{lat},"composition_key":"Cl1"}}"#),
        ]
        .join("\n");
        std::fs::write(&path, text).unwrap();
        let src = ExternalSampleSource::load(&path, ExternalMetadata::default()).unwrap();
        assert_eq!(src.n_records, 4);
        assert_eq!(src.n_accepted(), 1);
        assert_eq!(src.rejected[&Rejection::UnknownSpecies], 1);
        assert_eq!(src.rejected[&Rejection::Malformed], 2);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (c, _) = sample_base::<f64, _>(&src, &[el("Na"), el("Cl")], &mut rng).unwrap();
        assert_eq!(c.frac_coords, vec![[0.0; 3], [0.5; 3]]);
        assert!(sample_base::<f64, _>(&src, &[el("K"), el("Cl")], &mut rng).is_err());
    }
}
