use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{BaseSampler, Candidate, CompositionPool, Support};
use crate::crystal::{Composition, Crystal};
use crate::elements::Element;
use crate::error::{Error, Result};
use crate::real::Real;

pub const COORD_STEP: f64 = 0.01;
pub const LENGTH_STEP: f64 = 0.1;
pub const ANGLE_STEP: f64 = 1.0;
/// Pseudo-count per bin. The uniform tail it adds is the imperfection the
/// flow learns to repair.
pub const DEFAULT_SMOOTHING: f64 = 0.2;
const COORD_BINS: usize = 100;
const ANGLE_LO: i64 = 60;
const ANGLE_HI: i64 = 120;
/// Margin (Å) added on both sides of the observed length range.
const LENGTH_MARGIN: f64 = 1.0;

/// Smoothed histogram over the grid `origin + k * step`, `k = 0..probs.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub origin_index: i64,
    pub step: f64,
    pub probs: Vec<f64>,
}

impl Histogram {
    fn from_counts(origin_index: i64, step: f64, counts: &[f64], smoothing: f64) -> Result<Self> {
        let total: f64 = counts.iter().map(|c| c + smoothing).sum();
        if !(total > 0.0) {
            return Err(Error::Empty("histogram"));
        }
        Ok(Histogram { origin_index, step, probs: counts.iter().map(|c| (c + smoothing) / total).collect() })
    }

    /// Grid value of bin `k`, as the correctly rounded decimal `index / per_unit`.
    pub fn value(&self, k: usize) -> f64 {
        let per_unit = (1.0 / self.step).round();
        (self.origin_index + k as i64) as f64 / per_unit
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // u landed in the rounding slack above the last cumulative sum
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.value(self.sample_index(rng))
    }
}

/// Smoothed histogram stored as sparse counts over a grid of `n_bins`
/// bins: `p(k) = (count_k + smoothing) / (total + smoothing * n_bins)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseHistogram {
    pub origin_index: i64,
    pub step: f64,
    pub n_bins: usize,
    /// (bin, count) pairs with positive counts, sorted by bin.
    pub counts: Vec<(usize, f64)>,
    pub total: f64,
}

impl SparseHistogram {
    fn new(origin_index: i64, step: f64, n_bins: usize, bins: &[usize]) -> Self {
        let mut map = BTreeMap::new();
        for &b in bins {
            *map.entry(b.min(n_bins - 1)).or_insert(0.0) += 1.0;
        }
        SparseHistogram { origin_index, step, n_bins, counts: map.into_iter().collect(), total: bins.len() as f64 }
    }

    pub fn prob(&self, k: usize, smoothing: f64) -> f64 {
        let c = self.counts.iter().find(|(b, _)| *b == k).map_or(0.0, |(_, c)| *c);
        (c + smoothing) / (self.total + smoothing * self.n_bins as f64)
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, smoothing: f64, rng: &mut R) -> usize {
        let uniform_mass = smoothing * self.n_bins as f64;
        let u = rng.random::<f64>() * (self.total + uniform_mass);
        if u >= self.total || self.counts.is_empty() {
            return rng.random_range(0..self.n_bins);
        }
        let mut acc = 0.0;
        for &(b, c) in &self.counts {
            acc += c;
            if u < acc {
                return b;
            }
        }
        self.counts.last().unwrap().0
    }

    pub fn value(&self, k: usize) -> f64 {
        let per_unit = (1.0 / self.step).round();
        (self.origin_index + k as i64) as f64 / per_unit
    }

    pub fn sample<R: Rng + ?Sized>(&self, smoothing: f64, rng: &mut R) -> f64 {
        self.value(self.sample_index(smoothing, rng))
    }
}

/// Histograms fitted on the crystals of one composition: one per lattice
/// parameter, and one per axis for every atom slot, a slot being the j-th
/// atom of a given element.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionHistograms {
    pub lengths: [SparseHistogram; 3],
    pub angles: [SparseHistogram; 3],
    /// Keyed by `<symbol>#<occurrence>`.
    pub sites: BTreeMap<String, [SparseHistogram; 3]>,
}

fn slot_keys(species: &[Element]) -> Vec<String> {
    let mut seen: BTreeMap<Element, usize> = BTreeMap::new();
    species
        .iter()
        .map(|e| {
            let j = seen.entry(*e).or_insert(0);
            *j += 1;
            format!("{}#{}", e.symbol(), *j - 1)
        })
        .collect()
}

/// Independent per-component histograms over the fixed-precision grids a
/// language model writes: two decimals for fractional coordinates, one for
/// lengths, integers for angles.
///
/// Each value is drawn from the histogram of its own slot within the
/// requested composition when that composition was seen in fitting, and
/// from the pooled histogram otherwise. No joint structure is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedEmpiricalBase {
    pub coords: [Histogram; 3],
    pub lengths: [Histogram; 3],
    pub angles: [Histogram; 3],
    /// Keyed by composition formula.
    pub by_composition: BTreeMap<String, CompositionHistograms>,
    pub smoothing: f64,
    pub compositions: CompositionPool,
}

impl QuantizedEmpiricalBase {
    pub fn fit<T: Real>(dataset: &[Crystal<T>], smoothing: f64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if !(smoothing >= 0.0) {
            return Err(Error::Config("smoothing must be non-negative".into()));
        }
        let mut coord_counts = [[0.0; COORD_BINS]; 3];
        for c in dataset {
            for f in &c.frac_coords {
                for k in 0..3 {
                    let bin = (f[k].to_f64_lossy() / COORD_STEP).round() as i64;
                    coord_counts[k][bin.rem_euclid(COORD_BINS as i64) as usize] += 1.0;
                }
            }
        }
        let coords = [0, 1, 2].map(|k| Histogram::from_counts(0, COORD_STEP, &coord_counts[k], smoothing));

        let lengths = [0, 1, 2].map(|k| {
            let bins: Vec<i64> =
                dataset.iter().map(|c| (c.lattice.lengths[k].to_f64_lossy() / LENGTH_STEP).round() as i64).collect();
            let margin = (LENGTH_MARGIN / LENGTH_STEP).round() as i64;
            let lo = (bins.iter().min().unwrap() - margin).max(1);
            let hi = bins.iter().max().unwrap() + margin;
            let mut counts = vec![0.0; (hi - lo + 1) as usize];
            for b in bins {
                counts[(b.max(lo) - lo) as usize] += 1.0;
            }
            Histogram::from_counts(lo, LENGTH_STEP, &counts, smoothing)
        });

        let angles = [0, 1, 2].map(|k| {
            let mut counts = vec![0.0; (ANGLE_HI - ANGLE_LO + 1) as usize];
            for c in dataset {
                let a = c.lattice.angles[k].to_f64_lossy().round() as i64;
                if (ANGLE_LO..=ANGLE_HI).contains(&a) {
                    counts[(a - ANGLE_LO) as usize] += 1.0;
                }
            }
            Histogram::from_counts(ANGLE_LO, ANGLE_STEP, &counts, smoothing)
        });

        let unpack = |h: [Result<Histogram>; 3]| -> Result<[Histogram; 3]> {
            let [a, b, c] = h;
            Ok([a?, b?, c?])
        };
        let lengths = unpack(lengths)?;

        let mut groups: BTreeMap<String, Vec<&Crystal<T>>> = BTreeMap::new();
        for c in dataset {
            groups.entry(c.composition().key()).or_default().push(c);
        }
        let mut by_composition = BTreeMap::new();
        for (key, members) in groups {
            let length_hist = std::array::from_fn(|k| {
                let h = &lengths[k];
                let bins: Vec<usize> = members
                    .iter()
                    .map(|c| {
                        let b = (c.lattice.lengths[k].to_f64_lossy() / LENGTH_STEP).round() as i64;
                        (b - h.origin_index).clamp(0, h.probs.len() as i64 - 1) as usize
                    })
                    .collect();
                SparseHistogram::new(h.origin_index, LENGTH_STEP, h.probs.len(), &bins)
            });
            let angle_hist = std::array::from_fn(|k| {
                let bins: Vec<usize> = members
                    .iter()
                    .map(|c| c.lattice.angles[k].to_f64_lossy().round() as i64)
                    .filter(|a| (ANGLE_LO..=ANGLE_HI).contains(a))
                    .map(|a| (a - ANGLE_LO) as usize)
                    .collect();
                SparseHistogram::new(ANGLE_LO, ANGLE_STEP, (ANGLE_HI - ANGLE_LO + 1) as usize, &bins)
            });
            let mut site_bins: BTreeMap<String, [Vec<usize>; 3]> = BTreeMap::new();
            for c in &members {
                for (slot, f) in slot_keys(&c.species).into_iter().zip(&c.frac_coords) {
                    let entry = site_bins.entry(slot).or_default();
                    for k in 0..3 {
                        let bin = (f[k].to_f64_lossy() / COORD_STEP).round() as i64;
                        entry[k].push(bin.rem_euclid(COORD_BINS as i64) as usize);
                    }
                }
            }
            let sites = site_bins
                .into_iter()
                .map(|(slot, bins)| (slot, bins.map(|b| SparseHistogram::new(0, COORD_STEP, COORD_BINS, &b))))
                .collect();
            by_composition.insert(key, CompositionHistograms { lengths: length_hist, angles: angle_hist, sites });
        }

        Ok(QuantizedEmpiricalBase {
            coords: unpack(coords)?,
            lengths,
            angles: unpack(angles)?,
            by_composition,
            smoothing,
            compositions: CompositionPool::from_dataset(dataset),
        })
    }
}

impl<T: Real> BaseSampler<T> for QuantizedEmpiricalBase {
    fn name(&self) -> String {
        "quantized".into()
    }

    fn support(&self) -> Support {
        Support::Quantized { coord_step: COORD_STEP, length_step: LENGTH_STEP, angle_step: ANGLE_STEP }
    }

    fn draw(&self, species: &[Element], mut rng: &mut dyn RngCore) -> Result<Candidate<T>> {
        let a = self.smoothing;
        let cond = self.by_composition.get(&Composition::from_species(species).key());
        let frac_coords = slot_keys(species)
            .iter()
            .map(|slot| match cond.and_then(|h| h.sites.get(slot)) {
                Some(h) => [0, 1, 2].map(|k| T::lit(h[k].sample(a, &mut rng))),
                None => [0, 1, 2].map(|k| T::lit(self.coords[k].sample(&mut rng))),
            })
            .collect();
        let (lengths, angles) = match cond {
            Some(h) => (
                [0, 1, 2].map(|k| T::lit(h.lengths[k].sample(a, &mut rng))),
                [0, 1, 2].map(|k| T::lit(h.angles[k].sample(a, &mut rng))),
            ),
            None => (
                [0, 1, 2].map(|k| T::lit(self.lengths[k].sample(&mut rng))),
                [0, 1, 2].map(|k| T::lit(self.angles[k].sample(&mut rng))),
            ),
        };
        Ok(Candidate { species: species.iter().map(|e| e.symbol().to_string()).collect(), frac_coords, lengths, angles })
    }
}
