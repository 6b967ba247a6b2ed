//! Base distributions standing in for the language model's output
//! distribution, plus rejection of unphysical draws and optional noise.

mod external;
mod quantized;
mod uninformed;

pub use external::ExternalSampleSource;
pub use quantized::{Histogram, QuantizedEmpiricalBase, DEFAULT_SMOOTHING};
pub use uninformed::UninformedBase;

use std::fmt;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crystal::{angles_admit_cell, Crystal, LatticeParams};
use crate::elements::Element;
use crate::error::{Error, Result};
use crate::geometry::{angle_to_unconstrained_unchecked, unconstrained_to_angle, FlowState};
use crate::linalg::Vec3;
use crate::real::Real;

/// Unvalidated output of a base sampler. Species are kept as text because
/// an external generator may emit symbols that are not elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T> {
    pub species: Vec<String>,
    pub frac_coords: Vec<Vec3<T>>,
    pub lengths: Vec3<T>,
    pub angles: Vec3<T>,
}

impl<T: Real> Candidate<T> {
    pub fn from_crystal(c: &Crystal<T>) -> Self {
        Candidate {
            species: c.species.iter().map(|e| e.symbol().to_string()).collect(),
            frac_coords: c.frac_coords.clone(),
            lengths: c.lattice.lengths,
            angles: c.lattice.angles,
        }
    }
}

/// Why a base draw was rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    UnknownSpecies,
    NonpositiveLength,
    AngleOutOfRange,
    DegenerateCell,
    Malformed,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rejection::UnknownSpecies => "unknown_species",
            Rejection::NonpositiveLength => "nonpositive_length",
            Rejection::AngleOutOfRange => "angle_out_of_range",
            Rejection::DegenerateCell => "degenerate_cell",
            Rejection::Malformed => "malformed",
        };
        f.write_str(s)
    }
}

/// Accepts a candidate iff every species is a known element, every length
/// is positive, every angle is in (0, 180), and the result is a valid crystal.
pub fn reject_invalid<T: Real>(c: &Candidate<T>) -> std::result::Result<Crystal<T>, Rejection> {
    if c.species.is_empty() || c.species.len() != c.frac_coords.len() {
        return Err(Rejection::Malformed);
    }
    let mut species = Vec::with_capacity(c.species.len());
    for s in &c.species {
        match Element::from_symbol(s.trim()) {
            Some(e) => species.push(e),
            None => return Err(Rejection::UnknownSpecies),
        }
    }
    if c.lengths.iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
        return Err(Rejection::NonpositiveLength);
    }
    if c.angles.iter().any(|a| !(*a > T::zero() && *a < T::lit(180.0))) {
        return Err(Rejection::AngleOutOfRange);
    }
    if c.frac_coords.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Rejection::Malformed);
    }
    if !angles_admit_cell(&c.angles) {
        return Err(Rejection::DegenerateCell);
    }
    let lattice = LatticeParams { lengths: c.lengths, angles: c.angles };
    Crystal::new(species, c.frac_coords.clone(), lattice).map_err(|_| Rejection::Malformed)
}

/// Whether the lattice lies where the flow is defined: angles in [60, 120].
pub fn in_flow_domain<T: Real>(c: &Crystal<T>) -> bool {
    c.lattice.angles.iter().all(|&a| a >= T::lit(60.0) && a <= T::lit(120.0))
}

/// Support of a base distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Support {
    /// Values lie on fixed grids (coordinate, length and angle steps).
    Quantized { coord_step: f64, length_step: f64, angle_step: f64 },
    Continuous,
}

/// A base distribution conditioned on the species list.
pub trait BaseSampler<T: Real>: Send + Sync {
    fn name(&self) -> String;

    fn support(&self) -> Support;

    /// One raw draw for the given ordered species list.
    fn draw(&self, species: &[Element], rng: &mut dyn RngCore) -> Result<Candidate<T>>;
}

pub const MAX_SAMPLE_ATTEMPTS: usize = 100;

/// Draws until a candidate is accepted and lies in the flow domain, giving
/// up after 100 consecutive failures. Returns the crystal and the number of
/// rejected draws.
pub fn sample_base<T: Real, S: BaseSampler<T> + ?Sized>(
    sampler: &S,
    species: &[Element],
    rng: &mut dyn RngCore,
) -> Result<(Crystal<T>, usize)> {
    if species.is_empty() {
        return Err(Error::Empty("composition"));
    }
    for attempt in 0..MAX_SAMPLE_ATTEMPTS {
        let cand = sampler.draw(species, rng)?;
        if let Ok(c) = reject_invalid(&cand) {
            if in_flow_domain(&c) && c.species == species {
                return Ok((c, attempt));
            }
        }
    }
    Err(Error::Sampler(format!(
        "{} consecutive rejected draws from `{}`",
        MAX_SAMPLE_ATTEMPTS,
        sampler.name()
    )))
}

/// Zero-mean Gaussian noise in flow coordinates: fractional coordinates
/// (wrapped), lengths, and unconstrained angles. `sigma == 0` is the identity.
pub fn add_noise_state<T: Real, R: Rng + ?Sized>(state: &FlowState<T>, sigma: f64, rng: &mut R) -> FlowState<T> {
    if sigma <= 0.0 {
        return state.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite");
    let mut draw = || T::lit(normal.sample(rng));
    let mut out = state.clone();
    for f in out.coords.iter_mut() {
        for x in f.iter_mut() {
            *x = crate::crystal::wrap_frac(*x + draw());
        }
    }
    for l in out.lengths.iter_mut() {
        *l += draw();
    }
    for a in out.angles.iter_mut() {
        *a += draw();
    }
    out
}

/// Crystal-level noise; angles are perturbed in unconstrained space and
/// mapped back, so they stay in (60, 180).
pub fn add_noise<T: Real, R: Rng + ?Sized>(crystal: &Crystal<T>, sigma: f64, rng: &mut R) -> Crystal<T> {
    if sigma <= 0.0 {
        return crystal.clone();
    }
    let state = FlowState {
        species: crystal.species.clone(),
        coords: crystal.frac_coords.clone(),
        lengths: crystal.lattice.lengths,
        angles: crystal.lattice.angles.map(|a| angle_to_unconstrained_unchecked(a.max(T::lit(60.0 + 1e-9)))),
    };
    let noisy = add_noise_state(&state, sigma, rng);
    Crystal {
        species: noisy.species,
        frac_coords: noisy.coords,
        lattice: LatticeParams { lengths: noisy.lengths, angles: noisy.angles.map(unconstrained_to_angle) },
    }
}

/// Empirical distribution over species lists, used to pick compositions
/// for unconditional generation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionPool {
    pub entries: Vec<Vec<Element>>,
}

impl CompositionPool {
    pub fn from_dataset<T: Real>(dataset: &[Crystal<T>]) -> Self {
        CompositionPool { entries: dataset.iter().map(|c| c.species.clone()).collect() }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&[Element]> {
        if self.entries.is_empty() {
            return Err(Error::Empty("composition pool"));
        }
        Ok(&self.entries[rng.random_range(0..self.entries.len())])
    }
}

/// Which base to use; parsed from `quantized`, `uninformed` or `external:<path>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BaseKind {
    Quantized,
    Uninformed,
    External(String),
}

impl std::str::FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantized" => Ok(BaseKind::Quantized),
            "uninformed" => Ok(BaseKind::Uninformed),
            _ => match s.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(BaseKind::External(p.to_string())),
                _ => Err(Error::Config(format!("unknown base kind `{s}` (quantized | uninformed | external:<path>)"))),
            },
        }
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseKind::Quantized => f.write_str("quantized"),
            BaseKind::Uninformed => f.write_str("uninformed"),
            BaseKind::External(p) => write!(f, "external:{p}"),
        }
    }
}

/// A fitted base model as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseModel {
    Quantized(QuantizedEmpiricalBase),
    Uninformed(UninformedBase),
}

impl BaseModel {
    pub fn fit<T: Real>(kind: &BaseKind, dataset: &[Crystal<T>], smoothing: f64) -> Result<Self> {
        match kind {
            BaseKind::Quantized => Ok(BaseModel::Quantized(QuantizedEmpiricalBase::fit(dataset, smoothing)?)),
            BaseKind::Uninformed => Ok(BaseModel::Uninformed(UninformedBase::fit(dataset)?)),
            BaseKind::External(_) => Err(Error::Config("external samples are ingested, not fitted".into())),
        }
    }

    pub fn compositions(&self) -> &CompositionPool {
        match self {
            BaseModel::Quantized(b) => &b.compositions,
            BaseModel::Uninformed(b) => &b.compositions,
        }
    }
}

impl<T: Real> BaseSampler<T> for BaseModel {
    fn name(&self) -> String {
        match self {
            BaseModel::Quantized(b) => BaseSampler::<T>::name(b),
            BaseModel::Uninformed(b) => BaseSampler::<T>::name(b),
        }
    }

    fn support(&self) -> Support {
        match self {
            BaseModel::Quantized(b) => BaseSampler::<T>::support(b),
            BaseModel::Uninformed(b) => BaseSampler::<T>::support(b),
        }
    }

    fn draw(&self, species: &[Element], rng: &mut dyn RngCore) -> Result<Candidate<T>> {
        match self {
            BaseModel::Quantized(b) => b.draw(species, rng),
            BaseModel::Uninformed(b) => b.draw(species, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::el;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nacl() -> Crystal<f64> {
        Crystal::new(vec![el("Na"), el("Cl")], vec![[0.0; 3], [0.5; 3]], LatticeParams::cubic(5.6)).unwrap()
    }

    #[test]
    fn reject_examples() {
        let ok = Candidate::from_crystal(&nacl());
        assert!(reject_invalid(&ok).is_ok());
        let mut bad = ok.clone();
        bad.lengths[0] = -1.0;
        assert_eq!(reject_invalid(&bad), Err(Rejection::NonpositiveLength));
        let mut bad = ok.clone();
        bad.angles[0] = 185.0;
        assert_eq!(reject_invalid(&bad), Err(Rejection::AngleOutOfRange));
        let mut bad = ok.clone();
        bad.species[1] = "Qq".into();
        assert_eq!(reject_invalid(&bad), Err(Rejection::UnknownSpecies));
        let mut bad = ok.clone();
        bad.angles = [120.0, 120.0, 120.0];
        assert_eq!(reject_invalid(&bad), Err(Rejection::DegenerateCell));
        let mut bad = ok;
        bad.frac_coords.pop();
        assert_eq!(reject_invalid(&bad), Err(Rejection::Malformed));
    }

    /// Exhaustive edge-case suite: accepted iff every crystal invariant holds.
    #[test]
    fn rejection_soundness_suite() {
        let lengths = [[5.0, 5.0, 5.0], [0.0, 5.0, 5.0], [5.0, -1e-9, 5.0], [1e-6, 1.0, 1.0], [f64::NAN, 1.0, 1.0]];
        let angles = [
            [90.0, 90.0, 90.0],
            [0.0, 90.0, 90.0],
            [180.0, 90.0, 90.0],
            [179.0, 90.0, 90.0],
            [60.0, 60.0, 60.0],
            [120.0, 120.0, 120.0],
            [30.0, 30.0, 30.0],
            [100.0, 100.0, 100.0],
            [-5.0, 90.0, 90.0],
            [95.0, 95.0, f64::INFINITY],
        ];
        let mut count = 0;
        for l in lengths {
            for a in angles {
                let cand = Candidate { species: vec!["Na".into()], frac_coords: vec![[0.2, 0.3, 0.4]], lengths: l, angles: a };
                let expected = LatticeParams::new(l, a).is_ok();
                assert_eq!(reject_invalid(&cand).is_ok(), expected, "{l:?} {a:?}");
                count += 1;
            }
        }
        assert_eq!(count, 50);
    }

    #[test]
    fn noise_zero_is_identity_and_wraps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = nacl();
        assert_eq!(add_noise(&c, 0.0, &mut rng), c);
        let mut diffs = Vec::new();
        for _ in 0..5000 {
            let n = add_noise(&c, 0.01, &mut rng);
            for (a, b) in n.frac_coords.iter().flatten().zip(c.frac_coords.iter().flatten()) {
                assert!((0.0..1.0).contains(a));
                diffs.push(crate::geometry::torus_log(*b, *a));
            }
        }
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((sd - 0.01).abs() < 0.001, "{sd}");
    }

    #[test]
    fn base_kind_parsing() {
        assert_eq!("quantized".parse::<BaseKind>().unwrap(), BaseKind::Quantized);
        assert_eq!("uninformed".parse::<BaseKind>().unwrap(), BaseKind::Uninformed);
        assert_eq!("external:/tmp/x.jsonl".parse::<BaseKind>().unwrap(), BaseKind::External("/tmp/x.jsonl".into()));
        assert!("external:".parse::<BaseKind>().is_err());
        assert!("llm".parse::<BaseKind>().is_err());
    }
}
