//! Generation: draw a base sample, integrate the learned field with forward
//! Euler steps, and map back to a crystal.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{add_noise_state, sample_base, BaseSampler, CompositionPool};
use crate::crystal::Crystal;
use crate::error::{Error, Result};
use crate::geometry::{FlowState, TangentVector};
use crate::net::VelocityNet;
use crate::real::Real;

/// Anything that yields a tangent vector at a state and time.
pub trait VelocityField<T: Real>: Sync {
    fn velocity(&self, state: &FlowState<T>, t: T) -> Result<TangentVector<T>>;
}

impl<T: Real> VelocityField<T> for VelocityNet<T> {
    fn velocity(&self, state: &FlowState<T>, t: T) -> Result<TangentVector<T>> {
        self.forward(state, t)
    }
}

impl<T: Real, F> VelocityField<T> for F
where
    F: Fn(&FlowState<T>, T) -> TangentVector<T> + Sync,
{
    fn velocity(&self, state: &FlowState<T>, t: T) -> Result<TangentVector<T>> {
        Ok(self(state, t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub steps: usize,
    pub anneal: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { steps: 50, anneal: 5.0, noise: 0.0, seed: 0 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.anneal >= 1.0) || !(self.noise >= 0.0) {
            return Err(Error::Config(format!("need steps >= 1, anneal >= 1, noise >= 0 (got {self:?})")));
        }
        Ok(())
    }
}

/// Velocity scaled by `1 + (s - 1) t`: identity at `t = 0`, `s` times at `t = 1`.
pub fn anti_anneal<T: Real>(v: &TangentVector<T>, t: T, scale: f64) -> TangentVector<T> {
    let s = T::one() + (T::lit(scale) - T::one()) * t;
    if s == T::one() {
        return v.clone();
    }
    v.scaled(s)
}

/// Forward Euler on `[0, 1]` with `steps` uniform steps; coordinates wrap
/// after every step.
pub fn integrate_state<T: Real, F: VelocityField<T> + ?Sized>(
    field: &F,
    start: &FlowState<T>,
    steps: usize,
    anneal: f64,
) -> Result<FlowState<T>> {
    let dt = T::one() / T::from_usize_lossy(steps);
    let mut state = start.clone();
    for k in 0..steps {
        let t = T::from_usize_lossy(k) * dt;
        let v = anti_anneal(&field.velocity(&state, t)?, t, anneal);
        state = state.step(&v, dt);
        if !state.is_finite() {
            return Err(Error::Integration { step: k });
        }
    }
    Ok(state)
}

/// Integrates from a base crystal and maps angles back to degrees. Fails
/// if the final cell has a non-positive length or is otherwise invalid.
pub fn euler_integrate<T: Real, F: VelocityField<T> + ?Sized>(
    field: &F,
    c0: &Crystal<T>,
    steps: usize,
    anneal: f64,
) -> Result<Crystal<T>> {
    if steps == 0 {
        return Err(Error::Config("at least one integration step is required".into()));
    }
    let start = FlowState::from_crystal_extended(c0)?;
    integrate_state(field, &start, steps, anneal)?.to_crystal()
}

/// Why a sample did not yield a crystal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    Base(String),
    NonFinite { step: usize },
    NonpositiveLength,
    InvalidCell(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample<T> {
    pub index: usize,
    pub start: Option<Crystal<T>>,
    pub crystal: Option<Crystal<T>>,
    pub failure: Option<Failure>,
    pub base_rejections: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub requested: usize,
    pub generated: usize,
    pub base_rejections: usize,
    pub base_failures: usize,
    pub nonfinite_aborts: usize,
    pub nonpositive_lengths: usize,
    pub invalid_cells: usize,
    pub wall_time_s: f64,
    pub steps_per_sample: usize,
}

/// The sample's random stream: a fixed seed with the sample index as stream
/// id, so results do not depend on scheduling.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn classify<T: Real>(e: Error, final_lengths: Option<[T; 3]>) -> Failure {
    match e {
        Error::Integration { step } => Failure::NonFinite { step },
        _ if final_lengths.is_some_and(|l| l.iter().any(|x| *x <= T::zero())) => Failure::NonpositiveLength,
        other => Failure::InvalidCell(other.to_string()),
    }
}

/// Integrates one start state; the start must come from the base already.
pub fn transport<T: Real, F: VelocityField<T> + ?Sized>(field: &F, c0: &Crystal<T>, config: &SampleConfig) -> std::result::Result<Crystal<T>, Failure> {
    let start = FlowState::from_crystal_extended(c0).map_err(|e| Failure::InvalidCell(e.to_string()))?;
    match integrate_state(field, &start, config.steps, config.anneal) {
        Ok(end) => end.to_crystal().map_err(|e| classify(e, Some(end.lengths))),
        Err(e) => Err(classify::<T>(e, None)),
    }
}

/// Draws `n_samples` compositions from `pool`, a base sample for each, and
/// transports them. Samples run in parallel with independent streams and
/// are returned in index order.
pub fn generate<T: Real, F, S>(
    field: &F,
    base: &S,
    pool: &CompositionPool,
    n_samples: usize,
    config: &SampleConfig,
) -> Result<(Vec<GeneratedSample<T>>, GenerationStats)>
where
    F: VelocityField<T> + ?Sized,
    S: BaseSampler<T> + ?Sized,
{
    config.validate()?;
    let clock = Instant::now();
    let samples: Vec<GeneratedSample<T>> = (0..n_samples)
        .into_par_iter()
        .map(|index| {
            let mut rng = sample_rng(config.seed, index);
            let mut out = GeneratedSample { index, start: None, crystal: None, failure: None, base_rejections: 0, steps: 0 };
            let drawn = pool.sample(&mut rng).map(<[_]>::to_vec).and_then(|species| sample_base(base, &species, &mut rng));
            let c0 = match drawn {
                Ok((c0, rejected)) => {
                    out.base_rejections = rejected;
                    c0
                }
                Err(e) => {
                    out.failure = Some(Failure::Base(e.to_string()));
                    return out;
                }
            };
            let c0 = if config.noise > 0.0 {
                match FlowState::from_crystal(&c0).map(|s| add_noise_state(&s, config.noise, &mut rng)).and_then(|s| s.to_crystal()) {
                    Ok(c) => c,
                    Err(_) => {
                        out.failure = Some(Failure::NonpositiveLength);
                        return out;
                    }
                }
            } else {
                c0
            };
            out.steps = config.steps;
            match transport(field, &c0, config) {
                Ok(c) => out.crystal = Some(c),
                Err(f) => out.failure = Some(f),
            }
            out.start = Some(c0);
            out
        })
        .collect();
    let mut stats = GenerationStats { requested: n_samples, steps_per_sample: config.steps, ..Default::default() };
    for s in &samples {
        stats.base_rejections += s.base_rejections;
        match &s.failure {
            None => stats.generated += 1,
            Some(Failure::Base(_)) => stats.base_failures += 1,
            Some(Failure::NonFinite { .. }) => stats.nonfinite_aborts += 1,
            Some(Failure::NonpositiveLength) => stats.nonpositive_lengths += 1,
            Some(Failure::InvalidCell(_)) => stats.invalid_cells += 1,
        }
    }
    stats.wall_time_s = clock.elapsed().as_secs_f64();
    Ok((samples, stats))
}
