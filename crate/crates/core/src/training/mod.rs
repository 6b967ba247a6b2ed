//! Pair construction, the flow-matching loss on geodesic interpolants, and
//! the optimization loop.

mod optim;
mod pairs;

pub use optim::AdamW;
pub use pairs::{atom_alignment, build_pair_dataset, PairDataset, MAX_CONSECUTIVE_REJECTIONS};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crystal::Crystal;
use crate::error::{Error, Result};
use crate::geometry::{endpoint_target, remove_mean_translation, state_geodesic, FlowState, TangentVector};
use crate::io::pair_to_json;
use crate::net::{Standardization, VelocityNet};
use crate::real::Real;

/// Largest training time; the conditional field is singular at 1.
pub const T_MAX: f64 = 1.0 - 1e-4;

pub const LEARNING_RATE_PRESETS: [f64; 5] = [1e-3, 7e-4, 5e-4, 3e-4, 1e-4];
pub const COORD_WEIGHT_GRID: [f64; 4] = [100.0, 200.0, 300.0, 400.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub coords: f64,
    pub lattice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { coords: 200.0, lattice: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            batch_size: 32,
            epochs: 20,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            seed: 0,
            patience: 5,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weights.coords > 0.0 && self.weights.lattice > 0.0) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("learning rate, weight decay or validation fraction out of range".into()));
        }
        Ok(())
    }

    /// One config per swept learning rate.
    pub fn learning_rate_sweep(&self) -> Vec<TrainConfig> {
        LEARNING_RATE_PRESETS.iter().map(|&lr| TrainConfig { learning_rate: lr, ..self.clone() }).collect()
    }

    /// One config per coordinate weight, lattice weight fixed at 1.
    pub fn loss_weight_sweep(&self) -> Vec<TrainConfig> {
        COORD_WEIGHT_GRID
            .iter()
            .map(|&w| TrainConfig { weights: LossWeights { coords: w, lattice: 1.0 }, ..self.clone() })
            .collect()
    }
}

/// A pair in flow coordinates with its (time-independent) regression target.
#[derive(Clone, Debug)]
pub struct FlowPair<T> {
    pub start: FlowState<T>,
    pub end: FlowState<T>,
    pub target: TangentVector<T>,
}

impl<T: Real> FlowPair<T> {
    pub fn new(c0: &Crystal<T>, c1: &Crystal<T>) -> Result<Self> {
        let start = FlowState::from_crystal_extended(c0)?;
        let end = FlowState::from_crystal_extended(c1)?;
        let target = endpoint_target(&start, &end)?;
        Ok(FlowPair { start, end, target })
    }

    pub fn at(&self, t: T) -> Result<FlowState<T>> {
        state_geodesic(&self.start, &self.end, t)
    }
}

/// Weighted squared error between a prediction and a target, and its
/// gradient with respect to the prediction.
pub fn loss_terms<T: Real>(v: &TangentVector<T>, target: &TangentVector<T>, w: &LossWeights) -> (T, TangentVector<T>) {
    let n = v.n_atoms();
    let wf = T::lit(w.coords) / T::from_usize_lossy(3 * n);
    let wl = T::lit(w.lattice) / T::lit(6.0);
    let projected = remove_mean_translation(&v.coords);
    let mut loss = T::zero();
    let mut grad = TangentVector::zeros(n);
    for i in 0..n {
        for k in 0..3 {
            let r = projected[i][k] - target.coords[i][k];
            loss += wf * r * r;
            grad.coords[i][k] = T::lit(2.0) * wf * r;
        }
    }
    for k in 0..3 {
        let r = v.lengths[k] - target.lengths[k];
        loss += wl * r * r;
        grad.lengths[k] = T::lit(2.0) * wl * r;
        let r = v.angles[k] - target.angles[k];
        loss += wl * r * r;
        grad.angles[k] = T::lit(2.0) * wl * r;
    }
    (loss, grad)
}

/// Flow-matching loss of one aligned pair at time `t`.
pub fn rfm_loss<T: Real>(net: &VelocityNet<T>, c0: &Crystal<T>, c1: &Crystal<T>, t: T, w: &LossWeights) -> Result<T> {
    if !(t >= T::zero() && t < T::one()) {
        return Err(Error::SingularTime);
    }
    let pair = FlowPair::new(c0, c1)?;
    pair_loss(net, &pair, t, w)
}

fn pair_loss<T: Real>(net: &VelocityNet<T>, pair: &FlowPair<T>, t: T, w: &LossWeights) -> Result<T> {
    let v = net.forward(&pair.at(t)?, t)?;
    Ok(loss_terms(&v, &pair.target, w).0)
}

/// Loss and parameter gradient of one pair.
pub fn pair_loss_and_grad<T: Real>(net: &VelocityNet<T>, pair: &FlowPair<T>, t: T, w: &LossWeights) -> Result<(T, Vec<T>)> {
    let (v, tape) = net.forward_with_tape(&pair.at(t)?, t)?;
    let (loss, d_out) = loss_terms(&v, &pair.target, w);
    let mut grad = vec![T::zero(); net.n_params()];
    net.backward(&tape, &d_out, &mut grad)?;
    Ok((loss, grad))
}

/// Input and output statistics fitted on both endpoints of every pair.
pub fn fit_standardization<T: Real>(pairs: &[FlowPair<T>]) -> Standardization {
    let inputs: Vec<[T; 6]> = pairs.iter().flat_map(|p| [p.start.lattice(), p.end.lattice()]).collect();
    let targets: Vec<TangentVector<T>> = pairs.iter().map(|p| p.target.clone()).collect();
    Standardization::fit(&inputs, &targets)
}

pub fn flow_pairs<T: Real>(data: &PairDataset<T>) -> Result<Vec<FlowPair<T>>> {
    data.pairs.iter().map(|(c0, c1)| FlowPair::new(c0, c1)).collect()
}

/// Seed-stable assignment of a pair to the validation split.
fn is_validation<T: Real>(c0: &Crystal<T>, c1: &Crystal<T>, seed: u64, fraction: f64) -> bool {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(pair_to_json(c0, c1).as_bytes());
    let digest = h.finalize();
    let x = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    (x as f64 / u64::MAX as f64) < fraction
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss while training this epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
    pub max_grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub net: VelocityNet<T>,
    pub history: Vec<EpochRecord>,
    /// Training-split loss at fixed evaluation times, before and after.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

impl<T> TrainOutcome<T> {
    pub fn loss_reduction(&self) -> f64 {
        1.0 - self.final_loss / self.initial_loss
    }
}

/// Mean loss over `pairs` at the given times.
fn mean_loss<T: Real>(net: &VelocityNet<T>, pairs: &[&FlowPair<T>], times: &[T], w: &LossWeights) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<Result<T>> = pairs.par_iter().zip(times).map(|(p, &t)| pair_loss(net, p, t, w)).collect();
    let mut total = 0.0;
    for l in losses {
        total += l?.to_f64_lossy();
    }
    Ok(total / pairs.len() as f64)
}

fn sample_t<T: Real, R: Rng>(rng: &mut R) -> T {
    T::lit(rng.random_range(0.0..=T_MAX))
}

/// Minibatch training with early stopping on the validation loss; returns
/// the parameters of the best validation epoch.
pub fn train<T: Real>(config: &TrainConfig, data: &PairDataset<T>, net: VelocityNet<T>) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("pair dataset"));
    }
    let all = flow_pairs(data)?;
    let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
    for (p, (c0, c1)) in all.iter().zip(&data.pairs) {
        if is_validation(c0, c1, config.seed, config.val_fraction) {
            val_set.push(p);
        } else {
            train_set.push(p);
        }
    }
    if train_set.is_empty() {
        std::mem::swap(&mut train_set, &mut val_set);
    }
    let w = &config.weights;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_e7a1);
    let train_times: Vec<T> = train_set.iter().map(|_| sample_t(&mut eval_rng)).collect();
    let val_times: Vec<T> = val_set.iter().map(|_| sample_t(&mut eval_rng)).collect();
    // without a validation split, early stopping watches the training split
    let (watch, watch_times) = if val_set.is_empty() { (&train_set, &train_times) } else { (&val_set, &val_times) };

    let mut net = net;
    let initial_loss = mean_loss(&net, &train_set, &train_times, w)?;
    let mut best_val = mean_loss(&net, watch, watch_times, w)?;
    let mut best_params = net.params.clone();
    let mut best_epoch = 0;
    let mut opt = AdamW::new(net.n_params(), config.weight_decay);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut max_grad_norm: f64 = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let times: Vec<T> = batch.iter().map(|_| sample_t(&mut rng)).collect();
            let results: Vec<Result<(T, Vec<T>)>> =
                batch.par_iter().zip(&times).map(|(&i, &t)| pair_loss_and_grad(&net, train_set[i], t, w)).collect();
            let scale = T::one() / T::from_usize_lossy(batch.len());
            let mut grad = vec![T::zero(); net.n_params()];
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l.to_f64_lossy();
                for (a, x) in grad.iter_mut().zip(&g) {
                    *a += *x * scale;
                }
            }
            batch_loss /= batch.len() as f64;
            let grad_norm = grad.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
            if !batch_loss.is_finite() || !grad_norm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: loss {batch_loss}, gradient norm {grad_norm}"
                )));
            }
            max_grad_norm = max_grad_norm.max(grad_norm);
            epoch_loss += batch_loss * batch.len() as f64;
            opt.step(&mut net.params, &grad, config.learning_rate);
        }
        epoch_loss /= train_set.len() as f64;
        let val_loss = mean_loss(&net, watch, watch_times, w)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_params.clone_from(&net.params);
            best_epoch = epoch;
        }
        log::info!("epoch {epoch}: train {epoch_loss:.5} val {val_loss:.5} best {best_val:.5}");
        history.push(EpochRecord { epoch, train_loss: epoch_loss, val_loss, best_val_loss: best_val, max_grad_norm });
        if epoch - best_epoch >= config.patience {
            stopped_early = epoch < config.epochs;
            break;
        }
    }
    net.params = best_params;
    let final_loss = mean_loss(&net, &train_set, &train_times, w)?;
    Ok(TrainOutcome {
        net,
        history,
        initial_loss,
        final_loss,
        best_epoch,
        stopped_early,
        n_train: train_set.len(),
        n_val: val_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::LatticeParams;
    use crate::net::NetConfig;
    use crate::testing::{el, random_crystal};

    fn tiny() -> NetConfig {
        NetConfig { hidden: 8, time_dim: 4, layers: 1, n_freq: 2 }
    }

    fn fixed_pair() -> (Crystal<f64>, Crystal<f64>) {
        let lat0 = LatticeParams::new([5.0, 5.5, 6.0], [90.0, 90.0, 90.0]).unwrap();
        let lat1 = LatticeParams::new([5.4, 5.1, 6.0], [90.0, 75.0, 120.0]).unwrap();
        let c0 = Crystal::new(vec![el("Na"), el("Cl")], vec![[0.1, 0.0, 0.0], [0.5, 0.5, 0.9]], lat0).unwrap();
        let c1 = Crystal::new(vec![el("Na"), el("Cl")], vec![[0.3, 0.0, 0.0], [0.3, 0.5, 0.1]], lat1).unwrap();
        (c0, c1)
    }

    #[test]
    fn zero_prediction_loss_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = VelocityNet::<f64>::new(tiny(), Standardization::default(), &mut rng).unwrap();
        let (c0, c1) = fixed_pair();
        // wrapped displacements: atom 0 (+0.2, 0, 0), atom 1 (-0.2, 0, +0.2); mean (0, 0, 0.1)
        let coord_sq = 0.2f64.powi(2) * 2.0 + 0.1f64.powi(2) * 2.0;
        let phi = |a: f64| ((a - 60.0) / 120.0 / (1.0 - (a - 60.0) / 120.0)).ln();
        let lat_sq = 0.4f64.powi(2) + 0.4f64.powi(2) + (phi(75.0) - phi(90.0)).powi(2) + (phi(120.0) - phi(90.0)).powi(2);
        let expected = 200.0 / 6.0 * coord_sq + lat_sq / 6.0;
        for t in [0.0, 0.3, 0.8] {
            let l = rfm_loss(&net, &c0, &c1, t, &LossWeights::default()).unwrap();
            assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
        }
        let doubled = rfm_loss(&net, &c0, &c1, 0.3, &LossWeights { coords: 400.0, lattice: 1.0 }).unwrap();
        assert!((doubled - expected - 200.0 / 6.0 * coord_sq).abs() < 1e-12);
        assert!(rfm_loss(&net, &c0, &c1, 1.0, &LossWeights::default()).is_err());
    }

    #[test]
    fn exact_prediction_gives_zero_loss() {
        let (c0, c1) = fixed_pair();
        let pair = FlowPair::new(&c0, &c1).unwrap();
        let (l, g) = loss_terms(&pair.target, &pair.target, &LossWeights::default());
        assert_eq!(l, 0.0);
        assert!(g.coords.iter().flatten().chain(g.lattice().iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn loss_invariant_under_joint_permutation_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = VelocityNet::<f64>::new(tiny(), Standardization::default(), &mut rng).unwrap();
        net.params.iter_mut().for_each(|p| *p += rng.random_range(-0.1..0.1));
        let w = LossWeights::default();
        for _ in 0..20 {
            let c1 = random_crystal(&mut rng, 5);
            let mut c0 = random_crystal(&mut rng, 5);
            c0.species = c1.species.clone();
            let t = rng.random_range(0.0..0.99);
            let base = rfm_loss(&net, &c0, &c1, t, &w).unwrap();
            let perm = [3, 0, 4, 1, 2];
            let permuted = rfm_loss(&net, &c0.permuted(&perm), &c1.permuted(&perm), t, &w).unwrap();
            assert!((base - permuted).abs() < 1e-9);
            let s = [rng.random::<f64>(), rng.random(), rng.random()];
            let shifted = rfm_loss(&net, &c0.translated(&s), &c1.translated(&s), t, &w).unwrap();
            assert!((base - shifted).abs() < 1e-9, "{base} {shifted}");
        }
    }

    fn dataset(seed: u64, identity: bool) -> PairDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..48)
            .map(|_| {
                let c1 = random_crystal(&mut rng, 3);
                let c0 = if identity {
                    c1.clone()
                } else {
                    let mut c = random_crystal(&mut rng, 3);
                    c.species = c1.species.clone();
                    c
                };
                (c0, c1)
            })
            .collect();
        PairDataset { pairs, base: "test".into(), base_draws: 48, rejected_draws: 0 }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let data = dataset(2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = VelocityNet::<f64>::new(tiny(), Standardization::default(), &mut rng).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, weight_decay: 0.3, epochs: 3, patience: 10, ..Default::default() };
        let out = train(&cfg, &data, net.clone()).unwrap();
        assert_eq!(out.net.params, net.params);
        let first = out.history[0].val_loss;
        assert!(out.history.iter().all(|h| h.val_loss == first));
    }

    #[test]
    fn identity_transport_learns_zero_field_and_is_deterministic() {
        let data = dataset(4, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = VelocityNet::<f64>::new(tiny(), Standardization::default(), &mut rng).unwrap();
        let cfg = TrainConfig { epochs: 5, batch_size: 8, ..Default::default() };
        let a = train(&cfg, &data, net.clone()).unwrap();
        assert!(a.final_loss < 1e-3, "{}", a.final_loss);
        let b = train(&cfg, &data, net).unwrap();
        assert_eq!(a.history, b.history);
        assert!(a.history.windows(2).all(|w| w[1].best_val_loss <= w[0].best_val_loss));
        assert!(a.history.iter().all(|h| h.max_grad_norm.is_finite()));
    }

    #[test]
    fn training_reduces_loss() {
        // oxygen is always displaced along x, everything else stays put
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs = (0..48)
            .map(|_| {
                let mut c1 = random_crystal(&mut rng, 3);
                c1.species[0] = el("O");
                c1.species[1..].iter_mut().for_each(|s| {
                    if *s == el("O") {
                        *s = el("Fe")
                    }
                });
                let c0 = Crystal::new(
                    c1.species.clone(),
                    c1.frac_coords.iter().enumerate().map(|(i, f)| if i == 0 { [f[0] - 0.1, f[1], f[2]] } else { *f }).collect(),
                    c1.lattice,
                )
                .unwrap();
                (c0, c1)
            })
            .collect();
        let data = PairDataset { pairs, base: "test".into(), base_draws: 48, rejected_draws: 0 };
        let stats = fit_standardization(&flow_pairs(&data).unwrap());
        let net = VelocityNet::<f64>::new(tiny(), stats, &mut rng).unwrap();
        let cfg = TrainConfig { epochs: 15, batch_size: 8, learning_rate: 3e-3, patience: 15, ..Default::default() };
        let out = train(&cfg, &data, net).unwrap();
        assert!(out.loss_reduction() > 0.5, "{} -> {}", out.initial_loss, out.final_loss);
    }

    #[test]
    fn presets() {
        let base = TrainConfig::default();
        assert_eq!(base.learning_rate, 3e-4);
        assert_eq!(base.weights, LossWeights { coords: 200.0, lattice: 1.0 });
        assert_eq!(base.learning_rate_sweep().len(), 5);
        assert_eq!(base.loss_weight_sweep().iter().map(|c| c.weights.coords).collect::<Vec<_>>(), COORD_WEIGHT_GRID);
        assert!(TrainConfig { weights: LossWeights { coords: 0.0, lattice: 1.0 }, ..base }.validate().is_err());
    }
}
