//! Velocity field network: message passing over the fully connected atom
//! graph with edges built from torus displacements, a residual node update
//! with layer normalization, a per-atom coordinate head and a pooled lattice
//! head. Gradients are computed by a hand-written reverse pass.

mod checkpoint;
mod embed;

pub use checkpoint::Checkpoint;
pub use embed::{displacement_embedding, edge_embedding_dim, sinusoidal_embedding, time_embedding};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::elements::N_ELEMENTS;
use crate::error::{Error, Result};
use crate::geometry::{remove_mean_translation, FlowState, TangentVector};
use crate::linalg::{self, Vec3};
use crate::real::{silu, silu_grad, Real};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: usize,
    pub time_dim: usize,
    pub layers: usize,
    pub n_freq: usize,
}

impl NetConfig {
    pub fn desk() -> Self {
        NetConfig { hidden: 64, time_dim: 32, layers: 3, n_freq: 10 }
    }

    pub fn full() -> Self {
        NetConfig { hidden: 512, time_dim: 256, layers: 6, n_freq: 10 }
    }

    /// Small enough for single-core test runs.
    pub fn compact() -> Self {
        NetConfig { hidden: 32, time_dim: 16, layers: 2, n_freq: 4 }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "compact" => Ok(Self::compact()),
            _ => Err(Error::Config(format!("unknown network preset `{name}` (desk | full | compact)"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Config(format!("invalid network shape {self:?}")));
        }
        Ok(())
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Z-scoring of the lattice input and de-standardization of the outputs.
/// The lattice is (a, b, c, unconstrained angles).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub lattice_in_mean: [f64; 6],
    pub lattice_in_std: [f64; 6],
    pub coord_out_std: [f64; 3],
    pub lattice_out_mean: [f64; 6],
    pub lattice_out_std: [f64; 6],
}

impl Default for Standardization {
    fn default() -> Self {
        Standardization {
            lattice_in_mean: [0.0; 6],
            lattice_in_std: [1.0; 6],
            coord_out_std: [1.0; 3],
            lattice_out_mean: [0.0; 6],
            lattice_out_std: [1.0; 6],
        }
    }
}

impl Standardization {
    pub fn validate(&self) -> Result<()> {
        let stds = self.lattice_in_std.iter().chain(&self.coord_out_std).chain(&self.lattice_out_std);
        let means = self.lattice_in_mean.iter().chain(&self.lattice_out_mean);
        if stds.clone().any(|s| !(*s > 0.0) || !s.is_finite()) || means.clone().any(|m| !m.is_finite()) {
            return Err(Error::Checkpoint("standardization stds must be positive and finite".into()));
        }
        Ok(())
    }

    /// Statistics from lattice inputs and target tangents.
    pub fn fit<T: Real>(lattice_inputs: &[[T; 6]], targets: &[TangentVector<T>]) -> Self {
        fn stats<const K: usize>(rows: impl Iterator<Item = [f64; K]>) -> ([f64; K], [f64; K]) {
            let rows: Vec<[f64; K]> = rows.collect();
            let n = rows.len().max(1) as f64;
            let mut mean = [0.0; K];
            let mut std = [0.0; K];
            for r in &rows {
                for k in 0..K {
                    mean[k] += r[k] / n;
                }
            }
            for r in &rows {
                for k in 0..K {
                    std[k] += (r[k] - mean[k]).powi(2) / n;
                }
            }
            (mean, std.map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 }))
        }
        let (lattice_in_mean, lattice_in_std) = stats(lattice_inputs.iter().map(|l| l.map(|x| x.to_f64_lossy())));
        // coordinate tangents are mean-free, so only their scale is fitted
        let coord_rows = targets.iter().flat_map(|t| t.coords.iter().map(|c| c.map(|x| x.to_f64_lossy())));
        let (_, coord_out_std) = stats(coord_rows.clone().chain(coord_rows.map(|c| c.map(|x| -x))));
        let (lattice_out_mean, lattice_out_std) = stats(targets.iter().map(|t| t.lattice().map(|x| x.to_f64_lossy())));
        Standardization { lattice_in_mean, lattice_in_std, coord_out_std, lattice_out_mean, lattice_out_std }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Debug)]
struct LayerIdx {
    msg1: Dense,
    msg2: Dense,
    upd1: Dense,
    upd2: Dense,
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: usize,
    layers: Vec<LayerIdx>,
    coord1: Dense,
    coord2: Dense,
    lat1: Dense,
    lat2: Dense,
    total: usize,
}

struct Allocator(usize);

impl Allocator {
    fn dense(&mut self, fan_in: usize, fan_out: usize) -> Dense {
        let d = Dense { w: self.0, b: self.0 + fan_in * fan_out, fan_in, fan_out };
        self.0 += (fan_in + 1) * fan_out;
        d
    }

    fn block(&mut self, len: usize) -> usize {
        self.0 += len;
        self.0 - len
    }
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let h = cfg.hidden;
        let msg_in = 2 * h + 6 + edge_embedding_dim(cfg.n_freq) + cfg.time_dim;
        let mut at = Allocator(0);
        let embed = at.block(N_ELEMENTS * h);
        let layers = (0..cfg.layers)
            .map(|_| LayerIdx {
                msg1: at.dense(msg_in, h),
                msg2: at.dense(h, h),
                upd1: at.dense(2 * h, h),
                upd2: at.dense(h, h),
                gamma: at.block(h),
                beta: at.block(h),
            })
            .collect();
        let coord1 = at.dense(h, h);
        let coord2 = at.dense(h, 3);
        let lat1 = at.dense(h, h);
        let lat2 = at.dense(h, 6);
        Layout { embed, layers, coord1, coord2, lat1, lat2, total: at.0 }
    }
}

#[inline]
fn affine<T: Real>(x: &[T], p: &[T], d: &Dense, out: &mut [T]) {
    out.copy_from_slice(&p[d.b..d.b + d.fan_out]);
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let row = &p[d.w + i * d.fan_out..d.w + (i + 1) * d.fan_out];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
}

/// `out += x · W[rows]` for a block of rows of a dense layer.
#[inline]
fn rows_acc<T: Real>(x: &[T], p: &[T], d: &Dense, row0: usize, out: &mut [T]) {
    for (i, &xi) in x.iter().enumerate() {
        let off = d.w + (row0 + i) * d.fan_out;
        for (o, &w) in out.iter_mut().zip(&p[off..off + d.fan_out]) {
            *o += xi * w;
        }
    }
}

/// `dW[rows] += x ⊗ dy`.
#[inline]
fn outer_acc<T: Real>(x: &[T], dy: &[T], d: &Dense, row0: usize, g: &mut [T]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let off = d.w + (row0 + i) * d.fan_out;
        for (gw, &dyo) in g[off..off + d.fan_out].iter_mut().zip(dy) {
            *gw += xi * dyo;
        }
    }
}

/// `dx += dy · W[rows]ᵀ`.
#[inline]
fn back_rows_acc<T: Real>(dy: &[T], p: &[T], d: &Dense, row0: usize, dx: &mut [T]) {
    for (i, dxi) in dx.iter_mut().enumerate() {
        let off = d.w + (row0 + i) * d.fan_out;
        let mut s = T::zero();
        for (&w, &dyo) in p[off..off + d.fan_out].iter().zip(dy) {
            s += w * dyo;
        }
        *dxi += s;
    }
}

#[inline]
fn bias_acc<T: Real>(dy: &[T], d: &Dense, g: &mut [T]) {
    for (gb, &dyo) in g[d.b..d.b + d.fan_out].iter_mut().zip(dy) {
        *gb += dyo;
    }
}

/// Intermediate values of one message-passing layer kept for the reverse pass.
#[derive(Clone, Debug)]
struct LayerTape<T> {
    h_in: Vec<T>,
    /// Per edge (i, j): first message pre-activation, its silu, and the
    /// second pre-activation; each `n * n * hidden`.
    pre1: Vec<T>,
    act1: Vec<T>,
    pre2: Vec<T>,
    msg: Vec<T>,
    upd_pre: Vec<T>,
    upd_act: Vec<T>,
    xhat: Vec<T>,
    rstd: Vec<T>,
}

/// Everything the reverse pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    n: usize,
    species_idx: Vec<usize>,
    lattice_in: [T; 6],
    time_emb: Vec<T>,
    edges: Vec<T>,
    layers: Vec<LayerTape<T>>,
    h_final: Vec<T>,
    coord_pre: Vec<T>,
    coord_act: Vec<T>,
    pooled: Vec<T>,
    lat_pre: Vec<T>,
    lat_act: Vec<T>,
}

/// The velocity field `v(c_t, t)` with parameters in one flat buffer.
#[derive(Clone, Debug)]
pub struct VelocityNet<T> {
    pub config: NetConfig,
    pub stats: Standardization,
    pub params: Vec<T>,
    layout: Layout,
}

impl<T: Real> VelocityNet<T> {
    /// Fan-in scaled uniform initialization with zeroed output layers,
    /// so the initial field is zero wherever the output mean is zero.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, stats: Standardization, rng: &mut R) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        let h = config.hidden;
        for p in params[layout.embed..layout.embed + N_ELEMENTS * h].iter_mut() {
            *p = T::lit(rng.random_range(-1.0..1.0));
        }
        let mut init = |d: &Dense, params: &mut [T]| {
            let bound = (6.0 / d.fan_in as f64).sqrt();
            for p in params[d.w..d.b].iter_mut() {
                *p = T::lit(rng.random_range(-bound..bound));
            }
        };
        for l in &layout.layers {
            for d in [&l.msg1, &l.msg2, &l.upd1, &l.upd2] {
                init(d, &mut params);
            }
            for p in params[l.gamma..l.gamma + h].iter_mut() {
                *p = T::one();
            }
        }
        init(&layout.coord1, &mut params);
        init(&layout.lat1, &mut params);
        Ok(VelocityNet { config, stats, params, layout })
    }

    pub fn from_params(config: NetConfig, stats: Standardization, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for {config:?}, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(VelocityNet { config, stats, params, layout })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Zeroes the last layer of both heads.
    pub fn zero_heads(&mut self) {
        for d in [self.layout.coord2, self.layout.lat2] {
            for p in self.params[d.w..d.b + d.fan_out].iter_mut() {
                *p = T::zero();
            }
        }
    }

    pub fn forward(&self, state: &FlowState<T>, t: T) -> Result<TangentVector<T>> {
        Ok(self.forward_with_tape(state, t)?.0)
    }

    pub fn forward_with_tape(&self, state: &FlowState<T>, t: T) -> Result<(TangentVector<T>, Tape<T>)> {
        let n = state.n_atoms();
        if n == 0 || state.coords.len() != n {
            return Err(Error::Shape(format!("{} species, {} coordinate rows", n, state.coords.len())));
        }
        let cfg = &self.config;
        let h = cfg.hidden;
        let p = &self.params;
        let e_dim = edge_embedding_dim(cfg.n_freq);

        let raw_lattice = state.lattice();
        let mut lattice_in = [T::zero(); 6];
        for k in 0..6 {
            lattice_in[k] = (raw_lattice[k] - T::lit(self.stats.lattice_in_mean[k])) / T::lit(self.stats.lattice_in_std[k]);
        }
        let time_emb = time_embedding(t, cfg.time_dim);

        let mut edges = vec![T::zero(); n * n * e_dim];
        for i in 0..n {
            for j in 0..n {
                let d = linalg::sub(&state.coords[j], &state.coords[i]);
                let off = (i * n + j) * e_dim;
                displacement_embedding(&d, cfg.n_freq, &mut edges[off..off + e_dim]);
            }
        }

        let species_idx: Vec<usize> = state.species.iter().map(|e| e.index()).collect();
        let mut hs = vec![T::zero(); n * h];
        for (i, &z) in species_idx.iter().enumerate() {
            let off = self.layout.embed + z * h;
            hs[i * h..(i + 1) * h].copy_from_slice(&p[off..off + h]);
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in &self.layout.layers {
            let (h_next, tape) = self.layer_forward(l, &hs, n, &lattice_in, &time_emb, &edges);
            layers.push(tape);
            hs = h_next;
        }

        let mut coord_pre = vec![T::zero(); n * h];
        let mut coord_act = vec![T::zero(); n * h];
        let mut raw_coords = vec![[T::zero(); 3]; n];
        for i in 0..n {
            affine(&hs[i * h..(i + 1) * h], p, &self.layout.coord1, &mut coord_pre[i * h..(i + 1) * h]);
            for k in i * h..(i + 1) * h {
                coord_act[k] = silu(coord_pre[k]);
            }
            affine(&coord_act[i * h..(i + 1) * h], p, &self.layout.coord2, &mut raw_coords[i]);
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut pooled = vec![T::zero(); h];
        for i in 0..n {
            for k in 0..h {
                pooled[k] += hs[i * h + k] * inv_n;
            }
        }
        let mut lat_pre = vec![T::zero(); h];
        affine(&pooled, p, &self.layout.lat1, &mut lat_pre);
        let lat_act: Vec<T> = lat_pre.iter().map(|&x| silu(x)).collect();
        let mut raw_lattice_out = [T::zero(); 6];
        affine(&lat_act, p, &self.layout.lat2, &mut raw_lattice_out);

        let out = self.destandardize(&raw_coords, &raw_lattice_out);
        let tape = Tape {
            n,
            species_idx,
            lattice_in,
            time_emb,
            edges,
            layers,
            h_final: hs,
            coord_pre,
            coord_act,
            pooled,
            lat_pre,
            lat_act,
        };
        Ok((out, tape))
    }

    fn destandardize(&self, raw_coords: &[Vec3<T>], raw_lattice: &[T; 6]) -> TangentVector<T> {
        let s = &self.stats;
        let scaled: Vec<Vec3<T>> =
            raw_coords.iter().map(|r| [0, 1, 2].map(|k| r[k] * T::lit(s.coord_out_std[k]))).collect();
        let lat: [T; 6] = std::array::from_fn(|k| raw_lattice[k] * T::lit(s.lattice_out_std[k]) + T::lit(s.lattice_out_mean[k]));
        TangentVector {
            coords: remove_mean_translation(&scaled),
            lengths: [lat[0], lat[1], lat[2]],
            angles: [lat[3], lat[4], lat[5]],
        }
    }

    fn layer_forward(
        &self,
        l: &LayerIdx,
        h_in: &[T],
        n: usize,
        lattice_in: &[T; 6],
        time_emb: &[T],
        edges: &[T],
    ) -> (Vec<T>, LayerTape<T>) {
        let h = self.config.hidden;
        let p = &self.params;
        let e_dim = edge_embedding_dim(self.config.n_freq);
        let row_lat = 2 * h;
        let row_edge = row_lat + 6;
        let row_time = row_edge + e_dim;

        // first message layer split into sender, receiver, edge and global parts
        let mut global = p[l.msg1.b..l.msg1.b + h].to_vec();
        rows_acc(lattice_in, p, &l.msg1, row_lat, &mut global);
        rows_acc(time_emb, p, &l.msg1, row_time, &mut global);
        let mut recv = vec![T::zero(); n * h];
        let mut send = vec![T::zero(); n * h];
        for i in 0..n {
            let hi = &h_in[i * h..(i + 1) * h];
            rows_acc(hi, p, &l.msg1, 0, &mut recv[i * h..(i + 1) * h]);
            rows_acc(hi, p, &l.msg1, h, &mut send[i * h..(i + 1) * h]);
        }

        let mut pre1 = vec![T::zero(); n * n * h];
        let mut act1 = vec![T::zero(); n * n * h];
        let mut pre2 = vec![T::zero(); n * n * h];
        let mut msg = vec![T::zero(); n * h];
        for i in 0..n {
            for j in 0..n {
                let e = (i * n + j) * h;
                let z = &mut pre1[e..e + h];
                for k in 0..h {
                    z[k] = global[k] + recv[i * h + k] + send[j * h + k];
                }
                let eo = (i * n + j) * e_dim;
                rows_acc(&edges[eo..eo + e_dim], p, &l.msg1, row_edge, z);
                for k in 0..h {
                    act1[e + k] = silu(pre1[e + k]);
                }
                affine(&act1[e..e + h], p, &l.msg2, &mut pre2[e..e + h]);
                for k in 0..h {
                    msg[i * h + k] += silu(pre2[e + k]);
                }
            }
        }

        let mut upd_pre = vec![T::zero(); n * h];
        let mut upd_act = vec![T::zero(); n * h];
        let mut xhat = vec![T::zero(); n * h];
        let mut rstd = vec![T::zero(); n];
        let mut h_out = vec![T::zero(); n * h];
        let mut cat = vec![T::zero(); 2 * h];
        let mut r = vec![T::zero(); h];
        let hf = T::from_usize_lossy(h);
        for i in 0..n {
            let rows = i * h..(i + 1) * h;
            cat[..h].copy_from_slice(&h_in[rows.clone()]);
            cat[h..].copy_from_slice(&msg[rows.clone()]);
            affine(&cat, p, &l.upd1, &mut upd_pre[rows.clone()]);
            for k in rows.clone() {
                upd_act[k] = silu(upd_pre[k]);
            }
            affine(&upd_act[rows.clone()], p, &l.upd2, &mut r);
            for k in 0..h {
                r[k] += h_in[i * h + k];
            }
            let mean = r.iter().copied().sum::<T>() / hf;
            let var = r.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / hf;
            let rs = T::one() / (var + T::lit(LAYER_NORM_EPS)).sqrt();
            rstd[i] = rs;
            for k in 0..h {
                let xh = (r[k] - mean) * rs;
                xhat[i * h + k] = xh;
                h_out[i * h + k] = xh * p[l.gamma + k] + p[l.beta + k];
            }
        }
        let tape = LayerTape { h_in: h_in.to_vec(), pre1, act1, pre2, msg, upd_pre, upd_act, xhat, rstd };
        (h_out, tape)
    }

    /// Accumulates into `grad` the gradient of `Σ d_out · v` with respect
    /// to the parameters, where `v` is the output recorded in `tape`.
    pub fn backward(&self, tape: &Tape<T>, d_out: &TangentVector<T>, grad: &mut [T]) -> Result<()> {
        let n = tape.n;
        if d_out.coords.len() != n || grad.len() != self.layout.total {
            return Err(Error::Shape("backward: output or gradient shape mismatch".into()));
        }
        let h = self.config.hidden;
        let p = &self.params;
        let s = &self.stats;
        let lay = &self.layout;

        // through mean removal (a symmetric projector) and output scaling
        let projected = remove_mean_translation(&d_out.coords);
        let d_raw_coords: Vec<Vec3<T>> =
            projected.iter().map(|r| [0, 1, 2].map(|k| r[k] * T::lit(s.coord_out_std[k]))).collect();
        let dl = d_out.lattice();
        let d_raw_lat: [T; 6] = std::array::from_fn(|k| dl[k] * T::lit(s.lattice_out_std[k]));

        let mut dh = vec![T::zero(); n * h];
        let mut dz = vec![T::zero(); h];
        for i in 0..n {
            let rows = i * h..(i + 1) * h;
            outer_acc(&tape.coord_act[rows.clone()], &d_raw_coords[i], &lay.coord2, 0, grad);
            bias_acc(&d_raw_coords[i], &lay.coord2, grad);
            dz.iter_mut().for_each(|x| *x = T::zero());
            back_rows_acc(&d_raw_coords[i], p, &lay.coord2, 0, &mut dz);
            for (k, dzk) in dz.iter_mut().enumerate() {
                *dzk *= silu_grad(tape.coord_pre[i * h + k]);
            }
            outer_acc(&tape.h_final[rows.clone()], &dz, &lay.coord1, 0, grad);
            bias_acc(&dz, &lay.coord1, grad);
            back_rows_acc(&dz, p, &lay.coord1, 0, &mut dh[rows]);
        }

        outer_acc(&tape.lat_act, &d_raw_lat, &lay.lat2, 0, grad);
        bias_acc(&d_raw_lat, &lay.lat2, grad);
        let mut dlat = vec![T::zero(); h];
        back_rows_acc(&d_raw_lat, p, &lay.lat2, 0, &mut dlat);
        for k in 0..h {
            dlat[k] *= silu_grad(tape.lat_pre[k]);
        }
        outer_acc(&tape.pooled, &dlat, &lay.lat1, 0, grad);
        bias_acc(&dlat, &lay.lat1, grad);
        let mut dpooled = vec![T::zero(); h];
        back_rows_acc(&dlat, p, &lay.lat1, 0, &mut dpooled);
        let inv_n = T::one() / T::from_usize_lossy(n);
        for i in 0..n {
            for k in 0..h {
                dh[i * h + k] += dpooled[k] * inv_n;
            }
        }

        for (l, lt) in lay.layers.iter().zip(&tape.layers).rev() {
            dh = self.layer_backward(l, lt, tape, &dh, grad);
        }

        for (i, &z) in tape.species_idx.iter().enumerate() {
            let off = lay.embed + z * h;
            for k in 0..h {
                grad[off + k] += dh[i * h + k];
            }
        }
        Ok(())
    }

    fn layer_backward(&self, l: &LayerIdx, lt: &LayerTape<T>, tape: &Tape<T>, dh_out: &[T], grad: &mut [T]) -> Vec<T> {
        let n = tape.n;
        let h = self.config.hidden;
        let p = &self.params;
        let e_dim = edge_embedding_dim(self.config.n_freq);
        let row_lat = 2 * h;
        let row_edge = row_lat + 6;
        let row_time = row_edge + e_dim;
        let hf = T::from_usize_lossy(h);

        let mut dh_in = vec![T::zero(); n * h];
        let mut dmsg = vec![T::zero(); n * h];
        let mut dr = vec![T::zero(); h];
        let mut dcat = vec![T::zero(); 2 * h];
        let mut dupd = vec![T::zero(); h];
        let mut cat = vec![T::zero(); 2 * h];
        for i in 0..n {
            let rows = i * h..(i + 1) * h;
            let xh = &lt.xhat[rows.clone()];
            let dy = &dh_out[rows.clone()];
            let mut mean_dxh = T::zero();
            let mut mean_dxh_xh = T::zero();
            for k in 0..h {
                grad[l.gamma + k] += dy[k] * xh[k];
                grad[l.beta + k] += dy[k];
                let dxh = dy[k] * p[l.gamma + k];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[k];
            }
            mean_dxh /= hf;
            mean_dxh_xh /= hf;
            for k in 0..h {
                let dxh = dy[k] * p[l.gamma + k];
                dr[k] = lt.rstd[i] * (dxh - mean_dxh - xh[k] * mean_dxh_xh);
                dh_in[i * h + k] += dr[k];
            }
            outer_acc(&lt.upd_act[rows.clone()], &dr, &l.upd2, 0, grad);
            bias_acc(&dr, &l.upd2, grad);
            dupd.iter_mut().for_each(|x| *x = T::zero());
            back_rows_acc(&dr, p, &l.upd2, 0, &mut dupd);
            for k in 0..h {
                dupd[k] *= silu_grad(lt.upd_pre[i * h + k]);
            }
            cat[..h].copy_from_slice(&lt.h_in[rows.clone()]);
            cat[h..].copy_from_slice(&lt.msg[rows.clone()]);
            outer_acc(&cat, &dupd, &l.upd1, 0, grad);
            bias_acc(&dupd, &l.upd1, grad);
            dcat.iter_mut().for_each(|x| *x = T::zero());
            back_rows_acc(&dupd, p, &l.upd1, 0, &mut dcat);
            for k in 0..h {
                dh_in[i * h + k] += dcat[k];
                dmsg[i * h + k] = dcat[h + k];
            }
        }

        let mut drecv = vec![T::zero(); n * h];
        let mut dsend = vec![T::zero(); n * h];
        let mut dglobal = vec![T::zero(); h];
        let mut dpre2 = vec![T::zero(); h];
        let mut dpre1 = vec![T::zero(); h];
        for i in 0..n {
            for j in 0..n {
                let e = (i * n + j) * h;
                for k in 0..h {
                    dpre2[k] = dmsg[i * h + k] * silu_grad(lt.pre2[e + k]);
                }
                outer_acc(&lt.act1[e..e + h], &dpre2, &l.msg2, 0, grad);
                bias_acc(&dpre2, &l.msg2, grad);
                dpre1.iter_mut().for_each(|x| *x = T::zero());
                back_rows_acc(&dpre2, p, &l.msg2, 0, &mut dpre1);
                for k in 0..h {
                    dpre1[k] *= silu_grad(lt.pre1[e + k]);
                    drecv[i * h + k] += dpre1[k];
                    dsend[j * h + k] += dpre1[k];
                    dglobal[k] += dpre1[k];
                }
                let eo = (i * n + j) * e_dim;
                outer_acc(&tape.edges[eo..eo + e_dim], &dpre1, &l.msg1, row_edge, grad);
            }
        }
        outer_acc(&tape.lattice_in, &dglobal, &l.msg1, row_lat, grad);
        outer_acc(&tape.time_emb, &dglobal, &l.msg1, row_time, grad);
        bias_acc(&dglobal, &l.msg1, grad);
        for i in 0..n {
            let rows = i * h..(i + 1) * h;
            outer_acc(&lt.h_in[rows.clone()], &drecv[rows.clone()], &l.msg1, 0, grad);
            outer_acc(&lt.h_in[rows.clone()], &dsend[rows.clone()], &l.msg1, h, grad);
            back_rows_acc(&drecv[rows.clone()], p, &l.msg1, 0, &mut dh_in[rows.clone()]);
            back_rows_acc(&dsend[rows.clone()], p, &l.msg1, h, &mut dh_in[rows]);
        }
        dh_in
    }

    pub fn cast<U: Real>(&self) -> VelocityNet<U> {
        VelocityNet {
            config: self.config,
            stats: self.stats.clone(),
            params: self.params.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
            layout: self.layout.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_crystal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetConfig {
        NetConfig { hidden: 8, time_dim: 4, layers: 2, n_freq: 2 }
    }

    fn stats() -> Standardization {
        Standardization {
            lattice_in_mean: [5.0, 5.0, 5.0, -1.0, -1.0, -1.0],
            lattice_in_std: [1.5, 1.2, 1.0, 0.5, 0.6, 0.7],
            coord_out_std: [0.2, 0.3, 0.25],
            lattice_out_mean: [0.1, -0.2, 0.0, 0.05, 0.0, -0.1],
            lattice_out_std: [0.5, 0.4, 0.3, 0.2, 0.2, 0.2],
        }
    }

    fn net_with_live_heads(seed: u64) -> VelocityNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = VelocityNet::new(small(), stats(), &mut rng).unwrap();
        for d in [net.layout.coord2, net.layout.lat2] {
            for p in net.params[d.w..d.b + d.fan_out].iter_mut() {
                *p = rng.random_range(-0.5..0.5);
            }
        }
        net
    }

    fn state(seed: u64, n: usize) -> FlowState<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FlowState::from_crystal(&random_crystal(&mut rng, n)).unwrap()
    }

    fn contract(v: &TangentVector<f64>, w: &TangentVector<f64>) -> f64 {
        v.coords.iter().flatten().zip(w.coords.iter().flatten()).map(|(a, b)| a * b).sum::<f64>()
            + v.lattice().iter().zip(w.lattice()).map(|(a, b)| a * b).sum::<f64>()
    }

    #[test]
    fn layout_size_matches_shapes() {
        let c = small();
        let h = c.hidden;
        let msg_in = 2 * h + 6 + edge_embedding_dim(c.n_freq) + c.time_dim;
        let per_layer = (msg_in + 1) * h + (h + 1) * h + (2 * h + 1) * h + (h + 1) * h + 2 * h;
        let heads = (h + 1) * h + (h + 1) * 3 + (h + 1) * h + (h + 1) * 6;
        assert_eq!(Layout::new(&c).total, N_ELEMENTS * h + c.layers * per_layer + heads);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let net = net_with_live_heads(1);
        let s = state(2, 4);
        let t = 0.37;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (v, tape) = net.forward_with_tape(&s, t).unwrap();
        let mut d_out = v.clone();
        for x in d_out.coords.iter_mut().flatten() {
            *x = rng.random_range(-1.0..1.0);
        }
        d_out.lengths = [0; 3].map(|_| rng.random_range(-1.0..1.0));
        d_out.angles = [0; 3].map(|_| rng.random_range(-1.0..1.0));
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&tape, &d_out, &mut grad).unwrap();
        let eps = 1e-5;
        for _ in 0..10 {
            let dir: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut plus = net.clone();
            let mut minus = net.clone();
            for k in 0..dir.len() {
                plus.params[k] += eps * dir[k];
                minus.params[k] -= eps * dir[k];
            }
            let fd = (contract(&plus.forward(&s, t).unwrap(), &d_out) - contract(&minus.forward(&s, t).unwrap(), &d_out))
                / (2.0 * eps);
            let an: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-4, "fd {fd} analytic {an} rel {rel}");
        }
    }

    #[test]
    fn permutation_equivariance_and_translation_invariance() {
        let net = net_with_live_heads(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let s = state(100 + trial, 1 + (trial as usize % 8));
            let n = s.n_atoms();
            let v = net.forward(&s, 0.6).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            for k in (1..n).rev() {
                perm.swap(k, rng.random_range(0..=k));
            }
            let vp = net.forward(&s.permuted(&perm), 0.6).unwrap();
            for (k, &src) in perm.iter().enumerate() {
                for a in 0..3 {
                    assert!((vp.coords[k][a] - v.coords[src][a]).abs() < 1e-9);
                }
            }
            for (a, b) in vp.lattice().iter().zip(v.lattice()) {
                assert!((a - b).abs() < 1e-9);
            }
            let shift = [rng.random::<f64>(), rng.random(), rng.random()];
            let mut shifted = s.clone();
            for f in shifted.coords.iter_mut() {
                *f = crate::crystal::wrap_vec(&linalg::add(f, &shift));
            }
            let vs = net.forward(&shifted, 0.6).unwrap();
            for (a, b) in vs.coords.iter().flatten().zip(v.coords.iter().flatten()) {
                assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in vs.lattice().iter().zip(v.lattice()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_heads_give_zero_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = VelocityNet::<f64>::new(small(), Standardization::default(), &mut rng).unwrap();
        for k in 0..5 {
            let v = net.forward(&state(k, 3), 0.1 * k as f64).unwrap();
            assert!(v.coords.iter().flatten().chain(v.lattice().iter()).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn outputs_are_bit_identical_across_runs() {
        let net = net_with_live_heads(7);
        let s = state(8, 5);
        let a = net.forward(&s, 0.25).unwrap();
        let b = net.clone().forward(&s, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_precision_runs() {
        let net: VelocityNet<f32> = net_with_live_heads(9).cast();
        let s32 = FlowState::from_crystal(&random_crystal(&mut ChaCha8Rng::seed_from_u64(10), 3).cast::<f32>()).unwrap();
        let v = net.forward(&s32, 0.5).unwrap();
        assert!(v.is_finite());
        let v64 = net_with_live_heads(9).forward(&FlowState::from_crystal(&s32.to_crystal().unwrap().cast()).unwrap(), 0.5).unwrap();
        for (a, b) in v.coords.iter().flatten().zip(v64.coords.iter().flatten()) {
            assert!((*a as f64 - b).abs() < 1e-3);
        }
    }

    #[test]
    fn shape_errors() {
        let net = net_with_live_heads(11);
        let mut s = state(12, 3);
        s.coords.pop();
        assert!(net.forward(&s, 0.0).is_err());
        assert!(VelocityNet::<f64>::from_params(small(), stats(), vec![0.0; 3]).is_err());
        let mut bad = stats();
        bad.coord_out_std[0] = 0.0;
        assert!(VelocityNet::<f64>::from_params(small(), bad, vec![0.0; net.n_params()]).is_err());
    }
}
