//! Toy relaxation: steepest descent with Armijo backtracking on a purely
//! repulsive soft-sphere pair potential. Stands in for a DFT relaxation in
//! the stability-style metrics and carries no physical meaning.

use serde::{Deserialize, Serialize};

use super::fingerprint::image_ranges;
use crate::crystal::{params_to_matrix, wrap_frac, Crystal, LatticeParams};
use crate::elements::Element;
use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::real::Real;

/// Pair interactions vanish beyond this multiple of the contact distance.
pub const CUTOFF_FACTOR: f64 = 3.0;
const MIN_DISTANCE: f64 = 1e-3;
const MIN_LENGTH: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    pub max_steps: usize,
    /// Stop when the gradient norm drops below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub initial_step: f64,
    /// Also relax the three lattice lengths (angles stay fixed).
    pub relax_lengths: bool,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig { max_steps: 200, grad_tol: 1e-6, armijo: 1e-4, initial_step: 1e-2, relax_lengths: true }
    }
}

#[derive(Clone, Debug)]
pub struct RelaxResult {
    pub relaxed: Crystal<f64>,
    /// Energy after each accepted step, starting with the input energy.
    pub energies: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

impl RelaxResult {
    pub fn initial_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn final_energy(&self) -> f64 {
        *self.energies.last().unwrap()
    }

    /// Energy released by relaxation (non-negative).
    pub fn delta_energy(&self) -> f64 {
        self.initial_energy() - self.final_energy()
    }

    pub fn delta_energy_per_atom(&self) -> f64 {
        self.delta_energy() / self.relaxed.n_atoms() as f64
    }
}

/// Pair energy `(s/d)^12`, shifted to zero at the cutoff `3s`, where `s` is
/// the sum of covalent radii.
pub fn pair_energy(contact: f64, d: f64) -> f64 {
    if d >= CUTOFF_FACTOR * contact {
        return 0.0;
    }
    (contact / d.max(MIN_DISTANCE)).powi(12) - CUTOFF_FACTOR.powi(-12)
}

fn pair_energy_deriv(contact: f64, d: f64) -> f64 {
    if d >= CUTOFF_FACTOR * contact || d < MIN_DISTANCE {
        return 0.0;
    }
    -12.0 * (contact / d).powi(12) / d
}

struct Model {
    radii: Vec<f64>,
    /// Unit row directions of the lattice at the fixed angles.
    units: [Vec3<f64>; 3],
    cutoff: f64,
}

impl Model {
    fn new(species: &[Element], angles: Vec3<f64>) -> Result<Self> {
        let radii: Vec<f64> = species.iter().map(|e| e.covalent_radius()).collect();
        let units = params_to_matrix(&LatticeParams { lengths: [1.0; 3], angles })?.0;
        let rmax = radii.iter().cloned().fold(0.0, f64::max);
        Ok(Model { radii, units, cutoff: CUTOFF_FACTOR * 2.0 * rmax })
    }

    fn matrix(&self, lengths: &Vec3<f64>) -> [Vec3<f64>; 3] {
        std::array::from_fn(|k| linalg::scale(&self.units[k], lengths[k]))
    }

    /// Energy and, if requested, gradients with respect to fractional
    /// coordinates and lengths.
    fn evaluate(&self, coords: &[Vec3<f64>], lengths: &Vec3<f64>, grad: Option<(&mut [Vec3<f64>], &mut Vec3<f64>)>) -> f64 {
        let m = self.matrix(lengths);
        let Some(inv) = linalg::inverse(&m) else {
            return f64::INFINITY;
        };
        let range = image_ranges(&inv, self.cutoff);
        let n = coords.len();
        let mut energy = 0.0;
        let mut g = grad;
        if let Some((gc, gl)) = g.as_mut() {
            gc.iter_mut().for_each(|v| *v = [0.0; 3]);
            **gl = [0.0; 3];
        }
        for i in 0..n {
            for j in 0..n {
                let contact = self.radii[i] + self.radii[j];
                let base = [0, 1, 2].map(|k| crate::crystal::wrap_delta(coords[j][k] - coords[i][k]));
                for u in -range[0]..=range[0] {
                    for v in -range[1]..=range[1] {
                        for w in -range[2]..=range[2] {
                            if i == j && u == 0 && v == 0 && w == 0 {
                                continue;
                            }
                            let delta = [base[0] + u as f64, base[1] + v as f64, base[2] + w as f64];
                            let x = linalg::vec_mat(&delta, &m);
                            let d = linalg::norm(&x);
                            if d >= CUTOFF_FACTOR * contact {
                                continue;
                            }
                            // every unordered pair appears twice
                            energy += 0.5 * pair_energy(contact, d);
                            if let Some((gc, gl)) = g.as_mut() {
                                let s = 0.5 * pair_energy_deriv(contact, d) / d.max(MIN_DISTANCE);
                                for k in 0..3 {
                                    let proj = linalg::dot(&x, &self.units[k]);
                                    let df = s * proj * lengths[k];
                                    gc[j][k] += df;
                                    gc[i][k] -= df;
                                    gl[k] += s * proj * delta[k];
                                }
                            }
                        }
                    }
                }
            }
        }
        energy
    }
}

/// Energy of a crystal under the toy potential.
pub fn toy_energy<T: Real>(crystal: &Crystal<T>) -> Result<f64> {
    let c = crystal.cast::<f64>();
    let model = Model::new(&c.species, c.lattice.angles)?;
    Ok(model.evaluate(&c.frac_coords, &c.lattice.lengths, None))
}

/// Relaxes coordinates and (optionally) lengths with fixed angles.
pub fn toy_relax<T: Real>(crystal: &Crystal<T>, config: &RelaxConfig) -> Result<RelaxResult> {
    let c = crystal.cast::<f64>();
    let model = Model::new(&c.species, c.lattice.angles)?;
    let n = c.n_atoms();
    let mut coords = c.frac_coords.clone();
    let mut lengths = c.lattice.lengths;
    let mut gc = vec![[0.0; 3]; n];
    let mut gl = [0.0; 3];
    let mut energy = model.evaluate(&coords, &lengths, Some((&mut gc, &mut gl)));
    if !energy.is_finite() {
        return Err(Error::NonFinite("toy energy".into()));
    }
    let mut energies = vec![energy];
    let mut alpha = config.initial_step;
    let mut converged = false;
    let mut steps = 0;
    let mut tc = vec![[0.0; 3]; n];
    let mut tgc = vec![[0.0; 3]; n];
    let mut tgl = [0.0; 3];
    while steps < config.max_steps {
        if !config.relax_lengths {
            gl = [0.0; 3];
        }
        let g2: f64 = gc.iter().flatten().chain(gl.iter()).map(|x| x * x).sum();
        if g2.sqrt() < config.grad_tol {
            converged = true;
            break;
        }
        let accepted = loop {
            for (t, (f, g)) in tc.iter_mut().zip(coords.iter().zip(&gc)) {
                *t = std::array::from_fn(|k| wrap_frac(f[k] - alpha * g[k]));
            }
            let tl: Vec3<f64> = std::array::from_fn(|k| lengths[k] - alpha * gl[k]);
            if tl.iter().all(|&l| l > MIN_LENGTH) {
                let e = model.evaluate(&tc, &tl, Some((&mut tgc, &mut tgl)));
                if e <= energy - config.armijo * alpha * g2 {
                    break Some((e, tl));
                }
            }
            alpha *= 0.5;
            if alpha < 1e-300 {
                break None;
            }
        };
        let Some((e, tl)) = accepted else {
            // no descent possible at machine precision
            converged = true;
            break;
        };
        std::mem::swap(&mut coords, &mut tc);
        std::mem::swap(&mut gc, &mut tgc);
        gl = tgl;
        lengths = tl;
        energy = e;
        energies.push(e);
        steps += 1;
        alpha *= 2.0;
    }
    let relaxed = Crystal::new(c.species.clone(), coords, LatticeParams { lengths, angles: c.lattice.angles })?;
    Ok(RelaxResult { relaxed, energies, steps, converged })
}
