//! Structure matching up to lattice choice, atom order and origin.

use serde::{Deserialize, Serialize};

use crate::assign::hungarian;
use crate::crystal::{params_to_matrix, wrap_delta, wrap_vec, Composition, Crystal, LatticeParams};
use crate::elements::Element;
use crate::linalg::{self, Mat3, Vec3};
use crate::niggli::niggli_reduce;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchTolerance {
    /// Relative length tolerance.
    pub ltol: f64,
    /// Site tolerance as a fraction of `(V / n)^(1/3)`.
    pub stol: f64,
    /// Angle tolerance in degrees.
    pub angle_tol: f64,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        MatchTolerance { ltol: 0.2, stol: 0.3, angle_tol: 5.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchResult {
    /// Root-mean-square site displacement in Å.
    pub rmsd: f64,
    /// RMSD divided by `(V / n)^(1/3)`.
    pub normalized_rmsd: f64,
    /// Largest site displacement divided by `(V / n)^(1/3)`.
    pub normalized_max: f64,
}

/// A Niggli-reduced crystal ready for repeated matching.
#[derive(Clone, Debug)]
pub struct Prepared {
    species: Vec<Element>,
    coords: Vec<Vec3<f64>>,
    lattice: LatticeParams<f64>,
    composition: Composition,
    /// Atom indices grouped by species in composition order.
    blocks: Vec<Vec<usize>>,
    /// Species used to enumerate origin shifts (fewest atoms).
    anchor: usize,
}

impl Prepared {
    pub fn new<T: Real>(crystal: &Crystal<T>) -> Option<Self> {
        let c = crystal.cast::<f64>();
        let (lattice, coords) = niggli_reduce(&c.lattice, &c.frac_coords).ok()?;
        let composition = c.composition();
        let blocks: Vec<Vec<usize>> = composition
            .0
            .keys()
            .map(|&e| (0..c.n_atoms()).filter(|&i| c.species[i] == e).collect())
            .collect();
        let anchor = (0..blocks.len()).min_by_key(|&b| blocks[b].len())?;
        Some(Prepared { species: c.species, coords, lattice, composition, blocks, anchor })
    }

    pub fn composition(&self) -> &Composition {
        &self.composition
    }

    pub fn n_atoms(&self) -> usize {
        self.species.len()
    }
}

/// Proper rotations of the axis frame: 6 permutations times the 4 sign
/// patterns with positive determinant.
fn orientations(p: &Prepared) -> Vec<(LatticeParams<f64>, Vec<Vec3<f64>>)> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];
    const SIGNS: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    // angle between axes i and j sits at index 3 - i - j
    let angle = |ang: &Vec3<f64>, i: usize, j: usize| ang[3 - i - j];
    let mut out = Vec::with_capacity(24);
    for (pi, perm) in PERMS.iter().enumerate() {
        let parity = if pi < 3 { 1.0 } else { -1.0 };
        for s in SIGNS {
            let sign: Vec3<f64> = std::array::from_fn(|k| s[k] * parity);
            let lengths = perm.map(|k| p.lattice.lengths[k]);
            let angles: Vec3<f64> = std::array::from_fn(|k| {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                let a = angle(&p.lattice.angles, perm[i], perm[j]);
                if sign[i] * sign[j] < 0.0 {
                    180.0 - a
                } else {
                    a
                }
            });
            let coords = p.coords.iter().map(|f| wrap_vec(&std::array::from_fn(|k| sign[k] * f[perm[k]]))).collect();
            out.push((LatticeParams { lengths, angles }, coords));
        }
    }
    out
}

fn cart_norm(d: &Vec3<f64>, m: &Mat3<f64>) -> f64 {
    let w = d.map(wrap_delta);
    let mut best = f64::INFINITY;
    for u in -1..=1 {
        for v in -1..=1 {
            for t in -1..=1 {
                let x = linalg::vec_mat(&[w[0] + u as f64, w[1] + v as f64, w[2] + t as f64], m);
                best = best.min(linalg::norm(&x));
            }
        }
    }
    best
}

/// Best alignment of `b` onto `a` over orientations and origin shifts.
fn one_way(a: &Prepared, b: &Prepared, tol: &MatchTolerance) -> Option<MatchResult> {
    let n = a.n_atoms();
    let anchor_atom = a.blocks[a.anchor][0];
    let mut best: Option<MatchResult> = None;
    for (lat, coords) in orientations(b) {
        let lengths_ok = (0..3).all(|k| (lat.lengths[k] / a.lattice.lengths[k] - 1.0).abs() <= tol.ltol);
        let angles_ok = (0..3).all(|k| (lat.angles[k] - a.lattice.angles[k]).abs() <= tol.angle_tol);
        if !(lengths_ok && angles_ok) {
            continue;
        }
        let avg = LatticeParams {
            lengths: std::array::from_fn(|k| 0.5 * (lat.lengths[k] + a.lattice.lengths[k])),
            angles: std::array::from_fn(|k| 0.5 * (lat.angles[k] + a.lattice.angles[k])),
        };
        let Ok(m) = params_to_matrix(&avg) else { continue };
        let scale = (avg.volume() / n as f64).cbrt();
        for &j0 in &b.blocks[a.anchor] {
            let shift = linalg::sub(&a.coords[anchor_atom], &coords[j0]);
            let moved: Vec<Vec3<f64>> = coords.iter().map(|f| linalg::add(f, &shift)).collect();
            // species-blocked assignment on squared distance
            let mut partner = vec![0usize; n];
            for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
                let cost: Vec<Vec<f64>> = ba
                    .iter()
                    .map(|&i| bb.iter().map(|&j| cart_norm(&linalg::sub(&moved[j], &a.coords[i]), &m.0).powi(2)).collect())
                    .collect();
                for (r, c) in hungarian(&cost).into_iter().enumerate() {
                    partner[ba[r]] = bb[c];
                }
            }
            // remove the mean residual displacement
            let deltas: Vec<Vec3<f64>> =
                (0..n).map(|i| linalg::sub(&moved[partner[i]], &a.coords[i]).map(wrap_delta)).collect();
            let mean: Vec3<f64> = std::array::from_fn(|k| deltas.iter().map(|d| d[k]).sum::<f64>() / n as f64);
            let dists: Vec<f64> = deltas.iter().map(|d| cart_norm(&linalg::sub(d, &mean), &m.0)).collect();
            let rmsd = (dists.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt();
            let max = dists.iter().cloned().fold(0.0, f64::max);
            let r = MatchResult { rmsd, normalized_rmsd: rmsd / scale, normalized_max: max / scale };
            if r.normalized_max <= tol.stol && best.is_none_or(|b| r.normalized_rmsd < b.normalized_rmsd) {
                best = Some(r);
            }
        }
    }
    best
}

/// Match of two prepared crystals, symmetric in its arguments.
pub fn match_prepared(a: &Prepared, b: &Prepared, tol: &MatchTolerance) -> Option<MatchResult> {
    if a.composition != b.composition {
        return None;
    }
    match (one_way(a, b, tol), one_way(b, a, tol)) {
        (Some(x), Some(y)) => {
            let key = |m: &MatchResult| (m.normalized_rmsd, m.normalized_max, m.rmsd);
            let (kx, ky) = (key(&x), key(&y));
            let y_first = ky.0.total_cmp(&kx.0).then(ky.1.total_cmp(&kx.1)).then(ky.2.total_cmp(&kx.2)).is_lt();
            Some(if y_first { y } else { x })
        }
        (x, y) => x.or(y),
    }
}

/// Equivalence up to lattice choice, permutation and origin: equal
/// compositions, compatible Niggli lattices, and every site within `stol`.
pub fn structure_match<T: Real>(a: &Crystal<T>, b: &Crystal<T>, tol: &MatchTolerance) -> Option<MatchResult> {
    match_prepared(&Prepared::new(a)?, &Prepared::new(b)?, tol)
}
