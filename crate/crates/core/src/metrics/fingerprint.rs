use crate::crystal::Crystal;
use crate::elements::N_ELEMENTS;
use crate::linalg::{self, Mat3};
use crate::niggli::niggli_reduce;
use crate::real::Real;

pub const RDF_BINS: usize = 64;
pub const RDF_CUTOFF: f64 = 8.0;
/// Bound on lattice translations searched per axis for degenerate cells.
const MAX_IMAGE_RANGE: i64 = 48;

/// Lattice translations per axis needed to reach every image within `cutoff`.
pub(crate) fn image_ranges(inv: &Mat3<f64>, cutoff: f64) -> [i64; 3] {
    // f = x M^{-1}, so |f_k| <= |x| |column k of M^{-1}|
    std::array::from_fn(|k| {
        let col = [inv[0][k], inv[1][k], inv[2][k]];
        ((cutoff * linalg::norm(&col)).ceil() as i64 + 1).min(MAX_IMAGE_RANGE)
    })
}

/// Radial distribution histogram of the Niggli-reduced cell: counts of
/// ordered atom pairs (periodic images included, self at zero excluded)
/// per distance bin below 8 Å, divided by the atom count, then scaled to
/// unit length.
pub fn structure_fingerprint<T: Real>(crystal: &Crystal<T>) -> Vec<f64> {
    let mut c = crystal.cast::<f64>();
    if let Ok((lattice, coords)) = niggli_reduce(&c.lattice, &c.frac_coords) {
        c.lattice = lattice;
        c.frac_coords = coords;
    }
    let mut counts = vec![0u64; RDF_BINS];
    let Ok(m) = c.matrix() else {
        return vec![0.0; RDF_BINS];
    };
    let Some(inv) = linalg::inverse(&m.0) else {
        return vec![0.0; RDF_BINS];
    };
    let range = image_ranges(&inv, RDF_CUTOFF);
    let bin_width = RDF_CUTOFF / RDF_BINS as f64;
    let n = c.n_atoms();
    for i in 0..n {
        for j in 0..n {
            let d = [0, 1, 2].map(|k| crate::crystal::wrap_delta(c.frac_coords[j][k] - c.frac_coords[i][k]));
            for u in -range[0]..=range[0] {
                for v in -range[1]..=range[1] {
                    for w in -range[2]..=range[2] {
                        let f = [d[0] + u as f64, d[1] + v as f64, d[2] + w as f64];
                        let r = linalg::norm(&linalg::vec_mat(&f, &m.0));
                        if r > 1e-8 && r < RDF_CUTOFF {
                            counts[((r / bin_width) as usize).min(RDF_BINS - 1)] += 1;
                        }
                    }
                }
            }
        }
    }
    let mut fp: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();
    let norm = fp.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        fp.iter_mut().for_each(|x| *x /= norm);
    }
    fp
}

/// Element fractions (one slot per element) followed by the mean and
/// standard deviation of atomic number, both divided by the element count.
pub fn composition_fingerprint<T: Real>(crystal: &Crystal<T>) -> Vec<f64> {
    let n = crystal.n_atoms() as f64;
    let mut fp = vec![0.0; N_ELEMENTS + 2];
    for (e, &k) in &crystal.composition().0 {
        fp[e.index()] = k as f64 / n;
    }
    let zs: Vec<f64> = crystal.species.iter().map(|e| e.z() as f64).collect();
    let mean = zs.iter().sum::<f64>() / n;
    let std = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n).sqrt();
    fp[N_ELEMENTS] = mean / N_ELEMENTS as f64;
    fp[N_ELEMENTS + 1] = std / N_ELEMENTS as f64;
    fp
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
