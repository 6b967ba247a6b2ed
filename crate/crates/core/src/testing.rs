//! Random generators shared by unit, integration and acceptance tests.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::crystal::{Crystal, LatticeParams};
use crate::elements::Element;
use crate::linalg::{self, Mat3};
use crate::niggli;

pub fn el(symbol: &str) -> Element {
    Element::from_symbol(symbol).expect("known element")
}

/// A random valid (not necessarily reduced) lattice.
pub fn random_lattice<R: Rng + ?Sized>(rng: &mut R) -> LatticeParams<f64> {
    loop {
        let lengths = [0; 3].map(|_| rng.random_range(2.0..10.0));
        let angles = [0; 3].map(|_| rng.random_range(50.0..130.0));
        if let Ok(lp) = LatticeParams::new(lengths, angles) {
            if crate::crystal::angle_gram_det(&angles) > 0.05 {
                return lp;
            }
        }
    }
}

pub fn random_species<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Element> {
    (0..n).map(|_| Element::from_z(rng.random_range(1..=83u8)).unwrap()).collect()
}

/// Random crystal with a Niggli-reduced cell and `n` atoms.
pub fn random_reduced_crystal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Crystal<f64> {
    let lp = random_lattice(rng);
    let reduced = niggli::niggli_cell(&lp).expect("random cell reduces").lattice;
    let coords = (0..n).map(|_| [0; 3].map(|_| rng.random::<f64>())).collect();
    Crystal::new(random_species(rng, n), coords, reduced).unwrap()
}

/// Random crystal whose angles lie in [60, 120] (valid for the angle map).
pub fn random_crystal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Crystal<f64> {
    loop {
        let lengths = [0; 3].map(|_| rng.random_range(3.0..8.0));
        let angles = [0; 3].map(|_| rng.random_range(61.0..119.0));
        if let Ok(lp) = LatticeParams::new(lengths, angles) {
            let coords = (0..n).map(|_| [0; 3].map(|_| rng.random::<f64>())).collect();
            return Crystal::new(random_species(rng, n), coords, lp).unwrap();
        }
    }
}

/// Uniformly random proper rotation (via a normalized quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3<f64> {
    let mut q: [f64; 4] = [0; 4].map(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.iter_mut().for_each(|x| *x /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Random integer matrix with determinant +1, built from elementary shears
/// and signed permutations.
pub fn random_unimodular<R: Rng + ?Sized>(rng: &mut R) -> [[i64; 3]; 3] {
    let mut m = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
    for _ in 0..rng.random_range(1..=4) {
        let i = rng.random_range(0..3);
        let mut j = rng.random_range(0..3);
        while j == i {
            j = rng.random_range(0..3);
        }
        let k: i64 = if rng.random::<bool>() { 1 } else { -1 };
        let mut e = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
        e[i][j] = k;
        m = linalg::imat_mul(&e, &m);
    }
    // cyclic permutation keeps det = +1
    if rng.random::<bool>() {
        m = linalg::imat_mul(&[[0, 1, 0], [0, 0, 1], [1, 0, 0]], &m);
    }
    debug_assert_eq!(linalg::imat_det(&m), 1);
    m
}
