//! Niggli reduction of the lattice, following the numerically stable
//! Krivy-Gruber iteration of Grosse-Kunstleve, Sauter & Adams (2004).
//!
//! The basis is tracked as an integer unimodular matrix acting on the
//! original lattice and the metric tensor is recomputed from it at every
//! step, so no rounding accumulates in the metric.

use crate::crystal::{matrix_to_params, params_to_matrix, wrap_vec, Crystal, LatticeMatrix, LatticeParams};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::real::Real;

pub const MAX_ITERATIONS: usize = 1000;

/// Relative tolerance; the absolute epsilon is this times the squared mean length.
pub const REL_EPSILON: f64 = 1e-5;

type IMat = [[i64; 3]; 3];

const IDENTITY: IMat = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

/// Result of a reduction: the reduced lattice and the integer matrix `m`
/// with `L_reduced = m * L_original` (row bases).
#[derive(Clone, Debug)]
pub struct NiggliCell<T> {
    pub lattice: LatticeParams<T>,
    pub matrix: LatticeMatrix<T>,
    pub transform: IMat,
}

fn metric<T: Real>(m: &Mat3<T>) -> (T, T, T, T, T, T) {
    let g = linalg::gram(m);
    let two = T::lit(2.0);
    (g[0][0], g[1][1], g[2][2], two * g[1][2], two * g[0][2], two * g[0][1])
}

fn sign<T: Real>(x: T) -> i64 {
    if x > T::zero() {
        1
    } else {
        -1
    }
}

/// Reduces a lattice matrix; returns the reduced basis and the transform.
pub fn niggli_reduce_matrix<T: Real>(lattice: &LatticeMatrix<T>) -> Result<(LatticeMatrix<T>, IMat)> {
    let base = lattice.0;
    if !(linalg::det(&base).abs() > T::zero()) {
        return Err(Error::InvalidLattice("singular lattice".into()));
    }
    let mean_len = (linalg::norm(&base[0]) + linalg::norm(&base[1]) + linalg::norm(&base[2])) / T::lit(3.0);
    let eps = T::lit(REL_EPSILON) * mean_len * mean_len;
    let lt = |x: T, y: T| x < y - eps;
    let gt = |x: T, y: T| lt(y, x);
    let eq = |x: T, y: T| !(lt(x, y) || lt(y, x));

    let mut m = IDENTITY;
    let apply = |m: &mut IMat, c: IMat| {
        // columns of c express the new basis in the old one
        let ct = [[c[0][0], c[1][0], c[2][0]], [c[0][1], c[1][1], c[2][1]], [c[0][2], c[1][2], c[2][2]]];
        *m = linalg::imat_mul(&ct, m);
    };

    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let cur = linalg::mat_mul(&linalg::imat_to_real(&m), &base);
        let (a, b, c, xi, eta, zeta) = metric(&cur);

        // A1
        if gt(a, b) || (eq(a, b) && gt(xi.abs(), eta.abs())) {
            apply(&mut m, [[0, -1, 0], [-1, 0, 0], [0, 0, -1]]);
            continue;
        }
        // A2
        if gt(b, c) || (eq(b, c) && gt(eta.abs(), zeta.abs())) {
            apply(&mut m, [[-1, 0, 0], [0, 0, -1], [0, -1, 0]]);
            continue;
        }
        let classify = |x: T| -> i32 {
            if lt(x, T::zero()) {
                -1
            } else if gt(x, T::zero()) {
                1
            } else {
                0
            }
        };
        let (l, mm, n) = (classify(xi), classify(eta), classify(zeta));
        // A3 / A4
        if l * mm * n == 1 {
            let i = if l == -1 { -1 } else { 1 };
            let j = if mm == -1 { -1 } else { 1 };
            let k = if n == -1 { -1 } else { 1 };
            if (i, j, k) != (1, 1, 1) {
                apply(&mut m, [[i, 0, 0], [0, j, 0], [0, 0, k]]);
                continue;
            }
        } else {
            let mut ijk = [1i64, 1, 1];
            let mut free: Option<usize> = None;
            for (slot, s) in [l, mm, n].into_iter().enumerate() {
                if s == 1 {
                    ijk[slot] = -1;
                } else if s == 0 {
                    free = Some(slot);
                }
            }
            if ijk[0] * ijk[1] * ijk[2] == -1 {
                if let Some(p) = free {
                    ijk[p] = -1;
                }
            }
            if ijk != [1, 1, 1] {
                apply(&mut m, [[ijk[0], 0, 0], [0, ijk[1], 0], [0, 0, ijk[2]]]);
                continue;
            }
        }
        // A5
        if gt(xi.abs(), b) || (eq(xi, b) && lt(eta + eta, zeta)) || (eq(xi, -b) && lt(zeta, T::zero())) {
            apply(&mut m, [[1, 0, 0], [0, 1, -sign(xi)], [0, 0, 1]]);
            continue;
        }
        // A6
        if gt(eta.abs(), a) || (eq(eta, a) && lt(xi + xi, zeta)) || (eq(eta, -a) && lt(zeta, T::zero())) {
            apply(&mut m, [[1, 0, -sign(eta)], [0, 1, 0], [0, 0, 1]]);
            continue;
        }
        // A7
        if gt(zeta.abs(), a) || (eq(zeta, a) && lt(xi + xi, eta)) || (eq(zeta, -a) && lt(eta, T::zero())) {
            apply(&mut m, [[1, -sign(zeta), 0], [0, 1, 0], [0, 0, 1]]);
            continue;
        }
        // A8
        let s = xi + eta + zeta + a + b;
        if lt(s, T::zero()) || (eq(s, T::zero()) && gt(T::lit(2.0) * (a + eta) + zeta, T::zero())) {
            apply(&mut m, [[1, 0, 1], [0, 1, 1], [0, 0, 1]]);
            continue;
        }
        converged = true;
        break;
    }
    if !converged {
        return Err(Error::NiggliNonConvergence(MAX_ITERATIONS));
    }
    // keep the basis right-handed; -I leaves the metric unchanged
    if linalg::imat_det(&m) * (if linalg::det(&base) > T::zero() { 1 } else { -1 }) < 0 {
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }
    let reduced = linalg::mat_mul(&linalg::imat_to_real(&m), &base);
    Ok((LatticeMatrix(reduced), m))
}

/// Reduces the cell and re-expresses the fractional coordinates in the new
/// basis, wrapped to [0, 1). The Cartesian point set (modulo lattice
/// translations) is unchanged.
pub fn niggli_reduce<T: Real>(
    lattice: &LatticeParams<T>,
    frac_coords: &[Vec3<T>],
) -> Result<(LatticeParams<T>, Vec<Vec3<T>>)> {
    let cell = niggli_cell(lattice)?;
    // x = f L = f' (M L)  =>  f' = f M^{-1}
    let minv = linalg::inverse(&linalg::imat_to_real::<T>(&cell.transform))
        .ok_or_else(|| Error::InvalidLattice("non-invertible transform".into()))?;
    let coords = frac_coords
        .iter()
        .map(|f| wrap_vec(&linalg::vec_mat(f, &minv)))
        .collect();
    Ok((cell.lattice, coords))
}

/// The same crystal in its Niggli-reduced cell.
pub fn reduce_crystal<T: Real>(crystal: &Crystal<T>) -> Result<Crystal<T>> {
    let (lattice, coords) = niggli_reduce(&crystal.lattice, &crystal.frac_coords)?;
    Crystal::new(crystal.species.clone(), coords, lattice)
}

pub fn niggli_cell<T: Real>(lattice: &LatticeParams<T>) -> Result<NiggliCell<T>> {
    let m = params_to_matrix(lattice)?;
    let (reduced, transform) = niggli_reduce_matrix(&m)?;
    let params = matrix_to_params(&reduced)?;
    Ok(NiggliCell { lattice: params, matrix: reduced, transform })
}

/// Checks the Niggli conditions on the metric within the reduction tolerance.
pub fn is_niggli_reduced<T: Real>(lattice: &LatticeParams<T>) -> bool {
    let m = match params_to_matrix(lattice) {
        Ok(m) => m,
        Err(_) => return false,
    };
    let (a, b, c, xi, eta, zeta) = metric(&m.0);
    let mean = (lattice.lengths[0] + lattice.lengths[1] + lattice.lengths[2]) / T::lit(3.0);
    let eps = T::lit(REL_EPSILON) * mean * mean * T::lit(10.0);
    let le = |x: T, y: T| x <= y + eps;
    let all_pos = xi > eps && eta > eps && zeta > eps;
    let all_nonpos = xi <= eps && eta <= eps && zeta <= eps;
    le(a, b)
        && le(b, c)
        && (all_pos || all_nonpos)
        && le(xi.abs(), b)
        && le(eta.abs(), a)
        && le(zeta.abs(), a)
        && le(-(xi + eta + zeta), a + b)
}
