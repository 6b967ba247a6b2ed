//! Crystal representation: species, fractional coordinates on the flat
//! 3-torus, and lattice parameters.

use std::collections::BTreeMap;
use std::fmt;

use crate::elements::Element;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::real::Real;

/// Cell lengths (Å) and angles (degrees).
///
/// Angles are stored in degrees and admitted anywhere in (0, 180) so that
/// pre-reduction inputs can be represented; canonical cells sit in [60, 120].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeParams<T> {
    pub lengths: Vec3<T>,
    pub angles: Vec3<T>,
}

/// Row-basis lattice matrix (rows are the cell vectors a, b, c in Å).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeMatrix<T>(pub Mat3<T>);

/// Normalized Gram determinant `1 - cos²α - cos²β - cos²γ + 2 cosα cosβ cosγ`.
pub fn angle_gram_det<T: Real>(angles: &Vec3<T>) -> T {
    let [ca, cb, cg] = angles.map(|x| x.to_radians().cos());
    T::one() - ca * ca - cb * cb - cg * cg + T::lit(2.0) * ca * cb * cg
}

/// Whether the angles span a 3D cell; a determinant within rounding of
/// zero counts as flat.
pub fn angles_admit_cell<T: Real>(angles: &Vec3<T>) -> bool {
    angle_gram_det(angles) > T::epsilon() * T::lit(64.0)
}

impl<T: Real> LatticeParams<T> {
    pub fn new(lengths: Vec3<T>, angles: Vec3<T>) -> Result<Self> {
        let lp = LatticeParams { lengths, angles };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.iter().any(|l| !l.is_finite() || *l <= T::zero()) {
            return Err(Error::InvalidLattice(format!("non-positive length in {:?}", self.lengths)));
        }
        let lo = T::zero();
        let hi = T::lit(180.0);
        if self.angles.iter().any(|a| !a.is_finite() || *a <= lo || *a >= hi) {
            return Err(Error::InvalidLattice(format!("angle outside (0, 180) in {:?}", self.angles)));
        }
        if !angles_admit_cell(&self.angles) {
            return Err(Error::InvalidLattice(format!(
                "angles {:?} do not admit a 3D cell",
                self.angles
            )));
        }
        Ok(())
    }

    pub fn a(&self) -> T {
        self.lengths[0]
    }
    pub fn b(&self) -> T {
        self.lengths[1]
    }
    pub fn c(&self) -> T {
        self.lengths[2]
    }

    pub fn cubic(a: T) -> Self {
        let right = T::lit(90.0);
        LatticeParams { lengths: [a; 3], angles: [right; 3] }
    }

    /// Cell volume in Å³.
    pub fn volume(&self) -> T {
        let [a, b, c] = self.lengths;
        a * b * c * angle_gram_det(&self.angles).max(T::zero()).sqrt()
    }

    /// Lattice matrix with a along x and b in the xy-plane.
    pub fn to_matrix(&self) -> Result<LatticeMatrix<T>> {
        params_to_matrix(self)
    }
}

/// Converts lattice parameters to a row-basis matrix.
///
/// Convention: `a` along x, `b` in the xy-plane, `c` completing a
/// right-handed basis.
pub fn params_to_matrix<T: Real>(lattice: &LatticeParams<T>) -> Result<LatticeMatrix<T>> {
    lattice.validate()?;
    let [a, b, c] = lattice.lengths;
    let [al, be, ga] = lattice.angles.map(|x| x.to_radians());
    let (ca, cb, cg) = (al.cos(), be.cos(), ga.cos());
    let sg = ga.sin();
    let cy = (ca - cb * cg) / sg;
    let cz2 = T::one() - cb * cb - cy * cy;
    if cz2 <= T::zero() {
        return Err(Error::InvalidLattice("degenerate angle combination".into()));
    }
    Ok(LatticeMatrix([
        [a, T::zero(), T::zero()],
        [b * cg, b * sg, T::zero()],
        [c * cb, c * cy, c * cz2.sqrt()],
    ]))
}

/// Recovers lengths and angles from any right-handed row basis.
pub fn matrix_to_params<T: Real>(m: &LatticeMatrix<T>) -> Result<LatticeParams<T>> {
    let d = linalg::det(&m.0);
    if !(d > T::zero()) {
        return Err(Error::InvalidLattice(format!("lattice determinant {} is not positive", d)));
    }
    let [va, vb, vc] = m.0;
    let (a, b, c) = (linalg::norm(&va), linalg::norm(&vb), linalg::norm(&vc));
    let angle = |u: &Vec3<T>, v: &Vec3<T>, nu: T, nv: T| {
        let cos = (linalg::dot(u, v) / (nu * nv)).max(-T::one()).min(T::one());
        cos.acos().to_degrees()
    };
    Ok(LatticeParams {
        lengths: [a, b, c],
        angles: [angle(&vb, &vc, b, c), angle(&va, &vc, a, c), angle(&va, &vb, a, b)],
    })
}

impl<T: Real> LatticeMatrix<T> {
    pub fn det(&self) -> T {
        linalg::det(&self.0)
    }

    pub fn inverse(&self) -> Result<Mat3<T>> {
        linalg::inverse(&self.0).ok_or_else(|| Error::InvalidLattice("singular lattice matrix".into()))
    }

    pub fn to_params(&self) -> Result<LatticeParams<T>> {
        matrix_to_params(self)
    }
}

/// Wraps a fractional coordinate into [0, 1).
#[inline]
pub fn wrap_frac<T: Real>(x: T) -> T {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1
    if w >= T::one() {
        T::zero()
    } else {
        w
    }
}

#[inline]
pub fn wrap_vec<T: Real>(v: &Vec3<T>) -> Vec3<T> {
    v.map(wrap_frac)
}

/// Multiset of element counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Composition(pub BTreeMap<Element, usize>);

impl Composition {
    pub fn from_species(species: &[Element]) -> Self {
        let mut map = BTreeMap::new();
        for &s in species {
            *map.entry(s).or_insert(0) += 1;
        }
        Composition(map)
    }

    pub fn n_atoms(&self) -> usize {
        self.0.values().sum()
    }

    pub fn n_ary(&self) -> usize {
        self.0.len()
    }

    pub fn count(&self, el: Element) -> usize {
        self.0.get(&el).copied().unwrap_or(0)
    }

    /// Species list sorted by atomic number.
    pub fn to_species(&self) -> Vec<Element> {
        self.0.iter().flat_map(|(&e, &k)| std::iter::repeat_n(e, k)).collect()
    }

    /// Formula string ordered by atomic number, e.g. `Na1Cl1`.
    pub fn key(&self) -> String {
        self.0.iter().map(|(e, k)| format!("{}{}", e.symbol(), k)).collect()
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// An n-atom periodic crystal.
#[derive(Clone, Debug, PartialEq)]
pub struct Crystal<T> {
    pub species: Vec<Element>,
    /// Rows are atoms; entries in [0, 1).
    pub frac_coords: Vec<Vec3<T>>,
    pub lattice: LatticeParams<T>,
}

impl<T: Real> Crystal<T> {
    /// Validates and wraps coordinates into [0, 1).
    pub fn new(species: Vec<Element>, frac_coords: Vec<Vec3<T>>, lattice: LatticeParams<T>) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::InvalidCrystal("crystal has no atoms".into()));
        }
        if species.len() != frac_coords.len() {
            return Err(Error::InvalidCrystal(format!(
                "{} species but {} coordinate rows",
                species.len(),
                frac_coords.len()
            )));
        }
        if frac_coords.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidCrystal("non-finite fractional coordinate".into()));
        }
        lattice.validate()?;
        let frac_coords = frac_coords.iter().map(wrap_vec).collect();
        Ok(Crystal { species, frac_coords, lattice })
    }

    pub fn n_atoms(&self) -> usize {
        self.species.len()
    }

    pub fn composition(&self) -> Composition {
        Composition::from_species(&self.species)
    }

    pub fn n_ary(&self) -> usize {
        self.composition().n_ary()
    }

    pub fn matrix(&self) -> Result<LatticeMatrix<T>> {
        params_to_matrix(&self.lattice)
    }

    pub fn volume(&self) -> T {
        self.lattice.volume()
    }

    /// Density in g/cm³ from standard atomic masses.
    pub fn density(&self) -> f64 {
        const AMU_PER_A3_TO_G_PER_CM3: f64 = 1.660_539_066_60;
        let mass: f64 = self.species.iter().map(|e| e.mass()).sum();
        mass / self.volume().to_f64_lossy() * AMU_PER_A3_TO_G_PER_CM3
    }

    /// Applies `perm`: atom `k` of the result is atom `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Crystal {
            species: perm.iter().map(|&i| self.species[i]).collect(),
            frac_coords: perm.iter().map(|&i| self.frac_coords[i]).collect(),
            lattice: self.lattice,
        }
    }

    /// Shifts every atom by `shift` (mod 1).
    pub fn translated(&self, shift: &Vec3<T>) -> Self {
        Crystal {
            species: self.species.clone(),
            frac_coords: self.frac_coords.iter().map(|f| wrap_vec(&linalg::add(f, shift))).collect(),
            lattice: self.lattice,
        }
    }

    pub fn cast<U: Real>(&self) -> Crystal<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        Crystal {
            species: self.species.clone(),
            frac_coords: self.frac_coords.iter().map(|f| wrap_vec(&f.map(c))).collect(),
            lattice: LatticeParams { lengths: self.lattice.lengths.map(c), angles: self.lattice.angles.map(c) },
        }
    }
}

/// Cartesian positions (Å) of every atom.
pub fn frac_to_cart<T: Real>(crystal: &Crystal<T>) -> Result<Vec<Vec3<T>>> {
    let m = crystal.matrix()?;
    Ok(crystal.frac_coords.iter().map(|f| linalg::vec_mat(f, &m.0)).collect())
}

/// Fractional coordinates (wrapped) of Cartesian positions in `lattice`.
pub fn cart_to_frac<T: Real>(cart: &[Vec3<T>], lattice: &LatticeParams<T>) -> Result<Vec<Vec3<T>>> {
    let inv = params_to_matrix(lattice)?.inverse()?;
    Ok(cart.iter().map(|x| wrap_vec(&linalg::vec_mat(x, &inv))).collect())
}

/// Displacement wrapped to [-0.5, 0.5).
#[inline]
pub fn wrap_delta<T: Real>(d: T) -> T {
    d - (d + T::lit(0.5)).floor()
}

/// Minimum Cartesian distance between atom `i` and the periodic images of
/// atom `j`, searched over the 27 neighbouring translations of the wrapped
/// displacement. For `i == j` the zero translation is excluded.
pub fn min_image_distance<T: Real>(crystal: &Crystal<T>, i: usize, j: usize) -> Result<T> {
    let m = crystal.matrix()?;
    Ok(min_image_distance_with(&m.0, &crystal.frac_coords[i], &crystal.frac_coords[j], i == j))
}

pub(crate) fn min_image_distance_with<T: Real>(m: &Mat3<T>, fi: &Vec3<T>, fj: &Vec3<T>, same: bool) -> T {
    let d = [0, 1, 2].map(|k| wrap_delta(fj[k] - fi[k]));
    let mut best = T::infinity();
    for n0 in -1i32..=1 {
        for n1 in -1i32..=1 {
            for n2 in -1i32..=1 {
                if same && n0 == 0 && n1 == 0 && n2 == 0 {
                    continue;
                }
                let v = [
                    d[0] + T::lit(n0 as f64),
                    d[1] + T::lit(n1 as f64),
                    d[2] + T::lit(n2 as f64),
                ];
                let x = linalg::vec_mat(&v, m);
                let r2 = linalg::dot(&x, &x);
                if r2 < best {
                    best = r2;
                }
            }
        }
    }
    best.sqrt()
}

pub const MIN_INTERATOMIC_DISTANCE: f64 = 0.5;

/// True iff every pair of atoms, self-images included, is more than 0.5 Å apart.
pub fn structural_validity<T: Real>(crystal: &Crystal<T>) -> bool {
    let m = match crystal.matrix() {
        Ok(m) => m,
        Err(_) => return false,
    };
    let thresh = T::lit(MIN_INTERATOMIC_DISTANCE);
    let n = crystal.n_atoms();
    for i in 0..n {
        for j in i..n {
            let d = min_image_distance_with(&m.0, &crystal.frac_coords[i], &crystal.frac_coords[j], i == j);
            if !(d > thresh) {
                return false;
            }
        }
    }
    true
}
