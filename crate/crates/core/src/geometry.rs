//! Geometry of the crystal manifold: exponential and logarithm maps on the
//! flat torus, mean-translation removal, the angle diffeomorphism onto an
//! unconstrained space, geodesic interpolants and conditional targets.

use crate::crystal::{wrap_frac, Crystal, LatticeParams};
use crate::elements::Element;
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::real::{sigmoid, Real};

/// `f + v` wrapped onto [0, 1).
#[inline]
pub fn torus_exp<T: Real>(f: T, v: T) -> T {
    wrap_frac(f + v)
}

/// Shortest signed displacement from `f0` to `f1` on the unit circle,
/// `atan2(sin ω, cos ω) / 2π` with `ω = 2π (f1 - f0)`. Lies in (-0.5, 0.5];
/// the antipodal tie resolves to +0.5.
#[inline]
pub fn torus_log<T: Real>(f0: T, f1: T) -> T {
    let d = f1 - f0;
    // range-reduce before the trig calls so the result keeps full precision
    let r = d - (d + T::lit(0.5)).floor();
    if r <= -T::lit(0.5) {
        return T::lit(0.5);
    }
    let omega = T::TAU() * r;
    omega.sin().atan2(omega.cos()) / T::TAU()
}

pub fn torus_exp_vec<T: Real>(f: &Vec3<T>, v: &Vec3<T>) -> Vec3<T> {
    [torus_exp(f[0], v[0]), torus_exp(f[1], v[1]), torus_exp(f[2], v[2])]
}

pub fn torus_log_vec<T: Real>(f0: &Vec3<T>, f1: &Vec3<T>) -> Vec3<T> {
    [torus_log(f0[0], f1[0]), torus_log(f0[1], f1[1]), torus_log(f0[2], f1[2])]
}

/// Column means of an n x 3 field.
pub fn column_mean<T: Real>(field: &[Vec3<T>]) -> Vec3<T> {
    let n = T::from_usize_lossy(field.len().max(1));
    let mut m = [T::zero(); 3];
    for row in field {
        for k in 0..3 {
            m[k] += row[k];
        }
    }
    m.map(|x| x / n)
}

/// Subtracts the per-column mean, projecting out global torus translations.
pub fn remove_mean_translation<T: Real>(field: &[Vec3<T>]) -> Vec<Vec3<T>> {
    let m = column_mean(field);
    field.iter().map(|r| [r[0] - m[0], r[1] - m[1], r[2] - m[2]]).collect()
}

pub const ANGLE_MIN: f64 = 60.0;
pub const ANGLE_SPAN: f64 = 120.0;
pub const ANGLE_CANONICAL_MAX: f64 = 120.0;
const ANGLE_NUDGE: f64 = 1e-9;

fn angle_nudge<T: Real>() -> T {
    T::lit(ANGLE_NUDGE).max(T::lit(ANGLE_MIN) * T::epsilon() * T::lit(4.0))
}

/// `logit((η - 60) / 120)` for η in [60, 120]; 60 itself is nudged upward
/// because the map is singular there.
pub fn angle_to_unconstrained<T: Real>(eta: T) -> Result<T> {
    let lo = T::lit(ANGLE_MIN);
    if !(eta >= lo && eta <= T::lit(ANGLE_CANONICAL_MAX)) {
        return Err(Error::AngleOutOfRange(eta.to_f64_lossy()));
    }
    Ok(angle_to_unconstrained_unchecked(eta.max(lo + angle_nudge())))
}

/// The same map without the range check; defined on (60, 180).
#[inline]
pub fn angle_to_unconstrained_unchecked<T: Real>(eta: T) -> T {
    let p = (eta - T::lit(ANGLE_MIN)) / T::lit(ANGLE_SPAN);
    (p / (T::one() - p)).ln()
}

/// `120 σ(η') + 60`; the image is (60, 180).
#[inline]
pub fn unconstrained_to_angle<T: Real>(u: T) -> T {
    T::lit(ANGLE_SPAN) * sigmoid(u) + T::lit(ANGLE_MIN)
}

/// Tangent vector at a crystal: per-atom torus tangents plus lattice tangents
/// (lengths in Å, angles in unconstrained units).
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector<T> {
    pub coords: Vec<Vec3<T>>,
    pub lengths: Vec3<T>,
    pub angles: Vec3<T>,
}

impl<T: Real> TangentVector<T> {
    pub fn zeros(n: usize) -> Self {
        TangentVector { coords: vec![[T::zero(); 3]; n], lengths: [T::zero(); 3], angles: [T::zero(); 3] }
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }

    pub fn scaled(&self, s: T) -> Self {
        TangentVector {
            coords: self.coords.iter().map(|r| r.map(|x| x * s)).collect(),
            lengths: self.lengths.map(|x| x * s),
            angles: self.angles.map(|x| x * s),
        }
    }

    /// The six lattice components, lengths first.
    pub fn lattice(&self) -> [T; 6] {
        let [a, b, c] = self.lengths;
        let [x, y, z] = self.angles;
        [a, b, c, x, y, z]
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().chain(self.lengths.iter()).chain(self.angles.iter()).all(|x| x.is_finite())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        TangentVector {
            coords: perm.iter().map(|&i| self.coords[i]).collect(),
            lengths: self.lengths,
            angles: self.angles,
        }
    }
}

/// A crystal expressed in the coordinates the flow acts on: torus
/// coordinates, lengths in Å, and angles in unconstrained space.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState<T> {
    pub species: Vec<Element>,
    pub coords: Vec<Vec3<T>>,
    pub lengths: Vec3<T>,
    pub angles: Vec3<T>,
}

impl<T: Real> FlowState<T> {
    /// Maps angles through `angle_to_unconstrained`; they must lie in [60, 120].
    pub fn from_crystal(c: &Crystal<T>) -> Result<Self> {
        let mut angles = [T::zero(); 3];
        for k in 0..3 {
            angles[k] = angle_to_unconstrained(c.lattice.angles[k])?;
        }
        Ok(FlowState { species: c.species.clone(), coords: c.frac_coords.clone(), lengths: c.lattice.lengths, angles })
    }

    /// Accepts any angle in (60, 180), the image of the inverse angle map,
    /// so generated or noised cells convert back exactly.
    pub fn from_crystal_extended(c: &Crystal<T>) -> Result<Self> {
        let lo = T::lit(ANGLE_MIN);
        let mut angles = [T::zero(); 3];
        for k in 0..3 {
            let a = c.lattice.angles[k];
            if !(a >= lo && a < T::lit(180.0)) {
                return Err(Error::AngleOutOfRange(a.to_f64_lossy()));
            }
            angles[k] = angle_to_unconstrained_unchecked(a.max(lo + angle_nudge()));
        }
        Ok(FlowState { species: c.species.clone(), coords: c.frac_coords.clone(), lengths: c.lattice.lengths, angles })
    }

    /// Maps angles back to degrees; fails on non-positive lengths.
    pub fn to_crystal(&self) -> Result<Crystal<T>> {
        let lattice = LatticeParams { lengths: self.lengths, angles: self.angles.map(unconstrained_to_angle) };
        Crystal::new(self.species.clone(), self.coords.clone(), lattice)
    }

    pub fn n_atoms(&self) -> usize {
        self.species.len()
    }

    /// The six lattice inputs, lengths first.
    pub fn lattice(&self) -> [T; 6] {
        let [a, b, c] = self.lengths;
        let [x, y, z] = self.angles;
        [a, b, c, x, y, z]
    }

    /// Moves along `v` for time `dt`: coordinates by the torus exponential,
    /// lattice components linearly.
    pub fn step(&self, v: &TangentVector<T>, dt: T) -> Self {
        FlowState {
            species: self.species.clone(),
            coords: self
                .coords
                .iter()
                .zip(&v.coords)
                .map(|(f, d)| torus_exp_vec(f, &d.map(|x| x * dt)))
                .collect(),
            lengths: [0, 1, 2].map(|k| self.lengths[k] + dt * v.lengths[k]),
            angles: [0, 1, 2].map(|k| self.angles[k] + dt * v.angles[k]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().chain(self.lengths.iter()).chain(self.angles.iter()).all(|x| x.is_finite())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        FlowState {
            species: perm.iter().map(|&i| self.species[i]).collect(),
            coords: perm.iter().map(|&i| self.coords[i]).collect(),
            lengths: self.lengths,
            angles: self.angles,
        }
    }
}

fn check_species(a: &[Element], b: &[Element]) -> Result<()> {
    if a != b {
        return Err(Error::CompositionMismatch(format!(
            "species lists differ ({} vs {} atoms, or different order)",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `log_{c0}(c1)`: torus logs for coordinates, plain differences for the
/// lattice components.
pub fn state_log<T: Real>(s0: &FlowState<T>, s1: &FlowState<T>) -> Result<TangentVector<T>> {
    check_species(&s0.species, &s1.species)?;
    Ok(TangentVector {
        coords: s0.coords.iter().zip(&s1.coords).map(|(a, b)| torus_log_vec(a, b)).collect(),
        lengths: [0, 1, 2].map(|k| s1.lengths[k] - s0.lengths[k]),
        angles: [0, 1, 2].map(|k| s1.angles[k] - s0.angles[k]),
    })
}

/// `exp_{c0}(t log_{c0}(c1))` in flow coordinates.
pub fn state_geodesic<T: Real>(s0: &FlowState<T>, s1: &FlowState<T>, t: T) -> Result<FlowState<T>> {
    let v = state_log(s0, s1)?;
    Ok(s0.step(&v, t))
}

/// Point at time `t` on the geodesic from `c0` to `c1`. Species are carried
/// through unchanged; angles are interpolated in unconstrained space.
pub fn geodesic_point<T: Real>(c0: &Crystal<T>, c1: &Crystal<T>, t: T) -> Result<Crystal<T>> {
    check_species(&c0.species, &c1.species)?;
    if t == T::zero() {
        return Ok(c0.clone());
    }
    let s0 = FlowState::from_crystal(c0)?;
    let s1 = FlowState::from_crystal(c1)?;
    state_geodesic(&s0, &s1, t)?.to_crystal()
}

/// Conditional vector field `-(1/(1-t)) log_{c1}(c_t)` with the coordinate
/// part mean-removed.
pub fn conditional_target<T: Real>(ct: &FlowState<T>, c1: &FlowState<T>, t: T) -> Result<TangentVector<T>> {
    if !(t < T::one()) {
        return Err(Error::SingularTime);
    }
    let log = state_log(c1, ct)?;
    let s = -T::one() / (T::one() - t);
    let coords = remove_mean_translation(&log.coords);
    Ok(TangentVector {
        coords: coords.iter().map(|r| r.map(|x| x * s)).collect(),
        lengths: log.lengths.map(|x| x * s),
        angles: log.angles.map(|x| x * s),
    })
}

/// Crystal-level wrapper around [`conditional_target`].
pub fn conditional_target_crystal<T: Real>(ct: &Crystal<T>, c1: &Crystal<T>, t: T) -> Result<TangentVector<T>> {
    conditional_target(&FlowState::from_crystal(ct)?, &FlowState::from_crystal(c1)?, t)
}

/// Endpoint form of the regression target: `-(log_{f1}(f0) - mean)` for the
/// coordinates and `l1 - l0` for the lattice. Constant along the geodesic.
pub fn endpoint_target<T: Real>(s0: &FlowState<T>, s1: &FlowState<T>) -> Result<TangentVector<T>> {
    let back = state_log(s1, s0)?;
    let coords = remove_mean_translation(&back.coords);
    Ok(TangentVector {
        coords: coords.iter().map(|r| r.map(|x| -x)).collect(),
        lengths: back.lengths.map(|x| -x),
        angles: back.angles.map(|x| -x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{el, random_crystal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_examples() {
        assert!((torus_exp(0.9, 0.2) - 0.1f64).abs() < 1e-15);
        assert_eq!(torus_exp(0.5, 0.0), 0.5);
        assert_eq!(torus_exp(0.25f64, -0.5), 0.75);
    }

    #[test]
    fn log_examples() {
        assert!((torus_log(0.9, 0.1f64) - 0.2).abs() < 1e-15);
        assert_eq!(torus_log(0.3f64, 0.3), 0.0);
        assert_eq!(torus_log(0.0f64, 0.5), 0.5);
        assert_eq!(torus_log(0.5f64, 0.0), 0.5);
        // atan2 convention on the exact antipode
        assert_eq!((0.0f64).atan2(-1.0), std::f64::consts::PI);
    }

    #[test]
    fn log_matches_atan2_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let w = std::f64::consts::TAU * (b - a);
            let direct = w.sin().atan2(w.cos()) / std::f64::consts::TAU;
            assert!((torus_log(a, b) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_log_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100_000 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let r = torus_exp(a, torus_log(a, b));
            let err = (r - b).abs().min(1.0 - (r - b).abs());
            assert!(err < 1e-12, "{a} {b} {r}");
        }
    }

    #[test]
    fn mean_removal_examples() {
        let out = remove_mean_translation(&[[0.3, -0.1, 0.8]]);
        assert_eq!(out, vec![[0.0; 3]]);
        let rows = vec![[0.2, 0.0, 0.0], [-0.2, 0.0, 0.0]];
        assert_eq!(remove_mean_translation(&rows), rows);
        let out = remove_mean_translation(&[[0.3, 0.0, 0.0], [0.1, 0.0, 0.0]]);
        assert!((out[0][0] - 0.1f64).abs() < 1e-15 && (out[1][0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn mean_removal_is_idempotent_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Vec3<f64>> = (0..7).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
        let b: Vec<Vec3<f64>> = (0..7).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
        let pa = remove_mean_translation(&a);
        let ppa = remove_mean_translation(&pa);
        for (x, y) in pa.iter().flatten().zip(ppa.iter().flatten()) {
            assert!((x - y).abs() < 1e-15);
        }
        let sum: Vec<Vec3<f64>> = a.iter().zip(&b).map(|(x, y)| [x[0] + 2.0 * y[0], x[1] + 2.0 * y[1], x[2] + 2.0 * y[2]]).collect();
        let psum = remove_mean_translation(&sum);
        let pb = remove_mean_translation(&b);
        for i in 0..7 {
            for k in 0..3 {
                assert!((psum[i][k] - (pa[i][k] + 2.0 * pb[i][k])).abs() < 1e-14);
            }
        }
        for m in column_mean(&pa) {
            assert!(m.abs() < 1e-15);
        }
    }

    #[test]
    fn angle_map_examples() {
        let u: f64 = angle_to_unconstrained(90.0).unwrap();
        assert!((u + 3f64.ln()).abs() < 1e-12);
        assert!((unconstrained_to_angle(angle_to_unconstrained(75.0f64).unwrap()) - 75.0).abs() < 1e-9);
        assert_eq!(unconstrained_to_angle(0.0f64), 120.0);
        assert!(angle_to_unconstrained(60.0f64).unwrap().is_finite());
        assert!(angle_to_unconstrained(59.0f64).is_err());
        assert!(angle_to_unconstrained(121.0f64).is_err());
        assert!(angle_to_unconstrained(f64::NAN).is_err());
        // the printed map sends 120 degrees to 0, not +inf
        assert_eq!(angle_to_unconstrained(120.0f64).unwrap(), 0.0);
        assert!(unconstrained_to_angle(3.0f64) > 120.0);
    }

    #[test]
    fn angle_round_trip_grid() {
        for k in 1..10_000 {
            let eta = 60.0 + 60.0 * k as f64 / 10_000.0;
            let back = unconstrained_to_angle(angle_to_unconstrained(eta).unwrap());
            assert!((back - eta).abs() < 1e-9);
        }
    }

    fn two_atom(f0: [f64; 3], f1: [f64; 3], lat: LatticeParams<f64>) -> Crystal<f64> {
        Crystal::new(vec![el("Na"), el("Cl")], vec![f0, f1], lat).unwrap()
    }

    #[test]
    fn geodesic_endpoints_and_boundary_midpoint() {
        let a = Crystal::<f64>::new(vec![el("Fe")], vec![[0.9, 0.2, 0.4]], LatticeParams::new([3.0, 4.0, 5.0], [80.0, 95.0, 100.0]).unwrap()).unwrap();
        let b = Crystal::new(vec![el("Fe")], vec![[0.1, 0.7, 0.3]], LatticeParams::new([3.5, 4.2, 4.0], [70.0, 110.0, 90.0]).unwrap()).unwrap();
        assert_eq!(geodesic_point(&a, &b, 0.0).unwrap(), a);
        let end = geodesic_point(&a, &b, 1.0).unwrap();
        for k in 0..3 {
            assert!(torus_log(end.frac_coords[0][k], b.frac_coords[0][k]).abs() < 1e-9);
            assert!((end.lattice.lengths[k] - b.lattice.lengths[k]).abs() < 1e-9);
            assert!((end.lattice.angles[k] - b.lattice.angles[k]).abs() < 1e-9);
        }
        let mid = geodesic_point(&a, &b, 0.5).unwrap();
        assert!(mid.frac_coords[0][0].abs() < 1e-12 || (1.0 - mid.frac_coords[0][0]).abs() < 1e-12);
        let c = Crystal::new(vec![el("Cu")], vec![[0.1; 3]], LatticeParams::cubic(3.0)).unwrap();
        assert!(geodesic_point(&a, &c, 0.5).is_err());
    }

    #[test]
    fn conditional_target_examples() {
        let lat = LatticeParams::cubic(4.0);
        let c1 = FlowState::from_crystal(&two_atom([0.3, 0.0, 0.0], [0.1, 0.0, 0.0], lat)).unwrap();
        let zero = conditional_target(&c1, &c1, 0.3).unwrap();
        assert!(zero.coords.iter().flatten().all(|x| x.abs() < 1e-15));
        assert!(conditional_target(&c1, &c1, 1.0).is_err());

        let single0 = FlowState::from_crystal(&Crystal::new(vec![el("Fe")], vec![[0.2; 3]], lat).unwrap()).unwrap();
        let single1 = FlowState::from_crystal(&Crystal::new(vec![el("Fe")], vec![[0.7; 3]], lat).unwrap()).unwrap();
        let tv = conditional_target(&single0, &single1, 0.4).unwrap();
        assert!(tv.coords[0].iter().all(|&x| x == 0.0));

        // f1 - f0 wrapped = (0.2,0,0), (-0.2,0,0): already zero-mean
        let c0 = FlowState::from_crystal(&two_atom([0.9, 0.5, 0.5], [0.3, 0.5, 0.5], lat)).unwrap();
        let c1 = FlowState::from_crystal(&two_atom([0.1, 0.5, 0.5], [0.1, 0.5, 0.5], lat)).unwrap();
        let endpoint = endpoint_target(&c0, &c1).unwrap();
        assert!((endpoint.coords[0][0] - 0.2).abs() < 1e-12 && (endpoint.coords[1][0] + 0.2).abs() < 1e-12);
        for &t in &[0.0, 0.25, 0.5] {
            let ct = state_geodesic(&c0, &c1, t).unwrap();
            let u = conditional_target(&ct, &c1, t).unwrap();
            for i in 0..2 {
                for k in 0..3 {
                    assert!((u.coords[i][k] - endpoint.coords[i][k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conditional_target_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let c0 = random_crystal(&mut rng, 5);
            let mut c1 = random_crystal(&mut rng, 5);
            c1.species = c0.species.clone();
            let t: f64 = rng.random_range(0.0..0.99);
            let s0 = FlowState::from_crystal(&c0).unwrap();
            let s1 = FlowState::from_crystal(&c1).unwrap();
            let ct = state_geodesic(&s0, &s1, t).unwrap();
            let shift = [0; 3].map(|_| rng.random::<f64>());
            let shifted = |s: &FlowState<f64>| FlowState { coords: s.coords.iter().map(|f| torus_exp_vec(f, &shift)).collect(), ..s.clone() };
            let u = conditional_target(&ct, &s1, t).unwrap();
            let v = conditional_target(&shifted(&ct), &shifted(&s1), t).unwrap();
            for (a, b) in u.coords.iter().flatten().zip(v.coords.iter().flatten()) {
                assert!((a - b).abs() < 1e-10 * (1.0 / (1.0 - t)));
            }
        }
    }
}
