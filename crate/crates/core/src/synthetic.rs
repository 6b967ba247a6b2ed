//! Synthetic family of perturbed binary ionic crystals: rock-salt
//! conventional cells (8 atoms) and CsCl-type cells (2 atoms).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::crystal::{Crystal, LatticeParams};
use crate::elements::Element;
use crate::error::Result;
use crate::niggli::niggli_reduce;
use crate::assign::hungarian;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    RockSalt,
    CesiumChloride,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prototype {
    pub cation: &'static str,
    pub anion: &'static str,
    pub structure: Structure,
    /// Cubic lattice constant in Å.
    pub a: f64,
}

pub const PROTOTYPES: [Prototype; 10] = [
    Prototype { cation: "Na", anion: "Cl", structure: Structure::RockSalt, a: 5.64 },
    Prototype { cation: "K", anion: "Cl", structure: Structure::RockSalt, a: 6.29 },
    Prototype { cation: "Mg", anion: "O", structure: Structure::RockSalt, a: 4.21 },
    Prototype { cation: "Li", anion: "F", structure: Structure::RockSalt, a: 4.03 },
    Prototype { cation: "Na", anion: "F", structure: Structure::RockSalt, a: 4.63 },
    Prototype { cation: "Ca", anion: "O", structure: Structure::RockSalt, a: 4.81 },
    Prototype { cation: "Cs", anion: "Cl", structure: Structure::CesiumChloride, a: 4.12 },
    Prototype { cation: "Cs", anion: "Br", structure: Structure::CesiumChloride, a: 4.29 },
    Prototype { cation: "Cs", anion: "I", structure: Structure::CesiumChloride, a: 4.57 },
    Prototype { cation: "Tl", anion: "Cl", structure: Structure::CesiumChloride, a: 3.84 },
];

const FCC: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub length_rel: f64,
    pub angle_deg: f64,
    pub coord: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation { length_rel: 0.02, angle_deg: 1.0, coord: 0.01 }
    }
}

impl Prototype {
    fn elements(&self) -> (Element, Element) {
        let get = |s: &str| Element::from_symbol(s).expect("prototype symbols are elements");
        (get(self.cation), get(self.anion))
    }

    /// The ideal cubic cell.
    pub fn ideal(&self) -> Crystal<f64> {
        let (cat, an) = self.elements();
        let (species, coords) = match self.structure {
            Structure::RockSalt => {
                let mut species = vec![cat; 4];
                species.extend([an; 4]);
                let mut coords = FCC.to_vec();
                coords.extend(FCC.iter().map(|f| f.map(|x| (x + 0.5) % 1.0)));
                (species, coords)
            }
            Structure::CesiumChloride => (vec![cat, an], vec![[0.0; 3], [0.5; 3]]),
        };
        Crystal::new(species, coords, LatticeParams::cubic(self.a)).expect("prototype cell is valid")
    }

    /// A strained, sheared and rattled copy, Niggli-reduced, with atoms
    /// listed in template site order.
    pub fn perturbed<R: Rng + ?Sized>(&self, p: &Perturbation, rng: &mut R) -> Result<Crystal<f64>> {
        let ideal = self.ideal();
        let std = |s: f64| Normal::new(0.0, s).expect("finite std");
        let (dl, da, dc) = (std(p.length_rel), std(p.angle_deg), std(p.coord));
        let lengths = ideal.lattice.lengths.map(|l| l * (1.0 + dl.sample(rng)));
        let angles = ideal.lattice.angles.map(|a| a + da.sample(rng));
        let coords: Vec<_> = ideal.frac_coords.iter().map(|f| f.map(|x| x + dc.sample(rng))).collect();
        let (lattice, coords) = niggli_reduce(&LatticeParams::new(lengths, angles)?, &coords)?;
        let coords = template_order(&ideal, coords);
        Crystal::new(ideal.species, coords, lattice)
    }
}

/// Reorders each species block so that slot `i` sits nearest template site `i`
/// on the torus. The cubic site sets are invariant under the axis permutations
/// and sign flips that reduction applies, so the order stays stable.
fn template_order(ideal: &Crystal<f64>, coords: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
    let torus = |a: &[f64; 3], b: &[f64; 3]| -> f64 {
        (0..3).map(|k| {
            let d = a[k] - b[k];
            let d = d - d.round();
            d * d
        }).sum()
    };
    let mut out = coords.clone();
    let mut start = 0;
    while start < ideal.species.len() {
        let el = ideal.species[start];
        let end = start + ideal.species[start..].iter().take_while(|&&s| s == el).count();
        let cost: Vec<Vec<f64>> = (start..end)
            .map(|i| (start..end).map(|j| torus(&ideal.frac_coords[i], &coords[j])).collect())
            .collect();
        for (row, col) in hungarian(&cost).into_iter().enumerate() {
            out[start + row] = coords[start + col];
        }
        start = end;
    }
    out
}

/// Ideal cells of every prototype.
pub fn templates() -> Vec<Crystal<f64>> {
    PROTOTYPES.iter().map(Prototype::ideal).collect()
}

/// `n` perturbed crystals with prototypes drawn uniformly.
pub fn synthetic_family<R: Rng + ?Sized>(n: usize, p: &Perturbation, rng: &mut R) -> Result<Vec<Crystal<f64>>> {
    (0..n).map(|_| PROTOTYPES[rng.random_range(0..PROTOTYPES.len())].perturbed(p, rng)).collect()
}
