//! Embedded periodic table (Z = 1..=103): symbols, standard atomic masses,
//! covalent radii (Å) and common oxidation states.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

pub const N_ELEMENTS: usize = 103;

struct ElementData {
    symbol: &'static str,
    mass: f64,
    radius: f64,
    oxidation: &'static [i32],
}

macro_rules! el {
    ($s:literal, $m:literal, $r:literal, [$($o:literal),*]) => {
        ElementData { symbol: $s, mass: $m, radius: $r, oxidation: &[$($o),*] }
    };
}

#[rustfmt::skip]
static TABLE: [ElementData; N_ELEMENTS] = [
    el!("H", 1.008, 0.31, [1, -1]),
    el!("He", 4.0026, 0.28, []),
    el!("Li", 6.94, 1.28, [1]),
    el!("Be", 9.0122, 0.96, [2]),
    el!("B", 10.81, 0.84, [3]),
    el!("C", 12.011, 0.76, [-4, 4]),
    el!("N", 14.007, 0.71, [-3, 3, 5]),
    el!("O", 15.999, 0.66, [-2]),
    el!("F", 18.998, 0.57, [-1]),
    el!("Ne", 20.180, 0.58, []),
    el!("Na", 22.990, 1.66, [1]),
    el!("Mg", 24.305, 1.41, [2]),
    el!("Al", 26.982, 1.21, [3]),
    el!("Si", 28.085, 1.11, [-4, 4]),
    el!("P", 30.974, 1.07, [-3, 3, 5]),
    el!("S", 32.06, 1.05, [-2, 2, 4, 6]),
    el!("Cl", 35.45, 1.02, [-1, 1, 3, 5, 7]),
    el!("Ar", 39.948, 1.06, []),
    el!("K", 39.098, 2.03, [1]),
    el!("Ca", 40.078, 1.76, [2]),
    el!("Sc", 44.956, 1.70, [3]),
    el!("Ti", 47.867, 1.60, [4]),
    el!("V", 50.942, 1.53, [5]),
    el!("Cr", 51.996, 1.39, [3, 6]),
    el!("Mn", 54.938, 1.39, [2, 4, 7]),
    el!("Fe", 55.845, 1.32, [2, 3]),
    el!("Co", 58.933, 1.26, [2, 3]),
    el!("Ni", 58.693, 1.24, [2]),
    el!("Cu", 63.546, 1.32, [2]),
    el!("Zn", 65.38, 1.22, [2]),
    el!("Ga", 69.723, 1.22, [3]),
    el!("Ge", 72.630, 1.20, [-4, 2, 4]),
    el!("As", 74.922, 1.19, [-3, 3, 5]),
    el!("Se", 78.971, 1.20, [-2, 2, 4, 6]),
    el!("Br", 79.904, 1.20, [-1, 1, 3, 5]),
    el!("Kr", 83.798, 1.16, [2]),
    el!("Rb", 85.468, 2.20, [1]),
    el!("Sr", 87.62, 1.95, [2]),
    el!("Y", 88.906, 1.90, [3]),
    el!("Zr", 91.224, 1.75, [4]),
    el!("Nb", 92.906, 1.64, [5]),
    el!("Mo", 95.95, 1.54, [4, 6]),
    el!("Tc", 98.0, 1.47, [4, 7]),
    el!("Ru", 101.07, 1.46, [3, 4]),
    el!("Rh", 102.91, 1.42, [3]),
    el!("Pd", 106.42, 1.39, [2, 4]),
    el!("Ag", 107.87, 1.45, [1]),
    el!("Cd", 112.41, 1.44, [2]),
    el!("In", 114.82, 1.42, [3]),
    el!("Sn", 118.71, 1.39, [-4, 2, 4]),
    el!("Sb", 121.76, 1.39, [-3, 3, 5]),
    el!("Te", 127.60, 1.38, [-2, 2, 4, 6]),
    el!("I", 126.90, 1.39, [-1, 1, 3, 5, 7]),
    el!("Xe", 131.29, 1.40, [2, 4, 6]),
    el!("Cs", 132.91, 2.44, [1]),
    el!("Ba", 137.33, 2.15, [2]),
    el!("La", 138.91, 2.07, [3]),
    el!("Ce", 140.12, 2.04, [3, 4]),
    el!("Pr", 140.91, 2.03, [3]),
    el!("Nd", 144.24, 2.01, [3]),
    el!("Pm", 145.0, 1.99, [3]),
    el!("Sm", 150.36, 1.98, [3]),
    el!("Eu", 151.96, 1.98, [2, 3]),
    el!("Gd", 157.25, 1.96, [3]),
    el!("Tb", 158.93, 1.94, [3]),
    el!("Dy", 162.50, 1.92, [3]),
    el!("Ho", 164.93, 1.92, [3]),
    el!("Er", 167.26, 1.89, [3]),
    el!("Tm", 168.93, 1.90, [3]),
    el!("Yb", 173.05, 1.87, [3]),
    el!("Lu", 174.97, 1.87, [3]),
    el!("Hf", 178.49, 1.75, [4]),
    el!("Ta", 180.95, 1.70, [5]),
    el!("W", 183.84, 1.62, [4, 6]),
    el!("Re", 186.21, 1.51, [4]),
    el!("Os", 190.23, 1.44, [4]),
    el!("Ir", 192.22, 1.41, [3, 4]),
    el!("Pt", 195.08, 1.36, [2, 4]),
    el!("Au", 196.97, 1.36, [3]),
    el!("Hg", 200.59, 1.32, [1, 2]),
    el!("Tl", 204.38, 1.45, [1, 3]),
    el!("Pb", 207.2, 1.46, [2, 4]),
    el!("Bi", 208.98, 1.48, [3]),
    el!("Po", 209.0, 1.40, [-2, 2, 4]),
    el!("At", 210.0, 1.50, [-1, 1]),
    el!("Rn", 222.0, 1.50, [2]),
    el!("Fr", 223.0, 2.60, [1]),
    el!("Ra", 226.0, 2.21, [2]),
    el!("Ac", 227.0, 2.15, [3]),
    el!("Th", 232.04, 2.06, [4]),
    el!("Pa", 231.04, 2.00, [5]),
    el!("U", 238.03, 1.96, [6]),
    el!("Np", 237.0, 1.90, [5]),
    el!("Pu", 244.0, 1.87, [4]),
    el!("Am", 243.0, 1.80, [3]),
    el!("Cm", 247.0, 1.69, [3]),
    el!("Bk", 247.0, 1.68, [3]),
    el!("Cf", 251.0, 1.68, [3]),
    el!("Es", 252.0, 1.65, [3]),
    el!("Fm", 257.0, 1.67, [3]),
    el!("Md", 258.0, 1.73, [3]),
    el!("No", 259.0, 1.76, [2]),
    el!("Lr", 262.0, 1.61, [3]),
];

/// A chemical element, stored as its atomic number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Element(u8);

impl Element {
    pub fn from_z(z: u8) -> Option<Self> {
        (1..=N_ELEMENTS as u8).contains(&z).then_some(Element(z))
    }

    pub fn from_symbol(symbol: &str) -> Option<Self> {
        TABLE
            .iter()
            .position(|e| e.symbol == symbol)
            .map(|i| Element(i as u8 + 1))
    }

    pub fn z(self) -> u8 {
        self.0
    }

    /// Zero-based row in embedding tables.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    fn data(self) -> &'static ElementData {
        &TABLE[self.index()]
    }

    pub fn symbol(self) -> &'static str {
        self.data().symbol
    }

    /// Standard atomic mass in g/mol.
    pub fn mass(self) -> f64 {
        self.data().mass
    }

    /// Covalent radius in Å.
    pub fn covalent_radius(self) -> f64 {
        self.data().radius
    }

    /// Common oxidation states; empty for elements that form no ionic compounds.
    pub fn oxidation_states(self) -> &'static [i32] {
        self.data().oxidation
    }

    pub fn all() -> impl Iterator<Item = Element> {
        (1..=N_ELEMENTS as u8).map(Element)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::from_symbol(s.trim()).ok_or_else(|| Error::UnknownElement(s.to_string()))
    }
}

impl Serialize for Element {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_ordered_and_complete() {
        assert_eq!(Element::from_symbol("H").unwrap().z(), 1);
        assert_eq!(Element::from_symbol("O").unwrap().z(), 8);
        assert_eq!(Element::from_symbol("Fe").unwrap().z(), 26);
        assert_eq!(Element::from_symbol("Cs").unwrap().z(), 55);
        assert_eq!(Element::from_symbol("U").unwrap().z(), 92);
        assert_eq!(Element::from_symbol("Lr").unwrap().z(), 103);
        assert!(Element::from_symbol("Xx").is_none());
        assert!(Element::from_z(0).is_none());
        assert!(Element::from_z(104).is_none());
        let mut symbols: Vec<_> = Element::all().map(|e| e.symbol()).collect();
        symbols.sort();
        symbols.dedup();
        assert_eq!(symbols.len(), N_ELEMENTS);
    }

    #[test]
    fn masses_increase_roughly_with_z() {
        for e in Element::all() {
            assert!(e.mass() > 0.0 && e.covalent_radius() > 0.0);
            // a handful of inversions (Ar/K, Co/Ni, Te/I, Th/Pa, U/Np) are real
            assert!((e.mass() / e.z() as f64) > 1.0 && (e.mass() / e.z() as f64) < 2.7);
        }
    }
}
