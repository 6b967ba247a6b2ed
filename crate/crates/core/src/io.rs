//! Line-oriented JSON files: one crystal per line, or one `{"c0", "c1"}`
//! pair per line. Floats are written with 12 significant digits.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::base::{reject_invalid, Candidate};
use crate::crystal::Crystal;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeRecord {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// On-disk crystal. Species stay as text so that unknown symbols surface
/// as rejections rather than parse failures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrystalRecord {
    pub species: Vec<String>,
    pub frac_coords: Vec<[f64; 3]>,
    pub lattice: LatticeRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition_key: Option<String>,
}

impl CrystalRecord {
    pub fn from_crystal<T: Real>(c: &Crystal<T>) -> Self {
        let [a, b, cc] = c.lattice.lengths.map(|x| x.to_f64_lossy());
        let [alpha, beta, gamma] = c.lattice.angles.map(|x| x.to_f64_lossy());
        CrystalRecord {
            species: c.species.iter().map(|e| e.symbol().to_string()).collect(),
            frac_coords: c.frac_coords.iter().map(|f| f.map(|x| x.to_f64_lossy())).collect(),
            lattice: LatticeRecord { a, b, c: cc, alpha, beta, gamma },
            composition_key: None,
        }
    }

    pub fn to_candidate<T: Real>(&self) -> Candidate<T> {
        let l = &self.lattice;
        Candidate {
            species: self.species.clone(),
            frac_coords: self.frac_coords.iter().map(|f| f.map(T::lit)).collect(),
            lengths: [l.a, l.b, l.c].map(T::lit),
            angles: [l.alpha, l.beta, l.gamma].map(T::lit),
        }
    }

    pub fn to_crystal<T: Real>(&self) -> Result<Crystal<T>> {
        reject_invalid(&self.to_candidate()).map_err(|r| Error::InvalidCrystal(format!("record rejected: {r}")))
    }
}

/// Shortest decimal that round-trips the value rounded to 12 significant digits.
pub fn format_float(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0.0".into() } else { "null".into() };
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let s = format!("{rounded}");
    if s.contains('.') || s.contains('e') {
        s
    } else {
        s + ".0"
    }
}

fn push_floats(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (k, x) in xs.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(&format_float(*x));
    }
    out.push(']');
}

/// One-line JSON for a crystal.
pub fn crystal_to_json<T: Real>(c: &Crystal<T>) -> String {
    record_to_json(&CrystalRecord::from_crystal(c))
}

pub fn record_to_json(r: &CrystalRecord) -> String {
    let mut out = String::with_capacity(64 + 48 * r.species.len());
    out.push_str("{\"species\":");
    out.push_str(&serde_json::to_string(&r.species).expect("strings serialize"));
    out.push_str(",\"frac_coords\":[");
    for (i, f) in r.frac_coords.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_floats(&mut out, f);
    }
    out.push_str("],\"lattice\":{");
    let l = &r.lattice;
    for (k, (name, v)) in
        [("a", l.a), ("b", l.b), ("c", l.c), ("alpha", l.alpha), ("beta", l.beta), ("gamma", l.gamma)].iter().enumerate()
    {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "\"{name}\":{}", format_float(*v));
    }
    out.push('}');
    if let Some(key) = &r.composition_key {
        out.push_str(",\"composition_key\":");
        out.push_str(&serde_json::to_string(key).expect("string serializes"));
    }
    out.push('}');
    out
}

pub fn pair_to_json<T: Real>(c0: &Crystal<T>, c1: &Crystal<T>) -> String {
    format!("{{\"c0\":{},\"c1\":{}}}", crystal_to_json(c0), crystal_to_json(c1))
}

#[derive(Deserialize)]
struct PairRecord {
    c0: CrystalRecord,
    c1: CrystalRecord,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_crystals<T: Real>(path: &Path, crystals: &[Crystal<T>]) -> Result<()> {
    let mut w = create(path)?;
    for c in crystals {
        writeln!(w, "{}", crystal_to_json(c))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs<T: Real>(path: &Path, pairs: &[(Crystal<T>, Crystal<T>)]) -> Result<()> {
    let mut w = create(path)?;
    for (c0, c1) in pairs {
        writeln!(w, "{}", pair_to_json(c0, c1))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_error(line: usize, e: serde_json::Error) -> Error {
    Error::Parse { line, column: e.column(), reason: e.to_string() }
}

/// Every non-blank line parsed as a record; failures carry their line number.
pub fn read_records(path: &Path) -> Result<Vec<(usize, Result<CrystalRecord>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, serde_json::from_str(&line).map_err(|e| parse_error(i + 1, e))));
    }
    Ok(out)
}

/// Strict reader: any malformed or invalid line is an error.
pub fn read_crystals<T: Real>(path: &Path) -> Result<Vec<Crystal<T>>> {
    read_records(path)?
        .into_iter()
        .map(|(line, r)| {
            r?.to_crystal().map_err(|e| Error::Parse { line, column: 1, reason: e.to_string() })
        })
        .collect()
}

pub fn read_pairs<T: Real>(path: &Path) -> Result<Vec<(Crystal<T>, Crystal<T>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PairRecord = serde_json::from_str(&line).map_err(|e| parse_error(i + 1, e))?;
        let conv = |r: &CrystalRecord| {
            r.to_crystal().map_err(|e| Error::Parse { line: i + 1, column: 1, reason: e.to_string() })
        };
        out.push((conv(&p.c0)?, conv(&p.c1)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::LatticeParams;
    use crate::testing::{el, random_crystal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float_format_has_twelve_digits() {
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(5.0), "5.0");
        assert_eq!(format_float(0.0), "0.0");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_float(123456.7890123456), "123456.789012");
        assert_eq!(format_float(-2.5e-7), "-0.00000025");
    }

    #[test]
    fn record_layout() {
        let c = Crystal::new(vec![el("Na"), el("Cl")], vec![[0.0; 3], [0.5; 3]], LatticeParams::cubic(5.64)).unwrap();
        assert_eq!(
            crystal_to_json(&c),
            "{\"species\":[\"Na\",\"Cl\"],\"frac_coords\":[[0.0,0.0,0.0],[0.5,0.5,0.5]],\
             \"lattice\":{\"a\":5.64,\"b\":5.64,\"c\":5.64,\"alpha\":90.0,\"beta\":90.0,\"gamma\":90.0}}"
        );
    }

    #[test]
    fn file_round_trip_within_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let crystals: Vec<_> = (0..20).map(|k| random_crystal(&mut rng, 1 + k % 6)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_crystals(&path, &crystals).unwrap();
        let back: Vec<Crystal<f64>> = read_crystals(&path).unwrap();
        for (a, b) in crystals.iter().zip(&back) {
            assert_eq!(a.species, b.species);
            for (x, y) in a.frac_coords.iter().flatten().zip(b.frac_coords.iter().flatten()) {
                assert!((x - y).abs() < 1e-11);
            }
        }
        let pairs: Vec<_> = crystals.iter().map(|c| (c.clone(), c.clone())).collect();
        write_pairs(&path, &pairs).unwrap();
        assert_eq!(read_pairs::<f64>(&path).unwrap().len(), 20);
    }

    #[test]
    fn bad_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "\n{\"species\": 3}\n").unwrap();
        match read_crystals::<f64>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
