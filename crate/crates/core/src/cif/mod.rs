//! Minimal CIF support: enough to read database records (cell, explicit
//! symmetry operations, atom sites) and to write P1 files.

mod reader;
pub mod symop;

use std::path::Path;

pub use symop::{parse_symop, render_symop, SymmetryOp};

use crate::crystal::{wrap_delta, wrap_vec, Crystal, LatticeParams};
use crate::elements::Element;
use crate::error::{Error, Result};
use crate::io::format_float;
use crate::linalg::Vec3;
use crate::real::Real;
use reader::{number, parse_block, Token};

/// Images of one site closer than this (fractional, per axis) are merged.
pub const DEDUP_TOL: f64 = 1e-3;
const OCCUPANCY_TOL: f64 = 1e-6;

const CELL_TAGS: [&str; 6] =
    ["_cell_length_a", "_cell_length_b", "_cell_length_c", "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma"];
const SYMOP_TAGS: [&str; 2] = ["_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz"];

fn missing(tag: &str) -> Error {
    Error::Cif(format!("missing mandatory tag {tag}"))
}

fn at(t: &Token, e: Error) -> Error {
    Error::Parse { line: t.line, column: t.column, reason: e.to_string() }
}

/// Element from a type symbol such as `Fe`, `Fe2+` or `O2-`.
fn element_from_symbol(raw: &str) -> Option<Element> {
    let letters: String = raw.chars().take_while(|c| c.is_ascii_alphabetic()).take(2).collect();
    if letters.is_empty() {
        return None;
    }
    let mut cs = letters.chars();
    let first = cs.next()?.to_ascii_uppercase();
    let two = cs.next().map(|c| format!("{first}{}", c.to_ascii_lowercase()));
    two.and_then(|s| Element::from_symbol(&s)).or_else(|| Element::from_symbol(&first.to_string()))
}

fn periodic_close(a: &Vec3<f64>, b: &Vec3<f64>) -> bool {
    (0..3).all(|k| wrap_delta(a[k] - b[k]).abs() < DEDUP_TOL)
}

/// Reads the first data block: cell, atom sites, and explicit symmetry
/// operations (identity when absent). Every site is expanded by all
/// operations and images of the same site within 1e-3 are merged.
pub fn parse_cif(text: &str) -> Result<Crystal<f64>> {
    let block = parse_block(text)?;
    let mut cell = [0.0; 6];
    for (k, tag) in CELL_TAGS.iter().enumerate() {
        let t = block.get(tag).ok_or_else(|| missing(tag))?;
        cell[k] = number(t)?;
    }
    let lattice = LatticeParams::new([cell[0], cell[1], cell[2]], [cell[3], cell[4], cell[5]])?;

    let ops = match SYMOP_TAGS.iter().find_map(|tag| block.find_loop(tag).map(|l| (l, *tag))) {
        Some((lp, tag)) => {
            let col = lp.column(tag).unwrap();
            lp.rows.iter().map(|row| parse_symop(&row[col].text).map_err(|e| at(&row[col], e))).collect::<Result<Vec<_>>>()?
        }
        None => match SYMOP_TAGS.iter().find_map(|tag| block.get(tag)) {
            Some(t) => vec![parse_symop(&t.text).map_err(|e| at(t, e))?],
            None => vec![SymmetryOp::identity()],
        },
    };

    let sites = block.find_loop("_atom_site_fract_x").ok_or_else(|| missing("_atom_site_fract_x"))?;
    let col = |tag: &str| sites.column(tag).ok_or_else(|| missing(tag));
    let (cx, cy, cz) = (col("_atom_site_fract_x")?, col("_atom_site_fract_y")?, col("_atom_site_fract_z")?);
    let species_col = match (sites.column("_atom_site_type_symbol"), sites.column("_atom_site_label")) {
        (Some(c), _) => c,
        (None, Some(c)) => {
            log::warn!("no _atom_site_type_symbol; reading elements from _atom_site_label");
            c
        }
        (None, None) => return Err(missing("_atom_site_type_symbol")),
    };
    let occ_col = sites.column("_atom_site_occupancy");
    for tag in &sites.tags {
        if tag.starts_with("_atom_site_aniso") || tag.starts_with("_atom_site_u_iso") || tag.starts_with("_atom_site_b_iso") {
            log::debug!("ignoring {tag}");
        }
    }

    let mut species = Vec::new();
    let mut coords = Vec::new();
    for row in &sites.rows {
        let t = &row[species_col];
        let el = element_from_symbol(&t.text).ok_or_else(|| at(t, Error::UnknownElement(t.text.clone())))?;
        if let Some(c) = occ_col {
            let occ = number(&row[c])?;
            if (occ - 1.0).abs() > OCCUPANCY_TOL {
                return Err(at(&row[c], Error::Cif(format!("partial occupancy {occ} is not supported"))));
            }
        }
        let f = [number(&row[cx])?, number(&row[cy])?, number(&row[cz])?];
        let mut orbit: Vec<Vec3<f64>> = Vec::new();
        for op in &ops {
            let g = wrap_vec(&op.apply(&f));
            if !orbit.iter().any(|h| periodic_close(h, &g)) {
                orbit.push(g);
            }
        }
        for g in orbit {
            species.push(el);
            coords.push(g);
        }
    }
    if species.is_empty() {
        return Err(Error::Cif("atom site loop is empty".into()));
    }
    Crystal::new(species, coords, lattice)
}

/// P1 CIF with one site per atom.
pub fn write_cif<T: Real>(crystal: &Crystal<T>) -> String {
    let c = crystal.cast::<f64>();
    let formula = c.composition().key();
    let mut s = format!("data_{formula}\n");
    s += "_symmetry_space_group_name_H-M   'P 1'\n";
    let names = ["a", "b", "c"];
    for k in 0..3 {
        s += &format!("_cell_length_{}   {}\n", names[k], format_float(c.lattice.lengths[k]));
    }
    for (k, name) in ["alpha", "beta", "gamma"].iter().enumerate() {
        s += &format!("_cell_angle_{name}   {}\n", format_float(c.lattice.angles[k]));
    }
    s += "_symmetry_Int_Tables_number   1\n";
    s += &format!("_chemical_formula_sum   '{formula}'\n");
    s += "loop_\n _symmetry_equiv_pos_site_id\n _symmetry_equiv_pos_as_xyz\n  1  'x, y, z'\n";
    s += "loop_\n _atom_site_type_symbol\n _atom_site_label\n _atom_site_fract_x\n _atom_site_fract_y\n _atom_site_fract_z\n _atom_site_occupancy\n";
    for (i, (e, f)) in c.species.iter().zip(&c.frac_coords).enumerate() {
        s += &format!(
            "  {}  {}{}  {}  {}  {}  1\n",
            e.symbol(),
            e.symbol(),
            i,
            format_float(f[0]),
            format_float(f[1]),
            format_float(f[2])
        );
    }
    s
}

/// One parsed row of a database CSV.
#[derive(Debug)]
pub struct CsvRecord {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub id: Option<String>,
    pub crystal: Result<Crystal<f64>>,
}

/// Reads a CSV with a `cif` column (case-insensitive) and an optional
/// `material_id` column; one result per row.
pub fn read_cif_csv(path: &Path) -> Result<Vec<CsvRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let cif_col = find("cif").ok_or_else(|| Error::Cif(format!("{}: no `cif` column", path.display())))?;
    let id_col = find("material_id");
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                out.push(CsvRecord { row, id: None, crystal: Err(e.into()) });
                continue;
            }
        };
        let id = id_col.and_then(|c| rec.get(c)).map(str::to_string);
        let crystal = match rec.get(cif_col) {
            Some(text) => parse_cif(text),
            None => Err(Error::Cif(format!("row {row} has no cif field"))),
        };
        out.push(CsvRecord { row, id, crystal });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::torus_log;
    use crate::synthetic::PROTOTYPES;
    use crate::testing::{el, random_crystal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: &Crystal<f64>, b: &Crystal<f64>, tol: f64) {
        assert_eq!(a.species, b.species);
        for k in 0..3 {
            assert!((a.lattice.lengths[k] - b.lattice.lengths[k]).abs() < tol);
            assert!((a.lattice.angles[k] - b.lattice.angles[k]).abs() < tol);
        }
        for (f, g) in a.frac_coords.iter().zip(&b.frac_coords) {
            for k in 0..3 {
                assert!(torus_log(f[k], g[k]).abs() < tol);
            }
        }
    }

    const HEADER: &str = "data_t\n_cell_length_a 5.0\n_cell_length_b 5.0\n_cell_length_c 5.0\n\
        _cell_angle_alpha 90\n_cell_angle_beta 90\n_cell_angle_gamma 90\n";

    #[test]
    fn p1_sites_and_round_trip() {
        let text = format!("{HEADER}loop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\nNa 0 0 0\nCl 0.5 0.5 0.5(1)\n");
        let c = parse_cif(&text).unwrap();
        assert_eq!(c.species, vec![el("Na"), el("Cl")]);
        let nacl = PROTOTYPES[0].ideal();
        let back = parse_cif(&write_cif(&nacl)).unwrap();
        assert_close(&nacl, &back, 1e-6);
        let written = write_cif(&nacl);
        for tag in CELL_TAGS {
            assert_eq!(written.matches(tag).count(), 1, "{tag}");
        }
    }

    #[test]
    fn random_round_trips_preserve_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.random_range(1..12);
            let c = random_crystal(&mut rng, n);
            let back = parse_cif(&write_cif(&c)).unwrap();
            assert_eq!(back.n_atoms(), n);
            assert_close(&c, &back, 1e-6);
        }
    }

    #[test]
    fn symmetry_expansion_and_special_positions() {
        let ops = "loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n'-x, -y, z+1/2'\n";
        let general = format!("{HEADER}{ops}loop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\nSi 0.1 0.2 0.3\n");
        let c = parse_cif(&general).unwrap();
        assert_eq!(c.n_atoms(), 2);
        let image = c.frac_coords[1];
        for (x, y) in image.iter().zip([0.9, 0.8, 0.8]) {
            assert!((x - y).abs() < 1e-12);
        }
        // a site on the two-fold axis is its own image
        let special = format!("{HEADER}loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n'-x, -y, z'\nloop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\nSi 0.5 0 0.3\n");
        assert_eq!(parse_cif(&special).unwrap().n_atoms(), 1);
    }

    #[test]
    fn structured_errors() {
        let no_gamma = HEADER.replace("_cell_angle_gamma 90\n", "");
        let text = format!("{no_gamma}loop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\nNa 0 0 0\n");
        match parse_cif(&text) {
            Err(Error::Cif(m)) => assert!(m.contains("_cell_angle_gamma"), "{m}"),
            other => panic!("{other:?}"),
        }
        let partial = format!("{HEADER}loop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n_atom_site_occupancy\nNa 0 0 0 0.5\n");
        assert!(matches!(parse_cif(&partial), Err(Error::Parse { .. })));
        let bad_op = format!("{HEADER}loop_\n_symmetry_equiv_pos_as_xyz\n'x, y*z, z'\nloop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\nNa 0 0 0\n");
        assert!(matches!(parse_cif(&bad_op), Err(Error::Parse { .. })));
    }

    #[test]
    fn type_symbols_with_charges() {
        assert_eq!(element_from_symbol("Fe2+"), Some(el("Fe")));
        assert_eq!(element_from_symbol("O2-"), Some(el("O")));
        assert_eq!(element_from_symbol("CL"), Some(el("Cl")));
        assert_eq!(element_from_symbol("Na1"), Some(el("Na")));
        assert_eq!(element_from_symbol("2"), None);
    }

    #[test]
    fn csv_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.csv");
        let good = write_cif(&PROTOTYPES[6].ideal());
        let mut w = csv::Writer::from_path(&path).unwrap();
        w.write_record(["material_id", "cif"]).unwrap();
        w.write_record(["mp-1", good.as_str()]).unwrap();
        w.write_record(["mp-2", "data_broken\n_cell_length_a 1\n"]).unwrap();
        w.flush().unwrap();
        let rows = read_cif_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].id.as_deref(), Some("mp-1"));
        assert_eq!(rows[0].crystal.as_ref().unwrap().n_atoms(), 2);
        assert!(rows[1].crystal.is_err());
    }
}
