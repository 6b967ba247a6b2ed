use crate::crystal::Composition;

/// Charge neutrality under some assignment of one common oxidation state
/// per element. Single-element compositions are valid; an element with no
/// listed states makes a multi-element composition invalid.
pub fn compositional_validity(comp: &Composition) -> bool {
    if comp.n_ary() <= 1 {
        return true;
    }
    let entries: Vec<(i64, &[i32])> = comp.0.iter().map(|(e, &k)| (k as i64, e.oxidation_states())).collect();
    if let Some((e, _)) = comp.0.iter().find(|(e, _)| e.oxidation_states().is_empty()) {
        log::debug!("{} has no common oxidation states; {} counted invalid", e.symbol(), comp);
        return false;
    }
    fn search(entries: &[(i64, &[i32])], charge: i64) -> bool {
        match entries.split_first() {
            None => charge == 0,
            Some(((count, states), rest)) => states.iter().any(|&s| search(rest, charge + count * s as i64)),
        }
    }
    search(&entries, 0)
}
