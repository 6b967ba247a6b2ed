use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fingerprint::{composition_fingerprint, l2_distance, structure_fingerprint};
use crate::crystal::Crystal;
use crate::error::{Error, Result};
use crate::real::Real;

/// Quantile of leave-one-out nearest-neighbour distances used as threshold.
pub const COVERAGE_QUANTILE: f64 = 0.99;

#[derive(Clone, Debug, Default)]
pub struct Fingerprints {
    pub structural: Vec<Vec<f64>>,
    pub compositional: Vec<Vec<f64>>,
}

impl Fingerprints {
    pub fn of<T: Real>(crystals: &[Crystal<T>]) -> Self {
        let (structural, compositional) = crystals
            .par_iter()
            .map(|c| (structure_fingerprint(c), composition_fingerprint(c)))
            .unzip();
        Fingerprints { structural, compositional }
    }

    pub fn len(&self) -> usize {
        self.structural.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structural.is_empty()
    }

    fn within(&self, i: usize, other: &Fingerprints, j: usize, thr: &CoverageThresholds) -> bool {
        l2_distance(&self.structural[i], &other.structural[j]) <= thr.structural
            && l2_distance(&self.compositional[i], &other.compositional[j]) <= thr.compositional
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageThresholds {
    pub structural: f64,
    pub compositional: f64,
}

/// Nearest-rank quantile of `values` (q in (0, 1]).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}

fn loo_nearest(fps: &[Vec<f64>]) -> Vec<f64> {
    (0..fps.len())
        .into_par_iter()
        .map(|i| {
            (0..fps.len())
                .filter(|&j| j != i)
                .map(|j| l2_distance(&fps[i], &fps[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Thresholds at the 0.99 quantile of leave-one-out nearest-neighbour
/// distances within the reference set, one per fingerprint.
pub fn calibrate_thresholds(reference: &Fingerprints) -> Result<CoverageThresholds> {
    if reference.len() < 2 {
        return Err(Error::Empty("reference set needs at least two structures"));
    }
    Ok(CoverageThresholds {
        structural: quantile(&loo_nearest(&reference.structural), COVERAGE_QUANTILE)?,
        compositional: quantile(&loo_nearest(&reference.compositional), COVERAGE_QUANTILE)?,
    })
}

/// (recall, precision): the fraction of reference structures with a
/// generated structure within both thresholds, and the converse.
pub fn coverage(generated: &Fingerprints, reference: &Fingerprints, thr: &CoverageThresholds) -> Result<(f64, f64)> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Empty("coverage input"));
    }
    let covered = |a: &Fingerprints, b: &Fingerprints| {
        (0..a.len()).into_par_iter().filter(|&i| (0..b.len()).any(|j| a.within(i, b, j, thr))).count() as f64
            / a.len() as f64
    };
    Ok((covered(reference, generated), covered(generated, reference)))
}
