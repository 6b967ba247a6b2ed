//! Evaluation of generated crystals: validity, coverage, distribution
//! distances, toy-potential relaxation, matching, uniqueness and novelty.
//!
//! Every stability-style quantity here comes from a soft-sphere toy
//! potential and is NOT DFT.

pub mod coverage;
pub mod fingerprint;
pub mod matcher;
pub mod novelty;
pub mod relax;
pub mod validity;
pub mod wasserstein;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use coverage::{calibrate_thresholds, coverage, CoverageThresholds, Fingerprints};
pub use fingerprint::{composition_fingerprint, structure_fingerprint};
pub use matcher::{structure_match, MatchResult, MatchTolerance};
pub use novelty::{uniqueness_and_novelty, Novelty};
pub use relax::{toy_energy, toy_relax, RelaxConfig, RelaxResult};
pub use validity::compositional_validity;
pub use wasserstein::wasserstein_1d;

use crate::crystal::{structural_validity, Crystal};
use crate::error::Result;
use crate::real::Real;

/// Label carried by every report that contains proxy stability numbers.
pub const PROXY_LABEL: &str = "NOT DFT: stability, Δ-energy and S.U.N. use a toy soft-sphere potential";
/// Toy-energy units per atom. On the synthetic family relaxation energies
/// split into a low cluster (two-atom CsCl-type cells, below 0.24, 7-10% of
/// a holdout) and everything else above 1.7; this admits the whole low
/// cluster.
pub const DEFAULT_STABILITY_THRESHOLD: f64 = 0.25;

/// Threshold on relaxation energy per atom that a fraction `pass_rate` of
/// `holdout` falls strictly below: the midpoint between the two order
/// statistics straddling that fraction.
pub fn calibrate_stability_threshold<T: Real>(holdout: &[Crystal<T>], pass_rate: f64, relax: &RelaxConfig) -> Result<f64> {
    if holdout.is_empty() || !(0.0..=1.0).contains(&pass_rate) {
        return Err(crate::error::Error::Config("need a nonempty holdout and a pass rate in [0, 1]".into()));
    }
    let mut per_atom = holdout
        .par_iter()
        .map(|c| toy_relax(c, relax).map(|r| r.delta_energy_per_atom()))
        .collect::<Result<Vec<f64>>>()?;
    per_atom.sort_by(f64::total_cmp);
    let k = (pass_rate * per_atom.len() as f64).round() as usize;
    Ok(match k {
        0 => per_atom[0],
        k if k >= per_atom.len() => per_atom[per_atom.len() - 1] + 1.0,
        k => 0.5 * (per_atom[k - 1] + per_atom[k]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tolerance: MatchTolerance,
    pub relax: RelaxConfig,
    /// Proxy stability: relaxation energy per atom strictly below this.
    pub stability_threshold: f64,
    /// Calibrated on the test set when absent.
    pub thresholds: Option<CoverageThresholds>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance: MatchTolerance::default(),
            relax: RelaxConfig::default(),
            stability_threshold: DEFAULT_STABILITY_THRESHOLD,
            thresholds: None,
        }
    }
}

/// Per-sample evaluation. Relaxation fields are empty for structurally
/// invalid samples, which are never relaxed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub formula: String,
    pub n_atoms: usize,
    pub n_ary: usize,
    pub density: f64,
    pub structurally_valid: bool,
    pub compositionally_valid: bool,
    pub relax_steps: Option<usize>,
    pub delta_energy: Option<f64>,
    pub delta_energy_per_atom: Option<f64>,
    pub matches_relaxed: bool,
    pub rmsd_to_relaxed: Option<f64>,
    pub class: usize,
    pub representative: bool,
    pub novel: bool,
    pub proxy_stable: bool,
    pub proxy_sun: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub n_generated: usize,
    pub structural_validity_rate: f64,
    pub compositional_validity_rate: f64,
    pub coverage_recall: f64,
    pub coverage_precision: f64,
    pub coverage_thresholds: CoverageThresholds,
    pub wdist_density: f64,
    pub wdist_nel: f64,
    /// Number of distinct elements -> sample count.
    pub nary_histogram: BTreeMap<usize, usize>,
    /// Fraction of relaxed samples that still match their unrelaxed form.
    pub match_rate: f64,
    /// Mean RMSD in Å over matched relaxations.
    pub mean_rmsd: Option<f64>,
    pub mean_delta_energy: Option<f64>,
    pub mean_relax_steps: Option<f64>,
    pub uniqueness_rate: f64,
    pub novelty_rate: f64,
    pub stability_threshold: f64,
    pub proxy_stability_rate: f64,
    pub proxy_sun_rate: f64,
}

/// Distribution-level results that per-sample records cannot carry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetComparison {
    pub coverage_recall: f64,
    pub coverage_precision: f64,
    pub thresholds: CoverageThresholds,
    pub wdist_density: f64,
    pub wdist_nel: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn rate(records: &[SampleRecord], pred: impl Fn(&SampleRecord) -> bool) -> f64 {
    records.iter().filter(|r| pred(r)).count() as f64 / records.len().max(1) as f64
}

/// Builds the report from per-sample records plus set-level comparisons.
pub fn aggregate(records: &[SampleRecord], set: &SetComparison, stability_threshold: f64) -> MetricsReport {
    let mut nary_histogram = BTreeMap::new();
    for r in records {
        *nary_histogram.entry(r.n_ary).or_insert(0) += 1;
    }
    let n_classes = records.iter().filter(|r| r.representative).count();
    let relaxed: Vec<&SampleRecord> = records.iter().filter(|r| r.relax_steps.is_some()).collect();
    MetricsReport {
        label: PROXY_LABEL.to_string(),
        n_generated: records.len(),
        structural_validity_rate: rate(records, |r| r.structurally_valid),
        compositional_validity_rate: rate(records, |r| r.compositionally_valid),
        coverage_recall: set.coverage_recall,
        coverage_precision: set.coverage_precision,
        coverage_thresholds: set.thresholds,
        wdist_density: set.wdist_density,
        wdist_nel: set.wdist_nel,
        nary_histogram,
        match_rate: relaxed.iter().filter(|r| r.matches_relaxed).count() as f64 / relaxed.len().max(1) as f64,
        mean_rmsd: mean(records.iter().filter_map(|r| r.rmsd_to_relaxed)),
        mean_delta_energy: mean(records.iter().filter_map(|r| r.delta_energy)),
        mean_relax_steps: mean(records.iter().filter_map(|r| r.relax_steps.map(|s| s as f64))),
        uniqueness_rate: n_classes as f64 / records.len().max(1) as f64,
        novelty_rate: records.iter().filter(|r| r.representative && r.novel).count() as f64 / n_classes.max(1) as f64,
        stability_threshold,
        proxy_stability_rate: rate(records, |r| r.proxy_stable),
        proxy_sun_rate: rate(records, |r| r.proxy_sun),
    }
}

/// Distances between the generated and reference sets.
pub fn compare_sets<T: Real>(
    generated: &[Crystal<T>],
    reference: &[Crystal<T>],
    thresholds: Option<CoverageThresholds>,
) -> Result<SetComparison> {
    let gen_fp = Fingerprints::of(generated);
    let ref_fp = Fingerprints::of(reference);
    let thresholds = match thresholds {
        Some(t) => t,
        None => calibrate_thresholds(&ref_fp)?,
    };
    let (coverage_recall, coverage_precision) = coverage(&gen_fp, &ref_fp, &thresholds)?;
    let density = |cs: &[Crystal<T>]| cs.iter().map(|c| c.density()).collect::<Vec<_>>();
    let nel = |cs: &[Crystal<T>]| cs.iter().map(|c| c.n_ary() as f64).collect::<Vec<_>>();
    Ok(SetComparison {
        coverage_recall,
        coverage_precision,
        thresholds,
        wdist_density: wasserstein_1d(&density(generated), &density(reference))?,
        wdist_nel: wasserstein_1d(&nel(generated), &nel(reference))?,
    })
}

/// Evaluates generated crystals against a test set (coverage, distribution
/// distances) and a training set (novelty).
pub fn evaluate<T: Real>(
    generated: &[Crystal<T>],
    test: &[Crystal<T>],
    training: &[Crystal<T>],
    config: &EvalConfig,
) -> Result<(MetricsReport, Vec<SampleRecord>)> {
    let set = compare_sets(generated, test, config.thresholds)?;
    let novelty = uniqueness_and_novelty(generated, training, &config.tolerance);
    let records: Vec<SampleRecord> = generated
        .par_iter()
        .enumerate()
        .map(|(index, c)| {
            let structurally_valid = structural_validity(c);
            let relaxed = if structurally_valid { toy_relax(c, &config.relax).ok() } else { None };
            let matched = relaxed.as_ref().and_then(|r| structure_match(&c.cast::<f64>(), &r.relaxed, &config.tolerance));
            let per_atom = relaxed.as_ref().map(|r| r.delta_energy_per_atom());
            let proxy_stable = per_atom.is_some_and(|e| e < config.stability_threshold) && c.n_ary() >= 2;
            let representative = novelty.is_representative(index);
            let novel = novelty.is_novel(index);
            SampleRecord {
                index,
                formula: c.composition().key(),
                n_atoms: c.n_atoms(),
                n_ary: c.n_ary(),
                density: c.density(),
                structurally_valid,
                compositionally_valid: compositional_validity(&c.composition()),
                relax_steps: relaxed.as_ref().map(|r| r.steps),
                delta_energy: relaxed.as_ref().map(|r| r.delta_energy()),
                delta_energy_per_atom: per_atom,
                matches_relaxed: matched.is_some(),
                rmsd_to_relaxed: matched.map(|m| m.rmsd),
                class: novelty.class_of[index],
                representative,
                novel,
                proxy_stable,
                proxy_sun: proxy_stable && representative && novel,
            }
        })
        .collect();
    Ok((aggregate(&records, &set, config.stability_threshold), records))
}

pub fn write_records_jsonl(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Histogram of relaxation energy per atom in `n_bins` equal bins up to the
/// largest value, as CSV rows `bin_lo,bin_hi,count`.
pub fn energy_histogram_csv(records: &[SampleRecord], n_bins: usize) -> String {
    let values: Vec<f64> = records.iter().filter_map(|r| r.delta_energy_per_atom).collect();
    let hi = values.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let width = hi / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for v in values {
        counts[((v / width) as usize).min(n_bins - 1)] += 1;
    }
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (k, c) in counts.iter().enumerate() {
        s += &format!("{},{},{}\n", k as f64 * width, (k + 1) as f64 * width, c);
    }
    s
}

pub fn nary_histogram_csv(report: &MetricsReport) -> String {
    let mut s = String::from("n_elements,count\n");
    for (k, c) in &report.nary_histogram {
        s += &format!("{k},{c}\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{synthetic_family, Perturbation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn family(n: usize, seed: u64) -> Vec<Crystal<f64>> {
        synthetic_family(n, &Perturbation::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn self_evaluation_and_record_recomputation() {
        let test = family(12, 1);
        let train = family(12, 2);
        let config = EvalConfig { relax: RelaxConfig { max_steps: 20, ..Default::default() }, ..Default::default() };
        let (report, records) = evaluate(&test, &test, &train, &config).unwrap();
        assert_eq!((report.coverage_recall, report.coverage_precision), (1.0, 1.0));
        assert_eq!(report.wdist_density, 0.0);
        assert_eq!(report.wdist_nel, 0.0);
        let own = test.iter().filter(|c| structural_validity(*c)).count() as f64 / 12.0;
        assert_eq!(report.structural_validity_rate, own);
        assert_eq!(report.nary_histogram.values().sum::<usize>(), 12);
        assert!(report.label.contains("NOT DFT"));
        let set = SetComparison {
            coverage_recall: report.coverage_recall,
            coverage_precision: report.coverage_precision,
            thresholds: report.coverage_thresholds,
            wdist_density: report.wdist_density,
            wdist_nel: report.wdist_nel,
        };
        assert_eq!(aggregate(&records, &set, report.stability_threshold), report);
        // records survive serialization
        let back: Vec<SampleRecord> =
            records.iter().map(|r| serde_json::from_str(&serde_json::to_string(r).unwrap()).unwrap()).collect();
        assert_eq!(aggregate(&back, &set, report.stability_threshold), report);
    }

    #[test]
    fn disjoint_sets_have_zero_coverage() {
        let a: Vec<Crystal<f64>> = family(40, 3).into_iter().filter(|c| c.n_atoms() == 8).collect();
        let b: Vec<Crystal<f64>> = family(40, 4).into_iter().filter(|c| c.n_atoms() == 2).collect();
        let set = compare_sets(&a, &b, None).unwrap();
        assert_eq!((set.coverage_recall, set.coverage_precision), (0.0, 0.0));
    }
}
