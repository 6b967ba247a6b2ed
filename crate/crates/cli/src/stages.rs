//! The pipeline stages. Subcommands call one stage each; `pipeline` chains
//! them and skips any stage whose output was already produced by the same
//! configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crystalflow::base::{in_flow_domain, BaseKind, BaseModel, BaseSampler, CompositionPool, ExternalSampleSource, DEFAULT_SMOOTHING};
use crystalflow::cif::{parse_cif, read_cif_csv};
use crystalflow::io::{crystal_to_json, read_crystals, read_pairs, read_records, write_crystals, write_pairs};
use crystalflow::metrics::{
    energy_histogram_csv, evaluate, nary_histogram_csv, structure_match, toy_relax, write_records_jsonl, EvalConfig, MatchTolerance,
    RelaxConfig, DEFAULT_STABILITY_THRESHOLD,
};
use crystalflow::net::{Checkpoint, NetConfig, VelocityNet};
use crystalflow::niggli::reduce_crystal;
use crystalflow::sampling::{generate, SampleConfig};
use crystalflow::synthetic::{synthetic_family, Perturbation};
use crystalflow::training::{build_pair_dataset, fit_standardization, flow_pairs, train, LossWeights, PairDataset, TrainConfig};
use crystalflow::Crystal64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{companion, input_hash, is_current, read_meta, write_meta, Meta};
use crate::config::{stage_seed, Resolver};
use crate::error::CliError;

/// Settings every stage records: the run seed and the network preset.
#[derive(Clone, Debug)]
pub struct Globals {
    pub seed: u64,
    pub preset: String,
    pub force: bool,
}

impl Globals {
    fn record(&self, r: &mut Resolver) {
        r.record("seed", self.seed);
        r.record("preset", &self.preset);
    }

    fn rng(&self, stage: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(stage_seed(self.seed, stage))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn load_crystals(path: &Path) -> Result<Vec<Crystal64>> {
    read_crystals(path).with_context(|| format!("reading {}", path.display()))
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestFailure {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestSummary {
    pub total: usize,
    pub ok: usize,
    pub failed: usize,
    pub failures: Vec<IngestFailure>,
}

/// CSV (`cif` column), single CIF files and crystal JSONL; every accepted
/// record is Niggli-reduced and must have angles in [60, 120].
pub fn ingest(inputs: &[PathBuf], out: &Path, g: &Globals, r: &mut Resolver) -> Result<IngestSummary> {
    g.record(r);
    let mut lineage = BTreeMap::new();
    for (k, p) in inputs.iter().enumerate() {
        lineage.insert(format!("input{k}"), input_hash(p)?);
    }
    let mut parsed: Vec<(String, crystalflow::Result<Crystal64>)> = Vec::new();
    for path in inputs {
        let name = path.display().to_string();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        match ext.as_str() {
            "csv" => {
                for rec in read_cif_csv(path).with_context(|| format!("reading {name}"))? {
                    let id = rec.id.map(|id| format!(" ({id})")).unwrap_or_default();
                    parsed.push((format!("{name}:row {}{id}", rec.row), rec.crystal));
                }
            }
            "cif" => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {name}"))?;
                parsed.push((name, parse_cif(&text)));
            }
            _ => {
                for (line, rec) in read_records(path).with_context(|| format!("reading {name}"))? {
                    parsed.push((format!("{name}:{line}"), rec.and_then(|r| r.to_crystal())));
                }
            }
        }
    }
    let mut kept = Vec::new();
    let mut failures = Vec::new();
    for (source, result) in parsed {
        let canonical = result.and_then(|c| reduce_crystal(&c));
        match canonical {
            Ok(c) if in_flow_domain(&c) => kept.push(c),
            Ok(c) => failures.push(IngestFailure { source, reason: format!("reduced angles {:?} outside [60, 120]", c.lattice.angles) }),
            Err(e) => failures.push(IngestFailure { source, reason: e.to_string() }),
        }
    }
    for f in &failures {
        log::warn!("{}: {}", f.source, f.reason);
    }
    let summary = IngestSummary { total: kept.len() + failures.len(), ok: kept.len(), failed: failures.len(), failures };
    if kept.is_empty() {
        return Err(CliError::NothingIngested { failed: summary.failed }.into());
    }
    ensure_parent(out)?;
    write_crystals(out, &kept)?;
    write_json(&companion(out, "summary.json"), &summary)?;
    write_meta(out, &Meta::new("ingest", r.resolved.clone(), lineage))?;
    Ok(summary)
}

// ---------------------------------------------------------------- synth

pub fn synth(out: &Path, n: Option<usize>, role: &str, g: &Globals, r: &mut Resolver) -> Result<Meta> {
    g.record(r);
    let key = format!("data.n_{role}");
    let n = r.get(&key, n, if role == "test" { 500 } else { 2000 })?;
    let meta = Meta::new("synth", r.resolved.clone(), BTreeMap::new());
    if !g.force && is_current(out, &meta) {
        log::info!("{} is current, skipping", out.display());
        return Ok(meta);
    }
    let family = synthetic_family(n, &Perturbation::default(), &mut g.rng(&format!("synth-{role}")))?;
    ensure_parent(out)?;
    write_crystals(out, &family)?;
    write_meta(out, &meta)?;
    Ok(meta)
}

// ---------------------------------------------------------------- fit-base

/// On-disk fitted base: the model plus the hash of the run that made it.
#[derive(Serialize, Deserialize)]
pub struct BaseFile {
    pub config_hash: String,
    pub model: BaseModel,
}

#[derive(Clone, Debug, Default)]
pub struct FitBaseArgs {
    pub kind: Option<String>,
    pub smoothing: Option<f64>,
}

pub fn fit_base(data: &Path, out: &Path, a: &FitBaseArgs, g: &Globals, r: &mut Resolver) -> Result<Meta> {
    g.record(r);
    let kind: BaseKind = r.get("base.kind", a.kind.clone(), "quantized".into())?.parse()?;
    let smoothing = r.get("base.smoothing", a.smoothing, DEFAULT_SMOOTHING)?;
    let meta = Meta::new("fit-base", r.resolved.clone(), [("data".to_string(), input_hash(data)?)].into());
    if !g.force && is_current(out, &meta) {
        log::info!("{} is current, skipping", out.display());
        return Ok(meta);
    }
    let model = BaseModel::fit(&kind, &load_crystals(data)?, smoothing)?;
    ensure_parent(out)?;
    write_json(out, &BaseFile { config_hash: meta.config_hash.clone(), model })?;
    write_meta(out, &meta)?;
    Ok(meta)
}

/// A fitted base file or `external:<jsonl>`, with its lineage hash.
pub enum LoadedBase {
    Fitted(BaseModel),
    External(ExternalSampleSource),
}

impl LoadedBase {
    pub fn sampler(&self) -> &dyn BaseSampler<f64> {
        match self {
            LoadedBase::Fitted(m) => m,
            LoadedBase::External(e) => e,
        }
    }

    pub fn compositions(&self) -> CompositionPool {
        match self {
            LoadedBase::Fitted(m) => m.compositions().clone(),
            LoadedBase::External(e) => e.compositions(),
        }
    }
}

pub fn load_base(arg: &str) -> Result<(LoadedBase, String)> {
    if let Some(path) = arg.strip_prefix("external:") {
        let path = Path::new(path);
        let source = ExternalSampleSource::load(path, Default::default()).with_context(|| format!("loading {}", path.display()))?;
        log::info!("external samples: {} accepted, {} rejected", source.n_accepted(), source.n_rejected());
        return Ok((LoadedBase::External(source), input_hash(path)?));
    }
    let text = fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
    let file: BaseFile = serde_json::from_str(&text).with_context(|| format!("parsing base model {arg}"))?;
    Ok((LoadedBase::Fitted(file.model), file.config_hash))
}

// ---------------------------------------------------------------- build-pairs

#[derive(Clone, Debug, Default)]
pub struct PairArgs {
    pub n: Option<usize>,
    pub noise: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairStats {
    pub n_pairs: usize,
    pub base: String,
    pub base_draws: usize,
    pub rejected_draws: usize,
    pub rejection_rate: f64,
}

pub fn build_pairs(data: &Path, base: &str, out: &Path, a: &PairArgs, g: &Globals, r: &mut Resolver) -> Result<Meta> {
    g.record(r);
    let n = r.get("pairs.n", a.n, 2000)?;
    let noise = r.get("pairs.noise", a.noise, 0.0)?;
    let (loaded, base_hash) = load_base(base)?;
    let lineage = [("data".to_string(), input_hash(data)?), ("base".to_string(), base_hash)].into();
    let meta = Meta::new("build-pairs", r.resolved.clone(), lineage);
    if !g.force && is_current(out, &meta) {
        log::info!("{} is current, skipping", out.display());
        return Ok(meta);
    }
    let dataset = load_crystals(data)?;
    let pairs = build_pair_dataset(&dataset, loaded.sampler(), n, noise, &mut g.rng("build-pairs"))?;
    ensure_parent(out)?;
    write_pairs(out, &pairs.pairs)?;
    let stats = PairStats {
        n_pairs: pairs.len(),
        base: pairs.base.clone(),
        base_draws: pairs.base_draws,
        rejected_draws: pairs.rejected_draws,
        rejection_rate: pairs.rejection_rate(),
    };
    write_json(&companion(out, "stats.json"), &stats)?;
    write_meta(out, &meta)?;
    Ok(meta)
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub weight_decay: Option<f64>,
    pub patience: Option<usize>,
    pub coord_weight: Option<f64>,
    pub lattice_weight: Option<f64>,
    pub val_fraction: Option<f64>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    initial_loss: f64,
    final_loss: f64,
    loss_reduction: f64,
    best_epoch: usize,
    stopped_early: bool,
    n_train: usize,
    n_val: usize,
    history: &'a [crystalflow::training::EpochRecord],
}

pub fn train_stage(pairs_path: &Path, out: &Path, a: &TrainArgs, g: &Globals, r: &mut Resolver) -> Result<Meta> {
    g.record(r);
    let d = TrainConfig::default();
    let config = TrainConfig {
        epochs: r.get("train.epochs", a.epochs, d.epochs)?,
        learning_rate: r.get("train.lr", a.lr, d.learning_rate)?,
        batch_size: r.get("train.batch_size", a.batch_size, d.batch_size)?,
        weight_decay: r.get("train.weight_decay", a.weight_decay, d.weight_decay)?,
        patience: r.get("train.patience", a.patience, d.patience)?,
        weights: LossWeights {
            coords: r.get("train.coord_weight", a.coord_weight, d.weights.coords)?,
            lattice: r.get("train.lattice_weight", a.lattice_weight, d.weights.lattice)?,
        },
        val_fraction: r.get("train.val_fraction", a.val_fraction, d.val_fraction)?,
        seed: stage_seed(g.seed, "train"),
    };
    let net_config = NetConfig::preset(&g.preset)?;
    let pairs_meta = read_meta(pairs_path)?;
    let base_hash = pairs_meta.lineage.get("base").cloned().unwrap_or_default();
    let lineage = [("pairs".to_string(), pairs_meta.config_hash.clone()), ("base".to_string(), base_hash.clone())].into();
    let meta = Meta::new("train", r.resolved.clone(), lineage);
    if !g.force && is_current(out, &meta) {
        log::info!("{} is current, skipping", out.display());
        return Ok(meta);
    }
    let pairs = read_pairs::<f64>(pairs_path).with_context(|| format!("reading {}", pairs_path.display()))?;
    let data = PairDataset { pairs, base: String::new(), base_draws: 0, rejected_draws: 0 };
    let stats = fit_standardization(&flow_pairs(&data)?);
    let net = VelocityNet::new(net_config, stats, &mut g.rng("init"))?;
    log::info!("training {} parameters on {} pairs", net.n_params(), data.len());
    let outcome = train(&config, &data, net)?;
    let ckpt_meta = [("config_hash".to_string(), meta.config_hash.clone()), ("base_hash".to_string(), base_hash)].into();
    ensure_parent(out)?;
    Checkpoint::from_net(&outcome.net, ckpt_meta).save(out)?;
    let summary = TrainSummary {
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss,
        loss_reduction: outcome.loss_reduction(),
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        n_train: outcome.n_train,
        n_val: outcome.n_val,
        history: &outcome.history,
    };
    write_json(&companion(out, "history.json"), &summary)?;
    write_meta(out, &meta)?;
    Ok(meta)
}

fn check_lineage(what: &str, expected: &str, found: &str, force: bool) -> Result<()> {
    if expected == found {
        return Ok(());
    }
    let err = CliError::LineageMismatch { what: what.to_string(), expected: expected.to_string(), found: found.to_string() };
    if force {
        log::warn!("{err}; continuing because of --force");
        Ok(())
    } else {
        Err(err.into())
    }
}

// ---------------------------------------------------------------- generate

#[derive(Clone, Debug, Default)]
pub struct GenerateArgs {
    pub n: Option<usize>,
    pub steps: Option<usize>,
    pub anneal: Option<f64>,
    pub noise: Option<f64>,
}

pub fn generate_stage(checkpoint: &Path, base: &str, out: &Path, a: &GenerateArgs, g: &Globals, r: &mut Resolver) -> Result<Meta> {
    g.record(r);
    let d = SampleConfig::default();
    let n = r.get("generate.n", a.n, 1000)?;
    let config = SampleConfig {
        steps: r.get("generate.steps", a.steps, d.steps)?,
        anneal: r.get("generate.anneal", a.anneal, d.anneal)?,
        noise: r.get("generate.noise", a.noise, d.noise)?,
        seed: stage_seed(g.seed, "generate"),
    };
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (loaded, base_hash) = load_base(base)?;
    let trained_on = ckpt.meta.get("base_hash").cloned().unwrap_or_default();
    check_lineage(&format!("checkpoint {}", checkpoint.display()), &base_hash, &trained_on, g.force)?;
    let ckpt_hash = ckpt.meta.get("config_hash").cloned().unwrap_or_else(|| "unknown".into());
    let lineage = [
        ("checkpoint".to_string(), ckpt_hash),
        ("base".to_string(), base_hash),
        ("checkpoint_base".to_string(), trained_on),
    ]
    .into();
    let meta = Meta::new("generate", r.resolved.clone(), lineage);
    if !g.force && is_current(out, &meta) {
        log::info!("{} is current, skipping", out.display());
        return Ok(meta);
    }
    let net: VelocityNet<f64> = ckpt.to_net()?;
    let (samples, stats) = generate(&net, loaded.sampler(), &loaded.compositions(), n, &config)?;
    let crystals: Vec<Crystal64> = samples.into_iter().filter_map(|s| s.crystal).collect();
    log::info!("generated {} of {} samples in {:.1}s", crystals.len(), n, stats.wall_time_s);
    ensure_parent(out)?;
    write_crystals(out, &crystals)?;
    write_json(&companion(out, "stats.json"), &stats)?;
    write_meta(out, &meta)?;
    Ok(meta)
}

// ---------------------------------------------------------------- evaluate

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub stability_threshold: Option<f64>,
    pub ltol: Option<f64>,
    pub stol: Option<f64>,
    pub angle_tol: Option<f64>,
}

fn tolerance(r: &mut Resolver, section: &str, ltol: Option<f64>, stol: Option<f64>, angle_tol: Option<f64>) -> Result<MatchTolerance> {
    let d = MatchTolerance::default();
    Ok(MatchTolerance {
        ltol: r.get(&format!("{section}.ltol"), ltol, d.ltol)?,
        stol: r.get(&format!("{section}.stol"), stol, d.stol)?,
        angle_tol: r.get(&format!("{section}.angle_tol"), angle_tol, d.angle_tol)?,
    })
}

pub fn evaluate_stage(generated: &Path, test: &Path, train_data: &Path, out_dir: &Path, a: &EvalArgs, g: &Globals, r: &mut Resolver) -> Result<Meta> {
    g.record(r);
    let config = EvalConfig {
        tolerance: tolerance(r, "evaluate", a.ltol, a.stol, a.angle_tol)?,
        stability_threshold: r.get("evaluate.stability_threshold", a.stability_threshold, DEFAULT_STABILITY_THRESHOLD)?,
        ..Default::default()
    };
    if let Ok(gen_meta) = read_meta(generated) {
        if let (Some(base), Some(trained_on)) = (gen_meta.lineage.get("base"), gen_meta.lineage.get("checkpoint_base")) {
            check_lineage(&format!("generations {}", generated.display()), base, trained_on, g.force)?;
        }
    }
    let lineage = [
        ("generated".to_string(), input_hash(generated)?),
        ("test".to_string(), input_hash(test)?),
        ("train".to_string(), input_hash(train_data)?),
    ]
    .into();
    let meta = Meta::new("evaluate", r.resolved.clone(), lineage);
    let report_path = out_dir.join("report.json");
    if !g.force && is_current(&report_path, &meta) {
        log::info!("{} is current, skipping", report_path.display());
        return Ok(meta);
    }
    let gen = load_crystals(generated)?;
    if gen.is_empty() {
        bail!("{} holds no generated crystals", generated.display());
    }
    let (report, records) = evaluate(&gen, &load_crystals(test)?, &load_crystals(train_data)?, &config)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_json(&report_path, &report)?;
    write_records_jsonl(&out_dir.join("samples.jsonl"), &records)?;
    fs::write(out_dir.join("energy_histogram.csv"), energy_histogram_csv(&records, 40))?;
    fs::write(out_dir.join("nary_histogram.csv"), nary_histogram_csv(&report))?;
    write_meta(&report_path, &meta)?;
    log::info!("{}", report.label);
    Ok(meta)
}

// ---------------------------------------------------------------- relax

#[derive(Serialize)]
struct RelaxLine<'a> {
    index: usize,
    initial_energy: f64,
    final_energy: f64,
    delta_energy_per_atom: f64,
    steps: usize,
    converged: bool,
    crystal: &'a serde_json::Value,
}

pub fn relax_stage(input: &Path, out: &Path, max_steps: Option<usize>, fixed_lengths: bool, g: &Globals, r: &mut Resolver) -> Result<Meta> {
    g.record(r);
    let d = RelaxConfig::default();
    let config = RelaxConfig {
        max_steps: r.get("relax.max_steps", max_steps, d.max_steps)?,
        relax_lengths: !r.get("relax.fixed_lengths", fixed_lengths.then_some(true), false)?,
        ..d
    };
    let meta = Meta::new("relax", r.resolved.clone(), [("input".to_string(), input_hash(input)?)].into());
    let crystals = load_crystals(input)?;
    ensure_parent(out)?;
    let mut text = String::new();
    for (index, c) in crystals.iter().enumerate() {
        let res = toy_relax(c, &config)?;
        let json: serde_json::Value = serde_json::from_str(&crystal_to_json(&res.relaxed))?;
        let line = RelaxLine {
            index,
            initial_energy: res.initial_energy(),
            final_energy: res.final_energy(),
            delta_energy_per_atom: res.delta_energy_per_atom(),
            steps: res.steps,
            converged: res.converged,
            crystal: &json,
        };
        text += &serde_json::to_string(&line)?;
        text.push('\n');
    }
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    write_meta(out, &meta)?;
    Ok(meta)
}

// ---------------------------------------------------------------- match

#[derive(Serialize)]
pub struct MatchLine {
    pub a: usize,
    pub b: usize,
    pub matched: bool,
    pub rmsd: Option<f64>,
    pub normalized_rmsd: Option<f64>,
}

fn read_any(path: &Path) -> Result<Vec<Crystal64>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("cif")) {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(vec![parse_cif(&text).with_context(|| format!("parsing {}", path.display()))?]);
    }
    load_crystals(path)
}

/// Index-wise comparison; a single structure on either side is compared
/// against every structure on the other.
pub fn match_files(a: &Path, b: &Path, ltol: Option<f64>, stol: Option<f64>, angle_tol: Option<f64>, r: &mut Resolver) -> Result<Vec<MatchLine>> {
    let tol = tolerance(r, "match", ltol, stol, angle_tol)?;
    let (xs, ys) = (read_any(a)?, read_any(b)?);
    let pairs: Vec<(usize, usize)> = match (xs.len(), ys.len()) {
        (1, m) => (0..m).map(|j| (0, j)).collect(),
        (n, 1) => (0..n).map(|i| (i, 0)).collect(),
        (n, m) if n == m => (0..n).map(|i| (i, i)).collect(),
        (n, m) => bail!("cannot pair {n} structures with {m}; give equal counts or a single structure"),
    };
    Ok(pairs
        .into_iter()
        .map(|(i, j)| {
            let m = structure_match(&xs[i], &ys[j], &tol);
            MatchLine { a: i, b: j, matched: m.is_some(), rmsd: m.map(|m| m.rmsd), normalized_rmsd: m.map(|m| m.normalized_rmsd) }
        })
        .collect())
}
