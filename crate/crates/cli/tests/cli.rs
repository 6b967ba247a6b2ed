use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crystalflow::cif::write_cif;
use crystalflow::synthetic::{synthetic_family, Perturbation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const SMALL: &str = "\
seed = 3
preset = compact   # smallest network
[data]
n_train = 150
n_test = 40
[pairs]
n = 150
[train]
epochs = 2
[generate]
n = 30
steps = 8
";

fn crystalflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crystalflow")).current_dir(dir).env("RUST_LOG", "warn").args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = crystalflow(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), SMALL).unwrap();
    dir
}

#[test]
fn ingest_keeps_good_cifs_and_reports_the_bad_one() {
    let dir = tempfile::tempdir().unwrap();
    let family = synthetic_family(3, &Perturbation::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for (k, c) in family.iter().enumerate() {
        fs::write(dir.path().join(format!("s{k}.cif")), write_cif(c)).unwrap();
    }
    fs::write(dir.path().join("broken.cif"), "data_x\n_cell_length_a 4.0\nloop_\n_atom_site_label\n").unwrap();
    let args = ["ingest", "s0.cif", "s1.cif", "broken.cif", "s2.cif", "--out", "data.jsonl"];
    let first = ok(dir.path(), &args);
    assert!(String::from_utf8_lossy(&first.stderr).contains("ingested 3 of 4"));
    let summary = json(&dir.path().join("data.jsonl.summary.json"));
    assert_eq!(summary["ok"], 3);
    assert_eq!(summary["failed"], 1);
    assert_eq!(summary["failures"][0]["source"], "broken.cif");
    assert_eq!(fs::read_to_string(dir.path().join("data.jsonl")).unwrap().lines().count(), 3);

    let before = fs::read(dir.path().join("data.jsonl")).unwrap();
    ok(dir.path(), &args);
    assert_eq!(fs::read(dir.path().join("data.jsonl")).unwrap(), before);
}

#[test]
fn ingest_of_nothing_valid_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cif"), "not a cif").unwrap();
    let out = crystalflow(dir.path(), &["ingest", "bad.cif", "--out", "d.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records could be ingested"));
}

#[test]
fn malformed_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "seed = 1\n[train]\nepochs\n").unwrap();
    let out = crystalflow(dir.path(), &["synth", "--out", "s.jsonl", "--config", "bad.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config line 3"));
}

#[test]
fn flags_override_the_config_file_and_are_snapshotted() {
    let dir = setup();
    ok(dir.path(), &["synth", "--out", "s.jsonl", "--config", "run.cfg", "--n", "7", "--seed", "9"]);
    assert_eq!(fs::read_to_string(dir.path().join("s.jsonl")).unwrap().lines().count(), 7);
    let meta = json(&dir.path().join("s.jsonl.meta.json"));
    assert_eq!(meta["config"]["seed"], "9");
    assert_eq!(meta["config"]["data.n_train"], "7");
    let snapshot = fs::read_to_string(dir.path().join("s.jsonl.config")).unwrap();
    assert!(snapshot.contains("[data]\nn_train = 7"));
}

#[test]
fn pipeline_is_deterministic_and_resumable() {
    let (a, b) = (setup(), setup());
    for d in [&a, &b] {
        ok(d.path(), &["pipeline", "--config", "run.cfg", "--out-dir", "run"]);
    }
    let report = |d: &tempfile::TempDir| fs::read(d.path().join("run/eval/report.json")).unwrap();
    assert_eq!(report(&a), report(&b));
    for name in ["base.json", "pairs.jsonl", "model.json", "generated.jsonl", "eval/samples.jsonl"] {
        assert_eq!(fs::read(a.path().join("run").join(name)).unwrap(), fs::read(b.path().join("run").join(name)).unwrap(), "{name}");
    }
    let r = json(&a.path().join("run/eval/report.json"));
    assert!(r["label"].as_str().unwrap().starts_with("NOT DFT"));
    assert!(a.path().join("run/eval/energy_histogram.csv").exists());
    assert!(a.path().join("run/eval/nary_histogram.csv").exists());

    let rerun = Command::new(env!("CARGO_BIN_EXE_crystalflow"))
        .current_dir(a.path())
        .env("RUST_LOG", "info")
        .args(["pipeline", "--config", "run.cfg", "--out-dir", "run"])
        .output()
        .unwrap();
    let log = String::from_utf8_lossy(&rerun.stderr);
    assert_eq!(log.matches("is current, skipping").count(), 7, "{log}");
    assert_eq!(report(&a), report(&b));
}

#[test]
fn mismatched_base_is_refused_unless_forced() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["pipeline", "--config", "run.cfg", "--out-dir", "q"]);
    ok(d, &["fit-base", "--data", "q/train.jsonl", "--out", "u.json", "--base-kind", "uninformed", "--config", "run.cfg"]);

    let gen = ["generate", "--checkpoint", "q/model.json", "--base", "u.json", "--out", "g.jsonl", "--config", "run.cfg"];
    let refused = crystalflow(d, &gen);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    assert!(!d.join("g.jsonl").exists());

    let mut forced = gen.to_vec();
    forced.push("--force");
    ok(d, &forced);
    assert!(d.join("g.jsonl").exists());
}

#[test]
fn failing_stage_is_named() {
    let dir = setup();
    let out = crystalflow(dir.path(), &["pipeline", "--config", "run.cfg", "--out-dir", "run", "--set", "train.epochs=zero"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `train` failed"), "{err}");
    assert!(dir.path().join("run/pairs.jsonl").exists());
}

#[test]
fn quantized_and_uninformed_bases_give_comparable_reports() {
    let dir = setup();
    ok(dir.path(), &["pipeline", "--config", "run.cfg", "--out-dir", "q"]);
    ok(dir.path(), &["pipeline", "--config", "run.cfg", "--out-dir", "u", "--base-kind", "uninformed"]);
    let (q, u) = (json(&dir.path().join("q/eval/report.json")), json(&dir.path().join("u/eval/report.json")));
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&q), keys(&u));
    assert_ne!(json(&dir.path().join("q/base.json"))["model"], json(&dir.path().join("u/base.json"))["model"]);
}

#[test]
fn match_and_relax_commands() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["synth", "--out", "s.jsonl", "--n", "3"]);
    let out = ok(d, &["match", "s.jsonl", "s.jsonl"]);
    let lines: Vec<Value> = String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["matched"] == true));

    ok(d, &["relax", "--input", "s.jsonl", "--out", "r.jsonl", "--max-steps", "50"]);
    let relaxed = fs::read_to_string(d.join("r.jsonl")).unwrap();
    for line in relaxed.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["final_energy"].as_f64().unwrap() <= v["initial_energy"].as_f64().unwrap());
    }
}
