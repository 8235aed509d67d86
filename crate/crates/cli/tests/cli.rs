use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use sparfa_cli::io::{parse_mask, read_model, read_responses};

fn sparfa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparfa")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = sparfa(dir, args);
    assert!(out.status.success(), "sparfa {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn simulate(dir: &Path, cfg: &str) {
    std::fs::write(dir.join("sim.cfg"), cfg).unwrap();
    ok(dir, &["simulate", "--config", "sim.cfg", "--out", "data"]);
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_matching_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 10\nn = 10\nk = 2\nseed = 1\n");
    let y = read_responses(&dir.path().join("data/Y.csv")).unwrap();
    assert_eq!((y.data.questions(), y.data.learners()), (10, 10));
    let truth = read_model(&dir.path().join("data/truth.json")).unwrap().to_model().unwrap();
    assert_eq!((truth.questions(), truth.learners(), truth.concepts()), (10, 10, 2));
    let manifest = json(&dir.path().join("data/manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 1);
    assert!(manifest.get("timing_seconds").is_none());
}

#[test]
fn mask_count_matches_entries() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 20\nn = 15\nk = 2\np_obs = 0.5\n");
    let text = std::fs::read_to_string(dir.path().join("data/mask.csv")).unwrap();
    let entries = parse_mask(&text).unwrap();
    let y = read_responses(&dir.path().join("data/Y.csv")).unwrap();
    assert_eq!(entries.len(), y.data.observed_count());
    assert!(entries.len() < 300);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 8\nn = 8\nk = 2\nseed = 1\n");
    let first = std::fs::read(dir.path().join("data/Y.csv")).unwrap();
    ok(dir.path(), &["simulate", "--config", "sim.cfg", "--out", "other", "--seed", "2"]);
    assert_ne!(first, std::fs::read(dir.path().join("other/Y.csv")).unwrap());
}

#[test]
fn fit_emits_model_schema_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 12\nn = 10\nk = 2\n");
    ok(dir.path(), &["fit", "--method", "sparfa-m", "--data", "data/Y.csv", "--k", "2", "--out", "m.json"]);
    ok(dir.path(), &["fit", "--method", "sparfa-b", "--data", "data/Y.csv", "--k", "2", "--out", "b.json", "--burnin", "10", "--samples", "10"]);
    ok(dir.path(), &["fit", "--method", "ksvd", "--data", "data/Y.csv", "--k", "2", "--sparsity", "1", "--out", "k.json"]);
    for (file, method) in [("m.json", "sparfa-m"), ("b.json", "sparfa-b"), ("k.json", "ksvd")] {
        let v = json(&dir.path().join(file));
        assert_eq!(v["method"], method);
        assert_eq!(v["k"], 2);
        assert_eq!(v["c"].as_array().unwrap().len(), 2);
        assert_eq!(v["mu"].as_array().unwrap().len(), 12);
        for t in v["w"].as_array().unwrap() {
            assert_eq!(t.as_array().unwrap().len(), 3);
        }
        assert!(dir.path().join(format!("{file}.manifest.json")).exists());
    }
    assert!(json(&dir.path().join("m.json"))["trace"]["fit"]["objectives"].is_array());
    assert!(json(&dir.path().join("b.json"))["posterior"]["summary"]["activity"].is_array());
}

#[test]
fn sparfa_b_desk_run_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 30\nn = 30\nk = 2\n");
    let start = Instant::now();
    ok(dir.path(), &["fit", "--method", "sparfa-b", "--data", "data/Y.csv", "--k", "2", "--out", "b.json", "--burnin", "100", "--samples", "100"]);
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn warm_started_sampler_runs() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 12\nn = 10\nk = 2\n");
    ok(dir.path(), &["fit", "--method", "sparfa-b", "--init", "sparfa-m", "--data", "data/Y.csv", "--k", "2", "--out", "b.json", "--burnin", "10", "--samples", "10"]);
    let m = json(&dir.path().join("b.json.manifest.json"));
    assert_eq!(m["config"]["init"], "sparfa-m");
}

#[test]
fn model_json_round_trips_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 10\nn = 9\nk = 2\n");
    ok(dir.path(), &["fit", "--method", "sparfa-m", "--data", "data/Y.csv", "--k", "2", "--lambda", "1", "--out", "m.json"]);
    let path = dir.path().join("m.json");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(read_model(&path).unwrap().to_json().unwrap(), text);
}

#[test]
fn eval_of_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 10\nn = 10\nk = 2\n");
    ok(dir.path(), &["eval", "--model", "data/truth.json", "--truth", "data/truth.json", "--out", "r.json"]);
    let r = json(&dir.path().join("r.json"));
    for key in ["e_w", "e_c", "e_mu", "e_h"] {
        assert_eq!(r["metrics"][key], 0.0, "{key}");
    }
}

#[test]
fn eval_rejects_overlapping_holdout() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 10\nn = 10\nk = 2\nholdout = 0.2\n");
    ok(dir.path(), &["fit", "--method", "sparfa-m", "--data", "data/train.csv", "--k", "2", "--lambda", "1", "--out", "m.json"]);
    let out = sparfa(dir.path(), &["eval", "--model", "m.json", "--train", "data/train.csv", "--heldout", "data/train.csv", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
    ok(dir.path(), &["eval", "--model", "m.json", "--train", "data/train.csv", "--heldout", "data/heldout.csv", "--out", "r.json"]);
    let p = &json(&dir.path().join("r.json"))["prediction"];
    assert!(p["accuracy"].as_f64().unwrap() >= 0.0 && p["avg_likelihood"].as_f64().unwrap() <= 1.0);
}

#[test]
fn eval_lists_learner_tag_knowledge() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 12\nn = 7\nk = 2\n");
    let tags: String = "question,tag\n".to_string() + &(0..12).map(|i| format!("q{i},t{}\n", i % 4)).collect::<String>();
    std::fs::write(dir.path().join("tags.csv"), tags).unwrap();
    ok(dir.path(), &["eval", "--model", "data/truth.json", "--tags", "tags.csv", "--out", "r.json"]);
    let t = &json(&dir.path().join("r.json"))["tags"];
    let learners = t["learners"].as_array().unwrap();
    assert_eq!(learners.len(), 7);
    assert_eq!(learners[0]["learner"], "l0");
    assert_eq!(learners[0]["tags"].as_array().unwrap().len(), 4);
    assert_eq!(t["class_average"].as_array().unwrap().len(), 4);
    assert_eq!(t["concepts"].as_array().unwrap().len(), 2);
}

#[test]
fn graph_draws_every_question() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 9\nn = 6\nk = 2\n");
    ok(dir.path(), &["graph", "--model", "data/truth.json", "--out", "g.dot"]);
    let dot = std::fs::read_to_string(dir.path().join("g.dot")).unwrap();
    assert!(dot.starts_with("graph "));
    assert_eq!(dot.matches("shape=box").count(), 9);
    assert_eq!(dot.matches("shape=circle").count(), 2);
    let truth = read_model(&dir.path().join("data/truth.json")).unwrap();
    assert_eq!(dot.matches(" -- ").count(), truth.w.len());
}

#[test]
fn bench_writes_long_format_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.cfg"), "q = 10\nn = 10\nk = 2\nlambda_grid = 1,2\nmethods = sparfa-m,ksvd\n").unwrap();
    ok(dir.path(), &["bench", "--protocol", "mismatch", "--config", "b.cfg", "--trials", "1", "--out", "r.csv"]);
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("trial,method,metric,value"));
    // two datasets × two methods × four metrics
    assert_eq!(lines.count(), 16);
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "q = 10\nn = 10\nk = 2\ncolour = blue\n").unwrap();
    assert_eq!(sparfa(dir.path(), &["simulate", "--config", "bad.cfg", "--out", "x"]).status.code(), Some(1));
    std::fs::write(dir.path().join("neg.cfg"), "q = 10\nn = 10\nk = 2\np_obs = 1.5\n").unwrap();
    assert_eq!(sparfa(dir.path(), &["simulate", "--config", "neg.cfg", "--out", "x"]).status.code(), Some(1));
    assert_eq!(sparfa(dir.path(), &["fit", "--method", "nope", "--data", "y.csv", "--k", "2", "--out", "m.json"]).status.code(), Some(1));
    assert_eq!(sparfa(dir.path(), &["fit", "--method", "sparfa-m", "--data", "missing.csv", "--k", "2", "--out", "m.json"]).status.code(), Some(2));
    std::fs::write(dir.path().join("ragged.csv"), "question,l0,l1\nq0,1,0\nq1,1\n").unwrap();
    assert_eq!(sparfa(dir.path(), &["fit", "--method", "sparfa-m", "--data", "ragged.csv", "--k", "1", "--out", "m.json"]).status.code(), Some(2));
    assert_eq!(sparfa(dir.path(), &["fit", "--method", "ksvd", "--data", "ragged.csv", "--k", "1", "--out", "m.json"]).status.code(), Some(2));
    assert_eq!(sparfa(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 15\nn = 12\nk = 2\n");
    ok(dir.path(), &["--threads", "1", "fit", "--method", "sparfa-m", "--data", "data/Y.csv", "--k", "2", "--out", "a.json"]);
    ok(dir.path(), &["--threads", "3", "fit", "--method", "sparfa-m", "--data", "data/Y.csv", "--k", "2", "--out", "b.json"]);
    assert_eq!(std::fs::read(dir.path().join("a.json")).unwrap(), std::fs::read(dir.path().join("b.json")).unwrap());
}

#[test]
fn timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "q = 6\nn = 6\nk = 1\n");
    ok(dir.path(), &["--timing", "graph", "--model", "data/truth.json", "--out", "g.dot"]);
    assert!(json(&dir.path().join("g.dot.manifest.json"))["timing_seconds"].is_number());
}
