//! Subcommand implementations. Every command writes its outputs plus a run
//! manifest; reruns with the same seed and inputs are byte-identical unless
//! `--timing` is given.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sparfa::ksvd::{fit_ksvd_plus, KsvdConfig};
use sparfa::sparfa_b::{posterior_point_estimates, run_sparfa_b, run_sparfa_b_from, SparfaBHyperparams};
use sparfa::sparfa_m::{bic_select_lambda, fit_sparfa_m, SparfaMConfig};
use sparfa::synth::bench::{default_lambda_grid, run_protocol, BenchConfig, Method, Protocol};
use sparfa::synth::{
    eval_metrics, generate_synthetic, majority_baseline, predict_disjoint, split_holdout, NnzMode, SynthConfig,
};
use sparfa::tags::{class_average, fit_concept_tags, format_top_tags, learner_tag_knowledge, ConceptTagMap};
use sparfa::{FactorModel, LinkKind, ResponseMatrix};

use crate::cli::{BenchArgs, EvalArgs, FitArgs, FitMethod, GraphArgs, ProtocolKind, SimulateArgs};
use crate::config::{parse_list, KeyValues};
use crate::error::{data_err, usage_err, CliError, CliResult};
use crate::graph::to_dot;
use crate::io::{
    default_ids, format_mask, format_responses, manifest_path, read_model, read_responses, read_tags,
    sha256_file, write_file, LabeledResponses, ModelFile,
};

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective settings after defaults and flag overrides, sorted by key.
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_seconds: Option<f64>,
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            config: BTreeMap::new(),
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timing_seconds: None,
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path, contents: &str) -> CliResult<()> {
        write_file(path, contents)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    fn finish(mut self, path: &Path, started: Option<Instant>) -> CliResult<()> {
        self.timing_seconds = started.map(|t| t.elapsed().as_secs_f64());
        let mut s = serde_json::to_string_pretty(&self)?;
        s.push('\n');
        write_file(path, &s)
    }
}

fn pretty(value: &impl Serialize) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load_config(path: Option<&Path>, known: &[&str]) -> CliResult<KeyValues> {
    let kv = match path {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::default(),
    };
    kv.check_known(known)?;
    Ok(kv)
}

fn parse_link(s: &str) -> CliResult<LinkKind> {
    s.parse().map_err(|_| CliError::Usage(format!("unknown link `{s}` (expected probit or logit)")))
}

fn parse_nnz(s: &str) -> CliResult<NnzMode> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let bad = || CliError::Usage(format!("nnz `{s}`: expected du:LO:HI or bernoulli:P"));
    match parts.as_slice() {
        ["du", lo, hi] => Ok(NnzMode::DiscreteUniform {
            lo: lo.parse().map_err(|_| bad())?,
            hi: hi.parse().map_err(|_| bad())?,
        }),
        ["bernoulli", p] => Ok(NnzMode::Bernoulli { q: p.parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

/// Responses with labels, checked against the ids stored in a model.
fn read_matching(path: &Path, model: &ModelFile) -> CliResult<ResponseMatrix> {
    let r = read_responses(path)?;
    if r.question_ids != model.question_ids || r.learner_ids != model.learner_ids {
        return data_err(format!("{}: question or learner ids differ from the model", path.display()));
    }
    Ok(r.data)
}

const SIMULATE_KEYS: &[&str] =
    &["q", "n", "k", "nnz", "lambda_k", "v_mu", "v0_diag", "h", "p_obs", "link", "seed", "holdout"];

pub fn simulate(args: &SimulateArgs, timing: bool) -> CliResult<()> {
    let started = timing.then(Instant::now);
    let kv = load_config(Some(&args.config), SIMULATE_KEYS)?;
    let (Some(q), Some(n), Some(k)) = (kv.get::<usize>("q")?, kv.get::<usize>("n")?, kv.get::<usize>("k")?) else {
        return usage_err("simulate config needs q, n and k");
    };
    let seed = match args.seed {
        Some(s) => s,
        None => kv.get_or("seed", 0u64)?,
    };
    let mut synth = SynthConfig::standard(q, n, k, seed);
    if let Some(v) = kv.raw("nnz") {
        synth.nnz_mode = parse_nnz(v)?;
    }
    synth.lambda_k = kv.get_or("lambda_k", synth.lambda_k)?;
    synth.v_mu = kv.get_or("v_mu", synth.v_mu)?;
    synth.v0 = DMatrix::identity(k, k) * kv.get_or("v0_diag", 1.0f64)?;
    synth.h = kv.get_or("h", synth.h)?;
    synth.p_obs = kv.get_or("p_obs", synth.p_obs)?;
    if let Some(l) = kv.raw("link") {
        synth.link = parse_link(l)?;
    }
    let holdout: f64 = kv.get_or("holdout", 0.0)?;
    if !(0.0..1.0).contains(&holdout) {
        return usage_err("holdout must lie in [0, 1)");
    }
    synth.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (truth, data) = generate_synthetic(&synth, &mut rng)?;
    let question_ids = default_ids("q", q);
    let learner_ids = default_ids("l", n);
    let labeled = |data: ResponseMatrix| LabeledResponses {
        question_ids: question_ids.clone(),
        learner_ids: learner_ids.clone(),
        data,
    };

    let mut manifest = RunManifest::new("simulate", Some(seed));
    for (key, value) in kv.entries() {
        manifest.set(key, value);
    }
    manifest.set("seed", seed);
    manifest.input(&args.config)?;
    let out = &args.out;
    manifest.output(&out.join("Y.csv"), &format_responses(&labeled(data.clone()))?)?;
    let truth_file = ModelFile::from_model("truth", &truth, question_ids.clone(), learner_ids.clone());
    manifest.output(&out.join("truth.json"), &truth_file.to_json()?)?;
    manifest.output(&out.join("mask.csv"), &format_mask(&data))?;
    if holdout > 0.0 {
        let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
        split_rng.set_stream(1);
        let (train, test) = split_holdout(&data, holdout, &mut split_rng)?;
        manifest.output(&out.join("train.csv"), &format_responses(&labeled(train))?)?;
        manifest.output(&out.join("heldout.csv"), &format_responses(&labeled(test))?)?;
    }
    manifest.finish(&out.join("manifest.json"), started)
}

const FIT_KEYS: &[&str] = &[
    "seed", "link", "lambda", "lambda_grid", "gamma", "mu_w", "inner_iters", "max_outer", "outer_tol", "restarts",
    "reinit_heuristics", "burnin", "samples", "threshold", "init", "sparsity", "ksvd_iters",
];

/// Flag value, else config value, else default.
fn pick<T: std::str::FromStr>(flag: Option<T>, kv: &KeyValues, key: &str, default: T) -> CliResult<T> {
    match flag {
        Some(v) => Ok(v),
        None => kv.get_or(key, default),
    }
}

pub fn fit(args: &FitArgs, timing: bool) -> CliResult<()> {
    let started = timing.then(Instant::now);
    let kv = load_config(args.config.as_deref(), FIT_KEYS)?;
    let seed = pick(args.seed, &kv, "seed", 0u64)?;
    let input = read_responses(&args.data)?;
    let data = &input.data;
    let k = args.k;

    let mut manifest = RunManifest::new("fit", Some(seed));
    manifest.set("method", args.method.label());
    manifest.set("k", k);
    manifest.input(&args.data)?;
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }

    let (model, trace, posterior): (FactorModel, Option<Value>, Option<Value>) = match args.method {
        FitMethod::SparfaM => {
            let link = match args.link.as_deref().or(kv.raw("link")) {
                Some(l) => parse_link(l)?,
                None => LinkKind::Probit,
            };
            let defaults = SparfaMConfig::default();
            let cfg = SparfaMConfig {
                lambda_l1: 1.0,
                gamma_c: pick(args.gamma, &kv, "gamma", defaults.gamma_c)?,
                mu_w: kv.get_or("mu_w", defaults.mu_w)?,
                inner_iters: kv.get_or("inner_iters", defaults.inner_iters)?,
                max_outer: pick(args.max_outer, &kv, "max_outer", defaults.max_outer)?,
                outer_tol: kv.get_or("outer_tol", defaults.outer_tol)?,
                restarts: pick(args.restarts, &kv, "restarts", defaults.restarts)?,
                seed,
                link,
                reinit_heuristics: kv.get_or("reinit_heuristics", defaults.reinit_heuristics)?,
            };
            manifest.set("link", link);
            manifest.set("gamma", cfg.gamma_c);
            manifest.set("mu_w", cfg.mu_w);
            manifest.set("inner_iters", cfg.inner_iters);
            manifest.set("max_outer", cfg.max_outer);
            manifest.set("outer_tol", cfg.outer_tol);
            manifest.set("restarts", cfg.restarts);
            manifest.set("reinit_heuristics", cfg.reinit_heuristics);
            let fixed = match args.lambda {
                Some(l) => Some(l),
                None if args.lambda_grid.is_none() => kv.get("lambda")?,
                None => None,
            };
            match fixed {
                Some(lambda) => {
                    manifest.set("lambda", lambda);
                    let cfg = SparfaMConfig { lambda_l1: lambda, ..cfg };
                    cfg.validate()?;
                    let (model, trace) = fit_sparfa_m(data, k, &cfg)?;
                    (model, Some(json!({ "lambda": lambda, "fit": trace })), None)
                }
                None => {
                    let grid: Vec<f64> = match (args.lambda_grid.as_deref(), kv.raw("lambda_grid")) {
                        (Some(g), _) | (None, Some(g)) => {
                            parse_list(g).ok_or_else(|| CliError::Usage(format!("bad lambda grid `{g}`")))?
                        }
                        (None, None) => default_lambda_grid(),
                    };
                    manifest.set("lambda_grid", grid.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
                    let sel = bic_select_lambda(data, k, &grid, &cfg)?;
                    let scores: Vec<Value> = sel.scores.iter().map(|(l, b)| json!({ "lambda": l, "bic": b })).collect();
                    let trace = json!({ "lambda": sel.lambda, "bic": scores, "fit": sel.trace });
                    (sel.model, Some(trace), None)
                }
            }
        }
        FitMethod::SparfaB => {
            if args.link.as_deref().is_some_and(|l| l != "probit") {
                return usage_err("sparfa-b supports only the probit link");
            }
            let burn_in = pick(args.burnin, &kv, "burnin", 2000usize)?;
            let samples = pick(args.samples, &kv, "samples", 2000usize)?;
            let threshold = pick(args.threshold, &kv, "threshold", 0.35f64)?;
            manifest.set("burnin", burn_in);
            manifest.set("samples", samples);
            manifest.set("threshold", threshold);
            let init = args.init.as_deref().or(kv.raw("init")).unwrap_or("prior").to_string();
            manifest.set("init", &init);
            let hyper = SparfaBHyperparams::for_data(k, data);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let summary = match init.as_str() {
                "prior" => run_sparfa_b(data, k, &hyper, burn_in, samples, &mut rng)?,
                "sparfa-m" => {
                    let cfg = SparfaMConfig { seed, ..SparfaMConfig::default() };
                    let start = bic_select_lambda(data, k, &default_lambda_grid(), &cfg)?.model;
                    run_sparfa_b_from(data, &start, &hyper, burn_in, samples, &mut rng)?
                }
                other => return usage_err(format!("unknown init `{other}` (expected prior or sparfa-m)")),
            };
            let model = posterior_point_estimates(&summary, threshold)?;
            let posterior = json!({ "threshold": threshold, "hyperparameters": hyper, "summary": summary });
            (model, None, Some(posterior))
        }
        FitMethod::Ksvd => {
            let q = data.questions();
            let row_sparsity: Vec<usize> = if let Some(path) = &args.truth {
                manifest.input(path)?;
                let truth = read_model(path)?.to_model()?;
                if truth.questions() != q {
                    return data_err("truth model and data differ in question count");
                }
                manifest.set("sparsity", "oracle");
                (0..q).map(|i| truth.w.row(i).iter().filter(|&&v| v > 0.0).count()).collect()
            } else {
                let Some(s) = args.sparsity.map(Ok).or_else(|| kv.get::<usize>("sparsity").transpose()).transpose()? else {
                    return usage_err("ksvd needs --sparsity or --truth");
                };
                manifest.set("sparsity", s);
                vec![s; q]
            };
            let max_iters = kv.get_or("ksvd_iters", 100usize)?;
            manifest.set("ksvd_iters", max_iters);
            let cfg = KsvdConfig { k, row_sparsity, max_iters, rank1_iters: 10, seed };
            let fit = fit_ksvd_plus(data, &cfg)?;
            let model = FactorModel::new(fit.w, fit.c, nalgebra::DVector::zeros(q), LinkKind::Probit)?;
            (model, Some(json!({ "residuals": fit.residuals })), None)
        }
    };

    let mut file = ModelFile::from_model(args.method.label(), &model, input.question_ids, input.learner_ids);
    file.trace = trace;
    file.posterior = posterior;
    manifest.output(&args.out, &file.to_json()?)?;
    manifest.finish(&manifest_path(&args.out), started)
}

fn concept_tags(model: &FactorModel, file: &ModelFile, tags: &Path, eta: Option<f64>) -> CliResult<ConceptTagMap> {
    let t = read_tags(tags, &file.question_ids)?;
    Ok(fit_concept_tags(&t, &model.w, eta)?)
}

pub fn graph(args: &GraphArgs, timing: bool) -> CliResult<()> {
    let started = timing.then(Instant::now);
    let file = read_model(&args.model)?;
    let model = file.to_model()?;
    let mut manifest = RunManifest::new("graph", None);
    manifest.input(&args.model)?;
    let labels: Option<Vec<String>> = match &args.tags {
        Some(path) => {
            manifest.input(path)?;
            if let Some(e) = args.eta {
                manifest.set("eta", e);
            }
            let map = concept_tags(&model, &file, path, args.eta)?;
            Some((0..model.concepts()).map(|k| format_top_tags(&map.ranked_tags(k), 3).join("\\n")).collect())
        }
        None => None,
    };
    manifest.output(&args.out, &to_dot(&model, &file.question_ids, labels.as_deref()))?;
    manifest.finish(&manifest_path(&args.out), started)
}

pub fn eval(args: &EvalArgs, timing: bool) -> CliResult<()> {
    let started = timing.then(Instant::now);
    let file = read_model(&args.model)?;
    let model = file.to_model()?;
    let mut manifest = RunManifest::new("eval", None);
    manifest.input(&args.model)?;
    let mut report = serde_json::Map::new();
    report.insert("method".into(), json!(file.method));

    if let Some(path) = &args.truth {
        manifest.input(path)?;
        let truth = read_model(path)?.to_model()?;
        report.insert("metrics".into(), serde_json::to_value(eval_metrics(&truth, &model)?)?);
    }

    if let (Some(train_path), Some(heldout_path)) = (&args.train, &args.heldout) {
        manifest.input(train_path)?;
        manifest.input(heldout_path)?;
        let train = read_matching(train_path, &file)?;
        let heldout = read_matching(heldout_path, &file)?;
        if !train.is_disjoint(&heldout) {
            return data_err("held-out entries overlap the training observations");
        }
        let (accuracy, likelihood) = predict_disjoint(&model, &train, &heldout)?;
        report.insert(
            "prediction".into(),
            json!({
                "heldout_entries": heldout.observed_count(),
                "accuracy": accuracy,
                "avg_likelihood": likelihood,
                "majority_baseline": majority_baseline(&train, &heldout)?,
            }),
        );
    }

    if let Some(path) = &args.tags {
        manifest.input(path)?;
        if let Some(e) = args.eta {
            manifest.set("eta", e);
        }
        let map = concept_tags(&model, &file, path, args.eta)?;
        let concepts: Vec<Value> = (0..model.concepts())
            .map(|k| {
                let ranked: Vec<Value> = map.ranked_tags(k).into_iter().map(|(t, w)| json!({ "tag": t, "weight": w })).collect();
                json!({ "concept": k + 1, "eta": map.etas[k], "tags": ranked })
            })
            .collect();
        let u = learner_tag_knowledge(&map.a, &model.c)?;
        let avg = class_average(&u);
        let tag_rows = |col: &dyn Fn(usize) -> f64| -> Vec<Value> {
            map.tag_names.iter().enumerate().map(|(m, t)| json!({ "tag": t, "knowledge": col(m) })).collect()
        };
        let learners: Vec<Value> = file
            .learner_ids
            .iter()
            .enumerate()
            .map(|(j, id)| json!({ "learner": id, "tags": tag_rows(&|m| u[(m, j)]) }))
            .collect();
        report.insert(
            "tags".into(),
            json!({
                "concepts": concepts,
                "class_average": tag_rows(&|m| avg[m]),
                "learners": learners,
            }),
        );
    }

    manifest.output(&args.out, &pretty(&Value::Object(report))?)?;
    manifest.finish(&manifest_path(&args.out), started)
}

const BENCH_KEYS: &[&str] = &[
    "trials", "seed", "q", "n", "k", "methods", "lambda_grid", "gamma", "restarts", "max_outer", "burnin", "samples",
    "threshold", "p_obs", "rates", "q_values", "n_values", "k_values", "coupled",
];

fn parse_method(s: &str) -> CliResult<Method> {
    match s.trim() {
        "sparfa-m" => Ok(Method::SparfaM),
        "sparfa-m-logit" => Ok(Method::SparfaMLogit),
        "sparfa-b" => Ok(Method::SparfaB),
        "ksvd" => Ok(Method::Ksvd),
        other => usage_err(format!("unknown method `{other}`")),
    }
}

pub fn bench(args: &BenchArgs, timing: bool) -> CliResult<()> {
    let started = timing.then(Instant::now);
    let kv = load_config(args.config.as_deref(), BENCH_KEYS)?;
    let d = BenchConfig::default();
    let mut config = BenchConfig {
        trials: pick(args.trials, &kv, "trials", d.trials)?,
        seed: pick(args.seed, &kv, "seed", d.seed)?,
        q: kv.get_or("q", d.q)?,
        n: kv.get_or("n", d.n)?,
        k: kv.get_or("k", d.k)?,
        lambda_grid: kv.list("lambda_grid")?.unwrap_or(d.lambda_grid),
        burn_in: kv.get_or("burnin", d.burn_in)?,
        samples: kv.get_or("samples", d.samples)?,
        activity_threshold: kv.get_or("threshold", d.activity_threshold)?,
        ..d
    };
    if let Some(m) = kv.raw("methods") {
        config.methods = m.split(',').map(parse_method).collect::<CliResult<_>>()?;
    }
    config.sparfa_m.gamma_c = kv.get_or("gamma", config.sparfa_m.gamma_c)?;
    config.sparfa_m.restarts = kv.get_or("restarts", config.sparfa_m.restarts)?;
    config.sparfa_m.max_outer = kv.get_or("max_outer", config.sparfa_m.max_outer)?;
    if config.trials == 0 || config.methods.is_empty() {
        return usage_err("bench needs trials >= 1 and at least one method");
    }
    config.sparfa_m.validate()?;

    let protocol = match args.protocol {
        ProtocolKind::Size => Protocol::Size {
            q_values: kv.list("q_values")?.unwrap_or_else(|| vec![50, 100, 200]),
            n_values: kv.list("n_values")?.unwrap_or_else(|| vec![50, 100, 200]),
            k_values: kv.list("k_values")?.unwrap_or_else(|| vec![config.k]),
            coupled: kv.get_or("coupled", true)?,
        },
        ProtocolKind::Missingness => Protocol::Missingness { p_obs: kv.list("p_obs")?.unwrap_or_else(|| vec![1.0, 0.8, 0.6, 0.4, 0.2]) },
        ProtocolKind::Sparsity => Protocol::Sparsity { rates: kv.list("rates")?.unwrap_or_else(|| vec![0.2, 0.5, 0.8]) },
        ProtocolKind::Mismatch => Protocol::Mismatch,
    };

    let records = run_protocol(&protocol, &config)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["trial", "method", "metric", "value"])?;
    for r in &records {
        writer.write_record([r.trial.to_string(), r.method.clone(), r.metric.clone(), r.value.to_string()])?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))?;

    let mut manifest = RunManifest::new("bench", Some(config.seed));
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    manifest.set("protocol", serde_json::to_string(&protocol)?);
    manifest.set("bench", serde_json::to_string(&config)?);
    manifest.output(&args.out, &text)?;
    manifest.finish(&manifest_path(&args.out), started)
}
