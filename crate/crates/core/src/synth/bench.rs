//! Monte-Carlo benchmark protocols comparing the estimators on synthetic data.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{generate_synthetic, sample_responses, NnzMode, SynthConfig};
use super::metrics::{eval_metrics, EvalReport};
use crate::error::Result;
use crate::ksvd::{fit_ksvd_plus, KsvdConfig};
use crate::link::LinkKind;
use crate::model::{FactorModel, ResponseMatrix};
use crate::sparfa_b::{posterior_point_estimates, run_sparfa_b, SparfaBHyperparams};
use crate::sparfa_m::{bic_select_lambda, SparfaMConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SparfaM,
    SparfaMLogit,
    SparfaB,
    Ksvd,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::SparfaM => "sparfa-m",
            Method::SparfaMLogit => "sparfa-m-logit",
            Method::SparfaB => "sparfa-b",
            Method::Ksvd => "ksvd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Protocol {
    /// Problem size sweep; `coupled` pairs `q_values[t]` with `n_values[t]`,
    /// otherwise every combination is run.
    Size { q_values: Vec<usize>, n_values: Vec<usize>, k_values: Vec<usize>, coupled: bool },
    Missingness { p_obs: Vec<f64> },
    Sparsity { rates: Vec<f64> },
    /// Data drawn under both links from the same factors.
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub trials: usize,
    pub seed: u64,
    pub q: usize,
    pub n: usize,
    pub k: usize,
    pub methods: Vec<Method>,
    pub lambda_grid: Vec<f64>,
    pub sparfa_m: SparfaMConfig,
    pub burn_in: usize,
    pub samples: usize,
    pub activity_threshold: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            trials: 25,
            seed: 0,
            q: 100,
            n: 100,
            k: 5,
            methods: vec![Method::SparfaM, Method::Ksvd],
            lambda_grid: default_lambda_grid(),
            sparfa_m: SparfaMConfig { gamma_c: 0.1, ..SparfaMConfig::default() },
            burn_in: 2000,
            samples: 2000,
            activity_threshold: 0.35,
        }
    }
}

/// λ grid used for BIC selection; covers the useful range for unit-scale
/// factors at a few hundred to ten thousand observations.
pub fn default_lambda_grid() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 12.0, 16.0]
}

/// One CSV row: `trial, method, metric, value`. The method label carries the
/// protocol setting, e.g. `sparfa-m[p_obs=0.6]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub trial: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

/// Estimate from one method on one dataset.
pub fn fit_method(
    method: Method,
    data: &ResponseMatrix,
    truth: &FactorModel,
    config: &BenchConfig,
    hyper: Option<&SparfaBHyperparams>,
    rng: &mut ChaCha8Rng,
) -> Result<FactorModel> {
    let k = truth.concepts();
    match method {
        Method::SparfaM | Method::SparfaMLogit => {
            let link = if method == Method::SparfaM { LinkKind::Probit } else { LinkKind::Logit };
            let cfg = SparfaMConfig { link, seed: rng.random(), ..config.sparfa_m.clone() };
            Ok(bic_select_lambda(data, k, &config.lambda_grid, &cfg)?.model)
        }
        Method::SparfaB => {
            let hyper = hyper.cloned().unwrap_or_else(|| SparfaBHyperparams::for_data(k, data));
            let summary = run_sparfa_b(data, k, &hyper, config.burn_in, config.samples, rng)?;
            posterior_point_estimates(&summary, config.activity_threshold)
        }
        Method::Ksvd => {
            let sparsity = (0..truth.questions())
                .map(|i| truth.w.row(i).iter().filter(|&&x| x > 0.0).count())
                .collect();
            let cfg = KsvdConfig { k, row_sparsity: sparsity, max_iters: 100, rank1_iters: 10, seed: rng.random() };
            let fit = fit_ksvd_plus(data, &cfg)?;
            FactorModel::new(fit.w, fit.c, DVector::zeros(truth.questions()), LinkKind::Probit)
        }
    }
}

fn report_records(trial: usize, label: &str, report: &EvalReport) -> Vec<BenchRecord> {
    [("E_W", report.e_w), ("E_C", report.e_c), ("E_mu", report.e_mu), ("E_H", report.e_h)]
        .into_iter()
        .map(|(metric, value)| BenchRecord { trial, method: label.to_string(), metric: metric.to_string(), value })
        .collect()
}

struct Setting {
    label: String,
    synth: SynthConfig,
    hyper: Option<SparfaBHyperparams>,
    mismatch: bool,
}

fn settings(protocol: &Protocol, config: &BenchConfig) -> Vec<Setting> {
    let base = |q, n, k| SynthConfig::standard(q, n, k, config.seed);
    match protocol {
        Protocol::Size { q_values, n_values, k_values, coupled } => {
            let pairs: Vec<(usize, usize)> = if *coupled {
                q_values.iter().copied().zip(n_values.iter().copied()).collect()
            } else {
                q_values.iter().flat_map(|&q| n_values.iter().map(move |&n| (q, n))).collect()
            };
            k_values
                .iter()
                .flat_map(|&k| pairs.iter().map(move |&(q, n)| (q, n, k)))
                .map(|(q, n, k)| Setting { label: format!("Q={q},N={n},K={k}"), synth: base(q, n, k), hyper: None, mismatch: false })
                .collect()
        }
        Protocol::Missingness { p_obs } => p_obs
            .iter()
            .map(|&p| {
                let mut synth = base(config.q, config.n, config.k);
                synth.p_obs = p;
                Setting { label: format!("p_obs={p}"), synth, hyper: None, mismatch: false }
            })
            .collect(),
        Protocol::Sparsity { rates } => rates
            .iter()
            .map(|&rate| {
                let mut synth = base(config.q, config.n, config.k);
                synth.nnz_mode = NnzMode::Bernoulli { q: rate };
                let mut hyper = SparfaBHyperparams::defaults(config.k);
                (hyper.alpha, hyper.beta) = if rate <= 0.2 {
                    (2.0, 5.0)
                } else if rate >= 0.8 {
                    (5.0, 2.0)
                } else {
                    (2.0, 2.0)
                };
                Setting { label: format!("q={rate}"), synth, hyper: Some(hyper), mismatch: false }
            })
            .collect(),
        Protocol::Mismatch => vec![Setting {
            label: "mismatch".into(),
            synth: base(config.q, config.n, config.k),
            hyper: None,
            mismatch: true,
        }],
    }
}

/// Runs `config.trials` instances per protocol setting. Trial `t` uses the
/// ChaCha stream `t` of `config.seed`, so results do not depend on scheduling.
pub fn run_protocol(protocol: &Protocol, config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let settings = settings(protocol, config);
    let jobs: Vec<(usize, usize)> = (0..settings.len()).flat_map(|s| (0..config.trials).map(move |t| (s, t))).collect();
    let chunks: Vec<Vec<BenchRecord>> = jobs
        .par_iter()
        .map(|&(s, trial)| {
            let setting = &settings[s];
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(trial as u64);
            let (truth, data) = generate_synthetic(&setting.synth, &mut rng)?;
            let mut datasets = vec![("", data)];
            if setting.mismatch {
                let logit = sample_responses(&truth, LinkKind::Logit, setting.synth.p_obs, &mut rng)?;
                datasets[0].0 = "Y_pro";
                datasets.push(("Y_log", logit));
            }
            let mut out = Vec::new();
            for (tag, data) in &datasets {
                for &method in &config.methods {
                    let est = fit_method(method, data, &truth, config, setting.hyper.as_ref(), &mut rng)?;
                    let report = eval_metrics(&truth, &est)?;
                    let label = if tag.is_empty() {
                        format!("{}[{}]", method.label(), setting.label)
                    } else {
                        format!("{}[{}]", method.label(), tag)
                    };
                    out.extend(report_records(trial, &label, &report));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Median of the values for one method label and metric.
pub fn median(records: &[BenchRecord], method: &str, metric: &str) -> Option<f64> {
    let mut v: Vec<f64> = records.iter().filter(|r| r.method == method && r.metric == metric).map(|r| r.value).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
