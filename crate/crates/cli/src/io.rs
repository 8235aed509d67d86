//! File formats.
//!
//! * Response CSV: the first header cell is `question`, the remaining header
//!   cells are learner ids; every following row starts with a question id and
//!   holds `0`, `1` or an empty cell (unobserved).
//! * Mask CSV: a first line `observed,<count>` followed by one `i,j` line per
//!   observed entry in question-major order.
//! * Model JSON: see [`ModelFile`]; W is stored as `(i, k, value)` triplets.
//! * Tag CSV: header `question,tag`, one row per (question id, tag) pair.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparfa::tags::TagMatrix;
use sparfa::{FactorModel, LinkKind, ResponseMatrix};

use crate::error::{data_err, CliError, CliResult};

/// Response matrix together with its row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledResponses {
    pub question_ids: Vec<String>,
    pub learner_ids: Vec<String>,
    pub data: ResponseMatrix,
}

pub fn default_ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn with_path<T>(path: &Path, r: Result<T, impl std::fmt::Display>) -> CliResult<T> {
    r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_responses(path: &Path) -> CliResult<LabeledResponses> {
    let text = with_path(path, fs::read_to_string(path))?;
    with_path(path, parse_responses(&text))
}

pub fn parse_responses(text: &str) -> CliResult<LabeledResponses> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return data_err("empty response file"),
    };
    if header.get(0) != Some("question") {
        return data_err("response header must start with `question`");
    }
    let learner_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if learner_ids.is_empty() {
        return data_err("response file has no learner columns");
    }
    let mut question_ids = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != learner_ids.len() + 1 {
            return data_err(format!(
                "row {} has {} cells, expected {}",
                line + 2,
                rec.len(),
                learner_ids.len() + 1
            ));
        }
        question_ids.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|cell| match cell {
                "" => Ok(None),
                "0" => Ok(Some(0)),
                "1" => Ok(Some(1)),
                other => data_err(format!("row {}: invalid response `{other}`", line + 2)),
            })
            .collect::<CliResult<Vec<Option<u8>>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return data_err("response file has no question rows");
    }
    let data = ResponseMatrix::from_options(&rows)?;
    Ok(LabeledResponses { question_ids, learner_ids, data })
}

pub fn format_responses(r: &LabeledResponses) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["question".to_string()];
    header.extend(r.learner_ids.iter().cloned());
    w.write_record(&header)?;
    for (i, qid) in r.question_ids.iter().enumerate() {
        let mut rec = vec![qid.clone()];
        for j in 0..r.data.learners() {
            rec.push(match r.data.get(i, j) {
                None => String::new(),
                Some(true) => "1".into(),
                Some(false) => "0".into(),
            });
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn format_mask(data: &ResponseMatrix) -> String {
    let mut out = format!("observed,{}\n", data.observed_count());
    for (i, j, _) in data.observed() {
        out.push_str(&format!("{i},{j}\n"));
    }
    out
}

/// Parses a mask file, checking the header count against the listed entries.
pub fn parse_mask(text: &str) -> CliResult<Vec<(usize, usize)>> {
    let mut lines = text.lines();
    let count: usize = match lines.next().and_then(|l| l.strip_prefix("observed,")) {
        Some(c) => c.trim().parse().map_err(|_| CliError::Data("bad mask count".into()))?,
        None => return data_err("mask header must be `observed,<count>`"),
    };
    let entries = lines
        .map(|l| {
            let (a, b) = l.split_once(',').ok_or_else(|| CliError::Data(format!("bad mask line `{l}`")))?;
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| CliError::Data(format!("bad mask line `{l}`")));
            Ok((parse(a)?, parse(b)?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if entries.len() != count {
        return data_err(format!("mask header says {count} entries, found {}", entries.len()));
    }
    Ok(entries)
}

/// Serialized factor model, shared by fitted models and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub method: String,
    pub link: LinkKind,
    pub question_ids: Vec<String>,
    pub learner_ids: Vec<String>,
    pub k: usize,
    /// Nonzero entries of W as `(question, concept, value)`.
    pub w: Vec<(usize, usize, f64)>,
    /// Rows of C, one per concept.
    pub c: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<serde_json::Value>,
}

impl ModelFile {
    pub fn from_model(method: &str, model: &FactorModel, question_ids: Vec<String>, learner_ids: Vec<String>) -> Self {
        let mut w = Vec::new();
        for i in 0..model.questions() {
            for k in 0..model.concepts() {
                let v = model.w[(i, k)];
                if v != 0.0 {
                    w.push((i, k, v));
                }
            }
        }
        ModelFile {
            method: method.to_string(),
            link: model.link,
            question_ids,
            learner_ids,
            k: model.concepts(),
            w,
            c: (0..model.concepts()).map(|k| model.c.row(k).iter().copied().collect()).collect(),
            mu: model.mu.iter().copied().collect(),
            trace: None,
            posterior: None,
        }
    }

    pub fn to_model(&self) -> CliResult<FactorModel> {
        let (q, n, k) = (self.question_ids.len(), self.learner_ids.len(), self.k);
        if self.mu.len() != q {
            return data_err(format!("model has {} difficulties for {q} questions", self.mu.len()));
        }
        if self.c.len() != k || self.c.iter().any(|r| r.len() != n) {
            return data_err("C must have K rows of one entry per learner");
        }
        let mut w = DMatrix::zeros(q, k);
        for &(i, kk, v) in &self.w {
            if i >= q || kk >= k {
                return data_err(format!("W triplet ({i}, {kk}) outside {q}x{k}"));
            }
            w[(i, kk)] = v;
        }
        let c = DMatrix::from_fn(k, n, |r, j| self.c[r][j]);
        Ok(FactorModel::new(w, c, DVector::from_vec(self.mu.clone()), self.link)?)
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn read_model(path: &Path) -> CliResult<ModelFile> {
    let text = with_path(path, fs::read_to_string(path))?;
    with_path(path, serde_json::from_str(&text))
}

/// Reads `question,tag` pairs, resolving question ids against `question_ids`.
pub fn read_tags(path: &Path, question_ids: &[String]) -> CliResult<TagMatrix> {
    let text = with_path(path, fs::read_to_string(path))?;
    with_path(path, parse_tags(&text, question_ids))
}

pub fn parse_tags(text: &str, question_ids: &[String]) -> CliResult<TagMatrix> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["question", "tag"] {
        return data_err("tag header must be `question,tag`");
    }
    let mut pairs = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let Some(i) = question_ids.iter().position(|q| q == &rec[0]) else {
            return data_err(format!("unknown question id `{}` in tags", &rec[0]));
        };
        pairs.push((i, rec[1].to_string()));
    }
    Ok(TagMatrix::from_pairs(question_ids.len(), &pairs)?)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = with_path(path, fs::read(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `contents`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        with_path(parent, fs::create_dir_all(parent))?;
    }
    with_path(path, fs::write(path, contents))
}

/// `<out>.manifest.json` next to an output file.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
