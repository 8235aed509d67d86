//! Bipartite question–concept graphs in Graphviz DOT.

use nalgebra::DMatrix;
use sparfa::FactorModel;

/// Largest edge width; widths are proportional to the rescaled association.
pub const MAX_PENWIDTH: f64 = 6.0;

/// W with each column multiplied by the norm of the matching row of C, so
/// that associations are comparable once C rows have unit norm.
pub fn rescaled_associations(model: &FactorModel) -> DMatrix<f64> {
    let mut w = model.w.clone();
    for k in 0..model.concepts() {
        let norm = model.c.row(k).norm();
        w.column_mut(k).scale_mut(norm);
    }
    w
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Concepts are circles, questions are boxes labelled with their difficulty;
/// questions without any association are still drawn.
pub fn to_dot(model: &FactorModel, question_ids: &[String], concept_labels: Option<&[String]>) -> String {
    let w = rescaled_associations(model);
    let max = w.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut out = String::from("graph sparfa {\n  rankdir=LR;\n");
    for k in 0..model.concepts() {
        let label = match concept_labels {
            Some(labels) if !labels[k].is_empty() => format!("C{}\\n{}", k + 1, escape(&labels[k])),
            _ => format!("C{}", k + 1),
        };
        out.push_str(&format!("  c{k} [shape=circle, label=\"{label}\"];\n"));
    }
    for (i, qid) in question_ids.iter().enumerate() {
        out.push_str(&format!("  q{i} [shape=box, label=\"{}\\n{:.2}\"];\n", escape(qid), model.mu[i]));
    }
    for i in 0..model.questions() {
        for k in 0..model.concepts() {
            let v = w[(i, k)];
            if v > 0.0 {
                out.push_str(&format!("  c{k} -- q{i} [penwidth={:.4}];\n", MAX_PENWIDTH * v / max));
            }
        }
    }
    out.push_str("}\n");
    out
}
