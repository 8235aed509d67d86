//! Response data and the factor model `Z = W C + μ 1ᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SparfaError};
use crate::link::LinkKind;

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub questions: usize,
    pub learners: usize,
    pub concepts: usize,
}

impl Dimensions {
    pub fn new(questions: usize, learners: usize, concepts: usize) -> Result<Self> {
        if questions == 0 || learners == 0 || concepts == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        let dims = Dimensions {
            questions,
            learners,
            concepts,
        };
        if !dims.concepts_are_few() {
            log::warn!(
                "K = {concepts} exceeds min(Q, N) = {}; the model assumes few concepts",
                questions.min(learners)
            );
        }
        Ok(dims)
    }

    pub fn concepts_are_few(&self) -> bool {
        self.concepts <= self.questions.min(self.learners)
    }
}

/// A Q×N binary response matrix with an observation mask.
///
/// Values at unobserved positions are kept but never read by any estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    q: usize,
    n: usize,
    // column-major, index i + j*q
    values: Vec<u8>,
    mask: Vec<bool>,
    rows: Vec<Vec<(usize, bool)>>,
    cols: Vec<Vec<(usize, bool)>>,
}

impl ResponseMatrix {
    /// Builds from column-major `values` and `mask` of length `q * n`.
    pub fn new(q: usize, n: usize, values: Vec<u8>, mask: Vec<bool>) -> Result<Self> {
        if q == 0 || n == 0 {
            return Err(invalid("response matrix needs Q >= 1 and N >= 1"));
        }
        if values.len() != q * n || mask.len() != q * n {
            return Err(SparfaError::DimensionMismatch(format!(
                "expected {} entries, got values={} mask={}",
                q * n,
                values.len(),
                mask.len()
            )));
        }
        let mut rows = vec![Vec::new(); q];
        let mut cols = vec![Vec::new(); n];
        for j in 0..n {
            for i in 0..q {
                let idx = i + j * q;
                if !mask[idx] {
                    continue;
                }
                let y = match values[idx] {
                    0 => false,
                    1 => true,
                    v => return Err(invalid(format!("entry ({i}, {j}) = {v} is not binary"))),
                };
                rows[i].push((j, y));
                cols[j].push((i, y));
            }
        }
        Ok(ResponseMatrix {
            q,
            n,
            values,
            mask,
            rows,
            cols,
        })
    }

    /// Fully observed matrix from a row-major nested vector.
    pub fn full(rows: &[Vec<u8>]) -> Result<Self> {
        let opts: Vec<Vec<Option<u8>>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| Some(v)).collect())
            .collect();
        Self::from_options(&opts)
    }

    /// Row-major nested vector with `None` marking a missing response.
    pub fn from_options(rows: &[Vec<Option<u8>>]) -> Result<Self> {
        let q = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(SparfaError::DimensionMismatch("ragged rows".into()));
        }
        let mut values = vec![0u8; q * n];
        let mut mask = vec![false; q * n];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    values[i + j * q] = *v;
                    mask[i + j * q] = true;
                }
            }
        }
        Self::new(q, n, values, mask)
    }

    pub fn questions(&self) -> usize {
        self.q
    }

    pub fn learners(&self) -> usize {
        self.n
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        i < self.q && j < self.n && self.mask[i + j * self.q]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<bool> {
        self.is_observed(i, j).then(|| self.values[i + j * self.q] == 1)
    }

    /// Raw stored value, observed or not.
    pub fn raw(&self, i: usize, j: usize) -> u8 {
        self.values[i + j * self.q]
    }

    pub fn observed_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Observed `(learner, response)` pairs of question `i`.
    pub fn row(&self, i: usize) -> &[(usize, bool)] {
        &self.rows[i]
    }

    /// Observed `(question, response)` pairs of learner `j`.
    pub fn col(&self, j: usize) -> &[(usize, bool)] {
        &self.cols[j]
    }

    /// All observed `(i, j, y)` triples, ordered by question then learner.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, y)| (i, j, y)))
    }

    /// Fraction of observed responses that are correct.
    pub fn correct_rate(&self) -> Option<f64> {
        let total = self.observed_count();
        (total > 0).then(|| self.observed().filter(|t| t.2).count() as f64 / total as f64)
    }

    /// Same values, restricted to the given observed positions.
    pub fn restrict(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = self.mask.clone();
        for j in 0..self.n {
            for i in 0..self.q {
                let idx = i + j * self.q;
                if mask[idx] && !keep(i, j) {
                    mask[idx] = false;
                }
            }
        }
        Self::new(self.q, self.n, self.values.clone(), mask).expect("restriction of valid data")
    }

    /// Replaces the raw value at an unobserved or observed position.
    pub fn with_raw(&self, i: usize, j: usize, value: u8) -> Result<Self> {
        let mut values = self.values.clone();
        values[i + j * self.q] = value;
        Self::new(self.q, self.n, values, self.mask.clone())
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// True if no position is observed in both matrices.
    pub fn is_disjoint(&self, other: &ResponseMatrix) -> bool {
        self.q == other.q
            && self.n == other.n
            && self.mask.iter().zip(&other.mask).all(|(a, b)| !(*a && *b))
    }
}

/// Fitted or ground-truth factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    /// Q×K, non-negative.
    pub w: DMatrix<f64>,
    /// K×N.
    pub c: DMatrix<f64>,
    /// Length Q.
    pub mu: DVector<f64>,
    pub link: LinkKind,
}

impl FactorModel {
    pub fn new(w: DMatrix<f64>, c: DMatrix<f64>, mu: DVector<f64>, link: LinkKind) -> Result<Self> {
        if w.ncols() != c.nrows() || w.nrows() != mu.len() {
            return Err(SparfaError::DimensionMismatch(format!(
                "W {}x{}, C {}x{}, mu {}",
                w.nrows(),
                w.ncols(),
                c.nrows(),
                c.ncols(),
                mu.len()
            )));
        }
        if w.iter().any(|&v| v < 0.0) {
            return Err(invalid("W has negative entries"));
        }
        if w.iter().chain(c.iter()).chain(mu.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("model has non-finite entries"));
        }
        Ok(FactorModel { w, c, mu, link })
    }

    pub fn questions(&self) -> usize {
        self.w.nrows()
    }

    pub fn learners(&self) -> usize {
        self.c.ncols()
    }

    pub fn concepts(&self) -> usize {
        self.w.ncols()
    }

    /// `Z_{i,j} = w_iᵀ c_j + μ_i`.
    #[inline]
    pub fn slack_entry(&self, i: usize, j: usize) -> f64 {
        let mut z = self.mu[i];
        for k in 0..self.concepts() {
            z += self.w[(i, k)] * self.c[(k, j)];
        }
        z
    }

    /// Full Q×N slack matrix.
    pub fn slack(&self) -> DMatrix<f64> {
        let mut z = &self.w * &self.c;
        for (i, mut row) in z.row_iter_mut().enumerate() {
            row.add_scalar_mut(self.mu[i]);
        }
        z
    }

    fn check_data(&self, data: &ResponseMatrix) -> Result<()> {
        if data.questions() != self.questions() || data.learners() != self.learners() {
            return Err(SparfaError::DimensionMismatch(format!(
                "model is {}x{}, data is {}x{}",
                self.questions(),
                self.learners(),
                data.questions(),
                data.learners()
            )));
        }
        Ok(())
    }

    /// Log-likelihood over the observed entries.
    pub fn log_likelihood(&self, data: &ResponseMatrix) -> Result<f64> {
        self.check_data(data)?;
        Ok(data
            .observed()
            .map(|(i, j, y)| self.link.log_lik(y, self.slack_entry(i, j)))
            .sum())
    }

    /// Success probability `Φ(Z_{i,j})`.
    pub fn predict_prob(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.questions() || j >= self.learners() {
            return Err(SparfaError::IndexOutOfRange {
                row: i,
                col: j,
                rows: self.questions(),
                cols: self.learners(),
            });
        }
        Ok(self.link.cdf(self.slack_entry(i, j)))
    }

    /// Number of non-zero entries in W.
    pub fn w_nonzeros(&self) -> usize {
        self.w.iter().filter(|&&v| v != 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, q: usize, n: usize, k: usize, link: LinkKind) -> FactorModel {
        let w = DMatrix::from_fn(q, k, |_, _| rng.random::<f64>() * 2.0);
        let c = DMatrix::from_fn(k, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mu = DVector::from_fn(q, |_, _| rng.random::<f64>() - 0.5);
        FactorModel::new(w, c, mu, link).unwrap()
    }

    #[test]
    fn slack_examples() {
        let m = FactorModel::new(
            DMatrix::zeros(3, 2),
            DMatrix::from_element(2, 4, 7.0),
            DVector::from_element(3, 1.0),
            LinkKind::Probit,
        )
        .unwrap();
        assert!(m.slack().iter().all(|&z| z == 1.0));

        let m = FactorModel::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 3.0),
            DVector::from_element(1, -1.0),
            LinkKind::Probit,
        )
        .unwrap();
        assert_eq!(m.slack()[(0, 0)], 5.0);
    }

    #[test]
    fn slack_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 4, 3, 2, LinkKind::Probit);
        let z = m.slack();
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += m.w[(i, k)] * m.c[(k, j)];
                }
                acc += m.mu[i];
                assert_relative_eq!(z[(i, j)], acc, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rejects_negative_w_and_bad_dims() {
        let bad = FactorModel::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            LinkKind::Probit,
        );
        assert!(bad.is_err());
        let bad = FactorModel::new(DMatrix::zeros(2, 1), DMatrix::zeros(2, 1), DVector::zeros(2), LinkKind::Probit);
        assert!(matches!(bad, Err(SparfaError::DimensionMismatch(_))));
    }

    #[test]
    fn response_matrix_validation() {
        assert!(ResponseMatrix::full(&[vec![0, 2]]).is_err());
        // non-binary value at a masked-out position is fine
        let r = ResponseMatrix::new(1, 2, vec![1, 7], vec![true, false]).unwrap();
        assert_eq!(r.observed_count(), 1);
        assert_eq!(r.get(0, 1), None);
        assert!(ResponseMatrix::new(0, 2, vec![], vec![]).is_err());
    }

    #[test]
    fn log_likelihood_examples() {
        let m = FactorModel::new(DMatrix::zeros(2, 1), DMatrix::zeros(1, 2), DVector::zeros(2), LinkKind::Logit).unwrap();
        let empty = ResponseMatrix::new(2, 2, vec![0; 4], vec![false; 4]).unwrap();
        assert_eq!(m.log_likelihood(&empty).unwrap(), 0.0);
        let single = ResponseMatrix::from_options(&[vec![Some(1), None], vec![None, None]]).unwrap();
        assert_relative_eq!(m.log_likelihood(&single).unwrap(), -std::f64::consts::LN_2);
        let wrong = ResponseMatrix::full(&[vec![1]]).unwrap();
        assert!(m.log_likelihood(&wrong).is_err());
    }

    #[test]
    fn log_likelihood_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(&mut rng, 5, 5, 2, LinkKind::Probit);
        let rows: Vec<Vec<u8>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(0..2)).collect()).collect();
        let data = ResponseMatrix::full(&rows).unwrap();
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let z: f64 = (0..2).map(|k| m.w[(i, k)] * m.c[(k, j)]).sum::<f64>() + m.mu[i];
                let p = 0.5 * statrs::function::erf::erfc(-z / 2f64.sqrt());
                oracle += if rows[i][j] == 1 { p.ln() } else { (1.0 - p).ln() };
            }
        }
        assert_relative_eq!(m.log_likelihood(&data).unwrap(), oracle, max_relative = 1e-12);
    }

    #[test]
    fn predict_prob_examples() {
        let m = FactorModel::new(
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![0.0, 1.644_853_6]),
            LinkKind::Probit,
        )
        .unwrap();
        assert_eq!(m.predict_prob(0, 0).unwrap(), 0.5);
        assert!((m.predict_prob(1, 0).unwrap() - 0.95).abs() < 1e-6);
        assert!(matches!(m.predict_prob(2, 0), Err(SparfaError::IndexOutOfRange { .. })));
        let l = FactorModel::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DVector::from_element(1, 3f64.ln()), LinkKind::Logit)
            .unwrap();
        assert_relative_eq!(l.predict_prob(0, 0).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn zero_w_predictions_are_learner_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = random_model(&mut rng, 3, 6, 2, LinkKind::Probit);
        m.w.fill(0.0);
        for i in 0..3 {
            let p0 = m.predict_prob(i, 0).unwrap();
            for j in 1..6 {
                assert_eq!(m.predict_prob(i, j).unwrap(), p0);
            }
        }
    }

    #[test]
    fn log_likelihood_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = random_model(&mut rng, 4, 5, 2, LinkKind::Logit);
        let rows: Vec<Vec<Option<u8>>> = (0..4)
            .map(|_| (0..5).map(|_| rng.random_bool(0.7).then(|| rng.random_range(0..2))).collect())
            .collect();
        let data = ResponseMatrix::from_options(&rows).unwrap();
        let qp = [2, 0, 3, 1];
        let np = [4, 2, 0, 1, 3];
        let prow: Vec<Vec<Option<u8>>> = qp.iter().map(|&i| np.iter().map(|&j| rows[i][j]).collect()).collect();
        let pdata = ResponseMatrix::from_options(&prow).unwrap();
        let pm = FactorModel::new(
            DMatrix::from_fn(4, 2, |i, k| m.w[(qp[i], k)]),
            DMatrix::from_fn(2, 5, |k, j| m.c[(k, np[j])]),
            DVector::from_fn(4, |i, _| m.mu[qp[i]]),
            LinkKind::Logit,
        )
        .unwrap();
        assert_relative_eq!(
            m.log_likelihood(&data).unwrap(),
            pm.log_likelihood(&pdata).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn dimension_warning_flag() {
        assert!(Dimensions::new(3, 3, 2).unwrap().concepts_are_few());
        assert!(!Dimensions::new(3, 30, 5).unwrap().concepts_are_few());
        assert!(Dimensions::new(0, 3, 1).is_err());
    }
}
