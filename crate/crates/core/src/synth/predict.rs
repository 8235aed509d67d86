use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SparfaError};
use crate::model::{FactorModel, ResponseMatrix};
use crate::sparfa_m::{fit_sparfa_m, SparfaMConfig};

/// Prediction accuracy (threshold 0.5) and average likelihood
/// `(1/|Ω̄|) Σ p(Y_{i,j} | w_i, c_j)` over the held-out observations.
pub fn predict_heldout(model: &FactorModel, heldout: &ResponseMatrix) -> Result<(f64, f64)> {
    if heldout.questions() != model.questions() || heldout.learners() != model.learners() {
        return Err(SparfaError::DimensionMismatch("held-out matrix does not match the model".into()));
    }
    let total = heldout.observed_count();
    if total == 0 {
        return Err(SparfaError::NoObservations);
    }
    let (mut correct, mut lik) = (0usize, 0.0);
    for (i, j, y) in heldout.observed() {
        let p = model.link.cdf(model.slack_entry(i, j));
        if (p >= 0.5) == y {
            correct += 1;
        }
        lik += if y { p } else { 1.0 - p };
    }
    Ok((correct as f64 / total as f64, lik / total as f64))
}

/// Like [`predict_heldout`] but rejects a held-out set that overlaps training.
pub fn predict_disjoint(model: &FactorModel, train: &ResponseMatrix, heldout: &ResponseMatrix) -> Result<(f64, f64)> {
    if !train.is_disjoint(heldout) {
        return Err(invalid("held-out entries overlap the training observations"));
    }
    predict_heldout(model, heldout)
}

/// Accuracy of always predicting the most frequent training response.
pub fn majority_baseline(train: &ResponseMatrix, heldout: &ResponseMatrix) -> Result<f64> {
    let rate = train.correct_rate().ok_or(SparfaError::NoObservations)?;
    let guess = rate >= 0.5;
    let total = heldout.observed_count();
    if total == 0 {
        return Err(SparfaError::NoObservations);
    }
    Ok(heldout.observed().filter(|t| t.2 == guess).count() as f64 / total as f64)
}

fn shuffled_observed(data: &ResponseMatrix, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut idx: Vec<(usize, usize)> = data.observed().map(|(i, j, _)| (i, j)).collect();
    idx.shuffle(rng);
    idx
}

/// Moves a uniformly chosen `round(fraction·|Ω|)` observed entries into a
/// held-out matrix; returns `(train, heldout)`.
pub fn split_holdout(data: &ResponseMatrix, fraction: f64, rng: &mut ChaCha8Rng) -> Result<(ResponseMatrix, ResponseMatrix)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid("holdout fraction must lie in (0, 1)"));
    }
    let idx = shuffled_observed(data, rng);
    let count = ((idx.len() as f64) * fraction).round() as usize;
    let mut held = vec![false; data.questions() * data.learners()];
    for &(i, j) in &idx[..count] {
        held[i + j * data.questions()] = true;
    }
    let q = data.questions();
    let train = data.restrict(|i, j| !held[i + j * q]);
    let test = data.restrict(|i, j| held[i + j * q]);
    Ok((train, test))
}

/// Entry-level partition of Ω_obs into `folds` validation sets.
pub fn kfold_partition(data: &ResponseMatrix, folds: usize, seed: u64) -> Result<Vec<ResponseMatrix>> {
    if folds < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = shuffled_observed(data, &mut rng);
    if idx.len() < folds {
        return Err(invalid("a fold would have an empty validation set"));
    }
    let q = data.questions();
    let mut owner = vec![usize::MAX; q * data.learners()];
    for (pos, &(i, j)) in idx.iter().enumerate() {
        owner[i + j * q] = pos % folds;
    }
    Ok((0..folds).map(|f| data.restrict(|i, j| owner[i + j * q] == f)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub k: usize,
    pub lambda: f64,
    pub fold_likelihoods: Vec<f64>,
    pub mean_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub lambda: f64,
    pub scores: Vec<CvScore>,
}

/// Chooses `(K, λ)` for SPARFA-M by maximising mean validation likelihood;
/// ties go to the smaller K, then the larger λ.
pub fn cross_validate(
    data: &ResponseMatrix,
    k_grid: &[usize],
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
    base: &SparfaMConfig,
) -> Result<CvResult> {
    if k_grid.is_empty() || lambda_grid.is_empty() {
        return Err(SparfaError::EmptyGrid);
    }
    let validation = kfold_partition(data, folds, seed)?;
    let q = data.questions();
    let trains: Vec<ResponseMatrix> = validation
        .iter()
        .map(|v| {
            let mask = v.mask().to_vec();
            data.restrict(|i, j| !mask[i + j * q])
        })
        .collect();
    let candidates: Vec<(usize, f64)> = k_grid.iter().flat_map(|&k| lambda_grid.iter().map(move |&l| (k, l))).collect();
    let scores: Vec<CvScore> = candidates
        .par_iter()
        .map(|&(k, lambda)| {
            let cfg = SparfaMConfig { lambda_l1: lambda, ..base.clone() };
            let fold_likelihoods = trains
                .iter()
                .zip(&validation)
                .map(|(train, val)| {
                    let (model, _) = fit_sparfa_m(train, k, &cfg)?;
                    Ok(predict_heldout(&model, val)?.1)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_likelihood = fold_likelihoods.iter().sum::<f64>() / folds as f64;
            Ok(CvScore { k, lambda, fold_likelihoods, mean_likelihood })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (idx, s) in scores.iter().enumerate().skip(1) {
        let b = &scores[best];
        let better = s.mean_likelihood > b.mean_likelihood
            || (s.mean_likelihood == b.mean_likelihood && (s.k < b.k || (s.k == b.k && s.lambda > b.lambda)));
        if better {
            best = idx;
        }
    }
    Ok(CvResult { k: scores[best].k, lambda: scores[best].lambda, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::LinkKind;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn random_data(seed: u64, q: usize, n: usize) -> ResponseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<Option<u8>>> = (0..q)
            .map(|_| (0..n).map(|_| rng.random_bool(0.9).then(|| rng.random_range(0..2))).collect())
            .collect();
        ResponseMatrix::from_options(&rows).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let data = ResponseMatrix::full(&[vec![1, 0], vec![0, 1]]).unwrap();
        let model = FactorModel::new(
            DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 10.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
            DVector::zeros(2),
            LinkKind::Probit,
        )
        .unwrap();
        let (acc, lik) = predict_heldout(&model, &data).unwrap();
        assert_eq!(acc, 1.0);
        assert!(lik > 0.99);
    }

    #[test]
    fn zero_slack_has_half_likelihood() {
        let data = random_data(1, 4, 5);
        let model = FactorModel::new(DMatrix::zeros(4, 2), DMatrix::zeros(2, 5), DVector::zeros(4), LinkKind::Logit).unwrap();
        assert_eq!(predict_heldout(&model, &data).unwrap().1, 0.5);
    }

    #[test]
    fn hand_loop_twenty_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_data(3, 6, 8);
        let (_, held) = split_holdout(&data, 20.0 / data.observed_count() as f64, &mut rng).unwrap();
        assert_eq!(held.observed_count(), 20);
        let model = FactorModel::new(
            DMatrix::from_fn(6, 2, |_, _| rng.random::<f64>()),
            DMatrix::from_fn(2, 8, |_, _| rng.random::<f64>() * 2.0 - 1.0),
            DVector::from_fn(6, |_, _| rng.random::<f64>() - 0.5),
            LinkKind::Probit,
        )
        .unwrap();
        let (acc, lik) = predict_heldout(&model, &held).unwrap();
        let (mut hits, mut sum) = (0.0, 0.0);
        for i in 0..6 {
            for j in 0..8 {
                if let Some(y) = held.get(i, j) {
                    let mut z = model.mu[i];
                    for k in 0..2 {
                        z += model.w[(i, k)] * model.c[(k, j)];
                    }
                    let p = crate::link::norm_cdf(z);
                    if (p >= 0.5) == y {
                        hits += 1.0;
                    }
                    sum += if y { p } else { 1.0 - p };
                }
            }
        }
        assert!((acc - hits / 20.0).abs() < 1e-15);
        assert!((lik - sum / 20.0).abs() < 1e-15);
    }

    #[test]
    fn empty_and_overlapping_heldout() {
        let data = random_data(4, 3, 3);
        let model = FactorModel::new(DMatrix::zeros(3, 1), DMatrix::zeros(1, 3), DVector::zeros(3), LinkKind::Probit).unwrap();
        let empty = data.restrict(|_, _| false);
        assert_eq!(predict_heldout(&model, &empty), Err(SparfaError::NoObservations));
        assert!(predict_disjoint(&model, &data, &data).is_err());
    }

    #[test]
    fn folds_partition_observations() {
        let data = random_data(5, 10, 12);
        let folds = kfold_partition(&data, 4, 9).unwrap();
        let q = data.questions();
        for i in 0..q {
            for j in 0..12 {
                let owners = folds.iter().filter(|f| f.is_observed(i, j)).count();
                assert_eq!(owners, usize::from(data.is_observed(i, j)));
            }
        }
        assert!(folds.iter().all(|f| f.observed_count() > 0));
        assert!(kfold_partition(&data, 1, 0).is_err());
        let tiny = data.restrict(|i, j| i == 0 && j < 2);
        assert!(kfold_partition(&tiny, 4, 0).is_err());
    }

    #[test]
    fn single_candidate_cv() {
        let data = random_data(6, 8, 10);
        let cfg = SparfaMConfig { max_outer: 20, ..SparfaMConfig::default() };
        let cv = cross_validate(&data, &[2], &[0.5], 3, 1, &cfg).unwrap();
        assert_eq!((cv.k, cv.lambda), (2, 0.5));
        assert_eq!(cv.scores.len(), 1);
        assert_eq!(cv.scores[0].fold_likelihoods.len(), 3);
    }

    #[test]
    fn holdout_split_is_disjoint_and_covering() {
        let data = random_data(7, 9, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train, test) = split_holdout(&data, 0.2, &mut rng).unwrap();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.observed_count() + test.observed_count(), data.observed_count());
        assert_eq!(test.observed_count(), (data.observed_count() as f64 * 0.2).round() as usize);
    }
}
