//! Non-negative K-SVD baseline: `Y ≈ W C` on the raw `{0,1}` values, with
//! `W ≥ 0` row-sparse and `C` unconstrained. The link function is ignored.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SparfaError};
use crate::model::{Dimensions, ResponseMatrix};
use crate::nnls::nnls;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsvdConfig {
    pub k: usize,
    /// Maximum number of nonzeros `s_i` allowed in row `i` of W.
    pub row_sparsity: Vec<usize>,
    pub max_iters: usize,
    /// Inner alternating passes of each rank-one update.
    pub rank1_iters: usize,
    pub seed: u64,
}

impl KsvdConfig {
    pub fn uniform(q: usize, k: usize, s: usize, seed: u64) -> Self {
        KsvdConfig { k, row_sparsity: vec![s; q], max_iters: 100, rank1_iters: 10, seed }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("K must be >= 1"));
        }
        if self.row_sparsity.len() != q {
            return Err(SparfaError::DimensionMismatch(format!(
                "{} row sparsities for {q} questions",
                self.row_sparsity.len()
            )));
        }
        if let Some(s) = self.row_sparsity.iter().find(|&&s| s > self.k) {
            return Err(invalid(format!("row sparsity {s} exceeds K = {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsvdFit {
    pub w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Observed-entry squared residual after initialisation and after each pass.
    pub residuals: Vec<f64>,
}

/// Non-negative OMP: greedily adds the atom (row of `dictionary`) with the
/// largest signed inner product with the residual, refitting by NNLS.
pub fn nn_omp(dictionary: &DMatrix<f64>, target: &DVector<f64>, s: usize) -> Result<DVector<f64>> {
    let k = dictionary.nrows();
    if dictionary.ncols() != target.len() {
        return Err(SparfaError::DimensionMismatch(format!(
            "dictionary has {} columns, target has {} entries",
            dictionary.ncols(),
            target.len()
        )));
    }
    if s > k {
        return Err(invalid(format!("sparsity {s} exceeds {k} atoms")));
    }
    let mut code = DVector::zeros(k);
    let mut support: Vec<usize> = Vec::with_capacity(s);
    let mut residual = target.clone();
    let scale = 1e-12 * target.norm().max(1.0);
    while support.len() < s {
        let corr = dictionary * &residual;
        let pick = (0..k)
            .filter(|j| !support.contains(j))
            .max_by(|&a, &b| corr[a].total_cmp(&corr[b]));
        let Some(j) = pick.filter(|&j| corr[j] > scale) else { break };
        support.push(j);
        let sub = DMatrix::from_fn(target.len(), support.len(), |r, c| dictionary[(support[c], r)]);
        let coef = nnls(&sub, target);
        code.fill(0.0);
        for (&j, &v) in support.iter().zip(coef.iter()) {
            code[j] = v;
        }
        residual = target - dictionary.transpose() * &code;
    }
    Ok(code)
}

/// Alternating masked rank-one refit of `E ≈ w cᵀ` with `w ≥ 0`; each half
/// step is an exact block minimiser so the masked residual never increases.
pub fn dict_update_rank1(
    e: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    w: &DVector<f64>,
    c: &DVector<f64>,
    iters: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (m, n) = e.shape();
    if mask.shape() != (m, n) || w.len() != m || c.len() != n {
        return Err(SparfaError::DimensionMismatch("rank-one update operands".into()));
    }
    let mut w = w.map(|v| v.max(0.0));
    let mut c = c.clone();
    for _ in 0..iters {
        for j in 0..n {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..m {
                if mask[(i, j)] {
                    num += w[i] * e[(i, j)];
                    den += w[i] * w[i];
                }
            }
            if den > 0.0 {
                c[j] = num / den;
            }
        }
        for i in 0..m {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..n {
                if mask[(i, j)] {
                    num += c[j] * e[(i, j)];
                    den += c[j] * c[j];
                }
            }
            if den > 0.0 {
                w[i] = (num / den).max(0.0);
            }
        }
    }
    Ok((w, c))
}

/// Observed-entry squared residual of `Y − W C`.
pub fn masked_residual(data: &ResponseMatrix, w: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    (0..data.questions()).map(|i| row_residual(data, i, &w.row(i).transpose(), c)).sum()
}

fn row_residual(data: &ResponseMatrix, i: usize, w_row: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    data.row(i)
        .iter()
        .map(|&(j, y)| {
            let fit: f64 = (0..c.nrows()).map(|k| w_row[k] * c[(k, j)]).sum();
            let r = y as u8 as f64 - fit;
            r * r
        })
        .sum()
}

fn observed_row(data: &ResponseMatrix, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(data.learners());
    for &(j, y) in data.row(i) {
        v[j] = y as u8 as f64;
    }
    v
}

/// Dictionary learning with NN-OMP coding and masked rank-one updates.
pub fn fit_ksvd_plus(data: &ResponseMatrix, config: &KsvdConfig) -> Result<KsvdFit> {
    let (q, n, k) = (data.questions(), data.learners(), config.k);
    Dimensions::new(q, n, k)?;
    config.validate(q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut c = DMatrix::zeros(k, n);
    let seeds = sample(&mut rng, q, k.min(q)).into_vec();
    for kk in 0..k {
        let mut atom = seeds.get(kk).map(|&i| observed_row(data, i)).unwrap_or_else(|| DVector::zeros(n));
        if atom.norm() == 0.0 {
            atom = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        }
        c.set_row(kk, &(atom.normalize()).transpose());
    }
    let mut w = DMatrix::zeros(q, k);
    let mut residuals = vec![masked_residual(data, &w, &c)];

    for _ in 0..config.max_iters {
        // sparse coding, keeping the previous row when it fits better
        let rows: Vec<DVector<f64>> = (0..q)
            .into_par_iter()
            .map(|i| {
                let obs = data.row(i);
                let dict = DMatrix::from_fn(k, obs.len(), |kk, t| c[(kk, obs[t].0)]);
                let target = DVector::from_iterator(obs.len(), obs.iter().map(|&(_, y)| y as u8 as f64));
                let prev = w.row(i).transpose();
                let code = nn_omp(&dict, &target, config.row_sparsity[i]).unwrap_or_else(|_| prev.clone());
                if row_residual(data, i, &code, &c) < row_residual(data, i, &prev, &c) {
                    code
                } else {
                    prev
                }
            })
            .collect();
        for (i, r) in rows.iter().enumerate() {
            w.set_row(i, &r.transpose());
        }

        for kk in 0..k {
            let users: Vec<usize> = (0..q).filter(|&i| w[(i, kk)] > 0.0).collect();
            if users.is_empty() {
                reseed_atom(data, &w, &mut c, kk);
                continue;
            }
            let mut e = DMatrix::zeros(users.len(), n);
            let mut mask = DMatrix::from_element(users.len(), n, false);
            for (r, &i) in users.iter().enumerate() {
                for &(j, y) in data.row(i) {
                    let others: f64 = (0..k).filter(|&t| t != kk).map(|t| w[(i, t)] * c[(t, j)]).sum();
                    e[(r, j)] = y as u8 as f64 - others;
                    mask[(r, j)] = true;
                }
            }
            let w_col = DVector::from_iterator(users.len(), users.iter().map(|&i| w[(i, kk)]));
            let c_row = c.row(kk).transpose();
            let (w_new, c_new) = dict_update_rank1(&e, &mask, &w_col, &c_row, config.rank1_iters)?;
            let norm = c_new.norm();
            if norm == 0.0 {
                for &i in &users {
                    w[(i, kk)] = 0.0;
                }
                reseed_atom(data, &w, &mut c, kk);
                continue;
            }
            for (r, &i) in users.iter().enumerate() {
                w[(i, kk)] = w_new[r] * norm;
            }
            c.set_row(kk, &(c_new / norm).transpose());
        }

        let res = masked_residual(data, &w, &c);
        let prev = *residuals.last().expect("non-empty");
        residuals.push(res);
        if prev - res <= 1e-12 * prev.max(1e-300) {
            break;
        }
    }
    Ok(KsvdFit { w, c, residuals })
}

/// Replaces an unused atom by the normalised observed row with the largest residual.
fn reseed_atom(data: &ResponseMatrix, w: &DMatrix<f64>, c: &mut DMatrix<f64>, kk: usize) {
    let worst = (0..data.questions())
        .map(|i| (i, row_residual(data, i, &w.row(i).transpose(), c)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    if let Some((i, _)) = worst {
        let atom = observed_row(data, i);
        let norm = atom.norm();
        if norm > 0.0 {
            c.set_row(kk, &(atom / norm).transpose());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn residual(e: &DMatrix<f64>, mask: &DMatrix<bool>, w: &DVector<f64>, c: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..e.nrows() {
            for j in 0..e.ncols() {
                if mask[(i, j)] {
                    s += (e[(i, j)] - w[i] * c[j]).powi(2);
                }
            }
        }
        s
    }

    #[test]
    fn omp_zero_sparsity_and_no_admissible_atom() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let t = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(nn_omp(&d, &t, 0).unwrap(), DVector::zeros(2));
        let neg = DVector::from_vec(vec![-1.0, -2.0, 3.0]);
        assert_eq!(nn_omp(&d, &neg, 2).unwrap(), DVector::zeros(2));
        assert!(nn_omp(&d, &t, 3).is_err());
    }

    #[test]
    fn omp_orthonormal_exact_match() {
        let d = DMatrix::<f64>::identity(4, 4);
        let t = d.row(2).transpose() * 3.0;
        let code = nn_omp(&d, &t, 2).unwrap();
        assert_eq!(code, DVector::from_vec(vec![0.0, 0.0, 3.0, 0.0]));
    }

    #[test]
    fn omp_support_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut agree = 0;
        for _ in 0..50 {
            let d = DMatrix::from_fn(4, 12, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let (a, b) = (rng.random_range(0..4), rng.random_range(0..3));
            let b = if b >= a { b + 1 } else { b };
            let mut x = DVector::zeros(4);
            x[a] = 0.5 + rng.random::<f64>();
            x[b] = 0.5 + rng.random::<f64>();
            let t = d.transpose() * &x;
            let code = nn_omp(&d, &t, 2).unwrap();
            // oracle: NNLS over every size-2 support
            let mut best = (f64::INFINITY, (0, 0));
            for p in 0..4 {
                for q in p + 1..4 {
                    let sub = DMatrix::from_fn(12, 2, |r, c| d[(if c == 0 { p } else { q }, r)]);
                    let z = nnls(&sub, &t);
                    let r = (&sub * z - &t).norm_squared();
                    if r < best.0 {
                        best = (r, (p, q));
                    }
                }
            }
            let support: Vec<usize> = (0..4).filter(|&j| code[j] > 0.0).collect();
            let (p, q) = best.1;
            if support == vec![p, q] {
                agree += 1;
            }
        }
        assert!(agree >= 45, "{agree}/50");
    }

    #[test]
    fn rank_one_exact_recovery() {
        let w = DVector::from_vec(vec![1.0, 0.5, 2.0, 0.0]);
        let c = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.7, -0.2]);
        let e = &w * c.transpose();
        let mask = DMatrix::from_element(4, 5, true);
        let (w1, c1) = dict_update_rank1(&e, &mask, &DVector::from_element(4, 1.0), &DVector::zeros(5), 30).unwrap();
        let rel = (&w1 * c1.transpose() - &e).norm() / e.norm();
        assert!(rel < 1e-8, "{rel}");
        assert!(w1.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rank_one_residual_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = DMatrix::from_fn(6, 7, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mask = DMatrix::from_fn(6, 7, |_, _| rng.random_bool(0.7));
        let mut w = DVector::from_element(6, 1.0);
        let mut c = DVector::from_fn(7, |_, _| rng.random::<f64>());
        let mut prev = residual(&e, &mask, &w, &c);
        for _ in 0..50 {
            (w, c) = dict_update_rank1(&e, &mask, &w, &c, 1).unwrap();
            let r = residual(&e, &mask, &w, &c);
            assert!(r <= prev + 1e-12);
            prev = r;
        }
    }

    #[test]
    fn rank_one_matches_grid_oracle() {
        let e = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.3, 0.8, 1.2, 0.1, 0.2, -0.5, 0.9]);
        let mask = DMatrix::from_element(3, 3, true);
        let (w, c) = dict_update_rank1(&e, &mask, &DVector::from_element(3, 1.0), &DVector::zeros(3), 500).unwrap();
        let got = residual(&e, &mask, &w, &c);
        // unit w in the non-negative orthant, optimal c = Eᵀw
        let steps = 600;
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=steps {
                let (th, ph) = (a as f64 / steps as f64 * std::f64::consts::FRAC_PI_2, b as f64 / steps as f64 * std::f64::consts::FRAC_PI_2);
                let u = DVector::from_vec(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                let r = e.norm_squared() - (e.transpose() * u).norm_squared();
                best = best.min(r);
            }
        }
        assert!(got <= best + 1e-9, "{got} vs {best}");
        assert!(got >= best - 1e-4, "{got} vs {best}");
    }

    fn rank2_instance(seed: u64, p_obs: f64) -> (ResponseMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, n) = (20, 30);
        let patterns = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let mut w = DMatrix::zeros(q, 2);
        for i in 0..q {
            let p = patterns[rng.random_range(0..3)];
            w[(i, 0)] = p[0];
            w[(i, 1)] = p[1];
        }
        let mut c = DMatrix::zeros(2, n);
        for j in 0..n {
            c[(rng.random_range(0..2), j)] = 1.0;
        }
        let y = &w * &c;
        let rows: Vec<Vec<Option<u8>>> = (0..q)
            .map(|i| (0..n).map(|j| rng.random_bool(p_obs).then_some(y[(i, j)] as u8)).collect())
            .collect();
        (ResponseMatrix::from_options(&rows).unwrap(), w)
    }

    #[test]
    fn respects_row_sparsity_and_monotone_residual() {
        let (data, w_true) = rank2_instance(1, 0.8);
        let s: Vec<usize> = (0..20).map(|i| (0..2).filter(|&k| w_true[(i, k)] > 0.0).count()).collect();
        let cfg = KsvdConfig { k: 2, row_sparsity: s.clone(), max_iters: 50, rank1_iters: 5, seed: 3 };
        let fit = fit_ksvd_plus(&data, &cfg).unwrap();
        for i in 0..20 {
            assert!(fit.w.row(i).iter().filter(|&&v| v != 0.0).count() <= s[i]);
        }
        assert!(fit.w.iter().all(|&v| v >= 0.0));
        for pair in fit.residuals.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }

    #[test]
    fn zero_sparsity_gives_zero_w() {
        let (data, _) = rank2_instance(2, 1.0);
        let cfg = KsvdConfig::uniform(20, 2, 0, 1);
        let fit = fit_ksvd_plus(&data, &cfg).unwrap();
        assert_eq!(fit.w, DMatrix::zeros(20, 2));
    }

    #[test]
    fn unobserved_entries_never_matter() {
        let (data, _) = rank2_instance(3, 0.5);
        let cfg = KsvdConfig::uniform(20, 2, 2, 5);
        let a = fit_ksvd_plus(&data, &cfg).unwrap();
        let flipped: Vec<u8> = data
            .values()
            .iter()
            .zip(data.mask())
            .map(|(&v, &m)| if m { v } else { 1 - v.min(1) })
            .collect();
        let other = ResponseMatrix::new(20, 30, flipped, data.mask().to_vec()).unwrap();
        let b = fit_ksvd_plus(&other, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        let (data, _) = rank2_instance(2, 1.0);
        assert!(fit_ksvd_plus(&data, &KsvdConfig::uniform(19, 2, 1, 1)).is_err());
        assert!(fit_ksvd_plus(&data, &KsvdConfig::uniform(20, 2, 3, 1)).is_err());
    }
}
