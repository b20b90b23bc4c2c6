//! Greedy orthogonal least squares.
//!
//! Columns are scaled to unit norm over the training set. At each step the
//! column best correlated with the target is picked, the remaining columns are
//! orthogonalized against it and renormalized, and the target's coefficient on
//! the new orthonormal direction is recorded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual column norms below this (relative to the unit-normalized column) are treated as dependent.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    /// Number of input features.
    pub n_features: usize,
    /// Per-feature training scale `s_k = sqrt(sum_i phi_k(x_i)^2)`; 0 marks a dropped column.
    pub scales: Vec<f64>,
    /// Selected feature indices `k_m` in selection order.
    pub selected: Vec<usize>,
    /// Orthogonalized weights `w~_m`.
    pub ortho_weights: Vec<f64>,
    /// Column `m` holds `R_{n,m} = <q_n, a_{k_m}>` for `n <= m` (upper-triangular factor).
    pub r: Vec<Vec<f64>>,
    /// `sum_i f(x_i)^2` on the training set.
    pub target_energy: f64,
    /// Training residual energy `sum_i |f_m(x_i) - f(x_i)|^2` after each step `m = 1..=M`,
    /// measured on the residual vector.
    pub train_sse: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits up to `m_max` terms. `features[i]` is the feature row of sample `i`.
pub fn ols_fit(features: &[Vec<f64>], targets: &[f64], m_max: usize) -> Result<OlsModel> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            got: targets.len(),
        });
    }
    let k = features[0].len();
    if let Some(row) = features.iter().find(|r| r.len() != k) {
        return Err(Error::SizeMismatch {
            expected: k,
            got: row.len(),
        });
    }

    let mut scales = vec![0.0; k];
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut dropped = 0;
    for c in 0..k {
        let col: Vec<f64> = features.iter().map(|r| r[c]).collect();
        let s = dot(&col, &col).sqrt();
        if s > 0.0 && s.is_finite() {
            scales[c] = s;
            columns.push(col.iter().map(|v| v / s).collect());
        } else {
            dropped += 1;
            columns.push(Vec::new());
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} all-zero feature columns");
    }

    // Working copies orthogonalized against the picks so far, with their norms.
    let mut work = columns.clone();
    let mut norms: Vec<f64> = scales.iter().map(|&s| if s > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut active: Vec<bool> = scales.iter().map(|&s| s > 0.0).collect();

    let target_energy = dot(targets, targets);
    let mut model = OlsModel {
        n_features: k,
        scales,
        selected: Vec::new(),
        ortho_weights: Vec::new(),
        r: Vec::new(),
        target_energy,
        train_sse: Vec::new(),
    };
    let mut qs: Vec<Vec<f64>> = Vec::new();
    let mut residual = targets.to_vec();

    for _ in 0..m_max {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..k {
            if !active[c] {
                continue;
            }
            let corr = (dot(targets, &work[c]) / norms[c]).abs();
            if best.is_none_or(|(_, b)| corr > b) {
                best = Some((c, corr));
            }
        }
        let Some((pick, _)) = best else {
            log::info!("stopped at rank {} before reaching {m_max} terms", qs.len());
            break;
        };
        active[pick] = false;

        let mut q: Vec<f64> = work[pick].iter().map(|v| v / norms[pick]).collect();
        // one re-orthogonalization pass keeps the basis orthonormal to ~1e-15
        for prev in &qs {
            let d = dot(prev, &q);
            q.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
        }
        let qn = dot(&q, &q).sqrt();
        q.iter_mut().for_each(|v| *v /= qn);

        let a = &columns[pick];
        let mut rcol: Vec<f64> = qs.iter().map(|prev| dot(prev, a)).collect();
        rcol.push(dot(&q, a));
        let w = dot(targets, &q);
        residual.iter_mut().zip(&q).for_each(|(r, b)| *r -= w * b);

        for c in 0..k {
            if !active[c] {
                continue;
            }
            let d = dot(&q, &work[c]);
            work[c].iter_mut().zip(&q).for_each(|(a, b)| *a -= d * b);
            norms[c] = dot(&work[c], &work[c]).sqrt();
            if norms[c] < RANK_TOL {
                active[c] = false;
            }
        }

        model.selected.push(pick);
        model.ortho_weights.push(w);
        model.r.push(rcol);
        model.train_sse.push(dot(&residual, &residual));
        qs.push(q);
    }
    Ok(model)
}

impl OlsModel {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Weights on the original (unnormalized) features of the first `m` terms,
    /// as `(feature index, weight)` in selection order.
    pub fn dense_weights(&self, m: usize) -> Vec<(usize, f64)> {
        let m = m.min(self.len());
        // back substitution R v = w~ on the leading m x m block
        let mut v = vec![0.0; m];
        for row in (0..m).rev() {
            let mut acc = self.ortho_weights[row];
            for col in row + 1..m {
                acc -= self.r[col][row] * v[col];
            }
            v[row] = acc / self.r[row][row];
        }
        (0..m)
            .map(|i| {
                let k = self.selected[i];
                (k, v[i] / self.scales[k])
            })
            .collect()
    }

    /// `f_m(x) = sum_m w_m phi_{k_m}(x)`.
    pub fn predict(&self, x: &[f64], m: usize) -> f64 {
        self.dense_weights(m).iter().map(|&(k, w)| w * x[k]).sum()
    }

    /// `f_m(x) = sum_m w~_m q_m(x)` using the recursion
    /// `q_m(x) = (a_{k_m}(x) - sum_{n<m} R_{n,m} q_n(x)) / R_{m,m}`.
    pub fn predict_orthogonal(&self, x: &[f64], m: usize) -> f64 {
        self.orthogonal_path(x).into_iter().take(m.min(self.len())).sum()
    }

    /// Contributions `w~_m q_m(x)` of every term, in order; partial sums give
    /// the prediction at each model size.
    pub fn orthogonal_path(&self, x: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.len());
        let mut out = Vec::with_capacity(self.len());
        for (m, &k) in self.selected.iter().enumerate() {
            let mut v = x[k] / self.scales[k];
            for (n, qn) in q.iter().enumerate() {
                v -= self.r[m][n] * qn;
            }
            v /= self.r[m][m];
            out.push(self.ortho_weights[m] * v);
            q.push(v);
        }
        out
    }

    /// Orthogonalized weight of every input feature; zero when not selected among the first `m`.
    pub fn sparse_ortho_weights(&self, m: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.n_features];
        for i in 0..m.min(self.len()) {
            w[self.selected[i]] = self.ortho_weights[i];
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        (x, y)
    }

    #[test]
    fn exact_single_feature_target() {
        let (x, _) = random_problem(30, 6, 1);
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[1]).collect();
        let m = ols_fit(&x, &y, 3).unwrap();
        assert_eq!(m.selected[0], 1);
        assert!(m.train_sse[0] < 1e-10);
        assert!((m.dense_weights(1)[0].1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_least_squares_on_selected_support() {
        let (x, y) = random_problem(50, 20, 2);
        let model = ols_fit(&x, &y, 20).unwrap();
        for m in 1..=model.len() {
            let cols = &model.selected[..m];
            let a = DMatrix::from_fn(50, m, |i, j| x[i][cols[j]]);
            let b = DVector::from_column_slice(&y);
            let sol = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
            let resid = (&a * &sol - &b).norm_squared();
            assert!((resid - model.train_sse[m - 1]).abs() <= 1e-8 * resid.max(1.0), "m={m}");
            for (i, (_, w)) in model.dense_weights(m).iter().enumerate() {
                assert!((w - sol[i]).abs() < 1e-8 * sol[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn orthogonal_and_dense_forms_agree_off_sample() {
        let (x, y) = random_problem(40, 15, 3);
        let (probe, _) = random_problem(10, 15, 4);
        let model = ols_fit(&x, &y, 12).unwrap();
        for row in &probe {
            for m in [1, 5, 12] {
                let a = model.predict(row, m);
                let b = model.predict_orthogonal(row, m);
                assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn duplicated_columns_stop_at_rank_and_tie_to_lowest_index() {
        let (mut x, _) = random_problem(20, 3, 5);
        for r in x.iter_mut() {
            let v = r[0];
            r.push(v);
        }
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let model = ols_fit(&x, &y, 10).unwrap();
        assert_eq!(model.selected[0], 0);
        assert_eq!(model.len(), 3);
    }

    #[test]
    fn zero_columns_are_dropped() {
        let (mut x, y) = random_problem(20, 3, 6);
        x.iter_mut().for_each(|r| r[1] = 0.0);
        let model = ols_fit(&x, &y, 5).unwrap();
        assert_eq!(model.scales[1], 0.0);
        assert!(!model.selected.contains(&1));
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(ols_fit(&[vec![1.0]], &[1.0], 1).is_err());
        assert!(ols_fit(&[vec![1.0], vec![2.0]], &[1.0], 1).is_err());
    }
}
