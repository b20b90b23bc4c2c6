//! Bagged OLS: each bag fits on a random subsample and picks its own model
//! size on the samples it left out.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mae, rmse};
use super::ols::{ols_fit, OlsModel};
use crate::error::{Error, Result};
use crate::numeric::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Mae,
    Rmse,
}

impl Criterion {
    pub fn eval(self, pred: &[f64], truth: &[f64]) -> f64 {
        match self {
            Criterion::Mae => mae(pred, truth),
            Criterion::Rmse => rmse(pred, truth),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Mae => "mae",
            Criterion::Rmse => "rmse",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mae" => Ok(Criterion::Mae),
            "rmse" => Ok(Criterion::Rmse),
            other => Err(Error::InvalidParameter(format!("unknown selection criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BagParams {
    /// Percentage of the training set each bag fits on.
    pub beta: f64,
    /// Number of bags.
    pub bags: usize,
    pub m_max: usize,
    pub criterion: Criterion,
    pub seed: u64,
}

impl Default for BagParams {
    fn default() -> Self {
        BagParams {
            beta: 90.0,
            bags: 10,
            m_max: 3 << 9,
            criterion: Criterion::Mae,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub model: OlsModel,
    /// Model size chosen on the held-out samples.
    pub m_bar: usize,
    /// Held-out criterion value at `m_bar`.
    pub holdout_error: f64,
    /// Sorted training-set indices the bag was fitted on.
    pub held_in: Vec<usize>,
    /// Dense weights of the first `m_bar` terms.
    pub weights: Vec<(usize, f64)>,
}

impl Bag {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.weights.iter().map(|&(k, w)| w * x[k]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedModel {
    pub params: BagParams,
    pub bags: Vec<Bag>,
}

/// Number of held-in samples for `n` training samples at `beta` percent.
pub fn held_in_count(n: usize, beta: f64) -> Result<usize> {
    if !(beta > 0.0 && beta < 100.0) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0, 100), got {beta}")));
    }
    let k = (beta / 100.0 * n as f64).round() as usize;
    if k < 2 || n - k.min(n) < 1 {
        return Err(Error::DegenerateSplit(format!(
            "beta = {beta}% of {n} samples leaves {k} held in and {} held out",
            n.saturating_sub(k)
        )));
    }
    Ok(k)
}

pub fn bagged_fit(features: &[Vec<f64>], targets: &[f64], params: &BagParams) -> Result<BaggedModel> {
    if params.bags == 0 {
        return Err(Error::InvalidParameter("bag count must be at least 1".into()));
    }
    let n = features.len();
    if targets.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            got: targets.len(),
        });
    }
    let k = held_in_count(n, params.beta)?;
    let bags = (0..params.bags)
        .into_par_iter()
        .map(|b| fit_bag(features, targets, k, params, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaggedModel { params: *params, bags })
}

fn fit_bag(features: &[Vec<f64>], targets: &[f64], k: usize, params: &BagParams, b: usize) -> Result<Bag> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, b as u64));
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let mut held_in = order[..k].to_vec();
    let mut held_out = order[k..].to_vec();
    held_in.sort_unstable();
    held_out.sort_unstable();

    let x_in: Vec<Vec<f64>> = held_in.iter().map(|&i| features[i].clone()).collect();
    let y_in: Vec<f64> = held_in.iter().map(|&i| targets[i]).collect();
    let model = ols_fit(&x_in, &y_in, params.m_max)?;
    if model.is_empty() {
        return Err(Error::DegenerateSplit("no feature could be selected".into()));
    }

    let truth: Vec<f64> = held_out.iter().map(|&i| targets[i]).collect();
    let paths: Vec<Vec<f64>> = held_out.iter().map(|&i| model.orthogonal_path(&features[i])).collect();
    let mut pred = vec![0.0; held_out.len()];
    let (mut m_bar, mut best) = (0, f64::INFINITY);
    for m in 0..model.len() {
        for (p, path) in pred.iter_mut().zip(&paths) {
            *p += path[m];
        }
        let e = params.criterion.eval(&pred, &truth);
        if e < best {
            best = e;
            m_bar = m + 1;
        }
    }
    let weights = model.dense_weights(m_bar);
    Ok(Bag {
        model,
        m_bar,
        holdout_error: best,
        held_in,
        weights,
    })
}

impl BaggedModel {
    /// Mean of the per-bag predictions.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.bags.iter().map(|b| b.predict(x)).sum();
        sum / self.bags.len() as f64
    }

    pub fn mean_m_bar(&self) -> f64 {
        self.bags.iter().map(|b| b.m_bar as f64).sum::<f64>() / self.bags.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn problem(n: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = x
            .iter()
            .map(|r| 3.0 * r[0] - r[2] + 0.05 * rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn seeded_fits_are_identical() {
        let (x, y) = problem(60, 10, 1);
        let p = BagParams {
            beta: 80.0,
            bags: 4,
            m_max: 8,
            ..Default::default()
        };
        assert_eq!(bagged_fit(&x, &y, &p).unwrap(), bagged_fit(&x, &y, &p).unwrap());
    }

    #[test]
    fn prediction_is_mean_of_bags() {
        let (x, y) = problem(60, 10, 2);
        let p = BagParams {
            beta: 75.0,
            bags: 5,
            m_max: 8,
            ..Default::default()
        };
        let model = bagged_fit(&x, &y, &p).unwrap();
        let probe = &x[3];
        let manual: f64 = model.bags.iter().map(|b| b.predict(probe)).sum::<f64>() / 5.0;
        assert_eq!(model.predict(probe), manual);
    }

    #[test]
    fn leave_one_out_boundary() {
        let (x, y) = problem(10, 4, 3);
        let p = BagParams {
            beta: 90.0,
            bags: 1,
            m_max: 4,
            ..Default::default()
        };
        let model = bagged_fit(&x, &y, &p).unwrap();
        assert_eq!(model.bags[0].held_in.len(), 9);
        assert!(model.bags[0].m_bar >= 1);
    }

    #[test]
    fn degenerate_splits_are_rejected() {
        let (x, y) = problem(3, 3, 4);
        let p = BagParams {
            beta: 99.0,
            bags: 1,
            m_max: 2,
            ..Default::default()
        };
        assert!(matches!(bagged_fit(&x, &y, &p), Err(Error::DegenerateSplit(_))));
        assert!(held_in_count(10, 100.0).is_err());
        assert!(held_in_count(10, 5.0).is_err());
    }

    #[test]
    fn recovers_sparse_signal() {
        let (x, y) = problem(200, 12, 5);
        let model = bagged_fit(&x, &y, &BagParams { bags: 3, m_max: 12, ..Default::default() }).unwrap();
        let pred: Vec<f64> = x.iter().map(|r| model.predict(r)).collect();
        assert!(mae(&pred, &y) < 0.1);
    }
}
