//! Statistics of OLS weights over repeated training-set draws.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invariants::Descriptor;
use crate::numeric::derive_seed;
use crate::regress::bagging::held_in_count;
use crate::regress::ols::ols_fit;

/// Minimum number of selection steps for a decay fit.
pub const MIN_DECAY_STEPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStudy {
    pub descriptors: Vec<Descriptor>,
    /// Training-set size of each draw.
    pub n: usize,
    /// Orthogonalized weight of every descriptor per draw; exactly 0 when not selected.
    pub draws: Vec<Vec<f64>>,
    /// Selected descriptor indices per draw, in selection order.
    pub orders: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyParams {
    pub draws: usize,
    /// Terms kept per draw.
    pub m: usize,
    /// Percentage of the samples in each draw.
    pub beta: f64,
    pub seed: u64,
}

impl Default for StudyParams {
    fn default() -> Self {
        StudyParams {
            draws: 100,
            m: 1 << 9,
            beta: 90.0,
            seed: 0,
        }
    }
}

/// Fits OLS on `draws` random subsets and records the sparse orthogonalized weights.
pub fn weight_study(features: &[Vec<f64>], targets: &[f64], descriptors: &[Descriptor], p: &StudyParams) -> Result<WeightStudy> {
    if p.draws == 0 {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    let k = held_in_count(features.len(), p.beta)?;
    let fits = (0..p.draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, d as u64));
            let mut order: Vec<usize> = (0..features.len()).collect();
            order.shuffle(&mut rng);
            let mut pick = order[..k].to_vec();
            pick.sort_unstable();
            let x: Vec<Vec<f64>> = pick.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<f64> = pick.iter().map(|&i| targets[i]).collect();
            let model = ols_fit(&x, &y, p.m)?;
            if model.n_features != descriptors.len() {
                return Err(Error::SizeMismatch {
                    expected: descriptors.len(),
                    got: model.n_features,
                });
            }
            Ok((model.sparse_ortho_weights(p.m), model.selected))
        })
        .collect::<Result<Vec<_>>>()?;
    let (draws, orders) = fits.into_iter().unzip();
    Ok(WeightStudy {
        descriptors: descriptors.to_vec(),
        n: k,
        draws,
        orders,
    })
}

/// Mean over draws of `|w~_k| / sqrt(n)` for every descriptor.
pub fn mean_weight_magnitudes(study: &WeightStudy) -> Vec<f64> {
    let scale = 1.0 / (study.n as f64).sqrt();
    let count = study.draws.len() as f64;
    (0..study.descriptors.len())
        .map(|k| study.draws.iter().map(|w| w[k].abs() * scale).sum::<f64>() / count)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    ScalePair,
    Order,
    Norm,
    Channel,
    Angle,
}

impl FromStr for GroupKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "scale_pair" => Ok(GroupKey::ScalePair),
            "order" => Ok(GroupKey::Order),
            "norm" => Ok(GroupKey::Norm),
            "channel" => Ok(GroupKey::Channel),
            "angle" => Ok(GroupKey::Angle),
            other => Err(Error::UnknownKey(other.to_string())),
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupKey::ScalePair => "scale_pair",
            GroupKey::Order => "order",
            GroupKey::Norm => "norm",
            GroupKey::Channel => "channel",
            GroupKey::Angle => "angle",
        })
    }
}

/// Group label of a descriptor; `na` when the key does not apply.
pub fn group_label(d: &Descriptor, key: GroupKey) -> String {
    match key {
        GroupKey::Order => match d {
            Descriptor::Fourier { .. } => "fourier".into(),
            _ => d.order().to_string(),
        },
        GroupKey::Norm => d.norm().to_string(),
        GroupKey::Channel => d.channel().to_string(),
        GroupKey::ScalePair => match *d {
            Descriptor::First { j, .. } => format!("{j}"),
            Descriptor::Second { j, j2, .. } => format!("{j}-{j2}"),
            _ => "na".into(),
        },
        GroupKey::Angle => match *d {
            Descriptor::Second { t, .. } => t.to_string(),
            _ => "na".into(),
        },
    }
}

/// Sums of mean weight magnitudes grouped by `key`.
pub fn aggregate(study: &WeightStudy, key: GroupKey) -> BTreeMap<String, f64> {
    let mags = mean_weight_magnitudes(study);
    let mut groups = BTreeMap::new();
    for (d, m) in study.descriptors.iter().zip(mags) {
        *groups.entry(group_label(d, key)).or_insert(0.0) += m;
    }
    groups
}

pub fn aggregate_csv(groups: &BTreeMap<String, f64>, key: GroupKey) -> String {
    let mut s = format!("{key},weight\n");
    for (g, v) in groups {
        s.push_str(&format!("{g},{v}\n"));
    }
    s
}

/// Scale-pair table as a `J x J` grid (`row j`, `column j2`) for plotting;
/// first-order weights sit on the diagonal.
pub fn scale_pair_grid(study: &WeightStudy, j: u32) -> Vec<Vec<f64>> {
    let mags = mean_weight_magnitudes(study);
    let mut grid = vec![vec![0.0; j as usize]; j as usize];
    for (d, m) in study.descriptors.iter().zip(mags) {
        match *d {
            Descriptor::First { j, .. } => grid[j as usize][j as usize] += m,
            Descriptor::Second { j, j2, .. } => grid[j as usize][j2 as usize] += m,
            _ => {}
        }
    }
    grid
}

/// Mean over draws of `|w~_{k_m}| / sqrt(n)` for the m-th selected term, `m = 1..`.
/// Only steps reached by every draw are reported.
pub fn step_magnitudes(study: &WeightStudy) -> Vec<f64> {
    let steps = study.orders.iter().map(|o| o.len()).min().unwrap_or(0);
    let scale = 1.0 / (study.n as f64).sqrt();
    (0..steps)
        .map(|m| {
            study
                .draws
                .iter()
                .zip(&study.orders)
                .map(|(w, o)| w[o[m]].abs() * scale)
                .sum::<f64>()
                / study.draws.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r2: f64,
}

/// Least-squares fit of `log2 E_m = a (log2 m)^2 + b log2 m + c` over `m = 1..=len`.
pub fn fit_decay_law(magnitudes: &[f64]) -> Result<DecayFit> {
    if magnitudes.len() < MIN_DECAY_STEPS {
        return Err(Error::DegenerateFit(format!(
            "need at least {MIN_DECAY_STEPS} steps, got {}",
            magnitudes.len()
        )));
    }
    if let Some(v) = magnitudes.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateFit(format!("non-positive magnitude {v}")));
    }
    let y: Vec<f64> = magnitudes.iter().map(|v| v.log2()).collect();
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    if tss <= 1e-24 * y.len() as f64 * ybar.abs().max(1.0).powi(2) {
        return Err(Error::DegenerateFit("magnitudes are constant".into()));
    }
    let x: Vec<f64> = (1..=y.len()).map(|m| (m as f64).log2()).collect();
    let design = DMatrix::from_fn(y.len(), 3, |i, j| x[i].powi(2 - j as i32));
    let rhs = DVector::from_vec(y.clone());
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let rss: f64 = (&design * &coef - &rhs).norm_squared();
    Ok(DecayFit {
        a: coef[0],
        b: coef[1],
        c: coef[2],
        r2: 1.0 - rss / tss,
    })
}
