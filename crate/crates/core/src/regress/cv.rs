//! K-fold evaluation over the dataset's fold assignment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mae, rmse};
use crate::error::Result;
use crate::molecule::{Dataset, NUM_FOLDS};
use crate::numeric::{mean, sample_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Mean selected model size, when the model has one.
    pub m_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub m_bar_mean: Option<f64>,
}

/// Output of one train/test round: predictions aligned with the test indices.
pub struct FoldOutcome {
    pub predictions: Vec<f64>,
    pub m_bar: Option<f64>,
}

/// Runs `fit_predict(train, test)` for every fold and summarizes with mean and
/// sample standard deviation across folds.
pub fn cross_validate<F>(dataset: &Dataset, fit_predict: F) -> Result<CvReport>
where
    F: Fn(&[usize], &[usize]) -> Result<FoldOutcome> + Sync,
{
    let targets = dataset.targets()?;
    let folds = (0..NUM_FOLDS)
        .into_par_iter()
        .map(|f| {
            let (train, test) = dataset.split(f);
            let out = fit_predict(&train, &test)?;
            let truth: Vec<f64> = test.iter().map(|&i| targets[i]).collect();
            Ok(FoldReport {
                fold: f,
                n_train: train.len(),
                n_test: test.len(),
                mae: mae(&out.predictions, &truth),
                rmse: rmse(&out.predictions, &truth),
                m_bar: out.m_bar,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(folds))
}

pub fn summarize(folds: Vec<FoldReport>) -> CvReport {
    let maes: Vec<f64> = folds.iter().map(|f| f.mae).collect();
    let rmses: Vec<f64> = folds.iter().map(|f| f.rmse).collect();
    let mbars: Vec<f64> = folds.iter().filter_map(|f| f.m_bar).collect();
    CvReport {
        mae_mean: mean(&maes),
        mae_std: sample_std(&maes),
        rmse_mean: mean(&rmses),
        rmse_std: sample_std(&rmses),
        m_bar_mean: (mbars.len() == folds.len() && !mbars.is_empty()).then(|| mean(&mbars)),
        folds,
    }
}

impl CvReport {
    /// Fixed-width table with one row per fold and a mean ± std summary line.
    pub fn table(&self) -> String {
        let mut s = format!("{:>5} {:>7} {:>6} {:>16} {:>16} {:>8}\n", "fold", "train", "test", "MAE", "RMSE", "M_bar");
        let bar = |v: Option<f64>| v.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
        for f in &self.folds {
            s.push_str(&format!(
                "{:>5} {:>7} {:>6} {:>16.3} {:>16.3} {:>8}\n",
                f.fold,
                f.n_train,
                f.n_test,
                f.mae,
                f.rmse,
                bar(f.m_bar)
            ));
        }
        let pm = |m: f64, sd: f64| format!("{m:.3} ± {sd:.3}");
        s.push_str(&format!(
            "{:>5} {:>7} {:>6} {:>16} {:>16} {:>8}\n",
            "all",
            "",
            "",
            pm(self.mae_mean, self.mae_std),
            pm(self.rmse_mean, self.rmse_std),
            bar(self.m_bar_mean)
        ));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,n_train,n_test,mae,rmse,m_bar\n");
        for f in &self.folds {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.fold,
                f.n_train,
                f.n_test,
                f.mae,
                f.rmse,
                f.m_bar.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        let mb = self.m_bar_mean.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("mean,,,{},{},{mb}\n", self.mae_mean, self.rmse_mean));
        s.push_str(&format!("std,,,{},{},\n", self.mae_std, self.rmse_std));
        s
    }
}
