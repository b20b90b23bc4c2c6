//! Kernel ridge regression on randomly sorted Coulomb matrices with a Laplacian kernel.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::mae;
use crate::error::{Error, Result};
use crate::molecule::Molecule;
use crate::numeric::derive_seed;

/// Padded Coulomb matrix: `z_k^2.4 / 2` on the diagonal, `z_k z_l / |r_k - r_l|` off it,
/// row-major `pad_to x pad_to`, atoms in input order, zeros beyond the atom count.
pub fn coulomb_matrix(m: &Molecule, pad_to: usize) -> Result<DMatrix<f64>> {
    let atoms = m.atoms();
    if pad_to < atoms.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot pad {} atoms of {} to {pad_to}",
            atoms.len(),
            m.id
        )));
    }
    let mut c = DMatrix::zeros(pad_to, pad_to);
    for (k, a) in atoms.iter().enumerate() {
        let za = a.charge as f64;
        c[(k, k)] = 0.5 * za.powf(2.4);
        for (l, b) in atoms.iter().enumerate().skip(k + 1) {
            let d = (a.position[0] - b.position[0]).hypot(a.position[1] - b.position[1]);
            let v = za * b.charge as f64 / d;
            c[(k, l)] = v;
            c[(l, k)] = v;
        }
    }
    Ok(c)
}

/// `replicas` copies of the Coulomb matrix, each with rows and columns sorted by
/// descending `row norm + N(0, noise_scale)`. Padding rows stay last; ties keep input order.
pub fn random_sorted_matrices(m: &Molecule, replicas: usize, noise_scale: f64, pad_to: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    if replicas == 0 {
        return Err(Error::InvalidParameter("need at least one Coulomb matrix per molecule".into()));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise scale must be non-negative, got {noise_scale}")));
    }
    let c = coulomb_matrix(m, pad_to)?;
    let n_atoms = m.len();
    let norms: Vec<f64> = (0..n_atoms).map(|k| c.row(k).norm()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let keys: Vec<f64> = norms.iter().map(|&v| v + noise_scale * noise.sample(&mut rng)).collect();
        let mut order: Vec<usize> = (0..n_atoms).collect();
        order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
        order.extend(n_atoms..pad_to);
        out.push(DMatrix::from_fn(pad_to, pad_to, |i, j| c[(order[i], order[j])]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrrParams {
    pub sigma: f64,
    pub lambda: f64,
    pub replicas: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for KrrParams {
    fn default() -> Self {
        KrrParams {
            sigma: 1024.0,
            lambda: 1e-6,
            replicas: 8,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub params: KrrParams,
    pub pad_to: usize,
    /// Mean training target; the kernel expansion models deviations from it.
    pub offset: f64,
    /// Flattened training replicas, `replicas` consecutive entries per molecule.
    pub train: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

/// FNV-1a, used to give each molecule its own replica stream.
fn id_stream(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn replica_vectors(m: &Molecule, p: &KrrParams, pad_to: usize) -> Result<Vec<Vec<f64>>> {
    let seed = derive_seed(p.seed, id_stream(&m.id));
    Ok(random_sorted_matrices(m, p.replicas, p.noise_scale, pad_to, seed)?
        .into_iter()
        .map(|c| c.as_slice().to_vec())
        .collect())
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `exp(-sum |c - c'| / sigma)`.
pub fn laplacian_kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-l1_distance(a, b) / sigma).exp()
}

/// Solves the symmetric system `(K + lambda I) x = rhs`: Cholesky, then LU, then a
/// reported failure with a condition estimate.
pub fn solve_regularized(k: &DMatrix<f64>, lambda: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    if let Some(x) = a.clone().lu().solve(rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let sv = a.singular_values();
    let condition = sv.max() / sv.min();
    Err(Error::LinearSolve {
        condition,
        msg: format!("kernel system of size {} is singular", k.nrows()),
    })
}

pub fn max_atoms(molecules: &[&Molecule]) -> usize {
    molecules.iter().map(|m| m.len()).max().unwrap_or(0)
}

/// Fits the dual coefficients; `pad_to` must cover every molecule that will be predicted.
pub fn krr_fit(molecules: &[&Molecule], targets: &[f64], p: &KrrParams, pad_to: usize) -> Result<KrrModel> {
    if !(p.sigma > 0.0 && p.lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma and lambda must be positive, got {} and {}",
            p.sigma, p.lambda
        )));
    }
    if molecules.len() != targets.len() || molecules.is_empty() {
        return Err(Error::SizeMismatch {
            expected: molecules.len(),
            got: targets.len(),
        });
    }
    let offset = targets.iter().sum::<f64>() / targets.len() as f64;
    let mut train = Vec::with_capacity(molecules.len() * p.replicas);
    let mut rhs = Vec::with_capacity(train.capacity());
    for (m, &t) in molecules.iter().zip(targets) {
        for v in replica_vectors(m, p, pad_to)? {
            train.push(v);
            rhs.push(t - offset);
        }
    }
    let k = kernel_matrix(&train, p.sigma);
    let alpha = solve_regularized(&k, p.lambda, &DVector::from_vec(rhs))?;
    Ok(KrrModel {
        params: *p,
        pad_to,
        offset,
        train,
        alpha: alpha.as_slice().to_vec(),
    })
}

pub fn kernel_matrix(vectors: &[Vec<f64>], sigma: f64) -> DMatrix<f64> {
    let n = vectors.len();
    let dist = distance_matrix(vectors);
    DMatrix::from_fn(n, n, |i, j| (-dist[(i, j)] / sigma).exp())
}

fn distance_matrix(vectors: &[Vec<f64>]) -> DMatrix<f64> {
    let n = vectors.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = l1_distance(&vectors[i], &vectors[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

impl KrrModel {
    /// Mean of the predictions over the query's replicas.
    pub fn predict(&self, m: &Molecule) -> Result<f64> {
        let reps = replica_vectors(m, &self.params, self.pad_to)?;
        let total: f64 = reps
            .iter()
            .map(|v| {
                self.train
                    .iter()
                    .zip(&self.alpha)
                    .map(|(t, a)| a * laplacian_kernel(v, t, self.params.sigma))
                    .sum::<f64>()
            })
            .sum();
        Ok(self.offset + total / reps.len() as f64)
    }
}

/// Candidate hyperparameters and the inner cross-validation used to choose among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrGrid {
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub inner_folds: usize,
}

impl Default for KrrGrid {
    fn default() -> Self {
        KrrGrid {
            sigmas: (4..=14).map(|e| 2f64.powi(e)).collect(),
            lambdas: (1..=8).rev().map(|e| 10f64.powi(-e)).collect(),
            inner_folds: 4,
        }
    }
}

/// Picks `(sigma, lambda)` minimizing the inner cross-validated MAE; ties keep the first grid point.
pub fn krr_select(molecules: &[&Molecule], targets: &[f64], base: &KrrParams, grid: &KrrGrid, pad_to: usize) -> Result<(f64, f64)> {
    let n = molecules.len();
    if grid.inner_folds < 2 || n < grid.inner_folds {
        return Err(Error::DegenerateSplit(format!(
            "{n} molecules cannot be split into {} inner folds",
            grid.inner_folds
        )));
    }
    if grid.sigmas.is_empty() || grid.lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty hyperparameter grid".into()));
    }
    let vectors: Vec<Vec<Vec<f64>>> = molecules
        .iter()
        .map(|m| replica_vectors(m, base, pad_to))
        .collect::<Result<_>>()?;
    let r = base.replicas;
    let flat: Vec<Vec<f64>> = vectors.iter().flatten().cloned().collect();
    let dist = distance_matrix(&flat);

    let candidates: Vec<(f64, f64)> = grid
        .sigmas
        .iter()
        .flat_map(|&s| grid.lambdas.iter().map(move |&l| (s, l)))
        .collect();
    let scores = candidates
        .par_iter()
        .map(|&(sigma, lambda)| {
            let mut errors = Vec::new();
            for f in 0..grid.inner_folds {
                let train: Vec<usize> = (0..n).filter(|i| i % grid.inner_folds != f).collect();
                let test: Vec<usize> = (0..n).filter(|i| i % grid.inner_folds == f).collect();
                let rows: Vec<usize> = train.iter().flat_map(|&i| (0..r).map(move |q| i * r + q)).collect();
                let offset = train.iter().map(|&i| targets[i]).sum::<f64>() / train.len() as f64;
                let k = DMatrix::from_fn(rows.len(), rows.len(), |a, b| (-dist[(rows[a], rows[b])] / sigma).exp());
                let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&a| targets[a / r] - offset));
                let alpha = match solve_regularized(&k, lambda, &rhs) {
                    Ok(a) => a,
                    Err(_) => return f64::INFINITY,
                };
                let pred: Vec<f64> = test
                    .iter()
                    .map(|&i| {
                        let s: f64 = (0..r)
                            .map(|q| {
                                rows.iter()
                                    .zip(alpha.iter())
                                    .map(|(&a, al)| al * (-dist[(i * r + q, a)] / sigma).exp())
                                    .sum::<f64>()
                            })
                            .sum();
                        offset + s / r as f64
                    })
                    .collect();
                let truth: Vec<f64> = test.iter().map(|&i| targets[i]).collect();
                errors.push(mae(&pred, &truth));
            }
            errors.iter().sum::<f64>() / errors.len() as f64
        })
        .collect::<Vec<f64>>();
    let (mut best, mut best_score) = (candidates[0], f64::INFINITY);
    for (c, s) in candidates.iter().zip(&scores) {
        if *s < best_score {
            best = *c;
            best_score = *s;
        }
    }
    if !best_score.is_finite() {
        return Err(Error::LinearSolve {
            condition: f64::INFINITY,
            msg: "every grid point produced a singular kernel system".into(),
        });
    }
    Ok(best)
}
