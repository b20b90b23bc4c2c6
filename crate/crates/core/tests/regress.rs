mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatreg::molecule::{Dataset, FoldOptions, Molecule};
use scatreg::regress::{bagged_fit, coulomb_matrix, krr_fit, ols_fit, random_sorted_matrices, BagParams, KrrParams};

use common::synthetic_molecule;

fn problem(n: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y = x.iter().map(|r| 2.0 * r[3] - r[7] + 0.5 * r[20]).collect();
    (x, y)
}

#[test]
fn sparse_linear_target_is_recovered() {
    let (x, y) = problem(80, 40, 1);
    let model = ols_fit(&x, &y, 3).unwrap();
    let mut sel = model.selected.clone();
    sel.sort_unstable();
    assert_eq!(sel, vec![3, 7, 20]);
    for (k, w) in model.dense_weights(3) {
        let want = match k {
            3 => 2.0,
            7 => -1.0,
            _ => 0.5,
        };
        assert!((w - want).abs() < 1e-10);
    }
    assert!(model.train_sse[2] < 1e-20);
}

#[test]
fn bagging_is_deterministic_and_seed_sensitive() {
    let (x, mut y) = problem(60, 30, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in &mut y {
        *v += rng.random_range(-0.3..0.3);
    }
    let p = BagParams {
        m_max: 20,
        ..BagParams::default()
    };
    let a = bagged_fit(&x, &y, &p).unwrap();
    let b = bagged_fit(&x, &y, &p).unwrap();
    assert_eq!(a, b);
    let c = bagged_fit(&x, &y, &BagParams { seed: 1, ..p }).unwrap();
    assert_ne!(a.bags[0].held_in, c.bags[0].held_in);
    for bag in &a.bags {
        assert_eq!(bag.held_in.len(), 54);
        assert!(bag.m_bar >= 1 && bag.m_bar <= 20);
    }
}

#[test]
fn folds_split_454_molecules_evenly() {
    let molecules: Vec<Molecule> = (0..454).map(|s| synthetic_molecule(s)).collect();
    let d = Dataset::new(molecules, None, &FoldOptions::default()).unwrap();
    let mut counts = [0; 5];
    for f in d.folds() {
        counts[f] += 1;
    }
    counts.sort_unstable();
    assert_eq!(counts, [90, 91, 91, 91, 91]);
}

#[test]
fn sorted_coulomb_matrices_ignore_atom_order() {
    let m = synthetic_molecule(12);
    let k = m.len();
    let order: Vec<usize> = (0..k).rev().collect();
    let a = random_sorted_matrices(&m, 1, 0.0, 9, 0).unwrap();
    let b = random_sorted_matrices(&m.permuted(&order), 1, 0.0, 9, 0).unwrap();
    assert_eq!(a, b);
    let c = coulomb_matrix(&m, 9).unwrap();
    assert!(c.rows(k, 9 - k).iter().all(|v| *v == 0.0));
    assert!(coulomb_matrix(&m, k - 1).is_err());
}

#[test]
fn krr_prediction_is_seed_stable() {
    let molecules: Vec<Molecule> = (0..10).map(|s| synthetic_molecule(200 + s)).collect();
    let refs: Vec<&Molecule> = molecules.iter().collect();
    let y: Vec<f64> = molecules.iter().map(|m| m.energy.unwrap()).collect();
    let p = KrrParams {
        sigma: 200.0,
        lambda: 1e-4,
        ..KrrParams::default()
    };
    let a = krr_fit(&refs, &y, &p, 7).unwrap();
    let b = krr_fit(&refs, &y, &p, 7).unwrap();
    assert_eq!(a, b);
    let query = synthetic_molecule(999);
    assert_eq!(a.predict(&query).unwrap(), b.predict(&query).unwrap());
}
