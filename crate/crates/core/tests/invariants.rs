mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatreg::filterbank::{build_filter_bank, FilterBankParams};
use scatreg::invariants::{fourier_dictionary, scattering_dictionary, wavelet_dictionary, DescriptorTable, DictKind};

use common::rel_diff;

fn bank(j: u32, l: usize) -> scatreg::filterbank::FilterBank {
    build_filter_bank(&FilterBankParams {
        j,
        l,
        ..FilterBankParams::default()
    })
    .unwrap()
}

fn blobs(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<(f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.random_range(0.3..0.7) * n as f64,
                rng.random_range(0.3..0.7) * n as f64,
                rng.random_range(0.8..3.0),
            )
        })
        .collect();
    Array2::from_shape_fn((n, n), |(r, c)| {
        centers
            .iter()
            .map(|&(x, y, w)| (-((c as f64 - x).powi(2) + (r as f64 - y).powi(2)) / (2.0 * w * w)).exp())
            .sum()
    })
}

#[test]
fn cardinalities() {
    let b = bank(5, 4);
    let rho = blobs(32, 1);
    assert_eq!(scattering_dictionary(&rho, 0.3, &b).unwrap().len(), 1 + 10 + 3 * 20);
    assert_eq!(wavelet_dictionary(&rho, 0.3, &b).unwrap().len(), 11);
    assert_eq!(fourier_dictionary(&rho, 0.3).unwrap().len(), 32);
    let spec = "core,valence".parse().unwrap();
    assert_eq!(DescriptorTable::new(DictKind::Scattering, &spec, 5, 4).len(), 142);
}

#[test]
fn grid_symmetries_leave_scattering_unchanged() {
    let b = bank(5, 8);
    let n = 32;
    for seed in 0..3 {
        let rho = blobs(n, seed);
        let base = scattering_dictionary(&rho, 0.5, &b).unwrap();
        let flipped = Array2::from_shape_fn((n, n), |(r, c)| rho[[n - 1 - r, c]]);
        let shifted = Array2::from_shape_fn((n, n), |(r, c)| rho[[(r + 5) % n, (c + n - 3) % n]]);
        let turned = Array2::from_shape_fn((n, n), |(r, c)| rho[[c, n - 1 - r]]);
        for other in [flipped, shifted, turned] {
            let v = scattering_dictionary(&other, 0.5, &b).unwrap();
            assert!(rel_diff(&base, &v) < 1e-10);
        }
    }
}

#[test]
fn fourier_bins_are_rotation_and_shift_invariant() {
    let n = 64;
    let rho = blobs(n, 4);
    let base = fourier_dictionary(&rho, 0.2).unwrap();
    let turned = Array2::from_shape_fn((n, n), |(r, c)| rho[[c, n - 1 - r]]);
    let shifted = Array2::from_shape_fn((n, n), |(r, c)| rho[[(r + 11) % n, (c + 7) % n]]);
    for other in [turned, shifted] {
        assert!(rel_diff(&base, &fourier_dictionary(&other, 0.2).unwrap()) < 1e-12);
    }
}

#[test]
fn features_scale_with_density() {
    // order 0 and the p = 1 norms are linear, the p = 2 norms quadratic
    let b = bank(4, 4);
    let rho = blobs(16, 2);
    let v = scattering_dictionary(&rho, 1.0, &b).unwrap();
    let w = scattering_dictionary(&(&rho * 3.0), 1.0, &b).unwrap();
    let table = DescriptorTable::new(DictKind::Scattering, &"atomic".parse().unwrap(), 4, 4);
    for ((d, a), c) in table.descriptors.iter().zip(&v).zip(&w) {
        let k = if d.norm() == 2 { 9.0 } else { 3.0 };
        assert!((c - k * a).abs() <= 1e-10 * (k * a).abs().max(1e-300), "{}", d.label());
    }
}
