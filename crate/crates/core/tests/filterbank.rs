use std::f64::consts::PI;

use scatreg::filterbank::{build_filter_bank, FilterBankParams};

fn params(j: u32, l: usize) -> FilterBankParams {
    FilterBankParams {
        j,
        l,
        ..FilterBankParams::default()
    }
}

#[test]
fn wavelets_have_zero_mean_and_lowpass_unit_dc() {
    let bank = build_filter_bank(&params(6, 8)).unwrap();
    for j in 0..6 {
        for ell in 0..8 {
            assert!(bank.psi_hat(j, ell, 0, 0).abs() < 1e-12);
        }
    }
    assert!((bank.phi_hat(0, 0) - 1.0).abs() < 1e-15);
}

#[test]
fn lp_sum_is_bounded_by_one_and_matches_constant() {
    for (j, l) in [(5, 4), (6, 8), (7, 6)] {
        let bank = build_filter_bank(&params(j, l)).unwrap();
        let n = bank.n();
        let w = PI / l as f64;
        let mut min_a = f64::INFINITY;
        let mut max_a = 0.0f64;
        for kx in 0..n {
            for ky in 0..n {
                let (mx, my) = ((n - kx) % n, (n - ky) % n);
                let mut a = bank.phi_hat(kx, ky).powi(2);
                for jj in 0..j {
                    for ell in 0..l {
                        a += 0.5 * w * (bank.psi_hat(jj, ell, kx, ky).powi(2) + bank.psi_hat(jj, ell, mx, my).powi(2));
                    }
                }
                max_a = max_a.max(a);
                if kx + ky > 0 {
                    min_a = min_a.min(a);
                }
            }
        }
        assert!(max_a <= 1.0 + 1e-12 && max_a >= 1.0 - 1e-12, "J={j} L={l}: max {max_a}");
        assert!((1.0 - min_a - bank.lp_constant).abs() < 1e-12);
        let lp = bank.littlewood_paley();
        let lp_min = lp.iter().skip(1).cloned().fold(f64::INFINITY, f64::min);
        assert!((lp_min - min_a).abs() < 1e-12);
    }
}

#[test]
fn rotated_filters_are_rotated_responses() {
    // a quarter turn maps orientation ell to ell + L/2 on the square grid
    let bank = build_filter_bank(&params(5, 8)).unwrap();
    let n = bank.n();
    for j in 0..5 {
        for ell in 0..4 {
            for kx in 0..n {
                for ky in 0..n {
                    let a = bank.psi_hat(j, ell, kx, ky);
                    let b = bank.psi_hat(j, ell + 4, (n - ky) % n, kx);
                    assert!((a - b).abs() < 1e-12, "j={j} ell={ell} ({kx},{ky}): {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(build_filter_bank(&params(1, 8)).is_err());
    assert!(build_filter_bank(&params(5, 7)).is_err());
    assert!(build_filter_bank(&FilterBankParams {
        sigma: -1.0,
        ..params(5, 8)
    })
    .is_err());
}
