//! Independent checks of the Coulomb identities: direct quadrature of the
//! radial Fourier invariant and sampling of the sphere.

use std::f64::consts::PI;

use scatreg::filterbank::dyadic_window;
use scatreg::theory::{
    coulomb_energy, coulomb_energy_gaussian, fourier_invariant, full_wavelet_sum, wavelet_regression_estimate,
    wavelet_sum, ChargeConfig3D, EnergyMode,
};

fn pair_distances(cfg: &ChargeConfig3D) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (a, pa) in cfg.charges.iter().zip(&cfg.positions) {
        for (b, pb) in cfg.charges.iter().zip(&cfg.positions) {
            let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt();
            out.push((a * b, d));
        }
    }
    out
}

/// Spherical integral of `|rho_hat(alpha u)|^2`, written out from the pair sum.
fn s_direct(cfg: &ChargeConfig3D, alpha: f64) -> f64 {
    let env = (-cfg.sigma * cfg.sigma * alpha * alpha).exp();
    4.0 * PI
        * env
        * pair_distances(cfg)
            .iter()
            .map(|&(zz, d)| if alpha * d == 0.0 { zz } else { zz * (alpha * d).sin() / (alpha * d) })
            .sum::<f64>()
}

/// Composite Simpson rule with `2m` panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let n = 2 * m;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn simpson_quadrature_of_radial_invariant_gives_coulomb_energy() {
    for s in 0..6u64 {
        let cfg = ChargeConfig3D::seeded(40 + s, 5, 0.4 + 0.3 * s as f64, 6.0);
        let upper = 12.0 / cfg.sigma;
        let u = simpson(|a| s_direct(&cfg, a), 0.0, upper, 40_000) / (2.0 * PI * PI);
        let closed = coulomb_energy_gaussian(&cfg).unwrap();
        assert!((u - closed).abs() <= 1e-9 * closed.abs().max(1.0), "config {s}: {u} vs {closed}");
    }
}

#[test]
fn radial_invariant_matches_sphere_average() {
    let cfg = ChargeConfig3D::seeded(77, 4, 0.5, 5.0);
    // Fibonacci lattice on the unit sphere
    let m = 20_000;
    let golden = PI * (3.0 - 5f64.sqrt());
    for alpha in [0.1, 0.7, 1.9] {
        let mut acc = 0.0;
        for i in 0..m {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
            let r = (1.0 - z * z).sqrt();
            let u = [r * (golden * i as f64).cos(), r * (golden * i as f64).sin(), z];
            let (mut re, mut im) = (0.0, 0.0);
            for (q, p) in cfg.charges.iter().zip(&cfg.positions) {
                let phase = alpha * (u[0] * p[0] + u[1] * p[1] + u[2] * p[2]);
                re += q * phase.cos();
                im -= q * phase.sin();
            }
            acc += (re * re + im * im) * (-cfg.sigma * cfg.sigma * alpha * alpha).exp();
        }
        let sampled = 4.0 * PI * acc / m as f64;
        let s = fourier_invariant(&cfg, alpha);
        assert!((sampled - s).abs() <= 1e-3 * s.abs().max(1e-3), "alpha {alpha}: {sampled} vs {s}");
    }
}

#[test]
fn radial_invariant_within_monte_carlo_error() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    for c in 0..20u64 {
        let cfg = ChargeConfig3D::seeded(300 + c, 6, 0.6, 6.0);
        let alpha = 0.2 + 0.1 * c as f64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(c);
        let samples: Vec<f64> = (0..4000)
            .map(|_| {
                let g: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(&mut rng));
                let r = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                let (mut re, mut im) = (0.0, 0.0);
                for (q, p) in cfg.charges.iter().zip(&cfg.positions) {
                    let phase = alpha * (g[0] * p[0] + g[1] * p[1] + g[2] * p[2]) / r;
                    re += q * phase.cos();
                    im += q * phase.sin();
                }
                4.0 * PI * (re * re + im * im) * (-cfg.sigma * cfg.sigma * alpha * alpha).exp()
            })
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let s = fourier_invariant(&cfg, alpha);
        assert!((mean - s).abs() <= 3.0 * se + 1e-12, "config {c}: {mean} +- {se} vs {s}");
    }
}

#[test]
fn dyadic_windows_partition_unity() {
    for i in 0..200 {
        let a = 10f64.powf(-6.0 + 12.0 * i as f64 / 199.0);
        let total: f64 = (-60..=60).map(|j| dyadic_window(2f64.powi(j) * a)).sum();
        assert!((total - 1.0).abs() < 1e-14, "a = {a}: {total}");
    }
}

#[test]
fn fixed_window_deficit_is_the_dropped_scales() {
    let cfg = ChargeConfig3D::seeded(5, 6, 0.3, 8.0);
    let (full, lo, hi) = full_wavelet_sum(&cfg, EnergyMode::Full).unwrap();
    assert!(hi > 20, "scale range {lo}..{hi}");
    let window = wavelet_sum(&cfg, -20, 20, EnergyMode::Full).unwrap();
    // finer scales than `lo` sit beyond the Gaussian envelope
    let fine = if lo < -20 { wavelet_sum(&cfg, lo, -21, EnergyMode::Full).unwrap() } else { 0.0 };
    let dropped = fine + wavelet_sum(&cfg, 21, hi, EnergyMode::Full).unwrap();
    assert!(dropped > 0.0);
    assert!((window + dropped - full).abs() <= 1e-12 * full.abs());
    let exact = coulomb_energy_gaussian(&cfg).unwrap();
    assert!((full - exact).abs() <= 1e-9 * exact.abs());
}

#[test]
fn self_subtracted_mode_drops_diagonal() {
    let cfg = ChargeConfig3D::seeded(21, 6, 0.8, 6.0);
    let full = coulomb_energy(&cfg, EnergyMode::Full);
    let cross = coulomb_energy(&cfg, EnergyMode::SelfSubtracted);
    let diag: f64 = cfg.charges.iter().map(|z| z * z).sum::<f64>() / (cfg.sigma * PI.sqrt());
    assert!((full - cross - diag).abs() <= 1e-12 * full.abs().max(1.0));
}

#[test]
fn wavelet_estimate_term_count() {
    let cfg = ChargeConfig3D::seeded(3, 3, 1.0, 4.0);
    for k in 1..=8 {
        let (_, terms) = wavelet_regression_estimate(&cfg, 2f64.powi(-k), EnergyMode::Full).unwrap();
        assert_eq!(terms, 3 * k as usize + 1);
    }
}
