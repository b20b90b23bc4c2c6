//! Coulomb energies of 3D Gaussian charge clouds and their radial-frequency
//! expansions.
//!
//! With `rho_hat(omega) = int rho(u) exp(-i omega.u) du` and the sphere average
//! `S(a) = int_{S^2} |rho_hat(a eta)|^2 d eta`, the Coulomb energy is
//! `U = (2 pi)^-3 int |rho_hat|^2 4 pi / |omega|^2 = (1 / 2 pi^2) int_0^inf S(a) da`.
//! Every quantity here is a 1D radial integral of the closed-form `S`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::dyadic_window;
use crate::quadrature::integrate_pieces;

/// Relative accuracy requested from every radial integral.
pub const QUAD_RTOL: f64 = 1e-11;
/// `exp(-TAIL_EXPONENT)` bounds the neglected Gaussian tail of `S`.
const TAIL_EXPONENT: f64 = 45.0;

/// Point or Gaussian charges in 3D; `sigma = 0` means point charges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeConfig3D {
    pub charges: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub sigma: f64,
}

/// Whether self-interaction terms `k = l` enter the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    Full,
    /// Drops the `k = l` terms, which diverge for point charges.
    SelfSubtracted,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

impl ChargeConfig3D {
    pub fn new(charges: Vec<f64>, positions: Vec<[f64; 3]>, sigma: f64) -> Result<Self> {
        if charges.len() != positions.len() {
            return Err(Error::SizeMismatch {
                expected: charges.len(),
                got: positions.len(),
            });
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be non-negative, got {sigma}")));
        }
        if charges.iter().chain(positions.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite charge or coordinate".into()));
        }
        let cfg = ChargeConfig3D {
            charges,
            positions,
            sigma,
        };
        if sigma == 0.0 {
            for (k, a) in cfg.positions.iter().enumerate() {
                if cfg.positions[..k].iter().any(|b| dist(a, b) == 0.0) {
                    return Err(Error::Domain("coincident point charges".into()));
                }
            }
        }
        Ok(cfg)
    }

    /// Seeded configuration of 1..=`max_charges` charges in `[-2, 2] \ (-0.5, 0.5)`
    /// placed uniformly in a ball of the given diameter.
    pub fn seeded(seed: u64, max_charges: usize, sigma: f64, diameter: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=max_charges.max(1));
        let mut charges = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        while positions.len() < n {
            let p = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] > 1.0 {
                continue;
            }
            let mag = rng.random_range(0.5..2.0);
            charges.push(if rng.random_bool(0.5) { mag } else { -mag });
            positions.push(p.map(|v| 0.5 * diameter * v));
        }
        ChargeConfig3D {
            charges,
            positions,
            sigma,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    /// `||rho||_1 = sum |z_k|`.
    pub fn l1_norm(&self) -> f64 {
        self.charges.iter().map(|z| z.abs()).sum()
    }

    pub fn scaled_charges(&self, factor: f64) -> Self {
        ChargeConfig3D {
            charges: self.charges.iter().map(|z| z * factor).collect(),
            ..self.clone()
        }
    }

    pub fn map_positions(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        ChargeConfig3D {
            positions: self.positions.iter().map(|&p| f(p)).collect(),
            ..self.clone()
        }
    }

    /// `(z_k z_l, d_kl)` over ordered pairs, optionally skipping `k = l`.
    fn pairs(&self, mode: EnergyMode) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (k, (zk, rk)) in self.charges.iter().zip(&self.positions).enumerate() {
            for (l, (zl, rl)) in self.charges.iter().zip(&self.positions).enumerate() {
                if k == l && mode == EnergyMode::SelfSubtracted {
                    continue;
                }
                out.push((zk * zl, if k == l { 0.0 } else { dist(rk, rl) }));
            }
        }
        out
    }

    /// Frequency beyond which the Gaussian envelope of `S` is negligible; infinite for point charges.
    fn alpha_max(&self) -> f64 {
        if self.sigma > 0.0 {
            TAIL_EXPONENT.sqrt() / self.sigma
        } else {
            f64::INFINITY
        }
    }

    fn max_distance(&self) -> f64 {
        self.pairs(EnergyMode::SelfSubtracted).iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

/// `E(d) = erf(d / 2 sigma) / d`, `E(0) = 1 / (sigma sqrt(pi))`; `1/d` for point charges.
pub fn pair_kernel(d: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        1.0 / d
    } else if d == 0.0 {
        1.0 / (sigma * PI.sqrt())
    } else {
        libm::erf(d / (2.0 * sigma)) / d
    }
}

/// Closed-form `U = sum_{k,l} z_k z_l E(|r_k - r_l|)` for Gaussian clouds.
pub fn coulomb_energy_gaussian(cfg: &ChargeConfig3D) -> Result<f64> {
    if cfg.sigma <= 0.0 {
        return Err(Error::Domain("point charges have infinite self-energy".into()));
    }
    Ok(coulomb_energy(cfg, EnergyMode::Full))
}

/// Coulomb energy in the given mode; `SelfSubtracted` also accepts point charges.
pub fn coulomb_energy(cfg: &ChargeConfig3D, mode: EnergyMode) -> f64 {
    cfg.pairs(mode).iter().map(|&(zz, d)| zz * pair_kernel(d, cfg.sigma)).sum()
}

/// `S(a) = 4 pi exp(-sigma^2 a^2) sum_{k,l} z_k z_l sinc(a d_kl)`.
pub fn fourier_invariant(cfg: &ChargeConfig3D, alpha: f64) -> f64 {
    fourier_invariant_mode(cfg, alpha, EnergyMode::Full)
}

pub fn fourier_invariant_mode(cfg: &ChargeConfig3D, alpha: f64, mode: EnergyMode) -> f64 {
    let envelope = (-cfg.sigma * cfg.sigma * alpha * alpha).exp();
    let s: f64 = cfg.pairs(mode).iter().map(|&(zz, d)| zz * sinc(alpha * d)).sum();
    4.0 * PI * envelope * s
}

/// `int_a^b S(alpha) w(alpha) d alpha`, split so each piece holds about one oscillation.
fn radial_integral(cfg: &ChargeConfig3D, mode: EnergyMode, a: f64, b: f64, w: impl Fn(f64) -> f64) -> Result<f64> {
    let b = b.min(cfg.alpha_max());
    if cfg.is_empty() || b <= a {
        return Ok(0.0);
    }
    if !b.is_finite() {
        return Err(Error::InvalidParameter("radial integral needs a finite upper limit".into()));
    }
    let period = 2.0 * PI / cfg.max_distance().max(1e-3);
    let pieces = ((b - a) / period).ceil().clamp(1.0, 4096.0) as usize;
    let breaks: Vec<f64> = (0..=pieces).map(|i| a + (b - a) * i as f64 / pieces as f64).collect();
    let f = |x: f64| fourier_invariant_mode(cfg, x, mode) * w(x);
    // absolute floor: the scale of S times a tiny fraction of the interval
    let scale = 4.0 * PI * cfg.l1_norm().powi(2) * (b - a);
    integrate_pieces(&f, &breaks, QUAD_RTOL, 1e-16 * scale)
}

/// `U` from `(1 / 2 pi^2) int_0^inf S`, by adaptive quadrature (Gaussian clouds only).
pub fn coulomb_energy_by_quadrature(cfg: &ChargeConfig3D, mode: EnergyMode) -> Result<f64> {
    Ok(radial_integral(cfg, mode, 0.0, cfg.alpha_max(), |_| 1.0)? / (2.0 * PI * PI))
}

/// Trapezoid estimate `(eps / 4 pi^2)(S(eps) + 2 sum_{k=2}^{K-1} S(k eps) + S(K eps))`,
/// `K = ceil(eps^-2)`; returns the value and `K`.
pub fn fourier_regression_estimate(cfg: &ChargeConfig3D, eps: f64, mode: EnergyMode) -> Result<(f64, usize)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
    }
    let k = (1.0 / (eps * eps)).ceil() as usize;
    let s = |i: usize| fourier_invariant_mode(cfg, i as f64 * eps, mode);
    let interior: f64 = (2..k).map(s).sum();
    Ok((eps / (4.0 * PI * PI) * (s(1) + 2.0 * interior + s(k)), k))
}

/// `2^{2j} ||rho * psi_{j,.}||_2^2 = (2 pi)^-3 int S(a) chi(2^j a) da` for the band-limited
/// theory wavelet (window `chi` on `[1/2, 2]`).
pub fn wavelet_invariant(cfg: &ChargeConfig3D, j: i32, mode: EnergyMode) -> Result<f64> {
    let lo = 2f64.powi(-j - 1);
    let hi = 2f64.powi(1 - j);
    let scale = 2f64.powi(j);
    Ok(radial_integral(cfg, mode, lo, hi, |a| dyadic_window(scale * a))? / (8.0 * PI * PI * PI))
}

/// `4 pi sum_{j = j_lo}^{j_hi} 2^{2j} ||rho * psi_{j,.}||_2^2`.
pub fn wavelet_sum(cfg: &ChargeConfig3D, j_lo: i32, j_hi: i32, mode: EnergyMode) -> Result<f64> {
    let mut total = 0.0;
    for j in j_lo..=j_hi {
        total += wavelet_invariant(cfg, j, mode)?;
    }
    Ok(4.0 * PI * total)
}

/// Dyadic sum over every scale that contributes: fine scales stop where the
/// Gaussian envelope vanishes, coarse scales stop once the remaining geometric
/// tail (each coarser term at most halves) is below `1e-17` of the total.
/// Returns the sum and the scale range used.
pub fn full_wavelet_sum(cfg: &ChargeConfig3D, mode: EnergyMode) -> Result<(f64, i32, i32)> {
    if cfg.is_empty() {
        return Ok((0.0, 0, 0));
    }
    if cfg.sigma == 0.0 {
        return Err(Error::Domain("the full dyadic sum needs Gaussian charges".into()));
    }
    // support [2^{-j-1}, 2^{1-j}] lies beyond alpha_max once 2^{-j-1} > alpha_max
    let j_lo = -(cfg.alpha_max().log2().ceil() as i32) - 1;
    let mut total = 0.0;
    let mut j = j_lo;
    let mut quiet = 0;
    loop {
        let t = wavelet_invariant(cfg, j, mode)?;
        total += t;
        if j > 0 && t.abs() <= 1e-17 * total.abs() {
            quiet += 1;
            if quiet >= 3 {
                break;
            }
        } else {
            quiet = 0;
        }
        if j > 1000 {
            return Err(Error::Quadrature {
                a: 0.0,
                b: 2f64.powi(-j),
                estimate: total,
            });
        }
        j += 1;
    }
    Ok((4.0 * PI * total, j_lo, j))
}

/// Truncated sum over `j = ceil(2 log2 eps) ..= floor(-log2 eps)`; returns the value and term count.
pub fn wavelet_regression_estimate(cfg: &ChargeConfig3D, eps: f64, mode: EnergyMode) -> Result<(f64, usize)> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1], got {eps}")));
    }
    let l = eps.log2();
    let (lo, hi) = ((2.0 * l).ceil() as i32, (-l).floor() as i32);
    Ok((wavelet_sum(cfg, lo, hi, mode)?, (hi - lo + 1) as usize))
}

/// Tail integrals dropped by the truncated expansions at cut `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutBounds {
    /// `int_{|omega| < eps} |rho_hat|^2 / |omega|^2 = int_0^eps S`.
    pub fourier_low: f64,
    /// `int_{|omega| > 1/eps} |rho_hat|^2 / |omega|^2`.
    pub fourier_high: f64,
    /// `sum_{j <= 2 log2 eps} 2^{2j} ||rho * psi_{j,.}||^2`.
    pub wavelet_fine: f64,
    /// `sum_{j >= -log2 eps} 2^{2j} ||rho * psi_{j,.}||^2`.
    pub wavelet_coarse: f64,
}

impl CutBounds {
    /// Low-frequency Fourier cut.
    pub fn low(&self) -> f64 {
        self.fourier_low
    }

    /// High-frequency (fine-scale) wavelet cut.
    pub fn high(&self) -> f64 {
        self.wavelet_fine
    }
}

pub fn lemma_cut_bounds(cfg: &ChargeConfig3D, eps: f64) -> Result<CutBounds> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
    }
    if cfg.is_empty() {
        return Ok(CutBounds {
            fourier_low: 0.0,
            fourier_high: 0.0,
            wavelet_fine: 0.0,
            wavelet_coarse: 0.0,
        });
    }
    if cfg.sigma == 0.0 {
        return Err(Error::Domain("cut bounds need Gaussian charges".into()));
    }
    let mode = EnergyMode::Full;
    let l = eps.log2();
    let j_fine = (2.0 * l).floor() as i32;
    let j_coarse = (-l).ceil() as i32;
    // Windows partition unity, so the sums over j collapse to weighted radial integrals.
    let fine_weight = move |a: f64| -> f64 { ((j_fine - 1)..=j_fine).map(|j| dyadic_window(2f64.powi(j) * a)).sum::<f64>() };
    let fine_edge = 2f64.powi(-j_fine - 1);
    let wavelet_fine = (radial_integral(cfg, mode, fine_edge, 2f64.powi(1 - j_fine), |a| {
        if a >= 2f64.powi(-j_fine) {
            1.0
        } else {
            fine_weight(a)
        }
    })? + radial_integral(cfg, mode, 2f64.powi(1 - j_fine), cfg.alpha_max(), |_| 1.0)?)
        / (8.0 * PI * PI * PI);
    let coarse_weight = move |a: f64| -> f64 {
        if a <= 2f64.powi(-j_coarse - 1) {
            1.0
        } else {
            dyadic_window(2f64.powi(j_coarse) * a) + dyadic_window(2f64.powi(j_coarse + 1) * a)
        }
    };
    let wavelet_coarse = radial_integral(cfg, mode, 0.0, 2f64.powi(1 - j_coarse), coarse_weight)? / (8.0 * PI * PI * PI);
    Ok(CutBounds {
        fourier_low: radial_integral(cfg, mode, 0.0, eps, |_| 1.0)?,
        fourier_high: radial_integral(cfg, mode, 1.0 / eps, cfg.alpha_max(), |_| 1.0)?,
        wavelet_fine,
        wavelet_coarse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expansion {
    Fourier,
    Wavelet,
}

/// Errors of a truncated expansion over an `eps` grid, with the fitted log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub expansion: Expansion,
    pub eps: Vec<f64>,
    pub errors: Vec<f64>,
    pub terms: Vec<usize>,
    pub slope: f64,
    pub reference: f64,
}

/// Compares the expansion against the closed-form energy for every `eps`
/// (grid must be strictly decreasing).
pub fn convergence_study(cfg: &ChargeConfig3D, eps_grid: &[f64], expansion: Expansion, mode: EnergyMode) -> Result<ConvergenceReport> {
    if eps_grid.len() < 2 || eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("eps grid must hold at least two strictly decreasing values".into()));
    }
    let reference = coulomb_energy(cfg, mode);
    let mut errors = Vec::with_capacity(eps_grid.len());
    let mut terms = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let (v, t) = match expansion {
            Expansion::Fourier => fourier_regression_estimate(cfg, eps, mode)?,
            Expansion::Wavelet => wavelet_regression_estimate(cfg, eps, mode)?,
        };
        errors.push((v - reference).abs());
        terms.push(t);
    }
    let x: Vec<f64> = eps_grid.iter().map(|e| e.log2()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    let (slope, _) = crate::numeric::linear_fit(&x, &y);
    Ok(ConvergenceReport {
        expansion,
        eps: eps_grid.to_vec(),
        errors,
        terms,
        slope,
        reference,
    })
}
