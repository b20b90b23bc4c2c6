//! Morlet-type wavelet filter bank on the `2^J x 2^J` periodic grid.
//!
//! Filters are built directly in frequency and are real there. Dilation `j`
//! and rotation `theta` act as `psi_hat(2^j R_theta^{-1} omega)`; each filter is
//! periodized over the aliases `omega + 2 pi m` so that it equals the DFT of the
//! sampled, periodized spatial wavelet. Frequencies are in radians per cell.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::signed_frequency;

/// Littlewood-Paley constants above this trigger a warning.
pub const LP_WARN_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterBankParams {
    /// Number of dyadic scales; the grid is `2^J` cells per side.
    pub j: u32,
    /// Number of orientations over the half circle.
    pub l: usize,
    /// Mother wavelet central frequency, radians per cell.
    pub xi0: f64,
    /// Mother wavelet envelope width, cells.
    pub sigma: f64,
    /// Envelope aspect ratio across the oscillation direction (1 = isotropic).
    pub slant: f64,
}

impl Default for FilterBankParams {
    fn default() -> Self {
        FilterBankParams {
            j: 9,
            l: 16,
            xi0: 0.75 * PI,
            sigma: 0.85,
            slant: 1.0,
        }
    }
}

impl FilterBankParams {
    pub fn n(&self) -> usize {
        1 << self.j
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=13).contains(&self.j) {
            return Err(Error::InvalidParameter(format!("J must lie in 2..=13, got {}", self.j)));
        }
        if self.l == 0 || self.l % 2 != 0 {
            return Err(Error::InvalidParameter(format!("L must be positive and even, got {}", self.l)));
        }
        if self.xi0 >= PI {
            return Err(Error::InvalidParameter(format!("xi0 must lie below pi, got {}", self.xi0)));
        }
        for (name, v) in [("xi0", self.xi0), ("sigma", self.sigma), ("slant", self.slant)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        // The mother wavelet's mass must stay inside one alias period.
        if self.xi0 + 3.0 / self.sigma > 2.0 * PI {
            return Err(Error::Aliasing(format!(
                "xi0 + 3/sigma = {:.4} exceeds 2 pi",
                self.xi0 + 3.0 / self.sigma
            )));
        }
        Ok(())
    }

    /// Orientation of angle index `ell`, in `(-pi/2, pi/2]`.
    ///
    /// Built from an integer numerator so that `theta(L - 2 - ell) == -theta(ell)` exactly.
    pub fn angle(&self, ell: usize) -> f64 {
        let num = 2 * (ell as i64 + 1) - self.l as i64;
        PI * num as f64 / (2 * self.l) as f64
    }
}

/// One wavelet `psi_{j, ell}`.
#[derive(Debug, Clone)]
pub struct Wavelet {
    pub j: u32,
    pub ell: usize,
    pub theta: f64,
    /// Scale factor applied after the Littlewood-Paley normalization.
    pub scale: f64,
    /// Weight of the envelope term that cancels the mean.
    pub mean_correction: f64,
    shape: Shape,
}

#[derive(Debug, Clone)]
enum Shape {
    /// `gx[kx] gy[ky] - c env[kx] env[ky]` with 1D periodized Gaussians.
    Separable { gx: Vec<f64>, gy: Vec<f64>, env: Vec<f64> },
    /// Full alias sum evaluated on demand.
    General { sigma: f64, slant: f64, xi: [f64; 2], aliases: i64 },
}

impl Wavelet {
    /// Filter value at DFT index `(kx, ky)`.
    #[inline]
    pub fn value(&self, kx: usize, ky: usize, n: usize) -> f64 {
        let raw = match &self.shape {
            Shape::Separable { gx, gy, env } => gx[kx] * gy[ky] - self.mean_correction * env[kx] * env[ky],
            Shape::General { .. } => {
                let (g, e) = self.general_terms(kx, ky, n);
                g - self.mean_correction * e
            }
        };
        self.scale * raw
    }

    fn general_terms(&self, kx: usize, ky: usize, n: usize) -> (f64, f64) {
        let Shape::General {
            sigma,
            slant,
            xi,
            aliases,
        } = &self.shape
        else {
            unreachable!()
        };
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let wx = 2.0 * PI * signed_frequency(kx, n) as f64 / n as f64;
        let wy = 2.0 * PI * signed_frequency(ky, n) as f64 / n as f64;
        let quad = |vx: f64, vy: f64| {
            let (a, b) = (c * vx + s * vy, -s * vx + c * vy);
            sigma * sigma * (a * a + b * b / (slant * slant))
        };
        let (mut g, mut e) = (0.0, 0.0);
        for mx in -aliases..=*aliases {
            for my in -aliases..=*aliases {
                let vx = wx + 2.0 * PI * mx as f64;
                let vy = wy + 2.0 * PI * my as f64;
                g += (-0.5 * quad(vx - xi[0], vy - xi[1])).exp();
                e += (-0.5 * quad(vx, vy)).exp();
            }
        }
        (g, e)
    }

    /// Writes the filter values at `(kx, 0..n)` into `out`.
    pub fn fill_row(&self, kx: usize, out: &mut [f64], n: usize) {
        match &self.shape {
            Shape::Separable { gx, gy, env } => {
                let a = self.scale * gx[kx];
                let b = self.scale * self.mean_correction * env[kx];
                for ((o, g), e) in out.iter_mut().zip(gy).zip(env) {
                    *o = a * g - b * e;
                }
            }
            Shape::General { .. } => {
                for (ky, o) in out.iter_mut().enumerate() {
                    *o = self.value(kx, ky, n);
                }
            }
        }
    }

    /// Writes the filter into a spectrum buffer in transposed layout (`kx * n + ky`).
    pub fn fill(&self, out: &mut [f64], n: usize) {
        for (kx, row) in out.chunks_exact_mut(n).enumerate() {
            self.fill_row(kx, row, n);
        }
    }
}

/// Unperiodized, unnormalized Morlet `psi_hat(2^j R_theta^{-1} omega)` with the
/// analytic mean correction `exp(-sigma^2 xi0^2 / 2)`.
pub fn continuous_psi_hat(params: &FilterBankParams, j: u32, theta: f64, omega: [f64; 2]) -> f64 {
    let d = (1u64 << j) as f64;
    let (c, s) = (theta.cos(), theta.sin());
    let (a, b) = (d * (c * omega[0] + s * omega[1]), d * (-s * omega[0] + c * omega[1]));
    let sig2 = params.sigma * params.sigma;
    let slant2 = params.slant * params.slant;
    let q = |a: f64, b: f64| sig2 * (a * a + b * b / slant2);
    (-0.5 * q(a - params.xi0, b)).exp() - (-0.5 * sig2 * params.xi0 * params.xi0).exp() * (-0.5 * q(a, b)).exp()
}

/// Dyadic window `cos^2(pi log2(a) / 2)` on `[1/2, 2]`, zero elsewhere.
///
/// For every `a > 0`, `sum_j chi(2^j a) = 1`.
pub fn dyadic_window(a: f64) -> f64 {
    if !(0.5..=2.0).contains(&a) {
        return 0.0;
    }
    let c = (0.5 * PI * a.log2()).cos();
    c * c
}

/// Radial profile `h(a) = a^{-2} chi(a)` of the band-limited wavelet used by
/// the Coulomb identities: `sum_j 2^{2j} h(2^j a) = a^{-2}`.
pub fn theory_wavelet(a: f64) -> f64 {
    let w = dyadic_window(a);
    if w == 0.0 {
        0.0
    } else {
        w / (a * a)
    }
}

#[derive(Debug, Clone)]
pub struct FilterBank {
    pub params: FilterBankParams,
    /// Indexed `j * L + ell`.
    wavelets: Vec<Wavelet>,
    /// 1D factor of the low-pass filter; `phi_hat(kx, ky) = lowpass[kx] lowpass[ky]`.
    lowpass: Vec<f64>,
    /// `1 - min_{omega != 0} A(omega)` after normalization.
    pub lp_constant: f64,
}

/// 1D Gaussian `exp(-s^2 (w - c)^2 / 2)` summed over aliases, sampled on the DFT grid.
fn periodized_gaussian(n: usize, s: f64, center: f64, aliases: i64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let w = 2.0 * PI * signed_frequency(k, n) as f64 / n as f64;
            (-aliases..=aliases)
                .map(|m| {
                    let d = w + 2.0 * PI * m as f64 - center;
                    (-0.5 * s * s * d * d).exp()
                })
                .sum()
        })
        .collect()
}

/// Builds the normalized filter bank and its Littlewood-Paley constant.
pub fn build_filter_bank(params: &FilterBankParams) -> Result<FilterBank> {
    params.validate()?;
    let n = params.n();
    let aliases = ((PI + params.xi0 + 9.0 / params.sigma) / (2.0 * PI)).ceil() as i64 + 1;
    let separable = params.slant == 1.0;
    let mut wavelets = Vec::with_capacity(params.j as usize * params.l);
    for j in 0..params.j {
        let s = params.sigma * (1u64 << j) as f64;
        let xi_mag = params.xi0 / (1u64 << j) as f64;
        let env = periodized_gaussian(n, s, 0.0, aliases);
        for ell in 0..params.l {
            let theta = params.angle(ell);
            let xi = [xi_mag * theta.cos(), xi_mag * theta.sin()];
            let mut w = if separable {
                let gx = periodized_gaussian(n, s, xi[0], aliases);
                let gy = periodized_gaussian(n, s, xi[1], aliases);
                let correction = gx[0] * gy[0] / (env[0] * env[0]);
                Wavelet {
                    j,
                    ell,
                    theta,
                    scale: 1.0,
                    mean_correction: correction,
                    shape: Shape::Separable {
                        gx,
                        gy,
                        env: env.clone(),
                    },
                }
            } else {
                Wavelet {
                    j,
                    ell,
                    theta,
                    scale: 1.0,
                    mean_correction: 0.0,
                    shape: Shape::General {
                        sigma: s,
                        slant: params.slant,
                        xi,
                        aliases,
                    },
                }
            };
            if !separable {
                let (g, e) = w.general_terms(0, 0, n);
                w.mean_correction = g / e;
            }
            wavelets.push(w);
        }
    }
    let mut lowpass = periodized_gaussian(n, params.sigma * (1u64 << (params.j - 1)) as f64, 0.0, aliases);
    let l0 = lowpass[0];
    lowpass.iter_mut().for_each(|v| *v /= l0);

    let mut bank = FilterBank {
        params: *params,
        wavelets,
        lowpass,
        lp_constant: 0.0,
    };
    let psi_sum = bank.wavelet_energy();
    let mut ratio = f64::INFINITY;
    for kx in 0..n {
        for ky in 0..n {
            let p = psi_sum[kx * n + ky];
            if (kx, ky) != (0, 0) && p > 0.0 {
                let phi = bank.phi_hat(kx, ky);
                ratio = ratio.min((1.0 - phi * phi) / p);
            }
        }
    }
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::InvalidParameter("filter bank has no usable wavelet energy".into()));
    }
    let amp = ratio.sqrt();
    bank.wavelets.iter_mut().for_each(|w| w.scale = amp);
    let a = bank.littlewood_paley();
    let min_a = a
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != 0)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    bank.lp_constant = 1.0 - min_a;
    if bank.lp_constant > LP_WARN_THRESHOLD {
        log::warn!(
            "Littlewood-Paley constant {:.4} exceeds {LP_WARN_THRESHOLD}; the bank loses energy at some frequencies",
            bank.lp_constant
        );
    }
    Ok(bank)
}

impl FilterBank {
    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn j(&self) -> u32 {
        self.params.j
    }

    pub fn l(&self) -> usize {
        self.params.l
    }

    pub fn wavelet(&self, j: u32, ell: usize) -> &Wavelet {
        &self.wavelets[j as usize * self.params.l + ell]
    }

    pub fn wavelets(&self) -> &[Wavelet] {
        &self.wavelets
    }

    #[inline]
    pub fn psi_hat(&self, j: u32, ell: usize, kx: usize, ky: usize) -> f64 {
        self.wavelet(j, ell).value(kx, ky, self.n())
    }

    #[inline]
    pub fn phi_hat(&self, kx: usize, ky: usize) -> f64 {
        self.lowpass[kx] * self.lowpass[ky]
    }

    /// `(pi/L) sum_{j, ell} (|psi_hat(omega)|^2 + |psi_hat(-omega)|^2) / 2`, transposed layout.
    ///
    /// Orientations only cover a half circle, so each filter also stands for its
    /// mirror `psi_hat(-omega)`, which gives the same modulus on real inputs.
    pub fn wavelet_energy(&self) -> Vec<f64> {
        let n = self.n();
        let mut acc = vec![0.0; n * n];
        let weight = PI / self.params.l as f64;
        for w in &self.wavelets {
            for kx in 0..n {
                let mx = (n - kx) % n;
                for ky in 0..n {
                    let my = (n - ky) % n;
                    let (a, b) = (w.value(kx, ky, n), w.value(mx, my, n));
                    acc[kx * n + ky] += 0.5 * weight * (a * a + b * b);
                }
            }
        }
        acc
    }

    /// Littlewood-Paley sum `A(omega) = |phi_hat|^2 + wavelet energy`, transposed layout.
    pub fn littlewood_paley(&self) -> Vec<f64> {
        let n = self.n();
        let mut a = self.wavelet_energy();
        for kx in 0..n {
            for ky in 0..n {
                let p = self.phi_hat(kx, ky);
                a[kx * n + ky] += p * p;
            }
        }
        a
    }
}
