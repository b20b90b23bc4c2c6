//! Square 2D FFTs on row-major buffers.
//!
//! Spectra are kept in *transposed* layout (`spec[kx * n + ky]`), which saves
//! two transposes per forward/inverse pair. Every consumer of a spectrum in
//! this crate indexes it through [`Fft2::spectrum_index`].

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

const TRANSPOSE_BLOCK: usize = 32;

#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

/// Per-thread scratch space for [`Fft2`].
pub struct FftScratch {
    tmp: Vec<Complex64>,
    fft: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scratch(&self) -> FftScratch {
        let len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        FftScratch {
            tmp: vec![Complex64::default(); self.n * self.n],
            fft: vec![Complex64::default(); len],
        }
    }

    /// Position of frequency `(kx, ky)` inside a transposed spectrum.
    #[inline]
    pub fn spectrum_index(&self, kx: usize, ky: usize) -> usize {
        kx * self.n + ky
    }

    /// Unnormalized forward DFT of the row-major image `data` (`data[y * n + x]`).
    /// The transposed spectrum is written back into `data`.
    pub fn forward(&self, data: &mut [Complex64], s: &mut FftScratch) {
        debug_assert_eq!(data.len(), self.n * self.n);
        self.forward.process_with_scratch(data, &mut s.fft);
        transpose(data, &mut s.tmp, self.n);
        self.forward.process_with_scratch(&mut s.tmp, &mut s.fft);
        data.copy_from_slice(&s.tmp);
    }

    /// Unnormalized inverse of [`Fft2::forward`]: takes a transposed spectrum and
    /// writes the row-major image into `out`. `spec` is clobbered.
    pub fn inverse(&self, spec: &mut [Complex64], out: &mut [Complex64], s: &mut FftScratch) {
        debug_assert_eq!(spec.len(), self.n * self.n);
        self.inverse.process_with_scratch(spec, &mut s.fft);
        transpose(spec, out, self.n);
        self.inverse.process_with_scratch(out, &mut s.fft);
    }

    /// Forward transform of a real image.
    pub fn forward_real(&self, image: &[f64], s: &mut FftScratch) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf, s);
        buf
    }
}

/// Signed integer frequency of DFT index `k` on an `n`-point grid.
#[inline]
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for rb in (0..n).step_by(TRANSPOSE_BLOCK) {
        for cb in (0..n).step_by(TRANSPOSE_BLOCK) {
            for r in rb..(rb + TRANSPOSE_BLOCK).min(n) {
                for c in cb..(cb + TRANSPOSE_BLOCK).min(n) {
                    dst[c * n + r] = src[r * n + c];
                }
            }
        }
    }
}
