//! Translation-invariant dictionaries of a rasterized density: radial Fourier
//! moduli, first-order wavelet norms and second-order scattering norms.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{rasterize, Channel, ChannelSpec, DensityGrid, ProfileTable};
use crate::error::{Error, Result};
use crate::fft::{signed_frequency, Fft2};
use crate::filterbank::{build_filter_bank, FilterBank, FilterBankParams};
use crate::molecule::Molecule;
use crate::numeric::{pairwise_sum2_by, pairwise_sum_by};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictKind {
    Fourier,
    Wavelet,
    Scattering,
}

impl DictKind {
    pub fn name(self) -> &'static str {
        match self {
            DictKind::Fourier => "fourier",
            DictKind::Wavelet => "wavelet",
            DictKind::Scattering => "scattering",
        }
    }
}

impl fmt::Display for DictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DictKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fourier" => Ok(DictKind::Fourier),
            "wavelet" => Ok(DictKind::Wavelet),
            "scattering" => Ok(DictKind::Scattering),
            other => Err(Error::InvalidParameter(format!("unknown dictionary `{other}`"))),
        }
    }
}

/// Meaning of one feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Descriptor {
    /// Mean of `|rho_hat|^p` over the radial annulus `k`.
    Fourier { channel: Channel, bin: usize, p: u8 },
    /// `||rho||_1`.
    Zeroth { channel: Channel },
    /// `||rho * psi_{j,.}||_p^p`.
    First { channel: Channel, j: u32, p: u8 },
    /// `||(|rho * psi_{j,.}|) * psi_{j2, . +- t}||_p^p`.
    Second { channel: Channel, j: u32, j2: u32, t: usize, p: u8 },
}

impl Descriptor {
    pub fn channel(&self) -> Channel {
        match *self {
            Descriptor::Fourier { channel, .. }
            | Descriptor::Zeroth { channel }
            | Descriptor::First { channel, .. }
            | Descriptor::Second { channel, .. } => channel,
        }
    }

    /// Scattering order; Fourier features report 0.
    pub fn order(&self) -> u8 {
        match self {
            Descriptor::Fourier { .. } | Descriptor::Zeroth { .. } => 0,
            Descriptor::First { .. } => 1,
            Descriptor::Second { .. } => 2,
        }
    }

    pub fn norm(&self) -> u8 {
        match *self {
            Descriptor::Fourier { p, .. } | Descriptor::First { p, .. } | Descriptor::Second { p, .. } => p,
            Descriptor::Zeroth { .. } => 1,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Descriptor::Fourier { channel, bin, p } => format!("{channel}:fourier[k={bin},p={p}]"),
            Descriptor::Zeroth { channel } => format!("{channel}:order0"),
            Descriptor::First { channel, j, p } => format!("{channel}:order1[j={j},p={p}]"),
            Descriptor::Second { channel, j, j2, t, p } => {
                format!("{channel}:order2[j={j},j2={j2},t={t},p={p}]")
            }
        }
    }
}

/// Column layout of a feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorTable {
    pub kind: DictKind,
    pub j: u32,
    pub l: usize,
    pub channels: Vec<Channel>,
    pub descriptors: Vec<Descriptor>,
}

impl DescriptorTable {
    pub fn new(kind: DictKind, channels: &ChannelSpec, j: u32, l: usize) -> Self {
        let mut descriptors = Vec::new();
        for &channel in channels.channels() {
            match kind {
                DictKind::Fourier => {
                    for bin in 1..=(1usize << (j - 1)) {
                        for p in [1, 2] {
                            descriptors.push(Descriptor::Fourier { channel, bin, p });
                        }
                    }
                }
                DictKind::Wavelet | DictKind::Scattering => {
                    descriptors.push(Descriptor::Zeroth { channel });
                    for jj in 0..j {
                        for p in [1, 2] {
                            descriptors.push(Descriptor::First { channel, j: jj, p });
                        }
                    }
                    if kind == DictKind::Scattering {
                        for jj in 0..j {
                            for j2 in jj + 1..j {
                                for t in 0..=l / 2 {
                                    for p in [1, 2] {
                                        descriptors.push(Descriptor::Second {
                                            channel,
                                            j: jj,
                                            j2,
                                            t,
                                            p,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        DescriptorTable {
            kind,
            j,
            l,
            channels: channels.channels().to_vec(),
            descriptors,
        }
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn per_channel(&self) -> usize {
        self.descriptors.len() / self.channels.len().max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub id: String,
    pub values: Vec<f64>,
}

fn check_size(rho: &Array2<f64>, n: usize) -> Result<()> {
    if rho.dim() != (n, n) {
        return Err(Error::SizeMismatch {
            expected: n * n,
            got: rho.len(),
        });
    }
    Ok(())
}

fn to_complex(rho: &Array2<f64>) -> Vec<Complex64> {
    rho.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

struct Buffers {
    work: Vec<Complex64>,
    out: Vec<Complex64>,
    row: Vec<f64>,
    scratch: crate::fft::FftScratch,
}

impl Buffers {
    fn new(fft: &Fft2) -> Self {
        let n = fft.n();
        Buffers {
            work: vec![Complex64::default(); n * n],
            out: vec![Complex64::default(); n * n],
            row: vec![0.0; n],
            scratch: fft.scratch(),
        }
    }
}

#[inline]
fn modulus(c: &Complex64) -> f64 {
    c.norm_sqr().sqrt()
}

/// Multiplies a transposed spectrum by filter `(j, ell)` and returns the
/// row-major circular convolution.
fn filtered(
    bank: &FilterBank,
    fft: &Fft2,
    spec: &[Complex64],
    j: u32,
    ell: usize,
    bufs: &mut Buffers,
) {
    let n = bank.n();
    let w = bank.wavelet(j, ell);
    let norm = 1.0 / (n * n) as f64;
    for kx in 0..n {
        w.fill_row(kx, &mut bufs.row, n);
        let src = &spec[kx * n..(kx + 1) * n];
        let dst = &mut bufs.work[kx * n..(kx + 1) * n];
        for ((d, s), f) in dst.iter_mut().zip(src).zip(&bufs.row) {
            *d = s * (norm * f);
        }
    }
    fft.inverse(&mut bufs.work, &mut bufs.out, &mut bufs.scratch);
}

/// `U[j * L + ell] = |rho * psi_{j, ell}|`, row-major, for every filter of the bank.
pub fn wavelet_modulus(rho: &Array2<f64>, bank: &FilterBank) -> Result<Vec<Array2<f64>>> {
    let n = bank.n();
    check_size(rho, n)?;
    let fft = Fft2::new(n);
    let mut bufs = Buffers::new(&fft);
    let mut spec = to_complex(rho);
    fft.forward(&mut spec, &mut bufs.scratch);
    let mut result = Vec::with_capacity(bank.wavelets().len());
    for j in 0..bank.j() {
        for ell in 0..bank.l() {
            filtered(bank, &fft, &spec, j, ell, &mut bufs);
            let u = bufs.out.iter().map(modulus).collect();
            result.push(Array2::from_shape_vec((n, n), u).unwrap());
        }
    }
    Ok(result)
}

/// Raw sums for one first-order filter `(j, ell)`.
struct FilterSums {
    /// `sum_u U^p` for p = 1, 2.
    first: [f64; 2],
    /// `sum_u |U * psi_{j2, ell2}|^p`, indexed `(j2 - j - 1) * L + ell2`.
    second: Vec<[f64; 2]>,
}

fn filter_sums(rho_spec: &[Complex64], bank: &FilterBank, fft: &Fft2, j: u32, ell: usize, second: bool) -> FilterSums {
    let l = bank.l();
    let mut bufs = Buffers::new(fft);
    filtered(bank, fft, rho_spec, j, ell, &mut bufs);
    let mut u: Vec<Complex64> = bufs.out.iter().map(|c| Complex64::new(modulus(c), 0.0)).collect();
    let (s1, s2) = pairwise_sum2_by(&u, &|c: &Complex64| (c.re, c.re * c.re));
    let first = [s1, s2];
    let mut sums = Vec::new();
    if second && j + 1 < bank.j() {
        fft.forward(&mut u, &mut bufs.scratch);
        sums.reserve((bank.j() - j - 1) as usize * l);
        for j2 in j + 1..bank.j() {
            for ell2 in 0..l {
                filtered(bank, fft, &u, j2, ell2, &mut bufs);
                let (a, b) = pairwise_sum2_by(&bufs.out, &|c: &Complex64| {
                    let q = c.norm_sqr();
                    (q.sqrt(), q)
                });
                sums.push([a, b]);
            }
        }
    }
    FilterSums { first, second: sums }
}

/// Zeroth, first and (optionally) second order values of one channel in table order.
fn wavelet_features(rho: &Array2<f64>, h: f64, bank: &FilterBank, second: bool) -> Result<Vec<f64>> {
    let n = bank.n();
    check_size(rho, n)?;
    let (jn, l) = (bank.j(), bank.l());
    let fft = Fft2::new(n);
    let mut spec = to_complex(rho);
    fft.forward(&mut spec, &mut fft.scratch());

    let tasks: Vec<(u32, usize)> = (0..jn).flat_map(|j| (0..l).map(move |ell| (j, ell))).collect();
    let sums: Vec<FilterSums> = tasks
        .par_iter()
        .map(|&(j, ell)| filter_sums(&spec, bank, &fft, j, ell, second))
        .collect();

    let weight = PI / l as f64 * h * h;
    let mut values = vec![h * h * crate::numeric::pairwise_sum(rho.as_slice().unwrap())];
    for j in 0..jn as usize {
        for p in 0..2 {
            let acc: f64 = (0..l).map(|ell| sums[j * l + ell].first[p]).sum();
            values.push(weight * acc);
        }
    }
    if second {
        for j in 0..jn as usize {
            for j2 in j + 1..jn as usize {
                for t in 0..=l / 2 {
                    for p in 0..2 {
                        let mut acc = 0.0;
                        for ell in 0..l {
                            let s = &sums[j * l + ell].second;
                            let base = (j2 - j - 1) * l;
                            acc += s[base + (ell + t) % l][p] + s[base + (ell + l - t) % l][p];
                        }
                        values.push(0.5 * weight * acc);
                    }
                }
            }
        }
    }
    Ok(values)
}

/// `[||rho||_1, (||rho * psi_{j,.}||_1, ||rho * psi_{j,.}||_2^2) for j < J]`, `2J + 1` values.
pub fn wavelet_dictionary(rho: &Array2<f64>, h: f64, bank: &FilterBank) -> Result<Vec<f64>> {
    wavelet_features(rho, h, bank, false)
}

/// Orders 0, 1 and 2: `1 + 2J + (L/2 + 1) J (J - 1)` values.
pub fn scattering_dictionary(rho: &Array2<f64>, h: f64, bank: &FilterBank) -> Result<Vec<f64>> {
    wavelet_features(rho, h, bank, true)
}

/// Means of `|rho_hat|` and `|rho_hat|^2` over the annuli `k - 1/2 <= |n| < k + 1/2`,
/// `k = 1..=2^(J-1)`, with `rho_hat = h^2 DFT(rho)`; `2^J` values interleaved by norm.
pub fn fourier_dictionary(rho: &Array2<f64>, h: f64) -> Result<Vec<f64>> {
    let n = rho.nrows();
    if !n.is_power_of_two() || n < 4 || rho.ncols() != n {
        return Err(Error::SizeMismatch {
            expected: n * n,
            got: rho.len(),
        });
    }
    let fft = Fft2::new(n);
    let mut spec = to_complex(rho);
    fft.forward(&mut spec, &mut fft.scratch());
    let bins = n / 2;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins + 1];
    for kx in 0..n {
        let fx = signed_frequency(kx, n) as f64;
        for ky in 0..n {
            let fy = signed_frequency(ky, n) as f64;
            let k = (fx.hypot(fy) + 0.5).floor() as usize;
            if (1..=bins).contains(&k) {
                members[k].push(h * h * spec[fft.spectrum_index(kx, ky)].norm());
            }
        }
    }
    let mut values = Vec::with_capacity(2 * bins);
    for m in &members[1..] {
        let count = m.len() as f64;
        values.push(crate::numeric::pairwise_sum(m) / count);
        values.push(pairwise_sum_by(m, &|v: &f64| v * v) / count);
    }
    Ok(values)
}

/// Configuration of a feature pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub kind: DictKind,
    pub channels: ChannelSpec,
    pub bank: FilterBankParams,
    /// Grid spacing in Bohr.
    pub h: f64,
}

/// Rasterize-then-transform pipeline with a prebuilt filter bank.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub config: FeatureConfig,
    bank: Option<FilterBank>,
    table: DescriptorTable,
}

impl Featurizer {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.bank.validate()?;
        let bank = match config.kind {
            DictKind::Fourier => None,
            _ => Some(build_filter_bank(&config.bank)?),
        };
        let table = DescriptorTable::new(config.kind, &config.channels, config.bank.j, config.bank.l);
        Ok(Featurizer { config, bank, table })
    }

    pub fn table(&self) -> &DescriptorTable {
        &self.table
    }

    pub fn bank(&self) -> Option<&FilterBank> {
        self.bank.as_ref()
    }

    pub fn rasterize(&self, m: &Molecule, profiles: &ProfileTable) -> Result<DensityGrid> {
        rasterize(m, &self.config.channels, profiles, self.config.bank.j, self.config.h)
    }

    /// Features of an already rasterized density, concatenated over its channels.
    pub fn featurize_grid(&self, grid: &DensityGrid) -> Result<Vec<f64>> {
        let h = grid.geometry.h;
        let mut values = Vec::with_capacity(self.table.len());
        for rho in &grid.data {
            let part = match (self.config.kind, &self.bank) {
                (DictKind::Fourier, _) => fourier_dictionary(rho, h)?,
                (DictKind::Wavelet, Some(bank)) => wavelet_dictionary(rho, h, bank)?,
                (DictKind::Scattering, Some(bank)) => scattering_dictionary(rho, h, bank)?,
                _ => unreachable!("bank is built for wavelet dictionaries"),
            };
            values.extend(part);
        }
        if values.len() != self.table.len() {
            return Err(Error::SizeMismatch {
                expected: self.table.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite feature {}", self.table.descriptors[i].label())));
        }
        Ok(values)
    }

    pub fn featurize(&self, m: &Molecule, profiles: &ProfileTable) -> Result<FeatureVector> {
        let grid = self.rasterize(m, profiles)?;
        Ok(FeatureVector {
            id: m.id.clone(),
            values: self.featurize_grid(&grid)?,
        })
    }

    /// Featurizes every molecule; rows follow the input order.
    pub fn featurize_all(&self, molecules: &[Molecule], profiles: &ProfileTable) -> Result<FeatureMatrix> {
        let rows = molecules
            .par_iter()
            .map(|m| self.featurize(m, profiles).map(|f| f.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            table: self.table.clone(),
            ids: molecules.iter().map(|m| m.id.clone()).collect(),
            rows,
        })
    }
}

/// Rows of features with their column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub table: DescriptorTable,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MatrixSidecar {
    table: DescriptorTable,
    ids: Vec<String>,
    rows: usize,
    cols: usize,
}

impl FeatureMatrix {
    /// Writes `<base>.json` (layout and ids) and `<base>.bin` (row-major little-endian f64).
    pub fn write(&self, base: &Path) -> Result<()> {
        let cols = self.table.len();
        let mut bytes = Vec::with_capacity(self.rows.len() * cols * 8);
        for row in &self.rows {
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(base.with_extension("bin"), bytes)?;
        let side = MatrixSidecar {
            table: self.table.clone(),
            ids: self.ids.clone(),
            rows: self.rows.len(),
            cols,
        };
        fs::write(base.with_extension("json"), serde_json::to_string(&side)?)?;
        Ok(())
    }

    pub fn read(base: &Path) -> Result<Self> {
        let side: MatrixSidecar = serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
        let bytes = fs::read(base.with_extension("bin"))?;
        let expected = side.rows * side.cols * 8;
        if bytes.len() != expected || side.table.len() != side.cols || side.ids.len() != side.rows {
            return Err(Error::SizeMismatch {
                expected,
                got: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rows = if side.cols == 0 {
            vec![Vec::new(); side.rows]
        } else {
            values.chunks_exact(side.cols).map(|r| r.to_vec()).collect()
        };
        Ok(FeatureMatrix {
            table: side.table,
            ids: side.ids,
            rows,
        })
    }
}
