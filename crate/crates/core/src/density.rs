//! Non-interacting electronic densities rasterized on a square 2D grid.
//!
//! Each atom contributes an isotropic bump `rho[z](|u - r_k|)`; a molecule's
//! channel is the superposition of its atoms' bumps. Radial profiles are
//! ingested in 3D (charge per Bohr^3) and condensed to the plane with
//! `rho_2d(a) = 2 a rho_3d(a)`, which preserves each shell's charge.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molecule::{Dataset, Molecule};

/// Relative tolerance on a profile's integrated charge.
pub const PROFILE_MASS_RTOL: f64 = 1e-3;
/// Relative tolerance on `rho_core + rho_val = rho_total`.
pub const PROFILE_SPLIT_RTOL: f64 = 1e-6;

/// Samples per analytic profile.
const ANALYTIC_SAMPLES: usize = 4001;
/// Analytic profiles are truncated at this many shell radii.
const ANALYTIC_CUTOFF: f64 = 6.0;
/// Minimum half-extent reserved around atoms when no profile support applies (Bohr).
const MIN_SUPPORT_BOHR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Dirac,
    Atomic,
    Core,
    Valence,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Dirac, Channel::Atomic, Channel::Core, Channel::Valence];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Dirac => "dirac",
            Channel::Atomic => "atomic",
            Channel::Core => "core",
            Channel::Valence => "valence",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown density channel `{s}`")))
    }
}

/// Ordered, duplicate-free, non-empty list of density channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Channel>", into = "Vec<Channel>")]
pub struct ChannelSpec(Vec<Channel>);

impl ChannelSpec {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidParameter("channel spec is empty".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::InvalidParameter(format!("channel {c} listed twice")));
            }
        }
        Ok(ChannelSpec(channels))
    }

    pub fn channels(&self) -> &[Channel] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn needs_profiles(&self) -> bool {
        self.0.iter().any(|&c| c != Channel::Dirac)
    }
}

impl TryFrom<Vec<Channel>> for ChannelSpec {
    type Error = Error;
    fn try_from(v: Vec<Channel>) -> Result<Self> {
        ChannelSpec::new(v)
    }
}

impl From<ChannelSpec> for Vec<Channel> {
    fn from(s: ChannelSpec) -> Self {
        s.0
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let channels = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(Channel::from_str)
            .collect::<Result<Vec<_>>>()?;
        ChannelSpec::new(channels)
    }
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|c| c.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Sampled isotropic atomic density. For 3D profiles the densities are
/// charge per Bohr^3; for the planar restriction, charge per Bohr^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub z: u32,
    pub radius: Vec<f64>,
    pub total: Vec<f64>,
    pub core: Vec<f64>,
    pub valence: Vec<f64>,
}

/// Planar restriction of a [`RadialProfile`]; same layout, densities per Bohr^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile2D(pub RadialProfile);

impl RadialProfile {
    /// Validates and builds a 3D profile.
    pub fn new(z: u32, radius: Vec<f64>, total: Vec<f64>, core: Vec<f64>, valence: Vec<f64>) -> Result<Self> {
        let p = RadialProfile {
            z,
            radius,
            total,
            core,
            valence,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::Profile { z: self.z, msg };
        let n = self.radius.len();
        if n < 2 {
            return Err(err("need at least two samples".into()));
        }
        if [self.total.len(), self.core.len(), self.valence.len()] != [n, n, n] {
            return Err(err("column lengths differ".into()));
        }
        if self.radius[0] != 0.0 {
            return Err(err(format!("radii must start at 0, got {}", self.radius[0])));
        }
        if self.radius.windows(2).any(|w| !(w[1] > w[0])) || !self.radius[n - 1].is_finite() {
            return Err(err("radii must be strictly increasing".into()));
        }
        let peak = self.total.iter().cloned().fold(0.0, f64::max);
        for i in 0..n {
            let (t, c, v) = (self.total[i], self.core[i], self.valence[i]);
            if !(t >= 0.0 && c >= 0.0 && v >= 0.0) || !(t.is_finite() && c.is_finite() && v.is_finite()) {
                return Err(err(format!("negative or non-finite density at r={}", self.radius[i])));
            }
            if (c + v - t).abs() > PROFILE_SPLIT_RTOL * t.max(peak * 1e-12) {
                return Err(err(format!("core + valence != total at r={}", self.radius[i])));
            }
        }
        let mass = self.mass(Channel::Atomic);
        if (mass - self.z as f64).abs() > PROFILE_MASS_RTOL * self.z as f64 {
            return Err(err(format!("integrated charge {mass} differs from z")));
        }
        Ok(())
    }

    pub fn support(&self) -> f64 {
        *self.radius.last().unwrap()
    }

    fn column(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Atomic | Channel::Dirac => &self.total,
            Channel::Core => &self.core,
            Channel::Valence => &self.valence,
        }
    }

    /// Trapezoid estimate of `int 4 pi a^2 rho(a) da`.
    pub fn mass(&self, channel: Channel) -> f64 {
        let rho = self.column(channel);
        trapezoid(&self.radius, |i| 4.0 * PI * self.radius[i].powi(2) * rho[i])
    }

    /// Condenses each spherical shell onto the circle of the same radius.
    pub fn restrict_to_2d(&self) -> RadialProfile2D {
        let scale = |col: &[f64]| -> Vec<f64> { self.radius.iter().zip(col).map(|(a, r)| 2.0 * a * r).collect() };
        RadialProfile2D(RadialProfile {
            z: self.z,
            radius: self.radius.clone(),
            total: scale(&self.total),
            core: scale(&self.core),
            valence: scale(&self.valence),
        })
    }

    /// Built-in fallback: one normalized 3D Gaussian per occupied shell.
    ///
    /// Shell `n` has width `s = n^2 / Z_eff` Bohr with `Z_eff` from Slater's
    /// screening rules (1s: 0.30 per other 1s electron; ns: 0.35 per other
    /// same-shell electron, 0.85 per electron one shell in, 1.00 deeper).
    /// The core channel holds every shell below the outermost (noble-gas core).
    /// With this choice hydrogen reproduces the exact 1s mean square radius (3 Bohr^2).
    pub fn analytic(z: u32) -> Result<Self> {
        let shells = slater_shells(z)?;
        let outer = shells.last().unwrap().0;
        let s_max = shells.iter().map(|s| s.2).fold(0.0, f64::max);
        let r_max = ANALYTIC_CUTOFF * s_max;
        let radius: Vec<f64> = (0..ANALYTIC_SAMPLES)
            .map(|i| r_max * i as f64 / (ANALYTIC_SAMPLES - 1) as f64)
            .collect();
        let mut core = vec![0.0; ANALYTIC_SAMPLES];
        let mut valence = vec![0.0; ANALYTIC_SAMPLES];
        for &(n, occ, width) in &shells {
            let norm = occ / (2.0 * PI * width * width).powf(1.5);
            let target = if n < outer { &mut core } else { &mut valence };
            for (t, &a) in target.iter_mut().zip(&radius) {
                *t += norm * (-a * a / (2.0 * width * width)).exp();
            }
        }
        let total = core.iter().zip(&valence).map(|(c, v)| c + v).collect();
        RadialProfile::new(z, radius, total, core, valence)
    }
}

impl RadialProfile2D {
    pub fn z(&self) -> u32 {
        self.0.z
    }

    pub fn support(&self) -> f64 {
        self.0.support()
    }

    /// Trapezoid estimate of `int 2 pi a rho_2d(a) da`.
    pub fn mass(&self, channel: Channel) -> f64 {
        let p = &self.0;
        let rho = p.column(channel);
        trapezoid(&p.radius, |i| 2.0 * PI * p.radius[i] * rho[i])
    }

    /// Linear interpolation between samples, zero beyond the last radius.
    pub fn value(&self, channel: Channel, r: f64) -> f64 {
        let p = &self.0;
        let rho = p.column(channel);
        let n = p.radius.len();
        if r > p.radius[n - 1] {
            return 0.0;
        }
        let hi = p.radius.partition_point(|&a| a < r).clamp(1, n - 1);
        let (a0, a1) = (p.radius[hi - 1], p.radius[hi]);
        let t = (r - a0) / (a1 - a0);
        rho[hi - 1] + t * (rho[hi] - rho[hi - 1])
    }
}

fn trapezoid(x: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    (1..x.len()).map(|i| 0.5 * (x[i] - x[i - 1]) * (f(i) + f(i - 1))).sum()
}

/// (principal quantum number, occupancy, Gaussian width in Bohr) per occupied shell.
fn slater_shells(z: u32) -> Result<Vec<(u32, f64, f64)>> {
    if !(1..=18).contains(&z) {
        return Err(Error::MissingProfile(z));
    }
    let zf = z as f64;
    let n1 = z.min(2) as f64;
    let n2 = z.saturating_sub(2).min(8) as f64;
    let n3 = z.saturating_sub(10) as f64;
    let mut shells = vec![(1, n1, 1.0 / (zf - 0.30 * (n1 - 1.0)))];
    if n2 > 0.0 {
        let zeff = zf - 0.35 * (n2 - 1.0) - 0.85 * n1;
        shells.push((2, n2, 4.0 / zeff));
    }
    if n3 > 0.0 {
        let zeff = zf - 0.35 * (n3 - 1.0) - 0.85 * n2 - n1;
        shells.push((3, n3, 9.0 / zeff));
    }
    Ok(shells)
}

/// Radial profiles keyed by element, stored both as ingested (3D) and restricted to the plane.
#[derive(Debug, Clone, Default)]
pub struct ProfileTable {
    profiles: BTreeMap<u32, (RadialProfile, RadialProfile2D)>,
}

impl ProfileTable {
    pub fn insert(&mut self, p: RadialProfile) {
        let p2 = p.restrict_to_2d();
        self.profiles.insert(p.z, (p, p2));
    }

    /// Table of analytic profiles for the given elements.
    pub fn analytic(elements: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut t = ProfileTable::default();
        for z in elements {
            t.insert(RadialProfile::analytic(z)?);
        }
        Ok(t)
    }

    /// Adds analytic profiles for every element of 1..=18 not already present.
    pub fn fill_analytic(&mut self) {
        for z in 1..=18 {
            if !self.profiles.contains_key(&z) {
                self.insert(RadialProfile::analytic(z).expect("z in 1..=18"));
            }
        }
    }

    /// Reads a profile CSV (`z,radius,rho_total,rho_core,rho_val`).
    pub fn load(path: &Path, allow_analytic: bool) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut columns: BTreeMap<u32, [Vec<f64>; 4]> = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let err = |msg: String| Error::Parse {
                path: path.into(),
                line,
                msg,
            };
            if record.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", record.len())));
            }
            let z: u32 = record[0].parse().map_err(|e| err(format!("z: {e}")))?;
            let entry = columns.entry(z).or_default();
            for (k, col) in entry.iter_mut().enumerate() {
                col.push(record[k + 1].parse().map_err(|e| err(format!("field {}: {e}", k + 1)))?);
            }
        }
        let mut table = ProfileTable::default();
        for (z, [r, t, c, v]) in columns {
            table.insert(RadialProfile::new(z, r, t, c, v)?);
        }
        if allow_analytic {
            table.fill_analytic();
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn elements(&self) -> Vec<u32> {
        self.profiles.keys().copied().collect()
    }

    pub fn get(&self, z: u32) -> Result<&RadialProfile> {
        self.profiles.get(&z).map(|p| &p.0).ok_or(Error::MissingProfile(z))
    }

    pub fn get_2d(&self, z: u32) -> Result<&RadialProfile2D> {
        self.profiles.get(&z).map(|p| &p.1).ok_or(Error::MissingProfile(z))
    }
}

/// Placement of the `2^J x 2^J` raster in the molecular plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub j: u32,
    /// Cell size, Bohr.
    pub h: f64,
    /// Lower-left corner of the box, Bohr. Cell `(row, col)` is centered at
    /// `origin + h * (col + 1/2, row + 1/2)`.
    pub origin: [f64; 2],
}

impl GridGeometry {
    pub fn n(&self) -> usize {
        1 << self.j
    }

    pub fn side(&self) -> f64 {
        self.h * self.n() as f64
    }

    pub fn center(&self) -> [f64; 2] {
        let half = 0.5 * self.side();
        [self.origin[0] + half, self.origin[1] + half]
    }

    /// Geometry whose box center coincides with the molecule centroid.
    pub fn centered_on(m: &Molecule, j: u32, h: f64) -> Self {
        let c = m.centroid();
        let half = 0.5 * h * (1u64 << j) as f64;
        GridGeometry {
            j,
            h,
            origin: [c[0] - half, c[1] - half],
        }
    }
}

/// Largest radius of the bumps deposited for `spec` over the given elements.
pub fn max_support(spec: &ChannelSpec, profiles: &ProfileTable, elements: &[u32]) -> Result<f64> {
    let mut s = MIN_SUPPORT_BOHR;
    if spec.needs_profiles() {
        for &z in elements {
            s = s.max(profiles.get_2d(z)?.support());
        }
    }
    Ok(s)
}

/// Dataset-wide cell size: every centered molecule, rotated arbitrarily,
/// keeps its support inside the central half of the box.
pub fn default_spacing(dataset: &Dataset, spec: &ChannelSpec, profiles: &ProfileTable, j: u32) -> Result<f64> {
    let mut elements: Vec<u32> = dataset
        .molecules
        .iter()
        .flat_map(|m| m.atoms().iter().map(|a| a.charge))
        .collect();
    elements.sort_unstable();
    elements.dedup();
    let support = max_support(spec, profiles, &elements)?;
    let radius = dataset.molecules.iter().map(|m| m.radius()).fold(0.0, f64::max);
    Ok(4.0 * (radius + support) / (1u64 << j) as f64 * (1.0 + 1e-9))
}

/// Multi-channel raster of a molecule's density.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub geometry: GridGeometry,
    pub channels: Vec<Channel>,
    /// One `n x n` array per channel, indexed `[row, col]` = `[y, x]`.
    pub data: Vec<Array2<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridSidecar {
    j: u32,
    h: f64,
    origin: [f64; 2],
    channels: Vec<Channel>,
}

impl DensityGrid {
    pub fn channel(&self, c: Channel) -> Option<&Array2<f64>> {
        self.channels.iter().position(|&x| x == c).map(|i| &self.data[i])
    }

    /// Discrete mass `h^2 sum(rho)` of channel `i`.
    pub fn mass(&self, i: usize) -> f64 {
        let h = self.geometry.h;
        h * h * crate::numeric::pairwise_sum(self.data[i].as_slice().unwrap())
    }

    /// Writes `<base>.bin` (little-endian f64, channel-major, row-major) and `<base>.json`.
    pub fn write(&self, base: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * self.geometry.n().pow(2) * 8);
        for arr in &self.data {
            for v in arr.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(base.with_extension("bin"), bytes)?;
        let side = GridSidecar {
            j: self.geometry.j,
            h: self.geometry.h,
            origin: self.geometry.origin,
            channels: self.channels.clone(),
        };
        fs::write(base.with_extension("json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn read(base: &Path) -> Result<Self> {
        let side: GridSidecar = serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
        let bytes = fs::read(base.with_extension("bin"))?;
        let n = 1usize << side.j;
        let expected = side.channels.len() * n * n * 8;
        if bytes.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                got: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = values
            .chunks_exact(n * n)
            .map(|c| Array2::from_shape_vec((n, n), c.to_vec()).unwrap())
            .collect();
        Ok(DensityGrid {
            geometry: GridGeometry {
                j: side.j,
                h: side.h,
                origin: side.origin,
            },
            channels: side.channels,
            data,
        })
    }
}

/// Rasterizes `m` on a `2^j` grid of spacing `h` centered on the molecule centroid.
pub fn rasterize(m: &Molecule, spec: &ChannelSpec, profiles: &ProfileTable, j: u32, h: f64) -> Result<DensityGrid> {
    rasterize_on(m, spec, profiles, &GridGeometry::centered_on(m, j, h))
}

/// Rasterizes `m` on an explicit grid.
///
/// Profile channels sample the planar radial bump at cell centers and rescale
/// each atom's samples to the profile's channel charge; the Dirac channel
/// splats `z_k` bilinearly onto the four nearest cells.
pub fn rasterize_on(m: &Molecule, spec: &ChannelSpec, profiles: &ProfileTable, geom: &GridGeometry) -> Result<DensityGrid> {
    if !(geom.h > 0.0 && geom.h.is_finite()) {
        return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {}", geom.h)));
    }
    let atoms = m.canonical_atoms();
    let mut elements: Vec<u32> = atoms.iter().map(|a| a.charge).collect();
    elements.dedup();
    let support = if spec.needs_profiles() {
        max_support(spec, profiles, &elements)?
    } else {
        2.0 * geom.h
    };
    check_margin(m, geom, support)?;

    let n = geom.n();
    let h = geom.h;
    let mut data = Vec::with_capacity(spec.len());
    for &channel in spec.channels() {
        let mut grid = Array2::<f64>::zeros((n, n));
        for atom in &atoms {
            let (px, py) = (
                (atom.position[0] - geom.origin[0]) / h - 0.5,
                (atom.position[1] - geom.origin[1]) / h - 0.5,
            );
            if channel == Channel::Dirac {
                let (ix, iy) = (px.floor(), py.floor());
                let (fx, fy) = (px - ix, py - iy);
                let (ix, iy) = (ix as usize, iy as usize);
                let q = atom.charge as f64 / (h * h);
                grid[[iy, ix]] += q * (1.0 - fx) * (1.0 - fy);
                grid[[iy, ix + 1]] += q * fx * (1.0 - fy);
                grid[[iy + 1, ix]] += q * (1.0 - fx) * fy;
                grid[[iy + 1, ix + 1]] += q * fx * fy;
                continue;
            }
            let profile = profiles.get_2d(atom.charge)?;
            let target = profile.mass(channel);
            if target == 0.0 {
                continue;
            }
            let s = profile.support() / h;
            let (c0, c1) = ((px - s).ceil().max(0.0) as usize, ((px + s).floor() as usize).min(n - 1));
            let (r0, r1) = ((py - s).ceil().max(0.0) as usize, ((py + s).floor() as usize).min(n - 1));
            let mut bump = Array2::<f64>::zeros((r1 - r0 + 1, c1 - c0 + 1));
            for ((r, c), v) in bump.indexed_iter_mut() {
                let dx = (c0 + c) as f64 - px;
                let dy = (r0 + r) as f64 - py;
                *v = profile.value(channel, h * dx.hypot(dy));
            }
            let sampled = h * h * crate::numeric::pairwise_sum(bump.as_slice().unwrap());
            if sampled <= 0.0 {
                return Err(Error::Domain(format!(
                    "grid spacing {h} too coarse to sample the {channel} profile of z={}",
                    atom.charge
                )));
            }
            let scale = target / sampled;
            for ((r, c), v) in bump.indexed_iter() {
                grid[[r0 + r, c0 + c]] += scale * v;
            }
        }
        data.push(grid);
    }
    Ok(DensityGrid {
        geometry: *geom,
        channels: spec.channels().to_vec(),
        data,
    })
}

fn check_margin(m: &Molecule, geom: &GridGeometry, support: f64) -> Result<()> {
    let side = geom.side();
    let lo = [geom.origin[0] + 0.25 * side, geom.origin[1] + 0.25 * side];
    let hi = [geom.origin[0] + 0.75 * side, geom.origin[1] + 0.75 * side];
    let slack = 1e-9 * side;
    for a in m.atoms() {
        for d in 0..2 {
            let p = a.position[d];
            if p - support < lo[d] - slack || p + support > hi[d] + slack {
                return Err(Error::Margin {
                    id: m.id.clone(),
                    msg: format!(
                        "atom at ({:.4}, {:.4}) with support {support:.4} Bohr leaves the central half of a {side:.4} Bohr box",
                        a.position[0], a.position[1]
                    ),
                });
            }
        }
    }
    Ok(())
}
