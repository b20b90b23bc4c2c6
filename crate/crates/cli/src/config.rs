//! Run configuration: file defaults, flag overrides and the stable hash.

use std::fs;
use std::path::{Path, PathBuf};

use scatreg::density::ChannelSpec;
use scatreg::filterbank::FilterBankParams;
use scatreg::invariants::DictKind;
use scatreg::regress::{Criterion, KrrGrid};
use scatreg::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a command may need. Field order is part of the hash, so new
/// fields go at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub dict: DictKind,
    pub channels: String,
    pub grid_j: u32,
    pub angles_l: usize,
    pub xi0: f64,
    pub sigma: f64,
    pub slant: f64,
    /// Grid spacing in Bohr; derived from the dataset when absent.
    pub spacing: Option<f64>,
    pub profiles: Option<PathBuf>,
    pub allow_analytic_profiles: bool,
    pub m_max: usize,
    pub bags: usize,
    /// Bag size in percent; 90 below 1000 molecules, 80 above, when absent.
    pub beta: Option<f64>,
    pub criterion: Criterion,
    pub seed: u64,
    pub fold_seed: u64,
    pub stratify_folds: bool,
    pub krr: KrrSection,
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub draws: usize,
    pub study_m: usize,
    pub group_by: String,
    pub eps_grid: Vec<f64>,
    pub theory_configs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrrSection {
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub inner_folds: usize,
    pub replicas: usize,
    pub noise_scale: f64,
}

impl Default for KrrSection {
    fn default() -> Self {
        let grid = KrrGrid::default();
        KrrSection {
            sigmas: grid.sigmas,
            lambdas: grid.lambdas,
            inner_folds: grid.inner_folds,
            replicas: 8,
            noise_scale: 1.0,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let bank = FilterBankParams::default();
        RunConfig {
            dataset: None,
            dict: DictKind::Scattering,
            channels: "core,valence".into(),
            grid_j: bank.j,
            angles_l: bank.l,
            xi0: bank.xi0,
            sigma: bank.sigma,
            slant: bank.slant,
            spacing: None,
            profiles: None,
            allow_analytic_profiles: false,
            m_max: 1536,
            bags: 10,
            beta: None,
            criterion: Criterion::Mae,
            seed: 0,
            fold_seed: 0,
            stratify_folds: false,
            krr: KrrSection::default(),
            cache_dir: None,
            out: PathBuf::from("scatreg-out"),
            model: None,
            draws: 100,
            study_m: 512,
            group_by: "order".into(),
            eps_grid: (2..=6).map(|k| 2f64.powi(-k)).collect(),
            theory_configs: 20,
        }
    }
}

impl RunConfig {
    /// Reads a TOML file, or JSON when the extension says so.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.into(),
                line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
                msg: e.message().to_string(),
            })
        }
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec> {
        self.channels.parse()
    }

    pub fn bank_params(&self) -> FilterBankParams {
        FilterBankParams {
            j: self.grid_j,
            l: self.angles_l,
            xi0: self.xi0,
            sigma: self.sigma,
            slant: self.slant,
        }
    }

    pub fn beta_for(&self, n: usize) -> f64 {
        self.beta.unwrap_or(if n < 1000 { 90.0 } else { 80.0 })
    }

    pub fn krr_grid(&self) -> KrrGrid {
        KrrGrid {
            sigmas: self.krr.sigmas.clone(),
            lambdas: self.krr.lambdas.clone(),
            inner_folds: self.krr.inner_folds,
        }
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("no dataset given (use --dataset or `dataset` in the config)".into()))
    }

    /// Checks that referenced input files exist before any work starts.
    pub fn check_paths(&self) -> Result<()> {
        for p in [&self.dataset, &self.profiles, &self.model].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::InvalidParameter(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, leaving out where results are written.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
            map.remove("cache_dir");
        }
        sha256_hex(v.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_hash_stability() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.angles_l = 8;
        assert_ne!(d.hash(), c.hash());
        let mut e = c.clone();
        e.out = PathBuf::from("elsewhere");
        assert_eq!(e.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("grid_k = 3").is_err());
    }

    #[test]
    fn beta_default_depends_on_size() {
        let c = RunConfig::default();
        assert_eq!(c.beta_for(454), 90.0);
        assert_eq!(c.beta_for(4000), 80.0);
    }
}
