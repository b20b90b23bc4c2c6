use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use scatreg::analyze::{
    aggregate, aggregate_csv, fit_decay_law, mean_weight_magnitudes, scale_pair_grid, step_magnitudes, weight_study, GroupKey,
    StudyParams,
};
use scatreg::density::{default_spacing, ProfileTable};
use scatreg::filterbank::{build_filter_bank, LP_WARN_THRESHOLD};
use scatreg::invariants::{DictKind, FeatureConfig, FeatureMatrix, Featurizer};
use scatreg::molecule::{Dataset, DatasetFormat, FoldOptions, Molecule};
use scatreg::numeric::derive_seed;
use scatreg::regress::{
    bagged_fit, cross_validate, krr_fit, krr_select, mae, max_atoms, rmse, BagParams, CvReport, FoldOutcome, KrrParams,
};
use scatreg::theory::{
    convergence_study, coulomb_energy_gaussian, full_wavelet_sum, wavelet_sum, ChargeConfig3D, EnergyMode, Expansion,
};
use scatreg::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{file_hash, sha256_hex, RunConfig};

/// Loaded configuration plus its hash, shared by every command.
pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.check_paths()?;
        let hash = cfg.hash();
        fs::create_dir_all(&cfg.out)?;
        Ok(Ctx { cfg, hash })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn stamp(&self) -> Value {
        json!({
            "config_hash": self.hash,
            "seeds": { "seed": self.cfg.seed, "fold_seed": self.cfg.fold_seed },
        })
    }

    /// Writes a pretty JSON report with the config hash and seeds merged in.
    fn report(&self, name: &str, body: Value) -> Result<PathBuf> {
        let mut v = self.stamp();
        if let (Value::Object(dst), Value::Object(src)) = (&mut v, body) {
            dst.extend(src);
        }
        let path = self.out(name);
        fs::write(&path, serde_json::to_string_pretty(&v)? + "\n")?;
        Ok(path)
    }

    /// CSV reports carry the stamp as leading comment lines.
    fn csv_report(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out(name);
        let head = format!(
            "# config_hash={}\n# seed={} fold_seed={}\n",
            self.hash, self.cfg.seed, self.cfg.fold_seed
        );
        fs::write(&path, head + body)?;
        Ok(path)
    }

    fn dataset(&self) -> Result<Dataset> {
        let path = self.cfg.dataset_path()?;
        let opts = FoldOptions {
            seed: self.cfg.fold_seed,
            stratify_by_size: self.cfg.stratify_folds,
        };
        Dataset::load(path, DatasetFormat::from_path(path), &opts)
    }

    fn profiles(&self, path: Option<&Path>, allow_analytic: bool, dataset: &Dataset) -> Result<ProfileTable> {
        match path {
            Some(p) => ProfileTable::load(p, allow_analytic),
            None if allow_analytic => {
                let mut zs: Vec<u32> = dataset.molecules.iter().flat_map(|m| m.atoms().iter().map(|a| a.charge)).collect();
                zs.sort_unstable();
                zs.dedup();
                ProfileTable::analytic(zs)
            }
            None => Ok(ProfileTable::default()),
        }
    }

    fn feature_config(&self, dataset: &Dataset, profiles: &ProfileTable) -> Result<FeatureConfig> {
        let channels = self.cfg.channel_spec()?;
        let bank = self.cfg.bank_params();
        bank.validate()?;
        let h = match self.cfg.spacing {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(h) => return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {h}"))),
            None => default_spacing(dataset, &channels, profiles, bank.j)?,
        };
        Ok(FeatureConfig {
            kind: self.cfg.dict,
            channels,
            bank,
            h,
        })
    }

    fn cache_dir(&self) -> PathBuf {
        self.cfg.cache_dir.clone().unwrap_or_else(|| self.cfg.out.join("cache"))
    }

    /// Features for every molecule, read from the cache when the key matches.
    fn features(&self, dataset_path: &Path, dataset: &Dataset, profiles_key: &str, profiles: &ProfileTable, fc: &FeatureConfig) -> Result<FeatureMatrix> {
        let key_src = json!({
            "dataset": file_hash(dataset_path)?,
            "profiles": profiles_key,
            "features": fc,
        });
        let key = sha256_hex(serde_json::to_string(&key_src)?.as_bytes());
        let dir = self.cache_dir();
        fs::create_dir_all(&dir)?;
        let base = dir.join(format!("features-{}", &key[..24]));
        if base.with_extension("json").is_file() && base.with_extension("bin").is_file() {
            if let Ok(m) = FeatureMatrix::read(&base) {
                if m.ids.iter().eq(dataset.molecules.iter().map(|m| &m.id)) {
                    info!("feature cache hit: {}", base.display());
                    return Ok(m);
                }
            }
            warn!("ignoring unreadable cache entry {}", base.display());
        }
        info!("feature cache miss: computing {} features for {} molecules", fc.kind, dataset.len());
        let featurizer = Featurizer::new(fc.clone())?;
        let m = featurizer.featurize_all(&dataset.molecules, profiles)?;
        m.write(&base)?;
        Ok(m)
    }

    fn profiles_key(path: Option<&Path>, allow_analytic: bool) -> Result<String> {
        Ok(match path {
            Some(p) => format!("{}+{}", file_hash(p)?, allow_analytic),
            None if allow_analytic => "analytic".into(),
            None => "none".into(),
        })
    }

    /// Dataset, profiles, feature layout and the feature matrix from the run config.
    fn load_features(&self) -> Result<(Dataset, FeatureConfig, FeatureMatrix)> {
        let dataset = self.dataset()?;
        let ppath = self.cfg.profiles.as_deref();
        let profiles = self.profiles(ppath, self.cfg.allow_analytic_profiles, &dataset)?;
        let fc = self.feature_config(&dataset, &profiles)?;
        let pkey = Self::profiles_key(ppath, self.cfg.allow_analytic_profiles)?;
        let fm = self.features(self.cfg.dataset_path()?, &dataset, &pkey, &profiles, &fc)?;
        Ok((dataset, fc, fm))
    }

    fn bag_params(&self, n: usize) -> BagParams {
        BagParams {
            beta: self.cfg.beta_for(n),
            bags: self.cfg.bags,
            m_max: self.cfg.m_max,
            criterion: self.cfg.criterion,
            seed: self.cfg.seed,
        }
    }
}

pub fn featurize(ctx: &Ctx) -> Result<()> {
    let (_, fc, fm) = ctx.load_features()?;
    fm.write(&ctx.out("features"))?;
    ctx.report(
        "featurize.json",
        json!({
            "features": fc,
            "rows": fm.rows.len(),
            "columns": fm.table.len(),
            "per_channel": fm.table.per_channel(),
        }),
    )?;
    println!("{} molecules x {} features -> {}", fm.rows.len(), fm.table.len(), ctx.out("features.bin").display());
    Ok(())
}

/// Compact trained model: per-bag dense weights plus what is needed to featurize again.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub config_hash: String,
    pub seed: u64,
    pub features: FeatureConfig,
    pub profiles: Option<PathBuf>,
    pub allow_analytic_profiles: bool,
    pub columns: usize,
    pub bag_params: BagParams,
    pub bags: Vec<BagEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BagEntry {
    pub m_bar: usize,
    pub holdout_error: f64,
    pub weights: Vec<(usize, f64)>,
}

impl ModelFile {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let sum: f64 = self
            .bags
            .iter()
            .map(|b| b.weights.iter().map(|&(k, w)| w * x[k]).sum::<f64>())
            .sum();
        sum / self.bags.len() as f64
    }
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let (dataset, fc, fm) = ctx.load_features()?;
    let targets = dataset.targets()?;
    let params = ctx.bag_params(dataset.len());
    let model = bagged_fit(&fm.rows, &targets, &params)?;
    let file = ModelFile {
        config_hash: ctx.hash.clone(),
        seed: ctx.cfg.seed,
        features: fc,
        profiles: ctx.cfg.profiles.clone(),
        allow_analytic_profiles: ctx.cfg.allow_analytic_profiles,
        columns: fm.table.len(),
        bag_params: params,
        bags: model
            .bags
            .iter()
            .map(|b| BagEntry {
                m_bar: b.m_bar,
                holdout_error: b.holdout_error,
                weights: b.weights.clone(),
            })
            .collect(),
    };
    let pred: Vec<f64> = fm.rows.iter().map(|x| file.predict(x)).collect();
    fs::write(ctx.out("model.json"), serde_json::to_string_pretty(&file)? + "\n")?;
    ctx.report(
        "train.json",
        json!({
            "molecules": dataset.len(),
            "mean_m_bar": model.mean_m_bar(),
            "train_mae": mae(&pred, &targets),
            "train_rmse": rmse(&pred, &targets),
        }),
    )?;
    println!(
        "trained {} bags, mean M = {:.1}, training MAE {:.4} kcal/mol",
        file.bags.len(),
        model.mean_m_bar(),
        mae(&pred, &targets)
    );
    Ok(())
}

pub fn predict(ctx: &Ctx) -> Result<()> {
    let path = ctx
        .cfg
        .model
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter("no model given (use --model)".into()))?;
    let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.bags.is_empty() {
        return Err(Error::InvalidParameter("model has no bags".into()));
    }
    let dataset = ctx.dataset()?;
    let ppath = ctx.cfg.profiles.as_deref().or(file.profiles.as_deref());
    let allow = ctx.cfg.allow_analytic_profiles || file.allow_analytic_profiles;
    let profiles = ctx.profiles(ppath, allow, &dataset)?;
    let pkey = Ctx::profiles_key(ppath, allow)?;
    let fm = ctx.features(ctx.cfg.dataset_path()?, &dataset, &pkey, &profiles, &file.features)?;
    if fm.table.len() != file.columns {
        return Err(Error::SizeMismatch {
            expected: file.columns,
            got: fm.table.len(),
        });
    }
    let pred: Vec<f64> = fm.rows.iter().map(|x| file.predict(x)).collect();
    let mut csv = String::from("id,prediction,target,error\n");
    let mut scored = (Vec::new(), Vec::new());
    for (m, p) in dataset.molecules.iter().zip(&pred) {
        match m.energy {
            Some(e) => {
                writeln!(csv, "{},{p},{e},{}", m.id, p - e).unwrap();
                scored.0.push(*p);
                scored.1.push(e);
            }
            None => writeln!(csv, "{},{p},,", m.id).unwrap(),
        }
    }
    ctx.csv_report("predictions.csv", &csv)?;
    let metrics = (!scored.0.is_empty()).then(|| json!({ "mae": mae(&scored.0, &scored.1), "rmse": rmse(&scored.0, &scored.1), "scored": scored.0.len() }));
    ctx.report(
        "predict.json",
        json!({ "model": path, "model_config_hash": file.config_hash, "molecules": dataset.len(), "metrics": metrics }),
    )?;
    println!("{} predictions -> {}", pred.len(), ctx.out("predictions.csv").display());
    Ok(())
}

fn write_cv(ctx: &Ctx, stem: &str, title: &str, report: &CvReport, extra: Value) -> Result<()> {
    ctx.csv_report(&format!("{stem}.csv"), &report.to_csv())?;
    let table = format!("{title}\n{}", report.table());
    fs::write(ctx.out(&format!("{stem}.txt")), &table)?;
    let mut body = json!({ "report": report });
    if let (Value::Object(dst), Value::Object(src)) = (&mut body, extra) {
        dst.extend(src);
    }
    ctx.report(&format!("{stem}.json"), body)?;
    print!("{table}");
    Ok(())
}

pub fn cv(ctx: &Ctx) -> Result<()> {
    let (dataset, fc, fm) = ctx.load_features()?;
    let targets = dataset.targets()?;
    let params = ctx.bag_params(dataset.len());
    let report = cross_validate(&dataset, |train, test| {
        let x: Vec<Vec<f64>> = train.iter().map(|&i| fm.rows[i].clone()).collect();
        let y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let model = bagged_fit(&x, &y, &params)?;
        Ok(FoldOutcome {
            predictions: test.iter().map(|&i| model.predict(&fm.rows[i])).collect(),
            m_bar: Some(model.mean_m_bar()),
        })
    })?;
    let title = format!("{} dictionary, channels {}", fc.kind, fc.channels);
    write_cv(ctx, "cv", &title, &report, json!({ "features": fc, "bag_params": params }))
}

pub fn krr_baseline(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let targets = dataset.targets()?;
    let all: Vec<&Molecule> = dataset.molecules.iter().collect();
    let pad_to = max_atoms(&all);
    let base = KrrParams {
        replicas: ctx.cfg.krr.replicas,
        noise_scale: ctx.cfg.krr.noise_scale,
        seed: ctx.cfg.seed,
        ..KrrParams::default()
    };
    let grid = ctx.cfg.krr_grid();
    let report = cross_validate(&dataset, |train, test| {
        let mols: Vec<&Molecule> = train.iter().map(|&i| &dataset.molecules[i]).collect();
        let y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let (sigma, lambda) = krr_select(&mols, &y, &base, &grid, pad_to)?;
        info!("fold of {} molecules: sigma = {sigma}, lambda = {lambda:e}", train.len());
        let model = krr_fit(&mols, &y, &KrrParams { sigma, lambda, ..base }, pad_to)?;
        Ok(FoldOutcome {
            predictions: test.iter().map(|&i| model.predict(&dataset.molecules[i])).collect::<Result<_>>()?,
            m_bar: None,
        })
    })?;
    write_cv(
        ctx,
        "krr",
        "Coulomb-matrix kernel ridge regression",
        &report,
        json!({ "krr": ctx.cfg.krr, "pad_to": pad_to }),
    )
}

pub fn validate_theorems(ctx: &Ctx) -> Result<()> {
    let n = ctx.cfg.theory_configs.max(1);
    let mut rows = Vec::with_capacity(n);
    let mut csv = String::from("config,charges,sigma,energy,dyadic_sum,rel_error,window_lo,window_hi,truncated_rel_error\n");
    let mut worst = 0.0f64;
    for s in 0..n {
        let sigma = if n == 1 { 1.0 } else { 0.25 + 1.75 * s as f64 / (n - 1) as f64 };
        let cfg = ChargeConfig3D::seeded(derive_seed(ctx.cfg.seed, s as u64), 6, sigma, 8.0);
        let u = coulomb_energy_gaussian(&cfg)?;
        let (sum, lo, hi) = full_wavelet_sum(&cfg, EnergyMode::Full)?;
        let trunc = wavelet_sum(&cfg, -20, 20, EnergyMode::Full)?;
        let rel = (sum - u).abs() / u.abs();
        let trel = (trunc - u).abs() / u.abs();
        worst = worst.max(rel);
        writeln!(csv, "{s},{},{sigma},{u},{sum},{rel:e},{lo},{hi},{trel:e}", cfg.charges.len()).unwrap();
        rows.push(json!({ "config": cfg, "energy": u, "dyadic_sum": sum, "rel_error": rel, "window": [lo, hi], "truncated_rel_error": trel }));
    }
    let conv_cfg = ChargeConfig3D::seeded(ctx.cfg.seed.wrapping_add(100), 3, 0.5, 4.0);
    let fourier = convergence_study(&conv_cfg, &ctx.cfg.eps_grid, Expansion::Fourier, EnergyMode::Full)?;
    let wavelet = convergence_study(&conv_cfg, &ctx.cfg.eps_grid, Expansion::Wavelet, EnergyMode::Full)?;
    let mut conv_csv = String::from("expansion,eps,terms,error\n");
    for r in [&fourier, &wavelet] {
        for ((e, t), err) in r.eps.iter().zip(&r.terms).zip(&r.errors) {
            writeln!(conv_csv, "{},{e},{t},{err:e}", serde_json::to_value(r.expansion)?.as_str().unwrap_or("")).unwrap();
        }
    }
    ctx.csv_report("identity.csv", &csv)?;
    ctx.csv_report("convergence.csv", &conv_csv)?;
    let summary = json!({
        "identity_max_rel_error": worst,
        "fourier_slope": fourier.slope,
        "wavelet_slope": wavelet.slope,
    });
    ctx.report(
        "theorems.json",
        json!({ "summary": summary, "identity": rows, "convergence_config": conv_cfg, "fourier": fourier, "wavelet": wavelet }),
    )?;
    println!("{}", serde_json::to_string_pretty(&json!({ "fourier": fourier, "wavelet": wavelet, "summary": summary }))?);
    Ok(())
}

pub fn analyze_weights(ctx: &Ctx) -> Result<()> {
    let key: GroupKey = ctx.cfg.group_by.parse()?;
    let (dataset, fc, fm) = ctx.load_features()?;
    let targets = dataset.targets()?;
    let params = StudyParams {
        draws: ctx.cfg.draws,
        m: ctx.cfg.study_m,
        beta: ctx.cfg.beta_for(dataset.len()),
        seed: ctx.cfg.seed,
    };
    let study = weight_study(&fm.rows, &targets, &fm.table.descriptors, &params)?;
    let groups = aggregate(&study, key);
    ctx.csv_report(&format!("weights-{}.csv", ctx.cfg.group_by.to_ascii_lowercase()), &aggregate_csv(&groups, key))?;

    let mut per = String::from("column,descriptor,mean_abs_weight\n");
    for (i, (d, w)) in study.descriptors.iter().zip(mean_weight_magnitudes(&study)).enumerate() {
        writeln!(per, "{i},{},{w:e}", d.label()).unwrap();
    }
    ctx.csv_report("weights-per-descriptor.csv", &per)?;

    if fc.kind == DictKind::Scattering {
        let grid = scale_pair_grid(&study, fc.bank.j);
        let mut g = String::from("j,j2,mean_abs_weight\n");
        for (j, row) in grid.iter().enumerate() {
            for (j2, v) in row.iter().enumerate() {
                writeln!(g, "{j},{j2},{v:e}").unwrap();
            }
        }
        ctx.csv_report("scale-pairs.csv", &g)?;
    }

    let steps = step_magnitudes(&study);
    let mut s = String::from("step,mean_abs_weight\n");
    for (m, v) in steps.iter().enumerate() {
        writeln!(s, "{},{v:e}", m + 1).unwrap();
    }
    ctx.csv_report("steps.csv", &s)?;
    let decay = match fit_decay_law(&steps) {
        Ok(fit) => json!(fit),
        Err(e) => {
            warn!("decay fit skipped: {e}");
            json!({ "error": e.to_string() })
        }
    };
    ctx.report(
        "analysis.json",
        json!({ "study": params, "group_by": ctx.cfg.group_by, "groups": groups, "decay": decay }),
    )?;
    for (label, v) in &groups {
        println!("{label:>24}  {v:.6e}");
    }
    Ok(())
}

pub fn filterbank_check(ctx: &Ctx) -> Result<()> {
    let params = ctx.cfg.bank_params();
    let bank = build_filter_bank(&params)?;
    let lp = bank.littlewood_paley();
    let n = bank.n();
    let mut max_dc = 0.0f64;
    for j in 0..bank.j() {
        for ell in 0..bank.l() {
            max_dc = max_dc.max(bank.psi_hat(j, ell, 0, 0).abs());
        }
    }
    let nonzero = lp.iter().skip(1);
    let lp_min = nonzero.clone().copied().fold(f64::INFINITY, f64::min);
    let lp_max = nonzero.copied().fold(0.0, f64::max);
    let bytes: Vec<u8> = lp.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(ctx.out("filterbank.bin"), bytes)?;
    ctx.report(
        "filterbank.json",
        json!({
            "params": params,
            "grid": n,
            "lp_constant": bank.lp_constant,
            "lp_min": lp_min,
            "lp_max": lp_max,
            "max_abs_dc": max_dc,
            "within_threshold": bank.lp_constant <= LP_WARN_THRESHOLD,
            "layout": "row-major little-endian f64, transposed spectrum [kx * n + ky]",
        }),
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "lp_constant": bank.lp_constant, "lp_min": lp_min, "lp_max": lp_max, "max_abs_dc": max_dc }))?
    );
    Ok(())
}
