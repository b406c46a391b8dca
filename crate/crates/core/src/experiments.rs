//! Experiment drivers behind the command-line subcommands, and the tidy
//! result table they all emit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{Dataset, Source};
use crate::hypotest::{
    analytic_power, bootstrap_distribution, z_test_with, BootstrapDistribution, Pipeline,
};
use crate::propensity::IrlsOptions;
use crate::scenarios::{
    encode_tables, generate_linear, generate_nonlinear, induce_confounding, read_table, split_rct,
    LinearScenario, NaPolicy, NonlinearScenario, SelectionRule, TableSpec,
};
use crate::statcore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Type1,
    PowerSweep,
    AnalyticPower,
    TestPair,
    Semisynth,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Type1 => "type1",
            Kind::PowerSweep => "power-sweep",
            Kind::AnalyticPower => "analytic-power",
            Kind::TestPair => "test-pair",
            Kind::Semisynth => "semisynth",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    #[default]
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
    /// When sweeping `beta_u` on the linear model, rescale `beta_x` and
    /// `sigma_eps` so that beta_x/beta_u and sigma_eps²/beta_u² keep their
    /// base values.
    #[serde(default)]
    pub hold_c_eta: bool,
}

/// Input files and column roles for `test-pair` and `semisynth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub rct: Option<PathBuf>,
    #[serde(default)]
    pub obs: Option<PathBuf>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub na_policy: NaPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 200 replicates, 500 resamples.
    Ci,
    /// 1000 replicates, 1000 resamples for type I error runs; 200 and 500
    /// for power sweeps.
    Full,
}

fn default_replicates() -> usize {
    200
}
fn default_b() -> usize {
    500
}
fn default_alphas() -> Vec<f64> {
    vec![0.05]
}
fn default_n_rct() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub model: Model,
    #[serde(default)]
    pub linear: LinearScenario,
    #[serde(default)]
    pub nonlinear: NonlinearScenario,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_b")]
    pub b: usize,
    #[serde(default = "default_alphas")]
    pub alpha_levels: Vec<f64>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub rule: Option<SelectionRule>,
    /// Size of the randomized subsample in `semisynth`.
    #[serde(default = "default_n_rct")]
    pub n_rct: usize,
    /// Also estimate z-test power by simulation in `analytic-power`.
    #[serde(default)]
    pub companion_z: bool,
    #[serde(default)]
    pub irls: IrlsOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the path ends in `.json` (the `config`
    /// object of a JSON result file is itself a valid config).
    ///
    /// Relative data paths are taken relative to the config file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            Self::from_toml(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = cfg.data.as_mut() {
            for p in [&mut d.rct, &mut d.obs, &mut d.csv].into_iter().flatten() {
                if p.is_relative() {
                    let joined = base.join(&*p);
                    *p = joined.canonicalize().unwrap_or(joined);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply_preset(&mut self, preset: Preset, kind: Kind) {
        let (r, b) = match (preset, kind) {
            (Preset::Ci, _) => (200, 500),
            (Preset::Full, Kind::Type1) => (1000, 1000),
            (Preset::Full, _) => (200, 500),
        };
        self.replicates = r;
        self.b = b;
    }

    /// Checks shared invariants and fixes `kind`.
    pub fn validate_for(&mut self, kind: Kind) -> Result<()> {
        match self.kind {
            Some(k) if k != kind => {
                return Err(Error::Config(format!(
                    "config is for '{}' but subcommand is '{}'",
                    k.as_str(),
                    kind.as_str()
                )))
            }
            _ => self.kind = Some(kind),
        }
        if self.alpha_levels.is_empty() {
            return Err(Error::Config("alpha_levels is empty".into()));
        }
        if let Some(a) = self.alpha_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::Config(format!("alpha level {a} outside (0, 1)")));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if matches!(
            kind,
            Kind::Type1 | Kind::PowerSweep | Kind::TestPair | Kind::Semisynth
        ) && self.b < 100
        {
            return Err(Error::Config(format!(
                "b = {} but at least 100 resamples are required",
                self.b
            )));
        }
        match self.model {
            Model::Linear => self.linear.validate()?,
            Model::Nonlinear => self.nonlinear.validate()?,
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::Config("sweep grid is empty".into()));
            }
            if sw.hold_c_eta {
                if sw.parameter != "beta_u" || self.model != Model::Linear {
                    return Err(Error::Config(
                        "hold_c_eta applies to a beta_u sweep on the linear model".into(),
                    ));
                }
                if self.linear.beta_u == 0.0 {
                    return Err(Error::Config("hold_c_eta needs a base beta_u != 0".into()));
                }
            }
            // Setting the first value checks the name.
            self.with_parameter(&sw.parameter, sw.values[0])?;
        }
        Ok(())
    }

    /// Short content hash of the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Copy with scenario field `name` set to `value`.
    fn with_parameter(&self, name: &str, value: f64) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        fn set<T: Serialize + serde::de::DeserializeOwned>(
            s: &T,
            name: &str,
            value: f64,
        ) -> Result<T> {
            let mut v = serde_json::to_value(s).expect("scenario serializes");
            let obj = v.as_object_mut().expect("scenario is an object");
            let slot = obj.get_mut(name).ok_or_else(|| {
                Error::Config(format!("sweep parameter '{name}' is not a scenario field"))
            })?;
            *slot = if slot.is_u64() {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "'{name}' needs a nonnegative integer, got {value}"
                    )));
                }
                serde_json::json!(value as u64)
            } else if slot.is_number() {
                serde_json::json!(value)
            } else {
                return Err(Error::Config(format!(
                    "sweep parameter '{name}' is not numeric"
                )));
            };
            serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
        }
        match self.model {
            Model::Linear => out.linear = set(&self.linear, name, value)?,
            Model::Nonlinear => out.nonlinear = set(&self.nonlinear, name, value)?,
        }
        let hold = self.sweep.as_ref().is_some_and(|s| s.hold_c_eta);
        if hold && name == "beta_u" && self.model == Model::Linear && self.linear.beta_u != 0.0 {
            let base = &self.linear;
            let c = base.beta_x / base.beta_u;
            let eta = (base.sigma_eps / base.beta_u).powi(2);
            out.linear.beta_x = c * value;
            out.linear.sigma_eps = eta.sqrt() * value.abs();
        }
        Ok(out)
    }

    fn null_holds(&self) -> bool {
        match self.model {
            Model::Linear => self.linear.null_holds(),
            Model::Nonlinear => self.nonlinear.null_holds(),
        }
    }

    fn generate(&self, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
        let (r, o) = match self.model {
            Model::Linear => generate_linear(&self.linear, rng)?,
            Model::Nonlinear => generate_nonlinear(&self.nonlinear, rng)?,
        };
        Ok((r.strip_latent(), o.strip_latent()))
    }

    fn pipeline(&self) -> Pipeline {
        Pipeline { irls: self.irls }
    }

    fn sweep_grid(&self) -> Result<&Sweep> {
        self.sweep
            .as_ref()
            .ok_or_else(|| Error::Config("this experiment needs a [sweep] section".into()))
    }
}

/// One tidy output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub kind: String,
    pub label: String,
    pub param: String,
    pub param_value: Option<f64>,
    pub alpha: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub se: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

/// Column order of the CSV rendering.
pub const CSV_COLUMNS: [&str; 10] = [
    "kind",
    "label",
    "param",
    "param_value",
    "alpha",
    "metric",
    "value",
    "se",
    "seed",
    "config_hash",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<Row>,
}

impl ResultTable {
    fn new(config: &ExperimentConfig) -> Self {
        ResultTable {
            config: config.clone(),
            seed: config.seed,
            config_hash: config.hash(),
            rows: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        label: &str,
        param: &str,
        param_value: Option<f64>,
        alpha: Option<f64>,
        metric: &str,
        value: f64,
        se: Option<f64>,
    ) {
        self.rows.push(Row {
            kind: self.config.kind.map(Kind::as_str).unwrap_or("").to_string(),
            label: label.to_string(),
            param: param.to_string(),
            param_value,
            alpha,
            metric: metric.to_string(),
            value,
            se,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        });
    }

    /// Rows whose metric and label match.
    pub fn select<'a>(
        &'a self,
        label: &'a str,
        metric: &'a str,
    ) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.label == label && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.kind.clone(),
                r.label.clone(),
                r.param.clone(),
                opt(r.param_value),
                opt(r.alpha),
                r.metric.clone(),
                r.value.to_string(),
                opt(r.se),
                r.seed.to_string(),
                r.config_hash.clone(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }
}

fn proportion_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Runs `f` for every replicate index, in parallel, and reports the
/// lowest-index failure so errors are deterministic too.
fn replicates<T: Send>(reps: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let out: Vec<Result<T>> = (0..reps).into_par_iter().map(&f).collect();
    out.into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Replicate {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

fn model_label(cfg: &ExperimentConfig) -> &'static str {
    match cfg.model {
        Model::Linear => "linear",
        Model::Nonlinear => "nonlinear",
    }
}

/// Bootstrap rejection indicators, one `Vec<bool>` (per alpha) per replicate.
/// Replicate `r` uses substream `r` of the master seed, so grid points of a
/// sweep share random numbers.
fn bootstrap_rejections(cfg: &ExperimentConfig) -> Result<Vec<Vec<bool>>> {
    let master = Rng::new(cfg.seed);
    let pipeline = cfg.pipeline();
    replicates(cfg.replicates, |r| {
        let rng = master.child(r as u64);
        let (rct, obs) = cfg.generate(&mut rng.child(0))?;
        let dist = bootstrap_distribution(&rct, &obs, cfg.b, &rng.child(1), &pipeline)?;
        cfg.alpha_levels
            .iter()
            .map(|&a| Ok(dist.decide(a)?.reject))
            .collect()
    })
}

fn rejection_rates(rejections: &[Vec<bool>], n_alpha: usize) -> Vec<f64> {
    (0..n_alpha)
        .map(|j| rejections.iter().filter(|r| r[j]).count() as f64 / rejections.len() as f64)
        .collect()
}

/// Empirical type I error of the bootstrap test.
pub fn run_type1(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut cfg = cfg.clone();
    cfg.validate_for(Kind::Type1)?;
    if !cfg.null_holds() {
        log::warn!(
            "scenario does not satisfy the null hypothesis; rates are power, not type I error"
        );
    }
    let rej = bootstrap_rejections(&cfg)?;
    let mut table = ResultTable::new(&cfg);
    let label = model_label(&cfg);
    for (&alpha, p) in cfg
        .alpha_levels
        .iter()
        .zip(rejection_rates(&rej, cfg.alpha_levels.len()))
    {
        table.push(
            label,
            "",
            None,
            Some(alpha),
            "rejection_rate",
            p,
            Some(proportion_se(p, cfg.replicates)),
        );
    }
    Ok(table)
}

/// Empirical bootstrap power over a one-parameter grid, with the closed-form
/// z-test power alongside when the model is linear and it is defined.
pub fn run_power_sweep(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut cfg = cfg.clone();
    cfg.validate_for(Kind::PowerSweep)?;
    let sweep = cfg.sweep_grid()?.clone();
    let mut table = ResultTable::new(&cfg);
    let label = model_label(&cfg);
    for &v in &sweep.values {
        let point = cfg.with_parameter(&sweep.parameter, v)?;
        match point.model {
            Model::Linear => point.linear.validate()?,
            Model::Nonlinear => point.nonlinear.validate()?,
        }
        let rej = bootstrap_rejections(&point)?;
        for (&alpha, p) in cfg
            .alpha_levels
            .iter()
            .zip(rejection_rates(&rej, cfg.alpha_levels.len()))
        {
            table.push(
                label,
                &sweep.parameter,
                Some(v),
                Some(alpha),
                "power",
                p,
                Some(proportion_se(p, cfg.replicates)),
            );
            if point.model == Model::Linear && point.linear.beta_u != 0.0 {
                let a = analytic_power(&point.linear, alpha)?;
                table.push(
                    label,
                    &sweep.parameter,
                    Some(v),
                    Some(alpha),
                    "analytic_power",
                    a.power,
                    None,
                );
            }
        }
    }
    Ok(table)
}

/// Closed-form z-test power over a grid, optionally with simulated z-test
/// rejection rates.
pub fn run_analytic_power(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut cfg = cfg.clone();
    cfg.validate_for(Kind::AnalyticPower)?;
    if cfg.model != Model::Linear {
        return Err(Error::Config(
            "analytic power is defined for the linear model only".into(),
        ));
    }
    let (param, values) = match &cfg.sweep {
        Some(s) => (s.parameter.clone(), s.values.clone()),
        None => ("delta_a".to_string(), vec![cfg.linear.delta_a]),
    };
    let mut table = ResultTable::new(&cfg);
    for &v in &values {
        let point = cfg.with_parameter(&param, v)?;
        if point.linear.beta_u == 0.0 {
            return Err(Error::Config(format!(
                "analytic power needs beta_u != 0 ({param} = {v})"
            )));
        }
        for &alpha in &cfg.alpha_levels {
            let rep = analytic_power(&point.linear, alpha)?;
            table.push(
                "linear",
                &param,
                Some(v),
                Some(alpha),
                "analytic_power",
                rep.power,
                None,
            );
            table.push("linear", &param, Some(v), Some(alpha), "h", rep.h, None);
        }
        if cfg.companion_z {
            let master = Rng::new(cfg.seed);
            let pipeline = point.pipeline();
            let z: Vec<f64> = replicates(cfg.replicates, |r| {
                let (rct, obs) = point.generate(&mut master.child(r as u64))?;
                Ok(z_test_with(&rct, &obs, 0.5, &pipeline)?.z)
            })?;
            for &alpha in &cfg.alpha_levels {
                let crit = crate::statcore::normal_quantile(1.0 - alpha / 2.0)?;
                let p = z.iter().filter(|s| s.abs() > crit).count() as f64 / z.len() as f64;
                table.push(
                    "linear",
                    &param,
                    Some(v),
                    Some(alpha),
                    "z_test_power",
                    p,
                    Some(proportion_se(p, cfg.replicates)),
                );
            }
        }
    }
    Ok(table)
}

/// Both tests on one pair of datasets, as rows under `label`.
fn test_pair_rows(
    table: &mut ResultTable,
    cfg: &ExperimentConfig,
    label: &str,
    rct: &Dataset,
    obs: &Dataset,
    rng: &Rng,
) -> Result<BootstrapDistribution> {
    let pipeline = cfg.pipeline();
    let dist = bootstrap_distribution(rct, obs, cfg.b, rng, &pipeline)?;
    let alpha0 = cfg.alpha_levels[0];
    let z = z_test_with(rct, obs, alpha0, &pipeline)?;
    table.push(label, "", None, None, "n_rct", rct.len() as f64, None);
    table.push(label, "", None, None, "n_obs", obs.len() as f64, None);
    table.push(
        label,
        "",
        None,
        None,
        "omega_r",
        z.omega_r.omega_hat,
        Some(z.omega_r.var_hat.sqrt()),
    );
    table.push(
        label,
        "",
        None,
        None,
        "omega_o",
        z.omega_o.omega_hat,
        Some(z.omega_o.var_hat.sqrt()),
    );
    table.push(label, "", None, None, "t_observed", dist.t_observed, None);
    table.push(label, "", None, None, "z", z.z, None);
    table.push(label, "", None, None, "z_p_value", z.p_value, None);
    table.push(
        label,
        "",
        None,
        None,
        "bootstrap_redraws",
        dist.redraws as f64,
        None,
    );
    for &alpha in &cfg.alpha_levels {
        let d = dist.decide(alpha)?;
        let zr = z.at_level(alpha)?;
        table.push(label, "", None, Some(alpha), "q_lo", d.q_lo, None);
        table.push(label, "", None, Some(alpha), "q_hi", d.q_hi, None);
        table.push(
            label,
            "",
            None,
            Some(alpha),
            "bootstrap_reject",
            f64::from(u8::from(d.reject)),
            None,
        );
        table.push(
            label,
            "",
            None,
            Some(alpha),
            "bootstrap_p_value",
            d.p_value,
            None,
        );
        table.push(
            label,
            "",
            None,
            Some(alpha),
            "z_reject",
            f64::from(u8::from(zr.reject)),
            None,
        );
    }
    for (i, t) in dist.replicates.iter().enumerate() {
        table.push(label, "b", Some(i as f64), None, "t_star", *t, None);
    }
    Ok(dist)
}

fn table_spec(data: &DataConfig, labels: Vec<String>) -> TableSpec {
    TableSpec {
        treatment: data.treatment.clone(),
        outcome: data.outcome.clone(),
        covariates: data.covariates.clone(),
        labels,
        na_policy: data.na_policy,
    }
}

fn data_config(cfg: &ExperimentConfig) -> Result<&DataConfig> {
    cfg.data
        .as_ref()
        .ok_or_else(|| Error::Config("this experiment needs a [data] section".into()))
}

/// Bootstrap and z-test on a randomized file and an observational file.
/// Paths given here override `[data] rct`/`obs`.
pub fn run_test_pair(
    rct_csv: Option<&Path>,
    obs_csv: Option<&Path>,
    cfg: &ExperimentConfig,
) -> Result<ResultTable> {
    let mut cfg = cfg.clone();
    {
        let data = cfg
            .data
            .as_mut()
            .ok_or_else(|| Error::Config("test-pair needs a [data] section".into()))?;
        if let Some(p) = rct_csv {
            data.rct = Some(p.to_path_buf());
        }
        if let Some(p) = obs_csv {
            data.obs = Some(p.to_path_buf());
        }
    }
    cfg.validate_for(Kind::TestPair)?;
    let data = data_config(&cfg)?;
    let (Some(rct_path), Some(obs_path)) = (&data.rct, &data.obs) else {
        return Err(Error::Config(
            "test-pair needs both an rct and an obs file".into(),
        ));
    };
    let rt = read_table(rct_path)?;
    let ot = read_table(obs_path)?;
    let spec = table_spec(data, vec![]);
    let mut pair = encode_tables(&[(&rt, Source::Rct), (&ot, Source::Obs)], &spec)?;
    let (obs, obs_rep) = pair.pop().expect("two tables");
    let (rct, rct_rep) = pair.pop().expect("two tables");
    for rep in [&rct_rep, &obs_rep] {
        if rep.rows_dropped > 0 {
            log::info!(
                "{}: dropped {} incomplete rows",
                rep.origin,
                rep.rows_dropped
            );
        }
    }
    let mut table = ResultTable::new(&cfg);
    test_pair_rows(&mut table, &cfg, "pair", &rct, &obs, &Rng::new(cfg.seed))?;
    Ok(table)
}

/// Randomized subsample, confounding by selection, then both tests with the
/// confounder observed and hidden.
pub fn run_semisynth(csv_path: Option<&Path>, cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut cfg = cfg.clone();
    if let (Some(p), Some(d)) = (csv_path, cfg.data.as_mut()) {
        d.csv = Some(p.to_path_buf());
    }
    cfg.validate_for(Kind::Semisynth)?;
    let data = data_config(&cfg)?;
    let rule = cfg
        .rule
        .as_ref()
        .ok_or_else(|| Error::Config("semisynth needs a [rule] section".into()))?;
    rule.validate()?;
    if rule.treatment_column != data.treatment || rule.outcome_column != data.outcome {
        return Err(Error::Config(
            "rule treatment/outcome columns differ from [data] treatment/outcome".into(),
        ));
    }
    if !data.covariates.contains(&rule.confounder_column) {
        return Err(Error::Config(format!(
            "confounder column '{}' must be listed among the covariates",
            rule.confounder_column
        )));
    }
    let path = data
        .csv
        .as_ref()
        .ok_or_else(|| Error::Config("semisynth needs a csv file".into()))?;
    let table_in = read_table(path)?;
    let spec = table_spec(data, vec![rule.confounder_column.clone()]);
    let (full, report) = encode_tables(&[(&table_in, Source::Rct)], &spec)?.remove(0);
    rule.check_coverage(&full)?;

    let master = Rng::new(cfg.seed);
    let (rct, rest) = split_rct(&full, cfg.n_rct, &mut master.child(0))?;
    let obs_seen = induce_confounding(&rest, rule, false)?;
    let obs_hidden = induce_confounding(&rest, rule, true)?;
    let rct_hidden = rct.without_column(&rule.confounder_column);

    let mut table = ResultTable::new(&cfg);
    table.push(
        "input",
        "",
        None,
        None,
        "rows_read",
        report.rows_read as f64,
        None,
    );
    table.push(
        "input",
        "",
        None,
        None,
        "rows_kept",
        report.rows_kept as f64,
        None,
    );
    table.push(
        "input",
        "",
        None,
        None,
        "n_treated",
        full.n_treated() as f64,
        None,
    );
    test_pair_rows(
        &mut table,
        &cfg,
        "confounder_observed",
        &rct,
        &obs_seen,
        &master.child(1),
    )?;
    test_pair_rows(
        &mut table,
        &cfg,
        "confounder_hidden",
        &rct_hidden,
        &obs_hidden,
        &master.child(2),
    )?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            replicates: 3,
            b: 100,
            alpha_levels: vec![0.1, 0.05],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn defaults_and_unknown_keys() {
        let c = ExperimentConfig::default();
        assert_eq!((c.replicates, c.b, c.n_rct), (200, 500, 200));
        assert!(ExperimentConfig::from_toml("replicates = 5\nwhat = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[linear]\nbeta_zz = 1.0\n").is_err());
    }

    #[test]
    fn kind_mismatch_and_bad_alpha() {
        let mut c = ExperimentConfig {
            kind: Some(Kind::Type1),
            ..small()
        };
        assert!(matches!(
            c.validate_for(Kind::PowerSweep),
            Err(Error::Config(_))
        ));
        let mut c = ExperimentConfig {
            alpha_levels: vec![0.05, 1.0],
            ..small()
        };
        assert!(matches!(c.validate_for(Kind::Type1), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_parameter_must_name_a_field() {
        let mut c = ExperimentConfig {
            sweep: Some(Sweep {
                parameter: "gamma_q".into(),
                values: vec![1.0],
                hold_c_eta: false,
            }),
            ..small()
        };
        assert!(matches!(
            c.validate_for(Kind::PowerSweep),
            Err(Error::Config(_))
        ));
        assert!(small().with_parameter("gamma_xa", 1.0).is_err());
        let nl = ExperimentConfig {
            model: Model::Nonlinear,
            ..small()
        };
        assert_eq!(
            nl.with_parameter("gamma_xa", 3.0)
                .unwrap()
                .nonlinear
                .gamma_xa,
            3.0
        );
        let set = small().with_parameter("beta_u", 3.5).unwrap();
        assert_eq!(set.linear.beta_u, 3.5);
        let set = small().with_parameter("n", 400.0).unwrap();
        assert_eq!(set.linear.n, 400);
        assert!(small().with_parameter("n", 2.5).is_err());
    }

    #[test]
    fn single_replicate_gives_zero_or_one() {
        let c = ExperimentConfig {
            replicates: 1,
            ..small()
        };
        let t = run_type1(&c).unwrap();
        assert_eq!(t.rows.len(), 2);
        for r in &t.rows {
            assert!(r.value == 0.0 || r.value == 1.0);
            assert_eq!(r.se, Some(0.0));
        }
    }

    #[test]
    fn rows_carry_seed_and_hash() {
        let c = ExperimentConfig {
            seed: 42,
            ..small()
        };
        let t = run_type1(&c).unwrap();
        assert!(t
            .rows
            .iter()
            .all(|r| r.seed == 42 && r.config_hash == t.config_hash));
        let csv = t.to_csv();
        assert!(csv
            .starts_with("kind,label,param,param_value,alpha,metric,value,se,seed,config_hash\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn hash_tracks_content() {
        let a = small();
        let b = ExperimentConfig { seed: 1, ..small() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), small().hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn analytic_power_requires_confounder_effect() {
        let c = ExperimentConfig {
            linear: LinearScenario {
                beta_u: 0.0,
                ..LinearScenario::default()
            },
            ..small()
        };
        assert!(matches!(run_analytic_power(&c), Err(Error::Config(_))));
    }

    #[test]
    fn analytic_grid_zero_row_is_alpha() {
        let c = ExperimentConfig {
            sweep: Some(Sweep {
                parameter: "delta_a".into(),
                values: vec![0.0, 0.5, 1.0],
                hold_c_eta: false,
            }),
            ..small()
        };
        let t = run_analytic_power(&c).unwrap();
        for r in t.select("linear", "analytic_power") {
            if r.param_value == Some(0.0) {
                assert!((r.value - r.alpha.unwrap()).abs() < 1e-12);
            } else {
                assert!(r.value > r.alpha.unwrap());
            }
        }
    }

    #[test]
    fn replicate_errors_name_the_index() {
        let e = replicates(5, |i| {
            if i >= 2 {
                Err(Error::Test(format!("boom {i}")))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        match e {
            Error::Replicate { index, source } => {
                assert_eq!(index, 2);
                assert_eq!(source.exit_code(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hold_c_eta_keeps_ratios_and_analytic_power() {
        let mut c = small();
        c.linear.beta_u = 2.0;
        c.linear.beta_x = 1.0;
        c.linear.sigma_eps = 3.0;
        c.sweep = Some(Sweep {
            parameter: "beta_u".into(),
            values: vec![0.5, 8.0],
            hold_c_eta: true,
        });
        c.validate_for(Kind::PowerSweep).unwrap();
        let base = analytic_power(&c.linear, 0.05).unwrap().power;
        for v in [0.5, 8.0] {
            let p = c.with_parameter("beta_u", v).unwrap().linear;
            assert!((p.beta_x / p.beta_u - 0.5).abs() < 1e-12);
            assert!((p.sigma_eps.powi(2) / p.beta_u.powi(2) - 2.25).abs() < 1e-12);
            let a = analytic_power(&p, 0.05).unwrap().power;
            assert!((a - base).abs() < 1e-12);
        }
        let mut bad = c.clone();
        bad.sweep.as_mut().unwrap().parameter = "delta_a".into();
        assert!(matches!(
            bad.validate_for(Kind::PowerSweep),
            Err(Error::Config(_))
        ));
        c.kind = None;
        c.linear.beta_u = 0.0;
        assert!(matches!(
            c.validate_for(Kind::PowerSweep),
            Err(Error::Config(_))
        ));
    }
}
