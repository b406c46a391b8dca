//! Tests of `H0: ω_obs = ω_rct` against the two-sided alternative: the
//! resampling test, the asymptotic z-test, and the closed-form power of the
//! z-test under the linear confounding model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{ipw_columns, Columns, Dataset, IpwEstimate};
use crate::propensity::{constant_from_counts, fit_logistic_rows, IrlsOptions};
use crate::scenarios::LinearScenario;
use crate::statcore::{normal_quantile, phi, quantile_of_sorted, Rng};

/// How each dataset's contrast is estimated: constant propensity for the
/// randomized data, logistic propensity for the observational data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub irls: IrlsOptions,
}

impl Pipeline {
    pub fn estimate_rct(&self, cols: &Columns) -> Result<IpwEstimate> {
        let model = constant_from_counts(cols.n_treated(), cols.len())?;
        ipw_columns(cols, &model)
    }

    pub fn estimate_obs(&self, cols: &Columns) -> Result<IpwEstimate> {
        let fit = fit_logistic_rows(&cols.x, cols.dim, &cols.a, &self.irls)?;
        ipw_columns(cols, &fit.model)
    }
}

/// Bootstrap distribution of `T* = ω̂_obs* - ω̂_rct*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDistribution {
    pub t_observed: f64,
    /// `T*_1..T*_B` in iteration order.
    pub replicates: Vec<f64>,
    /// Resamples discarded because an arm was empty or the fit failed.
    pub redraws: usize,
    #[serde(skip)]
    sorted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapTestResult {
    pub t_observed: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub alpha: f64,
    pub reject: bool,
    pub b: usize,
    /// `2 min(F(0), 1 - F(0))` under the empirical bootstrap CDF, clamped to
    /// `[1/B, 1]`. A derived convenience output.
    pub p_value: f64,
}

impl BootstrapDistribution {
    fn new(t_observed: f64, replicates: Vec<f64>, redraws: usize) -> Self {
        let mut sorted = replicates.clone();
        sorted.sort_by(f64::total_cmp);
        BootstrapDistribution {
            t_observed,
            replicates,
            redraws,
            sorted,
        }
    }

    pub fn b(&self) -> usize {
        self.replicates.len()
    }

    /// Empirical bootstrap CDF `(1/B) #{T*_b < t}`.
    pub fn ecdf(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&v| v < t) as f64 / self.b() as f64
    }

    /// Percentile interval and decision at level `alpha`.
    pub fn decide(&self, alpha: f64) -> Result<BootstrapTestResult> {
        check_alpha(alpha)?;
        let q_lo = quantile_of_sorted(&self.sorted, alpha / 2.0)?;
        let q_hi = quantile_of_sorted(&self.sorted, 1.0 - alpha / 2.0)?;
        let b = self.b();
        let f0 = self.ecdf(0.0);
        let p_value = (2.0 * f0.min(1.0 - f0)).clamp(1.0 / b as f64, 1.0);
        Ok(BootstrapTestResult {
            t_observed: self.t_observed,
            q_lo,
            q_hi,
            alpha,
            reject: !(q_lo <= 0.0 && 0.0 <= q_hi),
            b,
            p_value,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "significance level {alpha} outside (0, 1)"
        )))
    }
}

/// Resample both datasets `b` times, refitting both propensity models on
/// every resample.
///
/// Iteration `i` draws from `rng.child(i)`, so the output does not depend on
/// how iterations are scheduled across threads. A resample lacking an arm or
/// whose logistic fit fails is redrawn; more than `10 b` redraws in total is
/// an error.
pub fn bootstrap_distribution(
    d_rct: &Dataset,
    d_obs: &Dataset,
    b: usize,
    rng: &Rng,
    pipeline: &Pipeline,
) -> Result<BootstrapDistribution> {
    if b < 100 {
        return Err(Error::domain(format!(
            "bootstrap needs at least 100 resamples, got {b}"
        )));
    }
    check_pair(d_rct, d_obs)?;
    let rct = d_rct.columns();
    let obs = d_obs.columns();
    let t_observed =
        pipeline.estimate_obs(&obs)?.omega_hat - pipeline.estimate_rct(&rct)?.omega_hat;

    let budget = 10 * b;
    let draws: Vec<(f64, usize)> = (0..b)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, i| {
            one_resample(
                &rct,
                &obs,
                &mut rng.child(i as u64),
                pipeline,
                scratch,
                budget,
            )
        })
        .collect::<Result<_>>()?;

    let redraws = draws.iter().map(|d| d.1).sum();
    if redraws > budget {
        return Err(Error::Test(format!(
            "bootstrap needed {redraws} redraws, budget is {budget}"
        )));
    }
    Ok(BootstrapDistribution::new(
        t_observed,
        draws.into_iter().map(|d| d.0).collect(),
        redraws,
    ))
}

#[derive(Default)]
struct Scratch {
    idx: Vec<usize>,
    rct: Columns,
    obs: Columns,
}

fn one_resample(
    rct: &Columns,
    obs: &Columns,
    rng: &mut Rng,
    pipeline: &Pipeline,
    s: &mut Scratch,
    budget: usize,
) -> Result<(f64, usize)> {
    let mut redraws = 0;
    loop {
        resample(rct, rng, &mut s.idx, &mut s.rct);
        resample(obs, rng, &mut s.idx, &mut s.obs);
        let t = pipeline
            .estimate_obs(&s.obs)
            .and_then(|o| Ok(o.omega_hat - pipeline.estimate_rct(&s.rct)?.omega_hat));
        match t {
            Ok(t) => return Ok((t, redraws)),
            Err(e) if redraws >= budget => {
                return Err(Error::Test(format!(
                    "bootstrap redraw budget exhausted: {e}"
                )))
            }
            Err(_) => redraws += 1,
        }
    }
}

fn resample(cols: &Columns, rng: &mut Rng, idx: &mut Vec<usize>, out: &mut Columns) {
    let n = cols.len();
    idx.clear();
    idx.extend((0..n).map(|_| rng.index(n)));
    cols.gather_into(idx, out);
}

fn check_pair(d_rct: &Dataset, d_obs: &Dataset) -> Result<()> {
    if d_rct.dim() != d_obs.dim() {
        // The RCT contrast ignores covariates, but a shared schema is part of
        // the two-sample setup.
        return Err(Error::domain(format!(
            "covariate dimension differs: rct {} vs obs {}",
            d_rct.dim(),
            d_obs.dim()
        )));
    }
    if d_obs.len() <= d_rct.len() {
        log::warn!(
            "observational sample ({}) is not larger than the randomized sample ({})",
            d_obs.len(),
            d_rct.len()
        );
    }
    Ok(())
}

/// Resampling test at level `alpha` with `b` resamples.
pub fn bootstrap_test(
    d_rct: &Dataset,
    d_obs: &Dataset,
    b: usize,
    alpha: f64,
    rng: &Rng,
) -> Result<BootstrapTestResult> {
    check_alpha(alpha)?;
    bootstrap_distribution(d_rct, d_obs, b, rng, &Pipeline::default())?.decide(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZTestResult {
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub omega_r: IpwEstimate,
    pub omega_o: IpwEstimate,
}

impl ZTestResult {
    /// Decision and p-value for a given statistic.
    fn from_parts(z: f64, alpha: f64, omega_r: IpwEstimate, omega_o: IpwEstimate) -> Result<Self> {
        let crit = normal_quantile(1.0 - alpha / 2.0)?;
        Ok(ZTestResult {
            z,
            p_value: (2.0 * (1.0 - phi(z.abs()))).min(1.0),
            alpha,
            reject: z.abs() > crit,
            omega_r,
            omega_o,
        })
    }

    /// Same estimates re-decided at another level.
    pub fn at_level(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        ZTestResult::from_parts(self.z, alpha, self.omega_r.clone(), self.omega_o.clone())
    }
}

/// Asymptotic z-test with plug-in variances.
pub fn z_test(d_rct: &Dataset, d_obs: &Dataset, alpha: f64) -> Result<ZTestResult> {
    z_test_with(d_rct, d_obs, alpha, &Pipeline::default())
}

pub fn z_test_with(
    d_rct: &Dataset,
    d_obs: &Dataset,
    alpha: f64,
    pipeline: &Pipeline,
) -> Result<ZTestResult> {
    check_alpha(alpha)?;
    check_pair(d_rct, d_obs)?;
    let omega_r = pipeline.estimate_rct(&d_rct.columns())?;
    let omega_o = pipeline.estimate_obs(&d_obs.columns())?;
    let se = (omega_o.var_hat + omega_r.var_hat).sqrt();
    if !(se > 0.0) {
        return Err(Error::Test(
            "combined variance is zero; data are degenerate".into(),
        ));
    }
    let z = (omega_o.omega_hat - omega_r.omega_hat) / se;
    ZTestResult::from_parts(z, alpha, omega_r, omega_o)
}

/// Arguments of the standard-deviation function `h` in units of `β_U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HInputs {
    pub delta_a: f64,
    pub delta_x: f64,
    pub sigma_u: f64,
    pub sigma_x: f64,
    /// `β_X / β_U`
    pub c: f64,
    /// `σ_ε² / β_U²`
    pub eta: f64,
    pub p_o: f64,
    pub p_r: f64,
    pub n: f64,
    /// `m / n`
    pub kappa: f64,
}

/// Asymptotic standard deviation of `(ω̂_obs - ω̂_rct) / β_U`.
///
/// The randomized-data term carries the full residual variance of the
/// outcome; the observational term only the part not explained by `X`.
pub fn h_function(p: &HInputs) -> Result<f64> {
    for (name, v) in [("p_o", p.p_o), ("p_r", p.p_r)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::domain(format!("{name} = {v} must lie in (0, 1)")));
        }
    }
    if !(p.n >= 1.0) || !(p.kappa > 0.0) {
        return Err(Error::domain(format!(
            "need n >= 1 and kappa > 0, got n={} kappa={}",
            p.n, p.kappa
        )));
    }
    if p.sigma_u < 0.0 || p.sigma_x < 0.0 || p.eta < 0.0 {
        return Err(Error::domain("variances must be nonnegative"));
    }
    let vo = p.p_o * (1.0 - p.p_o);
    let vr = p.p_r * (1.0 - p.p_r);
    let su2 = p.sigma_u * p.sigma_u;
    let rct = ((p.c + p.delta_x).powi(2) * p.sigma_x * p.sigma_x
        + p.delta_a * p.delta_a * vo
        + su2
        + p.eta)
        / (p.n * vr);
    let obs = (su2 + p.eta) / (p.kappa * p.n * vo);
    Ok((rct + obs).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub h: f64,
    pub power: f64,
    pub c: f64,
    pub eta: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub delta_a: f64,
    pub delta_x: f64,
    pub sigma_u: f64,
    pub sigma_x: f64,
    pub p_o: f64,
    pub p_r: f64,
    pub n: usize,
}

/// Large-sample power of the z-test under a linear scenario, dropping the
/// `O(n^-1/2)` remainder.
pub fn analytic_power(s: &LinearScenario, alpha: f64) -> Result<PowerReport> {
    check_alpha(alpha)?;
    if s.beta_u == 0.0 {
        return Err(Error::domain(
            "analytic power is undefined at beta_u = 0 (c and eta divide by beta_u)",
        ));
    }
    if s.n == 0 || s.m == 0 {
        return Err(Error::domain("sample sizes must be positive"));
    }
    let inputs = HInputs {
        delta_a: s.delta_a,
        delta_x: s.delta_x,
        sigma_u: s.sigma_u,
        sigma_x: s.sigma_x,
        c: s.beta_x / s.beta_u,
        eta: s.sigma_eps * s.sigma_eps / (s.beta_u * s.beta_u),
        p_o: s.p_o,
        p_r: s.p_r,
        n: s.n as f64,
        kappa: s.m as f64 / s.n as f64,
    };
    let h = h_function(&inputs)?;
    Ok(PowerReport {
        h,
        power: power_from(s.delta_a / h, alpha)?,
        c: inputs.c,
        eta: inputs.eta,
        kappa: inputs.kappa,
        alpha,
        delta_a: s.delta_a,
        delta_x: s.delta_x,
        sigma_u: s.sigma_u,
        sigma_x: s.sigma_x,
        p_o: s.p_o,
        p_r: s.p_r,
        n: s.n,
    })
}

/// `Φ(-z - d) + Φ(d - z)` with `z` the upper `α/2` critical value.
pub fn power_from(standardized_shift: f64, alpha: f64) -> Result<f64> {
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    Ok((phi(-z - standardized_shift) + phi(standardized_shift - z)).clamp(0.0, 1.0))
}
