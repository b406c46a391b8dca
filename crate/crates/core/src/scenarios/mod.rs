//! Data sources: the linear and non-linear generative models, CSV ingestion,
//! and semi-synthetic confounding by outcome-based selection.

mod ingest;
mod selection;
mod standin;

pub use ingest::{encode_tables, load_csv, read_table, IngestReport, NaPolicy, Table, TableSpec};
pub use selection::{induce_confounding, split_rct, SelectionRule};
pub use standin::{write_star_standin, StandinConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Dataset, Sample, Source};
use crate::statcore::{draw_bernoulli, draw_normal, Rng};

/// Outcome `Y = β0 + βA A + βX X + βU U + ε` with latent
/// `U = δ0 + δA A + δX X + ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearScenario {
    pub beta0: f64,
    pub beta_a: f64,
    pub beta_x: f64,
    pub beta_u: f64,
    pub delta0: f64,
    pub delta_a: f64,
    pub delta_x: f64,
    pub sigma_eps: f64,
    pub sigma_u: f64,
    pub mu_x: f64,
    pub sigma_x: f64,
    pub p_o: f64,
    pub p_r: f64,
    pub n: usize,
    pub m: usize,
}

impl Default for LinearScenario {
    fn default() -> Self {
        LinearScenario {
            beta0: 0.0,
            beta_a: 2.0,
            beta_x: 1.0,
            beta_u: 1.0,
            delta0: 0.0,
            delta_a: 1.0,
            delta_x: 0.5,
            sigma_eps: 1.0,
            sigma_u: 1.0,
            mu_x: 0.0,
            sigma_x: 1.0,
            p_o: 0.3,
            p_r: 0.5,
            n: 100,
            m: 2000,
        }
    }
}

impl LinearScenario {
    /// True average causal effect, `βA`.
    pub fn tau(&self) -> f64 {
        self.beta_a
    }

    /// Population contrast in the observational data, `βA + βU δA`.
    pub fn omega_obs(&self) -> f64 {
        self.beta_a + self.beta_u * self.delta_a
    }

    pub fn null_holds(&self) -> bool {
        self.beta_u * self.delta_a == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.beta0,
            self.beta_a,
            self.beta_x,
            self.beta_u,
            self.delta0,
            self.delta_a,
            self.delta_x,
            self.mu_x,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "linear scenario coefficients must be finite".into(),
            ));
        }
        validate_common(
            self.sigma_eps,
            self.sigma_u,
            self.sigma_x,
            self.p_o,
            self.p_r,
            self.n,
            self.m,
        )
    }

    fn outcome(&self, a: u8, x: f64, u: f64, eps: f64) -> f64 {
        self.beta0 + self.beta_a * f64::from(a) + self.beta_x * x + self.beta_u * u + eps
    }

    fn latent(&self, a: u8, x: f64, nu: f64) -> f64 {
        self.delta0 + self.delta_a * f64::from(a) + self.delta_x * x + nu
    }
}

/// Outcome `Y = f(X, A) + βU U² + ε`, `f = γ0 + γX X² + γA A + γXA X² A`,
/// with latent `U = δ0 + δX X² + δA A + δXA X A + ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearScenario {
    pub gamma0: f64,
    pub gamma_x: f64,
    pub gamma_a: f64,
    pub gamma_xa: f64,
    pub delta0: f64,
    pub delta_x: f64,
    pub delta_a: f64,
    pub delta_xa: f64,
    pub beta_u: f64,
    pub sigma_eps: f64,
    pub sigma_u: f64,
    pub mu_x: f64,
    pub sigma_x: f64,
    pub p_o: f64,
    pub p_r: f64,
    pub n: usize,
    pub m: usize,
    /// Add `X²` as a second covariate, so the logistic propensity sees it.
    pub propensity_squares: bool,
}

impl Default for NonlinearScenario {
    fn default() -> Self {
        NonlinearScenario {
            gamma0: 0.0,
            gamma_x: 1.0,
            gamma_a: 2.0,
            gamma_xa: 1.0,
            delta0: 0.0,
            delta_x: 0.5,
            delta_a: 2.0,
            delta_xa: 2.0,
            beta_u: 0.0,
            sigma_eps: 1.0,
            sigma_u: 1.0,
            mu_x: 0.0,
            sigma_x: 1.0,
            p_o: 0.3,
            p_r: 0.5,
            n: 100,
            m: 2000,
            propensity_squares: false,
        }
    }
}

impl NonlinearScenario {
    pub fn null_holds(&self) -> bool {
        self.beta_u == 0.0 || (self.delta_a == 0.0 && self.delta_xa == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.gamma0,
            self.gamma_x,
            self.gamma_a,
            self.gamma_xa,
            self.delta0,
            self.delta_x,
            self.delta_a,
            self.delta_xa,
            self.beta_u,
            self.mu_x,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "non-linear scenario coefficients must be finite".into(),
            ));
        }
        validate_common(
            self.sigma_eps,
            self.sigma_u,
            self.sigma_x,
            self.p_o,
            self.p_r,
            self.n,
            self.m,
        )
    }

    fn outcome(&self, a: u8, x: f64, u: f64, eps: f64) -> f64 {
        let a = f64::from(a);
        let x2 = x * x;
        self.gamma0
            + self.gamma_x * x2
            + self.gamma_a * a
            + self.gamma_xa * x2 * a
            + self.beta_u * u * u
            + eps
    }

    fn latent(&self, a: u8, x: f64, nu: f64) -> f64 {
        let a = f64::from(a);
        self.delta0 + self.delta_x * x * x + self.delta_a * a + self.delta_xa * x * a + nu
    }

    fn covariates(&self, x: f64) -> Vec<f64> {
        if self.propensity_squares {
            vec![x, x * x]
        } else {
            vec![x]
        }
    }

    fn covariate_names(&self) -> Vec<String> {
        if self.propensity_squares {
            vec!["x".into(), "x_sq".into()]
        } else {
            vec!["x".into()]
        }
    }
}

fn validate_common(
    sigma_eps: f64,
    sigma_u: f64,
    sigma_x: f64,
    p_o: f64,
    p_r: f64,
    n: usize,
    m: usize,
) -> Result<()> {
    for (name, v) in [
        ("sigma_eps", sigma_eps),
        ("sigma_u", sigma_u),
        ("sigma_x", sigma_x),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!(
                "{name} = {v} must be a finite nonnegative number"
            )));
        }
    }
    for (name, v) in [("p_o", p_o), ("p_r", p_r)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")));
        }
    }
    if n < 2 || m < 2 {
        return Err(Error::Config(format!(
            "sample sizes must be at least 2, got n={n} m={m}"
        )));
    }
    Ok(())
}

/// One draw of the shared `(X, A_obs, U, ε)` block and the optional
/// randomized treatment that replaces `A_obs`.
struct Draw {
    x: f64,
    a: u8,
    u: f64,
    eps: f64,
}

#[allow(clippy::too_many_arguments)]
fn draw_unit(
    rng: &mut Rng,
    mu_x: f64,
    sigma_x: f64,
    p_o: f64,
    sigma_u: f64,
    sigma_eps: f64,
    latent: impl Fn(u8, f64, f64) -> f64,
    randomize: Option<f64>,
) -> Result<Draw> {
    let x = draw_normal(rng, mu_x, sigma_x)?;
    let a_obs = draw_bernoulli(rng, p_o)?;
    let nu = draw_normal(rng, 0.0, sigma_u)?;
    let u = latent(a_obs, x, nu);
    // In the trial the treatment is overwritten after (X, U) are fixed.
    let a = match randomize {
        Some(p_r) => draw_bernoulli(rng, p_r)?,
        None => a_obs,
    };
    let eps = draw_normal(rng, 0.0, sigma_eps)?;
    Ok(Draw { x, a, u, eps })
}

/// Randomized and observational datasets from the linear model. Substreams
/// 0 and 1 of `rng` feed the two datasets.
pub fn generate_linear(s: &LinearScenario, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    s.validate()?;
    let make = |size: usize, stream: &mut Rng, randomize: Option<f64>| -> Result<Vec<Sample>> {
        (0..size)
            .map(|_| {
                let d = draw_unit(
                    stream,
                    s.mu_x,
                    s.sigma_x,
                    s.p_o,
                    s.sigma_u,
                    s.sigma_eps,
                    |a, x, nu| s.latent(a, x, nu),
                    randomize,
                )?;
                Ok(Sample::new(d.a, vec![d.x], s.outcome(d.a, d.x, d.u, d.eps)).with_latent(d.u))
            })
            .collect()
    };
    let rct = make(s.n, &mut rng.child(0), Some(s.p_r))?;
    let obs = make(s.m, &mut rng.child(1), None)?;
    Ok((
        Dataset::new(rct, Source::Rct, vec!["x".into()])?,
        Dataset::new(obs, Source::Obs, vec!["x".into()])?,
    ))
}

/// Randomized and observational datasets from the non-linear model.
pub fn generate_nonlinear(s: &NonlinearScenario, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    s.validate()?;
    let make = |size: usize, stream: &mut Rng, randomize: Option<f64>| -> Result<Vec<Sample>> {
        (0..size)
            .map(|_| {
                let d = draw_unit(
                    stream,
                    s.mu_x,
                    s.sigma_x,
                    s.p_o,
                    s.sigma_u,
                    s.sigma_eps,
                    |a, x, nu| s.latent(a, x, nu),
                    randomize,
                )?;
                Ok(
                    Sample::new(d.a, s.covariates(d.x), s.outcome(d.a, d.x, d.u, d.eps))
                        .with_latent(d.u),
                )
            })
            .collect()
    };
    let rct = make(s.n, &mut rng.child(0), Some(s.p_r))?;
    let obs = make(s.m, &mut rng.child(1), None)?;
    Ok((
        Dataset::new(rct, Source::Rct, s.covariate_names())?,
        Dataset::new(obs, Source::Obs, s.covariate_names())?,
    ))
}
