//! Propensity score models: a constant treatment rate for randomized data and
//! logistic regression fitted by iteratively reweighted least squares for
//! observational data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Dataset;

/// Predictions are clipped to `[CLIP, 1 - CLIP]` before weighting.
pub const CLIP: f64 = 1e-6;

/// Logistic function, evaluated without overflow for any finite `t`.
#[inline]
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityModel {
    Constant { rate: f64 },
    Logistic { intercept: f64, slopes: Vec<f64> },
}

impl PropensityModel {
    /// Covariate dimension the model expects, `None` for the constant model.
    pub fn dim(&self) -> Option<usize> {
        match self {
            PropensityModel::Constant { .. } => None,
            PropensityModel::Logistic { slopes, .. } => Some(slopes.len()),
        }
    }

    /// Clipped propensity at covariate vector `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if let Some(d) = self.dim() {
            if d != x.len() {
                return Err(Error::domain(format!(
                    "propensity model expects {d} covariates, got {}",
                    x.len()
                )));
            }
        }
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let p = match self {
            PropensityModel::Constant { rate } => *rate,
            PropensityModel::Logistic { intercept, slopes } => {
                let eta = intercept + slopes.iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
                expit(eta)
            }
        };
        p.clamp(CLIP, 1.0 - CLIP)
    }
}

/// Proportion treated. Fails unless both arms are present.
pub fn fit_constant(dataset: &Dataset) -> Result<PropensityModel> {
    let treated = dataset.n_treated();
    constant_from_counts(treated, dataset.len())
}

pub(crate) fn constant_from_counts(treated: usize, total: usize) -> Result<PropensityModel> {
    if treated == 0 || treated == total {
        return Err(Error::Estimation(format!(
            "constant propensity needs both arms, got {treated} treated of {total}"
        )));
    }
    Ok(PropensityModel::Constant {
        rate: treated as f64 / total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Convergence threshold on the sup-norm of the coefficient update.
    pub tol: f64,
    /// Any |coefficient| beyond this is reported as separation.
    pub separation_bound: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 100,
            tol: 1e-8,
            separation_bound: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub model: PropensityModel,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood at the start and after every accepted update.
    pub loglik_trace: Vec<f64>,
}

/// Maximum-likelihood logistic regression of treatment on covariates.
pub fn fit_logistic(dataset: &Dataset, opts: &IrlsOptions) -> Result<LogisticFit> {
    let cols = dataset.columns();
    fit_logistic_rows(&cols.x, cols.dim, &cols.a, opts)
}

#[inline]
fn linear_predictor(row: &[f64], beta: &[f64]) -> f64 {
    beta[0] + row.iter().zip(&beta[1..]).map(|(v, g)| v * g).sum::<f64>()
}

/// Log-likelihood, score, and information at one coefficient vector.
struct Pass {
    ll: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

/// Probability of the observed arm, `p` and `q = 1 - p`, computed from
/// `exp(-|eta|)` so neither loses precision.
#[inline]
fn probabilities(eta: f64, treated: bool) -> (f64, f64, f64) {
    let e = (-eta.abs()).exp();
    let inv = 1.0 / (1.0 + e);
    let (p, q) = if eta >= 0.0 {
        (inv, e * inv)
    } else {
        (e * inv, inv)
    };
    (if treated { p } else { q }, p, q)
}

/// The log-likelihood is accumulated as a running product of the fitted
/// probabilities of the observed arms, flushed to a log sum before it can
/// underflow.
#[inline]
fn accumulate_ll(lik: f64, eta: f64, treated: bool, prod: &mut f64, log_sum: &mut f64) {
    if lik < 1e-100 {
        let e = (-eta.abs()).exp();
        *log_sum += if treated { eta.min(0.0) } else { -eta.max(0.0) } - e.ln_1p();
    } else {
        *prod *= lik;
        if *prod < 1e-200 {
            *log_sum += prod.ln();
            *prod = 1.0;
        }
    }
}

/// Fills `out` at `beta` in one pass over the rows. The lower triangle of the
/// information is accumulated, then mirrored.
fn evaluate(x: &[f64], dim: usize, a: &[u8], beta: &[f64], out: &mut Pass) {
    let k = dim + 1;
    out.grad.iter_mut().for_each(|v| *v = 0.0);
    out.hess.iter_mut().for_each(|v| *v = 0.0);
    let mut log_sum = 0.0;
    let mut prod = 1.0;
    for (i, &ai) in a.iter().enumerate() {
        let row = &x[i * dim..(i + 1) * dim];
        let eta = linear_predictor(row, beta);
        let treated = ai == 1;
        let (lik, p, q) = probabilities(eta, treated);
        accumulate_ll(lik, eta, treated, &mut prod, &mut log_sum);
        let w = p * q;
        let r = f64::from(ai) - p;
        out.grad[0] += r;
        out.hess[0] += w;
        for j in 1..k {
            let zj = row[j - 1];
            out.grad[j] += zj * r;
            let wz = w * zj;
            out.hess[j * k] += wz;
            for c in 1..=j {
                out.hess[j * k + c] += wz * row[c - 1];
            }
        }
    }
    out.ll = log_sum + prod.ln();
    for r in 0..k {
        for c in 0..r {
            out.hess[c * k + r] = out.hess[r * k + c];
        }
    }
}

/// IRLS on a row-major covariate block (`dim` columns, intercept added).
///
/// Newton steps are halved until the log-likelihood does not decrease, so the
/// trace is monotone.
pub fn fit_logistic_rows(
    x: &[f64],
    dim: usize,
    a: &[u8],
    opts: &IrlsOptions,
) -> Result<LogisticFit> {
    let n = a.len();
    if x.len() != n * dim {
        return Err(Error::domain(format!(
            "covariate block has {} values, expected {n} x {dim}",
            x.len()
        )));
    }
    let treated = a.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::Estimation(format!(
            "logistic propensity needs both arms, got {treated} treated of {n}"
        )));
    }

    // Fit on centred covariates so the intercept, and with it the
    // separation bound, does not depend on where each covariate sits.
    let mut means = vec![0.0; dim];
    if dim > 0 {
        for row in x.chunks_exact(dim) {
            means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<f64>;
    let x = if means.iter().all(|&m| m == 0.0) {
        x
    } else {
        centred = x
            .chunks_exact(dim)
            .flat_map(|row| row.iter().zip(&means).map(|(v, m)| v - m))
            .collect();
        &centred[..]
    };

    let k = dim + 1;
    let mut beta = vec![0.0; k];
    let mut cur = Pass {
        ll: 0.0,
        grad: vec![0.0; k],
        hess: vec![0.0; k * k],
    };
    let mut next = Pass {
        ll: 0.0,
        grad: vec![0.0; k],
        hess: vec![0.0; k * k],
    };
    evaluate(x, dim, a, &beta, &mut cur);
    let mut trace = vec![cur.ll];
    let mut last_change = f64::INFINITY;
    let mut candidate = vec![0.0; k];

    for iter in 1..=opts.max_iter {
        let step = solve_spd(&cur.hess, &cur.grad, k).ok_or_else(|| {
            if cur.ll > -1e-8 * n as f64 {
                Error::Separation {
                    iteration: iter,
                    bound: opts.separation_bound,
                }
            } else {
                Error::LinearAlgebra(
                    "information matrix is singular; covariate design is rank deficient".into(),
                )
            }
        })?;

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            for j in 0..k {
                candidate[j] = beta[j] + scale * step[j];
            }
            evaluate(x, dim, a, &candidate, &mut next);
            if next.ll >= cur.ll {
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No ascent direction left at machine precision: at the optimum.
            return Ok(LogisticFit {
                model: model_from(beta, &means),
                iterations: iter,
                converged: true,
                loglik_trace: trace,
            });
        }

        last_change = candidate
            .iter()
            .zip(&beta)
            .map(|(c, b)| (c - b).abs())
            .fold(0.0, f64::max);
        beta.copy_from_slice(&candidate);
        std::mem::swap(&mut cur, &mut next);
        trace.push(cur.ll);

        if beta.iter().any(|b| b.abs() > opts.separation_bound) {
            return Err(Error::Separation {
                iteration: iter,
                bound: opts.separation_bound,
            });
        }
        if last_change < opts.tol {
            return Ok(LogisticFit {
                model: model_from(beta, &means),
                iterations: iter,
                converged: true,
                loglik_trace: trace,
            });
        }
    }

    Err(Error::Convergence {
        iterations: opts.max_iter,
        last_change,
        coefficients: raw_coefficients(beta, &means),
    })
}

fn raw_coefficients(mut beta: Vec<f64>, means: &[f64]) -> Vec<f64> {
    beta[0] -= beta[1..].iter().zip(means).map(|(b, m)| b * m).sum::<f64>();
    beta
}

fn model_from(beta: Vec<f64>, means: &[f64]) -> PropensityModel {
    let beta = raw_coefficients(beta, means);
    PropensityModel::Logistic {
        intercept: beta[0],
        slopes: beta[1..].to_vec(),
    }
}

/// Solves `H s = g` for symmetric positive definite `H` (row-major `k x k`).
/// Returns `None` when `H` is not numerically positive definite.
fn solve_spd(h: &[f64], g: &[f64], k: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(k, k, h);
    let max_diag = (0..k).map(|i| m[(i, i)]).fold(0.0, f64::max);
    if !(max_diag > 0.0) {
        return None;
    }
    let chol = m.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..k)
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-12 * max_diag {
        return None;
    }
    let s = chol.solve(&DVector::from_column_slice(g));
    Some(s.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{Dataset, Sample, Source};
    use crate::statcore::{draw_bernoulli, draw_normal, Rng};

    fn logistic_data(n: usize, b0: f64, b1: f64, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let samples = (0..n)
            .map(|_| {
                let x = draw_normal(&mut rng, 0.0, 1.0).unwrap();
                let a = draw_bernoulli(&mut rng, expit(b0 + b1 * x)).unwrap();
                Sample::new(a, vec![x], 0.0)
            })
            .collect();
        Dataset::new(samples, Source::Obs, vec!["x".into()]).unwrap()
    }

    #[test]
    fn expit_reference_values() {
        assert_eq!(expit(0.0), 0.5);
        for t in [-30.0, -2.5, -0.1, 0.7, 12.0] {
            assert!((expit(t) + expit(-t) - 1.0).abs() < 1e-15);
        }
        let v = expit(700.0);
        assert!(v.is_finite() && v <= 1.0 && 1.0 - v < 1e-300);
        assert!(expit(-700.0) > 0.0);
        assert!(expit(-700.0).is_finite());
    }

    #[test]
    fn constant_fit() {
        let samples: Vec<_> = (0..100)
            .map(|i| Sample::new(u8::from(i < 30), vec![], 1.0))
            .collect();
        let ds = Dataset::new(samples, Source::Rct, vec![]).unwrap();
        assert_eq!(
            fit_constant(&ds).unwrap(),
            PropensityModel::Constant { rate: 0.3 }
        );

        let all: Vec<_> = (0..10).map(|_| Sample::new(1, vec![], 1.0)).collect();
        let ds = Dataset::new(all, Source::Rct, vec![]).unwrap();
        assert!(matches!(fit_constant(&ds), Err(Error::Estimation(_))));
    }

    #[test]
    fn constant_rate_within_binomial_band() {
        let mut rng = Rng::new(7);
        let samples: Vec<_> = (0..10_000)
            .map(|_| Sample::new(draw_bernoulli(&mut rng, 0.5).unwrap(), vec![], 0.0))
            .collect();
        let ds = Dataset::new(samples, Source::Rct, vec![]).unwrap();
        let PropensityModel::Constant { rate } = fit_constant(&ds).unwrap() else {
            unreachable!()
        };
        assert!((0.485..=0.515).contains(&rate), "rate={rate}");
    }

    #[test]
    fn predict_contracts() {
        let c = PropensityModel::Constant { rate: 0.3 };
        assert_eq!(c.predict(&[1.0, 2.0]).unwrap(), 0.3);
        let null = PropensityModel::Logistic {
            intercept: 0.0,
            slopes: vec![0.0, 0.0],
        };
        assert_eq!(null.predict(&[5.0, -3.0]).unwrap(), 0.5);
        assert!(null.predict(&[1.0]).is_err());
        let m = PropensityModel::Logistic {
            intercept: 0.5,
            slopes: vec![1.2],
        };
        assert!((m.predict(&[0.8]).unwrap() - 1.0 / (1.0 + (-1.46f64).exp())).abs() < 1e-15);
        assert_eq!(m.predict(&[1e6]).unwrap(), 1.0 - CLIP);
        assert_eq!(m.predict(&[-1e6]).unwrap(), CLIP);
    }

    #[test]
    fn logistic_null_when_treatment_ignores_covariate() {
        let mut rng = Rng::new(11);
        let samples: Vec<_> = (0..50_000)
            .map(|_| {
                let x = draw_normal(&mut rng, 0.0, 1.0).unwrap();
                Sample::new(draw_bernoulli(&mut rng, 0.4).unwrap(), vec![x], 0.0)
            })
            .collect();
        let ds = Dataset::new(samples, Source::Obs, vec!["x".into()]).unwrap();
        let fit = fit_logistic(&ds, &IrlsOptions::default()).unwrap();
        let PropensityModel::Logistic { intercept, slopes } = fit.model else {
            unreachable!()
        };
        assert!(slopes[0].abs() <= 0.05, "slope={}", slopes[0]);
        assert!((expit(intercept) - 0.4).abs() <= 0.02);
    }

    #[test]
    fn logistic_recovers_coefficients_with_monotone_trace() {
        let ds = logistic_data(100_000, 0.5, 1.2, 3);
        let fit = fit_logistic(&ds, &IrlsOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0]));
        let PropensityModel::Logistic { intercept, slopes } = fit.model else {
            unreachable!()
        };
        assert!((intercept - 0.5).abs() <= 0.05, "intercept={intercept}");
        assert!((slopes[0] - 1.2).abs() <= 0.05, "slope={}", slopes[0]);
    }

    #[test]
    fn logistic_error_shrinks_with_sample_size() {
        // Average absolute error over a few seeds at n and 16n; the ratio
        // should be near 1/4.
        let err = |n: usize| -> f64 {
            (0..8)
                .map(|s| {
                    let fit = fit_logistic(
                        &logistic_data(n, 0.5, 1.2, 100 + s),
                        &IrlsOptions::default(),
                    )
                    .unwrap();
                    let PropensityModel::Logistic { slopes, .. } = fit.model else {
                        unreachable!()
                    };
                    (slopes[0] - 1.2).abs()
                })
                .sum::<f64>()
                / 8.0
        };
        let small = err(1_000);
        let large = err(16_000);
        assert!(large < small * 0.6, "small={small} large={large}");
    }

    #[test]
    fn perfect_separation_detected() {
        let samples: Vec<_> = (0..40)
            .map(|i| {
                let x = f64::from(i) - 19.5;
                Sample::new(u8::from(x > 0.0), vec![x], 0.0)
            })
            .collect();
        let ds = Dataset::new(samples, Source::Obs, vec!["x".into()]).unwrap();
        let err = fit_logistic(&ds, &IrlsOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err}");
    }

    #[test]
    fn rank_deficient_design() {
        let samples: Vec<_> = (0..40)
            .map(|i| {
                let x = f64::from(i % 7);
                Sample::new(u8::from(i % 3 == 0), vec![x, 2.0 * x], 0.0)
            })
            .collect();
        let ds = Dataset::new(samples, Source::Obs, vec!["x".into(), "x2".into()]).unwrap();
        let err = fit_logistic(&ds, &IrlsOptions::default()).unwrap_err();
        assert!(matches!(err, Error::LinearAlgebra(_)), "{err}");
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let ds = logistic_data(500, 0.2, 0.9, 5);
        let opts = IrlsOptions {
            max_iter: 1,
            ..IrlsOptions::default()
        };
        match fit_logistic(&ds, &opts) {
            Err(Error::Convergence {
                iterations,
                coefficients,
                ..
            }) => {
                assert_eq!(iterations, 1);
                assert_eq!(coefficients.len(), 2);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn fit_ignores_sample_order() {
        let ds = logistic_data(2_000, -0.3, 0.8, 9);
        let mut rev = ds.samples().to_vec();
        rev.reverse();
        let rev = Dataset::new(rev, Source::Obs, vec!["x".into()]).unwrap();
        let a = fit_logistic(&ds, &IrlsOptions::default()).unwrap().model;
        let b = fit_logistic(&rev, &IrlsOptions::default()).unwrap().model;
        for x in [-2.0, 0.0, 1.5] {
            assert!((a.predict(&[x]).unwrap() - b.predict(&[x]).unwrap()).abs() < 1e-9);
        }
    }
}
