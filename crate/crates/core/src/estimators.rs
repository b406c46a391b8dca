//! Observations, datasets, and the ratio-form inverse-probability-weighted
//! contrast with its plug-in variance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propensity::PropensityModel;

/// One `(A, X, Y)` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub a: u8,
    pub x: Vec<f64>,
    pub y: f64,
    /// Latent confounder, kept by the generators for diagnostics only.
    /// Nothing in the estimation or testing code reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
}

impl Sample {
    pub fn new(a: u8, x: Vec<f64>, y: f64) -> Self {
        Sample { a, x, y, u: None }
    }

    pub fn with_latent(mut self, u: f64) -> Self {
        self.u = Some(u);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Rct,
    Obs,
}

/// A tagged collection of samples with a uniform covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    source: Source,
    covariate_names: Vec<String>,
    /// For each covariate feature, the input column it was derived from
    /// (one-hot dummies share their source column).
    feature_columns: Vec<String>,
    /// Raw labels of categorical input columns, parallel to `samples`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    labels: BTreeMap<String, Vec<String>>,
}

/// Column-major view used by the resampling hot paths.
#[derive(Debug, Clone, Default)]
pub struct Columns {
    pub a: Vec<u8>,
    /// Row-major `len x dim` covariate block.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dim: usize,
}

impl Columns {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Resample rows by index into `out`, reusing its buffers.
    pub fn gather_into(&self, idx: &[usize], out: &mut Columns) {
        out.dim = self.dim;
        out.a.clear();
        out.y.clear();
        out.x.clear();
        for &i in idx {
            out.a.push(self.a[i]);
            out.y.push(self.y[i]);
            out.x.extend_from_slice(self.row(i));
        }
    }

    pub fn n_treated(&self) -> usize {
        self.a.iter().filter(|&&v| v == 1).count()
    }
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, source: Source, covariate_names: Vec<String>) -> Result<Self> {
        let feature_columns = covariate_names.clone();
        Dataset::with_schema(
            samples,
            source,
            covariate_names,
            feature_columns,
            BTreeMap::new(),
        )
    }

    pub fn with_schema(
        samples: Vec<Sample>,
        source: Source,
        covariate_names: Vec<String>,
        feature_columns: Vec<String>,
        labels: BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("dataset has no samples"));
        }
        if feature_columns.len() != covariate_names.len() {
            return Err(Error::domain(
                "feature column map does not match covariate names",
            ));
        }
        let dim = covariate_names.len();
        for (i, s) in samples.iter().enumerate() {
            if s.a > 1 {
                return Err(Error::domain(format!(
                    "sample {i}: treatment {} is not 0/1",
                    s.a
                )));
            }
            if s.x.len() != dim {
                return Err(Error::domain(format!(
                    "sample {i}: {} covariates, expected {dim}",
                    s.x.len()
                )));
            }
            if !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("sample {i}: non-finite value")));
            }
        }
        if let Some((name, _)) = labels.iter().find(|(_, v)| v.len() != samples.len()) {
            return Err(Error::domain(format!(
                "label column {name} length mismatch"
            )));
        }
        Ok(Dataset {
            samples,
            source,
            covariate_names,
            feature_columns,
            labels,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn feature_columns(&self) -> &[String] {
        &self.feature_columns
    }

    pub fn labels(&self, column: &str) -> Option<&[String]> {
        self.labels.get(column).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_treated(&self) -> usize {
        self.samples.iter().filter(|s| s.a == 1).count()
    }

    pub fn columns(&self) -> Columns {
        let mut c = Columns {
            dim: self.dim(),
            ..Columns::default()
        };
        for s in &self.samples {
            c.a.push(s.a);
            c.y.push(s.y);
            c.x.extend_from_slice(&s.x);
        }
        c
    }

    /// Rows `idx` (in that order) as a new dataset tagged `source`.
    pub fn subset(&self, idx: &[usize], source: Source) -> Result<Dataset> {
        let samples = idx.iter().map(|&i| self.samples[i].clone()).collect();
        let labels = self
            .labels
            .iter()
            .map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i].clone()).collect()))
            .collect();
        Dataset::with_schema(
            samples,
            source,
            self.covariate_names.clone(),
            self.feature_columns.clone(),
            labels,
        )
    }

    /// Drops every covariate feature derived from input column `column`.
    pub fn without_column(&self, column: &str) -> Dataset {
        let keep: Vec<usize> = (0..self.dim())
            .filter(|&j| self.feature_columns[j] != column)
            .collect();
        let pick = |v: &[f64]| keep.iter().map(|&j| v[j]).collect::<Vec<_>>();
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                x: pick(&s.x),
                ..s.clone()
            })
            .collect();
        Dataset {
            samples,
            source: self.source,
            covariate_names: keep
                .iter()
                .map(|&j| self.covariate_names[j].clone())
                .collect(),
            feature_columns: keep
                .iter()
                .map(|&j| self.feature_columns[j].clone())
                .collect(),
            labels: self.labels.clone(),
        }
    }

    /// Copy with the latent confounder removed from every sample.
    pub fn strip_latent(&self) -> Dataset {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|s| s.u = None);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwEstimate {
    pub omega_hat: f64,
    /// Estimated variance of `omega_hat` itself (already divided by the
    /// sample size).
    pub var_hat: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub mu1_hat: f64,
    pub mu0_hat: f64,
}

/// Ratio-form IPW contrast of treated and control means under `model`.
pub fn ipw_estimate(dataset: &Dataset, model: &PropensityModel) -> Result<IpwEstimate> {
    check_dim(dataset, model)?;
    let cols = dataset.columns();
    ipw_columns(&cols, model)
}

/// Influence-function variance of the ratio-form contrast, treating the
/// propensity as known: `Σ_t w²(y - μ1)² + Σ_c w²(y - μ0)²` with `w` the
/// arm-normalized weights.
pub fn ipw_variance(
    dataset: &Dataset,
    model: &PropensityModel,
    mu1_hat: f64,
    mu0_hat: f64,
) -> Result<f64> {
    check_dim(dataset, model)?;
    let cols = dataset.columns();
    let e = propensities(&cols, model);
    let (st, sc) = weight_sums(&cols.a, &e)?;
    Ok(variance_from(&cols, &e, st, sc, mu1_hat, mu0_hat))
}

fn check_dim(dataset: &Dataset, model: &PropensityModel) -> Result<()> {
    match model.dim() {
        Some(d) if d != dataset.dim() => Err(Error::domain(format!(
            "propensity model has {d} covariates, dataset has {}",
            dataset.dim()
        ))),
        _ => Ok(()),
    }
}

fn propensities(cols: &Columns, model: &PropensityModel) -> Vec<f64> {
    (0..cols.len())
        .map(|i| model.predict_unchecked(cols.row(i)))
        .collect()
}

/// Sums of inverse weights per arm: `(Σ_t 1/e, Σ_c 1/(1-e))`.
fn weight_sums(a: &[u8], e: &[f64]) -> Result<(f64, f64)> {
    let mut st = 0.0;
    let mut sc = 0.0;
    let mut nt = 0usize;
    for (&ai, &ei) in a.iter().zip(e) {
        if ai == 1 {
            st += 1.0 / ei;
            nt += 1;
        } else {
            sc += 1.0 / (1.0 - ei);
        }
    }
    if nt == 0 || nt == a.len() {
        return Err(Error::Estimation(format!(
            "IPW needs both arms, got {nt} treated of {}",
            a.len()
        )));
    }
    assert!(
        st > 0.0 && sc > 0.0,
        "arm weight sums must be positive after clipping"
    );
    Ok((st, sc))
}

fn variance_from(cols: &Columns, e: &[f64], st: f64, sc: f64, mu1: f64, mu0: f64) -> f64 {
    let mut v = 0.0;
    for ((&a, &y), &ei) in cols.a.iter().zip(&cols.y).zip(e) {
        let (w, r) = if a == 1 {
            (1.0 / (ei * st), y - mu1)
        } else {
            (1.0 / ((1.0 - ei) * sc), y - mu0)
        };
        v += w * w * r * r;
    }
    v
}

pub(crate) fn ipw_columns(cols: &Columns, model: &PropensityModel) -> Result<IpwEstimate> {
    let e = propensities(cols, model);
    let (st, sc) = weight_sums(&cols.a, &e)?;
    let mut num1 = 0.0;
    let mut num0 = 0.0;
    for ((&a, &y), &ei) in cols.a.iter().zip(&cols.y).zip(&e) {
        if a == 1 {
            num1 += y / ei;
        } else {
            num0 += y / (1.0 - ei);
        }
    }
    let mu1_hat = num1 / st;
    let mu0_hat = num0 / sc;
    let n_treated = cols.n_treated();
    Ok(IpwEstimate {
        omega_hat: mu1_hat - mu0_hat,
        var_hat: variance_from(cols, &e, st, sc, mu1_hat, mu0_hat),
        n_treated,
        n_control: cols.len() - n_treated,
        mu1_hat,
        mu0_hat,
    })
}
