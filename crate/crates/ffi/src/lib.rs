//! C interface to the `unconfound` library.
//!
//! Every function returns a [`UcStatus`]; results go through out-pointers.
//! After a non-`UC_OK` status, [`uc_last_error_message`] gives the message for
//! the calling thread. Datasets and bootstrap results are opaque handles
//! released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use unconfound::estimators::{ipw_estimate, Dataset, IpwEstimate, Sample, Source};
use unconfound::hypotest::{
    analytic_power, bootstrap_distribution, h_function, z_test, BootstrapDistribution, HInputs,
    Pipeline,
};
use unconfound::propensity::{fit_constant, fit_logistic, IrlsOptions};
use unconfound::scenarios::LinearScenario;
use unconfound::statcore::{normal_cdf, normal_quantile, Rng};
use unconfound::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Estimation = 4,
    Convergence = 5,
    Separation = 6,
    LinearAlgebra = 7,
    Test = 8,
    Rule = 9,
    Ingest = 10,
    Config = 11,
    Io = 12,
    Panic = 13,
}

impl From<&Error> for UcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => UcStatus::Domain,
            Error::Estimation(_) => UcStatus::Estimation,
            Error::Convergence { .. } => UcStatus::Convergence,
            Error::Separation { .. } => UcStatus::Separation,
            Error::LinearAlgebra(_) => UcStatus::LinearAlgebra,
            Error::Test(_) => UcStatus::Test,
            Error::Rule(_) => UcStatus::Rule,
            Error::Ingest(_) => UcStatus::Ingest,
            Error::Config(_) => UcStatus::Config,
            Error::Replicate { source, .. } => UcStatus::from(source.as_ref()),
            Error::Io(_) => UcStatus::Io,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcSource {
    Rct = 0,
    Obs = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcPropensity {
    /// Proportion treated.
    Constant = 0,
    /// Logistic regression on the covariates.
    Logistic = 1,
}

/// Opaque dataset handle.
pub struct UcDataset(Dataset);

/// Opaque bootstrap distribution handle.
pub struct UcBootstrap(BootstrapDistribution);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UcIpwEstimate {
    pub omega_hat: f64,
    /// Variance of `omega_hat`.
    pub var_hat: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub mu1_hat: f64,
    pub mu0_hat: f64,
}

impl From<&IpwEstimate> for UcIpwEstimate {
    fn from(e: &IpwEstimate) -> Self {
        UcIpwEstimate {
            omega_hat: e.omega_hat,
            var_hat: e.var_hat,
            n_treated: e.n_treated,
            n_control: e.n_control,
            mu1_hat: e.mu1_hat,
            mu0_hat: e.mu0_hat,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UcZTest {
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub omega_r: UcIpwEstimate,
    pub omega_o: UcIpwEstimate,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UcBootstrapDecision {
    pub t_observed: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub alpha: f64,
    pub reject: bool,
    pub b: usize,
    pub p_value: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UcHInputs {
    pub delta_a: f64,
    pub delta_x: f64,
    pub sigma_u: f64,
    pub sigma_x: f64,
    pub c: f64,
    pub eta: f64,
    pub p_o: f64,
    pub p_r: f64,
    pub n: f64,
    pub kappa: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UcLinearScenario {
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

impl From<LinearScenario> for UcLinearScenario {
    fn from(s: LinearScenario) -> Self {
        UcLinearScenario {
            beta0: s.beta0,
            beta_a: s.beta_a,
            beta_x: s.beta_x,
            beta_u: s.beta_u,
            delta0: s.delta0,
            delta_a: s.delta_a,
            delta_x: s.delta_x,
            sigma_eps: s.sigma_eps,
            sigma_u: s.sigma_u,
            mu_x: s.mu_x,
            sigma_x: s.sigma_x,
            p_o: s.p_o,
            p_r: s.p_r,
            n: s.n,
            m: s.m,
        }
    }
}

impl From<&UcLinearScenario> for LinearScenario {
    fn from(s: &UcLinearScenario) -> Self {
        LinearScenario {
            beta0: s.beta0,
            beta_a: s.beta_a,
            beta_x: s.beta_x,
            beta_u: s.beta_u,
            delta0: s.delta0,
            delta_a: s.delta_a,
            delta_x: s.delta_x,
            sigma_eps: s.sigma_eps,
            sigma_u: s.sigma_u,
            mu_x: s.mu_x,
            sigma_x: s.sigma_x,
            p_o: s.p_o,
            p_r: s.p_r,
            n: s.n,
            m: s.m,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UcPowerReport {
    pub h: f64,
    pub power: f64,
    pub c: f64,
    pub eta: f64,
    pub kappa: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, records any failure, and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UcStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            UcStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            UcStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            UcStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            UcStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn as_dataset<'a>(p: *const UcDataset, what: &'static str) -> Result<&'a Dataset, Fail> {
    p.as_ref().map(|d| &d.0).ok_or(Fail::Null(what))
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap` bytes, into `buf`. Returns the full message length
/// excluding the terminator, or 0 when there is no message. `buf` may be
/// null to query the length.
#[no_mangle]
pub unsafe extern "C" fn uc_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && cap > 0 {
                let n = bytes.len().min(cap - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn uc_normal_cdf(z: f64, result: *mut f64) -> UcStatus {
    guard(|| {
        *out(result, "result")? = normal_cdf(z)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn uc_normal_quantile(p: f64, result: *mut f64) -> UcStatus {
    guard(|| {
        *out(result, "result")? = normal_quantile(p)?;
        Ok(())
    })
}

/// Builds a dataset from `n` units: treatment `a` (0 or 1), row-major
/// covariates `x` (`n * dim` values, may be null when `dim` is 0), and
/// outcomes `y`. Covariates are named `x1..x<dim>`.
#[no_mangle]
pub unsafe extern "C" fn uc_dataset_new(
    a: *const u8,
    x: *const f64,
    y: *const f64,
    n: usize,
    dim: usize,
    source: UcSource,
    result: *mut *mut UcDataset,
) -> UcStatus {
    guard(|| {
        let result = out(result, "result")?;
        *result = ptr::null_mut();
        if a.is_null() || y.is_null() {
            return Err(Fail::Null("a or y"));
        }
        if dim > 0 && x.is_null() {
            return Err(Fail::Null("x"));
        }
        let a = std::slice::from_raw_parts(a, n);
        let y = std::slice::from_raw_parts(y, n);
        let x: &[f64] = if dim == 0 {
            &[]
        } else {
            let len = n
                .checked_mul(dim)
                .ok_or_else(|| Fail::Arg("n * dim overflows".into()))?;
            std::slice::from_raw_parts(x, len)
        };
        let samples = (0..n)
            .map(|i| Sample::new(a[i], x[i * dim..(i + 1) * dim].to_vec(), y[i]))
            .collect();
        let source = match source {
            UcSource::Rct => Source::Rct,
            UcSource::Obs => Source::Obs,
        };
        let names = (1..=dim).map(|j| format!("x{j}")).collect();
        let ds = Dataset::new(samples, source, names)?;
        *result = Box::into_raw(Box::new(UcDataset(ds)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn uc_dataset_free(dataset: *mut UcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

#[no_mangle]
pub unsafe extern "C" fn uc_dataset_len(dataset: *const UcDataset, result: *mut usize) -> UcStatus {
    guard(|| {
        *out(result, "result")? = as_dataset(dataset, "dataset")?.len();
        Ok(())
    })
}

/// Inverse-propensity-weighted contrast with the chosen propensity model,
/// fitted on the same data.
#[no_mangle]
pub unsafe extern "C" fn uc_ipw_estimate(
    data: *const UcDataset,
    propensity: UcPropensity,
    result: *mut UcIpwEstimate,
) -> UcStatus {
    guard(|| {
        let ds = as_dataset(data, "dataset")?;
        let result = out(result, "result")?;
        let model = match propensity {
            UcPropensity::Constant => fit_constant(ds)?,
            UcPropensity::Logistic => fit_logistic(ds, &IrlsOptions::default())?.model,
        };
        *result = UcIpwEstimate::from(&ipw_estimate(ds, &model)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn uc_z_test(
    rct: *const UcDataset,
    obs: *const UcDataset,
    alpha: f64,
    result: *mut UcZTest,
) -> UcStatus {
    guard(|| {
        let r = z_test(as_dataset(rct, "rct")?, as_dataset(obs, "obs")?, alpha)?;
        *out(result, "result")? = UcZTest {
            z: r.z,
            p_value: r.p_value,
            alpha: r.alpha,
            reject: r.reject,
            omega_r: UcIpwEstimate::from(&r.omega_r),
            omega_o: UcIpwEstimate::from(&r.omega_o),
        };
        Ok(())
    })
}

/// Draws `b` paired resamples with the given seed. Decide at any level
/// with [`uc_bootstrap_decide`].
#[no_mangle]
pub unsafe extern "C" fn uc_bootstrap_run(
    rct: *const UcDataset,
    obs: *const UcDataset,
    b: usize,
    seed: u64,
    result: *mut *mut UcBootstrap,
) -> UcStatus {
    guard(|| {
        let result = out(result, "result")?;
        *result = ptr::null_mut();
        let d = bootstrap_distribution(
            as_dataset(rct, "rct")?,
            as_dataset(obs, "obs")?,
            b,
            &Rng::new(seed),
            &Pipeline::default(),
        )?;
        *result = Box::into_raw(Box::new(UcBootstrap(d)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn uc_bootstrap_decide(
    boot: *const UcBootstrap,
    alpha: f64,
    result: *mut UcBootstrapDecision,
) -> UcStatus {
    guard(|| {
        let d = boot
            .as_ref()
            .ok_or(Fail::Null("bootstrap"))?
            .0
            .decide(alpha)?;
        *out(result, "result")? = UcBootstrapDecision {
            t_observed: d.t_observed,
            q_lo: d.q_lo,
            q_hi: d.q_hi,
            alpha: d.alpha,
            reject: d.reject,
            b: d.b,
            p_value: d.p_value,
        };
        Ok(())
    })
}

/// Copies up to `cap` replicate statistics, in draw order, into `buf` and
/// stores the total count in `count`. `buf` may be null to query the count.
#[no_mangle]
pub unsafe extern "C" fn uc_bootstrap_replicates(
    boot: *const UcBootstrap,
    buf: *mut f64,
    cap: usize,
    count: *mut usize,
) -> UcStatus {
    guard(|| {
        let reps = &boot.as_ref().ok_or(Fail::Null("bootstrap"))?.0.replicates;
        *out(count, "count")? = reps.len();
        if !buf.is_null() {
            ptr::copy_nonoverlapping(reps.as_ptr(), buf, reps.len().min(cap));
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn uc_bootstrap_free(boot: *mut UcBootstrap) {
    if !boot.is_null() {
        drop(Box::from_raw(boot));
    }
}

#[no_mangle]
pub unsafe extern "C" fn uc_h_function(inputs: *const UcHInputs, result: *mut f64) -> UcStatus {
    guard(|| {
        let p = inputs.as_ref().ok_or(Fail::Null("inputs"))?;
        *out(result, "result")? = h_function(&HInputs {
            delta_a: p.delta_a,
            delta_x: p.delta_x,
            sigma_u: p.sigma_u,
            sigma_x: p.sigma_x,
            c: p.c,
            eta: p.eta,
            p_o: p.p_o,
            p_r: p.p_r,
            n: p.n,
            kappa: p.kappa,
        })?;
        Ok(())
    })
}

/// Fills `result` with the library's default linear scenario.
#[no_mangle]
pub unsafe extern "C" fn uc_linear_scenario_default(result: *mut UcLinearScenario) -> UcStatus {
    guard(|| {
        *out(result, "result")? = LinearScenario::default().into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn uc_analytic_power(
    scenario: *const UcLinearScenario,
    alpha: f64,
    result: *mut UcPowerReport,
) -> UcStatus {
    guard(|| {
        let s = LinearScenario::from(scenario.as_ref().ok_or(Fail::Null("scenario"))?);
        let r = analytic_power(&s, alpha)?;
        *out(result, "result")? = UcPowerReport {
            h: r.h,
            power: r.power,
            c: r.c,
            eta: r.eta,
            kappa: r.kappa,
        };
        Ok(())
    })
}
