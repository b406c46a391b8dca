//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. The type I error criteria run at full scale
//! (1000 replicates, B = 1000) and take several minutes each on one core.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use unconfound::estimators::{ipw_estimate, Dataset, Sample, Source};
use unconfound::experiments::{
    run_analytic_power, run_power_sweep, run_semisynth, run_type1, ExperimentConfig, Kind, Preset,
    ResultTable,
};
use unconfound::propensity::{fit_constant, fit_logistic, IrlsOptions, PropensityModel};
use unconfound::scenarios::{generate_linear, LinearScenario};
use unconfound::statcore::{draw_bernoulli, draw_normal, Rng};

fn config(name: &str) -> ExperimentConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name);
    ExperimentConfig::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: u32, title: &str, started: Instant, o: &unconfound::Result<Outcome>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match o {
        Ok(o) => {
            println!(
                "{} criterion {n} ({title}): {} [{secs:.1}s]",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            o.pass
        }
        Err(e) => {
            println!("FAIL criterion {n} ({title}): error: {e} [{secs:.1}s]");
            false
        }
    }
}

fn rates(t: &ResultTable, label: &str) -> Vec<(f64, f64)> {
    t.select(label, "rejection_rate")
        .map(|r| (r.alpha.unwrap(), r.value))
        .collect()
}

/// Full-scale and ci-preset type I error for each config file.
fn type1_criterion(files: &[&str], label: &str) -> unconfound::Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for f in files {
        let cfg = config(f);
        let full = run_type1(&cfg)?;
        for (a, p) in rates(&full, label) {
            let ok = (p - a).abs() <= 0.02;
            pass &= ok;
            detail.push(format!(
                "{f} full a={a} rate={p:.3}{}",
                if ok { "" } else { " OUT" }
            ));
        }
        let mut ci = cfg.clone();
        ci.apply_preset(Preset::Ci, Kind::Type1);
        let t0 = Instant::now();
        let quick = run_type1(&ci)?;
        let secs = t0.elapsed().as_secs_f64();
        pass &= secs < 60.0;
        for (a, p) in rates(&quick, label) {
            let ok = (p - a).abs() <= 0.04;
            pass &= ok;
            detail.push(format!(
                "ci a={a} rate={p:.3}{}",
                if ok { "" } else { " OUT" }
            ));
        }
        detail.push(format!("ci took {secs:.1}s"));
    }
    Ok(Outcome {
        pass,
        detail: detail.join("; "),
    })
}

fn criterion_3() -> unconfound::Result<Outcome> {
    let cfg = config("power_beta_u.toml");
    let t = run_power_sweep(&cfg)?;
    let p: Vec<f64> = t.select("linear", "power").map(|r| r.value).collect();
    let (lo, hi) = p
        .iter()
        .fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    Ok(Outcome {
        pass: p.len() >= 5 && hi - lo <= 0.10 && cfg.linear.delta_a == 1.0,
        detail: format!(
            "power over beta_u grid {p:?}, spread {:.3} (limit 0.10)",
            hi - lo
        ),
    })
}

fn criterion_4() -> unconfound::Result<Outcome> {
    let cfg = config("power_delta_a.toml");
    let t = run_power_sweep(&cfg)?;
    let pts: Vec<(f64, f64, f64)> = t
        .select("linear", "power")
        .map(|r| (r.param_value.unwrap(), r.value, r.se.unwrap()))
        .collect();
    let analytic_top = t
        .select("linear", "analytic_power")
        .last()
        .map(|r| r.value)
        .unwrap_or(0.0);
    let monotone = pts
        .windows(2)
        .all(|w| w[1].1 >= w[0].1 - 2.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt());
    let top = pts.last().unwrap().1;
    Ok(Outcome {
        pass: monotone && top >= 0.9 && analytic_top >= 0.95 && cfg.linear.beta_u == 1.0,
        detail: format!(
            "power {:?}; nondecreasing within 2 SE: {monotone}; top {top:.3} (>= 0.9); analytic at top {analytic_top:.4} (>= 0.95)",
            pts.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>()
        ),
    })
}

fn criterion_5() -> unconfound::Result<Outcome> {
    let cfg = config("analytic_delta_a.toml");
    let t = run_analytic_power(&cfg)?;
    let an: Vec<(f64, f64, f64)> = t
        .select("linear", "analytic_power")
        .map(|r| (r.param_value.unwrap(), r.alpha.unwrap(), r.value))
        .collect();
    let emp: Vec<f64> = t
        .select("linear", "z_test_power")
        .map(|r| r.value)
        .collect();
    let gaps: Vec<f64> = an.iter().zip(&emp).map(|(a, e)| (a.2 - e).abs()).collect();
    let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
    let at_zero = an.iter().find(|a| a.0 == 0.0).map(|a| (a.2 - a.1).abs());
    Ok(Outcome {
        pass: an.len() == 5 && emp.len() == 5 && cfg.replicates == 200 && max_gap <= 0.07 && at_zero.is_some_and(|d| d <= 1e-12),
        detail: format!("max |analytic - z-test rate| = {max_gap:.3} (limit 0.07); |power - alpha| at delta_a=0 = {:.1e}", at_zero.unwrap_or(f64::NAN)),
    })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

fn criterion_6() -> unconfound::Result<Outcome> {
    let s = LinearScenario::default();
    let master = Rng::new(606);
    let mut obs = Vec::new();
    let mut rct = Vec::new();
    for r in 0..500 {
        let (dr, d_o) = generate_linear(&s, &mut master.child(r))?;
        let fit = fit_logistic(&d_o, &IrlsOptions::default())?;
        obs.push(ipw_estimate(&d_o, &fit.model)?.omega_hat);
        rct.push(ipw_estimate(&dr, &fit_constant(&dr)?)?.omega_hat);
    }
    let (mo, so) = mean_sd(&obs);
    let (mr, sr) = mean_sd(&rct);
    let zo = (mo - (s.beta_a + s.beta_u * s.delta_a)) / (so / 500f64.sqrt());
    let zr = (mr - s.beta_a) / (sr / 500f64.sqrt());
    Ok(Outcome {
        pass: s.m == 2000 && zo.abs() <= 3.0 && zr.abs() <= 3.0,
        detail: format!(
            "mean obs {mo:.4} vs {} ({zo:+.2} SE); mean rct {mr:.4} vs {} ({zr:+.2} SE)",
            s.beta_a + s.beta_u * s.delta_a,
            s.beta_a
        ),
    })
}

fn criterion_7() -> unconfound::Result<Outcome> {
    let mut rng = Rng::new(707);
    let mut samples = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let x = draw_normal(&mut rng, 0.0, 1.0)?;
        let a = draw_bernoulli(&mut rng, unconfound::propensity::expit(0.5 + 1.2 * x))?;
        samples.push(Sample::new(a, vec![x], 0.0));
    }
    let ds = Dataset::new(samples, Source::Obs, vec!["x".into()])?;
    let fit = fit_logistic(&ds, &IrlsOptions::default())?;
    let PropensityModel::Logistic { intercept, slopes } = &fit.model else {
        unreachable!()
    };
    let monotone = fit.loglik_trace.windows(2).all(|w| w[1] >= w[0]);
    Ok(Outcome {
        pass: (intercept - 0.5).abs() <= 0.05
            && (slopes[0] - 1.2).abs() <= 0.05
            && monotone
            && fit.converged,
        detail: format!(
            "intercept {intercept:.4}, slope {:.4}, {} iterations, monotone trace: {monotone}",
            slopes[0], fit.iterations
        ),
    })
}

fn criterion_8() -> unconfound::Result<Outcome> {
    let cfg = config("semisynth_star.toml");
    let t = run_semisynth(None, &cfg)?;
    let get = |label: &str, m: &str| {
        t.select(label, m)
            .find(|r| r.alpha.is_none_or(|a| a == 0.05))
            .unwrap()
            .value
    };
    let (lo_o, hi_o) = (
        get("confounder_observed", "q_lo"),
        get("confounder_observed", "q_hi"),
    );
    let (lo_h, hi_h) = (
        get("confounder_hidden", "q_lo"),
        get("confounder_hidden", "q_hi"),
    );
    let covers = lo_o <= 0.0 && 0.0 <= hi_o;
    let excludes = !(lo_h <= 0.0 && 0.0 <= hi_h);
    Ok(Outcome {
        pass: covers && excludes,
        detail: format!(
            "seed {}; observed: omega_r {:.2}, omega_o {:.2}, 95% [{lo_o:.2}, {hi_o:.2}] covers 0: {covers}; hidden: omega_o {:.2}, 95% [{lo_h:.2}, {hi_h:.2}] excludes 0: {excludes}",
            cfg.seed,
            get("confounder_observed", "omega_r"),
            get("confounder_observed", "omega_o"),
            get("confounder_hidden", "omega_o"),
        ),
    })
}

fn criterion_9() -> unconfound::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let rct: String = (0..80)
        .map(|i| {
            format!(
                "{},{},{}\n",
                i % 2,
                i % 9,
                (i % 7) as f64 + 2.0 * (i % 2) as f64
            )
        })
        .collect();
    let obs: String = (0..400)
        .map(|i| {
            format!(
                "{},{},{}\n",
                (i / 3) % 2,
                i % 9,
                (i % 5) as f64 + 2.5 * ((i / 3) % 2) as f64
            )
        })
        .collect();
    std::fs::write(dir.path().join("r.csv"), format!("a,x,y\n{rct}"))?;
    std::fs::write(dir.path().join("o.csv"), format!("a,x,y\n{obs}"))?;
    let pair = dir.path().join("pair.toml");
    std::fs::write(
        &pair,
        "seed = 9\nb = 200\n[data]\nrct = \"r.csv\"\nobs = \"o.csv\"\ntreatment = \"a\"\noutcome = \"y\"\ncovariates = [\"x\"]\n",
    )?;
    let type1 = dir.path().join("t.toml");
    std::fs::write(&type1, "seed = 5\nreplicates = 20\nb = 200\nalpha_levels = [0.1, 0.05]\n[linear]\nbeta_u = 2.0\ndelta_a = 0.0\n")?;
    let sweep = dir.path().join("s.toml");
    std::fs::write(&sweep, "seed = 6\nreplicates = 10\nb = 100\n[sweep]\nparameter = \"beta_u\"\nvalues = [1.0, 3.0]\n")?;
    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "type1",
            vec!["--config".into(), type1.display().to_string()],
        ),
        (
            "power-sweep",
            vec!["--config".into(), sweep.display().to_string()],
        ),
        (
            "analytic-power",
            vec![
                "--config".into(),
                configs.join("analytic_delta_a.toml").display().to_string(),
            ],
        ),
        (
            "test-pair",
            vec!["--config".into(), pair.display().to_string()],
        ),
        (
            "semisynth",
            vec![
                "--config".into(),
                configs.join("semisynth_star.toml").display().to_string(),
                "--preset".into(),
                "ci".into(),
            ],
        ),
    ];
    let mut same = Vec::new();
    for (sub, args) in &runs {
        let mut files: Vec<Vec<u8>> = Vec::new();
        for (i, (format, jobs)) in [("csv", "1"), ("csv", "2"), ("json", "1"), ("json", "2")]
            .iter()
            .enumerate()
        {
            let out: PathBuf = dir.path().join(format!("{sub}-{i}.{format}"));
            let st = Command::new(env!("CARGO_BIN_EXE_unconfound"))
                .arg(sub)
                .args(args)
                .args(["--format", format, "--jobs", jobs, "--out"])
                .arg(&out)
                .status()?;
            if !st.success() {
                return Err(unconfound::Error::Test(format!("{sub} exited with {st}")));
            }
            files.push(std::fs::read(out)?);
        }
        same.push((sub, files[0] == files[1] && files[2] == files[3]));
    }
    Ok(Outcome {
        pass: same.iter().all(|s| s.1),
        detail: format!("byte-identical reruns: {same:?}"),
    })
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    type Check = fn() -> unconfound::Result<Outcome>;
    let checks: [(u32, &str, Check); 9] = [
        (1, "linear type I error", || {
            type1_criterion(
                &["type1_linear_bu2_da0.toml", "type1_linear_bu0_da2.toml"],
                "linear",
            )
        }),
        (2, "non-linear type I error", || {
            type1_criterion(
                &[
                    "type1_nonlinear_bu0_da2_dxa2.toml",
                    "type1_nonlinear_bu2_da0_dxa0.toml",
                ],
                "nonlinear",
            )
        }),
        (3, "power does not depend on beta_u", criterion_3),
        (4, "power grows with delta_a", criterion_4),
        (5, "closed-form power vs simulated z-test", criterion_5),
        (6, "mean of the estimators", criterion_6),
        (7, "logistic recovery", criterion_7),
        (8, "semi-synthetic coverage pattern", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let mut failed = 0;
    for (n, title, f) in checks {
        if !wanted(n) {
            continue;
        }
        let t0 = Instant::now();
        if !report(n, title, t0, &f()) {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
