use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unconfound"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_TYPE1: &str = "replicates = 4\nb = 100\nalpha_levels = [0.1, 0.05]\nseed = 3\n[linear]\nbeta_u = 2.0\ndelta_a = 0.0\n";

#[test]
fn analytic_power_matches_golden_file() {
    let cfg = configs().join("analytic_delta_a.toml");
    let out = run(&["analytic-power", "--config", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/analytic_delta_a.csv");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(golden).unwrap());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", SMALL_TYPE1);
    let mut outs = Vec::new();
    for (i, jobs) in ["1", "2", "1"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}.json"));
        let st = run(&[
            "type1",
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            jobs,
            "--format",
            "json",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success());
        outs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", SMALL_TYPE1);
    let out = run(&["type1", "--config", cfg.to_str().unwrap(), "--seed", "99"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains(",99,")));
}

#[test]
fn json_echo_reproduces_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", SMALL_TYPE1);
    let first = run(&[
        "type1",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    let echo = write(dir.path(), "echo.json", &v["config"].to_string());
    let second = run(&[
        "type1",
        "--config",
        echo.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(
        second.status.success(),
        "{}",
        String::from_utf8_lossy(&second.stderr)
    );
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.toml", "replicatez = 3\n");
    assert_eq!(
        run(&["type1", "--config", unknown.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let alpha = write(dir.path(), "a.toml", "alpha_levels = [1.5]\n");
    assert_eq!(
        run(&["type1", "--config", alpha.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let sweep = write(
        dir.path(),
        "s.toml",
        "[sweep]\nparameter = \"nope\"\nvalues = [1.0]\n",
    );
    let out = run(&["power-sweep", "--config", sweep.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
    let wrong_kind = write(dir.path(), "k.toml", "kind = \"type1\"\n");
    assert_eq!(
        run(&["semisynth", "--config", wrong_kind.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

fn pair_config(dir: &Path, rct: &str, obs: &str) -> PathBuf {
    let r = write(dir, "rct.csv", rct);
    let o = write(dir, "obs.csv", obs);
    write(
        dir,
        "pair.toml",
        &format!(
            "b = 100\n[data]\nrct = {:?}\nobs = {:?}\ntreatment = \"a\"\noutcome = \"y\"\n",
            r.to_str().unwrap(),
            o.to_str().unwrap()
        ),
    )
}

#[test]
fn ingestion_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pair_config(dir.path(), "a,y\n1,2\n0,1\n", "a,outcome\n1,2\n0,1\n");
    let out = run(&["test-pair", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains('y'));
    let missing = run(&["semisynth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn degenerate_test_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let body: String = (0..40).map(|i| format!("{},5\n", i % 2)).collect();
    let cfg = pair_config(dir.path(), &format!("a,y\n{body}"), &format!("a,y\n{body}"));
    let out = run(&["test-pair", "--config", cfg.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn test_pair_reports_both_tests() {
    let dir = tempfile::tempdir().unwrap();
    let rct: String = (0..60)
        .map(|i| format!("{},{}\n", i % 2, (i % 7) as f64 + 3.0 * (i % 2) as f64))
        .collect();
    let obs: String = (0..300)
        .map(|i| format!("{},{}\n", i % 2, (i % 5) as f64 + 3.0 * (i % 2) as f64))
        .collect();
    let cfg = pair_config(dir.path(), &format!("a,y\n{rct}"), &format!("a,y\n{obs}"));
    let out = run(&["test-pair", "--config", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    for metric in [
        "omega_r",
        "omega_o",
        "q_lo",
        "q_hi",
        "bootstrap_reject",
        "z_p_value",
    ] {
        assert!(text.contains(&format!(",{metric},")), "{metric}");
    }
    assert_eq!(text.matches(",t_star,").count(), 100);
}
