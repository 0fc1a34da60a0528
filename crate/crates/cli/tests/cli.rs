use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const HEADER: &str = "k,alpha_k,tau_k,dropped,objective,grad_norm_sq,wallclock_ns";

fn apam(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_apam"));
    cmd.args(args).env_remove("APAM_SEED");
    if let Some(s) = env_seed {
        cmd.env("APAM_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn write_cfg(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "problem.kind = logistic\nproblem.samples = 200\nproblem.features = 10\n\
                     optim.alpha = 0.05\noptim.schedule = inv_sqrt_k\nrun.iterations = 120\n\
                     run.workers = 3\nrun.tau_max = 3\nrun.delay = uniform:3\nrun.objective_every = 40\n";

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && *l != HEADER)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn train_writes_trace_with_footer() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(&dir, "a.cfg", &format!("{SMALL}audit.enabled = true\naudit.stride = 7\n"));
    let out = dir.path().join("runs/t.csv");
    let o = apam(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().any(|l| l == HEADER));
    assert!(text.contains("# audit = pass"));
    assert!(text.contains("# staleness_histogram = "));
    assert!(text.contains("# produced = 120, applied = 120"));
    assert_eq!(data_rows(&text).len(), 120);
    assert!(dir.path().join("runs/t.audit.csv").exists());
    assert!(stdout(&o).contains("staleness histogram:"));
}

#[test]
fn seed_env_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(&dir, "a.cfg", SMALL);
    let run = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let o = apam(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], seed);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(out).unwrap()
    };
    let base = run("a.csv", None);
    let zero = run("b.csv", Some("0"));
    let other = run("c.csv", Some("17"));
    assert_eq!(base, zero);
    assert_ne!(data_rows(&base), data_rows(&other));
    assert!(other.contains("# seed = 17"));
    let o = apam(&["train", "--config", cfg.to_str().unwrap()], Some("abc"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("APAM_SEED"));
}

#[test]
fn simulate_writes_one_trace_per_staleness() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(&dir, "a.cfg", SMALL);
    let o = apam(
        &["simulate", "--config", cfg.to_str().unwrap(), "--tau", "0,8,32", "--out-dir", dir.path().to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for tau in [0u64, 8, 32] {
        let text = fs::read_to_string(dir.path().join(format!("trace_tau{tau}.csv"))).unwrap();
        let header: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).take(1).collect();
        assert_eq!(header, [HEADER]);
        let rows = data_rows(&text);
        assert_eq!(rows.len(), 120);
        assert!(rows.iter().all(|r| r[2] == tau.to_string() && r[3] == "0"), "tau {tau}");
    }
}

#[test]
fn verify_default_and_failure_exit() {
    let o = apam(&["verify", "--seeds", "2"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(s.lines().filter(|l| l.contains(": pass")).count(), 2);

    let dir = TempDir::new().unwrap();
    let bad = write_cfg(&dir, "bad.cfg", &format!("{SMALL}optim.beta1 = 1.5\n"));
    let o = apam(&["verify", "--config", bad.to_str().unwrap()], None);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("line 11") && e.contains("optim.beta1"), "{e}");
}

#[test]
fn config_errors_name_the_line() {
    let dir = TempDir::new().unwrap();
    let typo = write_cfg(&dir, "t.cfg", &format!("{SMALL}run.wrokers = 2\n"));
    let o = apam(&["train", "--config", typo.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("t.cfg: line 11: unknown key run.wrokers"), "{}", stderr(&o));
    let missing = write_cfg(&dir, "m.cfg", "problem.kind = logistic\noptim.alpha = 0.1\n");
    let o = apam(&["train", "--config", missing.to_str().unwrap()], None);
    assert!(stderr(&o).contains("missing required key run.iterations"));
}

#[test]
fn gradcheck_shipped_configs() {
    let mut args = vec!["gradcheck".to_string()];
    for name in ["default.cfg", "mlp2.cfg", "quadratic.cfg"] {
        args.push("--config".into());
        args.push(shipped(name).display().to_string());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = apam(&args, None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with("pass")).count(), 3);
}

#[test]
fn bounds_are_echoed_into_trace() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("q.csv");
    let o = apam(
        &[
            "bounds",
            "--config",
            shipped("quadratic.cfg").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--C-F",
            "10",
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    let value = |key: &str| -> f64 {
        let line = s.lines().find(|l| l.starts_with(&format!("{key} = "))).unwrap_or_else(|| panic!("{key} missing"));
        line.split(" = ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap()
    };
    let gap = value("empirical.ergodic_gap");
    assert!(gap >= 0.0 && gap <= value("bound.convex_delay"));
    assert!(value("bound.convex_nodelay") <= value("bound.convex_delay"));
    assert!(value("bound.nonconvex").is_finite());
    assert!(s.contains("estimate.C_F = 10 (assumed)"));
    assert!(s.contains("estimate.D_inf = 2 (box)"));
    let text = fs::read_to_string(out).unwrap();
    assert!(text.contains("# bound.convex_delay = "));
    assert!(text.contains("# bound_input.tau = 4"));
}

#[test]
fn show_round_trips() {
    let dir = TempDir::new().unwrap();
    let o = apam(&["show", "--config", shipped("mlp2.cfg").to_str().unwrap()], None);
    assert!(o.status.success());
    let first = stdout(&o);
    let again = write_cfg(&dir, "again.cfg", &first);
    let o = apam(&["show", "--config", again.to_str().unwrap()], None);
    assert_eq!(stdout(&o), first);
    assert!(first.contains("optim.alpha = 0.0005") && first.contains("run.batch_size = 32"));
}

#[test]
fn wire_mode_over_tcp() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(&dir, "w.cfg", &format!("{SMALL}run.mode = wire\nrun.transport = tcp\n"));
    let out = dir.path().join("w.csv");
    let o = apam(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    assert!(text.contains("# mode = wire"));
    assert_eq!(data_rows(&text).len(), 120);
}

#[test]
fn train_threads_override() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(&dir, "a.cfg", &format!("{SMALL}run.tau_max = 64\n").replace("run.tau_max = 3\n", ""));
    let out = dir.path().join("t.csv");
    let o = apam(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--mode",
            "threads",
            "--workers",
            "8",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    assert!(text.contains("# mode = threads") && text.contains("# workers = 8"));
    let footer = text.lines().find(|l| l.starts_with("# staleness_histogram = ")).unwrap();
    let applied: u64 = footer
        .trim_start_matches("# staleness_histogram = ")
        .split(';')
        .map(|kv| kv.split(':').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert!(text.contains(&format!("applied = {applied},")));
}
