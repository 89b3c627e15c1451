use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "types": [{"id": "scalar", "A": 1.5, "B": 2, "Q": 2, "R": 1, "K_W": 6, "Sigma0": 2}],
  "T": 8, "lambda": 2.0, "alpha": 0.2,
  "solver": {"rollouts": 1000, "max_iter": 20, "fit": {"samples": 300}},
  "sim": {"N": 1, "runs": 1, "seed": 5}
}"#;

fn mftg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mftg"))
        .args(args)
        .current_dir(dir)
        .env_remove("MFTG_SEED")
        .env_remove("MFTG_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn missing_lambda_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &SMALL.replace(r#""lambda": 2.0,"#, ""));
    let out = mftg(&["solve-mfte", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambda"), "{}", stderr(&out));
}

#[test]
fn unreadable_config_and_bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mftg(&["solve-mfte", "--config", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = mftg(&["simulate", "--config", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(2), "missing --solution");
    let out = mftg(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_then_simulate_one_team_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out = mftg(&["solve-mfte", "--config", &cfg, "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("residual=") && summary.contains("contraction_certified="));

    let out = mftg(
        &["simulate", "--config", &cfg, "--solution", "o/solution.json", "--out", "o", "--no-timestamp"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("median="));
    let costs = data_lines(&dir.path().join("o/costs.csv"));
    assert_eq!(costs[0], "run,team,type,cost_total,cost_control,cost_comm");
    assert_eq!(costs.len(), 2);
    assert_eq!(data_lines(&dir.path().join("o/utilization.csv")).len(), 1 + 8);
    let raw = std::fs::read_to_string(dir.path().join("o/costs.csv")).unwrap();
    assert!(raw.starts_with("#schema=v1\n#config_hash="));
    assert!(!raw.contains("#created="));

    let other = write(dir.path(), "d.json", &SMALL.replace(r#""T": 8"#, r#""T": 9"#));
    let out = mftg(&["simulate", "--config", &other, "--solution", "o/solution.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = mftg(&["nash-gap", "--config", &cfg, "--solution", "o/solution.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("deviation"));
}

#[test]
fn vanishing_alpha_gives_half_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &SMALL.replace(r#""alpha": 0.2"#, r#""alpha": 1e-12"#));
    let out = mftg(&["solve-mfte", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("solution.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let g = v["g_star"].as_array().unwrap();
    assert_eq!(g.len(), 8);
    assert!(g.iter().all(|x| x.as_f64() == Some(0.5)), "{g:?}");
}

#[test]
fn large_price_is_not_certified() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace(r#""T": 8"#, r#""T": 50"#)
        .replace(r#""lambda": 2.0"#, r#""lambda": 10"#)
        .replace(r#""alpha": 0.2"#, r#""alpha": 0.055"#)
        .replace(r#""max_iter": 20"#, r#""max_iter": 2"#);
    let cfg = write(dir.path(), "c.json", &text);
    let out = mftg(&["solve-mfte", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("contraction_certified=false"), "{summary}");
}

#[test]
fn seed_flag_and_env_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &SMALL.replace(r#""max_iter": 20"#, r#""max_iter": 2"#));
    assert!(mftg(&["solve-mfte", "--config", &cfg], dir.path()).status.success());
    let sim = |extra: &[&str], env: Option<&str>, out: &str| {
        let mut args = vec!["simulate", "--config", &cfg, "--solution", "solution.json", "--no-timestamp", "--out", out];
        args.extend_from_slice(extra);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mftg"));
        cmd.args(&args).current_dir(dir.path()).env_remove("MFTG_SEED");
        if let Some(s) = env {
            cmd.env("MFTG_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read_to_string(dir.path().join(out).join("costs.csv")).unwrap()
    };
    let flag = sim(&["--seed", "99"], None, "a");
    let env = sim(&[], Some("99"), "b");
    let default = sim(&[], None, "c");
    assert_eq!(flag, env);
    assert_ne!(flag, default);
}
