use std::process::Command;

fn megcli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_megcli"));
    c.env_remove(megcli::SEED_ENV);
    c
}

#[test]
fn selfcheck_passes_on_a_clean_build() {
    let out = megcli().arg("selfcheck").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    for name in ["gradients", "flatten bijection", "rvq monotonicity", "metric oracles", "wilcoxon enumeration", "token rate"] {
        assert!(text.lines().any(|l| l.starts_with(name) && l.contains("pass")), "{name}: {text}");
    }
}

#[test]
fn selfcheck_fails_with_exit_one_on_a_damaged_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = megcli().args(["selfcheck", "--run-dir"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("run artifacts"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["no-such-command"],
        vec!["train-lm"],
        vec!["--preset", "paper-doc", "gen-data"],
        vec!["--lm.no_such_field=1", "show-config"],
    ] {
        let out = megcli().arg("--out").arg(tmp.path()).args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = megcli().env(megcli::SEED_ENV, "x").arg("show-config").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dotted_flags_and_seed_variable_reach_the_config() {
    let out = megcli()
        .env(megcli::SEED_ENV, "99")
        .args(["--lm.n_layers=3", "--set", "eval.n_boot=10", "show-config"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 99);
    assert_eq!(v["lm"]["n_layers"], 3);
    assert_eq!(v["eval"]["n_boot"], 10);
}

#[test]
fn config_file_is_read() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    let out = megcli().arg("show-config").output().unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    v["lm"]["train"]["steps"] = 7.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = megcli().arg("--config").arg(&cfg).arg("show-config").output().unwrap();
    let back: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(back["lm"]["train"]["steps"], 7);
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = megcli().arg("--config").arg(&cfg).arg("show-config").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
