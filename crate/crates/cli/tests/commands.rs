use std::process::Command;

use pathdual_cli::{cmd_dp, cmd_sample, cmd_strategy, RunConfig};

fn small() -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [("l", "16"), ("g", "4"), ("n_steps", "128"), ("quantile_samples", "500"), ("m_sample", "20"), ("run_logs", "2")] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

#[test]
fn dp_outputs_are_reproducible() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = cmd_dp(&cfg, a.path()).unwrap();
    let rb = cmd_dp(&cfg, b.path()).unwrap();
    assert_eq!(ra.ue0.to_bits(), rb.ue0.to_bits());
    for file in ["walk_table_stage0.csv", "gap_report.csv", "dp_report.csv"] {
        let fa = std::fs::read(a.path().join(file)).unwrap();
        assert!(!fa.is_empty());
        assert_eq!(fa, std::fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn sampled_paths_replay_through_strategy() {
    let mut cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let sampled = cmd_sample(&cfg, dir.path()).unwrap();
    assert_eq!(sampled.count, 20);
    assert_eq!(sampled.completed + sampled.absorbed + sampled.time_exhausted, 20);

    cfg.paths = Some(dir.path().join("manifest.csv"));
    let out = tempfile::tempdir().unwrap();
    let r = cmd_strategy(&cfg, out.path()).unwrap();
    assert_eq!(r.hedge.n, 20);
    assert!(r.hedge.passed);
    assert!(out.path().join("hedge.csv").exists());
    assert!(out.path().join("runs").join("run_000000.csv").exists());
}

#[test]
fn constant_payoff_hedge_holds_its_margin() {
    let mut cfg = small();
    cfg.set("terminal", "constant(0.7)").unwrap();
    cfg.set("m_strategy", "100").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_strategy(&cfg, dir.path()).unwrap();
    assert_eq!(r.hedge.successes, 100);
    assert!(r.hedge.outcomes.iter().all(|o| o.capital == r.initial_capital));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_pathdual");
    let dir = tempfile::tempdir().unwrap();
    let ok = Command::new(bin).args(["--set", "l=16", "--set", "g=4", "dp", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(!ok.stdout.is_empty());

    let bad = Command::new(bin).args(["--set", "no_such_key=1", "dp", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no_such_key"));
}
