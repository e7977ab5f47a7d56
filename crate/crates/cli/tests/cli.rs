use std::fs;
use std::process::{Command, Output};

fn pdsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdsl"))
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("binary runs")
}

#[test]
fn run_writes_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = pdsl(&[
        "run", "--agents", "4", "--rounds", "3", "--sigma", "0", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,global_loss,avg_local_loss,test_accuracy,mean_grad_norm,min_phi_share,sigma_used"
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("m.csv");
    fs::write(&cfg, "# small run\nagents = 4\nrounds = 2\nalgo = dpsgd\nsigma = 0.5\n").unwrap();
    let o = pdsl(&[
        "run", "--config", cfg.to_str().unwrap(), "--rounds", "4", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().ends_with(",NaN,0.5"));
}

#[test]
fn range_errors_name_the_key() {
    let o = pdsl(&["run", "--mu", "-1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("`mu`"));
    let o = pdsl(&["run", "--set", "bogus=1"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown configuration key"));
    let o = pdsl(&["run", "--dataset", "mnist"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("mnist_dir"));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (p, extra) in [(&a, None), (&b, Some("--serial"))] {
        let mut args = vec!["run", "--agents", "4", "--rounds", "3", "--seed", "7", "--out", p.to_str().unwrap()];
        args.extend(extra);
        assert!(pdsl(&args).status.success());
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn analyze_reports_empty_window() {
    let o = pdsl(&["analyze", "--alpha", "0.5", "--gamma", "0.6", "--rho", "0", "--omega-min", "0.25"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("learning-rate window: empty"));
    assert!(text.contains("bound at T = 1000"));
    assert!(text.contains("minimum rounds:"));
}

#[test]
fn topology_dumps_matrix() {
    let o = pdsl(&["topology", "--kind", "full", "--agents", "2"]);
    assert!(o.status.success());
    let csv = String::from_utf8_lossy(&o.stdout);
    assert!(csv.lines().filter(|l| l.contains("0.5")).count() >= 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rho = 0"));
    let bad = pdsl(&["topology", "--kind", "ring", "--agents", "2"]);
    assert!(!bad.status.success());
}
