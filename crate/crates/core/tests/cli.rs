use std::fs;

use fbm_currents::experiment::{cli_main_from, EXIT_CONFIG, EXIT_OK};

fn run(args: &[&str]) -> i32 {
    cli_main_from(std::iter::once("fbm-currents").chain(args.iter().copied()))
}

#[test]
fn unknown_config_key_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[kernel_check]\nn_pointz = 3\n").unwrap();
    let out = dir.path().join("out");
    let code = run(&["--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "kernel-check"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn usage_errors_exit_with_config_status() {
    assert_eq!(run(&["no-such-command"]), EXIT_CONFIG);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    assert_eq!(run(&["--threads", "0", "--out-dir", &out, "kernel-check"]), EXIT_CONFIG);
}

#[test]
fn kernel_check_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let code = run(&["--seed", "5", "--threads", "2", "--out-dir", out.to_str().unwrap(), "kernel-check"]);
    assert_eq!(code, EXIT_OK);
    let csv = fs::read_to_string(out.join("kernel_closed_forms.csv")).unwrap();
    assert!(csv.starts_with("# schema=kernel_closed_forms/1\nd,alpha,r,k,closed_form,rel_error\n"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["base_seed"], 5);
    assert_eq!(manifest["command"], "kernel-check");
    assert_eq!(manifest["timing"]["threads"], 2);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["file"] == "kernel_profiles.svg"));
    for o in outputs {
        let bytes = fs::read(out.join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["bytes"], bytes.len());
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("kernel-check.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}
