//! End-to-end checks of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mimolab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimolab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn tiny_ppm(dir: &Path) -> String {
    let path = dir.join("img.ppm");
    let mut bytes = b"P6\n8 4\n255\n".to_vec();
    bytes.extend((0..96).map(|i| (i * 5 % 251) as u8));
    fs::write(&path, bytes).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn selftest_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = mimolab(&["selftest"], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 4);
}

#[test]
fn simulate_binary_payload_to_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"channel": "identity", "code_rate": "passthrough", "ldpc_block": 256, "snr_db": 40.0, "seed": 3}"#,
    );
    let payload = dir.path().join("payload.bin");
    fs::write(&payload, vec![0x5au8; 300]).unwrap();
    let out_csv = dir.path().join("report.csv");

    let out = mimolab(
        &[
            "simulate",
            "--config",
            &cfg,
            "--payload",
            payload.to_str().unwrap(),
            "--out",
            out_csv.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&out_csv).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("report_version,snr_db,ber"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("1,40,0,"), "clean link expected: {row}");

    let out = mimolab(
        &[
            "simulate",
            "--config",
            &cfg,
            "--payload",
            payload.to_str().unwrap(),
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["ber"], serde_json::json!(0.0));
    assert!(v[0]["psnr_db"].is_null());
}

#[test]
fn simulate_image_payload_reports_lossless_and_cbr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"channel": "identity", "code_rate": "passthrough", "ldpc_block": 256, "snr_db": 60.0}"#,
    );
    let img = tiny_ppm(dir.path());
    let out = mimolab(
        &["simulate", "--config", &cfg, "--image", &img, "--format", "json"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["psnr_db"], serde_json::json!("inf"));
    assert_eq!(v[0]["n_source"], serde_json::json!(96));
}

#[test]
fn simulate_with_source_dims_controls_cbr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"channel": "identity", "code_rate": "passthrough", "ldpc_block": 256}"#,
    );
    let payload = dir.path().join("payload.bin");
    fs::write(&payload, vec![1u8; 64]).unwrap();
    let out = mimolab(
        &[
            "simulate",
            "--config",
            &cfg,
            "--payload",
            payload.to_str().unwrap(),
            "--source-dims",
            "16x16",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["n_source"], serde_json::json!(3 * 16 * 16));
    let k_total = v[0]["k_total"].as_u64().unwrap();
    let cbr = v[0]["cbr"].as_f64().unwrap();
    assert!((cbr - k_total as f64 / 768.0).abs() < 1e-15);
}

#[test]
fn sweep_over_snr_axis_emits_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"code_rate": "passthrough", "ldpc_block": 256, "seed": 5}"#,
    );
    let payload = dir.path().join("p.bin");
    fs::write(&payload, vec![7u8; 128]).unwrap();
    let out = mimolab(
        &[
            "sweep",
            "--config",
            &cfg,
            "--payload",
            payload.to_str().unwrap(),
            "--snr",
            "2,6,10",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 4, "header plus three rows:\n{stdout}");
}

#[test]
fn bd_subcommand_reports_constructed_shift() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "rate,quality\n0.1,30\n0.2,33\n0.4,36\n0.8,39\n").unwrap();
    fs::write(&b, "rate,quality\n0.05,30\n0.1,33\n0.2,36\n0.4,39\n").unwrap();
    let out = mimolab(
        &["bd", "--curve-a", a.to_str().unwrap(), "--curve-b", b.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rate_line = stdout.lines().find(|l| l.starts_with("bd_rate_percent")).unwrap();
    let value: f64 = rate_line.split(',').nth(1).unwrap().parse().unwrap();
    assert!((value + 50.0).abs() < 1.0, "bd rate {value}");
}

#[test]
fn train_pcen_writes_loadable_params_and_simulate_uses_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"ldpc_block": 256, "seed": 6}"#,
    );
    let params = dir.path().join("params.json");
    let out = mimolab(
        &[
            "train-pcen",
            "--config",
            &cfg,
            "--realizations",
            "8",
            "--t-iters",
            "4",
            "--max-rounds",
            "2",
            "--out",
            params.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(params.exists());

    let cfg_on = write_config(
        dir.path(),
        "cfg_on.json",
        &format!(
            r#"{{"ldpc_block": 256, "seed": 6, "pcen": {{"mode": "on", "params_path": {:?}}}}}"#,
            params.to_str().unwrap()
        ),
    );
    let payload = dir.path().join("p.bin");
    fs::write(&payload, vec![3u8; 96]).unwrap();
    let out = mimolab(
        &[
            "simulate",
            "--config",
            &cfg_on,
            "--payload",
            payload.to_str().unwrap(),
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_proxy_writes_surrogate_and_preprocessor() {
    let dir = tempfile::tempdir().unwrap();
    let surrogate = dir.path().join("s.json");
    let prep = dir.path().join("prep.json");
    let out = mimolab(
        &[
            "train-proxy",
            "--dim",
            "4",
            "--quant-bits",
            "3",
            "--epochs",
            "800",
            "--out",
            surrogate.to_str().unwrap(),
            "--preprocessor-out",
            prep.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(surrogate.exists());
    assert!(prep.exists());
    // both artefacts load back
    mimolab::io::read_surrogate(&surrogate).unwrap();
    mimolab::io::read_preprocessor(&prep).unwrap();
}

#[test]
fn unknown_format_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let payload = dir.path().join("p.bin");
    fs::write(&payload, vec![1u8; 16]).unwrap();
    let out = mimolab(
        &[
            "simulate",
            "--payload",
            payload.to_str().unwrap(),
            "--format",
            "yaml",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown format"));
}
