use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kerrlab::experiment::read_manifest;
use kerrlab::ExperimentConfig;

const DEFAULT: &str = include_str!("../../../configs/validate.toml");

/// Three pulses, β = 0 and a coarse grid: every kind finishes in well under
/// a second.
const SMALL: &str = r#"
kind = "correlators"
seed = 5
runs = 12
output_dir = "unused"

[pulse_train]
half_count = 1
pulse_width_ps = 1.0
slot_duration_ps = 5.0
average_power_w = 1.0

[code]
amplitudes = [1.0, 0.8, 1.2]
phases_rad = [0.0, 1.5707963267948966, 3.141592653589793]

[channel]
length_km = 1.0
beta_ps2_per_km = 0.0
gamma_per_w_km = 1.0
noise_q_w_ps_per_km = 6.25e-6

[detector]
kind = "sinc"
tau_a_ps = 0.25

[grid]
samples_per_pulse_width = 16
steps = 128
smoothing_width_ps = 0.125
"#;

fn kerrlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kerrlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut a = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    a.extend_from_slice(extra);
    kerrlab(&a)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn shipped_default_validates() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", DEFAULT);
    let o = run("validate", &c, &d.path().join("v"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("PASS validate"));
}

#[test]
fn detector_as_wide_as_pulse_fails_validation() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", &DEFAULT.replace("tau_a_ps = 0.1", "tau_a_ps = 1.0"));
    let o = run("validate", &c, &d.path().join("v"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("detector_vs_pulse"), "{}", stdout(&o));
}

#[test]
fn low_snr_fails_dispersion_margin() {
    // β̃ = 0.05 with SNR = 10²: 1e-2 > 0.05/10.
    let body = DEFAULT
        .replace("beta_ps2_per_km = 0.015", "beta_ps2_per_km = 0.05")
        .replace("noise_q_w_ps_per_km = 2.5e-6", "noise_q_w_ps_per_km = 2.5e-4");
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", &body);
    let o = run("validate", &c, &d.path().join("v"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("snr_vs_dispersion"), "{}", stdout(&o));
}

#[test]
fn regime_violation_needs_override() {
    let body = DEFAULT.replace("tau_a_ps = 0.1", "tau_a_ps = 1.0");
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", &body);
    let o = run("synth", &c, &d.path().join("a"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("regime violation"));
    let o = run("synth", &c, &d.path().join("b"), &["--override-regime"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(read_manifest(&d.path().join("b")).unwrap().override_regime);
}

#[test]
fn malformed_config_is_a_validation_failure() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", "kind = \"synth\"\nseed = 1\n");
    let o = run("synth", &c, &d.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_matches_train_spec() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", DEFAULT);
    let out = d.path().join("s");
    assert_eq!(run("synth", &c, &out, &[]).status.code(), Some(0));
    let csv = fs::read_to_string(out.join("field.csv")).unwrap();
    let cfg = ExperimentConfig::from_toml_str(DEFAULT).unwrap();
    let samples = cfg.time_grid().unwrap().samples;
    assert_eq!(csv.lines().count(), samples + 1);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["samples"].as_u64(), Some(samples as u64));
    assert!(s["relative_error"].as_f64().unwrap() < 1e-9);
}

#[test]
fn roundtrip_meets_tolerance() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", SMALL);
    let out = d.path().join("r");
    assert_eq!(run("roundtrip", &c, &out, &[]).status.code(), Some(0));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("roundtrip.json")).unwrap()).unwrap();
    assert!(s["residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn manifest_records_overrides_and_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", SMALL);
    let out = d.path().join("m");
    let o = run("correlators", &c, &out, &["--seed", "42", "--runs", "6"]);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stdout(&o));
    let m = read_manifest(&out).unwrap();
    assert_eq!((m.seed, m.runs), (42, 6));
    assert!(m.wall_time_s.is_some());
    for a in &m.artifacts {
        assert_eq!(fs::metadata(out.join(&a.name)).unwrap().len(), a.bytes);
    }
    assert!(m.artifacts.iter().any(|a| a.name == "z_table.csv"));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "c.toml", SMALL);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    run("correlators", &c, &a, &["--workers", "1"]);
    run("correlators", &c, &b, &["--workers", "3"]);
    let (ma, mb) = (read_manifest(&a).unwrap(), read_manifest(&b).unwrap());
    assert_eq!(ma.artifacts, mb.artifacts);
    for art in &ma.artifacts {
        assert_eq!(fs::read(a.join(&art.name)).unwrap(), fs::read(b.join(&art.name)).unwrap(), "{}", art.name);
    }
}

#[test]
fn every_shipped_config_parses_and_validates() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.kind.name(), p.file_stem().unwrap().to_str().unwrap());
        let v = kerrlab::validate_config(&c);
        assert!(v.passed, "{}: {:?}", p.display(), v.failures());
        n += 1;
    }
    assert_eq!(n, kerrlab::ExperimentKind::ALL.len());
}
