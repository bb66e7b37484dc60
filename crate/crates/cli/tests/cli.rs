use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ftdr_core::fieldgrid::{read_fieldgrid, sidecar_path};

const GYRE: &str = r#"
[system]
name = "double_gyre"
params = { A = 1.0, epsilon = 0.25, omega = 2.0 }

[time]
tau = 2.0

[grid]
torus = [2.0, 1.0]
counts = [16, 8]

[sampling]
samples_per_axis = 3
master_seed = 5
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ftdr-lab"));
    c.env_remove("FTDRLAB_THREADS");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn field_writes_grid_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gyre.toml", GYRE);
    let out = dir.path().join("ftdr.fgrid");
    let o = run(&["field", "--config", &cfg, "--out", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = read_fieldgrid(&out).unwrap();
    assert_eq!(f.counts, vec![16, 8]);
    assert_eq!((f.t0, f.tau, f.seed), (0.0, 2.0, 5));
    assert_eq!(f.tag, "ftdr:kl");
    assert_eq!(f.nan_count(), 0);
    assert!(sidecar_path(&out).exists());
    assert_eq!(f.metadata["samples_per_box"], 9);
}

#[test]
fn thread_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = GYRE.replace("omega = 2.0 }", "omega = 2.0 }\nsigma = [0.05, 0.05]")
        + "realizations = 3\n";
    let cfg = write_config(dir.path(), "noisy.toml", &noisy);
    let o1 = run(&["field", "--config", &cfg, "--out", "one.fgrid", "--threads", "1"], dir.path());
    assert!(o1.status.success(), "{}", String::from_utf8_lossy(&o1.stderr));
    let o4 = bin()
        .args(["field", "--config", &cfg, "--out", "four.fgrid"])
        .env("FTDRLAB_THREADS", "4")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o4.status.success());
    let a = fs::read(dir.path().join("one.fgrid")).unwrap();
    let b = fs::read(dir.path().join("four.fgrid")).unwrap();
    assert_eq!(a, b);
    let meta = fs::read(dir.path().join("one.fgrid.meta.json")).unwrap();
    assert_eq!(meta, fs::read(dir.path().join("four.fgrid.meta.json")).unwrap());
}

#[test]
fn tau_and_seed_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gyre.toml", GYRE);
    let o = run(&["field", "--config", &cfg, "--out", "b.fgrid", "--tau", "-2", "--seed", "9"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = read_fieldgrid(&dir.path().join("b.fgrid")).unwrap();
    assert_eq!((f.tau, f.seed), (-2.0, 9));
    assert_eq!(f.metadata["direction"], "backward");
}

#[test]
fn compare_prints_rho_and_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gyre.toml", GYRE);
    let ftle = write_config(
        dir.path(),
        "ftle.toml",
        &(GYRE.to_string() + "[diagnostic]\nkind = \"ftle_max\"\n"),
    );
    assert!(run(&["field", "--config", &cfg, "--out", "a.fgrid"], dir.path()).status.success());
    assert!(run(&["field", "--config", &ftle, "--out", "b.fgrid"], dir.path()).status.success());
    let o = run(&["compare", "a.fgrid", "a.fgrid"], dir.path());
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "rho 1.000000 boxes 128");
    let o = run(&["compare", "a.fgrid", "b.fgrid"], dir.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("rho ") && text.trim_end().ends_with("boxes 128"), "{text}");
}

#[test]
fn row_dumps_csv_that_sums_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gyre.toml", GYRE);
    let o = run(&["row", "--config", &cfg, "--box", "37"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("dx_bin,dy_bin,count,probability"));
    let total: u64 = lines.map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 9);
    let o = run(&["row", "--config", &cfg, "--box", "128"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("unknown_key.toml", GYRE.replace("master_seed = 5", "master_seed = 5\nsamples = 3")),
        ("even_samples.toml", GYRE.replace("samples_per_axis = 3", "samples_per_axis = 4")),
        ("bad_system.toml", GYRE.replace("double_gyre", "lorenz63")),
        ("syntax.toml", GYRE.replace("tau = 2.0", "tau = ")),
    ] {
        let cfg = write_config(dir.path(), name, &text);
        let o = run(&["field", "--config", &cfg, "--out", "x.fgrid"], dir.path());
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(!dir.path().join("x.fgrid").exists(), "{name}");
        assert!(!o.stderr.is_empty());
    }
    let cfg = write_config(dir.path(), "k.toml", &GYRE.replace("master_seed = 5", "master_seed = 5\nsamples = 3"));
    let o = run(&["field", "--config", &cfg], dir.path());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("samples") && err.contains("line"), "{err}");
    assert_eq!(run(&["field"], dir.path()).status.code(), Some(2));
}

#[test]
fn compare_rejects_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.fgrid"), "FGRID 2\n").unwrap();
    let o = run(&["compare", "bad.fgrid", "bad.fgrid"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_table_all_ok() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["oracle"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(!text.contains("MISMATCH"));
    assert!(text.lines().count() > 10);
}

#[test]
fn validate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate", "--out", "reports"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n = fs::read_dir(dir.path().join("reports")).unwrap().count();
    assert!(n >= 20);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("ftle_lower"));
}
