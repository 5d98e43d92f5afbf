use std::path::Path;
use std::process::{Command, Output};

use fraclab_cli::manifest::sha256_hex;
use fraclab_cli::{
    export, resolve_config, run_config, ConfigError, Experiment, ExperimentConfig, ExportError, ExportFormat, Manifest,
    RunOptions, MANIFEST_FILE,
};
use fraclab_core::io::{field_csv_header, field_from_csv, load_field};

fn fraclab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fraclab")).args(args).env("FRACLAB_OUT", out).output().expect("binary runs")
}

fn opts(dir: &Path, threads: usize) -> RunOptions {
    RunOptions { threads: Some(threads), seed: None, out_dir: Some(dir.to_path_buf()) }
}

#[test]
fn unknown_experiment_exits_2_and_lists_names() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fraclab(&["run", "tomography"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for e in Experiment::ALL {
        assert!(err.contains(e.name()), "{err}");
    }
    assert!(err.contains("cli::ConfigError"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(fraclab(&["launch"], tmp.path()).status.code(), Some(2));
    assert_eq!(fraclab(&["run", "poincare", "--threads", "many"], tmp.path()).status.code(), Some(2));
    let missing = tmp.path().join("nope.ini");
    let out = fraclab(&["run", "poincare", "--config", missing.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_configs_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.ini");
    let text = ExperimentConfig::default_for(Experiment::UcpScan).canonical().replace("ball(0; 1)", "ball(0; 9)");
    std::fs::write(&path, text).unwrap();
    let out = fraclab(&["run", "ucp-scan", "--config", path.to_str().unwrap()], &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("o").join(MANIFEST_FILE).exists());

    std::fs::write(&path, ExperimentConfig::default_for(Experiment::Runge).canonical()).unwrap();
    assert!(matches!(resolve_config("poincare", Some(&path)), Err(ConfigError::WrongExperiment { .. })));
    let out = fraclab(&["run", "poincare", "--config", path.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_1_with_module_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.ini");
    let text = ExperimentConfig::default_for(Experiment::SchrodingerDn).canonical().replace("s = 1.5", "s = 0.0");
    std::fs::write(&path, text).unwrap();
    let out = fraclab(&["run", "schrodinger-dn", "--config", path.to_str().unwrap()], &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spectral_core::ExponentOutOfRange"));

    let empty =
        ExperimentConfig::default_for(Experiment::SchrodingerDn).canonical().replace("q_hi = 2.0", "q_hi = 0.0");
    std::fs::write(&path, empty).unwrap();
    let out = fraclab(&["run", "schrodinger-dn", "--config", path.to_str().unwrap()], &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn poincare_default_run_has_no_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fraclab(&["run", "poincare"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("s,t,constant_kind,constant,max_ratio,violations\n"));
    assert!(summary.lines().skip(1).all(|l| l.ends_with(",0")), "{summary}");
    let m = Manifest::load(&tmp.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.status, "passed");
    assert_eq!(m.experiment, "poincare");
    assert_eq!(m.seed, 42);
    for a in &m.artifacts {
        let bytes = std::fs::read(tmp.path().join(&a.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), a.sha256);
        assert_eq!(bytes.len() as u64, a.bytes);
    }
}

#[test]
fn same_seed_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default_for(Experiment::UcpScan);
    let a = run_config(&cfg, &opts(&tmp.path().join("a"), 1)).unwrap();
    let b = run_config(&cfg, &opts(&tmp.path().join("b"), 1)).unwrap();
    assert!(a.manifest.digest_mismatches(&b.manifest).is_empty());
    assert_eq!(a.manifest.config_sha256, b.manifest.config_sha256);
    assert_eq!(a.manifest.metrics, b.manifest.metrics);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    for e in [Experiment::MagneticGauge, Experiment::Alessandrini, Experiment::UcpScan] {
        let cfg = ExperimentConfig::default_for(e);
        let one = run_config(&cfg, &opts(&tmp.path().join(format!("{e}1")), 1)).unwrap();
        let four = run_config(&cfg, &opts(&tmp.path().join(format!("{e}4")), 4)).unwrap();
        assert!(one.manifest.digest_mismatches(&four.manifest).is_empty(), "{e}");
        assert_eq!(four.manifest.threads, 4);
    }
}

#[test]
fn seed_override_changes_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default_for(Experiment::Alessandrini);
    let base = run_config(&cfg, &opts(&tmp.path().join("a"), 1)).unwrap();
    let o = RunOptions { seed: Some(101), ..opts(&tmp.path().join("b"), 1) };
    let other = run_config(&cfg, &o).unwrap();
    assert_eq!(other.manifest.seed, 101);
    assert_ne!(base.manifest.config_sha256, other.manifest.config_sha256);
    assert!(!base.manifest.digest_mismatches(&other.manifest).is_empty());
}

#[test]
fn field_export_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fraclab(&["run", "ucp-scan"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let raw = tmp.path().join("witness_integer.f64");
    let (field, _) = load_field(&raw).unwrap();

    let csv = export(&raw, ExportFormat::Csv, None).unwrap();
    assert_eq!(csv, tmp.path().join("witness_integer.csv"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), field_csv_header(1));
    assert_eq!(text.lines().next().unwrap(), "index,x,value");
    let back = field_from_csv(*field.grid(), &text).unwrap();
    assert_eq!(back.values(), field.values());

    let copy = tmp.path().join("copy.f64");
    export(&raw, ExportFormat::Raw, Some(&copy)).unwrap();
    let m = Manifest::load(&tmp.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(sha256_hex(&std::fs::read(&copy).unwrap()), m.digests()["witness_integer.f64"]);
}

#[test]
fn sinogram_export_uses_its_own_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let g = fraclab_core::Grid::new(2, 32, 1.0).unwrap();
    let geom = fraclab_core::dplane::PlaneGeometry::new(g, 1, 8).unwrap();
    let f = fraclab_core::make_bump(&g, &[0.1, 0.0], 0.4, 1.0).unwrap();
    let sino = fraclab_core::dplane::forward_dplane(&f, &geom).unwrap();
    let raw = tmp.path().join("sino.f64");
    sino.save(&raw).unwrap();
    let out = fraclab(&["export", raw.to_str().unwrap(), "--format", "csv"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(tmp.path().join("sino.csv")).unwrap();
    assert_eq!(text, sino.to_csv());
    assert!(text.starts_with("direction_id,offset,value\n"));
    let copy = tmp.path().join("again.f64");
    export(&raw, ExportFormat::Raw, Some(&copy)).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(&raw).unwrap());
}

#[test]
fn export_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.f64");
    assert!(matches!(export(&missing, ExportFormat::Csv, None), Err(ExportError::NotFound(_))));
    assert!(matches!("png".parse::<ExportFormat>(), Err(ExportError::UnsupportedFormat(_))));
    let out = fraclab(&["export", missing.to_str().unwrap(), "--format", "csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cli::NotFound"));
    std::fs::write(tmp.path().join("x.f64"), [0u8; 16]).unwrap();
    let out = fraclab(&["export", tmp.path().join("x.f64").to_str().unwrap(), "--format", "png"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cli::UnsupportedFormat"));
}
