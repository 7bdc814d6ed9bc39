use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[model]\nlatent_dim = 3\nhidden = 6\nwidth = 12\nembed_width = 6\nframes = 20\n[train]\niterations = 6\nbatch = 4\n";
const BYTES: &str = "[model]\nlatent_dim = 3\nhidden = 6\nwidth = 12\nembed_width = 6\nframes = 20\nobs = \"logistic\"\nmixture = 2\n[train]\niterations = 6\nbatch = 4\n";

fn ctsq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsq")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    ctsq(args).status.code().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn trained(dir: &Path, config: &str, gen_extra: &[&str]) -> (String, String, String) {
    let cfg = path(dir, "cfg.toml");
    std::fs::write(&cfg, config).unwrap();
    let (data, model) = (path(dir, "data.csv"), path(dir, "m.ckpt"));
    let mut gen = vec!["gen", "--config", &cfg, "--n", "4", "--out", &data];
    gen.extend_from_slice(gen_extra);
    assert_eq!(code(&gen), 0);
    assert_eq!(code(&["train", "--config", &cfg, "--data", &data, "--out", &model]), 0);
    (cfg, data, model)
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["compress", "--bogus"]), 1);
    assert_eq!(code(&["gen", "--kind", "spiral", "--out", "/dev/null"]), 1);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "bad.toml");
    std::fs::write(&cfg, "[model]\nlatent_dims = 3\n").unwrap();
    let out = ctsq(&["gen", "--config", &cfg, "--out", &path(dir.path(), "x.csv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("latent_dims"));
}

#[test]
fn damaged_and_foreign_containers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, data, model) = trained(d, SMALL, &[]);
    let packed = path(d, "x.ctsq");
    assert_eq!(code(&["compress", "--config", &cfg, "--model", &model, "--data", &data, "--out", &packed]), 0);

    let mut bytes = std::fs::read(&packed).unwrap();
    bytes.truncate(bytes.len() - 3);
    let cut = path(d, "cut.ctsq");
    std::fs::write(&cut, &bytes).unwrap();
    assert_eq!(code(&["decompress", "--model", &model, "--input", &cut, "--out", &path(d, "y.csv")]), 2);

    let other = path(d, "other.ckpt");
    assert_eq!(code(&["train", "--config", &cfg, "--data", &data, "--seed", "99", "--out", &other]), 0);
    assert_eq!(code(&["decompress", "--model", &other, "--input", &packed, "--out", &path(d, "y.csv")]), 3);
    assert_eq!(code(&["decompress", "--model", &model, "--input", &path(d, "missing.ctsq"), "--out", &path(d, "y.csv")]), 2);
}

#[test]
fn lossless_round_trip_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, data, model) = trained(d, BYTES, &["--bytes"]);
    let (packed, out) = (path(d, "x.ctsq"), path(d, "y.csv"));
    let report = path(d, "bits.csv");
    assert_eq!(code(&["compress", "--config", &cfg, "--model", &model, "--data", &data, "--mode", "lossless", "--report", &report, "--out", &packed]), 0);
    assert_eq!(code(&["decompress", "--model", &model, "--input", &packed, "--out", &out]), 0);
    let read = |p: &str| -> Vec<Vec<f64>> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(p).unwrap();
        r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect()
    };
    assert_eq!(read(&data), read(&out));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 5);
}
