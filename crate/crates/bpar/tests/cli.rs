use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bpar::json::{read_dendrogram, read_fit};
use bpar::newick::{parse_newick, write_newick};

fn bpar(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpar"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BPAR_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = bpar(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// synth → fit → distances → embed → cluster → predict in `out`.
fn pipeline(out: &Path) {
    let data = out.join("data");
    let data = data.to_str().unwrap();
    ok(out, &["synth", "--seed", "5", "--series", "10", "--length", "150"]);
    ok(out, &["fit", "--seed", "5", "--data", data, "--sweeps", "20", "--burn-in", "10"]);
    ok(out, &["distances", "--seed", "5"]);
    ok(out, &["embed", "--seed", "5", "--k", "3"]);
    ok(out, &["cluster", "--seed", "5", "--data", data, "--min-size", "1"]);
    ok(out, &["predict", "--seed", "5", "--data", data]);
    ok(out, &["score-recovery", "--seed", "5"]);
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let fa = files(a.path());
    let fb = files(b.path());
    let rel = |v: &[PathBuf], root: &Path| v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
    assert_eq!(rel(&fa, a.path()), rel(&fb, b.path()));
    for (x, y) in fa.iter().zip(&fb) {
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }
    let table = fs::read_to_string(a.path().join("predictions.csv")).unwrap();
    assert!(table.starts_with("construct,HMM-S_rho,HMM-S_rmse,HMM-SL_rho,HMM-SL_rmse,HMM-SV_rho,HMM-SV_rmse\n"));
    assert!(table.lines().any(|l| l.starts_with("planted,")));
}

#[test]
fn fit_output_parses_with_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--seed", "2", "--series", "6", "--length", "80"]);
    let data = out.join("data");
    ok(out, &["fit", "--seed", "2", "--data", data.to_str().unwrap(), "--sweeps", "5"]);
    let fit = read_fit(&out.join("fit.json")).unwrap();
    assert_eq!(fit.num_series(), 6);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 6);
}

#[test]
fn threads_do_not_change_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--seed", "4", "--series", "6", "--length", "80"]);
    let data = out.join("data");
    let data = data.to_str().unwrap();
    ok(out, &["fit", "--seed", "4", "--data", data, "--sweeps", "8", "--threads", "1"]);
    let one = fs::read(out.join("fit.json")).unwrap();
    ok(out, &["fit", "--seed", "4", "--data", data, "--sweeps", "8", "--threads", "3"]);
    assert!(one == fs::read(out.join("fit.json")).unwrap());
}

#[test]
fn newick_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--seed", "3", "--series", "8", "--length", "100"]);
    let data = out.join("data");
    ok(out, &["fit", "--seed", "3", "--data", data.to_str().unwrap(), "--sweeps", "5"]);
    ok(out, &["distances", "--seed", "3"]);
    ok(out, &["cluster", "--seed", "3"]);
    for m in ["likelihood", "viterbi"] {
        let text = fs::read_to_string(out.join(format!("dendrogram_{m}.nwk"))).unwrap();
        let tree = parse_newick(text.trim_end()).unwrap();
        assert_eq!(tree.to_string(), text.trim_end());
        let dend = read_dendrogram(&out.join(format!("dendrogram_{m}.json"))).unwrap();
        assert_eq!(write_newick(&dend), text.trim_end());
        let mut leaves: Vec<&str> = tree.leaves();
        leaves.sort();
        assert_eq!(leaves, dend.ids.iter().map(String::as_str).collect::<Vec<_>>());
        let root = dend.merges.last().unwrap().height;
        assert!((tree.depth() - root).abs() <= 1e-9 * root.max(1.0));
    }
}

#[test]
fn missing_data_dir_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-data");
    let o = bpar(dir.path(), &["fit", "--seed", "1", "--data", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-data"));
}

#[test]
fn embed_with_k_above_n_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--seed", "1", "--series", "5", "--length", "60"]);
    let data = out.join("data");
    ok(out, &["fit", "--seed", "1", "--data", data.to_str().unwrap(), "--sweeps", "3"]);
    ok(out, &["distances", "--seed", "1"]);
    let o = bpar(out, &["embed", "--seed", "1", "--k", "6"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K = 6"));
}

#[test]
fn seed_is_required_and_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bpar(dir.path(), &["synth"]).status.code(), Some(2));
    assert_eq!(bpar(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn wrong_document_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("fit.json"), r#"{"format": 7, "type": "fit"}"#).unwrap();
    let o = bpar(dir.path(), &["distances", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("format version 7"));
}

#[test]
fn config_file_drives_the_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    fs::write(&cfg, "seed = 11\n[paths]\ndata = \"out/data\"\nout = \"out\"\n[model]\nsweeps = 4\nburn_in = 2\n").unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_bpar"))
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .env_remove("BPAR_OUT_DIR")
            .output()
            .unwrap()
    };
    assert!(run(&["synth", "--series", "4", "--length", "50"]).status.success());
    assert!(run(&["fit"]).status.success());
    let fit = read_fit(&root.join("out/fit.json")).unwrap();
    assert_eq!((fit.hyper.mcmc.sweeps, fit.hyper.mcmc.seed), (4, 11));
    assert!(run(&["fit", "--sweeps", "2"]).status.success());
    assert_eq!(read_fit(&root.join("out/fit.json")).unwrap().hyper.mcmc.sweeps, 2);
}

#[test]
fn out_dir_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bpar"))
        .args(["synth", "--seed", "1", "--series", "3", "--length", "40"])
        .env("BPAR_OUT_DIR", dir.path())
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("truth.json").is_file());
    assert!(dir.path().join("data/s000.csv").is_file());
}

#[test]
fn commands_leave_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--seed", "6", "--series", "6", "--length", "80"]);
    let data = out.join("data");
    let before: Vec<Vec<u8>> = files(&data).iter().map(|p| fs::read(p).unwrap()).collect();
    ok(out, &["fit", "--seed", "6", "--data", data.to_str().unwrap(), "--sweeps", "3"]);
    let fit_before = fs::read(out.join("fit.json")).unwrap();
    ok(out, &["prune", "--seed", "6", "--data", data.to_str().unwrap(), "--threshold", "0.5"]);
    ok(out, &["distances", "--seed", "6"]);
    assert!(fit_before == fs::read(out.join("fit.json")).unwrap());
    let after: Vec<Vec<u8>> = files(&data).iter().map(|p| fs::read(p).unwrap()).collect();
    assert!(before == after);
    assert!(read_fit(&out.join("pruned.json")).is_ok());
}
