//! Runs the `gbcc` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gbcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbcc")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", s(dir), "--per-cluster", "20"];
    args.extend_from_slice(extra);
    let out = gbcc(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: &[&str] = &["--hidden", "16", "--dim", "4", "--batch-size", "30", "--lr", "0.001"];

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let out = dir.path().join("out");

    let bad_tau = gbcc(&["train", "--data", s(&data), "--out", s(&out), "--tau", "2"]);
    assert_eq!(code(&bad_tau), 2);
    assert!(String::from_utf8_lossy(&bad_tau.stderr).contains("tau"));

    assert_eq!(code(&gbcc(&["train", "--out", s(&out)])), 2);
    assert_eq!(code(&gbcc(&["train", "--data", s(&dir.path().join("missing")), "--out", s(&out)])), 3);

    fs::write(data.join("view1.csv"), "a\n1\nnan\n").unwrap();
    let manifest = fs::read_to_string(data.join("manifest.toml")).unwrap().replace("view1.gbmv", "view1.csv");
    let broken = dir.path().join("broken.toml");
    fs::write(&broken, manifest.replace("\"view", &format!("\"{}/view", s(&data)))).unwrap();
    let nan = gbcc(&["train", "--data", s(&broken), "--out", s(&out)]);
    assert_eq!(code(&nan), 3);
    assert!(String::from_utf8_lossy(&nan.stderr).contains("row 1, column 0"));

    let mut diverge = vec!["train", "--data", s(&data), "--out", s(&out), "--epochs", "3"];
    diverge.extend_from_slice(&SMALL[..6]);
    diverge.extend_from_slice(&["--lr", "1e300"]);
    let diverged = gbcc(&diverge);
    assert_eq!(code(&diverged), 4, "{}", String::from_utf8_lossy(&diverged.stderr));
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("non-finite loss"));
}

#[test]
fn commands_chain_and_repeat_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &["--format", "csv"]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--epochs", "3", "--seed", "4"];
        args.extend_from_slice(SMALL);
        let o = gbcc(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["loss.csv", "metrics.json", "metrics.txt", "predicted_labels.txt", "checkpoint.gbck"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("loss.csv")).unwrap().lines().count(), 4);

    let ckpt = a.join("checkpoint.gbck");
    let eval = dir.path().join("eval");
    assert!(gbcc(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&eval)]).status.success());
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(eval.join("metrics.json")).unwrap());

    let resumed = dir.path().join("resumed");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&resumed), "--epochs", "5", "--resume", s(&ckpt)];
    args.extend_from_slice(SMALL);
    assert!(gbcc(&args).status.success());
    let log = fs::read_to_string(resumed.join("loss.csv")).unwrap();
    let epochs: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["4", "5"]);

    let emb = dir.path().join("emb");
    let out = gbcc(&["export-embeddings", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&emb)]);
    assert!(out.status.success());
    for f in ["view0.gbmv", "view1.gbmv", "fused.gbmv", "embeddings.toml"] {
        assert!(emb.join(f).exists(), "{f}");
    }

    let sweep = dir.path().join("sweep");
    let mut args = vec!["sweep", "--data", s(&data), "--out", s(&sweep), "--epochs", "1", "--p-grid", "1,2", "--d-grid", "2,3"];
    args.extend_from_slice(&SMALL[..2]);
    let out = gbcc(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "p,d,acc,nmi,pur");
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn default_config_loss_trends_down() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let o = gbcc(&["synth", "--out", s(&data)]);
    assert!(o.status.success());
    let o = gbcc(&["train", "--data", s(&data), "--out", s(&out), "--epochs", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let totals: Vec<f64> = fs::read_to_string(out.join("loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 20);
    assert!(totals[19] < totals[0], "{totals:?}");
}
