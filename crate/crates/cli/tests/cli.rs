mod common;

use std::fs;

use common::{civrec, p, rating_log};
use tempfile::tempdir;

const SMALL: [&str; 8] = [
    "--set",
    "synthetic.users=40",
    "--set",
    "synthetic.items=30",
    "--set",
    "synthetic.positives_per_user=10",
    "--set",
    "backbone.dim=8",
];

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prepare_is_byte_identical_across_runs() {
    let dir = tempdir().unwrap();
    let log = dir.path().join("ratings.csv");
    fs::write(&log, rating_log()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = civrec(&["prepare", "--input", p(&log), "--output", p(out), "--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let line = String::from_utf8(o.stdout).unwrap();
        assert!(line.starts_with("users=36 items=25 interactions="), "{line}");
    }
    for name in ["meta.txt", "train.txt", "valid.txt", "test.txt", "users.txt", "items.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn missing_data_leaves_no_checkpoint() {
    let dir = tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let o = civrec(&["train", "--data", p(&dir.path().join("nope")), "--out-checkpoint", p(&ckpt)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope"), "{}", stderr(&o));
    assert!(!ckpt.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "train.lr=0.01\ntrain.learnig_rate=0.1\n").unwrap();
    let o = civrec(&["prepare", "--synthetic", "--output", p(&dir.path().join("d")), "--config", p(&cfg)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train.learnig_rate"), "{}", stderr(&o));
    let o = civrec(&["prepare", "--synthetic", "--output", p(&dir.path().join("d")), "--set", "csem.width=3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("csem.width"));
}

#[test]
fn checkpoint_for_other_data_names_both_shapes() {
    let dir = tempdir().unwrap();
    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    let ckpt = dir.path().join("m.ckpt");
    let mut args = vec!["prepare", "--synthetic", "--output", p(&d1)];
    args.extend(SMALL);
    assert!(civrec(&args).status.success());
    let mut args = vec!["prepare", "--synthetic", "--output", p(&d2), "--set", "synthetic.users=45"];
    args.extend(&SMALL[2..]);
    assert!(civrec(&args).status.success());

    let mut args = vec!["train", "--data", p(&d1), "--out-checkpoint", p(&ckpt), "--epochs", "1"];
    args.extend(SMALL);
    let o = civrec(&args);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = civrec(&["eval", "--checkpoint", p(&ckpt), "--data", p(&d2), "--k", "5"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("40 users") && e.contains("45 users") && e.contains("dim 8"), "{e}");
}

#[test]
fn train_then_eval_end_to_end() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = vec!["prepare", "--synthetic", "--output", p(&data)];
    args.extend(SMALL);
    assert!(civrec(&args).status.success());

    let ckpt = dir.path().join("m.ckpt");
    let mut args = vec!["train", "--data", p(&data), "--out-checkpoint", p(&ckpt), "--variant", "causal", "--epochs", "2"];
    args.extend(SMALL);
    let o = civrec(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(ckpt.with_extension("log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,l_civ,l_click,l_total,seconds\n1,"));

    let report = dir.path().join("r.csv");
    let o = civrec(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--k", "5,10", "--report", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,variant,K,recall,hr,ndcg,iou");
    assert!(lines[1].starts_with("mf,causal,5,"));
    assert!(lines[2].starts_with("mf,causal,10,"));
}

#[test]
fn ablate_prints_all_four_variants() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = vec!["prepare", "--synthetic", "--output", p(&data)];
    args.extend(SMALL);
    assert!(civrec(&args).status.success());
    let report = dir.path().join("ablate.csv");
    let mut args = vec!["ablate", "--data", p(&data), "--seeds", "2", "--k", "5", "--report", p(&report), "--set", "train.epochs=1"];
    args.extend(SMALL);
    let o = civrec(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&report).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(variants, ["full", "causal", "con", "original"]);
}

#[test]
fn bad_flag_values_fail_cleanly() {
    let o = civrec(&["eval", "--checkpoint", "x", "--data", "y", "--k", "20,abc"]);
    assert!(!o.status.success());
    let o = civrec(&["train", "--data", "x", "--out-checkpoint", "y", "--variant", "bogus"]);
    assert!(!o.status.success());
}
