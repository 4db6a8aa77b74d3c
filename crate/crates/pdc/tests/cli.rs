use std::path::Path;
use std::process::{Command, Output};

fn pdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = pdc(&["generate-data", "--n", "10", "--shape", "16", "--seed", "1", "--labeled-fraction", "0.5", "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").is_file());

    let cfg = dir.path().join("train.json");
    std::fs::write(&cfg, r#"{"train": {"network": {"encoder_channels": [2, 4]}, "checkpoint_every": 2}}"#).unwrap();
    let run = dir.path().join("run");
    let out = pdc(&[
        "train", "--config", s(&cfg), "--manifest", s(&data), "--out", s(&run), "--variant", "pdc", "--iterations", "4",
        "--crop", "8", "--seed", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["log.csv", "ckpt_2.bin", "ckpt_4.bin", "config.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let resolved: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["variant"], "pdc");
    assert_eq!(resolved["train"]["seed"], 2);

    let report = dir.path().join("report.json");
    let ckpt = run.join("ckpt_4.bin");
    let out = pdc(&[
        "evaluate", "--checkpoint", s(&ckpt), "--manifest", s(&data), "--window", "16", "--stride", "16", "--out", s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(record["n_cases"], 2);
    assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);
    assert!(report.is_file());

    let spec = dir.path().join("ablate.json");
    std::fs::write(
        &spec,
        r#"{"train": {"network": {"encoder_channels": [2]}, "crop": [8, 8, 8]},
            "eval": {"window": [16, 16, 16], "stride": [16, 16, 16]}, "upper_bound": false}"#,
    )
    .unwrap();
    let sweep = dir.path().join("sweep");
    let out = pdc(&[
        "ablate", "--config", s(&spec), "--manifest", s(&data), "--out", s(&sweep), "--variants", "vnet_gc,pdc",
        "--fractions", "0.5", "--seeds", "0", "--iterations", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("Method"));

    let csv = sweep.join("results.csv");
    let out = pdc(&["report", s(&csv), "--out", s(&dir.path().join("delta.txt"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Delta Dice"));
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pdc(&["--help"])), 0);
    assert_eq!(code(&pdc(&["frobnicate"])), 1);
    assert_eq!(code(&pdc(&["train", "--variant", "mean_teacher", "--manifest", s(dir.path())])), 1);
    assert_eq!(code(&pdc(&["train", "--set", "train.no_such_key=1"])), 1);
    // A directory without a manifest is a data error.
    assert_eq!(code(&pdc(&["train", "--manifest", s(dir.path()), "--out", s(&dir.path().join("r"))])), 2);
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"junk").unwrap();
    assert_eq!(code(&pdc(&["evaluate", "--checkpoint", s(&junk), "--manifest", s(dir.path())])), 2);
    // Output directory that cannot be created.
    let data = dir.path().join("data");
    assert_eq!(code(&pdc(&["generate-data", "--n", "4", "--shape", "16", "--out", s(&data)])), 0);
    let out = pdc(&[
        "train", "--manifest", s(&data), "--out", s(&junk.join("sub")), "--iterations", "1", "--crop", "8",
        "--set", "train.network.encoder_channels=[2]", "--set", "train.variant=supervised_only", "--set", "train.batch_size=1",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
