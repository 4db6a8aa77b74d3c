mod common;

use pdc::checkpoint::{checkpoint_name, Checkpoint, CheckpointConfig};
use pdc::config::{parse_assignment, resolve, set_path};
use pdc::dataset::{generate_dataset, DatasetDir, Manifest, MANIFEST_FILE};
use pdc::Failure;
use pdc_core::trainer::{TrainConfig, Variant};
use pdc_core::volnet::{build_network, NetworkConfig};
use serde_json::json;

fn sample_checkpoint() -> Checkpoint {
    let network = NetworkConfig { encoder_channels: vec![2, 4], seed: 3, ..NetworkConfig::default() };
    let params = build_network::<f32>(&network).unwrap();
    let cfg = CheckpointConfig { network, train: Some(TrainConfig::default()), labeled: vec!["a".into(), "b".into()] };
    Checkpoint::new(17, &cfg, params)
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let ck = sample_checkpoint();
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(checkpoint_name(17));
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    loaded.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(loaded.config().unwrap().labeled, vec!["a", "b"]);
    assert_eq!(loaded.config_hash(), ck.config_hash());
    assert_eq!(ck.config_hash().len(), 64);
}

#[test]
fn corrupt_checkpoints_are_data_errors() {
    let bytes = sample_checkpoint().to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let truncated = &bytes[..bytes.len() - 3];
    let mut trailing = bytes.clone();
    trailing.push(0);
    for buf in [&bad_magic[..], truncated, &trailing[..]] {
        assert!(matches!(Checkpoint::from_bytes(buf), Err(Failure::Data(_))));
    }
}

#[test]
fn checkpoint_must_match_its_network_config() {
    let mut ck = sample_checkpoint();
    let mut cfg: CheckpointConfig = ck.config().unwrap();
    cfg.network.encoder_channels = vec![2, 8];
    ck.config_json = cfg.to_json();
    assert!(matches!(Checkpoint::from_bytes(&ck.to_bytes()), Err(Failure::Data(_))));
}

#[test]
fn generated_manifest_is_deterministic_and_valid() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = common::tiny_dataset(a.path());
    let mb = common::tiny_dataset(b.path());
    assert_eq!(ma, mb);
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), MANIFEST_FILE), read(b.path(), MANIFEST_FILE));
    for s in &ma.samples {
        assert_eq!(read(a.path(), &s.intensity), read(b.path(), &s.intensity));
    }
    assert_eq!(ma.splits.test.len(), 2);
    assert_eq!(ma.splits.train_labeled.len() + ma.splits.train_unlabeled.len(), 8);
    assert_eq!(Manifest::load(&a.path().join(MANIFEST_FILE)).unwrap(), ma);

    let data = DatasetDir::open(a.path()).unwrap();
    let v = data.read(&ma.splits.test[0], true).unwrap();
    assert_eq!(v.dims(), [16; 3]);
    assert!(data.read(&ma.splits.test[0], false).unwrap().label.is_none());
    let (l, u) = data.training_split(Some(0.25), 1).unwrap();
    assert_eq!((l.len(), u.len()), (2, 6));
}

#[test]
fn invalid_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::tiny_dataset(dir.path());
    let mut dup = m.clone();
    dup.splits.test.push(dup.splits.train_labeled[0].clone());
    let mut unknown = m.clone();
    unknown.splits.test.push("nope".into());
    let mut unlabeled_test = m.clone();
    let id = unlabeled_test.splits.test[0].clone();
    unlabeled_test.samples.iter_mut().find(|s| s.id == id).unwrap().label = None;
    let mut version = m.clone();
    version.version = 99;
    for bad in [dup, unknown, unlabeled_test, version] {
        assert!(matches!(bad.validate(), Err(Failure::Data(_))));
    }

    std::fs::write(dir.path().join(&m.samples[0].intensity), [0u8; 7]).unwrap();
    let data = DatasetDir::open(dir.path()).unwrap();
    assert!(matches!(data.read(&m.samples[0].id, false), Err(Failure::Data(_))));
}

#[test]
fn generate_rejects_degenerate_configs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_generate(0);
    cfg.synthetic.shape = [8; 3];
    assert!(matches!(generate_dataset(&cfg, dir.path()), Err(Failure::Config(_))));
    let mut cfg = common::tiny_generate(0);
    cfg.train_fraction = 1.0;
    assert!(matches!(generate_dataset(&cfg, dir.path()), Err(Failure::Config(_))));
}

#[test]
fn config_layers_defaults_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("train.json");
    std::fs::write(&file, r#"{"variant": "vnet_ec", "momentum": 0.5, "network": {"seed": 9}}"#).unwrap();
    let overrides = vec![parse_assignment("momentum=0.8").unwrap(), ("crop".to_string(), json!([16, 16, 16]))];
    let cfg: TrainConfig = resolve(Some(&file), &overrides).unwrap();
    assert_eq!(cfg.variant, Variant::VnetEc);
    assert_eq!(cfg.momentum, 0.8);
    assert_eq!(cfg.network.seed, 9);
    assert_eq!(cfg.crop, [16; 3]);
    assert_eq!(cfg.base_lr, TrainConfig::default().base_lr);

    let unknown = vec![("network.depth".to_string(), json!(3))];
    assert!(matches!(resolve::<TrainConfig>(None, &unknown), Err(Failure::Config(_))));
    let wrong_type = vec![("momentum".to_string(), json!("fast"))];
    assert!(matches!(resolve::<TrainConfig>(None, &wrong_type), Err(Failure::Config(_))));
    std::fs::write(&file, "[1, 2]").unwrap();
    assert!(matches!(resolve::<TrainConfig>(Some(&file), &[]), Err(Failure::Config(_))));
}

#[test]
fn assignments_parse_json_or_fall_back_to_strings() {
    assert_eq!(parse_assignment("a.b=3").unwrap(), ("a.b".into(), json!(3)));
    assert_eq!(parse_assignment("v=pdc").unwrap(), ("v".into(), json!("pdc")));
    assert_eq!(parse_assignment("x=[1,2]").unwrap(), ("x".into(), json!([1, 2])));
    assert!(parse_assignment("novalue").is_err());
    let mut root = json!({"a": {"b": 1, "c": 2}});
    set_path(&mut root, "a.b", json!(5)).unwrap();
    assert_eq!(root, json!({"a": {"b": 5, "c": 2}}));
}
