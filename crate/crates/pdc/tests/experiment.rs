mod common;

use pdc::checkpoint::Checkpoint;
use pdc::experiment::{compare_report, compare_rows, read_results, run_experiment, ResultRow, RESULTS_CSV};
use pdc::run::LOG_FILE;
use pdc::Failure;
use pdc_core::trainer::LogRow;

fn row(variant: &str, fraction: f64, seed: u64, dice: f64) -> ResultRow {
    ResultRow {
        variant: variant.into(),
        fraction,
        n_labeled: 1,
        n_unlabeled: 1,
        seed,
        dice,
        jaccard: dice / (2.0 - dice),
        asd: None,
        hd95: None,
        cd: Some(0.0),
        qcd: Some(0.0),
        config_hash: String::new(),
        checkpoint: String::new(),
    }
}

#[test]
fn sweep_writes_deterministic_results() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec_a = common::tiny_spec(data.path(), a.path(), &["supervised_only", "pdc"]);
    let spec_b = common::tiny_spec(data.path(), b.path(), &["supervised_only", "pdc"]);
    let mut seen = 0;
    let rows = run_experiment(&spec_a, &mut |_| seen += 1).unwrap();
    run_experiment(&spec_b, &mut |_| {}).unwrap();
    assert_eq!(seen, 2);
    assert_eq!(rows.len(), 2);

    let csv_a = std::fs::read(a.path().join(RESULTS_CSV)).unwrap();
    assert_eq!(csv_a, std::fs::read(b.path().join(RESULTS_CSV)).unwrap());
    let header = String::from_utf8(csv_a.clone()).unwrap().lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "variant,fraction,n_labeled,n_unlabeled,seed,dice,jaccard,asd,hd95,cd,qcd,config_hash,checkpoint"
    );
    assert_eq!(read_results(&a.path().join(RESULTS_CSV)).unwrap(), rows);

    let sup = &rows[0];
    assert_eq!((sup.variant.as_str(), sup.n_labeled, sup.n_unlabeled), ("supervised_only", 4, 0));
    assert!(sup.cd.is_none() && sup.qcd.is_none());
    let pdc = &rows[1];
    assert_eq!((pdc.n_labeled, pdc.n_unlabeled), (4, 4));
    assert!(pdc.qcd.is_some());

    for r in &rows {
        let ck_a = std::fs::read(a.path().join(&r.checkpoint)).unwrap();
        assert_eq!(ck_a, std::fs::read(b.path().join(&r.checkpoint)).unwrap());
        assert_eq!(Checkpoint::from_bytes(&ck_a).unwrap().config_hash(), r.config_hash);
        let run_dir = a.path().join(&r.checkpoint);
        let log_path = run_dir.parent().unwrap().join(LOG_FILE);
        let log: Vec<LogRow> = csv::Reader::from_path(&log_path).unwrap().deserialize().map(|x| x.unwrap()).collect();
        assert_eq!(log.iter().map(|l| l.iter).collect::<Vec<_>>(), vec![0, 1, 2]);
        let log_text = std::fs::read_to_string(&log_path).unwrap();
        assert_eq!(log_text.lines().next().unwrap(), "iter,loss_s,loss_c,loss_pd,lambda_c,lambda_pd,lr,cd,qcd");
    }
    let table = std::fs::read_to_string(a.path().join("results.txt")).unwrap();
    assert!(table.starts_with("Method"));
}

#[test]
fn variant_overrides_and_bad_specs() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = common::tiny_spec(dir.path(), dir.path(), &["pdc", "vnet_gc"]);
    spec.overrides.entry("pdc".into()).or_default().insert("lambda_pd_scale".into(), serde_json::json!(0.5));
    let cells = spec.cells().unwrap();
    assert_eq!(cells.len(), 2);
    assert_eq!(spec.cell_config(&cells[0]).unwrap().lambda_pd_scale, 0.5);
    assert_eq!(spec.cell_config(&cells[1]).unwrap().lambda_pd_scale, 0.1);
    spec.upper_bound = true;
    assert_eq!(spec.cells().unwrap().len(), 3);

    let mut bad = spec.clone();
    bad.variants.push("mean_teacher".into());
    let err = bad.cells().unwrap_err();
    assert!(matches!(&err, Failure::Config(m) if m.contains("pdc") && m.contains("vnet_ec")));
    let mut bad = spec.clone();
    bad.fractions = vec![0.0];
    assert!(matches!(bad.cells(), Err(Failure::Config(_))));
    let mut bad = spec;
    bad.overrides.insert("unet".into(), Default::default());
    assert!(matches!(bad.validate(), Err(Failure::Config(_))));
}

#[test]
fn identical_results_compare_to_zero() {
    let rows: Vec<ResultRow> =
        [0, 1, 2].iter().flat_map(|&s| [row("pdc", 0.2, s, 0.8), row("vnet_gc", 0.2, s, 0.8)]).collect();
    let d = compare_rows(&rows).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].seeds, vec![0, 1, 2]);
    assert!(d[0].deltas.iter().all(|&x| x == 0.0));
    assert_eq!((d[0].mean, d[0].min, d[0].max), (0.0, 0.0, 0.0));
}

#[test]
fn compare_reports_deltas_sorted_by_fraction() {
    let rows = vec![
        row("pdc", 0.3, 0, 0.9),
        row("vnet_gc", 0.3, 0, 0.85),
        row("supervised_only", 0.1, 0, 0.1),
        row("pdc", 0.1, 0, 0.7),
        row("vnet_gc", 0.1, 0, 0.75),
    ];
    let d = compare_rows(&rows).unwrap();
    assert_eq!(d.iter().map(|r| r.fraction).collect::<Vec<_>>(), vec![0.1, 0.3]);
    assert!((d[0].mean - -5.0).abs() < 1e-9);
    assert!((d[1].mean - 5.0).abs() < 1e-9);
}

#[test]
fn missing_cells_are_named() {
    let rows = vec![row("pdc", 0.2, 0, 0.8), row("vnet_gc", 0.2, 0, 0.8), row("pdc", 0.2, 1, 0.8)];
    let err = compare_rows(&rows).unwrap_err();
    assert!(matches!(&err, Failure::Data(m) if m.contains("vnet_gc at fraction 0.2 seed 1")));
    let dup = vec![row("pdc", 0.2, 0, 0.8), row("pdc", 0.2, 0, 0.8)];
    assert!(matches!(compare_rows(&dup), Err(Failure::Data(_))));
    assert!(matches!(compare_rows(&[row("supervised_only", 0.2, 0, 0.5)]), Err(Failure::Data(_))));
}

#[test]
fn compare_report_merges_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pdc::experiment::write_results(&a, &[row("pdc", 0.2, 0, 0.9)]).unwrap();
    pdc::experiment::write_results(&b, &[row("vnet_gc", 0.2, 0, 0.8)]).unwrap();
    let (d, text) = compare_report(&[a.join(RESULTS_CSV), b.join(RESULTS_CSV)]).unwrap();
    assert!((d[0].mean - 10.0).abs() < 1e-9);
    assert!(text.contains("+10.00"));
    assert!(matches!(compare_report(&[dir.path().join("none.csv")]), Err(Failure::Data(_))));
}
