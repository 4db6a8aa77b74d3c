//! Variant × labeled-fraction × seed sweeps and their result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pdc_core::metrics::EvalConfig;
use pdc_core::trainer::{TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::set_path;
use crate::dataset::DatasetDir;
use crate::error::{Failure, Result};
use crate::run::{evaluate_on_test, train_to_dir, write_record, RunRecord, REPORT_FILE};

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_TABLE: &str = "results.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    pub manifest: PathBuf,
    pub variants: Vec<String>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Base training configuration shared by every cell.
    pub train: TrainConfig,
    /// Per-variant key/value overrides applied on top of `train`.
    pub overrides: BTreeMap<String, BTreeMap<String, Value>>,
    pub eval: EvalConfig,
    /// Adds `supervised_only` trained on the whole training pool.
    pub upper_bound: bool,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "ablation".into(),
            manifest: PathBuf::from("data"),
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            fractions: vec![0.1, 0.2, 0.3],
            seeds: vec![0, 1, 2],
            train: TrainConfig::default(),
            overrides: BTreeMap::new(),
            eval: EvalConfig::default(),
            upper_bound: true,
            out: PathBuf::from("runs"),
        }
    }
}

fn valid_variants() -> String {
    Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
}

impl ExperimentSpec {
    pub fn parsed_variants(&self) -> Result<Vec<Variant>> {
        self.variants
            .iter()
            .map(|s| {
                Variant::parse(s)
                    .ok_or_else(|| Failure::Config(format!("unknown variant {s:?}; valid variants: {}", valid_variants())))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let variants = self.parsed_variants()?;
        if variants.is_empty() || self.seeds.is_empty() || self.fractions.is_empty() {
            return Err(Failure::Config("variants, fractions and seeds must be non-empty".into()));
        }
        if let Some(f) = self.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Failure::Config(format!("labeled fraction {f} is outside (0, 1]")));
        }
        for k in self.overrides.keys() {
            if Variant::parse(k).is_none() {
                return Err(Failure::Config(format!("overrides for unknown variant {k:?}; valid variants: {}", valid_variants())));
            }
        }
        Ok(())
    }

    /// Cells in run order: fractions, then seeds, then variants, then the
    /// optional upper bound per seed.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        self.validate()?;
        let variants = self.parsed_variants()?;
        let mut out = Vec::new();
        for &fraction in &self.fractions {
            for &seed in &self.seeds {
                for &variant in &variants {
                    out.push(Cell { variant, fraction, seed });
                }
            }
        }
        if self.upper_bound {
            for &seed in &self.seeds {
                out.push(Cell { variant: Variant::SupervisedOnly, fraction: 1.0, seed });
            }
        }
        Ok(out)
    }

    /// Training configuration of one cell: base, then the variant's overrides,
    /// with the cell's variant and seed.
    pub fn cell_config(&self, cell: &Cell) -> Result<TrainConfig> {
        let mut v = serde_json::to_value(&self.train).expect("config serializes");
        if let Some(over) = self.overrides.get(cell.variant.name()) {
            for (k, val) in over {
                set_path(&mut v, k, val.clone())?;
            }
        }
        let mut cfg: TrainConfig = serde_json::from_value(v).map_err(|e| Failure::Config(e.to_string()))?;
        cfg.variant = cell.variant;
        cfg.seed = cell.seed;
        cfg.network.seed = cell.seed;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub variant: Variant,
    pub fraction: f64,
    pub seed: u64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("{}_f{}_s{}", self.variant.name(), self.fraction, self.seed)
    }
}

/// One row of `results.csv`. Dice and Jaccard are fractions in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub fraction: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub seed: u64,
    pub dice: f64,
    pub jaccard: f64,
    pub asd: Option<f64>,
    pub hd95: Option<f64>,
    /// Only for dual-head semi-supervised variants.
    pub cd: Option<f64>,
    pub qcd: Option<f64>,
    pub config_hash: String,
    /// Relative to the experiment's output directory.
    pub checkpoint: String,
}

/// Trains and evaluates every cell, writing per-cell directories plus
/// `results.csv` and `results.txt` under `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec, progress: &mut dyn FnMut(&ResultRow)) -> Result<Vec<ResultRow>> {
    let cells = spec.cells()?;
    let data = DatasetDir::open(&spec.manifest)?;
    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        let cfg = spec.cell_config(cell)?;
        let (labeled, unlabeled) = data.training_split(Some(cell.fraction), cell.seed)?;
        let rel = PathBuf::from("runs").join(cell.dir_name());
        let dir = spec.out.join(&rel);
        let run = train_to_dir(&cfg, &data, &labeled, &unlabeled, &dir)?;
        let report = evaluate_on_test(&run.params, &data, &spec.eval)?;
        let ckpt_rel = rel.join(run.checkpoint.file_name().expect("checkpoint has a file name"));
        let ckpt_rel = ckpt_rel.to_string_lossy().replace('\\', "/");
        let record = RunRecord { report: report.clone(), config_hash: run.config_hash.clone(), checkpoint: ckpt_rel.clone() };
        write_record(&dir.join(REPORT_FILE), &record)?;
        let dual = cell.variant != Variant::SupervisedOnly;
        let row = ResultRow {
            variant: cell.variant.name().into(),
            fraction: cell.fraction,
            n_labeled: labeled.len(),
            n_unlabeled: if cell.variant.uses_unlabeled() { unlabeled.len() } else { 0 },
            seed: cell.seed,
            dice: report.dice,
            jaccard: report.jaccard,
            asd: report.asd,
            hd95: report.hd95,
            cd: dual.then_some(report.cd),
            qcd: dual.then_some(report.qcd),
            config_hash: run.config_hash,
            checkpoint: ckpt_rel,
        };
        progress(&row);
        rows.push(row);
    }
    write_results(&spec.out, &rows)?;
    Ok(rows)
}

pub fn write_results(out: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Failure::write(out, e))?;
    let path = out.join(RESULTS_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Failure::write(&path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Failure::write(&path, e))?;
    }
    w.flush().map_err(|e| Failure::write(&path, e))?;
    let path = out.join(RESULTS_TABLE);
    std::fs::write(&path, results_table(rows)).map_err(|e| Failure::write(&path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::read(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Failure::read(path, e))).collect()
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = v.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn align(rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, &w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(s, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(s, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    s
}

/// Seed-averaged rows per (variant, fraction), in first-appearance order.
pub fn results_table(rows: &[ResultRow]) -> String {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(v, f)| *v == r.variant && *f == r.fraction) {
            keys.push((r.variant.clone(), r.fraction));
        }
    }
    let mut table = vec![["Method", "Labeled", "Unlabeled", "Seeds", "Dice(%)", "Jaccard(%)", "ASD", "95HD", "CD", "QCD"]
        .map(String::from)
        .to_vec()];
    for (variant, fraction) in keys {
        let g: Vec<&ResultRow> = rows.iter().filter(|r| r.variant == variant && r.fraction == fraction).collect();
        table.push(vec![
            variant.clone(),
            format!("{}", g[0].n_labeled),
            format!("{}", g[0].n_unlabeled),
            format!("{}", g.len()),
            cell(mean(g.iter().map(|r| 100.0 * r.dice)), 2),
            cell(mean(g.iter().map(|r| 100.0 * r.jaccard)), 2),
            cell(mean(g.iter().filter_map(|r| r.asd)), 2),
            cell(mean(g.iter().filter_map(|r| r.hd95)), 2),
            cell(mean(g.iter().filter_map(|r| r.cd)), 4),
            cell(mean(g.iter().filter_map(|r| r.qcd)), 4),
        ]);
    }
    align(&table)
}

/// Dice difference pdc − vnet_gc at one labeled fraction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaRow {
    pub fraction: f64,
    pub seeds: Vec<u64>,
    /// Dice points (percent) per seed, in seed order.
    pub deltas: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Pairs pdc and vnet_gc rows by (fraction, seed) across all inputs.
///
/// Fractions where neither variant appears are ignored; any fraction where
/// one of them lacks a seed the other has is an error.
pub fn compare_rows(rows: &[ResultRow]) -> Result<Vec<DeltaRow>> {
    let (pdc, gc) = (Variant::Pdc.name(), Variant::VnetGc.name());
    let mut by_fraction: BTreeMap<u64, BTreeMap<u64, [Option<f64>; 2]>> = BTreeMap::new();
    for r in rows {
        let slot = match r.variant.as_str() {
            v if v == pdc => 0,
            v if v == gc => 1,
            _ => continue,
        };
        let cellv = by_fraction.entry(r.fraction.to_bits()).or_default().entry(r.seed).or_default();
        if cellv[slot].is_some() {
            return Err(Failure::Data(format!("duplicate {} row at fraction {} seed {}", r.variant, r.fraction, r.seed)));
        }
        cellv[slot] = Some(r.dice);
    }
    if by_fraction.is_empty() {
        return Err(Failure::Data(format!("no {pdc} or {gc} rows to compare")));
    }
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for (fbits, seeds) in &by_fraction {
        let fraction = f64::from_bits(*fbits);
        let mut row = DeltaRow { fraction, seeds: vec![], deltas: vec![], mean: 0.0, min: 0.0, max: 0.0 };
        for (&seed, pair) in seeds {
            match pair {
                [Some(a), Some(b)] => {
                    row.seeds.push(seed);
                    row.deltas.push(100.0 * (a - b));
                }
                [None, _] => missing.push(format!("{pdc} at fraction {fraction} seed {seed}")),
                [_, None] => missing.push(format!("{gc} at fraction {fraction} seed {seed}")),
            }
        }
        if !row.deltas.is_empty() {
            row.mean = row.deltas.iter().sum::<f64>() / row.deltas.len() as f64;
            row.min = row.deltas.iter().copied().fold(f64::INFINITY, f64::min);
            row.max = row.deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        out.push(row);
    }
    if !missing.is_empty() {
        return Err(Failure::Data(format!("missing result cells: {}", missing.join("; "))));
    }
    out.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
    Ok(out)
}

pub fn delta_table(rows: &[DeltaRow]) -> String {
    let mut table = vec![["Fraction", "Seeds", "Delta Dice (pdc - vnet_gc)", "Min", "Max"].map(String::from).to_vec()];
    for r in rows {
        table.push(vec![
            format!("{}", r.fraction),
            format!("{}", r.seeds.len()),
            format!("{:+.2}", r.mean),
            format!("{:+.2}", r.min),
            format!("{:+.2}", r.max),
        ]);
    }
    align(&table)
}

/// Reads result CSVs and renders the pdc − vnet_gc comparison.
pub fn compare_report(paths: &[PathBuf]) -> Result<(Vec<DeltaRow>, String)> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_results(p)?);
    }
    let deltas = compare_rows(&rows)?;
    let text = delta_table(&deltas);
    Ok((deltas, text))
}
