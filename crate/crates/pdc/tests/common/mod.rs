#![allow(dead_code)]

use std::path::Path;

use pdc::dataset::{generate_dataset, GenerateConfig, Manifest};
use pdc::experiment::ExperimentSpec;
use pdc_core::data::SyntheticConfig;

pub fn tiny_generate(seed: u64) -> GenerateConfig {
    GenerateConfig {
        n: 10,
        seed,
        synthetic: SyntheticConfig { shape: [16; 3], ..SyntheticConfig::default() },
        train_fraction: 0.8,
        labeled_fraction: 0.5,
    }
}

pub fn tiny_dataset(dir: &Path) -> Manifest {
    generate_dataset(&tiny_generate(0), dir).unwrap()
}

pub fn tiny_spec(data: &Path, out: &Path, variants: &[&str]) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        manifest: data.to_path_buf(),
        out: out.to_path_buf(),
        variants: variants.iter().map(|s| s.to_string()).collect(),
        fractions: vec![0.5],
        seeds: vec![0],
        upper_bound: false,
        ..ExperimentSpec::default()
    };
    spec.train.total_iterations = 3;
    spec.train.crop = [8; 3];
    spec.train.network.encoder_channels = vec![2, 4];
    spec.eval.window = [16; 3];
    spec.eval.stride = [16; 3];
    spec
}
