//! End-to-end workflows built from the library pieces: dataset loading,
//! proxy training and λ sweeps.

use crate::config::ExperimentConfig;
use crate::data::{load_manifest, synthetic, LabeledDataset, Split};
use crate::error::Result;
use crate::params::ParameterStore;
use crate::taskproxy::train_task_proxy;
use crate::training::{train_base, train_enhancement, train_joint, Checkpoint};

/// Training and validation splits named by the config.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let classes = config.arch.classes;
    match &config.data_dir {
        Some(dir) => Ok((
            load_manifest(dir, Split::Train, classes)?,
            load_manifest(dir, Split::Val, classes)?,
        )),
        None => Ok((
            synthetic(Split::Train, config.synthetic_train, config.image_size, classes, config.seed)?,
            synthetic(Split::Val, config.synthetic_val, config.image_size, classes, config.seed)?,
        )),
    }
}

/// Train a proxy and return a store holding only it.
pub fn proxy(
    config: &ExperimentConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    let report = train_task_proxy(&mut store, train, val, config, config.seed)?;
    log::info!("task proxy validation accuracy {:.4}", report.val_accuracy);
    Ok(store)
}

fn with_lambda_base(config: &ExperimentConfig, lambda: f64) -> ExperimentConfig {
    let mut c = config.clone();
    c.weights.lambda_base = lambda;
    c
}

/// One base checkpoint per entry of `lambda_grid`.
pub fn sweep_base(
    config: &ExperimentConfig,
    proxy: &ParameterStore,
    train: &LabeledDataset,
) -> Result<Vec<Checkpoint>> {
    config
        .lambda_grid
        .iter()
        .map(|&l| {
            log::info!("base sweep: lambda_base {l}");
            train_base(train, proxy, &with_lambda_base(config, l))
        })
        .collect()
}

/// One parallel-baseline checkpoint per entry of `lambda_grid`, with the
/// enhancement weight fixed at `joint_lambda_enh`.
pub fn sweep_joint(
    config: &ExperimentConfig,
    proxy: &ParameterStore,
    train: &LabeledDataset,
) -> Result<Vec<Checkpoint>> {
    config
        .lambda_grid
        .iter()
        .map(|&l| {
            log::info!("joint sweep: lambda_base {l}");
            train_joint(train, proxy, &with_lambda_base(config, l))
        })
        .collect()
}

/// One enhancement checkpoint per entry of `lambda_enh_grid` on a fixed base.
pub fn sweep_enhancement(
    config: &ExperimentConfig,
    base: &Checkpoint,
    train: &LabeledDataset,
) -> Result<Vec<Checkpoint>> {
    config
        .lambda_enh_grid
        .iter()
        .map(|&l| {
            log::info!("enhancement sweep: lambda_enh {l}");
            let mut c = config.clone();
            c.weights.lambda_enh = l;
            train_enhancement(train, base, &c)
        })
        .collect()
}
