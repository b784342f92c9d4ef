//! Frozen task proxy: a small classifier whose cut-point activations are the
//! feature targets of the base layer.
//!
//! The front half (`head`) maps an image to `F x H/4 x W/4` features in
//! `[-1, 1]`; the back half (`tail`) maps features to class probabilities.

use crate::config::ExperimentConfig;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Layer, Stack};
use crate::optim::Adam;
use crate::params::{Gradients, ParameterStore, Role};
use crate::rng::substream;
use crate::tensor::{FeatureMap, ImageTensor, Tensor};
use crate::transforms::{architecture_of, write_architecture};

/// Validation accuracy recorded after proxy training.
pub const ACCURACY_PARAM: &str = "meta.proxy_accuracy";

pub fn head(feature_channels: usize, width: usize) -> Stack {
    Stack::new(vec![
        Layer::conv("taskproxy.conv1", 3, width, 3, 2),
        Layer::Tanh,
        Layer::conv("taskproxy.conv2", width, feature_channels, 3, 2),
        Layer::Tanh,
    ])
}

pub fn tail(feature_channels: usize, width: usize, classes: usize) -> Stack {
    Stack::new(vec![
        Layer::conv("taskproxy.conv3", feature_channels, 2 * width, 3, 2),
        Layer::Tanh,
        Layer::GlobalAvgPool,
        Layer::dense("taskproxy.fc", 2 * width, classes),
    ])
}

fn stacks(p: &ParameterStore) -> Result<(Stack, Stack)> {
    let a = architecture_of(p)?;
    Ok((
        head(a.feature_channels, a.proxy_width),
        tail(a.feature_channels, a.proxy_width, a.classes),
    ))
}

/// Allocate fresh proxy parameters into `store`, replacing any existing ones.
pub fn init_task_proxy(store: &mut ParameterStore, config: &ExperimentConfig, seed: u64) -> Result<()> {
    let a = &config.arch;
    if a.proxy_width == 0 || a.feature_channels == 0 || a.classes < 2 {
        return Err(Error::Invalid(
            "proxy needs positive width and feature channels and at least 2 classes".into(),
        ));
    }
    if store.get(crate::transforms::ARCH_PARAM).is_none() {
        write_architecture(store, a)?;
    }
    store.remove_roles(&[Role::TaskProxy]);
    let mut rng = substream(seed, "init/taskproxy", 0);
    head(a.feature_channels, a.proxy_width).init_params(store, &mut rng)?;
    tail(a.feature_channels, a.proxy_width, a.classes).init_params(store, &mut rng)?;
    Ok(())
}

/// Proxy features of a clean input image.
pub fn extract_reference_features(x: &ImageTensor, p: &ParameterStore) -> Result<FeatureMap> {
    let (h, _) = stacks(p)?;
    FeatureMap::new(h.forward(p, x.tensor())?)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Class probabilities from cut-point features.
pub fn classify_from_features(f: &FeatureMap, p: &ParameterStore) -> Result<Vec<f64>> {
    let (_, t) = stacks(p)?;
    Ok(softmax(t.forward(p, f.tensor())?.data()))
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Mean squared difference between two feature maps.
pub fn feature_distortion(f_hat: &FeatureMap, f_ref: &FeatureMap) -> Result<f64> {
    crate::tensor::mse(f_hat.tensor(), f_ref.tensor())
}

/// Top-1 accuracy of the proxy tail applied to features produced by
/// `pipeline`.
pub fn evaluate_accuracy(
    data: &LabeledDataset,
    mut pipeline: impl FnMut(&ImageTensor) -> Result<FeatureMap>,
    p: &ParameterStore,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Eval("accuracy over an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (x, label) in data.iter() {
        let probs = classify_from_features(&pipeline(x)?, p)?;
        if argmax(&probs) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Cross-entropy of one example and its parameter gradients.
fn example_loss(
    p: &ParameterStore,
    h: &Stack,
    t: &Stack,
    x: &Tensor,
    label: usize,
    grads: &mut Gradients,
) -> Result<f64> {
    let th = h.forward_trace(p, x)?;
    let tt = t.forward_trace(p, th.output())?;
    let probs = softmax(tt.output().data());
    let loss = -probs[label].max(1e-300).ln();
    let mut g = probs;
    g[label] -= 1.0;
    let k = g.len();
    let gy = Tensor::from_vec(k, 1, 1, g)?;
    let gf = t.backward(p, &tt, gy, grads, true)?.expect("requested input gradient");
    h.backward(p, &th, gf, grads, false)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyReport {
    pub epoch_loss: Vec<f64>,
    pub val_accuracy: f64,
}

/// Train the proxy from scratch with Adam and cross-entropy, record its
/// validation accuracy in [`ACCURACY_PARAM`], and return the loss history.
pub fn train_task_proxy(
    store: &mut ParameterStore,
    train: &LabeledDataset,
    val: &LabeledDataset,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<ProxyReport> {
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if train.distinct_labels() < 2 {
        return Err(Error::Training(
            "the proxy needs at least 2 distinct labels in the training set".into(),
        ));
    }
    let mut work = ParameterStore::new();
    write_architecture(&mut work, &config.arch)?;
    init_task_proxy(&mut work, config, seed)?;
    let (h, t) = stacks(&work)?;
    let mut opt = Adam::new(&[Role::TaskProxy]);
    let batch = config.proxy_batch.max(1);
    let mut epoch_loss = Vec::with_capacity(config.proxy_epochs);
    for epoch in 0..config.proxy_epochs {
        let order = train.epoch_order(seed ^ 0x7a5c, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = Gradients::for_store(&work);
            for &i in chunk {
                let (x, label) = train.get(i);
                total += example_loss(&work, &h, &t, x.tensor(), label, &mut grads)?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.apply(&mut work, &grads, config.proxy_lr)?;
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("proxy loss diverged at epoch {epoch}")));
        }
        log::info!("proxy epoch {epoch}: loss {mean:.4}");
        epoch_loss.push(mean);
    }
    let val_accuracy = if val.is_empty() {
        f64::NAN
    } else {
        evaluate_accuracy(val, |x| extract_reference_features(x, &work), &work)?
    };
    if store.get(crate::transforms::ARCH_PARAM).is_none() {
        write_architecture(store, &config.arch)?;
    }
    store.remove_roles(&[Role::TaskProxy]);
    store.merge_from(&work, &[Role::TaskProxy])?;
    store.set(ACCURACY_PARAM, &[1], vec![val_accuracy as f32])?;
    Ok(ProxyReport {
        epoch_loss,
        val_accuracy,
    })
}

/// Accuracy recorded by [`train_task_proxy`], if any.
pub fn recorded_accuracy(p: &ParameterStore) -> Option<f64> {
    p.get(ACCURACY_PARAM)
        .and_then(|a| a.values.first())
        .map(|&v| f64::from(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, Split};

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.arch.proxy_width = 8;
        c.arch.feature_channels = 4;
        c.arch.classes = 3;
        c.proxy_epochs = 8;
        c.proxy_batch = 8;
        c
    }

    #[test]
    fn shapes_and_probabilities() {
        let c = tiny();
        let mut p = ParameterStore::new();
        init_task_proxy(&mut p, &c, 0).unwrap();
        let d = synthetic(Split::Train, 3, 32, 3, 0).unwrap();
        let f = extract_reference_features(d.get(0).0, &p).unwrap();
        assert_eq!(f.shape(), [4, 8, 8]);
        assert!(f.tensor().data().iter().all(|v| v.abs() <= 1.0));
        let probs = classify_from_features(&f, &p).unwrap();
        assert_eq!(probs.len(), 3);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(feature_distortion(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn training_reduces_loss_and_records_accuracy() {
        let c = tiny();
        let train = synthetic(Split::Train, 96, 32, 3, 1).unwrap();
        let val = synthetic(Split::Val, 30, 32, 3, 1).unwrap();
        let mut p = ParameterStore::new();
        let r = train_task_proxy(&mut p, &train, &val, &c, 0).unwrap();
        assert!(r.epoch_loss.last().unwrap() < &r.epoch_loss[0]);
        assert!(r.val_accuracy > 1.0 / 3.0);
        assert!(!p.has_role(Role::Optimizer));
        assert!((recorded_accuracy(&p).unwrap() - r.val_accuracy).abs() < 1e-6);
    }
}
