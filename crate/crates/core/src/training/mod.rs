//! Sequential two-phase training (base, then frozen-base enhancement) and
//! the parallel joint baseline.
//!
//! A [`Checkpoint`] is a [`ParameterStore`] whose `meta.*` entries record
//! the phase, epoch, loss weights, seed and per-epoch metrics, and whose
//! `opt.*` entries hold the optimizer moments. Training resumes from any
//! saved epoch and replays exactly what an uninterrupted run would do,
//! because every epoch draws its shuffle and noise from substreams keyed by
//! the epoch index.

pub mod losses;

use std::path::Path;

use rand::Rng;

use crate::config::ExperimentConfig;
use crate::data::LabeledDataset;
use crate::entropy::{quantize, QuantMode};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::params::{Gradients, ParameterStore, Role};
use crate::rng::substream;
use crate::taskproxy::extract_reference_features;
use crate::tensor::{ImageKind, ImageTensor, Tensor};
use crate::transforms::{analyze_base, init_params, s_max_of};

pub use losses::{base_loss, enhancement_loss, joint_loss, BaseParts, EnhParts, Example, JointParts};

/// Training is aborted when an epoch's mean loss exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Base,
    Enhancement,
    Joint,
}

impl Phase {
    fn code(self) -> f32 {
        match self {
            Phase::Base => 0.0,
            Phase::Enhancement => 1.0,
            Phase::Joint => 2.0,
        }
    }

    fn from_code(v: f32) -> Result<Self> {
        match v as u32 {
            0 => Ok(Phase::Base),
            1 => Ok(Phase::Enhancement),
            2 => Ok(Phase::Joint),
            _ => Err(Error::Checkpoint(format!("unknown phase code {v}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Base => "base",
            Phase::Enhancement => "enhancement",
            Phase::Joint => "joint",
        }
    }

    /// Roles updated by the optimizer in this phase.
    pub fn trainable(self) -> &'static [Role] {
        match self {
            Phase::Base => &[Role::Base, Role::Lst],
            Phase::Enhancement => &[Role::Preview, Role::Residual],
            Phase::Joint => &[Role::Joint, Role::Lst],
        }
    }

    /// Roles a checkpoint of this phase carries besides `meta` and `opt`.
    fn kept(self) -> &'static [Role] {
        match self {
            Phase::Base | Phase::Enhancement => &[
                Role::Base,
                Role::Lst,
                Role::Preview,
                Role::Residual,
                Role::TaskProxy,
            ],
            Phase::Joint => &[Role::Joint, Role::Lst, Role::TaskProxy],
        }
    }
}

/// Per-epoch training record. For the joint baseline, `rate_bpp` is the
/// total of both slices and `distortion` the feature term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub rate_bpp: f64,
    pub distortion: f64,
    pub lr: f64,
}

const PHASE: &str = "meta.phase";
const EPOCH: &str = "meta.epoch";
const WEIGHTS: &str = "meta.weights";
const SEED: &str = "meta.seed";
const METRICS: &str = "meta.metrics";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub store: ParameterStore,
}

fn meta_value(store: &ParameterStore, name: &str, len: usize) -> Result<Vec<f32>> {
    let p = store
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")))?;
    if p.values.len() != len {
        return Err(Error::Checkpoint(format!("`{name}` has {} values", p.values.len())));
    }
    Ok(p.values.clone())
}

impl Checkpoint {
    /// Wrap a loaded store after checking its metadata.
    pub fn from_store(store: ParameterStore) -> Result<Self> {
        let c = Checkpoint { store };
        c.phase()?;
        c.epoch()?;
        c.weights()?;
        c.seed()?;
        c.metrics()?;
        crate::transforms::architecture_of(&c.store)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(crate::checkpoint::load_store(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::checkpoint::save_store(&self.store, path)
    }

    pub fn phase(&self) -> Result<Phase> {
        Phase::from_code(meta_value(&self.store, PHASE, 1)?[0])
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> Result<usize> {
        Ok(meta_value(&self.store, EPOCH, 1)?[0] as usize)
    }

    /// `(lambda_base, lambda_enh)` as used by the run, at `f32` precision.
    pub fn weights(&self) -> Result<(f64, f64)> {
        let w = meta_value(&self.store, WEIGHTS, 2)?;
        Ok((f64::from(w[0]), f64::from(w[1])))
    }

    pub fn seed(&self) -> Result<u64> {
        let s = meta_value(&self.store, SEED, 4)?;
        Ok(s.iter().rev().fold(0u64, |acc, &v| (acc << 16) | v as u64))
    }

    pub fn metrics(&self) -> Result<Vec<EpochMetrics>> {
        let Some(p) = self.store.get(METRICS) else {
            return Ok(Vec::new());
        };
        if p.shape.len() != 2 || p.shape[1] != 5 {
            return Err(Error::Checkpoint(format!("`{METRICS}` has shape {:?}", p.shape)));
        }
        Ok(p.values
            .chunks_exact(5)
            .map(|r| EpochMetrics {
                epoch: r[0] as usize,
                loss: f64::from(r[1]),
                rate_bpp: f64::from(r[2]),
                distortion: f64::from(r[3]),
                lr: f64::from(r[4]),
            })
            .collect())
    }

    /// Checksum over the codec and proxy parameters, excluding metadata and
    /// optimizer state.
    pub fn model_hash(&self) -> u32 {
        self.store.model_hash()
    }

    fn push_metrics(&mut self, m: EpochMetrics) -> Result<()> {
        let mut rows = self.store.get(METRICS).map(|p| p.values.clone()).unwrap_or_default();
        rows.extend([m.epoch as f32, m.loss as f32, m.rate_bpp as f32, m.distortion as f32, m.lr as f32]);
        let n = rows.len() / 5;
        self.store.set(METRICS, &[n, 5], rows)?;
        self.store.set(EPOCH, &[1], vec![(m.epoch + 1) as f32])?;
        Ok(())
    }

    /// Write the metrics log as CSV (`epoch,loss,rate_bpp,distortion,lr`).
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,loss,rate_bpp,distortion,lr\n");
        for m in self.metrics()? {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                m.epoch, m.loss, m.rate_bpp, m.distortion, m.lr
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn stamp(store: &mut ParameterStore, phase: Phase, lb: f64, le: f64, seed: u64) -> Result<()> {
    store.set(PHASE, &[1], vec![phase.code()])?;
    store.set(EPOCH, &[1], vec![0.0])?;
    store.set(WEIGHTS, &[2], vec![lb as f32, le as f32])?;
    let chunks = (0..4).map(|i| ((seed >> (16 * i)) & 0xffff) as f32).collect();
    store.set(SEED, &[4], chunks)?;
    store.remove_roles(&[Role::Optimizer]);
    store.remove(METRICS);
    Ok(())
}

fn require_proxy(store: &ParameterStore) -> Result<()> {
    if !store.has_role(Role::TaskProxy) {
        return Err(Error::Training("a trained task proxy is required".into()));
    }
    Ok(())
}

/// Fresh codec parameters for `phase`, with the proxy copied from `proxy`.
fn fresh(phase: Phase, proxy: &ParameterStore, config: &ExperimentConfig) -> Result<Checkpoint> {
    require_proxy(proxy)?;
    let mut store = init_params(config, config.seed)?;
    store.merge_from(proxy, &[Role::TaskProxy])?;
    if let Some(acc) = proxy.get(crate::taskproxy::ACCURACY_PARAM) {
        store.set(&acc.name.clone(), &acc.shape.clone(), acc.values.clone())?;
    }
    store.remove_roles(
        &Role::MODEL
            .iter()
            .copied()
            .chain([Role::TaskProxy])
            .filter(|r| !phase.kept().contains(r))
            .collect::<Vec<_>>(),
    );
    let (lb, le) = (config.weights.lambda_base, config.weights.lambda_enh);
    let le = if phase == Phase::Joint { config.joint_lambda_enh } else { le };
    stamp(&mut store, phase, lb, le, config.seed)?;
    Ok(Checkpoint { store })
}

pub fn start_base(proxy: &ParameterStore, config: &ExperimentConfig) -> Result<Checkpoint> {
    fresh(Phase::Base, proxy, config)
}

pub fn start_joint(proxy: &ParameterStore, config: &ExperimentConfig) -> Result<Checkpoint> {
    fresh(Phase::Joint, proxy, config)
}

/// Enhancement run on top of a trained base checkpoint. The base, latent
/// transform and proxy parameters are carried over unchanged.
pub fn start_enhancement(base: &Checkpoint, config: &ExperimentConfig) -> Result<Checkpoint> {
    if base.phase()? != Phase::Base {
        return Err(Error::Training(format!(
            "enhancement needs a base checkpoint, got a {} checkpoint",
            base.phase()?.name()
        )));
    }
    require_proxy(&base.store)?;
    let mut store = base.store.clone();
    if let Some(path) = &config.residual_init {
        let donor = crate::checkpoint::load_store(path)?;
        for p in donor.iter().filter(|p| p.role == Role::Residual) {
            match store.get(&p.name) {
                Some(q) if q.shape == p.shape => {}
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "{}: `{}` does not match this architecture",
                        path.display(),
                        p.name
                    )))
                }
            }
        }
        store.merge_from(&donor, &[Role::Residual])?;
    }
    let (lb, _) = base.weights()?;
    stamp(&mut store, Phase::Enhancement, lb, config.weights.lambda_enh, config.seed)?;
    Ok(Checkpoint { store })
}

fn crop(x: &ImageTensor, patch: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let (h, w) = (x.height(), x.width());
    if patch >= h && patch >= w {
        return Ok(x.tensor().clone());
    }
    let (ph, pw) = (patch.min(h), patch.min(w));
    let oy = rng.gen_range(0..=h - ph);
    let ox = rng.gen_range(0..=w - pw);
    let mut t = Tensor::zeros(3, ph, pw);
    for c in 0..3 {
        for y in 0..ph {
            for xx in 0..pw {
                *t.at_mut(c, y, xx) = x.tensor().at(c, oy + y, ox + xx);
            }
        }
    }
    Ok(t)
}

/// Training inputs for one image: the (possibly cropped) image, its
/// reference features and, for the enhancement phase, its rounded base
/// latent.
struct Prepared {
    examples: Vec<Example>,
    base_latents: Vec<Tensor>,
}

fn prepare(
    data: &LabeledDataset,
    store: &ParameterStore,
    phase: Phase,
    patch: usize,
    seed: u64,
    epoch: usize,
) -> Result<Prepared> {
    let mut rng = substream(seed, "crop", epoch as u64);
    let mut examples = Vec::with_capacity(data.len());
    let mut base_latents = Vec::new();
    let s_max = s_max_of(store);
    for (x, _) in data.iter() {
        let t = crop(x, patch, &mut rng)?;
        let img = ImageTensor::new(t, ImageKind::Input)?;
        let f_ref = extract_reference_features(&img, store)?.tensor().clone();
        if phase == Phase::Enhancement {
            let y = analyze_base(&img, store)?;
            let q = quantize(&y, QuantMode::Round, s_max, &mut rng)?;
            base_latents.push(q.into_tensor());
        }
        examples.push(Example {
            x: img.into_tensor(),
            f_ref,
        });
    }
    Ok(Prepared {
        examples,
        base_latents,
    })
}

fn crops(data: &LabeledDataset, patch: usize) -> bool {
    data.iter().any(|(x, _)| patch < x.height() || patch < x.width())
}

/// Continue `ckpt` until `until` epochs are complete.
pub fn run(
    mut ckpt: Checkpoint,
    data: &LabeledDataset,
    config: &ExperimentConfig,
    until: usize,
) -> Result<Checkpoint> {
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let phase = ckpt.phase()?;
    let (lb, le) = ckpt.weights()?;
    let seed = ckpt.seed()?;
    let sched = &config.schedule;
    if sched.patch_size % 8 != 0 || sched.patch_size == 0 {
        return Err(Error::Training(format!(
            "patch size {} is not a positive multiple of 8",
            sched.patch_size
        )));
    }
    let mut opt = Adam::resume(&ckpt.store, phase.trainable());
    let batch = sched.batch_size.max(1);
    let per_epoch_prep = crops(data, sched.patch_size);
    let mut cached: Option<Prepared> = None;
    let start = ckpt.epoch()?;
    for epoch in start..until {
        let lr = sched.lr_at(epoch);
        if per_epoch_prep || cached.is_none() {
            cached = Some(prepare(data, &ckpt.store, phase, sched.patch_size, seed, epoch)?);
        }
        let prep = cached.as_ref().expect("prepared above");
        let order = data.epoch_order(seed, epoch);
        let mut noise = substream(seed, &format!("noise/{}", phase.name()), epoch as u64);
        let (mut loss, mut rate, mut dist) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(batch) {
            let ex: Vec<Example> = chunk.iter().map(|&i| prep.examples[i].clone()).collect();
            let mut grads = Gradients::for_store(&ckpt.store);
            let (l, r, d) = match phase {
                Phase::Base => {
                    let b = base_loss(&ex, &ckpt.store, lb, &mut noise, &mut grads)?;
                    (b.loss, b.rate_bpp, b.distortion)
                }
                Phase::Enhancement => {
                    let yb: Vec<Tensor> =
                        chunk.iter().map(|&i| prep.base_latents[i].clone()).collect();
                    let e = enhancement_loss(&ex, &yb, &ckpt.store, le, &mut noise, &mut grads)?;
                    (e.loss, e.rate_bpp, e.distortion)
                }
                Phase::Joint => {
                    let j = joint_loss(&ex, &ckpt.store, lb, le, &mut noise, &mut grads)?;
                    (j.loss, j.rate_base + j.rate_enh, j.d_base)
                }
            };
            let w = chunk.len() as f64 / data.len() as f64;
            loss += w * l;
            rate += w * r;
            dist += w * d;
            opt.apply(&mut ckpt.store, &grads, lr)?;
        }
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Training(format!(
                "{} training diverged at epoch {epoch}: loss {loss}",
                phase.name()
            )));
        }
        log::info!(
            "{} epoch {epoch}: loss {loss:.5} rate {rate:.4} bpp distortion {dist:.6} lr {lr:.2e}",
            phase.name()
        );
        ckpt.push_metrics(EpochMetrics {
            epoch,
            loss,
            rate_bpp: rate,
            distortion: dist,
            lr,
        })?;
    }
    Ok(ckpt)
}

/// Train the base layer and latent transform for the configured schedule.
pub fn train_base(
    data: &LabeledDataset,
    proxy: &ParameterStore,
    config: &ExperimentConfig,
) -> Result<Checkpoint> {
    run(start_base(proxy, config)?, data, config, config.schedule.total_epochs())
}

/// Train the preview and residual coder with the base layer frozen.
pub fn train_enhancement(
    data: &LabeledDataset,
    base: &Checkpoint,
    config: &ExperimentConfig,
) -> Result<Checkpoint> {
    let out = run(start_enhancement(base, config)?, data, config, config.schedule.total_epochs())?;
    debug_assert_eq!(
        out.store.role_hash(&[Role::Base, Role::TaskProxy]),
        base.store.role_hash(&[Role::Base, Role::TaskProxy])
    );
    Ok(out)
}

/// Train the parallel baseline end to end.
pub fn train_joint(
    data: &LabeledDataset,
    proxy: &ParameterStore,
    config: &ExperimentConfig,
) -> Result<Checkpoint> {
    run(start_joint(proxy, config)?, data, config, config.schedule.total_epochs())
}
