use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use scalecodec::checkpoint::{load_store, save_store};
use scalecodec::codec::{decode_image, decode_task, encode_image, Layers};
use scalecodec::config::ExperimentConfig;
use scalecodec::data::{load_png, save_manifest, save_png, LabeledDataset};
use scalecodec::entropy::unpack_container;
use scalecodec::eval::{
    bd_rate, break_even, build_curve, emit_report, operating_point, BdEntry, BreakEvenEntry,
    BreakEvenInput, Metric, QualityKind, RateQualityCurve,
};
use scalecodec::experiment::{load_datasets, proxy};
use scalecodec::params::ParameterStore;
use scalecodec::tensor::LayerTag;
use scalecodec::training::{run, start_base, start_enhancement, start_joint, Checkpoint, Phase};

use crate::{Command, Common, Usage};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::TrainTask { common, out } => train_task(&common, &out),
        Command::TrainBase { common, checkpoint, out } => {
            train_from_proxy(&common, &checkpoint, &out, Phase::Base)
        }
        Command::TrainJoint { common, checkpoint, out } => {
            train_from_proxy(&common, &checkpoint, &out, Phase::Joint)
        }
        Command::TrainEnh { common, base_checkpoint, checkpoint, out } => {
            train_enh(&common, &base_checkpoint, checkpoint.as_deref(), &out)
        }
        Command::Encode { checkpoint, layers, out, input } => encode(&checkpoint, &layers, &out, &input),
        Command::Decode { checkpoint, layers, out, input } => {
            decode(&checkpoint, &layers, out.as_deref(), &input)
        }
        Command::EvalTask { common, checkpoint, out, label, no_coder } => {
            eval(&common, &checkpoint, &out, label, Metric::Accuracy, !no_coder)
        }
        Command::EvalRecon { common, checkpoint, out, label, no_coder } => {
            eval(&common, &checkpoint, &out, label, Metric::Psnr, !no_coder)
        }
        Command::Sweep { common, checkpoint, out, no_coder } => {
            sweep(&common, checkpoint.as_deref(), &out, !no_coder)
        }
        Command::Bdrate { reference, test } => bdrate(&reference, &test),
        Command::Breakeven { rb, rt } => breakeven(rb, rt),
        Command::MakeDataset { common, out } => make_dataset(&common, &out),
    }
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    Ok(c)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| scalecodec::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn echo_config(c: &ExperimentConfig, out: &Path) -> Result<()> {
    write(&sibling(out, ".config"), c.to_text())
}

fn config_hash(c: &ExperimentConfig) -> String {
    format!("{:08x}", crc32fast::hash(c.to_text().as_bytes()))
}

fn train_task(common: &Common, out: &Path) -> Result<()> {
    let c = config(common)?;
    let (train, val) = load_datasets(&c)?;
    let store = proxy(&c, &train, &val)?;
    save_store(&store, out)?;
    echo_config(&c, out)
}

fn finish(ckpt: &Checkpoint, c: &ExperimentConfig, out: &Path) -> Result<()> {
    ckpt.save(out)?;
    ckpt.write_metrics_csv(&sibling(out, ".metrics.csv"))?;
    echo_config(c, out)
}

/// A proxy-only store starts a fresh run; a checkpoint of `phase` resumes.
fn train_from_proxy(common: &Common, checkpoint: &Path, out: &Path, phase: Phase) -> Result<()> {
    let c = config(common)?;
    let (train, _) = load_datasets(&c)?;
    let store = load_store(checkpoint)?;
    let ckpt = if store.get("meta.phase").is_some() {
        let ckpt = Checkpoint::from_store(store)?;
        if ckpt.phase()? != phase {
            return Err(Usage(format!(
                "{} holds a {} checkpoint, expected a task proxy or a {} checkpoint",
                checkpoint.display(),
                ckpt.phase()?.name(),
                phase.name()
            ))
            .into());
        }
        ckpt
    } else if phase == Phase::Base {
        start_base(&store, &c)?
    } else {
        start_joint(&store, &c)?
    };
    let done = run(ckpt, &train, &c, c.schedule.total_epochs())?;
    finish(&done, &c, out)
}

fn train_enh(common: &Common, base: &Path, resume: Option<&Path>, out: &Path) -> Result<()> {
    let c = config(common)?;
    let (train, _) = load_datasets(&c)?;
    let ckpt = match resume {
        Some(p) => Checkpoint::load(p)?,
        None => start_enhancement(&Checkpoint::load(base)?, &c)?,
    };
    let done = run(ckpt, &train, &c, c.schedule.total_epochs())?;
    finish(&done, &c, out)
}

fn layers(s: &str) -> Result<Layers> {
    s.parse::<Layers>().map_err(|e| Usage(e.to_string().trim_start_matches("invalid: ").into()).into())
}

fn encode(checkpoint: &Path, layers_arg: &str, out: &Path, input: &Path) -> Result<()> {
    let layers = layers(layers_arg)?;
    let store = load_store(checkpoint)?;
    let x = load_png(input)?;
    write(out, encode_image(&x, &store, layers)?)
}

#[derive(Serialize)]
struct FeatureSummary {
    shape: [usize; 3],
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct TaskReport {
    label: usize,
    probabilities: Vec<f64>,
    features: FeatureSummary,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(path).map_err(|e| scalecodec::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?)
}

fn decode(checkpoint: &Path, layers_arg: &str, out: Option<&Path>, input: &Path) -> Result<()> {
    let layers = layers(layers_arg)?;
    let store = load_store(checkpoint)?;
    let bytes = read(input)?;
    match layers {
        Layers::Base => {
            let t = decode_task(&bytes, &store)?;
            let v = t.features.tensor().data();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let report = TaskReport {
                label: t.label,
                probabilities: t.probabilities,
                features: FeatureSummary {
                    shape: t.features.shape(),
                    mean,
                    std: var.sqrt(),
                    min: v.iter().cloned().fold(f64::INFINITY, f64::min),
                    max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                },
            };
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(p) => write(p, text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Layers::BaseEnh => {
            let out = out.ok_or_else(|| Usage("decode --layers base+enh needs --out PATH".into()))?;
            if unpack_container(&bytes)?.layer(LayerTag::Enh).is_none() {
                return Err(scalecodec::Error::Bitstream(format!(
                    "{} carries no enhancement layer",
                    input.display()
                ))
                .into());
            }
            Ok(save_png(out, &decode_image(&bytes, &store)?)?)
        }
    }
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<ParameterStore>> {
    Ok(paths.iter().map(|p| load_store(p)).collect::<scalecodec::Result<_>>()?)
}

fn eval(
    common: &Common,
    paths: &[PathBuf],
    out: &Path,
    label: Option<String>,
    metric: Metric,
    coder: bool,
) -> Result<()> {
    let c = config(common)?;
    let coder = coder && c.coder;
    let (_, val) = load_datasets(&c)?;
    let stores = load_all(paths)?;
    let label = label.unwrap_or_else(|| {
        out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "curve".into())
    });
    let curve = build_curve(&label, &stores.iter().collect::<Vec<_>>(), &val, metric, coder)?;
    write(out, curve.to_csv())?;
    echo_config(&c, out)
}

fn bd_entry(reference: &RateQualityCurve, test: &RateQualityCurve) -> BdEntry {
    let (r, dropped_r) = reference.pareto_frontier();
    let (t, dropped_t) = test.pareto_frontier();
    let mut notes = Vec::new();
    if dropped_r.len() + dropped_t.len() > 0 {
        notes.push(format!(
            "dropped {} dominated points from {} and {} from {}",
            dropped_r.len(),
            reference.label,
            dropped_t.len(),
            test.label
        ));
    }
    let (percent, overlap) = match bd_rate(&r, &t) {
        Ok(bd) => {
            notes.extend(bd.warning);
            (bd.percent, bd.overlap)
        }
        Err(e) => {
            notes.push(e.to_string());
            (f64::NAN, (f64::NAN, f64::NAN))
        }
    };
    BdEntry {
        reference: reference.label.clone(),
        test: test.label.clone(),
        bd_rate_percent: percent,
        overlap,
        warning: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}

fn save_run(ckpt: &Checkpoint, c: &ExperimentConfig, dir: &Path, name: &str, hashes: &mut BTreeMap<String, String>) -> Result<()> {
    finish(ckpt, c, &dir.join(format!("{name}.ckpt")))?;
    hashes.insert(name.to_string(), config_hash(c));
    Ok(())
}

fn with_weights(c: &ExperimentConfig, lb: f64, le: Option<f64>) -> ExperimentConfig {
    let mut c = c.clone();
    c.weights.lambda_base = lb;
    if let Some(le) = le {
        c.weights.lambda_enh = le;
    }
    c
}

fn sweep(common: &Common, proxy_path: Option<&Path>, dir: &Path, coder: bool) -> Result<()> {
    let c = config(common)?;
    let coder = coder && c.coder;
    std::fs::create_dir_all(dir).map_err(|e| scalecodec::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    write(&dir.join("config.txt"), c.to_text())?;
    let (train, val) = load_datasets(&c)?;
    let p = match proxy_path {
        Some(path) => load_store(path)?,
        None => {
            let p = proxy(&c, &train, &val)?;
            save_store(&p, &dir.join("proxy.ckpt"))?;
            p
        }
    };
    let mut hashes = BTreeMap::new();
    hashes.insert("experiment".to_string(), config_hash(&c));

    let mut bases = Vec::new();
    let mut joints = Vec::new();
    for (i, &lb) in c.lambda_grid.iter().enumerate() {
        let ci = with_weights(&c, lb, None);
        log::info!("sweep: base and baseline at lambda_base {lb}");
        let b = run(start_base(&p, &ci)?, &train, &ci, ci.schedule.total_epochs())?;
        save_run(&b, &ci, dir, &format!("base_{i}"), &mut hashes)?;
        bases.push(b);
        let j = run(start_joint(&p, &ci)?, &train, &ci, ci.schedule.total_epochs())?;
        save_run(&j, &ci, dir, &format!("joint_{i}"), &mut hashes)?;
        joints.push(j);
    }

    // The enhancement sweep runs on the grid point nearest the configured
    // base weight.
    let anchor = nearest(&c.lambda_grid, c.weights.lambda_base);
    let mut enhs = Vec::new();
    for (i, &le) in c.lambda_enh_grid.iter().enumerate() {
        let ci = with_weights(&c, c.lambda_grid[anchor], Some(le));
        log::info!("sweep: enhancement at lambda_enh {le}");
        let e = run(start_enhancement(&bases[anchor], &ci)?, &train, &ci, ci.schedule.total_epochs())?;
        save_run(&e, &ci, dir, &format!("enh_{i}"), &mut hashes)?;
        enhs.push(e);
    }

    let seq_task = build_curve("sequential-base", &stores(&bases), &val, Metric::Accuracy, coder)?;
    let joint_task = build_curve("joint-base", &stores(&joints), &val, Metric::Accuracy, coder)?;
    let joint_recon = build_curve("joint-recon", &stores(&joints), &val, Metric::Psnr, coder)?;
    let mut curves = vec![seq_task.clone(), joint_task.clone(), joint_recon.clone()];
    let mut bd = vec![bd_entry(&joint_task, &seq_task)];
    let mut even = Vec::new();
    if enhs.len() >= 2 {
        let seq_recon = build_curve("sequential-recon", &stores(&enhs), &val, Metric::Psnr, coder)?;
        bd.push(bd_entry(&joint_recon, &seq_recon));
        curves.push(seq_recon);
    }
    // A single-layer reference rate: the baseline at the same base weight,
    // decoded with both layers.
    let single = operating_point(&joints[anchor].store, &val, Metric::Psnr, coder)?.bpp;
    let base_rate = operating_point(&bases[anchor].store, &val, Metric::Accuracy, coder)?.bpp;
    for (e, &le) in enhs.iter().zip(&c.lambda_enh_grid) {
        let total = operating_point(&e.store, &val, Metric::Psnr, coder)?.bpp;
        let input = BreakEvenInput {
            r_b: base_rate / single,
            r_t: total / single,
        };
        even.push(BreakEvenEntry {
            label: format!("lambda_enh={le}"),
            r_b: input.r_b,
            r_t: input.r_t,
            f_threshold: break_even(input)?,
        });
    }
    emit_report(&curves, &bd, &even, &hashes, dir)?;
    Ok(())
}

fn stores(v: &[Checkpoint]) -> Vec<&ParameterStore> {
    v.iter().map(|k| &k.store).collect()
}

fn nearest(grid: &[f64], target: f64) -> usize {
    (0..grid.len())
        .min_by(|&a, &b| {
            let da = (grid[a].ln() - target.ln()).abs();
            let db = (grid[b].ln() - target.ln()).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(0)
}

fn read_curve(path: &Path) -> Result<RateQualityCurve> {
    let text = String::from_utf8(read(path)?)
        .map_err(|_| scalecodec::Error::Eval(format!("{}: not utf-8", path.display())))?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(RateQualityCurve::from_csv(&label, QualityKind::Accuracy, &text)?)
}

#[derive(Serialize)]
struct BdJson {
    bd_rate_percent: f64,
    overlap: (f64, f64),
    warning: Option<String>,
}

fn bdrate(reference: &Path, test: &Path) -> Result<()> {
    let bd = bd_rate(&read_curve(reference)?, &read_curve(test)?)?;
    let json = BdJson {
        bd_rate_percent: bd.percent,
        overlap: bd.overlap,
        warning: bd.warning,
    };
    println!("{}", serde_json::to_string(&json)?);
    Ok(())
}

#[derive(Serialize)]
struct BreakEvenJson {
    r_b: f64,
    r_t: f64,
    f_threshold: f64,
}

fn breakeven(r_b: f64, r_t: f64) -> Result<()> {
    let f_threshold = break_even(BreakEvenInput { r_b, r_t })?;
    println!("{}", serde_json::to_string(&BreakEvenJson { r_b, r_t, f_threshold })?);
    Ok(())
}

fn make_dataset(common: &Common, out: &Path) -> Result<()> {
    let c = config(common)?;
    let (train, val): (LabeledDataset, LabeledDataset) = load_datasets(&c)?;
    save_manifest(out, &[&train, &val])?;
    Ok(())
}
