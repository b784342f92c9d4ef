//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.
//!
//! The desk experiment (criteria 1, 7 and 9) trains the sequential codec and
//! the joint baseline over the same six-point λ grid for two seeds.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalecodec::codec::{preview_only, run_direct, zero_residual, Layers};
use scalecodec::config::ExperimentConfig;
use scalecodec::data::LabeledDataset;
use scalecodec::entropy::model::DEFAULT_ESCAPE;
use scalecodec::entropy::{decode_layer, encode_layer, estimate_rate_bits, EntropyModel};
use scalecodec::eval::{
    bd_rate, break_even, build_curve, ib_discrete_check, mean, psnr, relative_rate, BreakEvenInput,
    Metric, Point, QualityKind, RateQualityCurve,
};
use scalecodec::experiment::{load_datasets, proxy, sweep_base, sweep_enhancement, sweep_joint};
use scalecodec::params::Role;
use scalecodec::tensor::{snap_to_grid, ImageKind, LatentTensor, LayerTag, Tensor};
use scalecodec::training::Checkpoint;
use scalecodec::transforms::{image, reconstruct, residual_image};

const SEEDS: [u64; 2] = [0, 1];
const HIDDEN: usize = 32;
const TRAIN_IMAGES: usize = 2000;
const VAL_IMAGES: usize = 500;
const STAGE1_EPOCHS: usize = 6;
const STAGE2_EPOCHS: usize = 2;

const CODER_PAIRS: usize = 1000;
const IB_TABLES: usize = 50;
const GRADIENT_TOLERANCE: f64 = 1e-3;
const ENHANCEMENT_GAIN_DB: f64 = 1.0;
const ACCURACY_SLACK: f64 = 1.0;

type Outcome = Result<String, String>;

fn desk_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.arch.hidden = HIDDEN;
    c.synthetic_train = TRAIN_IMAGES;
    c.synthetic_val = VAL_IMAGES;
    c.schedule.stage1_epochs = STAGE1_EPOCHS;
    c.schedule.stage2_epochs = STAGE2_EPOCHS;
    c.schedule.decay_interval = 1;
    c.seed = seed;
    c
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fmt_points(c: &RateQualityCurve) -> String {
    c.points()
        .iter()
        .map(|p| format!("({:.4}, {:.2})", p.bpp, p.quality))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Latent drawn symbol by symbol from the model's own pmf.
fn sample_latent(model: &EntropyModel, shape: [usize; 3], rng: &mut impl Rng) -> LatentTensor {
    let s = model.s_max();
    let mut data = Vec::with_capacity(shape.iter().product());
    for c in 0..shape[0] {
        let pmf: Vec<f64> = (-s..=s).map(|q| model.pmf(c, q).unwrap()).collect();
        for _ in 0..shape[1] * shape[2] {
            let mut u = rng.gen::<f64>();
            let mut q = s;
            for (i, p) in pmf.iter().enumerate() {
                if u < *p {
                    q = i as i32 - s;
                    break;
                }
                u -= p;
            }
            data.push(f64::from(q));
        }
    }
    LatentTensor::new(Tensor::from_vec(shape[0], shape[1], shape[2], data).unwrap(), model.layer, true)
}

fn coder_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst_low = f64::INFINITY;
    let mut worst_high = f64::NEG_INFINITY;
    for i in 0..CODER_PAIRS {
        let channels = rng.gen_range(1..=4);
        let shape = [channels, rng.gen_range(1..=8), rng.gen_range(1..=8)];
        let loc = (0..channels).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let scale = (0..channels).map(|_| rng.gen_range(-2.0f64..3.0).exp()).collect();
        let model = EntropyModel::new(LayerTag::Base, loc, scale, 64, DEFAULT_ESCAPE).unwrap();
        let y = sample_latent(&model, shape, &mut rng);
        let payload = encode_layer(&y, &model).map_err(|e| format!("pair {i}: {e}"))?;
        let back = decode_layer(&payload, &model, shape).map_err(|e| format!("pair {i}: {e}"))?;
        ensure(back == y, || format!("pair {i}: decode differs from input"))?;
        let est = estimate_rate_bits(&y, &model).unwrap();
        let bits = 8.0 * payload.len() as f64;
        worst_low = worst_low.min(bits - (est - 8.0));
        worst_high = worst_high.max(bits - (1.02 * est + 128.0));
        ensure(bits >= est - 8.0 && bits <= 1.02 * est + 128.0, || {
            format!("pair {i}: {bits} bits against an estimate of {est:.1}")
        })?;
    }
    Ok(format!(
        "{CODER_PAIRS} pairs lossless; bits - (est - 8) >= {worst_low:.1}, bits - (1.02 est + 128) <= {worst_high:.1}"
    ))
}

fn bd_oracle() -> Outcome {
    let start = Instant::now();
    let base = [(0.1, 30.0), (0.2, 50.0), (0.4, 65.0), (0.8, 72.0), (1.6, 76.0)];
    let curve = |k: f64, dq: f64| {
        let pts = base.iter().map(|&(r, q)| Point { bpp: k * r, quality: q + dq }).collect();
        RateQualityCurve::new("c", QualityKind::Accuracy, pts).unwrap()
    };
    let r = curve(1.0, 0.0);
    let same = bd_rate(&r, &r).unwrap().percent;
    let up = bd_rate(&r, &curve(1.25, 0.0)).unwrap().percent;
    let half = bd_rate(&r, &curve(0.5, 0.0)).unwrap().percent;
    let t = curve(0.8, 0.0);
    let plain = bd_rate(&r, &t).unwrap().percent;
    let shifted = bd_rate(&curve(1.0, 7.5), &curve(0.8, 7.5)).unwrap().percent;
    let elapsed = start.elapsed();
    ensure(same.abs() <= 1e-9, || format!("identical curves gave {same}"))?;
    ensure((up - 25.0).abs() <= 1e-6, || format!("x1.25 gave {up}"))?;
    ensure((half + 50.0).abs() <= 1e-6, || format!("x0.5 gave {half}"))?;
    ensure((plain - shifted).abs() <= 1e-9, || format!("quality shift moved {plain} to {shifted}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("identity {same:.1e}, x1.25 {up:.9}%, x0.5 {half:.9}%, shift delta {:.1e}, {elapsed:.2?}", plain - shifted))
}

fn break_even_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe);
    let n = 10_000;
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let input = BreakEvenInput { r_b: rng.gen_range(0.01..2.0), r_t: rng.gen_range(0.01..3.0) };
        let f = break_even(input).unwrap();
        let scan = (0..=n)
            .map(|k| k as f64 / n as f64)
            .filter(|&g| relative_rate(input, g) <= 1.0)
            .fold(None, |best: Option<f64>, g| Some(best.map_or(g, |b| b.max(g))))
            .unwrap_or(0.0);
        worst = worst.max((f - scan).abs());
        ensure((f - scan).abs() <= 1e-4, || format!("pair {i} {input:?}: {f} vs scan {scan}"))?;
    }
    for _ in 0..200 {
        let r_b = rng.gen_range(0.01..0.99);
        let r_t = rng.gen_range(1.01..4.0);
        let e = rng.gen_range(0.0..0.5);
        let f = break_even(BreakEvenInput { r_b, r_t }).unwrap();
        ensure(break_even(BreakEvenInput { r_b, r_t: r_t + e }).unwrap() <= f, || "not non-increasing in r_t".into())?;
        ensure(
            break_even(BreakEvenInput { r_b: (r_b + e).min(0.999), r_t }).unwrap() <= f,
            || "not non-increasing in r_b".into(),
        )?;
    }
    // Total rates of three two-layer systems, in percent over the single-layer codec.
    let totals = [28.90, 71.46, 92.86];
    for k in 1..100 {
        let r_b = k as f64 / 100.0;
        let f: Vec<f64> = totals
            .iter()
            .map(|t| break_even(BreakEvenInput { r_b, r_t: 1.0 + t / 100.0 }).unwrap())
            .collect();
        ensure(f[0] > f[1] && f[1] > f[2], || format!("ordering broken at r_b={r_b}: {f:?}"))?;
    }
    Ok(format!("100 pairs, max |closed - scan| {worst:.1e}; monotone; threshold ordering of the three totals holds for r_b in (0, 1)"))
}

fn ib_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1b);
    let mut worst: f64 = 0.0;
    for i in 0..IB_TABLES {
        let nx = rng.gen_range(1..=64);
        let ny = rng.gen_range(1..=64);
        let table: Vec<usize> = (0..nx).map(|_| rng.gen_range(0..ny)).collect();
        let w: Vec<f64> = (0..nx).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z: f64 = w.iter().sum();
        let px: Vec<f64> = w.iter().map(|v| v / z).collect();
        let px = {
            let mut p = px;
            let rest: f64 = p[1..].iter().sum();
            p[0] = 1.0 - rest;
            p
        };
        let c = ib_discrete_check(&table, &px).map_err(|e| format!("table {i}: {e}"))?;
        ensure(c.h_y_given_x == 0.0, || format!("table {i}: H(Y|X) = {}", c.h_y_given_x))?;
        worst = worst.max((c.i_xy - c.h_y).abs());
        ensure((c.i_xy - c.h_y).abs() <= 1e-9, || format!("table {i}: I {} vs H {}", c.i_xy, c.h_y))?;
    }
    Ok(format!("{IB_TABLES} tables, H(Y|X) = 0, max |I - H(Y)| {worst:.1e}"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let cases = [
        ("base", common::base_gradient_check()),
        ("enhancement", common::enhancement_gradient_check()),
        ("joint", common::joint_gradient_check()),
    ];
    let elapsed = start.elapsed();
    let mut parts = Vec::new();
    for (name, (err, n)) in cases {
        ensure(err <= GRADIENT_TOLERANCE, || format!("{name}: max relative error {err:.2e}"))?;
        parts.push(format!("{name} {err:.1e} over {n}"));
    }
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("{}; {elapsed:.1?}", parts.join(", ")))
}

fn residual_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x8);
    for i in 0..200 {
        let side = 8 * rng.gen_range(1..=4);
        let grid = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..3 * side * side).map(|_| snap_to_grid(rng.gen_range(0.0..=1.0))).collect()
        };
        let x = image(Tensor::from_vec(3, side, side, grid(&mut rng)).unwrap(), ImageKind::Input).unwrap();
        let p = image(Tensor::from_vec(3, side, side, grid(&mut rng)).unwrap(), ImageKind::Preview).unwrap();
        let back = reconstruct(&p, &residual_image(&x, &p).unwrap()).unwrap();
        ensure(back.tensor() == x.tensor(), || format!("case {i}: identity broken"))?;
    }
    let c = common::miniature();
    let store = scalecodec::training::start_base(&common::store_with_proxy(&c, 3), &c).unwrap().store;
    for i in 0..20 {
        let x = common::random_image(16, 16, &mut rng);
        let pre = preview_only(&x, &store).unwrap();
        let res = residual_image(&x, &pre).unwrap();
        ensure(reconstruct(&pre, &res).unwrap().tensor() == x.tensor(), || format!("codec case {i}: identity broken"))?;
        let empty = reconstruct(&pre, &zero_residual(&x).unwrap()).unwrap();
        ensure(empty.tensor() == pre.tensor(), || format!("codec case {i}: zero residual moved the preview"))?;
        let stream = scalecodec::codec::encode_image(&x, &store, Layers::Base).unwrap();
        let decoded = scalecodec::codec::decode_image(&stream, &store).unwrap();
        ensure(decoded == pre, || format!("codec case {i}: base-only decode differs from the preview"))?;
    }
    Ok("200 random pairs and 20 codec previews exact; empty enhancement returns the preview bit for bit".into())
}

/// Everything the desk experiment produces for one seed.
struct Desk {
    seed: u64,
    val: LabeledDataset,
    proxy_accuracy: f64,
    bases: Vec<Checkpoint>,
    seq: RateQualityCurve,
    joint: RateQualityCurve,
    elapsed: Duration,
}

fn stores(v: &[Checkpoint]) -> Vec<&scalecodec::params::ParameterStore> {
    v.iter().map(|k| &k.store).collect()
}

fn desk(seed: u64) -> Result<Desk, String> {
    let start = Instant::now();
    let c = desk_config(seed);
    let (train, val) = load_datasets(&c).map_err(|e| e.to_string())?;
    let p = proxy(&c, &train, &val).map_err(|e| e.to_string())?;
    let proxy_accuracy = scalecodec::taskproxy::recorded_accuracy(&p).unwrap_or(f64::NAN);
    let bases = sweep_base(&c, &p, &train).map_err(|e| e.to_string())?;
    let joints = sweep_joint(&c, &p, &train).map_err(|e| e.to_string())?;
    let seq = build_curve("sequential-base", &stores(&bases), &val, Metric::Accuracy, true)
        .map_err(|e| e.to_string())?;
    let joint = build_curve("joint-base", &stores(&joints), &val, Metric::Accuracy, true)
        .map_err(|e| e.to_string())?;
    Ok(Desk { seed, val, proxy_accuracy, bases, seq, joint, elapsed: start.elapsed() })
}

fn directional(runs: &[Result<Desk, String>]) -> Outcome {
    let mut parts = Vec::new();
    let mut failed = false;
    for r in runs {
        let d = r.as_ref().map_err(|e| e.clone())?;
        let (fs, _) = d.seq.pareto_frontier();
        let (fj, _) = d.joint.pareto_frontier();
        let bd = bd_rate(&fj, &fs);
        println!("  seed {} proxy accuracy {:.3}, {:.0?}", d.seed, d.proxy_accuracy, d.elapsed);
        println!("  seed {} sequential {}", d.seed, fmt_points(&d.seq));
        println!("  seed {} joint      {}", d.seed, fmt_points(&d.joint));
        match bd {
            Ok(b) => {
                failed |= !(b.percent < 0.0);
                parts.push(format!("seed {}: {:+.2}%", d.seed, b.percent));
            }
            Err(e) => {
                failed = true;
                parts.push(format!("seed {}: {e}", d.seed));
            }
        }
    }
    let text = format!("BD-Rate sequential vs joint base: {}", parts.join(", "));
    if failed {
        Err(text)
    } else {
        Ok(text)
    }
}

fn freeze_and_gain(run: &Result<Desk, String>) -> (Outcome, Option<RateQualityCurve>) {
    let d = match run {
        Ok(d) => d,
        Err(e) => return (Err(e.clone()), None),
    };
    let c = desk_config(d.seed);
    let (train, _) = match load_datasets(&c) {
        Ok(t) => t,
        Err(e) => return (Err(e.to_string()), None),
    };
    let anchor = c.lambda_grid.iter().position(|&l| l == c.weights.lambda_base).unwrap_or(0);
    let base = &d.bases[anchor];
    let enhs = match sweep_enhancement(&c, base, &train) {
        Ok(e) => e,
        Err(e) => return (Err(e.to_string()), None),
    };
    let curve = build_curve(
        "sequential-recon",
        &stores(&enhs),
        &d.val,
        Metric::Psnr,
        true,
    );
    let outcome = (|| {
        for (i, e) in enhs.iter().enumerate() {
            for role in [Role::Base, Role::Lst, Role::TaskProxy] {
                ensure(e.store.role_hash(&[role]) == base.store.role_hash(&[role]), || {
                    format!("enhancement run {i} changed {role:?} parameters")
                })?;
            }
        }
        let top = enhs.last().expect("non-empty grid");
        let mut gain = Vec::with_capacity(d.val.len());
        for (x, _) in d.val.iter() {
            let full = run_direct(x, &top.store, Layers::BaseEnh).map_err(|e| e.to_string())?;
            let pre = preview_only(x, &top.store).map_err(|e| e.to_string())?;
            let a = psnr(x, full.image.as_ref().unwrap()).map_err(|e| e.to_string())?;
            let b = psnr(x, &pre).map_err(|e| e.to_string())?;
            gain.push(a - b);
        }
        let g = mean(&gain);
        ensure(g >= ENHANCEMENT_GAIN_DB, || format!("enhancement gains only {g:.2} dB over the preview"))?;
        Ok(format!("base/lst/taskproxy bytes unchanged over {} runs; top-rate gain {g:.2} dB", enhs.len()))
    })();
    (outcome, curve.ok())
}

fn monotone(runs: &[Result<Desk, String>], recon: Option<&RateQualityCurve>) -> Outcome {
    let mut parts = Vec::new();
    for r in runs {
        let d = r.as_ref().map_err(|e| e.clone())?;
        let pts = d.seq.points();
        let drops: Vec<f64> = pts
            .windows(2)
            .map(|w| w[0].quality - w[1].quality)
            .filter(|&drop| drop > 0.0)
            .collect();
        ensure(d.seq.len() == 6, || format!("seed {}: {} distinct rates", d.seed, d.seq.len()))?;
        ensure(drops.len() <= 1, || format!("seed {}: {} accuracy drops {drops:?}", d.seed, drops.len()))?;
        ensure(drops.iter().all(|&x| x <= ACCURACY_SLACK), || {
            format!("seed {}: accuracy drop {drops:?} exceeds {ACCURACY_SLACK} points", d.seed)
        })?;
        parts.push(format!("seed {} accuracy drops {drops:?}", d.seed));
    }
    let recon = recon.ok_or("no reconstruction curve")?;
    println!("  seed {} recon {}", SEEDS[0], fmt_points(recon));
    let pts = recon.points();
    ensure(pts.len() == 4 && pts.windows(2).all(|w| w[1].quality > w[0].quality), || {
        format!("PSNR not strictly increasing in rate: {}", fmt_points(recon))
    })?;
    parts.push("PSNR strictly increasing over the enhancement sweep".into());
    Ok(parts.join("; "))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, outcome: Outcome) {
    match outcome {
        Ok(detail) => {
            println!("PASS {id} {name}: {detail}");
            results.push(true);
        }
        Err(detail) => {
            println!("FAIL {id} {name}: {detail}");
            results.push(false);
        }
    }
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    report(&mut results, 2, "coder integrity", guarded(coder_integrity));
    report(&mut results, 3, "BD-Rate oracle", guarded(bd_oracle));
    report(&mut results, 4, "break-even", guarded(break_even_check));
    report(&mut results, 5, "IB identity", guarded(ib_identity));
    report(&mut results, 6, "gradient checks", guarded(gradient_checks));
    report(&mut results, 8, "residual identity", guarded(residual_identity));

    let runs: Vec<Result<Desk, String>> = SEEDS
        .iter()
        .map(|&s| catch_unwind(AssertUnwindSafe(|| desk(s))).unwrap_or_else(|_| Err(format!("seed {s} panicked"))))
        .collect();
    report(&mut results, 1, "directional base-layer claim", guarded(|| directional(&runs)));
    let (freeze, recon) = freeze_and_gain(&runs[0]);
    report(&mut results, 7, "freeze invariants", freeze);
    report(&mut results, 9, "monotone operating points", guarded(|| monotone(&runs, recon.as_ref())));

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
