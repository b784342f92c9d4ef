#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalecodec::config::ExperimentConfig;
use scalecodec::params::{Gradients, ParameterStore, Role};
use scalecodec::taskproxy::{extract_reference_features, init_task_proxy};
use scalecodec::tensor::{snap_to_grid, ImageKind, ImageTensor, Tensor};
use scalecodec::training::{base_loss, enhancement_loss, joint_loss};
use scalecodec::transforms::{init_params, Nets};

/// Two-channel latents, width-2 stacks: small enough for exhaustive
/// finite differences.
pub fn miniature() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.arch.l_base = 2;
    c.arch.l_enh = 2;
    c.arch.hidden = 2;
    c.arch.feature_channels = 2;
    c.arch.proxy_width = 2;
    c.arch.classes = 2;
    c.image_size = 8;
    c.schedule.patch_size = 8;
    c
}

pub fn random_image(h: usize, w: usize, rng: &mut impl Rng) -> ImageTensor {
    let data = (0..3 * h * w).map(|_| snap_to_grid(rng.gen_range(0.1..0.9))).collect();
    ImageTensor::new(Tensor::from_vec(3, h, w, data).unwrap(), ImageKind::Input).unwrap()
}

/// Codec and proxy parameters for `config`.
pub fn store_with_proxy(config: &ExperimentConfig, seed: u64) -> ParameterStore {
    let mut p = init_params(config, seed).unwrap();
    init_task_proxy(&mut p, config, seed).unwrap();
    p
}

pub fn examples(p: &ParameterStore, n: usize, size: usize, seed: u64) -> Vec<scalecodec::training::Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = random_image(size, size, &mut rng);
            let f_ref = extract_reference_features(&x, p).unwrap().tensor().clone();
            scalecodec::training::Example {
                x: x.into_tensor(),
                f_ref,
            }
        })
        .collect()
}

/// Central-difference step, applied to the stored `f32` value.
const STEP: f32 = 1e-3;

/// Largest relative error over every scalar parameter in `roles`.
pub fn max_relative_error(
    p: &ParameterStore,
    roles: &[Role],
    loss: impl Fn(&ParameterStore, &mut Gradients) -> f64,
) -> (f64, usize) {
    let mut grads = Gradients::for_store(p);
    loss(p, &mut grads);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for idx in 0..p.len() {
        if !roles.contains(&p.param(idx).role) {
            continue;
        }
        let analytic = grads.get(idx).map(|g| g.to_vec());
        for j in 0..p.param(idx).values.len() {
            let w = p.param(idx).values[j];
            let (up, down) = (w + STEP, w - STEP);
            let mut q = p.clone();
            q.param_mut(idx).values[j] = up;
            let lu = loss(&q, &mut Gradients::for_store(&q));
            q.param_mut(idx).values[j] = down;
            let ld = loss(&q, &mut Gradients::for_store(&q));
            let numeric = (lu - ld) / (f64::from(up) - f64::from(down));
            let a = analytic.as_ref().map_or(0.0, |g| g[j]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
            checked += 1;
        }
    }
    (worst, checked)
}

/// Base objective on the miniature model: `(max relative error, scalars checked)`.
pub fn base_gradient_check() -> (f64, usize) {
    let c = miniature();
    let p = store_with_proxy(&c, 1);
    let batch = examples(&p, 2, 8, 2);
    max_relative_error(&p, &[Role::Base, Role::Lst], |q, g| {
        base_loss(&batch, q, 10.0, &mut ChaCha8Rng::seed_from_u64(3), g).unwrap().loss
    })
}

/// Enhancement objective on the miniature model. Also asserts that the
/// frozen roles receive no gradient.
pub fn enhancement_gradient_check() -> (f64, usize) {
    let c = miniature();
    let p = store_with_proxy(&c, 4);
    let batch = examples(&p, 2, 8, 5);
    let latents = vec![
        Tensor::from_vec(2, 1, 1, vec![0.25, 0.0]).unwrap(),
        Tensor::from_vec(2, 1, 1, vec![0.0, -0.25]).unwrap(),
    ];
    // Clamps are kinks; keep every clamped quantity away from its bounds.
    let nets = Nets::from_store(&p).unwrap();
    for (ex, yb) in batch.iter().zip(&latents) {
        let pre = nets.preview.forward(&p, yb).unwrap();
        assert!(pre.data().iter().all(|v| (0.005..0.995).contains(v)));
        let r = ex.x.zip_map(&pre, |a, b| a - b).unwrap();
        let y = nets.residual_analysis.forward(&p, &r).unwrap();
        let sum = pre.zip_map(&nets.residual_synthesis.forward(&p, &y).unwrap(), |a, b| a + b);
        assert!(sum.unwrap().data().iter().all(|v| (0.005..0.995).contains(v)));
    }
    let loss = |q: &ParameterStore, g: &mut Gradients| {
        enhancement_loss(&batch, &latents, q, 300.0, &mut ChaCha8Rng::seed_from_u64(6), g)
            .unwrap()
            .loss
    };
    let mut g = Gradients::for_store(&p);
    loss(&p, &mut g);
    assert_eq!(g.role_norm(&p, Role::Base), 0.0);
    assert_eq!(g.role_norm(&p, Role::TaskProxy), 0.0);
    assert!(g.role_norm(&p, Role::Preview) > 0.0);
    max_relative_error(&p, &[Role::Preview, Role::Residual], loss)
}

/// Joint objective on the miniature model.
pub fn joint_gradient_check() -> (f64, usize) {
    let c = miniature();
    let p = store_with_proxy(&c, 7);
    let batch = examples(&p, 2, 8, 8);
    max_relative_error(&p, &[Role::Joint, Role::Lst], |q, g| {
        joint_loss(&batch, q, 10.0, 100.0, &mut ChaCha8Rng::seed_from_u64(9), g)
            .unwrap()
            .loss
    })
}
