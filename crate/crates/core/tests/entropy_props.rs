//! Coder losslessness, rate consistency and model normalization.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalecodec::entropy::{
    decode_layer, encode_layer, estimate_rate_bits, pack_container, unpack_container,
    EntropyModel, LayerRecord,
};
use scalecodec::tensor::{LatentTensor, LayerTag, Tensor};

fn model(loc: Vec<f64>, scale: Vec<f64>, s_max: i32) -> EntropyModel {
    EntropyModel::new(LayerTag::Base, loc, scale, s_max, 1.0 / 65536.0).unwrap()
}

/// Draw each symbol from the model's own pmf by inversion.
fn sample_latent(m: &EntropyModel, h: usize, w: usize, rng: &mut impl Rng) -> LatentTensor {
    let s = m.s_max();
    let mut data = Vec::new();
    for c in 0..m.channels() {
        for _ in 0..h * w {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut q = s;
            for k in -s..=s {
                acc += m.pmf(c, k).unwrap();
                if u < acc {
                    q = k;
                    break;
                }
            }
            data.push(f64::from(q));
        }
    }
    LatentTensor::new(Tensor::from_vec(m.channels(), h, w, data).unwrap(), LayerTag::Base, true)
}

fn arb_model() -> impl Strategy<Value = EntropyModel> {
    (1usize..5, 1i32..=64).prop_flat_map(|(c, s)| {
        (
            prop::collection::vec(-8.0f64..8.0, c),
            prop::collection::vec(0.05f64..40.0, c),
            Just(s),
        )
            .prop_map(|(l, sc, s)| model(l, sc, s))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decode_inverts_encode_for_any_in_range_symbols(
        m in arb_model(),
        h in 1usize..6,
        w in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = m.s_max();
        let data = (0..m.channels() * h * w).map(|_| f64::from(rng.gen_range(-s..=s))).collect();
        let y = LatentTensor::new(Tensor::from_vec(m.channels(), h, w, data).unwrap(), LayerTag::Base, true);
        let bytes = encode_layer(&y, &m).unwrap();
        let back = decode_layer(&bytes, &m, y.shape()).unwrap();
        prop_assert_eq!(back.tensor(), y.tensor());
    }

    #[test]
    fn coded_length_tracks_the_estimate(m in arb_model(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = sample_latent(&m, 8, 8, &mut rng);
        let est = estimate_rate_bits(&y, &m).unwrap();
        let actual = 8.0 * encode_layer(&y, &m).unwrap().len() as f64;
        prop_assert!(actual <= est * 1.02 + 128.0, "actual {} estimate {}", actual, est);
        prop_assert!(actual >= est - 8.0, "actual {} estimate {}", actual, est);
    }

    #[test]
    fn pmf_sums_to_one_and_respects_the_floor(mu in -70.0f64..70.0, sigma in 0.05f64..100.0, s in 1i32..=64) {
        let m = model(vec![mu], vec![sigma], s);
        let n = f64::from(2 * s + 1);
        let mut total = 0.0;
        for q in -s..=s {
            let p = m.pmf(0, q).unwrap();
            prop_assert!(p >= m.escape() / n * (1.0 - 1e-12));
            total += p;
        }
        prop_assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn container_round_trip_is_identity(
        payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 1..4),
        hash in any::<u32>(),
        hb in 1u16..64,
        wb in 1u16..64,
    ) {
        let tags = [LayerTag::Base, LayerTag::Enh, LayerTag::Joint];
        let layers: Vec<LayerRecord> = payloads
            .into_iter()
            .enumerate()
            .map(|(i, payload)| LayerRecord { layer: tags[i], channels: 3, height: hb, width: wb, payload })
            .collect();
        let bytes = pack_container(layers.clone(), usize::from(hb) * 8, usize::from(wb) * 8, hash).unwrap();
        let c = unpack_container(&bytes).unwrap();
        prop_assert_eq!(&c.layers, &layers);
        prop_assert_eq!(c.model_hash, hash);
        prop_assert_eq!((c.height, c.width), (hb * 8, wb * 8));
        prop_assert_eq!(c.byte_len(), bytes.len());
    }
}

#[test]
fn zero_data_rate_grows_with_scale() {
    let y = LatentTensor::new(Tensor::zeros(1, 4, 4), LayerTag::Base, true);
    let mut prev = 0.0;
    for i in 0..=200 {
        let sigma = 0.1 * (100f64).powf(i as f64 / 200.0);
        let bits = estimate_rate_bits(&y, &model(vec![0.0], vec![sigma], 64)).unwrap();
        assert!(bits >= prev - 1e-12, "sigma {sigma}: {bits} < {prev}");
        prev = bits;
    }
}

#[test]
fn all_zero_and_truncated_payloads() {
    let m = model(vec![0.0, 1.0], vec![1.0, 2.0], 64);
    let y = LatentTensor::new(Tensor::zeros(2, 3, 3), LayerTag::Base, true);
    let bytes = encode_layer(&y, &m).unwrap();
    assert_eq!(decode_layer(&bytes, &m, [2, 3, 3]).unwrap().tensor(), y.tensor());
    assert_eq!(encode_layer(&y, &m).unwrap(), bytes);
    let big = sample_latent(&m, 8, 8, &mut ChaCha8Rng::seed_from_u64(1));
    let bytes = encode_layer(&big, &m).unwrap();
    assert!(decode_layer(&bytes[..bytes.len() - 1], &m, [2, 8, 8]).is_err());
}
