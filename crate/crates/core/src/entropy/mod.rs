//! Quantization, the factorized entropy model, rate estimation, the range
//! coder and the `.shmc` container.

pub mod container;
pub mod model;
pub mod range_coder;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Tensor};

pub use container::{pack_container, unpack_container, Container, LayerRecord};
pub use model::{estimate_rate_bits, rate_with_grad, EntropyModel, RateGrad};
use range_coder::{encode_symbol, RangeDecoder, RangeEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive `U(-0.5, 0.5)` noise, the differentiable training surrogate.
    Noise,
    /// Round half to even, clipped to the symbol support.
    Round,
}

pub fn quantize(
    y: &LatentTensor,
    mode: QuantMode,
    s_max: i32,
    rng: &mut impl Rng,
) -> Result<LatentTensor> {
    if y.quantized {
        return Err(Error::Invalid("latent is already quantized".into()));
    }
    let bound = f64::from(s_max);
    let t = match mode {
        QuantMode::Round => y.tensor().map(|v| v.round_ties_even().clamp(-bound, bound)),
        QuantMode::Noise => {
            let mut t = y.tensor().clone();
            for v in t.data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
            t
        }
    };
    Ok(LatentTensor::new(t, y.layer, mode == QuantMode::Round))
}

/// Entropy-code a quantized latent, channel-major then row-major.
pub fn encode_layer(y_hat: &LatentTensor, model: &EntropyModel) -> Result<Vec<u8>> {
    if !y_hat.quantized {
        return Err(Error::Entropy("only quantized latents can be coded".into()));
    }
    let t = y_hat.tensor();
    if t.channels() != model.channels() {
        return Err(Error::Entropy(format!(
            "latent has {} channels, model {}",
            t.channels(),
            model.channels()
        )));
    }
    let s_max = model.s_max();
    let mut enc = RangeEncoder::new();
    for c in 0..t.channels() {
        let cdf = model.cdf(c);
        for &v in t.channel(c) {
            let q = v as i32;
            if f64::from(q) != v || q.abs() > s_max {
                return Err(Error::Entropy(format!(
                    "symbol {v} not an integer in [-{s_max}, {s_max}]"
                )));
            }
            encode_symbol(&mut enc, &cdf, (q + s_max) as usize);
        }
    }
    Ok(enc.finish())
}

pub fn decode_layer(
    payload: &[u8],
    model: &EntropyModel,
    shape: [usize; 3],
) -> Result<LatentTensor> {
    let [c, h, w] = shape;
    if c != model.channels() {
        return Err(Error::Entropy(format!(
            "stream has {c} channels, model {}",
            model.channels()
        )));
    }
    let s_max = model.s_max();
    let mut dec = RangeDecoder::new(payload)?;
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let cdf = model.cdf(ch);
        for _ in 0..h * w {
            let sym = dec.decode_symbol(&cdf)?;
            data.push(f64::from(sym as i32 - s_max));
        }
    }
    dec.finish()?;
    Ok(LatentTensor::new(
        Tensor::from_vec(c, h, w, data)?,
        model.layer,
        true,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::LayerTag;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn latent(values: Vec<f64>) -> LatentTensor {
        let n = values.len();
        LatentTensor::new(Tensor::from_vec(1, 1, n, values).unwrap(), LayerTag::Base, false)
    }

    #[test]
    fn rounding_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = quantize(&latent(vec![1.4, -1.4, 2.5, -2.5, 0.5, 99.0]), QuantMode::Round, 64, &mut rng)
            .unwrap();
        assert_eq!(q.tensor().data(), &[1.0, -1.0, 2.0, -2.0, 0.0, 64.0]);
        assert!(q.quantized);
        assert!(quantize(&q, QuantMode::Round, 64, &mut rng).is_err());
    }

    #[test]
    fn noise_stays_within_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = latent((0..500).map(|i| i as f64 * 0.37 - 90.0).collect());
        let q = quantize(&y, QuantMode::Noise, 64, &mut rng).unwrap();
        assert!(!q.quantized);
        for (a, b) in q.tensor().data().iter().zip(y.tensor().data()) {
            assert!((a - b).abs() <= 0.5);
        }
    }

    #[test]
    fn zero_latent_round_trip_and_errors() {
        let model = EntropyModel::new(LayerTag::Base, vec![0.0; 2], vec![1.0; 2], 64, 1e-5).unwrap();
        let y = LatentTensor::new(Tensor::zeros(2, 3, 3), LayerTag::Base, true);
        let bytes = encode_layer(&y, &model).unwrap();
        assert_eq!(decode_layer(&bytes, &model, [2, 3, 3]).unwrap(), y);
        assert!(decode_layer(&bytes, &model, [3, 3, 3]).is_err());
        let bad = LatentTensor::new(Tensor::filled(2, 1, 1, 0.5), LayerTag::Base, true);
        assert!(encode_layer(&bad, &model).is_err());
        let unq = LatentTensor::new(Tensor::zeros(2, 1, 1), LayerTag::Base, false);
        assert!(encode_layer(&unq, &model).is_err());
    }

    #[test]
    fn empty_latent_payload_is_tiny() {
        let model = EntropyModel::new(LayerTag::Enh, vec![0.0], vec![1.0], 64, 1e-5).unwrap();
        let y = LatentTensor::new(Tensor::zeros(1, 0, 0), LayerTag::Enh, true);
        let bytes = encode_layer(&y, &model).unwrap();
        assert!(bytes.len() <= 4);
        assert_eq!(decode_layer(&bytes, &model, [1, 0, 0]).unwrap(), y);
    }
}
