//! Minimal layer library with hand-written backward passes.
//!
//! Networks are plain sequences of [`Layer`]s evaluated over a
//! [`ParameterStore`]. Weights are stored as `f32`; all arithmetic runs in
//! `f64`. Convolutions go through im2col and a blocked matrix product.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::Tensor;

/// `c = alpha * op(a) * op(b) + beta * c` over row-major slices, with the
/// transposes expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these row/column strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_out(size: usize, k: usize, stride: usize) -> usize {
    let pad = k / 2;
    (size + 2 * pad - k) / stride + 1
}

/// Unfold `x` into a `(c*k*k) x (ho*wo)` matrix.
fn im2col(x: &Tensor, k: usize, stride: usize, ho: usize, wo: usize) -> Vec<f64> {
    let [c, h, w] = x.shape();
    let pad = k / 2;
    let p = ho * wo;
    let mut cols = vec![0.0; c * k * k * p];
    let xd = x.data();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = (ci * h + iy as usize) * w;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            cols[dst + ox] = xd[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `c x h x w` tensor.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Tensor {
    let pad = k / 2;
    let p = ho * wo;
    let mut out = Tensor::zeros(c, h, w);
    let od = out.data_mut();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = (ci * h + iy as usize) * w;
                    let src = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            od[dst + ix as usize] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// One step of a feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Zero-padded convolution, weight `[cout, cin, k, k]`, bias `[cout]`.
    Conv {
        name: String,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    },
    /// Stride-2 transposed convolution doubling both spatial sides. Weight
    /// `[cin, cout, k, k]`, bias `[cout]`.
    ConvT {
        name: String,
        cin: usize,
        cout: usize,
        k: usize,
    },
    Tanh,
    /// Nearest-neighbour 2x upsampling.
    Upsample2,
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// `(c, h, w) -> (c, 1, 1)` spatial mean.
    GlobalAvgPool,
    /// Fully connected on a `(cin, 1, 1)` tensor, weight `[cout, cin]`.
    Dense {
        name: String,
        cin: usize,
        cout: usize,
    },
}

impl Layer {
    pub fn conv(name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Layer {
        Layer::Conv {
            name: name.to_string(),
            cin,
            cout,
            k,
            stride,
        }
    }

    pub fn conv_t(name: &str, cin: usize, cout: usize, k: usize) -> Layer {
        Layer::ConvT {
            name: name.to_string(),
            cin,
            cout,
            k,
        }
    }

    pub fn dense(name: &str, cin: usize, cout: usize) -> Layer {
        Layer::Dense {
            name: name.to_string(),
            cin,
            cout,
        }
    }

    /// `(name, weight shape, bias len, fan_in)` for layers that own
    /// parameters.
    pub fn param_spec(&self) -> Option<(&str, Vec<usize>, usize, usize)> {
        match self {
            Layer::Conv {
                name,
                cin,
                cout,
                k,
                stride,
            } => Some((
                name,
                vec![*cout, *cin, *k, *k],
                *cout,
                (cin * k * k / (stride * stride)).max(1),
            )),
            Layer::ConvT { name, cin, cout, k } => {
                Some((name, vec![*cin, *cout, *k, *k], *cout, (cin * k * k / 4).max(1)))
            }
            Layer::Dense { name, cin, cout } => Some((name, vec![*cout, *cin], *cout, *cin)),
            _ => None,
        }
    }

    fn weights(p: &ParameterStore, name: &str) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
        let wi = p.require(&format!("{name}.weight"))?;
        let bi = p.require(&format!("{name}.bias"))?;
        Ok((wi, bi, p.param(wi).to_f64(), p.param(bi).to_f64()))
    }

    fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        Ok(match self {
            Layer::Conv {
                cin,
                cout,
                k,
                stride,
                name,
            } => {
                if c != *cin {
                    return Err(Error::Shape(format!(
                        "{name}: expected {cin} input channels, got {c}"
                    )));
                }
                [*cout, conv_out(h, *k, *stride), conv_out(w, *k, *stride)]
            }
            Layer::ConvT { cin, cout, name, .. } => {
                if c != *cin {
                    return Err(Error::Shape(format!(
                        "{name}: expected {cin} input channels, got {c}"
                    )));
                }
                [*cout, 2 * h, 2 * w]
            }
            Layer::Upsample2 => [c, 2 * h, 2 * w],
            Layer::GlobalAvgPool => [c, 1, 1],
            Layer::Dense { cin, cout, name } => {
                if c * h * w != *cin {
                    return Err(Error::Shape(format!(
                        "{name}: expected {cin} inputs, got {}",
                        c * h * w
                    )));
                }
                [*cout, 1, 1]
            }
            Layer::Tanh | Layer::Clamp { .. } => [c, h, w],
        })
    }

    fn forward(&self, p: &ParameterStore, x: &Tensor) -> Result<(Tensor, Option<Vec<f64>>)> {
        let [oc, oh, ow] = self.output_shape(x.shape())?;
        match self {
            Layer::Conv { name, k, stride, .. } => {
                let (_, _, w, b) = Self::weights(p, name)?;
                let cols = im2col(x, *k, *stride, oh, ow);
                let mut out = Tensor::zeros(oc, oh, ow);
                let plane = oh * ow;
                for (co, &bias) in b.iter().enumerate() {
                    out.data_mut()[co * plane..(co + 1) * plane].fill(bias);
                }
                let kk = x.channels() * k * k;
                gemm(oc, kk, plane, &w, false, &cols, false, 1.0, out.data_mut());
                Ok((out, Some(cols)))
            }
            Layer::ConvT { name, cin, k, .. } => {
                let (_, _, w, b) = Self::weights(p, name)?;
                let (h, wd) = (x.height(), x.width());
                let kk = oc * k * k;
                let mut cols = vec![0.0; kk * h * wd];
                gemm(kk, *cin, h * wd, &w, true, x.data(), false, 0.0, &mut cols);
                let mut out = col2im(&cols, oc, oh, ow, *k, 2, h, wd);
                let plane = oh * ow;
                for (co, &bias) in b.iter().enumerate() {
                    for v in &mut out.data_mut()[co * plane..(co + 1) * plane] {
                        *v += bias;
                    }
                }
                Ok((out, None))
            }
            Layer::Tanh => Ok((x.map(f64::tanh), None)),
            Layer::Clamp { lo, hi } => Ok((x.map(|v| v.clamp(*lo, *hi)), None)),
            Layer::Upsample2 => {
                let mut out = Tensor::zeros(oc, oh, ow);
                for c in 0..oc {
                    for y in 0..oh {
                        for xx in 0..ow {
                            *out.at_mut(c, y, xx) = x.at(c, y / 2, xx / 2);
                        }
                    }
                }
                Ok((out, None))
            }
            Layer::GlobalAvgPool => {
                let plane = x.plane() as f64;
                let data = (0..oc).map(|c| x.channel(c).iter().sum::<f64>() / plane).collect();
                Ok((Tensor::from_vec(oc, 1, 1, data)?, None))
            }
            Layer::Dense { name, cin, cout } => {
                let (_, _, w, b) = Self::weights(p, name)?;
                let mut out = Tensor::from_vec(*cout, 1, 1, b)?;
                gemm(*cout, *cin, 1, &w, false, x.data(), false, 1.0, out.data_mut());
                Ok((out, None))
            }
        }
    }

    /// Backpropagate `gy` through this layer, accumulating parameter
    /// gradients. Returns the input gradient when `need_input` is set.
    fn backward(
        &self,
        p: &ParameterStore,
        x: &Tensor,
        y: &Tensor,
        cols: Option<&Vec<f64>>,
        gy: &Tensor,
        grads: &mut Gradients,
        need_input: bool,
    ) -> Result<Option<Tensor>> {
        match self {
            Layer::Conv { name, k, stride, .. } => {
                let (wi, bi, w, _) = Self::weights(p, name)?;
                let [oc, oh, ow] = gy.shape();
                let plane = oh * ow;
                let kk = x.channels() * k * k;
                let owned;
                let cols = match cols {
                    Some(c) => c,
                    None => {
                        owned = im2col(x, *k, *stride, oh, ow);
                        &owned
                    }
                };
                {
                    let gw = grads.slot(wi, w.len());
                    gemm(oc, plane, kk, gy.data(), false, cols, true, 1.0, gw);
                }
                {
                    let gb = grads.slot(bi, oc);
                    for (co, g) in gb.iter_mut().enumerate() {
                        *g += gy.channel(co).iter().sum::<f64>();
                    }
                }
                if !need_input {
                    return Ok(None);
                }
                let mut gcols = vec![0.0; kk * plane];
                gemm(kk, oc, plane, &w, true, gy.data(), false, 0.0, &mut gcols);
                let [c, h, wd] = x.shape();
                Ok(Some(col2im(&gcols, c, h, wd, *k, *stride, oh, ow)))
            }
            Layer::ConvT { name, cin, k, .. } => {
                let (wi, bi, w, _) = Self::weights(p, name)?;
                let (h, wd) = (x.height(), x.width());
                let oc = gy.channels();
                let kk = oc * k * k;
                let gcols = im2col(gy, *k, 2, h, wd);
                {
                    let gw = grads.slot(wi, w.len());
                    gemm(*cin, h * wd, kk, x.data(), false, &gcols, true, 1.0, gw);
                }
                {
                    let gb = grads.slot(bi, oc);
                    for (co, g) in gb.iter_mut().enumerate() {
                        *g += gy.channel(co).iter().sum::<f64>();
                    }
                }
                if !need_input {
                    return Ok(None);
                }
                let mut gx = Tensor::zeros(*cin, h, wd);
                gemm(*cin, kk, h * wd, &w, false, &gcols, false, 0.0, gx.data_mut());
                Ok(Some(gx))
            }
            Layer::Tanh => Ok(Some(gy.zip_map(y, |g, t| g * (1.0 - t * t))?)),
            Layer::Clamp { lo, hi } => Ok(Some(gy.zip_map(x, |g, v| {
                if v < *lo || v > *hi {
                    0.0
                } else {
                    g
                }
            })?)),
            Layer::Upsample2 => {
                let mut gx = Tensor::zeros(x.channels(), x.height(), x.width());
                let [c, oh, ow] = gy.shape();
                for ci in 0..c {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            *gx.at_mut(ci, yy / 2, xx / 2) += gy.at(ci, yy, xx);
                        }
                    }
                }
                Ok(Some(gx))
            }
            Layer::GlobalAvgPool => {
                let [c, h, wd] = x.shape();
                let plane = (h * wd) as f64;
                let mut gx = Tensor::zeros(c, h, wd);
                for ci in 0..c {
                    let g = gy.data()[ci] / plane;
                    for v in &mut gx.data_mut()[ci * h * wd..(ci + 1) * h * wd] {
                        *v = g;
                    }
                }
                Ok(Some(gx))
            }
            Layer::Dense { name, cin, cout } => {
                let (wi, bi, w, _) = Self::weights(p, name)?;
                {
                    let gw = grads.slot(wi, w.len());
                    gemm(*cout, 1, *cin, gy.data(), false, x.data(), false, 1.0, gw);
                }
                {
                    let gb = grads.slot(bi, *cout);
                    for (g, d) in gb.iter_mut().zip(gy.data()) {
                        *g += d;
                    }
                }
                if !need_input {
                    return Ok(None);
                }
                let [c, h, wd] = x.shape();
                let mut gx = Tensor::zeros(c, h, wd);
                gemm(*cin, *cout, 1, &w, true, gy.data(), false, 0.0, gx.data_mut());
                Ok(Some(gx))
            }
        }
    }
}

/// Activations recorded by [`Stack::forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Tensor>,
    cols: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.acts[0]
    }
}

/// A feed-forward chain of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Stack { layers }
    }

    pub fn forward(&self, p: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(p, &cur)?.0;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, p: &ParameterStore, x: &Tensor) -> Result<Trace> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut cols = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for layer in &self.layers {
            let (y, c) = layer.forward(p, acts.last().unwrap())?;
            acts.push(y);
            cols.push(c);
        }
        Ok(Trace { acts, cols })
    }

    /// Propagate the output gradient back through the stack. The returned
    /// tensor is the gradient with respect to the stack input, or `None`
    /// when `need_input` is false.
    pub fn backward(
        &self,
        p: &ParameterStore,
        trace: &Trace,
        gy: Tensor,
        grads: &mut Gradients,
        need_input: bool,
    ) -> Result<Option<Tensor>> {
        let mut g = gy;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let want = need_input || i > 0;
            match layer.backward(
                p,
                &trace.acts[i],
                &trace.acts[i + 1],
                trace.cols[i].as_ref(),
                &g,
                grads,
                want,
            )? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    /// Allocate this stack's parameters with uniform fan-in scaled weights
    /// and zero biases.
    pub fn init_params(&self, store: &mut ParameterStore, rng: &mut impl rand::Rng) -> Result<()> {
        for layer in &self.layers {
            if let Some((name, wshape, blen, fan_in)) = layer.param_spec() {
                let bound = (3.0 / fan_in as f64).sqrt();
                store.init_uniform(&format!("{name}.weight"), &wshape, bound, rng)?;
                store.init_constant(&format!("{name}.bias"), &[blen], 0.0)?;
            }
        }
        Ok(())
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.layers
            .iter()
            .try_fold(input, |shape, layer| layer.output_shape(shape))
    }
}
