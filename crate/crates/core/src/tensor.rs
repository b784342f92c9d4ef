//! Dense channel-major tensors and the typed wrappers that flow between
//! transforms, the entropy coder and the task proxy.

use crate::error::{Error, Result};

/// A dense `(channels, height, width)` array of `f64`, channel-major then
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            shape: [c, h, w],
            data: vec![0.0; c * h * w],
        }
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f64) -> Self {
        Tensor {
            shape: [c, h, w],
            data: vec![value; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: [c, h, w],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    /// Number of spatial positions per channel.
    pub fn plane(&self) -> usize {
        self.shape[1] * self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        let idx = (c * self.shape[1] + y) * self.shape[2] + x;
        &mut self.data[idx]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape(other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn expect_shape(&self, shape: [usize; 3]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape(format!(
                "expected {:?}, got {:?}",
                shape, self.shape
            )));
        }
        Ok(())
    }

    /// Channels `range` as a new tensor.
    pub fn slice_channels(&self, range: std::ops::Range<usize>) -> Tensor {
        let plane = self.plane();
        Tensor {
            shape: [range.len(), self.shape[1], self.shape[2]],
            data: self.data[range.start * plane..range.end * plane].to_vec(),
        }
    }

    /// Stack two tensors along the channel axis.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape[1..] != other.shape[1..] {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Tensor {
            shape: [self.shape[0] + other.shape[0], self.shape[1], self.shape[2]],
            data,
        })
    }

    pub fn snap_to_grid(&mut self) {
        for v in &mut self.data {
            *v = snap_to_grid(*v);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Pixel values produced by loaders and synthesis heads are multiples of
/// `2^-PIXEL_GRID_BITS`. On this grid, differences and sums of in-range
/// pixels are exact in `f64`, so `preview + (x - preview) == x` holds
/// bit-exactly.
pub const PIXEL_GRID_BITS: i32 = 24;

#[inline]
pub fn snap_to_grid(v: f64) -> f64 {
    let k = f64::from(1u32 << PIXEL_GRID_BITS);
    (v * k).round() / k
}

/// Mean squared error between two equally shaped tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_shape(b.shape())?;
    if a.is_empty() {
        return Err(Error::Shape("mse of empty tensors".into()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// What an image-shaped tensor represents. Residuals live in `[-1, 1]`,
/// everything else in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Input,
    Reconstruction,
    Preview,
    Residual,
}

impl ImageKind {
    pub fn range(self) -> (f64, f64) {
        match self {
            ImageKind::Residual => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

/// A 3-channel image whose sides are positive multiples of 8.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub kind: ImageKind,
    tensor: Tensor,
}

impl ImageTensor {
    pub fn new(tensor: Tensor, kind: ImageKind) -> Result<Self> {
        let [c, h, w] = tensor.shape();
        if c != 3 {
            return Err(Error::Shape(format!("images have 3 channels, got {c}")));
        }
        if h < 8 || w < 8 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!(
                "image sides must be multiples of 8 and at least 8, got {h}x{w}"
            )));
        }
        let (lo, hi) = kind.range();
        if let Some(v) = tensor
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < lo || **v > hi)
        {
            return Err(Error::Invalid(format!(
                "{kind:?} image value {v} outside [{lo}, {hi}]"
            )));
        }
        Ok(ImageTensor { kind, tensor })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.height()
    }

    pub fn width(&self) -> usize {
        self.tensor.width()
    }

    pub fn pixels(&self) -> usize {
        self.tensor.plane()
    }

    pub(crate) fn expect_kind(&self, kind: ImageKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Invalid(format!(
                "expected {kind:?} image, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Which bitstream layer a latent belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerTag {
    Base,
    Enh,
    Joint,
}

impl LayerTag {
    pub fn id(self) -> u8 {
        match self {
            LayerTag::Base => 0,
            LayerTag::Enh => 1,
            LayerTag::Joint => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(LayerTag::Base),
            1 => Ok(LayerTag::Enh),
            2 => Ok(LayerTag::Joint),
            _ => Err(Error::Bitstream(format!("unknown layer id {id}"))),
        }
    }
}

/// Latent representation at 1/8 of the image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub layer: LayerTag,
    pub quantized: bool,
    tensor: Tensor,
}

impl LatentTensor {
    pub fn new(tensor: Tensor, layer: LayerTag, quantized: bool) -> Self {
        LatentTensor {
            layer,
            quantized,
            tensor,
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.channels()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.tensor.shape()
    }
}

/// Intermediate task-network features at 1/4 of the image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    tensor: Tensor,
}

impl FeatureMap {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if !tensor.all_finite() {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        Ok(FeatureMap { tensor })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn shape(&self) -> [usize; 3] {
        self.tensor.shape()
    }
}
