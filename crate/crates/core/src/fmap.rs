//! Feature-map kernels.
//!
//! Everything here operates on a single `C x H x W` activation block stored
//! channel-major. Payloads are `f32`; every reduction accumulates in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `C x H x W` activation block, channel-major (channel, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {self}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(channels, height, width);
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "tensor {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FeatureTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_shape(shape: Shape, data: Vec<f32>) -> Result<Self> {
        Self::new(shape.channels, shape.height, shape.width, data)
    }

    /// Builds a tensor from per-channel planes, each `height * width` long.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for (j, p) in planes.iter().enumerate() {
            if p.len() != height * width {
                return Err(Error::invalid(format!(
                    "plane {j} has {} elements, expected {}",
                    p.len(),
                    height * width
                )));
            }
            data.extend_from_slice(p);
        }
        Self::new(planes.len(), height, width, data)
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The `height * width` plane of channel `j`.
    pub fn channel(&self, j: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[j * plane..(j + 1) * plane]
    }
}

/// Binary channel-selection vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    bits: Vec<bool>,
    selected: usize,
}

impl ChannelMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        let selected = bits.iter().filter(|&&b| b).count();
        if selected == 0 {
            return Err(Error::invalid("channel mask selects no channels"));
        }
        Ok(ChannelMask { bits, selected })
    }

    pub fn all(len: usize) -> Result<Self> {
        Self::new(vec![true; len])
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; len];
        for &i in indices {
            if i >= len {
                return Err(Error::invalid(format!(
                    "channel index {i} out of range for mask of length {len}"
                )));
            }
            bits[i] = true;
        }
        Self::new(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn selected_count(&self) -> usize {
        self.selected
    }

    /// Selected channel indices in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }
}

/// Aggregate per-channel variance over a calibration population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoVector {
    pub psi: Vec<f64>,
}

/// Flattened embedding of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Population variance of one feature plane (divides by `H * W`).
pub fn channel_variance<T: Copy + Into<f64>>(plane: &[T]) -> Result<f64> {
    if plane.is_empty() {
        return Err(Error::invalid("variance of an empty grid"));
    }
    let n = plane.len() as f64;
    let mean = plane.iter().map(|&v| v.into()).sum::<f64>() / n;
    let ss = plane
        .iter()
        .map(|&v| {
            let d = v.into() - mean;
            d * d
        })
        .sum::<f64>();
    Ok(ss / n)
}

/// Streaming accumulator for the aggregate channel information.
///
/// Partial accumulators over disjoint sample sets can be merged in any order.
#[derive(Debug, Clone)]
pub struct InfoAccumulator {
    shape: Option<Shape>,
    psi: Vec<f64>,
    count: usize,
}

impl Default for InfoAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl InfoAccumulator {
    pub fn new() -> Self {
        InfoAccumulator {
            shape: None,
            psi: Vec::new(),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn check_shape(&mut self, shape: Shape) -> Result<()> {
        match self.shape {
            None => {
                self.shape = Some(shape);
                self.psi = vec![0.0; shape.channels];
                Ok(())
            }
            Some(s) if s == shape => Ok(()),
            Some(s) => Err(Error::invalid(format!(
                "sample shape {shape} differs from {s}"
            ))),
        }
    }

    pub fn push(&mut self, x: &FeatureTensor) -> Result<()> {
        self.check_shape(x.shape())?;
        for (j, acc) in self.psi.iter_mut().enumerate() {
            *acc += channel_variance(x.channel(j))?;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(mut self, other: InfoAccumulator) -> Result<Self> {
        let Some(shape) = other.shape else {
            return Ok(self);
        };
        self.check_shape(shape)?;
        for (a, b) in self.psi.iter_mut().zip(&other.psi) {
            *a += b;
        }
        self.count += other.count;
        Ok(self)
    }

    pub fn finish(self) -> Result<InfoVector> {
        if self.count == 0 {
            return Err(Error::invalid("no samples accumulated"));
        }
        Ok(InfoVector { psi: self.psi })
    }
}

/// `psi[j]` = sum over samples of the variance of channel `j`.
pub fn aggregate_channel_information(samples: &[FeatureTensor]) -> Result<InfoVector> {
    if samples.is_empty() {
        return Err(Error::invalid("empty sample sequence"));
    }
    let shape = samples[0].shape();
    if let Some(bad) = samples.iter().find(|s| s.shape() != shape) {
        return Err(Error::invalid(format!(
            "sample shape {} differs from {shape}",
            bad.shape()
        )));
    }
    // Fixed-size chunks summed in order keep the result independent of the
    // thread count.
    use rayon::prelude::*;
    let partials: Vec<InfoAccumulator> = samples
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = InfoAccumulator::new();
            for s in chunk {
                acc.push(s)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    partials
        .into_iter()
        .try_fold(InfoAccumulator::new(), InfoAccumulator::merge)?
        .finish()
}

pub(crate) const REDUCE_CHUNK: usize = 256;

/// Mask of the `n` channels with the largest `psi`; ties go to the lower index.
pub fn select_top_channels(info: &InfoVector, n: usize) -> Result<ChannelMask> {
    let c = info.psi.len();
    if n == 0 || n > c {
        return Err(Error::invalid(format!(
            "cannot select {n} of {c} channels"
        )));
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| info.psi[b].total_cmp(&info.psi[a]).then(a.cmp(&b)));
    ChannelMask::from_indices(c, &order[..n])
}

/// Keeps only the masked channels, in ascending index order.
pub fn indexed_pool(x: &FeatureTensor, mask: &ChannelMask) -> Result<FeatureTensor> {
    if mask.len() != x.channels {
        return Err(Error::invalid(format!(
            "mask length {} does not match {} channels",
            mask.len(),
            x.channels
        )));
    }
    let mut data = Vec::with_capacity(mask.selected_count() * x.height * x.width);
    for j in mask.indices() {
        data.extend_from_slice(x.channel(j));
    }
    FeatureTensor::new(mask.selected_count(), x.height, x.width, data)
}

fn check_pool(height: usize, width: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("pool size must be positive"));
    }
    if k > height || k > width {
        return Err(Error::invalid(format!(
            "pool size {k} exceeds plane {height}x{width}"
        )));
    }
    Ok(())
}

/// Appends the `k x k` stride-`k` max-pool of one plane to `out`.
/// Trailing rows and columns that do not fill a window are dropped.
fn pool_plane(plane: &[f32], height: usize, width: usize, k: usize, out: &mut Vec<f32>) {
    let (oh, ow) = (height / k, width / k);
    let start = out.len();
    out.resize(start + oh * ow, f32::NEG_INFINITY);
    let cells = &mut out[start..];
    for r in 0..oh * k {
        let row = &plane[r * width..r * width + ow * k];
        let dst = &mut cells[(r / k) * ow..(r / k + 1) * ow];
        for (cell, window) in dst.iter_mut().zip(row.chunks_exact(k)) {
            for &v in window {
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
}

/// Non-overlapping `k x k` max-pooling with stride `k`.
pub fn max_pool(x: &FeatureTensor, k: usize) -> Result<FeatureTensor> {
    check_pool(x.height, x.width, k)?;
    let mut data = Vec::with_capacity(x.channels * (x.height / k) * (x.width / k));
    for j in 0..x.channels {
        pool_plane(x.channel(j), x.height, x.width, k, &mut data);
    }
    FeatureTensor::new(x.channels, x.height / k, x.width / k, data)
}

/// Length of the embedding produced for `shape` under `mask` and `k`.
pub fn embedding_len(shape: Shape, selected: usize, k: usize) -> usize {
    if k == 0 {
        return 0;
    }
    selected
        .saturating_mul(shape.height / k)
        .saturating_mul(shape.width / k)
}

/// `flatten(max_pool(indexed_pool(x, mask), k))`, without materialising the
/// intermediate tensor.
pub fn embed(x: &FeatureTensor, mask: &ChannelMask, k: usize) -> Result<Embedding> {
    if mask.len() != x.channels {
        return Err(Error::invalid(format!(
            "mask length {} does not match {} channels",
            mask.len(),
            x.channels
        )));
    }
    check_pool(x.height, x.width, k)?;
    let mut out = Vec::with_capacity(embedding_len(x.shape(), mask.selected_count(), k));
    for j in mask.indices() {
        pool_plane(x.channel(j), x.height, x.width, k, &mut out);
    }
    Ok(Embedding(out))
}
