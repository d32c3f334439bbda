//! Forward and backward passes of the benchmark network's building
//! blocks: 1-D convolution, ReLU, dropout, temporal pooling, batch
//! normalization, dense output, and the stable softmax.
//!
//! Every forward returns a cache holding exactly what its backward needs
//! to be the exact adjoint of the recorded computation.

mod conv;
mod network;
mod norm;

pub use conv::{Conv1d, Conv1dCache, Conv1dGrads, Padding};
pub use network::{CnnTrunk, TrunkBatchCache, TrunkConfig, TrunkGrads};
pub use norm::{BatchNorm1d, BatchNormCache, BatchNormGrads, BATCH_NORM_EPS};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

// ---------------------------------------------------------------- relu

/// Elementwise max(x, 0). The cache is the input; the subgradient at 0
/// is taken as 0.
pub fn relu_forward(input: &Tensor) -> (Tensor, Tensor) {
    let out: Vec<f64> = input.data().iter().map(|&v| v.max(0.0)).collect();
    (
        Tensor::from_parts(input.shape().to_vec(), out),
        input.clone(),
    )
}

/// Routes gradient only through positions where the recorded input was
/// strictly positive.
pub fn relu_backward(grad_out: &Tensor, cache: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != cache.shape() {
        return Err(Error::State(format!(
            "relu backward: grad shape {:?} does not match cached input {:?}",
            grad_out.shape(),
            cache.shape()
        )));
    }
    let data: Vec<f64> = grad_out
        .data()
        .iter()
        .zip(cache.data())
        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(grad_out.shape().to_vec(), data))
}

// --------------------------------------------------------------- dense

/// Fully connected layer: `out = weights · x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor, // [out × in]
    pub bias: Tensor,    // [out]
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 2 || bias.shape() != [ws[0]] {
            return Err(Error::Dimension(format!(
                "dense expects weights [out × in] with matching bias, got {:?} / {:?}",
                ws,
                bias.shape()
            )));
        }
        Ok(Dense { weights, bias })
    }

    /// Fan-in-scaled uniform initialization (ReLU gain), zero bias.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut RngStream) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let data: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        Dense {
            weights: Tensor::from_parts(vec![out_dim, in_dim], data),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, DenseCache)> {
        if input.shape() != [self.in_dim()] {
            return Err(Error::Dimension(format!(
                "dense expects [{}], got {:?}",
                self.in_dim(),
                input.shape()
            )));
        }
        let mut out = self.bias.data().to_vec();
        for (o, row) in out.iter_mut().zip(0..self.out_dim()) {
            *o += crate::tensor::dot(self.weights.row(row), input.data());
        }
        Ok((
            Tensor::from_parts(vec![self.out_dim()], out),
            DenseCache {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(&self, grad_out: &Tensor, cache: &DenseCache) -> Result<(Tensor, DenseGrads)> {
        if grad_out.shape() != [self.out_dim()] {
            return Err(Error::State(format!(
                "dense backward: grad shape {:?} does not match [{}]",
                grad_out.shape(),
                self.out_dim()
            )));
        }
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        let mut grad_w = vec![0.0; out_dim * in_dim];
        let mut grad_in = vec![0.0; in_dim];
        for o in 0..out_dim {
            let g = grad_out.data()[o];
            let w_row = self.weights.row(o);
            let gw_row = &mut grad_w[o * in_dim..(o + 1) * in_dim];
            for j in 0..in_dim {
                gw_row[j] = g * cache.input.data()[j];
                grad_in[j] += g * w_row[j];
            }
        }
        Ok((
            Tensor::from_parts(vec![in_dim], grad_in),
            DenseGrads {
                weights: Tensor::from_parts(vec![out_dim, in_dim], grad_w),
                bias: grad_out.clone(),
            },
        ))
    }
}

// ------------------------------------------------------------- pooling

/// Temporal pooling kind. Both collapse the full time axis to one value
/// per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Mean,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    kind: PoolKind,
    time: usize,
    /// For max pooling: winning time index per channel (lowest index on
    /// ties).
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Pools `[C × time]` down to `[C]` over the whole temporal axis.
pub fn pool_forward(input: &Tensor, kind: PoolKind) -> Result<(Tensor, PoolCache)> {
    let s = input.shape();
    if s.len() != 2 || s[1] == 0 {
        return Err(Error::Dimension(format!(
            "pooling expects [C × time] with time ≥ 1, got {s:?}"
        )));
    }
    let (channels, time) = (s[0], s[1]);
    let mut out = vec![0.0; channels];
    let mut argmax = vec![0usize; channels];
    for c in 0..channels {
        let row = input.row(c);
        match kind {
            PoolKind::Max => {
                let mut best = row[0];
                let mut best_t = 0;
                for (t, &v) in row.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        best_t = t;
                    }
                }
                out[c] = best;
                argmax[c] = best_t;
            }
            PoolKind::Mean => {
                out[c] = row.iter().sum::<f64>() / time as f64;
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![channels], out),
        PoolCache { kind, time, argmax },
    ))
}

/// Max pooling routes each channel's gradient to exactly the recorded
/// argmax position; mean pooling spreads it uniformly.
pub fn pool_backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    let channels = grad_out.len();
    if grad_out.shape().len() != 1 || (cache.kind == PoolKind::Max && cache.argmax.len() != channels)
    {
        return Err(Error::State("pool backward: cache does not match grad".into()));
    }
    let time = cache.time;
    let mut grad_in = vec![0.0; channels * time];
    match cache.kind {
        PoolKind::Max => {
            for c in 0..channels {
                grad_in[c * time + cache.argmax[c]] = grad_out.data()[c];
            }
        }
        PoolKind::Mean => {
            for c in 0..channels {
                let g = grad_out.data()[c] / time as f64;
                grad_in[c * time..(c + 1) * time].iter_mut().for_each(|v| *v = g);
            }
        }
    }
    Ok(Tensor::from_parts(vec![channels, time], grad_in))
}

// ------------------------------------------------------------- dropout

#[derive(Debug, Clone)]
pub struct DropoutCache {
    /// Elementwise multiplier applied in the forward pass ({0, 1/keep} in
    /// training, all ones at inference).
    mask: Tensor,
}

impl DropoutCache {
    pub fn mask(&self) -> &Tensor {
        &self.mask
    }
}

/// Samples an inverted-dropout mask with entries 0 (dropped) or
/// `1/keep_prob` (kept).
pub fn sample_dropout_mask(shape: &[usize], keep_prob: f64, rng: &mut RngStream) -> Tensor {
    let n: usize = shape.iter().product();
    let scale = 1.0 / keep_prob;
    let data: Vec<f64> = (0..n)
        .map(|_| if rng.bernoulli(keep_prob) { scale } else { 0.0 })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Dropout forward.
///
/// Training mode requires an RNG (unless `keep_prob == 1.0`) and applies
/// a fresh inverted mask; inference mode is the identity and rejects an
/// RNG as a contract violation.
pub fn dropout_forward(
    input: &Tensor,
    keep_prob: f64,
    training: bool,
    rng: Option<&mut RngStream>,
) -> Result<(Tensor, DropoutCache)> {
    if !(0.0 < keep_prob && keep_prob <= 1.0) {
        return Err(Error::Domain(format!(
            "dropout keep probability must be in (0, 1], got {keep_prob}"
        )));
    }
    if !training {
        if rng.is_some() {
            return Err(Error::State(
                "inference-mode dropout must not be given an RNG".into(),
            ));
        }
        let mask = Tensor::filled(input.shape(), 1.0).expect("finite");
        return Ok((input.clone(), DropoutCache { mask }));
    }
    let mask = if keep_prob == 1.0 {
        Tensor::filled(input.shape(), 1.0).expect("finite")
    } else {
        match rng {
            Some(rng) => sample_dropout_mask(input.shape(), keep_prob, rng),
            None => {
                return Err(Error::State(
                    "training-mode dropout needs an RNG to sample its mask".into(),
                ))
            }
        }
    };
    dropout_forward_with_mask(input, &mask)
}

/// Dropout forward with a caller-provided mask (frozen-noise replay).
pub fn dropout_forward_with_mask(input: &Tensor, mask: &Tensor) -> Result<(Tensor, DropoutCache)> {
    if mask.shape() != input.shape() {
        return Err(Error::Dimension(format!(
            "dropout mask shape {:?} does not match input {:?}",
            mask.shape(),
            input.shape()
        )));
    }
    let out: Vec<f64> = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(x, m)| x * m)
        .collect();
    Ok((
        Tensor::from_parts(input.shape().to_vec(), out),
        DropoutCache { mask: mask.clone() },
    ))
}

pub fn dropout_backward(grad_out: &Tensor, cache: &DropoutCache) -> Result<Tensor> {
    if grad_out.shape() != cache.mask.shape() {
        return Err(Error::State(
            "dropout backward: grad shape does not match cached mask".into(),
        ));
    }
    let data: Vec<f64> = grad_out
        .data()
        .iter()
        .zip(cache.mask.data())
        .map(|(g, m)| g * m)
        .collect();
    Ok(Tensor::from_parts(grad_out.shape().to_vec(), data))
}

// ------------------------------------------------------------- softmax

/// Max-shifted softmax: positive outputs summing to one, no overflow for
/// finite input.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    debug_assert!(!logits.is_empty());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}
