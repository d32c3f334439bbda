//! 1-D convolution over the temporal axis.
//!
//! Input layout is channels-first `[in_ch × time]`; kernels are
//! `[out_ch × in_ch × width]` with odd width. Same padding (zeros)
//! preserves the time extent; valid padding shrinks it by `width − 1`.
//! The inner loops are arranged as scaled adds over contiguous time
//! slices.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Temporal padding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding; output time equals input time.
    Same,
    /// No padding; output time is `time − width + 1`.
    Valid,
}

/// Convolution parameters: `kernels [out_ch × in_ch × width]`, `bias [out_ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
}

/// Stored input from a forward call, sufficient for an exact backward.
#[derive(Debug, Clone)]
pub struct Conv1dCache {
    input: Tensor,
}

/// Parameter gradients from a backward call.
#[derive(Debug, Clone)]
pub struct Conv1dGrads {
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    /// Builds a layer with explicit parameters. Width must be odd and
    /// there must be at least one output channel.
    pub fn new(kernels: Tensor, bias: Tensor, padding: Padding) -> Result<Self> {
        let ks = kernels.shape();
        if ks.len() != 3 {
            return Err(Error::Dimension(format!(
                "conv kernels must be [out×in×width], got {ks:?}"
            )));
        }
        let (out_ch, width) = (ks[0], ks[2]);
        if out_ch < 1 {
            return Err(Error::Dimension("conv needs at least one filter".into()));
        }
        if width % 2 == 0 {
            return Err(Error::Dimension(format!(
                "conv kernel width must be odd, got {width}"
            )));
        }
        if bias.shape() != [out_ch] {
            return Err(Error::Dimension(format!(
                "conv bias shape {:?} does not match {out_ch} filters",
                bias.shape()
            )));
        }
        Ok(Conv1d {
            kernels,
            bias,
            padding,
        })
    }

    /// Fan-in-scaled uniform initialization (ReLU gain).
    pub fn init(
        out_ch: usize,
        in_ch: usize,
        width: usize,
        padding: Padding,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let fan_in = in_ch * width;
        let limit = (6.0 / fan_in as f64).sqrt();
        let n = out_ch * in_ch * width;
        let data: Vec<f64> = (0..n).map(|_| rng.uniform(-limit, limit)).collect();
        Conv1d::new(
            Tensor::from_vec(&[out_ch, in_ch, width], data)?,
            Tensor::zeros(&[out_ch]),
            padding,
        )
    }

    /// Output time extent for the given input time extent.
    pub fn out_time(&self, time: usize) -> usize {
        match self.padding {
            Padding::Same => time,
            Padding::Valid => time - self.width() + 1,
        }
    }

    /// Offset of the first kernel tap relative to the output slot.
    fn tap_base(&self) -> isize {
        match self.padding {
            Padding::Same => -((self.width() / 2) as isize),
            Padding::Valid => 0,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.kernels.shape()[2]
    }

    /// Convolution along the time axis:
    /// `out[o][t] = bias[o] + Σ_{i,w} kernel[o][i][w] · input[i][t + base + w]`
    /// where `base` is −width/2 for same padding (out-of-range input
    /// reads as zero) and 0 for valid padding.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Conv1dCache)> {
        let (out_ch, in_ch, width) = (self.out_channels(), self.in_channels(), self.width());
        let is = input.shape();
        if is.len() != 2 || is[0] != in_ch {
            return Err(Error::Dimension(format!(
                "conv expects [{in_ch} × time] input, got {is:?}"
            )));
        }
        let time = is[1];
        if time < width {
            return Err(Error::Dimension(format!(
                "conv needs time ≥ width ({time} < {width})"
            )));
        }
        let out_time = self.out_time(time);
        let base = self.tap_base();
        let mut out = vec![0.0; out_ch * out_time];
        let kdata = self.kernels.data();
        let idata = input.data();
        for o in 0..out_ch {
            let out_row = &mut out[o * out_time..(o + 1) * out_time];
            let b = self.bias.data()[o];
            out_row.iter_mut().for_each(|v| *v = b);
            for i in 0..in_ch {
                let in_row = &idata[i * time..(i + 1) * time];
                let kbase = (o * in_ch + i) * width;
                for w in 0..width {
                    let k = kdata[kbase + w];
                    // offset of the input sample relative to the output slot
                    let d = base + w as isize;
                    let lo = (-d).max(0) as usize;
                    let hi = (time as isize - d).min(out_time as isize).max(0) as usize;
                    let shifted = &in_row[(lo as isize + d) as usize..(hi as isize + d) as usize];
                    for (ov, iv) in out_row[lo..hi].iter_mut().zip(shifted) {
                        *ov += k * iv;
                    }
                }
            }
        }
        Ok((
            Tensor::from_parts(vec![out_ch, out_time], out),
            Conv1dCache {
                input: input.clone(),
            },
        ))
    }

    /// Exact gradients of the recorded forward.
    pub fn backward(
        &self,
        grad_out: &Tensor,
        cache: &Conv1dCache,
    ) -> Result<(Tensor, Conv1dGrads)> {
        let (out_ch, in_ch, width) = (self.out_channels(), self.in_channels(), self.width());
        let time = cache.input.shape()[1];
        let out_time = self.out_time(time);
        if grad_out.shape() != [out_ch, out_time] {
            return Err(Error::State(format!(
                "conv backward: grad shape {:?} does not match cached forward [{out_ch} × {out_time}]",
                grad_out.shape()
            )));
        }
        let base = self.tap_base();
        let mut grad_input = vec![0.0; in_ch * time];
        let mut grad_kernels = vec![0.0; out_ch * in_ch * width];
        let mut grad_bias = vec![0.0; out_ch];
        let idata = cache.input.data();
        let kdata = self.kernels.data();
        let gdata = grad_out.data();
        for o in 0..out_ch {
            let g_row = &gdata[o * out_time..(o + 1) * out_time];
            grad_bias[o] = g_row.iter().sum();
            for i in 0..in_ch {
                let in_row = &idata[i * time..(i + 1) * time];
                let gi_row = &mut grad_input[i * time..(i + 1) * time];
                let kbase = (o * in_ch + i) * width;
                for w in 0..width {
                    let d = base + w as isize;
                    let lo = (-d).max(0) as usize;
                    let hi = (time as isize - d).min(out_time as isize).max(0) as usize;
                    let in_shifted = &in_row[(lo as isize + d) as usize..(hi as isize + d) as usize];
                    // dL/dk[o][i][w] = Σ_t g[o][t] · x[i][t+d]
                    grad_kernels[kbase + w] += g_row[lo..hi]
                        .iter()
                        .zip(in_shifted)
                        .map(|(g, x)| g * x)
                        .sum::<f64>();
                    // dL/dx[i][t+d] += k[o][i][w] · g[o][t]
                    let k = kdata[kbase + w];
                    let gi_shifted =
                        &mut gi_row[(lo as isize + d) as usize..(hi as isize + d) as usize];
                    for (gi, g) in gi_shifted.iter_mut().zip(&g_row[lo..hi]) {
                        *gi += k * g;
                    }
                }
            }
        }
        Ok((
            Tensor::from_parts(vec![in_ch, time], grad_input),
            Conv1dGrads {
                kernels: Tensor::from_parts(vec![out_ch, in_ch, width], grad_kernels),
                bias: Tensor::from_parts(vec![out_ch], grad_bias),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn center_tap_kernel_is_identity() {
        let conv = Conv1d::new(
            tensor(&[1, 1, 3], &[0.0, 1.0, 0.0]),
            Tensor::zeros(&[1]),
            Padding::Same,
        )
        .unwrap();
        let input = tensor(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let (out, _) = conv.forward(&input).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn boxcar_on_ones_counts_in_window_samples() {
        let conv = Conv1d::new(
            tensor(&[1, 1, 3], &[1.0, 1.0, 1.0]),
            Tensor::zeros(&[1]),
            Padding::Same,
        )
        .unwrap();
        let input = tensor(&[1, 4], &[1.0, 1.0, 1.0, 1.0]);
        let (out, _) = conv.forward(&input).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = RngStream::from_seed(31);
        let conv = Conv1d::init(4, 3, 3, Padding::Same, &mut rng).unwrap();
        let time = 7;
        let input = Tensor::from_vec(
            &[3, time],
            (0..3 * time).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let (out, _) = conv.forward(&input).unwrap();
        // Direct triple loop over the definition, with explicit bounds.
        for o in 0..4 {
            for t in 0..time {
                let mut acc = conv.bias.data()[o];
                for i in 0..3 {
                    for w in 0..3usize {
                        let src = t as isize + w as isize - 1;
                        if src >= 0 && (src as usize) < time {
                            acc += conv.kernels.data()[(o * 3 + i) * 3 + w]
                                * input.at2(i, src as usize);
                        }
                    }
                }
                assert_eq!(out.at2(o, t), acc, "mismatch at ({o},{t})");
            }
        }
    }

    #[test]
    fn channel_mismatch_errors() {
        let mut rng = RngStream::from_seed(1);
        let conv = Conv1d::init(2, 3, 3, Padding::Same, &mut rng).unwrap();
        let input = Tensor::zeros(&[4, 8]);
        assert!(matches!(conv.forward(&input), Err(Error::Dimension(_))));
    }

    #[test]
    fn even_width_rejected() {
        let kernels = Tensor::zeros(&[1, 1, 2]);
        assert!(Conv1d::new(kernels, Tensor::zeros(&[1]), Padding::Same).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let mut rng = RngStream::from_seed(2);
        let conv = Conv1d::init(2, 2, 3, Padding::Same, &mut rng).unwrap();
        let input = Tensor::from_vec(&[2, 5], (0..10).map(|v| v as f64).collect()).unwrap();
        let (_, cache) = conv.forward(&input).unwrap();
        let (gi, grads) = conv.backward(&Tensor::zeros(&[2, 5]), &cache).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(grads.kernels.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case_reduces_to_product_rule() {
        // One channel, width 1: out = k·x + b, so dL/dk = g·x, dL/dx = g·k.
        let conv = Conv1d::new(tensor(&[1, 1, 1], &[3.0]), tensor(&[1], &[0.5]), Padding::Same)
            .unwrap();
        let input = tensor(&[1, 1], &[2.0]);
        let (out, cache) = conv.forward(&input).unwrap();
        assert_eq!(out.data(), &[6.5]);
        let (gi, grads) = conv.backward(&tensor(&[1, 1], &[1.5]), &cache).unwrap();
        assert_eq!(grads.kernels.data(), &[3.0]); // g·x = 1.5·2
        assert_eq!(gi.data(), &[4.5]); // g·k = 1.5·3
        assert_eq!(grads.bias.data(), &[1.5]);
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let mut rng = RngStream::from_seed(9);
        let conv = Conv1d::init(3, 2, 3, Padding::Same, &mut rng).unwrap();
        let time = 6;
        let input = Tensor::from_vec(
            &[2, time],
            (0..2 * time).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        // Scalar objective: weighted sum of outputs with fixed weights.
        let weights: Vec<f64> = (0..3 * time).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let objective = |conv: &Conv1d, input: &Tensor| -> f64 {
            let (out, _) = conv.forward(input).unwrap();
            out.data().iter().zip(&weights).map(|(o, w)| o * w).sum()
        };
        let (_, cache) = conv.forward(&input).unwrap();
        let grad_out = Tensor::from_vec(&[3, time], weights.clone()).unwrap();
        let (grad_input, grads) = conv.backward(&grad_out, &cache).unwrap();

        let h = 1e-5;
        let check = |analytic: f64, numeric: f64| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / scale < 1e-6,
                "analytic {analytic} vs numeric {numeric}"
            );
        };
        // Kernel partials.
        for idx in 0..conv.kernels.len() {
            let mut plus = conv.clone();
            plus.kernels.data_mut()[idx] += h;
            let mut minus = conv.clone();
            minus.kernels.data_mut()[idx] -= h;
            let numeric = (objective(&plus, &input) - objective(&minus, &input)) / (2.0 * h);
            check(grads.kernels.data()[idx], numeric);
        }
        // Bias partials.
        for idx in 0..conv.bias.len() {
            let mut plus = conv.clone();
            plus.bias.data_mut()[idx] += h;
            let mut minus = conv.clone();
            minus.bias.data_mut()[idx] -= h;
            let numeric = (objective(&plus, &input) - objective(&minus, &input)) / (2.0 * h);
            check(grads.bias.data()[idx], numeric);
        }
        // Input partials.
        for idx in 0..input.len() {
            let mut plus = input.clone();
            plus.data_mut()[idx] += h;
            let mut minus = input.clone();
            minus.data_mut()[idx] -= h;
            let numeric = (objective(&conv, &plus) - objective(&conv, &minus)) / (2.0 * h);
            check(grad_input.data()[idx], numeric);
        }
    }

    #[test]
    fn valid_padding_shrinks_time_and_matches_oracle() {
        let conv = Conv1d::new(
            tensor(&[1, 1, 3], &[1.0, 2.0, 3.0]),
            Tensor::zeros(&[1]),
            Padding::Valid,
        )
        .unwrap();
        let input = tensor(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let (out, cache) = conv.forward(&input).unwrap();
        // out[t] = 1·x[t] + 2·x[t+1] + 3·x[t+2]
        assert_eq!(out.shape(), &[1, 3]);
        assert_eq!(out.data(), &[14.0, 20.0, 26.0]);
        // Backward shapes stay consistent with the shrunk output.
        let (gi, grads) = conv
            .backward(&tensor(&[1, 3], &[1.0, 1.0, 1.0]), &cache)
            .unwrap();
        assert_eq!(gi.shape(), &[1, 5]);
        assert_eq!(grads.kernels.data(), &[6.0, 9.0, 12.0]);
    }

    #[test]
    fn forward_is_linear_in_input() {
        let mut rng = RngStream::from_seed(21);
        let conv = Conv1d::init(3, 2, 3, Padding::Same, &mut rng).unwrap();
        let x = Tensor::from_vec(&[2, 6], (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .unwrap();
        let y = Tensor::from_vec(&[2, 6], (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .unwrap();
        let (a, b) = (1.7, -0.4);
        let combo = x.scale(a).unwrap().add(&y.scale(b).unwrap()).unwrap();
        let (out_combo, _) = conv.forward(&combo).unwrap();
        let (out_x, _) = conv.forward(&x).unwrap();
        let (out_y, _) = conv.forward(&y).unwrap();
        // Subtract the bias contribution before comparing.
        for o in 0..3 {
            for t in 0..6 {
                let bias = conv.bias.data()[o];
                let lhs = out_combo.at2(o, t) - bias;
                let rhs = a * (out_x.at2(o, t) - bias) + b * (out_y.at2(o, t) - bias);
                assert!((lhs - rhs).abs() < 1e-9, "({o},{t}): {lhs} vs {rhs}");
            }
        }
    }
}
