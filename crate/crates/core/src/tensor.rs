//! Minimal dense float64 array.
//!
//! Row-major storage, explicit shapes, no broadcasting. Public
//! constructors and operations guarantee that every element of every
//! returned tensor is finite; paths that would overflow return
//! [`Error::Numeric`] instead of letting NaN/Inf escape.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from row-major data. Errors if the element count
    /// does not match the shape or any element is non-finite.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite element {bad} in tensor data"
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Constant-filled tensor. The fill value must be finite.
    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite fill value {value}")));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        })
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Internal constructor for values produced by already-checked code
    /// paths. Debug builds still verify the element count.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Mutable element access. Callers own the finiteness invariant when
    /// writing through this.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Element of a 2-D tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Contiguous row of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }


    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "add: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        finite_result(Tensor::from_parts(self.shape.clone(), data), "add")
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "sub: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        finite_result(Tensor::from_parts(self.shape.clone(), data), "sub")
    }

    /// Scalar multiple.
    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|a| a * factor).collect();
        finite_result(Tensor::from_parts(self.shape.clone(), data), "scale")
    }

    /// Sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

fn finite_result(t: Tensor, op: &str) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric(format!("{op}: result overflowed")))
    }
}

/// Matrix product of `a: [m×k]` and `b: [k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "matmul requires 2-D operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents disagree: {:?} × {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    // i-k-j order: the inner loop walks contiguous rows of b and out.
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    finite_result(Tensor::from_parts(vec![m, n], out), "matmul")
}

/// Matrix–vector product of `a: [m×k]` and `x: [k]`.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || x.shape.len() != 1 {
        return Err(Error::Dimension(format!(
            "matvec requires [m×k] and [k], got {:?} and {:?}",
            a.shape, x.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    if x.shape[0] != k {
        return Err(Error::Dimension(format!(
            "matvec inner extents disagree: {:?} × {:?}",
            a.shape, x.shape
        )));
    }
    let out: Vec<f64> = (0..m)
        .map(|i| dot(&a.data[i * k..(i + 1) * k], &x.data))
        .collect();
    finite_result(Tensor::from_parts(vec![m], out), "matvec")
}

/// Dot product of two equal-length slices.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log Σ exp(x)` computed with the max shift, so it never overflows for
/// finite input.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("log_sum_exp of empty input".into()));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Tensor of i.i.d. standard-normal draws. Advancing `rng` is the only
/// state change.
pub fn sample_standard_normal(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_tensor(rng: &mut RngStream, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    #[test]
    fn matmul_identity_preserves_vector() {
        let v = Tensor::from_vec(&[3], vec![1.5, -2.0, 0.25]).unwrap();
        let out = matvec(&Tensor::identity(3), &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn matmul_zeros_annihilates() {
        let mut rng = RngStream::from_seed(3);
        let b = random_tensor(&mut rng, &[2, 5]);
        let out = matmul(&Tensor::zeros(&[2, 2]), &b).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_nested_loop_oracle() {
        let mut rng = RngStream::from_seed(11);
        let a = random_tensor(&mut rng, &[4, 3]);
        let b = random_tensor(&mut rng, &[3, 2]);
        let got = matmul(&a, &b).unwrap();
        // Brute-force oracle: plain triple loop in the definition order.
        for i in 0..4 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..3 {
                    acc += a.at2(i, p) * b.at2(p, j);
                }
                assert_eq!(got.at2(i, j), acc, "mismatch at ({i},{j})");
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_overflow_errors_instead_of_inf() {
        let a = Tensor::filled(&[1, 2], 1e308).unwrap();
        let b = Tensor::filled(&[2, 1], 1e308).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::Numeric(_))));
    }

    #[test]
    fn log_sum_exp_of_two_zeros_is_ln_2() {
        let v = log_sum_exp(&[0.0, 0.0]).unwrap();
        assert!((v - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_shifted_does_not_overflow() {
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_matches_direct_evaluation_in_safe_range() {
        let mut rng = RngStream::from_seed(5);
        let xs: Vec<f64> = (0..10).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let direct = xs.iter().map(|v| v.exp()).sum::<f64>().ln();
        let got = log_sum_exp(&xs).unwrap();
        assert!((got - direct).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_empty_errors() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn normal_sampling_is_deterministic_per_seed() {
        let mut a = RngStream::from_seed(42);
        let mut b = RngStream::from_seed(42);
        let ta = sample_standard_normal(&mut a, &[3, 4]);
        let tb = sample_standard_normal(&mut b, &[3, 4]);
        assert_eq!(ta, tb);
    }

    #[test]
    fn normal_sampling_empty_shape() {
        let mut rng = RngStream::from_seed(1);
        let t = sample_standard_normal(&mut rng, &[0]);
        assert_eq!(t.shape(), &[0]);
        assert!(t.is_empty());
    }

    #[test]
    fn normal_sampling_moments() {
        // CLT bounds at roughly 3σ for 10^6 draws.
        let mut rng = RngStream::from_seed(77);
        let t = sample_standard_normal(&mut rng, &[1_000_000]);
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "var {var}");
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0, 2.0]).is_err());
    }

    proptest! {
        // (A·B)·C == A·(B·C) within 1e-9 relative error.
        #[test]
        fn matmul_associativity(seed in 0u64..1000) {
            let mut rng = RngStream::from_seed(seed);
            let a = random_tensor(&mut rng, &[3, 4]);
            let b = random_tensor(&mut rng, &[4, 2]);
            let c = random_tensor(&mut rng, &[2, 5]);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                let scale = l.abs().max(r.abs()).max(1e-12);
                prop_assert!((l - r).abs() / scale < 1e-9);
            }
        }

        // log_sum_exp(x + c) == log_sum_exp(x) + c.
        #[test]
        fn log_sum_exp_shift_identity(seed in 0u64..1000, c in -50.0f64..50.0) {
            let mut rng = RngStream::from_seed(seed);
            let xs: Vec<f64> = (0..8).map(|_| rng.uniform(-10.0, 10.0)).collect();
            let shifted: Vec<f64> = xs.iter().map(|v| v + c).collect();
            let base = log_sum_exp(&xs).unwrap();
            let moved = log_sum_exp(&shifted).unwrap();
            prop_assert!((moved - (base + c)).abs() < 1e-12);
        }
    }
}
