//! Quadrature-oracle checks of the Monte Carlo attenuated loss: the MC
//! estimate must agree with 64-node Gauss–Hermite integration, the
//! oracle expected loss must grow with the noise scale on a
//! well-classified instance, and the estimator variance must scale as
//! 1/T.

mod common;

use bayescnn::bayes::{bayes_ce_loss, BayesHead};
use bayescnn::layers::Dense;
use bayescnn::rng::RngStream;
use bayescnn::tensor::Tensor;

/// Head whose clean logits equal the 2-vector input and whose σ is a
/// fixed constant.
fn passthrough_head(sigma: f64) -> BayesHead {
    BayesHead {
        logit: Dense::new(
            Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap(),
        sigma: Dense::new(
            Tensor::zeros(&[1, 2]),
            Tensor::from_vec(&[1], vec![(sigma * sigma).ln()]).unwrap(),
        )
        .unwrap(),
    }
}

#[test]
fn quadrature_oracle_self_checks() {
    // The Gauss–Hermite rule integrates Gaussian moments exactly.
    let one = common::gaussian_expectation_2d(64, |_, _| 1.0);
    assert!((one - 1.0).abs() < 1e-12);
    let second = common::gaussian_expectation_2d(64, |e1, _| e1 * e1);
    assert!((second - 1.0).abs() < 1e-10);
    let fourth = common::gaussian_expectation_2d(64, |_, e2| e2.powi(4));
    assert!((fourth - 3.0).abs() < 1e-9);
}

#[test]
fn mc_loss_matches_quadrature_within_monte_carlo_error() {
    // One random 2-class instance, σ = 0.7, T = 10⁶: the MC estimate
    // sits within 3 MC standard errors of the quadrature value.
    let mut rng = RngStream::from_seed(314);
    let logits = [rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)];
    let sigma = 0.7;
    let label = 1usize;
    let head = passthrough_head(sigma);
    let x = Tensor::from_vec(&[2], logits.to_vec()).unwrap();

    let t_count = 1_000_000usize;
    let corrupted = head.mc_corrupt_logits(&x, t_count, &mut rng).unwrap();
    let mc_loss = bayes_ce_loss(&corrupted, label).unwrap();

    // Standard error of −log(mean p) via the delta method.
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for t in 0..t_count {
        let row = corrupted.row(t);
        let p = bayescnn::layers::softmax(row)[label];
        sum += p;
        sum_sq += p * p;
    }
    let mean_p = sum / t_count as f64;
    let var_p = sum_sq / t_count as f64 - mean_p * mean_p;
    let se_loss = (var_p / t_count as f64).sqrt() / mean_p;

    let oracle = common::quadrature_bayes_loss(logits, sigma, label);
    assert!(
        (mc_loss - oracle).abs() < 3.0 * se_loss,
        "MC {mc_loss} vs quadrature {oracle} (3·SE = {})",
        3.0 * se_loss
    );
}

#[test]
fn oracle_expected_loss_is_monotone_in_sigma() {
    // Fixed well-classified instance (positive margin): the expected
    // attenuated loss is non-decreasing over σ ∈ {0, 0.5, 1, 2}.
    let logits = [2.0f64, -1.0];
    let label = 0usize;
    let mut previous = -f64::INFINITY;
    for sigma in [0.0, 0.5, 1.0, 2.0] {
        let loss = if sigma == 0.0 {
            // σ = 0 degenerates to the plain cross-entropy.
            let max = logits[0].max(logits[1]);
            let pa = (logits[0] - max).exp();
            let pb = (logits[1] - max).exp();
            -(pa / (pa + pb)).ln()
        } else {
            common::quadrature_bayes_loss(logits, sigma, label)
        };
        assert!(
            loss >= previous,
            "expected loss fell from {previous} to {loss} at σ = {sigma}"
        );
        previous = loss;
    }
}

#[test]
fn mc_estimator_variance_scales_as_one_over_t() {
    // Slope of log-variance vs log-T over T ∈ {10², 10³, 10⁴} in
    // [−1.3, −0.7].
    let head = passthrough_head(0.8);
    let x = Tensor::from_vec(&[2], vec![0.9, -0.4]).unwrap();
    let label = 0usize;
    let replicates = 200;
    let t_values = [100usize, 1_000, 10_000];
    let mut rng = RngStream::from_seed(2718);
    let mut log_t = Vec::new();
    let mut log_var = Vec::new();
    for &t_count in &t_values {
        let losses: Vec<f64> = (0..replicates)
            .map(|_| {
                let corrupted = head.mc_corrupt_logits(&x, t_count, &mut rng).unwrap();
                bayes_ce_loss(&corrupted, label).unwrap()
            })
            .collect();
        let mean = losses.iter().sum::<f64>() / replicates as f64;
        let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>()
            / replicates as f64;
        log_t.push((t_count as f64).ln());
        log_var.push(var.ln());
    }
    let slope = regression_slope(&log_t, &log_var);
    assert!(
        (-1.3..=-0.7).contains(&slope),
        "log-variance slope {slope} outside [−1.3, −0.7]"
    );
}

fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mean_x) * (b - mean_y)).sum();
    let var: f64 = x.iter().map(|a| (a - mean_x) * (a - mean_x)).sum();
    cov / var
}
