#![allow(dead_code)] // each test binary uses its own subset

//! Shared test oracles: Gauss–Hermite quadrature for expectations under
//! Gaussian noise, and a relative-error helper for finite-difference
//! checks. These stay independent of the library's computation paths —
//! quadrature here, Monte Carlo there.

/// Physicists' Gauss–Hermite nodes and weights (Newton iteration on the
/// Hermite recurrence). `∫ f(x) e^{−x²} dx ≈ Σ w_i f(x_i)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt()
                - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

/// Expected value of `f(ε)` for a 2-D standard normal ε, by tensor-product
/// Gauss–Hermite with `n` nodes per dimension.
pub fn gaussian_expectation_2d(n: usize, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_hermite(n);
    let scale = std::f64::consts::PI;
    let mut total = 0.0;
    for (xi, wi) in nodes.iter().zip(&weights) {
        let e1 = std::f64::consts::SQRT_2 * xi;
        for (xj, wj) in nodes.iter().zip(&weights) {
            let e2 = std::f64::consts::SQRT_2 * xj;
            total += wi * wj * f(e1, e2);
        }
    }
    total / scale
}

/// Quadrature oracle for the attenuated two-class loss:
/// `−log E_ε[softmax(z + σ∘ε)[label]]` with 64 nodes per dimension.
pub fn quadrature_bayes_loss(clean_logits: [f64; 2], sigma: f64, label: usize) -> f64 {
    let expected_prob = gaussian_expectation_2d(64, |e1, e2| {
        let a = clean_logits[0] + sigma * e1;
        let b = clean_logits[1] + sigma * e2;
        let max = a.max(b);
        let pa = (a - max).exp();
        let pb = (b - max).exp();
        let chosen = if label == 0 { pa } else { pb };
        chosen / (pa + pb)
    });
    -expected_prob.ln()
}

/// Relative error with an absolute floor, for finite-difference checks:
/// near-zero pairs compare against the floor instead of each other.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[allow(dead_code)]
pub fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
    let err = rel_err(analytic, numeric);
    assert!(
        err < tol,
        "{what}: analytic {analytic} vs numeric {numeric} (rel err {err:.3e})"
    );
}
