//! Scalar special functions and numerically careful helpers.

pub use statrs::function::beta::ln_beta;
pub use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights in place into a probability vector.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Expected log of each component of a Dirichlet-distributed vector.
pub fn expected_log_dirichlet(alpha: &[f64]) -> Vec<f64> {
    let total: f64 = alpha.iter().sum();
    let psi_total = digamma(total);
    alpha.iter().map(|&a| digamma(a) - psi_total).collect()
}

pub fn dirichlet_entropy(alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    let k = alpha.len() as f64;
    let ln_b: f64 = alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total);
    ln_b + (total - k) * digamma(total) - alpha.iter().map(|&a| (a - 1.0) * digamma(a)).sum::<f64>()
}
