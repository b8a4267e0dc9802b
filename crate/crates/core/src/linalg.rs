use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, f64)> {
    let chol = m.clone().cholesky().ok_or_else(|| Error::SingularCovariance {
        context: context.to_string(),
    })?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok((symmetrize(&chol.inverse()), logdet))
}

/// `(m + m') / 2`, exactly symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i <= j {
            0.5 * (m[(i, j)] + m[(j, i)])
        } else {
            0.5 * (m[(j, i)] + m[(i, j)])
        }
    })
}

/// Adds growing diagonal jitter (starting at `1e-8 * mean(diag)`) until the
/// matrix admits a Cholesky factorization.
pub fn ensure_positive_definite(m: &mut DMatrix<f64>) -> Result<()> {
    if m.clone().cholesky().is_some() {
        return Ok(());
    }
    let n = m.nrows();
    let mean_diag = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-8 * mean_diag;
    for _ in 0..20 {
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if m.clone().cholesky().is_some() {
            return Ok(());
        }
        jitter *= 10.0;
    }
    Err(Error::SingularCovariance {
        context: "population covariance".into(),
    })
}
