use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_len, invalid, Result};
use crate::rng;
use crate::schedule::NoisingState;

/// `grad_chi log p_t(chi)` at the given noising state.
///
/// Implementations must be safe to call concurrently.
pub trait ScoreFunction: Sync {
    fn dim(&self) -> usize;

    fn score(&self, chi: &[f64], state: &NoisingState) -> Vec<f64>;

    /// Jacobian-vector product of the score in `chi`. Defaults to central
    /// differences.
    fn score_jvp(&self, chi: &[f64], state: &NoisingState, v: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let plus: Vec<f64> = chi.iter().zip(v).map(|(x, d)| x + h * d).collect();
        let minus: Vec<f64> = chi.iter().zip(v).map(|(x, d)| x - h * d).collect();
        let sp = self.score(&plus, state);
        let sm = self.score(&minus, state);
        sp.iter().zip(&sm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    /// Trace of the score Jacobian.
    fn divergence(&self, chi: &[f64], state: &NoisingState) -> f64 {
        let d = chi.len();
        let mut e = vec![0.0; d];
        let mut tr = 0.0;
        for i in 0..d {
            e[i] = 1.0;
            tr += self.score_jvp(chi, state, &e)[i];
            e[i] = 0.0;
        }
        tr
    }
}

impl<T: ScoreFunction + ?Sized> ScoreFunction for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, chi: &[f64], state: &NoisingState) -> Vec<f64> {
        (**self).score(chi, state)
    }
    fn score_jvp(&self, chi: &[f64], state: &NoisingState, v: &[f64]) -> Vec<f64> {
        (**self).score_jvp(chi, state, v)
    }
    fn divergence(&self, chi: &[f64], state: &NoisingState) -> f64 {
        (**self).divergence(chi, state)
    }
}

/// `chi_t = alpha * chi0 + sigma * eps`.
pub fn forward_sample<R: Rng + ?Sized>(chi0: &[f64], state: &NoisingState, rng: &mut R) -> Vec<f64> {
    chi0.iter()
        .zip(state.alpha.iter().zip(&state.sigma))
        .map(|(x, (a, s))| a * x + s * rng::normal(rng))
        .collect()
}

/// Score of the Gaussian forward kernel: `-(chi_t - alpha chi0) / sigma^2`.
pub fn conditional_score(chi_t: &[f64], chi0: &[f64], state: &NoisingState) -> Result<Vec<f64>> {
    check_len(chi_t.len(), chi0.len())?;
    check_len(chi_t.len(), state.dim())?;
    let s2 = state.sigma_sq();
    if s2.iter().any(|&s| s <= 0.0) {
        return Err(invalid("conditional score undefined for sigma = 0"));
    }
    Ok(chi_t
        .iter()
        .zip(chi0)
        .zip(state.alpha.iter().zip(&s2))
        .map(|((xt, x0), (a, s2))| -(xt - a * x0) / s2)
        .collect())
}

/// Exact score for zero-mean Gaussian data with a full covariance in the
/// component basis. The marginal at noising state `gamma` has covariance
/// `A Sigma A + diag(sigma^2)` with `A = diag(alpha)`.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    cov: DMatrix<f64>,
}

impl GaussianScore {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() == 0 {
            return Err(invalid("covariance must be square and non-empty"));
        }
        if cov.clone().cholesky().is_none() {
            return Err(invalid("covariance must be positive definite"));
        }
        Ok(GaussianScore { cov })
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn marginal_covariance(&self, state: &NoisingState) -> DMatrix<f64> {
        let d = self.cov.nrows();
        let s2 = state.sigma_sq();
        DMatrix::from_fn(d, d, |i, j| {
            let base = state.alpha[i] * self.cov[(i, j)] * state.alpha[j];
            if i == j { base + s2[i] } else { base }
        })
    }

    fn solve(&self, state: &NoisingState, v: &[f64]) -> Vec<f64> {
        let chol = self
            .marginal_covariance(state)
            .cholesky()
            .expect("marginal covariance is positive definite");
        chol.solve(&DVector::from_column_slice(v)).iter().map(|x| -x).collect()
    }

    pub fn marginal_logpdf(&self, chi: &[f64], state: &NoisingState) -> f64 {
        let d = chi.len() as f64;
        let chol = self.marginal_covariance(state).cholesky().expect("positive definite");
        let x = DVector::from_column_slice(chi);
        let quad = x.dot(&chol.solve(&x));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
    }
}

impl ScoreFunction for GaussianScore {
    fn dim(&self) -> usize {
        self.cov.nrows()
    }

    fn score(&self, chi: &[f64], state: &NoisingState) -> Vec<f64> {
        self.solve(state, chi)
    }

    fn score_jvp(&self, _chi: &[f64], state: &NoisingState, v: &[f64]) -> Vec<f64> {
        self.solve(state, v)
    }

    fn divergence(&self, _chi: &[f64], state: &NoisingState) -> f64 {
        let inv = self
            .marginal_covariance(state)
            .try_inverse()
            .expect("marginal covariance is invertible");
        -inv.trace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cond_logpdf(chi_t: &[f64], chi0: &[f64], st: &NoisingState) -> f64 {
        chi_t
            .iter()
            .zip(chi0)
            .enumerate()
            .map(|(i, (xt, x0))| {
                let s2 = st.sigma[i] * st.sigma[i];
                -0.5 * (xt - st.alpha[i] * x0).powi(2) / s2 - 0.5 * (2.0 * std::f64::consts::PI * s2).ln()
            })
            .sum()
    }

    #[test]
    fn forward_sample_limits() {
        let st = NoisingState::uniform(-30.0, 3);
        let mut r = rng::seeded(1);
        let x0 = [0.5, -1.0, 2.0];
        let xt = forward_sample(&x0, &st, &mut r);
        for (a, b) in xt.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-6);
        }

        let st = NoisingState::uniform(0.0, 1);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| forward_sample(&[0.0], &st, &mut r)[0]).collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // SE of the variance of N(0, 1/2) is 0.5 * sqrt(2/n)
        assert!((var - 0.5).abs() < 3.0 * 0.5 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn conditional_score_cases() {
        let st = NoisingState::new(vec![-1.0, 0.5, 2.0]);
        let x0 = [0.3, -0.7, 1.1];
        let mean: Vec<f64> = x0.iter().zip(&st.alpha).map(|(x, a)| a * x).collect();
        assert!(conditional_score(&mean, &x0, &st).unwrap().iter().all(|v| v.abs() < 1e-15));

        let xt = [0.4, 1.0, -2.0];
        let s = conditional_score(&xt, &x0, &st).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut p = xt;
            let mut m = xt;
            p[i] += h;
            m[i] -= h;
            let fd = (cond_logpdf(&p, &x0, &st) - cond_logpdf(&m, &x0, &st)) / (2.0 * h);
            assert!((fd - s[i]).abs() < 1e-6);
        }
        assert!(conditional_score(&xt, &x0[..2], &st).is_err());
    }

    #[test]
    fn gaussian_score_matches_logpdf_gradient() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let g = GaussianScore::new(cov).unwrap();
        let st = NoisingState::new(vec![-2.0, 0.7]);
        let x = [0.3, -0.9];
        let s = g.score(&x, &st);
        let h = 1e-5;
        for i in 0..2 {
            let mut p = x;
            let mut m = x;
            p[i] += h;
            m[i] -= h;
            let fd = (g.marginal_logpdf(&p, &st) - g.marginal_logpdf(&m, &st)) / (2.0 * h);
            assert!((fd - s[i]).abs() < 1e-7);
        }
        let fd_div: f64 = {
            let mut tr = 0.0;
            for i in 0..2 {
                let mut e = [0.0; 2];
                e[i] = 1.0;
                let plus: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + h * b).collect();
                let minus: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a - h * b).collect();
                tr += (g.score(&plus, &st)[i] - g.score(&minus, &st)[i]) / (2.0 * h);
            }
            tr
        };
        assert!((g.divergence(&x, &st) - fd_div).abs() < 1e-7);
    }
}
