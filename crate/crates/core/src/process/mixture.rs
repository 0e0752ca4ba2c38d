use rand::Rng;

use crate::error::{check_len, invalid, Result};
use crate::rng;
use crate::schedule::NoisingState;

use super::ScoreFunction;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian mixture. Convolving with the forward kernel
/// keeps it a mixture: means `alpha * mu_k`, variances `alpha^2 v_k + sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(invalid("mixture needs matching non-empty weights, means, variances"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(invalid("mixture weights must be nonnegative and sum to 1"));
        }
        let d = means[0].len();
        for (m, v) in means.iter().zip(&variances) {
            check_len(d, m.len())?;
            check_len(d, v.len())?;
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(invalid("mixture variances must be positive"));
            }
        }
        Ok(GaussianMixture { weights, means, variances })
    }

    /// Single zero-mean Gaussian with diagonal variances.
    pub fn diagonal(variances: Vec<f64>) -> Result<Self> {
        let d = variances.len();
        Self::new(vec![1.0], vec![vec![0.0; d]], vec![variances])
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::diagonal(vec![1.0; d]).expect("valid by construction")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (acc, x) in m.iter_mut().zip(mu) {
                *acc += w * x;
            }
        }
        m
    }

    /// Per-component variance of the mixture.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..self.dim())
            .map(|i| {
                self.weights
                    .iter()
                    .zip(self.means.iter().zip(&self.variances))
                    .map(|(w, (mu, v))| w * (v[i] + (mu[i] - mean[i]).powi(2)))
                    .sum()
            })
            .collect()
    }

    /// Draw one sample, returning it with its component index.
    pub fn sample_with_label<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        // zero-weight components are never chosen even at the boundary
        while self.weights[k] == 0.0 && k > 0 {
            k -= 1;
        }
        let x = self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| m + v.sqrt() * rng::normal(rng))
            .collect();
        (x, k)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_with_label(rng).0
    }

    /// `N` exact draws, one ChaCha stream per sample.
    pub fn synth(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        rng::map_indexed(n, |i| self.sample(&mut rng::stream(seed, i as u64)))
    }

    /// Per-component log joint terms `log w_k + log N_k(chi)` and the marginal
    /// component variances, at state `gamma`.
    fn log_terms(&self, chi: &[f64], state: &NoisingState) -> (Vec<f64>, Vec<Vec<f64>>) {
        let s2 = state.sigma_sq();
        let mut logs = Vec::with_capacity(self.components());
        let mut vars = Vec::with_capacity(self.components());
        for ((w, mu), v) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            let vt: Vec<f64> = v
                .iter()
                .zip(state.alpha.iter().zip(&s2))
                .map(|(v, (a, s2))| a * a * v + s2)
                .collect();
            let mut lp = w.ln();
            for i in 0..chi.len() {
                let r = chi[i] - state.alpha[i] * mu[i];
                lp -= 0.5 * (LN_2PI + vt[i].ln() + r * r / vt[i]);
            }
            logs.push(lp);
            vars.push(vt);
        }
        (logs, vars)
    }

    pub fn marginal_logpdf(&self, chi: &[f64], state: &NoisingState) -> f64 {
        let (logs, _) = self.log_terms(chi, state);
        log_sum_exp(&logs)
    }

    fn responsibilities(logs: &[f64]) -> Vec<f64> {
        let lse = log_sum_exp(logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    fn component_scores(&self, chi: &[f64], state: &NoisingState, vars: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.means
            .iter()
            .zip(vars)
            .map(|(mu, vt)| {
                (0..chi.len()).map(|i| -(chi[i] - state.alpha[i] * mu[i]) / vt[i]).collect()
            })
            .collect()
    }

    pub fn marginal_score(&self, chi: &[f64], state: &NoisingState) -> Vec<f64> {
        let (logs, vars) = self.log_terms(chi, state);
        let resp = Self::responsibilities(&logs);
        let comp = self.component_scores(chi, state, &vars);
        let mut out = vec![0.0; chi.len()];
        for (r, s) in resp.iter().zip(&comp) {
            for (o, v) in out.iter_mut().zip(s) {
                *o += r * v;
            }
        }
        out
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ScoreFunction for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn score(&self, chi: &[f64], state: &NoisingState) -> Vec<f64> {
        self.marginal_score(chi, state)
    }

    /// `J v = sum_k r_k [ -v / V_k + s_k ((s_k - s) . v) ]`
    fn score_jvp(&self, chi: &[f64], state: &NoisingState, v: &[f64]) -> Vec<f64> {
        let (logs, vars) = self.log_terms(chi, state);
        let resp = Self::responsibilities(&logs);
        let comp = self.component_scores(chi, state, &vars);
        let d = chi.len();
        let mut s = vec![0.0; d];
        for (r, sk) in resp.iter().zip(&comp) {
            for i in 0..d {
                s[i] += r * sk[i];
            }
        }
        let mut out = vec![0.0; d];
        for ((r, sk), vt) in resp.iter().zip(&comp).zip(&vars) {
            let proj: f64 = (0..d).map(|i| (sk[i] - s[i]) * v[i]).sum();
            for i in 0..d {
                out[i] += r * (-v[i] / vt[i] + sk[i] * proj);
            }
        }
        out
    }

    fn divergence(&self, chi: &[f64], state: &NoisingState) -> f64 {
        let (logs, vars) = self.log_terms(chi, state);
        let resp = Self::responsibilities(&logs);
        let comp = self.component_scores(chi, state, &vars);
        let d = chi.len();
        let mut s = vec![0.0; d];
        for (r, sk) in resp.iter().zip(&comp) {
            for i in 0..d {
                s[i] += r * sk[i];
            }
        }
        let mut tr = 0.0;
        for ((r, sk), vt) in resp.iter().zip(&comp).zip(&vars) {
            for i in 0..d {
                tr += r * (-1.0 / vt[i] + sk[i] * (sk[i] - s[i]));
            }
        }
        tr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_is_stationary() {
        let g = GaussianMixture::standard_normal(3);
        let x = [0.2, -1.0, 0.7];
        let expected = -0.5 * (3.0 * LN_2PI + x.iter().map(|v| v * v).sum::<f64>());
        for gamma in [-7.0, 0.0, 4.0] {
            let st = NoisingState::uniform(gamma, 3);
            assert!((g.marginal_logpdf(&x, &st) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn single_gaussian_score_closed_form() {
        let g = GaussianMixture::diagonal(vec![4.0, 0.25]).unwrap();
        let st = NoisingState::new(vec![-1.0, 1.5]);
        let x = [0.9, -0.4];
        let s = g.marginal_score(&x, &st);
        let a2 = st.alpha_sq();
        let s2 = st.sigma_sq();
        assert!((s[0] + x[0] / (a2[0] * 4.0 + s2[0])).abs() < 1e-14);
        assert!((s[1] + x[1] / (a2[1] * 0.25 + s2[1])).abs() < 1e-14);
    }

    #[test]
    fn invalid_mixtures_rejected() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn zero_weight_component_never_drawn() {
        let g = GaussianMixture::new(vec![1.0, 0.0], vec![vec![-5.0], vec![5.0]], vec![vec![1.0], vec![1.0]])
            .unwrap();
        let mut r = rng::seeded(4);
        for _ in 0..10_000 {
            assert_eq!(g.sample_with_label(&mut r).1, 0);
        }
    }

    #[test]
    fn jvp_and_divergence_match_finite_differences() {
        let g = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![-1.0, 0.5], vec![1.0, -0.2]],
            vec![vec![0.3, 0.6], vec![0.8, 0.2]],
        )
        .unwrap();
        let st = NoisingState::new(vec![-2.0, -0.5]);
        let x = [0.1, 0.2];
        let v = [0.7, -1.3];
        let exact = g.score_jvp(&x, &st, &v);
        let h = 1e-6;
        let p: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let m: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let sp = g.marginal_score(&p, &st);
        let sm = g.marginal_score(&m, &st);
        for i in 0..2 {
            assert!((exact[i] - (sp[i] - sm[i]) / (2.0 * h)).abs() < 1e-6);
        }
        let tr: f64 = (0..2)
            .map(|i| {
                let mut e = [0.0; 2];
                e[i] = 1.0;
                g.score_jvp(&x, &st, &e)[i]
            })
            .sum();
        assert!((g.divergence(&x, &st) - tr).abs() < 1e-12);
    }
}
