use gud_core::process::{
    ode_nll, ode_sample, reverse_sde_sample, Divergence, NllConfig, OdeConfig, ScoreFunction,
};
use gud_core::schedule::{noise_floor, NoisingState};
use gud_core::{rng, GaussianMixture, GaussianScore, Schedule};
use nalgebra::DMatrix;

fn moments(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|i| x.iter().map(|v| v[i]).sum::<f64>() / n).collect();
    let var = (0..d).map(|i| x.iter().map(|v| (v[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).collect();
    (mean, var)
}

#[test]
fn reverse_sde_preserves_standard_normal() {
    let mix = GaussianMixture::standard_normal(2);
    let s = Schedule::standard(-7.0, 3.9, 2).unwrap();
    let x = reverse_sde_sample(&mix, &s, 500, 10_000, 5).unwrap();
    let (m, v) = moments(&x);
    let se_m = (1.0f64 / 1e4).sqrt();
    let se_v = (2.0f64 / 1e4).sqrt();
    for i in 0..2 {
        assert!(m[i].abs() < 3.0 * se_m, "mean {}", m[i]);
        assert!((v[i] - 1.0).abs() < 3.0 * se_v, "var {}", v[i]);
    }
    let cov: f64 = x.iter().map(|p| (p[0] - m[0]) * (p[1] - m[1])).sum::<f64>() / 1e4;
    assert!(cov.abs() < 3.0 * se_m);
}

#[test]
fn ode_and_sde_moments_agree() {
    let mix = GaussianMixture::diagonal(vec![4.0, 0.25]).unwrap();
    let lv = [4.0f64.ln(), 0.25f64.ln()];
    let s = Schedule::standard_for(&lv, -7.0, noise_floor(&lv, 0.99).unwrap()).unwrap();
    let n = 4000;
    let a = ode_sample(&mix, &s, &OdeConfig::default(), n, 1).unwrap();
    let b = reverse_sde_sample(&mix, &s, 500, n, 2).unwrap();
    let (ma, va) = moments(&a);
    let (mb, vb) = moments(&b);
    for (i, truth) in [4.0f64, 0.25].iter().enumerate() {
        let se_m = (2.0 * truth / n as f64).sqrt();
        let se_v = truth * (4.0 / n as f64).sqrt();
        assert!((ma[i] - mb[i]).abs() < 3.0 * se_m);
        assert!((va[i] - vb[i]).abs() < 3.0 * se_v, "{} vs {}", va[i], vb[i]);
    }
}

#[test]
fn one_dimensional_gaussian_likelihood() {
    let mix = GaussianMixture::diagonal(vec![4.0]).unwrap();
    let lv = [4.0f64.ln()];
    let s = Schedule::standard_for(&lv, -7.0, noise_floor(&lv, 0.99).unwrap()).unwrap();
    let data = mix.synth(200, 3);
    let report = ode_nll(&mix, &s, &data, &[1.0], &NllConfig::default()).unwrap();
    let exact: f64 = data.iter().map(|x| 0.5 * (2.0 * std::f64::consts::PI * 4.0).ln() + x[0] * x[0] / 8.0).sum::<f64>()
        / data.len() as f64;
    assert!((report.nats_per_dim - exact).abs() < 1e-2, "{} vs {exact}", report.nats_per_dim);
}

#[test]
fn hutchinson_agrees_with_exact_divergence() {
    let d = 8;
    let mut r = rng::seeded(8);
    let a = DMatrix::from_fn(d, d, |_, _| rng::normal(&mut r));
    let cov = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.3;
    let score = GaussianScore::new(cov).unwrap();
    let lv: Vec<f64> = (0..d).map(|i| score.covariance()[(i, i)].ln()).collect();
    let s = Schedule::standard_for(&lv, -7.0, noise_floor(&lv, 0.99).unwrap()).unwrap();
    let data: Vec<Vec<f64>> = (0..64).map(|_| rng::normal_vec(&mut r, d)).collect();
    let ode = OdeConfig::fixed(200);
    let exact = ode_nll(&score, &s, &data, &vec![1.0; d], &NllConfig { ode, divergence: Divergence::Exact, ..Default::default() })
        .unwrap();
    let hutch = ode_nll(
        &score,
        &s,
        &data,
        &vec![1.0; d],
        &NllConfig { ode, divergence: Divergence::Hutchinson { probes: 3 }, seed: 17, ..Default::default() },
    )
    .unwrap();
    let diffs: Vec<f64> = exact.per_sample_nats.iter().zip(&hutch.per_sample_nats).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let se = (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!(mean.abs() < 3.0 * se.max(1e-12), "mean {mean} se {se}");
}

#[test]
fn tweedie_step_recovers_posterior_mean() {
    // chi0 ~ N(0, v): E[chi0 | chi_t] = alpha v chi_t / (alpha^2 v + sigma^2)
    // and Tweedie gives (chi_t + sigma^2 score) / alpha.
    let v = 2.5;
    let mix = GaussianMixture::diagonal(vec![v]).unwrap();
    let state = NoisingState::uniform(-0.4, 1);
    let (a, s) = (state.alpha[0], state.sigma[0]);
    for chi_t in [-2.0, 0.3, 1.7] {
        let score = mix.score(&[chi_t], &state)[0];
        let tweedie = (chi_t + s * s * score) / a;
        let posterior = a * v * chi_t / (a * a * v + s * s);
        assert!((tweedie - posterior).abs() < 1e-6);
    }
}

#[test]
fn samplers_are_seed_deterministic() {
    let mix = GaussianMixture::new(vec![0.4, 0.6], vec![vec![1.0, 0.0], vec![-1.0, 0.5]], vec![vec![0.2, 0.3]; 2]).unwrap();
    let s = Schedule::standard(-7.0, 4.0, 2).unwrap();
    assert_eq!(reverse_sde_sample(&mix, &s, 50, 20, 9).unwrap(), reverse_sde_sample(&mix, &s, 50, 20, 9).unwrap());
    let cfg = OdeConfig::default();
    assert_eq!(ode_sample(&mix, &s, &cfg, 5, 9).unwrap(), ode_sample(&mix, &s, &cfg, 5, 9).unwrap());
}
