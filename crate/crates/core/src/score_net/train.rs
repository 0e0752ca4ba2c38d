use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{check_len, invalid, GudError, Result};
use crate::process::GaussianMixture;
use crate::rng::{self, GudRng};
use crate::schedule::{NoisingState, Schedule, ScheduleConfig, ScheduleContext};

use super::net::{Layer, ScoreNet};

/// Source of clean training vectors `chi_0`.
pub trait DataSource {
    fn dim(&self) -> usize;
    fn batch(&self, rng: &mut GudRng, n: usize) -> Vec<Vec<f64>>;
}

/// Uniform draws with replacement.
impl DataSource for [Vec<f64>] {
    fn dim(&self) -> usize {
        self.first().map_or(0, Vec::len)
    }

    fn batch(&self, rng: &mut GudRng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self[rng.random_range(0..self.len())].clone()).collect()
    }
}

/// Fresh exact draws every batch.
impl DataSource for GaussianMixture {
    fn dim(&self) -> usize {
        self.means()[0].len()
    }

    fn batch(&self, rng: &mut GudRng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

fn noised(chi0: &[Vec<f64>], states: &[NoisingState], eps: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chi0.iter()
        .zip(states)
        .zip(eps)
        .map(|((x, s), e)| (0..x.len()).map(|i| s.alpha[i] * x[i] + s.sigma[i] * e[i]).collect())
        .collect()
}

fn states_at(schedule: &Schedule, t: &[f64]) -> Result<Vec<NoisingState>> {
    t.iter().map(|&t| schedule.gamma(t)).collect()
}

fn check_batch(net: &ScoreNet, chi0: &[Vec<f64>], t: &[f64], eps: &[Vec<f64>]) -> Result<()> {
    if chi0.is_empty() {
        return Err(invalid("empty batch"));
    }
    check_len(chi0.len(), t.len())?;
    check_len(chi0.len(), eps.len())?;
    let d = net.config().dim;
    for (x, e) in chi0.iter().zip(eps) {
        check_len(d, x.len())?;
        check_len(d, e.len())?;
    }
    Ok(())
}

/// Mean over the batch of `|eps_hat - eps|^2`, the sigma^2-weighted
/// score-matching loss after the sigma factors cancel.
pub fn dsm_loss(net: &ScoreNet, chi0: &[Vec<f64>], schedule: &Schedule, t: &[f64], eps: &[Vec<f64>]) -> Result<f64> {
    check_batch(net, chi0, t, eps)?;
    let states = states_at(schedule, t)?;
    let chi_t = noised(chi0, &states, eps);
    let gammas: Vec<Vec<f64>> = states.iter().map(|s| s.gamma.clone()).collect();
    let pred = net.predict_eps_batch(&chi_t, &gammas)?;
    let total: f64 = pred.iter().zip(eps).map(|(p, e)| p.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum();
    Ok(total / chi0.len() as f64)
}

/// `mean_b sum_i sigma_i^2 |s_i - s_cond_i|^2` with `s_cond = -(chi_t - alpha chi_0) / sigma^2`.
pub fn weighted_score_loss(scores: &[Vec<f64>], chi_t: &[Vec<f64>], chi0: &[Vec<f64>], states: &[NoisingState]) -> Result<f64> {
    check_len(scores.len(), chi_t.len())?;
    check_len(scores.len(), chi0.len())?;
    check_len(scores.len(), states.len())?;
    let mut total = 0.0;
    for b in 0..scores.len() {
        let target = crate::process::conditional_score(&chi_t[b], &chi0[b], &states[b])?;
        let s2 = states[b].sigma_sq();
        total += (0..target.len()).map(|i| s2[i] * (scores[b][i] - target[i]).powi(2)).sum::<f64>();
    }
    Ok(total / scores.len() as f64)
}

/// Loss and its exact gradient, flattened in `ScoreNet::params` order.
pub fn dsm_loss_and_grad(
    net: &ScoreNet,
    chi0: &[Vec<f64>],
    schedule: &Schedule,
    t: &[f64],
    eps: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    check_batch(net, chi0, t, eps)?;
    let states = states_at(schedule, t)?;
    let chi_t = noised(chi0, &states, eps);
    let gammas: Vec<Vec<f64>> = states.iter().map(|s| s.gamma.clone()).collect();
    let (pred, cache) = net.forward_cached(net.input_batch(&chi_t, &gammas)?);
    let n = chi0.len() as f64;
    let target = DMatrix::from_fn(pred.nrows(), pred.ncols(), |i, j| eps[j][i]);
    let diff = pred - target;
    let loss = diff.norm_squared() / n;
    let grad_out = diff * (2.0 / n);
    let grads = net.backward(&cache, &grad_out);
    Ok((loss, flatten(&grads)))
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.w.as_slice());
        out.extend_from_slice(l.b.as_slice());
    }
    out
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    pub params: Vec<f64>,
}

impl Ema {
    pub fn new(params: &[f64], decay: f64) -> Self {
        Ema { decay, params: params.to_vec() }
    }

    pub fn update(&mut self, raw: &[f64]) {
        for (e, r) in self.params.iter_mut().zip(raw) {
            *e = self.decay * *e + (1.0 - self.decay) * r;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("bad parameter range [{lo}, {hi}]")));
        }
        Ok(ParamRange { lo, hi })
    }

    fn draw(&self, r: &mut GudRng) -> f64 {
        if self.hi > self.lo {
            r.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub ema: f64,
    pub hidden: usize,
    pub depth: usize,
    pub schedule: ScheduleConfig,
    /// Schedule parameters redrawn uniformly for every batch when set.
    pub a_range: Option<ParamRange>,
    pub b_range: Option<ParamRange>,
    pub r_range: Option<ParamRange>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 128,
            steps: 10_000,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            ema: 0.999,
            hidden: 256,
            depth: 3,
            schedule: ScheduleConfig::default(),
            a_range: None,
            b_range: None,
            r_range: None,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.steps == 0 || self.hidden == 0 || self.depth == 0 || self.log_every == 0 {
            return Err(invalid("batch, steps, hidden, depth and log interval must be positive"));
        }
        if !(self.ema > 0.0 && self.ema < 1.0) {
            return Err(invalid("EMA decay must lie in (0, 1)"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("bad optimiser settings"));
        }
        Ok(())
    }

    fn draw_schedule(&self, ctx: &ScheduleContext, r: &mut GudRng) -> Result<Schedule> {
        let mut cfg = self.schedule.clone();
        if let Some(p) = self.a_range {
            cfg.a = p.draw(r);
        }
        if let Some(p) = self.b_range {
            cfg.b = p.draw(r);
        }
        if let Some(p) = self.r_range {
            cfg.r = p.draw(r);
        }
        cfg.build(ctx)
    }

    /// Range of gamma over both endpoints of every corner of the parameter box.
    fn gamma_range(&self, ctx: &ScheduleContext) -> Result<(f64, f64)> {
        let corners = |p: Option<ParamRange>, base: f64| p.map_or(vec![base], |p| vec![p.lo, p.hi]);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &a in &corners(self.a_range, self.schedule.a) {
            for &b in &corners(self.b_range, self.schedule.b) {
                for &r in &corners(self.r_range, self.schedule.r) {
                    let cfg = ScheduleConfig { a, b, r, ..self.schedule.clone() };
                    let s = cfg.build(ctx)?;
                    for t in [0.0, 1.0] {
                        for g in s.gamma(t)?.gamma {
                            lo = lo.min(g);
                            hi = hi.max(g);
                        }
                    }
                }
            }
        }
        Ok((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub raw: ScoreNet,
    pub ema: ScoreNet,
    pub log: Vec<LogRow>,
}

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 100;

/// Adam on the denoising loss with uniform `t`. Everything except the
/// wall-clock column of the log is a deterministic function of the seed.
pub fn train<D: DataSource + ?Sized>(cfg: &TrainConfig, data: &D, ctx: &ScheduleContext) -> Result<TrainOutput> {
    cfg.validate()?;
    let d = data.dim();
    if d == 0 || d != ctx.log_var.len() {
        return Err(GudError::DimensionMismatch { expected: ctx.log_var.len(), got: d });
    }
    let net_cfg = super::NetConfig::new(d, cfg.hidden, cfg.depth)?;
    let mut net = ScoreNet::new(net_cfg, cfg.gamma_range(ctx)?, ctx.labels.clone(), rng::split_seed(cfg.seed, 0))?;
    let mut params = net.params();
    let mut adam = Adam::new(params.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut ema = Ema::new(&params, cfg.ema);
    let mut r = rng::seeded(rng::split_seed(cfg.seed, 1));
    let fixed = if cfg.a_range.is_none() && cfg.b_range.is_none() && cfg.r_range.is_none() {
        Some(cfg.schedule.build(ctx)?)
    } else {
        None
    };
    let start = Instant::now();
    let mut log = Vec::new();
    let mut initial = None;
    let mut over = 0;
    for step in 1..=cfg.steps {
        let drawn;
        let schedule = match &fixed {
            Some(s) => s,
            None => {
                drawn = cfg.draw_schedule(ctx, &mut r)?;
                &drawn
            }
        };
        let chi0 = data.batch(&mut r, cfg.batch);
        let t: Vec<f64> = (0..cfg.batch).map(|_| r.random::<f64>()).collect();
        let eps: Vec<Vec<f64>> = (0..cfg.batch).map(|_| rng::normal_vec(&mut r, d)).collect();
        net.set_params(&params)?;
        let (loss, grad) = dsm_loss_and_grad(&net, &chi0, schedule, &t, &eps)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(GudError::Numerical(format!("non-finite loss at step {step}")));
        }
        let init = *initial.get_or_insert(loss);
        if loss > DIVERGENCE_FACTOR * init {
            over += 1;
            if over >= DIVERGENCE_PATIENCE {
                return Err(GudError::Numerical(format!(
                    "training diverged: loss above {DIVERGENCE_FACTOR}x its initial value for {DIVERGENCE_PATIENCE} steps (step {step})"
                )));
            }
        } else {
            over = 0;
        }
        adam.update(&mut params, &grad);
        ema.update(&params);
        if step % cfg.log_every == 0 || step == cfg.steps {
            log.push(LogRow { step, loss, wall_seconds: start.elapsed().as_secs_f64() });
        }
    }
    net.set_params(&params)?;
    let mut ema_net = net.clone();
    ema_net.set_params(&ema.params)?;
    Ok(TrainOutput { raw: net, ema: ema_net, log })
}
