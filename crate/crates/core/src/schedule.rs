//! Noising states and component-wise schedules.
//!
//! A schedule maps diffusion time `t in [0, 1]` to the noising state
//! `gamma(t)`, the per-component log noise-to-signal ratio of the forward
//! kernel. `alpha_i^2 = sigmoid(-gamma_i)`, `sigma_i^2 = sigmoid(gamma_i)`
//! and the noising rate is `beta_i = sigma_i^2 * d gamma_i / dt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::basis::{BasisKind, BasisSpec};
use crate::error::{check_len, invalid, GudError, Result};

/// `gamma` is clamped to this range before any sigmoid.
pub const GAMMA_CLAMP: f64 = 30.0;
pub const DEFAULT_GAMMA_DENOISE: f64 = -7.0;
pub const DEFAULT_SIGMA_MIN: f64 = 0.99;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^x)`, so that `softplus(gamma) = -log alpha^2`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn clamp_gamma(g: f64) -> f64 {
    g.clamp(-GAMMA_CLAMP, GAMMA_CLAMP)
}

/// `(alpha^2, sigma^2)` from one sigmoid evaluation; the smaller of the two is
/// computed directly and the other as its complement.
pub fn alpha_sigma_sq(gamma: f64) -> (f64, f64) {
    let g = clamp_gamma(gamma);
    if g >= 0.0 {
        let a2 = sigmoid(-g);
        (a2, 1.0 - a2)
    } else {
        let s2 = sigmoid(g);
        (1.0 - s2, s2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisingState {
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NoisingState {
    pub fn new(gamma: Vec<f64>) -> Self {
        let gamma: Vec<f64> = gamma.into_iter().map(clamp_gamma).collect();
        let (alpha, sigma) = gamma
            .iter()
            .map(|&g| {
                let (a2, s2) = alpha_sigma_sq(g);
                (a2.sqrt(), s2.sqrt())
            })
            .unzip();
        NoisingState { gamma, alpha, sigma }
    }

    pub fn uniform(gamma: f64, d: usize) -> Self {
        Self::new(vec![gamma; d])
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn alpha_sq(&self) -> Vec<f64> {
        self.gamma.iter().map(|&g| alpha_sigma_sq(g).0).collect()
    }

    pub fn sigma_sq(&self) -> Vec<f64> {
        self.gamma.iter().map(|&g| alpha_sigma_sq(g).1).collect()
    }

    /// `snr_i = alpha_i^2 / sigma_i^2 = exp(-gamma_i)`, ignoring the data scale.
    pub fn snr(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| (-g).exp()).collect()
    }
}

/// `log SNR_i = log Sigma_ii - gamma_i`.
pub fn log_snr(state: &NoisingState, log_var: &[f64]) -> Result<Vec<f64>> {
    check_len(state.dim(), log_var.len())?;
    Ok(state.gamma.iter().zip(log_var).map(|(g, lv)| lv - g).collect())
}

/// Smallest admissible `gamma_noise` so that every `sigma_i(1) >= sigma_min`,
/// never below 3.
pub fn noise_floor(log_var: &[f64], sigma_min: f64) -> Result<f64> {
    if !(sigma_min > 0.0 && sigma_min < 1.0) {
        return Err(invalid(format!("sigma_min must lie in (0, 1), got {sigma_min}")));
    }
    if log_var.is_empty() {
        return Err(invalid("empty log-variance vector"));
    }
    let min_lv = log_var.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(f64::max(3.0, logit(sigma_min * sigma_min) - min_lv))
}

/// Ordering variables interpolating between `-log Sigma_i` (`r = 0`) and an
/// affine image of the frequency magnitudes (`r = 1`) with a matched range.
pub fn fft_ordering_variables(log_var: &[f64], freq: &[f64], r: f64) -> Result<Vec<f64>> {
    check_len(log_var.len(), freq.len())?;
    if !(0.0..=1.0).contains(&r) {
        return Err(invalid(format!("r must lie in [0, 1], got {r}")));
    }
    if freq.iter().any(|k| !(*k >= 0.0)) {
        return Err(invalid("frequency labels must be nonnegative"));
    }
    let base: Vec<f64> = log_var.iter().map(|v| -v).collect();
    if r == 0.0 {
        return Ok(base);
    }
    let (lmin, lmax) = min_max(&base);
    let (kmin, kmax) = min_max(freq);
    if kmax == kmin || lmax == lmin {
        return Err(invalid("range matching of ordering variables is impossible for a constant vector"));
    }
    let kappa = (kmax - kmin) / (lmax - lmin);
    let delta = kappa * lmin - kmin;
    Ok(base
        .iter()
        .zip(freq)
        .map(|(b, k)| (1.0 - r) * b + r * (k + delta) / kappa)
        .collect())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    lo.max(hi.min(x))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleFamily {
    /// The same linear `gamma(t)` for every component.
    Standard { gamma_start: f64, gamma_end: f64 },
    /// `gamma_i(t) = gamma_min_i + (gamma_max_i - gamma_min_i) t`.
    LinearSoftness { gamma_min: Vec<f64>, gamma_max: Vec<f64> },
    /// Columns noised one after another; `groups[i]` is the 1-based column.
    Column { columns: usize, b: f64, gamma_min: f64, gamma_max: f64, groups: Vec<usize> },
    /// Wavelet levels offset by `a`, columns within a level offset by `b`;
    /// `groups[i]` is the 1-based `(level, column)`.
    HaarColumn {
        levels: usize,
        columns_per_level: Vec<usize>,
        a: f64,
        b: f64,
        gamma_min: f64,
        gamma_max: f64,
        groups: Vec<(usize, usize)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    family: ScheduleFamily,
    dim: usize,
}

impl Schedule {
    pub fn standard(gamma_start: f64, gamma_end: f64, dim: usize) -> Result<Self> {
        if !(gamma_end >= gamma_start) || dim == 0 {
            return Err(invalid("standard schedule needs gamma_end >= gamma_start and dim > 0"));
        }
        Ok(Schedule { family: ScheduleFamily::Standard { gamma_start, gamma_end }, dim })
    }

    /// Standard diffusion for data with the given log variances: identical
    /// `gamma` for all components with the declared SNR endpoints.
    pub fn standard_for(log_var: &[f64], gamma_denoise: f64, gamma_noise: f64) -> Result<Self> {
        let (lo, hi) = min_max(log_var);
        Self::standard(gamma_denoise + lo, gamma_noise + hi, log_var.len())
    }

    pub fn family(&self) -> &ScheduleFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(invalid(format!("time {t} outside [0, 1]")))
        }
    }

    /// Unclamped `gamma(t)`.
    pub fn gamma_raw(&self, t: f64) -> Result<Vec<f64>> {
        Self::check_t(t)?;
        Ok(match &self.family {
            ScheduleFamily::Standard { gamma_start, gamma_end } => {
                vec![gamma_start + (gamma_end - gamma_start) * t; self.dim]
            }
            ScheduleFamily::LinearSoftness { gamma_min, gamma_max } => gamma_min
                .iter()
                .zip(gamma_max)
                .map(|(lo, hi)| lo + (hi - lo) * t)
                .collect(),
            ScheduleFamily::Column { columns, b, gamma_min, gamma_max, groups } => {
                let per_col: Vec<f64> = (1..=*columns)
                    .map(|i| column_gamma(t, i, *columns, *b, *gamma_min, *gamma_max).0)
                    .collect();
                groups.iter().map(|&g| per_col[g - 1]).collect()
            }
            ScheduleFamily::HaarColumn { levels, columns_per_level, a, b, gamma_min, gamma_max, groups } => groups
                .iter()
                .map(|&(i, j)| {
                    haar_column_gamma(t, i, j, *levels, columns_per_level[i - 1], *a, *b, *gamma_min, *gamma_max).0
                })
                .collect(),
        })
    }

    pub fn gamma(&self, t: f64) -> Result<NoisingState> {
        Ok(NoisingState::new(self.gamma_raw(t)?))
    }

    /// Right derivative of `gamma` in `t`.
    pub fn gamma_dot(&self, t: f64) -> Result<Vec<f64>> {
        Self::check_t(t)?;
        Ok(match &self.family {
            ScheduleFamily::Standard { gamma_start, gamma_end } => vec![gamma_end - gamma_start; self.dim],
            ScheduleFamily::LinearSoftness { gamma_min, gamma_max } => {
                gamma_min.iter().zip(gamma_max).map(|(lo, hi)| hi - lo).collect()
            }
            ScheduleFamily::Column { columns, b, gamma_min, gamma_max, groups } => {
                let per_col: Vec<f64> = (1..=*columns)
                    .map(|i| column_gamma(t, i, *columns, *b, *gamma_min, *gamma_max).1)
                    .collect();
                groups.iter().map(|&g| per_col[g - 1]).collect()
            }
            ScheduleFamily::HaarColumn { levels, columns_per_level, a, b, gamma_min, gamma_max, groups } => groups
                .iter()
                .map(|&(i, j)| {
                    haar_column_gamma(t, i, j, *levels, columns_per_level[i - 1], *a, *b, *gamma_min, *gamma_max).1
                })
                .collect(),
        })
    }

    /// `beta_i(t) = sigma_i^2(t) * gamma_dot_i(t)`; zero where `gamma` is
    /// frozen or clamped.
    pub fn beta(&self, t: f64) -> Result<Vec<f64>> {
        let g = self.gamma_raw(t)?;
        let gd = self.gamma_dot(t)?;
        Ok(g.iter()
            .zip(&gd)
            .map(|(&g, &gd)| if g.abs() >= GAMMA_CLAMP { 0.0 } else { alpha_sigma_sq(g).1 * gd })
            .collect())
    }

    /// `int_{t0}^{t1} beta_i(s) ds`, exact for any piecewise schedule because
    /// `d softplus(gamma)/dt = beta`.
    pub fn integrated_beta(&self, t0: f64, t1: f64) -> Result<Vec<f64>> {
        let g0 = self.gamma_raw(t0)?;
        let g1 = self.gamma_raw(t1)?;
        Ok(g0
            .iter()
            .zip(&g1)
            .map(|(&a, &b)| softplus(clamp_gamma(b)) - softplus(clamp_gamma(a)))
            .collect())
    }
}

/// Column schedule value and right derivative for 1-based column `i`.
fn column_gamma(t: f64, i: usize, columns: usize, b: f64, gmin: f64, gmax: f64) -> (f64, f64) {
    let ti = b * (columns - i) as f64 / (columns - 1) as f64;
    let rate = (gmax - gmin) / (1.0 - b);
    let u = gmin + (t - ti) * rate;
    let dot = if u >= gmin && u < gmax { rate } else { 0.0 };
    (clip(u, gmin, gmax), dot)
}

#[allow(clippy::too_many_arguments)]
fn haar_column_gamma(
    t: f64,
    level: usize,
    col: usize,
    levels: usize,
    columns: usize,
    a: f64,
    b: f64,
    gmin: f64,
    gmax: f64,
) -> (f64, f64) {
    let ci = a * (levels - level) as f64 / (levels - 1) as f64;
    let cij = b * (columns - col) as f64 / (columns - 1) as f64;
    let s = (t - ci) / (1.0 - a);
    let ti = clip(s, 0.0, 1.0);
    let ti_dot = if (0.0..1.0).contains(&s) { 1.0 / (1.0 - a) } else { 0.0 };
    let rate = (gmax - gmin) / (1.0 - b);
    let u = gmin + rate * (ti - cij);
    let dot = if u >= gmin && u < gmax { rate * ti_dot } else { 0.0 };
    (clip(u, gmin, gmax), dot)
}

/// `gamma_min_i = g_denoise + log Sigma_i + a (l_i - l_max)`,
/// `gamma_max_i = g_noise + log Sigma_i + a (l_i - l_min)`.
pub fn linear_softness_schedule(
    log_var: &[f64],
    ordering: &[f64],
    a: f64,
    gamma_denoise: f64,
    gamma_noise: f64,
) -> Result<Schedule> {
    if ordering.is_empty() {
        return Err(invalid("empty ordering variables"));
    }
    check_len(log_var.len(), ordering.len())?;
    if !(a > 0.0) {
        return Err(invalid(format!("softness parameter a must be positive, got {a}")));
    }
    if ordering.iter().any(|l| !l.is_finite()) {
        return Err(invalid("ordering variables must be finite"));
    }
    if !(gamma_noise > gamma_denoise) {
        return Err(invalid("gamma_noise must exceed gamma_denoise"));
    }
    let (lmin, lmax) = min_max(ordering);
    let gamma_min = log_var.iter().zip(ordering).map(|(lv, l)| gamma_denoise + lv + a * (l - lmax)).collect();
    let gamma_max = log_var.iter().zip(ordering).map(|(lv, l)| gamma_noise + lv + a * (l - lmin)).collect();
    Ok(Schedule { family: ScheduleFamily::LinearSoftness { gamma_min, gamma_max }, dim: log_var.len() })
}

pub fn column_schedule(columns: usize, b: f64, gamma_min: f64, gamma_max: f64, groups: Vec<usize>) -> Result<Schedule> {
    if columns < 2 {
        return Err(invalid("column schedule needs at least 2 columns"));
    }
    if !(0.0..1.0).contains(&b) {
        return Err(invalid(format!("b must lie in [0, 1), got {b}")));
    }
    if !(gamma_min < gamma_max) {
        return Err(invalid("gamma_min must be below gamma_max"));
    }
    if groups.is_empty() || groups.iter().any(|&g| g == 0 || g > columns) {
        return Err(invalid("column groups must lie in 1..=columns"));
    }
    let dim = groups.len();
    Ok(Schedule { family: ScheduleFamily::Column { columns, b, gamma_min, gamma_max, groups }, dim })
}

pub fn haar_column_schedule(
    columns_per_level: Vec<usize>,
    a: f64,
    b: f64,
    gamma_min: f64,
    gamma_max: f64,
    groups: Vec<(usize, usize)>,
) -> Result<Schedule> {
    let levels = columns_per_level.len();
    if levels < 2 || columns_per_level.iter().any(|&l| l < 2) {
        return Err(invalid("haar-column schedule needs >= 2 levels with >= 2 columns each"));
    }
    for (name, v) in [("a", a), ("b", b)] {
        if !(0.0..1.0).contains(&v) {
            return Err(invalid(format!("{name} must lie in [0, 1), got {v}")));
        }
    }
    if !(gamma_min < gamma_max) {
        return Err(invalid("gamma_min must be below gamma_max"));
    }
    if groups.is_empty()
        || groups.iter().any(|&(i, j)| i == 0 || i > levels || j == 0 || j > columns_per_level[i - 1])
    {
        return Err(invalid("haar-column groups out of range"));
    }
    let dim = groups.len();
    Ok(Schedule {
        family: ScheduleFamily::HaarColumn { levels, columns_per_level, a, b, gamma_min, gamma_max, groups },
        dim,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Standard,
    Linear,
    Column,
    HaarColumn,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Standard => "standard",
            FamilyKind::Linear => "linear",
            FamilyKind::Column => "column",
            FamilyKind::HaarColumn => "haar-column",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = GudError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(FamilyKind::Standard),
            "linear" | "linear-softness" => Ok(FamilyKind::Linear),
            "column" => Ok(FamilyKind::Column),
            "haar-column" => Ok(FamilyKind::HaarColumn),
            _ => Err(invalid(format!("unknown schedule family '{s}'"))),
        }
    }
}

/// Haar columns per schedule level, and `(level, column)` per component.
pub type HaarGroups = (Vec<usize>, Vec<(usize, usize)>);

/// Data-dependent inputs needed to instantiate a schedule.
#[derive(Debug, Clone)]
pub struct ScheduleContext {
    /// `log Sigma_i` of the centred data in the component basis.
    pub log_var: Vec<f64>,
    /// Basis position labels (`-log Sigma` for PCA, `|k|` for Fourier).
    pub labels: Vec<f64>,
    pub basis_kind: BasisKind,
    pub column_groups: Option<Vec<usize>>,
    pub haar: Option<HaarGroups>,
}

impl ScheduleContext {
    pub fn new(basis: &BasisSpec, log_var: Vec<f64>) -> Result<Self> {
        check_len(basis.dim(), log_var.len())?;
        Ok(ScheduleContext {
            log_var,
            labels: basis.labels().to_vec(),
            basis_kind: basis.kind(),
            column_groups: basis.column_groups(),
            haar: basis.haar_layout().map(|l| (l.columns_per_level(), l.groups())),
        })
    }

    /// Context for plain vectors in the identity basis.
    pub fn for_vector(log_var: Vec<f64>) -> Self {
        let d = log_var.len();
        let basis = BasisSpec::identity(crate::Shape::vector(d));
        Self::new(&basis, log_var).expect("lengths match by construction")
    }
}

/// Family plus named parameters, independent of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub family: FamilyKind,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub gamma_denoise: f64,
    /// `None` selects the noise floor for `sigma_min`.
    pub gamma_noise: Option<f64>,
    pub sigma_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            family: FamilyKind::Standard,
            a: 1.0,
            b: 0.5,
            r: 0.0,
            gamma_denoise: DEFAULT_GAMMA_DENOISE,
            gamma_noise: None,
            sigma_min: DEFAULT_SIGMA_MIN,
        }
    }
}

impl ScheduleConfig {
    pub fn gamma_noise_for(&self, log_var: &[f64]) -> Result<f64> {
        match self.gamma_noise {
            Some(g) => Ok(g),
            None => noise_floor(log_var, self.sigma_min),
        }
    }

    pub fn build(&self, ctx: &ScheduleContext) -> Result<Schedule> {
        let g_noise = self.gamma_noise_for(&ctx.log_var)?;
        match self.family {
            FamilyKind::Standard => Schedule::standard_for(&ctx.log_var, self.gamma_denoise, g_noise),
            FamilyKind::Linear => {
                let ordering = if self.r == 0.0 {
                    ctx.log_var.iter().map(|v| -v).collect()
                } else {
                    fft_ordering_variables(&ctx.log_var, &ctx.labels, self.r)?
                };
                linear_softness_schedule(&ctx.log_var, &ordering, self.a, self.gamma_denoise, g_noise)
            }
            FamilyKind::Column => {
                let groups = ctx
                    .column_groups
                    .clone()
                    .ok_or_else(|| invalid("column schedule needs a pixel or column basis"))?;
                let columns = *groups.iter().max().unwrap_or(&0);
                column_schedule(columns, self.b, self.gamma_denoise, g_noise, groups)
            }
            FamilyKind::HaarColumn => {
                let (cols, groups) = ctx.haar.clone().ok_or_else(|| invalid("haar-column schedule needs a Haar basis"))?;
                haar_column_schedule(cols, self.a, self.b, self.gamma_denoise, g_noise, groups)
            }
        }
    }

    /// Plain-text `key = value` section.
    pub fn to_kv(&self) -> String {
        let mut s = String::from("[schedule]\n");
        let _ = writeln!(s, "family = {}", self.family.name());
        let _ = writeln!(s, "a = {}", self.a);
        let _ = writeln!(s, "b = {}", self.b);
        let _ = writeln!(s, "r = {}", self.r);
        let _ = writeln!(s, "gamma_denoise = {}", self.gamma_denoise);
        if let Some(g) = self.gamma_noise {
            let _ = writeln!(s, "gamma_noise = {g}");
        }
        let _ = writeln!(s, "sigma_min = {}", self.sigma_min);
        s
    }

    /// Parse the `[schedule]` section of a key-value document. Unknown keys in
    /// that section are an error.
    pub fn from_kv(text: &str) -> Result<Self> {
        let sections = parse_kv(text)?;
        let map = sections.get("schedule").ok_or_else(|| invalid("missing [schedule] section"))?;
        let mut cfg = ScheduleConfig::default();
        for (k, v) in map {
            let num = || v.parse::<f64>().map_err(|_| invalid(format!("bad number for {k}: '{v}'")));
            match k.as_str() {
                "family" => cfg.family = v.parse()?,
                "a" => cfg.a = num()?,
                "b" => cfg.b = num()?,
                "r" => cfg.r = num()?,
                "gamma_denoise" => cfg.gamma_denoise = num()?,
                "gamma_noise" => cfg.gamma_noise = Some(num()?),
                "sigma_min" => cfg.sigma_min = num()?,
                _ => return Err(invalid(format!("unknown schedule key '{k}'"))),
            }
        }
        Ok(cfg)
    }
}

/// Minimal INI-like parser: `[section]` headers, `key = value` lines, `#`
/// comments. Keys before any header land in the "" section.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current = String::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            out.entry(current.clone()).or_default();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("line {}: expected key = value", no + 1)))?;
        out.entry(current.clone()).or_default().insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> impl Iterator<Item = f64> {
        (0..=n).map(move |k| k as f64 / n as f64)
    }

    #[test]
    fn standard_midpoint_and_time_validation() {
        let s = Schedule::standard(-7.0, 3.0, 4).unwrap();
        assert!(s.gamma_raw(0.5).unwrap().iter().all(|&g| g == -2.0));
        assert!(s.gamma(1.5).is_err());
        assert!(s.gamma(-0.1).is_err());
    }

    #[test]
    fn alpha_sigma_complement() {
        for g in [-40.0, -7.0, -1e-3, 0.0, 0.3, 5.0, 29.0, 80.0] {
            let st = NoisingState::new(vec![g]);
            let (a2, s2) = (st.alpha[0].powi(2), st.sigma[0].powi(2));
            assert!((a2 + s2 - 1.0).abs() < 1e-15);
            assert!(st.alpha[0] > 0.0 && st.alpha[0] < 1.0);
            assert!(st.sigma[0] > 0.0 && st.sigma[0] < 1.0);
        }
    }

    #[test]
    fn beta_at_zero_gamma() {
        let s = Schedule::standard(-1.0, 1.0, 1).unwrap();
        assert!((s.beta(0.5).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_snr_examples() {
        let st = NoisingState::new(vec![0.0, 2.0]);
        assert_eq!(log_snr(&st, &[0.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(log_snr(&st, &[0.0]).is_err());
    }

    #[test]
    fn noise_floor_examples() {
        let g = noise_floor(&[0.0, 1.0], 0.99).unwrap();
        assert!((g - (0.9801f64 / 0.0199).ln()).abs() < 1e-12);
        assert!((g - 3.897).abs() < 1e-3);
        assert_eq!(noise_floor(&[0.0], 1e-6).unwrap(), 3.0);
        assert!(noise_floor(&[0.0], 1.0).is_err());
        assert!(noise_floor(&[0.0], 0.0).is_err());
    }

    #[test]
    fn linear_softness_endpoints() {
        let s = linear_softness_schedule(&[0.0, 0.0], &[0.0, 1.0], 2.0, -7.0, 3.0).unwrap();
        match s.family() {
            ScheduleFamily::LinearSoftness { gamma_min, gamma_max } => {
                assert_eq!(gamma_min, &vec![-9.0, -7.0]);
                assert_eq!(gamma_max, &vec![3.0, 5.0]);
            }
            _ => unreachable!(),
        }
        assert!(linear_softness_schedule(&[], &[], 1.0, -7.0, 3.0).is_err());
        assert!(linear_softness_schedule(&[0.0], &[0.0], 0.0, -7.0, 3.0).is_err());
    }

    #[test]
    fn ordering_variables() {
        let lv = [0.0, -2.0];
        assert_eq!(fft_ordering_variables(&lv, &[0.0, 1.0], 0.0).unwrap(), vec![0.0, 2.0]);
        let l = fft_ordering_variables(&lv, &[0.0, 1.0], 0.5).unwrap();
        assert!((l[0] - 0.0).abs() < 1e-14 && (l[1] - 2.0).abs() < 1e-14);
        let l = fft_ordering_variables(&[0.3, -1.0, -2.5], &[0.0, 3.0, 1.0], 1.0).unwrap();
        let (lo, hi) = min_max(&l);
        assert!((lo + 0.3).abs() < 1e-12 && (hi - 2.5).abs() < 1e-12);
        assert!(fft_ordering_variables(&lv, &[1.0, 1.0], 1.0).is_err());
        assert!(fft_ordering_variables(&lv, &[0.0, 1.0], 1.5).is_err());
    }

    #[test]
    fn column_head_tail_and_plateau() {
        let (l, b) = (5, 0.4);
        let s = column_schedule(l, b, -7.0, 4.0, (1..=l).collect()).unwrap();
        for t in grid(100).filter(|&t| t <= b) {
            assert_eq!(s.gamma_raw(t).unwrap()[0], -7.0);
        }
        let g = s.gamma_raw(1.0 - b).unwrap();
        assert!((g[l - 1] - 4.0).abs() < 1e-12);
        assert_eq!(s.gamma_dot(0.1).unwrap()[0], 0.0);
        assert_eq!(s.gamma_dot(0.99).unwrap()[l - 1], 0.0);
        assert!(s.beta(0.1).unwrap()[0] == 0.0);
        assert!(column_schedule(1, 0.5, -7.0, 3.0, vec![1]).is_err());
        assert!(column_schedule(3, 1.0, -7.0, 3.0, vec![1]).is_err());
    }

    #[test]
    fn column_shift_identity() {
        let (l, b) = (6, 0.5);
        let s = column_schedule(l, b, -7.0, 3.9, (1..=l).collect()).unwrap();
        let dt = b / (l - 1) as f64;
        for t in grid(997) {
            if t + dt > 1.0 {
                break;
            }
            let now = s.gamma_raw(t).unwrap();
            let later = s.gamma_raw(t + dt).unwrap();
            for i in 0..l - 1 {
                assert!((now[i + 1] - later[i]).abs() < 1e-12, "t={t} i={i}");
            }
        }
    }

    #[test]
    fn haar_column_offsets() {
        // two levels with two columns each; groups (level, column)
        let groups = vec![(1, 1), (1, 2), (2, 1), (2, 2)];
        let s = haar_column_schedule(vec![2, 2], 0.0, 0.5, -7.0, 3.0, groups.clone()).unwrap();
        // a = 0: both levels move together
        for t in grid(50) {
            let g = s.gamma_raw(t).unwrap();
            assert_eq!(g[0], g[2]);
            assert_eq!(g[1], g[3]);
        }
        // b = 0.5, L = 2: column 2 starts noising at t_i = 0, column 1 at t_i = 0.5
        let g = s.gamma_raw(0.25).unwrap();
        assert_eq!(g[0], -7.0);
        assert!(g[1] > -7.0);
        let s = haar_column_schedule(vec![2, 2], 0.5, 0.5, -7.0, 3.0, groups).unwrap();
        // last level is unshifted: its internal time is t / (1 - a)
        let g = s.gamma_raw(0.2).unwrap();
        let expected = -7.0 + 10.0 / 0.5 * (0.2 / 0.5 - 0.0);
        assert!((g[3] - expected).abs() < 1e-12);
        assert_eq!(g[1], -7.0);
        // every component is fully noised at t = 1
        assert!(s.gamma_raw(1.0).unwrap().iter().all(|&g| g == 3.0));
        assert!(haar_column_schedule(vec![2], 0.5, 0.5, -7.0, 3.0, vec![(1, 1)]).is_err());
        assert!(haar_column_schedule(vec![2, 2], 1.0, 0.5, -7.0, 3.0, vec![(1, 1)]).is_err());
    }

    #[test]
    fn integrated_beta_matches_alpha() {
        let s = column_schedule(4, 0.6, -7.0, 4.0, vec![1, 2, 3, 4]).unwrap();
        let a0 = s.gamma(0.0).unwrap().alpha;
        for t in [0.2, 0.5, 0.9, 1.0] {
            let ib = s.integrated_beta(0.0, t).unwrap();
            let at = s.gamma(t).unwrap().alpha;
            for i in 0..4 {
                assert!(((-0.5 * ib[i]).exp() * a0[i] - at[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn config_kv_roundtrip() {
        let cfg = ScheduleConfig {
            family: FamilyKind::HaarColumn,
            a: 0.5,
            b: 0.3,
            r: 0.0,
            gamma_denoise: -7.0,
            gamma_noise: Some(4.5),
            sigma_min: 0.99,
        };
        assert_eq!(ScheduleConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(ScheduleConfig::from_kv("[schedule]\nfamily = linear\nbogus = 1\n").is_err());
        assert!(ScheduleConfig::from_kv("[schedule]\nfamily = spiral\n").is_err());
    }
}
