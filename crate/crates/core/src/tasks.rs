//! Sequential image extension with a column schedule, and reconstruction of
//! partially noised images.

use crate::basis::{column_grouping, Shape};
use crate::error::{check_len, invalid, Result};
use crate::process::{forward_sample, reverse_sde_segment, ScoreFunction};
use crate::rng::{self, GudRng};
use crate::schedule::{Schedule, ScheduleFamily};

/// Timing of an extension run for a column schedule over an `L`-column
/// window: the window sits at `t_window`, and denoising it by
/// `k * dt = k b / (L - 1)` brings the first `k` columns to `gamma_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtensionPlan {
    pub columns: usize,
    pub b: f64,
    pub k: usize,
    pub dt: f64,
    pub t_window: f64,
}

impl ExtensionPlan {
    pub fn new(schedule: &Schedule, k: usize) -> Result<Self> {
        let (columns, b) = match schedule.family() {
            ScheduleFamily::Column { columns, b, .. } => (*columns, *b),
            _ => return Err(invalid("extension needs a column schedule")),
        };
        if k == 0 || k >= columns {
            return Err(invalid(format!("k must lie in 1..{columns}, got {k}")));
        }
        let dt = b / (columns - 1) as f64;
        if k as f64 * dt > b + 1e-12 {
            return Err(invalid(format!("insufficient softness: k dt = {} exceeds b = {b}", k as f64 * dt)));
        }
        let t_window = b * columns as f64 / (columns - 1) as f64;
        if t_window > 1.0 {
            return Err(invalid(format!("window time {t_window} exceeds 1; lower b")));
        }
        Ok(ExtensionPlan { columns, b, k, dt, t_window })
    }

    /// Time after one cycle of denoising.
    pub fn t_commit(&self) -> f64 {
        (self.t_window - self.k as f64 * self.dt).max(0.0)
    }

    /// Largest deviation between the gamma of window column `j` at
    /// `t_window` and that of column `j + k` at `t_commit`; zero when the
    /// shifted window resumes exactly where it left off.
    pub fn restoration_error(&self, schedule: &Schedule) -> Result<f64> {
        let before = column_gammas(schedule, self.t_commit())?;
        let after = column_gammas(schedule, self.t_window)?;
        Ok((0..self.columns - self.k).map(|j| (after[j] - before[j + self.k]).abs()).fold(0.0, f64::max))
    }

    /// Whether the appended prior columns are exactly at `gamma_max`.
    pub fn prior_columns_exact(&self, schedule: &Schedule) -> Result<bool> {
        let g = column_gammas(schedule, self.t_window)?;
        let gmax = match schedule.family() {
            ScheduleFamily::Column { gamma_max, .. } => *gamma_max,
            _ => unreachable!("checked in new"),
        };
        Ok(g[self.columns - self.k..].iter().all(|&v| v >= gmax))
    }
}

/// Per-column gamma of a column schedule.
fn column_gammas(schedule: &Schedule, t: f64) -> Result<Vec<f64>> {
    let groups = match schedule.family() {
        ScheduleFamily::Column { groups, columns, .. } => {
            let mut first = vec![usize::MAX; *columns];
            for (i, &g) in groups.iter().enumerate() {
                if first[g - 1] == usize::MAX {
                    first[g - 1] = i;
                }
            }
            first
        }
        _ => return Err(invalid("extension needs a column schedule")),
    };
    let gamma = schedule.gamma_raw(t)?;
    Ok(groups.iter().map(|&i| gamma[i]).collect())
}

/// A generated strip, row-major `(row, col, channel)` with `width` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Strip {
    pub shape: Shape,
    pub pixels: Vec<f64>,
    /// `(cycle, first column, one past last column)` committed per cycle; the
    /// final row is the flush of the last window.
    pub index: Vec<(usize, usize, usize)>,
}

impl Strip {
    pub fn index_csv(&self) -> String {
        let mut s = String::from("cycle,col_start,col_end\n");
        for (c, a, b) in &self.index {
            s.push_str(&format!("{c},{a},{b}\n"));
        }
        s
    }
}

fn steps_for(span: f64, steps_per_unit: usize) -> usize {
    ((span * steps_per_unit as f64).round() as usize).max(1)
}

fn column_of(window: &[f64], shape: Shape, col: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(shape.height * shape.channels);
    for row in 0..shape.height {
        for ch in 0..shape.channels {
            out.push(window[shape.index(row, col, ch)]);
        }
    }
    out
}

fn set_column(window: &mut [f64], shape: Shape, col: usize, values: &[f64]) {
    let mut it = values.iter();
    for row in 0..shape.height {
        for ch in 0..shape.channels {
            window[shape.index(row, col, ch)] = *it.next().expect("column length");
        }
    }
}

/// Generate one strip of width `L + k * cycles`. `window` is the component
/// vector of an `L`-column image in pixel order at `plan.t_window`; `None`
/// starts with a reverse run from the prior. `steps_per_unit` sets the SDE
/// step density in time.
#[allow(clippy::too_many_arguments)]
pub fn extend_image<S: ScoreFunction + ?Sized>(
    score: &S,
    schedule: &Schedule,
    shape: Shape,
    window: Option<Vec<f64>>,
    k: usize,
    cycles: usize,
    steps_per_unit: usize,
    rng: &mut GudRng,
) -> Result<Strip> {
    let plan = ExtensionPlan::new(schedule, k)?;
    if shape.width != plan.columns {
        return Err(invalid(format!("window has {} columns but the schedule has {}", shape.width, plan.columns)));
    }
    check_len(shape.dim(), schedule.dim())?;
    check_len(shape.dim(), score.dim())?;
    if let ScheduleFamily::Column { groups, .. } = schedule.family() {
        if *groups != column_grouping(shape) {
            return Err(invalid("extension needs the column schedule in pixel order"));
        }
    }
    let mut win = match window {
        Some(w) => {
            check_len(shape.dim(), w.len())?;
            w
        }
        None => {
            let mut w = rng::normal_vec(rng, shape.dim());
            reverse_sde_segment(score, schedule, &mut w, 1.0, plan.t_window, steps_for(1.0 - plan.t_window, steps_per_unit), rng)?;
            w
        }
    };
    let col_len = shape.height * shape.channels;
    let mut committed: Vec<Vec<f64>> = Vec::new();
    let mut index = Vec::new();
    let cycle_steps = steps_for(plan.t_window - plan.t_commit(), steps_per_unit);
    for cycle in 0..cycles {
        reverse_sde_segment(score, schedule, &mut win, plan.t_window, plan.t_commit(), cycle_steps, rng)?;
        let start = committed.len();
        for c in 0..k {
            committed.push(column_of(&win, shape, c));
        }
        index.push((cycle, start, committed.len()));
        for c in 0..plan.columns - k {
            let moved = column_of(&win, shape, c + k);
            set_column(&mut win, shape, c, &moved);
        }
        for c in plan.columns - k..plan.columns {
            set_column(&mut win, shape, c, &rng::normal_vec(rng, col_len));
        }
    }
    reverse_sde_segment(score, schedule, &mut win, plan.t_window, 0.0, steps_for(plan.t_window, steps_per_unit), rng)?;
    let start = committed.len();
    for c in 0..plan.columns {
        committed.push(column_of(&win, shape, c));
    }
    index.push((cycles, start, committed.len()));
    let out_shape = Shape::new(shape.height, committed.len(), shape.channels)?;
    let mut pixels = vec![0.0; out_shape.dim()];
    for (c, col) in committed.iter().enumerate() {
        set_column(&mut pixels, out_shape, c, col);
    }
    Ok(Strip { shape: out_shape, pixels, index })
}

/// `n` independent strips, strip `i` driven by stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn extend_images<S: ScoreFunction + ?Sized>(
    score: &S,
    schedule: &Schedule,
    shape: Shape,
    k: usize,
    cycles: usize,
    steps_per_unit: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Strip>> {
    rng::map_indexed(n, |i| {
        let mut r = rng::stream(seed, i as u64);
        extend_image(score, schedule, shape, None, k, cycles, steps_per_unit, &mut r)
    })
    .into_iter()
    .collect()
}

/// Noise `chi0` forward to `t_noise` and denoise back to 0, once per variant
/// with stream `v` of `seed`.
pub fn reconstruct<S: ScoreFunction + ?Sized>(
    score: &S,
    schedule: &Schedule,
    chi0: &[f64],
    t_noise: f64,
    steps_per_unit: usize,
    seed: u64,
    n_variants: usize,
) -> Result<Vec<Vec<f64>>> {
    check_len(schedule.dim(), chi0.len())?;
    check_len(schedule.dim(), score.dim())?;
    if !(t_noise > 0.0 && t_noise < 1.0) {
        return Err(invalid(format!("t_noise must lie in (0, 1), got {t_noise}")));
    }
    let state = schedule.gamma(t_noise)?;
    let steps = steps_for(t_noise, steps_per_unit);
    rng::map_indexed(n_variants, |v| {
        let mut r = rng::stream(seed, v as u64);
        let mut x = forward_sample(chi0, &state, &mut r);
        reverse_sde_segment(score, schedule, &mut x, t_noise, 0.0, steps, &mut r)?;
        Ok(x)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::GaussianMixture;
    use crate::schedule::column_schedule;

    fn sched(h: usize, l: usize, b: f64) -> (Shape, Schedule) {
        let shape = Shape::new(h, l, 1).unwrap();
        (shape, column_schedule(l, b, -7.0, 3.9, column_grouping(shape)).unwrap())
    }

    #[test]
    fn plan_preconditions() {
        let (_, s) = sched(2, 16, 0.5);
        let p = ExtensionPlan::new(&s, 4).unwrap();
        assert!((p.dt - 0.5 / 15.0).abs() < 1e-15);
        assert!(p.restoration_error(&s).unwrap() < 1e-12, "{}", p.restoration_error(&s).unwrap());
        assert!(ExtensionPlan::new(&s, 16).is_err());
        assert!(ExtensionPlan::new(&s, 0).is_err());
        let (_, s) = sched(2, 4, 0.9);
        assert!(ExtensionPlan::new(&s, 2).is_err());
    }

    #[test]
    fn strip_width_and_index() {
        let (shape, s) = sched(2, 6, 0.5);
        let mix = GaussianMixture::standard_normal(shape.dim());
        let strip = extend_image(&mix, &s, shape, None, 2, 3, 50, &mut rng::seeded(3)).unwrap();
        assert_eq!(strip.shape.width, 6 + 2 * 3);
        assert_eq!(strip.index.last(), Some(&(3, 6, 12)));
        let again = extend_image(&mix, &s, shape, None, 2, 3, 50, &mut rng::seeded(3)).unwrap();
        assert_eq!(strip, again);
    }

    #[test]
    fn reconstruction_near_zero_noise_is_identity() {
        let (shape, s) = sched(2, 4, 0.5);
        let mix = GaussianMixture::diagonal(vec![0.5; shape.dim()]).unwrap();
        let x0: Vec<f64> = (0..shape.dim()).map(|i| i as f64 * 0.1 - 0.3).collect();
        let out = reconstruct(&mix, &s, &x0, 1e-4, 1000, 1, 2).unwrap();
        for v in out {
            for (a, b) in v.iter().zip(&x0) {
                assert!((a - b).abs() < 0.1);
            }
        }
        assert!(reconstruct(&mix, &s, &x0, 1.0, 10, 1, 1).is_err());
    }
}
