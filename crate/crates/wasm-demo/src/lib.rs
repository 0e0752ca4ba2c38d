//! Browser demo: schedule curves, coarse-to-fine noising of a Haar-basis
//! image, and exact-score sampling of a 2-D mixture.

use gud_core::basis::{haar_decompose, HaarLayout, SubBand};
use gud_core::process::{forward_sample, reverse_sde_sample};
use gud_core::schedule::{log_snr, FamilyKind, ScheduleConfig, ScheduleContext};
use gud_core::{rng, BasisSpec, GaussianMixture, Schedule, Shape};
use wasm_bindgen::prelude::*;

pub const SIZE: usize = 32;
const LEVELS: usize = 3;

/// Procedural grayscale test image in `[-1, 1]`, row-major.
pub fn test_image() -> Vec<f64> {
    let c = (SIZE as f64 - 1.0) / 2.0;
    (0..SIZE * SIZE)
        .map(|p| {
            let (y, x) = ((p / SIZE) as f64, (p % SIZE) as f64);
            let ramp = (x - c) / SIZE as f64;
            let disc = if (x - 10.0).powi(2) + (y - 11.0).powi(2) < 36.0 { 0.8 } else { 0.0 };
            let stripes = if y > 20.0 && (x as usize / 2).is_multiple_of(2) { 0.5 } else { -0.2 };
            (ramp + disc + stripes).clamp(-1.0, 1.0)
        })
        .collect()
}

pub struct Scene {
    shape: Shape,
    basis: BasisSpec,
    chi0: Vec<f64>,
    log_var: Vec<f64>,
    ctx: ScheduleContext,
    /// Component indices shown as curves, with their labels.
    picks: Vec<(usize, String)>,
}

impl Scene {
    pub fn new() -> Result<Self, String> {
        let shape = Shape::new(SIZE, SIZE, 1).map_err(|e| e.to_string())?;
        let basis = BasisSpec::haar(shape, LEVELS).map_err(|e| e.to_string())?;
        let layout = HaarLayout::new(shape, LEVELS).map_err(|e| e.to_string())?;
        let coeffs = haar_decompose(&test_image(), shape, LEVELS).map_err(|e| e.to_string())?;
        let chi0 = coeffs.coefficients;
        // per-band mean square stands in for the component variance
        let mut log_var = vec![0.0; shape.dim()];
        let mut picks = Vec::new();
        for b in &layout.bands {
            let n = b.height * b.width;
            let ms = chi0[b.offset..b.offset + n].iter().map(|v| v * v).sum::<f64>() / n as f64;
            log_var[b.offset..b.offset + n].iter_mut().for_each(|v| *v = (ms + 1e-3).ln());
            let name = match b.kind {
                SubBand::LL => "LL",
                SubBand::LH => "LH",
                SubBand::HL => "HL",
                SubBand::HH => "HH",
            };
            if b.kind != SubBand::HL {
                picks.push((b.offset, format!("{name}{} col 1", b.level)));
                picks.push((b.offset + b.width - 1, format!("{name}{} col {}", b.level, b.width)));
            }
        }
        let ctx = ScheduleContext::new(&basis, log_var.clone()).map_err(|e| e.to_string())?;
        Ok(Scene { shape, basis, chi0, log_var, ctx, picks })
    }

    pub fn schedule(&self, family: &str, a: f64, b: f64) -> Result<Schedule, String> {
        let family: FamilyKind = family.parse().map_err(|e: gud_core::GudError| e.to_string())?;
        let cfg = ScheduleConfig { family, a, b, ..Default::default() };
        cfg.build(&self.ctx).map_err(|e| e.to_string())
    }

    pub fn curve_labels(&self) -> Vec<String> {
        self.picks.iter().map(|(_, l)| l.clone()).collect()
    }

    /// Log SNR of each picked component at `points` evenly spaced times,
    /// curve-major.
    pub fn log_snr_curves(&self, family: &str, a: f64, b: f64, points: usize) -> Result<Vec<f64>, String> {
        let s = self.schedule(family, a, b)?;
        let points = points.max(2);
        let rows: Vec<Vec<f64>> = (0..points)
            .map(|k| {
                let state = s.gamma(k as f64 / (points - 1) as f64).map_err(|e| e.to_string())?;
                log_snr(&state, &self.log_var).map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        Ok(self.picks.iter().flat_map(|&(i, _)| rows.iter().map(move |r| r[i])).collect())
    }

    /// Pixels of the test image after forward noising to time `t`.
    pub fn noised_image(&self, family: &str, a: f64, b: f64, t: f64, seed: u64) -> Result<Vec<f64>, String> {
        let s = self.schedule(family, a, b)?;
        let state = s.gamma(t.clamp(0.0, 1.0)).map_err(|e| e.to_string())?;
        let mut r = rng::seeded(seed);
        let chi = forward_sample(&self.chi0, &state, &mut r);
        let phi = self.basis.inverse(&chi).map_err(|e| e.to_string())?;
        debug_assert_eq!(phi.len(), self.shape.dim());
        Ok(phi)
    }
}

pub fn mixture() -> GaussianMixture {
    GaussianMixture::new(vec![0.3, 0.7], vec![vec![-2.1, 1.4], vec![0.9, -0.6]], vec![vec![0.3, 0.3]; 2])
        .expect("valid mixture")
}

/// Reverse-SDE samples of the 2-D mixture under a linear-softness schedule
/// with softness `a`, as interleaved `x, y` pairs.
pub fn mixture_samples(a: f64, steps: usize, n: usize, seed: u64) -> Result<Vec<f64>, String> {
    let mix = mixture();
    let lv: Vec<f64> = mix.marginal_variances().iter().map(|v| v.ln()).collect();
    let cfg = ScheduleConfig { family: FamilyKind::Linear, a, ..Default::default() };
    let s = cfg.build(&ScheduleContext::for_vector(lv)).map_err(|e| e.to_string())?;
    let x = reverse_sde_sample(&mix, &s, steps.max(1), n, seed).map_err(|e| e.to_string())?;
    Ok(x.into_iter().flatten().collect())
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Demo, JsError> {
        Ok(Demo { scene: Scene::new().map_err(js)? })
    }

    pub fn size(&self) -> usize {
        SIZE
    }

    #[wasm_bindgen(js_name = curveLabels)]
    pub fn curve_labels(&self) -> Vec<String> {
        self.scene.curve_labels()
    }

    #[wasm_bindgen(js_name = logSnrCurves)]
    pub fn log_snr_curves(&self, family: &str, a: f64, b: f64, points: usize) -> Result<Vec<f64>, JsError> {
        self.scene.log_snr_curves(family, a, b, points).map_err(js)
    }

    #[wasm_bindgen(js_name = noisedImage)]
    pub fn noised_image(&self, family: &str, a: f64, b: f64, t: f64, seed: u32) -> Result<Vec<f64>, JsError> {
        self.scene.noised_image(family, a, b, t, seed as u64).map_err(js)
    }
}

#[wasm_bindgen(js_name = mixtureSamples)]
pub fn mixture_samples_js(a: f64, steps: usize, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    mixture_samples(a, steps, n, seed as u64).map_err(js)
}
