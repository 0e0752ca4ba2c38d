use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gud_core::basis::{build_pca_basis, estimate_covariance, pooled_pixel_covariance, DEFAULT_VARIANCE_FLOOR};
use gud_core::container::Container;
use gud_core::data::{requantize_value, RawImages, Split};
use gud_core::process::{ode_nll, ode_sample, reverse_sde_sample, Divergence, NllConfig, NllReport, OdeConfig, OdeMethod};
use gud_core::schedule::{log_snr, FamilyKind};
use gud_core::score_net::{train, TrainConfig};
use gud_core::tasks::{extend_images, reconstruct};
use gud_core::{BasisSpec, ScheduleConfig, ScheduleContext, Shape};

use crate::args::*;
use crate::inputs::*;
use crate::settings::{parse_list, parse_range, FileConfig, Run};
use crate::CliError;

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::FitBasis(a) => fit_basis(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample(a),
        Command::Nll(a) => nll(a),
        Command::Extend(a) => extend(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::ScheduleViz(a) => schedule_viz(a),
        Command::Sweep(a) => sweep(a),
        Command::Convert(a) => convert(a),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::missing(format!("cannot write {}: {e}", path.display())))
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn train_split(ds: &gud_core::data::Dataset) -> Vec<Vec<f64>> {
    ds.split(Split::Train)
}

/// Evaluation split: the test split when one exists, else everything.
fn eval_split(ds: &gud_core::data::Dataset) -> Vec<Vec<f64>> {
    let test = ds.split(Split::Test);
    if test.is_empty() {
        ds.samples.clone()
    } else {
        test
    }
}

fn fit_basis(a: FitBasisArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    let f = &run.file;
    let ds = load_dataset(&a.data, f, run.seed)?;
    let train = train_split(&ds);
    if train.len() < 2 {
        return Err(CliError::config("fitting a basis needs at least 2 training samples"));
    }
    let kind = f.pick(a.basis.clone(), "basis", "identity".to_string())?;
    let whiten = f.flag(a.whiten, "whiten")?;
    let floor = f.pick(a.variance_floor, "variance_floor", DEFAULT_VARIANCE_FLOOR)?;
    let shape = ds.shape;
    let mut basis = match kind.as_str() {
        "identity" | "pixel" => BasisSpec::identity(shape),
        "permutation" => BasisSpec::permutation(shape),
        "haar" => BasisSpec::haar(shape, f.pick(a.levels, "levels", 1)?)?,
        "fft" => BasisSpec::fft(shape)?,
        "pca" => {
            let cov = pooled_pixel_covariance(&train, shape)?;
            build_pca_basis(&cov, whiten, floor, shape)?
        }
        other => return Err(CliError::config(format!("unknown basis kind '{other}'"))),
    };
    if whiten && kind != "pca" {
        let est = estimate_covariance(&to_components(&basis, &train)?)?;
        basis = basis.whitened(&est.variances, floor)?;
    }
    let chi = to_components(&basis, &train)?;
    let est = estimate_covariance(&chi)?;
    let out = run.output(a.out.as_deref(), "basis.gudbasis");
    basis.save(&out)?;
    announce(&out);
    let mut csv = String::from("component,label,scaling,variance\n");
    for i in 0..basis.dim() {
        let _ = writeln!(csv, "{i},{},{},{}", basis.labels()[i], basis.scaling()[i], est.variances[i]);
    }
    let summary = out.with_extension("csv");
    write(&summary, &csv)?;
    announce(&summary);
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    let f = &run.file;
    let weighting = f.pick(a.weighting.clone(), "weighting", "sigma2".to_string())?;
    if weighting != "sigma2" {
        return Err(CliError::config(format!("unsupported loss weighting '{weighting}'; only sigma2 is implemented")));
    }
    let ds = load_dataset(&a.data, f, run.seed)?;
    let basis = load_basis(a.basis.as_deref(), ds.shape)?;
    let chi = to_components(&basis, &train_split(&ds))?;
    if chi.len() < 2 {
        return Err(CliError::config("training needs at least 2 samples"));
    }
    let log_var = log_variances(&chi)?;
    let ctx = ScheduleContext::new(&basis, log_var.clone())?;
    let mut schedule = f.schedule(ScheduleConfig::default(), &a.schedule)?;
    let a_range = f.pick_opt(a.a_range.clone(), "a_range")?.map(|s| parse_range(&s)).transpose()?;
    let b_range = f.pick_opt(a.b_range.clone(), "b_range")?.map(|s| parse_range(&s)).transpose()?;
    let r_range = f.pick_opt(a.r_range.clone(), "r_range")?.map(|s| parse_range(&s)).transpose()?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        batch: f.pick(a.batch, "batch", defaults.batch)?,
        steps: f.pick(a.steps, "steps", defaults.steps)?,
        lr: f.pick(a.lr, "lr", defaults.lr)?,
        ema: f.pick(a.ema, "ema", defaults.ema)?,
        hidden: f.pick(a.hidden, "hidden", defaults.hidden)?,
        depth: f.pick(a.depth, "depth", defaults.depth)?,
        schedule: schedule.clone(),
        a_range,
        b_range,
        r_range,
        seed: run.seed,
        ..defaults
    };
    let out = train(&cfg, chi.as_slice(), &ctx)?;
    // sampling defaults to the centre of any randomised range
    for (range, slot) in [(a_range, &mut schedule.a), (b_range, &mut schedule.b), (r_range, &mut schedule.r)] {
        if let Some(p) = range {
            *slot = 0.5 * (p.lo + p.hi);
        }
    }
    let meta = ModelMeta { schedule, shape: ds.shape, levels: ds.levels, mean: ds.mean.clone(), log_var }.to_text();
    let path = run.output(a.out.as_deref(), "model.gudnet");
    out.ema.save(&path, true, &meta)?;
    announce(&path);
    let raw = sibling(&path, ".raw.gudnet");
    out.raw.save(&raw, false, &meta)?;
    announce(&raw);
    let mut log = String::from("step,loss,wall_seconds\n");
    for r in &out.log {
        let _ = writeln!(log, "{},{},{:.3}", r.step, r.loss, r.wall_seconds);
    }
    let log_path = sibling(&path, "_log.csv");
    write(&log_path, &log)?;
    announce(&log_path);
    if let Some(last) = out.log.last() {
        println!("final loss {:.6} after {} steps", last.loss, last.step);
    }
    Ok(())
}

fn resolve_source(score: &ScoreArgs, data: Option<&str>) -> Result<ScoreSource, CliError> {
    score_source(score.model.as_deref(), score.exact_score, data, score.basis.as_deref())
}

fn save_samples(src: &ScoreSource, chi: &[Vec<f64>], out: &Path, shape: Shape) -> Result<(), CliError> {
    let phi: Vec<Vec<f64>> = chi.iter().map(|x| src.to_data(x)).collect::<Result<_, _>>()?;
    Container::samples(shape, &phi).save(out)?;
    announce(out);
    if let Some(levels) = src.levels {
        let pixels: Vec<u8> = phi.iter().flatten().map(|&v| requantize_value(v, levels)).collect();
        let img = out.with_extension("gudimgs");
        RawImages::new(shape, pixels)?.save(&img)?;
        announce(&img);
    }
    Ok(())
}

fn ode_config(f: &FileConfig, steps: Option<usize>, tol: Option<f64>) -> Result<OdeConfig, CliError> {
    let tol = f.pick(tol, "tol", 1e-4)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(CliError::config("--tol must be positive"));
    }
    Ok(match f.pick_opt(steps, "steps")? {
        Some(s) => OdeConfig::fixed(s),
        None => OdeConfig { method: OdeMethod::Adaptive { rtol: tol, atol: tol }, ..Default::default() },
    })
}

fn sample(a: SampleArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    let f = &run.file;
    let src = resolve_source(&a.score, a.data.as_deref())?;
    let cfg = f.schedule(src.schedule.clone(), &a.schedule)?;
    let schedule = cfg.build(&src.context()?)?;
    let n = f.pick(a.n, "n", 16)?;
    let sampler = f.pick(a.sampler.clone(), "sampler", "sde".to_string())?;
    let chi = match sampler.as_str() {
        "sde" => reverse_sde_sample(&*src.score, &schedule, f.pick(a.steps, "steps", 500)?, n, run.seed)?,
        "ode" => ode_sample(&*src.score, &schedule, &ode_config(f, a.steps, a.tol)?, n, run.seed)?,
        other => return Err(CliError::config(format!("unknown sampler '{other}'"))),
    };
    let out = run.output(a.out.as_deref(), "samples.gudbasis");
    save_samples(&src, &chi, &out, src.shape())
}

const NLL_HEADER: &str = "dataset,family,a,b,r,nats_per_dim,bits_per_dim,std_err_bits,count\n";

fn nll_row(csv: &mut String, dataset: &str, cfg: &ScheduleConfig, r: &NllReport) {
    let _ = writeln!(
        csv,
        "{dataset},{},{},{},{},{},{},{},{}",
        cfg.family.name(),
        cfg.a,
        cfg.b,
        cfg.r,
        r.nats_per_dim,
        r.bits_per_dim,
        r.std_err_bits,
        r.count
    );
}

struct Evaluation {
    src: ScoreSource,
    chi: Vec<Vec<f64>>,
    levels: Option<u32>,
}

fn prepare_eval(data: &DataArgs, score: &ScoreArgs, f: &FileConfig, seed: u64, n: Option<usize>) -> Result<Evaluation, CliError> {
    let src = resolve_source(score, Some(&data.data))?;
    let ds = load_dataset(data, f, seed)?;
    if ds.shape != src.shape() {
        return Err(CliError::config("data shape does not match the model"));
    }
    let mut samples = eval_split(&ds);
    if let Some(n) = f.pick_opt(n, "n")? {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(CliError::config("no samples to evaluate"));
    }
    let chi = to_components(&src.basis, &samples)?;
    Ok(Evaluation { src, chi, levels: ds.levels })
}

fn nll(a: NllArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    let f = &run.file;
    let ev = prepare_eval(&a.data, &a.score, f, run.seed, a.n)?;
    let cfg = f.schedule(ev.src.schedule.clone(), &a.schedule)?;
    let schedule = cfg.build(&ev.src.context()?)?;
    let divergence = match f.pick_opt(a.probes, "probes")? {
        Some(p) => Divergence::Hutchinson { probes: p },
        None => Divergence::Auto,
    };
    let nll_cfg =
        NllConfig { ode: ode_config(f, a.steps, a.tol)?, divergence, seed: run.seed, quantization_levels: ev.levels };
    let report = ode_nll(&*ev.src.score, &schedule, &ev.chi, ev.src.basis.scaling(), &nll_cfg)?;
    let mut csv = String::from(NLL_HEADER);
    nll_row(&mut csv, &a.data.data, &cfg, &report);
    let out = run.output(a.out.as_deref(), "nll.csv");
    write(&out, &csv)?;
    announce(&out);
    println!(
        "{:.4} bits/dim (+/- {:.4}), {:.4} nats/dim, {} samples",
        report.bits_per_dim, report.std_err_bits, report.nats_per_dim, report.count
    );
    Ok(())
}

fn extend(a: ExtendArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    let f = &run.file;
    let src = resolve_source(&a.score, a.data.as_deref())?;
    let mut base = src.schedule.clone();
    if base.family != FamilyKind::Column && !f.has_schedule_family(&a.schedule) {
        base.family = FamilyKind::Column;
    }
    let cfg = f.schedule(base, &a.schedule)?;
    let schedule = cfg.build(&src.context()?)?;
    let shape = src.shape();
    let k = f.pick(a.k, "k", (shape.width / 4).max(1))?;
    let cycles = f.pick(a.cycles, "cycles", 5)?;
    let steps = f.pick(a.steps, "steps", 500)?;
    let n = f.pick(a.n, "n", 4)?;
    let strips = extend_images(&*src.score, &schedule, shape, k, cycles, steps, n, run.seed)?;
    let out_shape = strips[0].shape;
    // translation invariance: every output column reuses the window's column-averaged mean
    let (h, c, w) = (shape.height, shape.channels, shape.width);
    let mut col_mean = vec![0.0; h * c];
    for row in 0..h {
        for ch in 0..c {
            col_mean[row * c + ch] = (0..w).map(|col| src.mean[shape.index(row, col, ch)]).sum::<f64>() / w as f64;
        }
    }
    let phi: Vec<Vec<f64>> = strips
        .iter()
        .map(|s| {
            (0..out_shape.dim())
                .map(|idx| {
                    let ch = idx % c;
                    let row = idx / (c * out_shape.width);
                    s.pixels[idx] + col_mean[row * c + ch]
                })
                .collect()
        })
        .collect();
    let out = run.output(a.out.as_deref(), "strips.gudbasis");
    Container::samples(out_shape, &phi).save(&out)?;
    announce(&out);
    if let Some(levels) = src.levels {
        let pixels: Vec<u8> = phi.iter().flatten().map(|&v| requantize_value(v, levels)).collect();
        let img = out.with_extension("gudimgs");
        RawImages::new(out_shape, pixels)?.save(&img)?;
        announce(&img);
    }
    let index = sibling(&out, "_index.csv");
    write(&index, &strips[0].index_csv())?;
    announce(&index);
    Ok(())
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    let f = &run.file;
    let src = resolve_source(&a.score, Some(&a.data.data))?;
    let ds = load_dataset(&a.data, f, run.seed)?;
    if ds.shape != src.shape() {
        return Err(CliError::config("data shape does not match the model"));
    }
    let index = f.pick(a.index, "index", 0)?;
    let x = ds.samples.get(index).ok_or_else(|| CliError::config(format!("index {index} out of range")))?;
    let chi0 = src.basis.forward(x)?;
    let cfg = f.schedule(src.schedule.clone(), &a.schedule)?;
    let schedule = cfg.build(&src.context()?)?;
    let t_noise = f.pick(a.t_noise, "t_noise", 0.5)?;
    let variants = f.pick(a.variants, "variants", 4)?;
    let steps = f.pick(a.steps, "steps", 500)?;
    let chi = reconstruct(&*src.score, &schedule, &chi0, t_noise, steps, run.seed, variants)?;
    let out = run.output(a.out.as_deref(), "reconstruct.gudbasis");
    save_samples(&src, &chi, &out, src.shape())
}

fn schedule_viz(a: VizArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    let f = &run.file;
    let ds = load_dataset(&a.data, f, run.seed)?;
    let basis = load_basis(a.basis.as_deref(), ds.shape)?;
    let log_var = log_variances(&to_components(&basis, &train_split(&ds))?)?;
    let cfg = f.schedule(ScheduleConfig::default(), &a.schedule)?;
    let schedule = cfg.build(&ScheduleContext::new(&basis, log_var.clone())?)?;
    let points = f.pick(a.points, "points", 101)?;
    if points < 2 {
        return Err(CliError::config("--points must be at least 2"));
    }
    let mut csv = String::from("t,component_index,gamma,log_snr,beta\n");
    for p in 0..points {
        let t = p as f64 / (points - 1) as f64;
        let state = schedule.gamma(t)?;
        let snr = log_snr(&state, &log_var)?;
        let beta = schedule.beta(t)?;
        for i in 0..state.dim() {
            let _ = writeln!(csv, "{t},{i},{},{},{}", state.gamma[i], snr[i], beta[i]);
        }
    }
    let out = run.output(a.out.as_deref(), "schedule.csv");
    write(&out, &csv)?;
    announce(&out);
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    let f = &run.file;
    let ev = prepare_eval(&a.data, &a.score, f, run.seed, a.n)?;
    let base = f.schedule(ev.src.schedule.clone(), &a.schedule)?;
    let list = |flag: &Option<String>, key: &str| -> Result<Option<Vec<f64>>, CliError> {
        f.pick_opt(flag.clone(), key)?.map(|s| parse_list(&s)).transpose()
    };
    let a_values = list(&a.a_values, "a_values")?.unwrap_or_else(|| vec![base.a]);
    let r_values = list(&a.r_values, "r_values")?.unwrap_or_else(|| vec![base.r]);
    let b_values = list(&a.b_values, "b_values")?.unwrap_or_else(|| vec![base.b]);
    let ctx = ev.src.context()?;
    let ode = ode_config(f, a.steps, a.tol)?;
    let mut csv = String::from(NLL_HEADER);
    for &r in &r_values {
        for &av in &a_values {
            for &b in &b_values {
                let cfg = ScheduleConfig { a: av, b, r, ..base.clone() };
                let schedule = cfg.build(&ctx)?;
                let nll_cfg = NllConfig { ode, divergence: Divergence::Auto, seed: run.seed, quantization_levels: ev.levels };
                let report = ode_nll(&*ev.src.score, &schedule, &ev.chi, ev.src.basis.scaling(), &nll_cfg)?;
                nll_row(&mut csv, &a.data.data, &cfg, &report);
                println!("r = {r}, a = {av}, b = {b}: {:.4} bits/dim", report.bits_per_dim);
            }
        }
    }
    let out = run.output(a.out.as_deref(), "sweep.csv");
    write(&out, &csv)?;
    announce(&out);
    Ok(())
}

fn parse_shape(s: &str) -> Result<Shape, CliError> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| CliError::config(format!("bad shape '{s}'"))))
        .collect::<Result<_, _>>()?;
    let [h, w, c] = v[..] else { return Err(CliError::config("--shape must be H,W,C")) };
    Ok(Shape::new(h, w, c)?)
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn convert(a: ConvertArgs) -> Result<(), CliError> {
    let run = Run::new(&a.common)?;
    require_file(&a.input)?;
    let out = run.output(Some(&a.output), "");
    match (is_csv(&a.input), is_csv(&a.output)) {
        (true, false) => {
            let shape = parse_shape(a.shape.as_deref().ok_or_else(|| CliError::config("CSV input needs --shape H,W,C"))?)?;
            let text = std::fs::read_to_string(&a.input)?;
            RawImages::from_csv(&text, shape)?.save(&out)?;
        }
        (false, true) => {
            let raw = RawImages::load(&a.input)?;
            write(&out, &raw.to_csv())?;
        }
        _ => return Err(CliError::config("convert needs exactly one .csv side")),
    }
    announce(&out);
    Ok(())
}
