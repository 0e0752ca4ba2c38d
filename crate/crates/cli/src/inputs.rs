//! Datasets, bases, checkpoints and score sources.

use std::collections::BTreeMap;
use std::path::Path;

use gud_core::basis::{estimate_covariance, DEFAULT_VARIANCE_FLOOR};
use gud_core::container::{Container, BASIS_MAGIC};
use gud_core::data::{dequantize_and_center, synth_mixture, Dataset, RawImages, Split, IMAGES_MAGIC};
use gud_core::schedule::parse_kv;
use gud_core::score_net::ScoreNet;
use gud_core::{BasisKind, BasisSpec, GaussianMixture, ScheduleConfig, ScoreFunction, Shape};

use crate::args::DataArgs;
use crate::settings::{parse_list, FileConfig};
use crate::CliError;

pub const DEFAULT_SYNTH_COUNT: usize = 1024;

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::missing(format!("input file {} does not exist", path.display())))
    }
}

/// The 2-D two-component test mixture.
pub fn mix2d() -> GaussianMixture {
    GaussianMixture::new(vec![0.3, 0.7], vec![vec![-2.1, 1.4], vec![0.9, -0.6]], vec![vec![0.3, 0.3]; 2])
        .expect("valid mixture")
}

/// Column-independent Gaussian images with row variances from 0.6 to 1.4.
pub fn colgauss(h: usize, w: usize) -> Result<(GaussianMixture, Shape), CliError> {
    let shape = Shape::new(h, w, 1)?;
    let var = (0..shape.dim())
        .map(|k| {
            let row = k / w;
            if h > 1 {
                0.6 + 0.8 * row as f64 / (h - 1) as f64
            } else {
                1.0
            }
        })
        .collect();
    Ok((GaussianMixture::diagonal(var)?, shape))
}

/// Parse `synth:...` specs.
pub fn synthetic(spec: &str) -> Result<Option<(GaussianMixture, Shape)>, CliError> {
    let Some(rest) = spec.strip_prefix("synth:") else { return Ok(None) };
    let (kind, arg) = rest.split_once(':').unwrap_or((rest, ""));
    let usize_list = |s: &str| -> Result<Vec<usize>, CliError> {
        s.split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|_| CliError::config(format!("bad integer '{v}' in '{spec}'"))))
            .collect()
    };
    let out = match kind {
        "normal" => {
            let d = usize_list(arg)?;
            let [d] = d[..] else { return Err(CliError::config("synth:normal takes one dimension")) };
            if d == 0 {
                return Err(CliError::config("synth:normal needs a positive dimension"));
            }
            (GaussianMixture::standard_normal(d), Shape::vector(d))
        }
        "diag" => {
            let v = parse_list(arg)?;
            let d = v.len();
            (GaussianMixture::diagonal(v)?, Shape::vector(d))
        }
        "mix2d" => (mix2d(), Shape::vector(2)),
        "colgauss" => {
            let hw = usize_list(arg)?;
            let [h, w] = hw[..] else { return Err(CliError::config("synth:colgauss takes H,W")) };
            colgauss(h, w)?
        }
        _ => return Err(CliError::config(format!("unknown synthetic spec '{spec}'"))),
    };
    Ok(Some(out))
}

pub fn load_dataset(args: &DataArgs, file: &FileConfig, seed: u64) -> Result<Dataset, CliError> {
    if let Some((mix, shape)) = synthetic(&args.data)? {
        let n = file.pick(args.n_data, "n_data", DEFAULT_SYNTH_COUNT)?;
        let mut dataset = synth_mixture(&mix, n, seed);
        dataset.shape = shape;
        return Ok(dataset);
    }
    let path = Path::new(&args.data);
    require_file(path)?;
    let bytes = std::fs::read(path)?;
    let test_count = file.pick(args.test_count, "test_count", 0)?;
    let dataset = if bytes.starts_with(IMAGES_MAGIC) {
        let raw = RawImages::read_from(bytes.as_slice())?;
        let levels = file.pick(args.quant_levels, "quant_levels", 256)?;
        dequantize_and_center(&raw, levels, seed, test_count)?
    } else if bytes.starts_with(BASIS_MAGIC) {
        let (shape, samples) = Container::read_from(bytes.as_slice())?.into_samples()?;
        centred_vectors(shape, samples, test_count)?
    } else {
        return Err(CliError::missing(format!("{} is neither a GUDIMGS file nor a sample container", path.display())));
    };
    Ok(dataset)
}

fn centred_vectors(shape: Shape, mut samples: Vec<Vec<f64>>, test_count: usize) -> Result<Dataset, CliError> {
    if test_count > samples.len() {
        return Err(CliError::config("test split larger than the dataset"));
    }
    let n_train = samples.len() - test_count;
    let d = shape.dim();
    let mut mean = vec![0.0; d];
    for x in &samples[..n_train] {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n_train as f64;
        }
    }
    for x in &mut samples {
        for (v, m) in x.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let splits = (0..samples.len()).map(|i| if i < n_train { Split::Train } else { Split::Test }).collect();
    Ok(Dataset { shape, samples, mean, levels: None, splits })
}

pub fn load_basis(path: Option<&Path>, shape: Shape) -> Result<BasisSpec, CliError> {
    let basis = match path {
        Some(p) => {
            require_file(p)?;
            BasisSpec::load(p)?
        }
        None => BasisSpec::identity(shape),
    };
    if basis.shape() != shape {
        return Err(CliError::config(format!(
            "basis shape {}x{}x{} does not match data shape {}x{}x{}",
            basis.shape().height,
            basis.shape().width,
            basis.shape().channels,
            shape.height,
            shape.width,
            shape.channels
        )));
    }
    Ok(basis)
}

pub fn to_components(basis: &BasisSpec, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, CliError> {
    samples.iter().map(|x| basis.forward(x).map_err(CliError::from)).collect()
}

pub fn log_variances(chi: &[Vec<f64>]) -> Result<Vec<f64>, CliError> {
    Ok(estimate_covariance(chi)?.log_variances(DEFAULT_VARIANCE_FLOOR))
}

/// The mixture expressed in a basis that maps coordinates to coordinates.
pub fn mixture_in_basis(mix: &GaussianMixture, basis: &BasisSpec) -> Result<GaussianMixture, CliError> {
    if !matches!(basis.kind(), BasisKind::Identity | BasisKind::Permutation) {
        return Err(CliError::config("--exact-score needs an identity or permutation basis"));
    }
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for (m, v) in mix.means().iter().zip(mix.variances()) {
        means.push(basis.forward(m)?);
        // U permutes components, so variances move with them
        let moved = basis.apply_orthogonal(v)?;
        vars.push(moved.iter().zip(basis.scaling()).map(|(v, s)| v / (s * s)).collect());
    }
    Ok(GaussianMixture::new(mix.weights().to_vec(), means, vars)?)
}

/// Context stored next to the network parameters.
#[derive(Debug, Clone)]
pub struct ModelMeta {
    pub schedule: ScheduleConfig,
    pub shape: Shape,
    pub levels: Option<u32>,
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

impl ModelMeta {
    pub fn to_text(&self) -> String {
        let mut s = self.schedule.to_kv();
        s.push_str("[context]\n");
        s.push_str(&format!("shape = {},{},{}\n", self.shape.height, self.shape.width, self.shape.channels));
        if let Some(l) = self.levels {
            s.push_str(&format!("levels = {l}\n"));
        }
        s.push_str(&format!("mean = {}\n", join(&self.mean)));
        s.push_str(&format!("log_var = {}\n", join(&self.log_var)));
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: &str| CliError::missing(format!("checkpoint metadata: {m}"));
        let schedule = ScheduleConfig::from_kv(text)?;
        let sections = parse_kv(text)?;
        let empty = BTreeMap::new();
        let ctx = sections.get("context").unwrap_or(&empty);
        let get = |k: &str| ctx.get(k).ok_or_else(|| bad(&format!("missing {k}")));
        let dims = parse_list(get("shape")?)?;
        let [h, w, c] = dims[..] else { return Err(bad("shape must be H,W,C")) };
        let shape = Shape::new(h as usize, w as usize, c as usize)?;
        let levels = ctx.get("levels").map(|l| l.parse::<u32>().map_err(|_| bad("bad levels"))).transpose()?;
        let mean = parse_list(get("mean")?)?;
        let log_var = parse_list(get("log_var")?)?;
        if mean.len() != shape.dim() || log_var.len() != shape.dim() {
            return Err(bad("context arrays do not match the shape"));
        }
        Ok(ModelMeta { schedule, shape, levels, mean, log_var })
    }
}

pub fn load_model(path: &Path) -> Result<(ScoreNet, ModelMeta), CliError> {
    require_file(path)?;
    let (net, _, meta) = ScoreNet::load(path)?;
    let meta = ModelMeta::parse(&meta)?;
    if net.config().dim != meta.shape.dim() {
        return Err(CliError::missing("checkpoint dimension does not match its metadata"));
    }
    Ok((net, meta))
}

/// Score function plus what the schedule needs to be instantiated.
pub struct ScoreSource {
    pub score: Box<dyn ScoreFunction>,
    pub basis: BasisSpec,
    pub log_var: Vec<f64>,
    pub mean: Vec<f64>,
    pub levels: Option<u32>,
    pub schedule: ScheduleConfig,
}

impl ScoreSource {
    pub fn shape(&self) -> Shape {
        self.basis.shape()
    }

    pub fn from_model(model: &Path, basis: Option<&Path>) -> Result<Self, CliError> {
        let (net, meta) = load_model(model)?;
        let basis = load_basis(basis, meta.shape)?;
        Ok(ScoreSource {
            score: Box::new(net),
            basis,
            log_var: meta.log_var,
            mean: meta.mean,
            levels: meta.levels,
            schedule: meta.schedule,
        })
    }

    pub fn exact(mix: &GaussianMixture, shape: Shape, basis: Option<&Path>) -> Result<Self, CliError> {
        let basis = load_basis(basis, shape)?;
        let chi_mix = mixture_in_basis(mix, &basis)?;
        let log_var = chi_mix.marginal_variances().iter().map(|v| v.ln()).collect();
        let d = shape.dim();
        Ok(ScoreSource {
            score: Box::new(chi_mix),
            basis,
            log_var,
            mean: vec![0.0; d],
            levels: None,
            schedule: ScheduleConfig::default(),
        })
    }

    pub fn context(&self) -> Result<gud_core::ScheduleContext, CliError> {
        Ok(gud_core::ScheduleContext::new(&self.basis, self.log_var.clone())?)
    }

    /// Components back to uncentred data space.
    pub fn to_data(&self, chi: &[f64]) -> Result<Vec<f64>, CliError> {
        let phi = self.basis.inverse(chi)?;
        Ok(phi.iter().zip(&self.mean).map(|(a, b)| a + b).collect())
    }
}

/// `--model` or `--exact-score` with a synthetic spec.
pub fn score_source(
    model: Option<&Path>,
    exact: bool,
    data: Option<&str>,
    basis: Option<&Path>,
) -> Result<ScoreSource, CliError> {
    match (model, exact) {
        (Some(_), true) => Err(CliError::config("--model and --exact-score are mutually exclusive")),
        (Some(m), false) => ScoreSource::from_model(m, basis),
        (None, true) => {
            let spec = data.ok_or_else(|| CliError::config("--exact-score needs a synthetic --data spec"))?;
            let (mix, shape) =
                synthetic(spec)?.ok_or_else(|| CliError::config("--exact-score needs a synth: --data spec"))?;
            ScoreSource::exact(&mix, shape, basis)
        }
        (None, false) => Err(CliError::config("either --model or --exact-score is required")),
    }
}
