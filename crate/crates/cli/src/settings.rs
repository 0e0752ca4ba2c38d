//! Flag, config-file and default resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gud_core::schedule::parse_kv;
use gud_core::ScheduleConfig;

use crate::args::{CommonArgs, ScheduleArgs};
use crate::CliError;

const SCHEDULE_KEYS: &[&str] = &["family", "a", "b", "r", "gamma_denoise", "gamma_noise", "sigma_min"];
const RUN_KEYS: &[&str] = &[
    "seed", "threads", "out_dir", "n_data", "quant_levels", "test_count", "basis", "whiten", "levels",
    "variance_floor", "steps", "batch", "lr", "ema", "hidden", "depth", "a_range", "b_range", "r_range",
    "weighting", "sampler", "tol", "n", "probes", "k", "cycles", "index", "t_noise", "variants", "points",
    "a_values", "b_values", "r_values",
];

/// Values from a `--config` file. Keys of the `[schedule]` section describe
/// the schedule, all other keys live in `[run]` or before any section.
#[derive(Debug, Default)]
pub struct FileConfig {
    run: BTreeMap<String, String>,
    schedule: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::missing(format!("config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = FileConfig::default();
        for (section, map) in parse_kv(text)? {
            let (target, allowed) = match section.as_str() {
                "schedule" => (&mut cfg.schedule, SCHEDULE_KEYS),
                "" | "run" => (&mut cfg.run, RUN_KEYS),
                other => return Err(CliError::config(format!("unknown config section [{other}]"))),
            };
            for (k, v) in map {
                let key = k.replace('-', "_");
                if !allowed.contains(&key.as_str()) {
                    return Err(CliError::config(format!("unknown config key '{k}' in [{section}]")));
                }
                target.insert(key, v);
            }
        }
        Ok(cfg)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.run
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| CliError::config(format!("bad value for {key}: '{v}'"))))
            .transpose()
    }

    /// Flag, then file, then default.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.get(key)?,
        })
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.get::<bool>(key)?.unwrap_or(false))
    }

    /// Schedule from `base`, overridden by the file and then by flags.
    pub fn schedule(&self, base: ScheduleConfig, flags: &ScheduleArgs) -> Result<ScheduleConfig, CliError> {
        let mut cfg = base;
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| CliError::config(format!("bad value for {k}: '{v}'")));
        for (k, v) in &self.schedule {
            match k.as_str() {
                "family" => cfg.family = v.parse()?,
                "a" => cfg.a = num(k, v)?,
                "b" => cfg.b = num(k, v)?,
                "r" => cfg.r = num(k, v)?,
                "gamma_denoise" => cfg.gamma_denoise = num(k, v)?,
                "gamma_noise" => cfg.gamma_noise = Some(num(k, v)?),
                "sigma_min" => cfg.sigma_min = num(k, v)?,
                _ => unreachable!("keys validated on load"),
            }
        }
        if let Some(f) = &flags.schedule {
            cfg.family = f.parse()?;
        }
        if let Some(v) = flags.a {
            cfg.a = v;
        }
        if let Some(v) = flags.b {
            cfg.b = v;
        }
        if let Some(v) = flags.r {
            cfg.r = v;
        }
        if let Some(v) = flags.gamma_denoise {
            cfg.gamma_denoise = v;
        }
        if flags.gamma_noise.is_some() {
            cfg.gamma_noise = flags.gamma_noise;
        }
        if let Some(v) = flags.sigma_min {
            cfg.sigma_min = v;
        }
        if !(cfg.sigma_min > 0.0 && cfg.sigma_min < 1.0) {
            return Err(CliError::config(format!("sigma_min must lie in (0, 1), got {}", cfg.sigma_min)));
        }
        Ok(cfg)
    }

    pub fn has_schedule_family(&self, flags: &ScheduleArgs) -> bool {
        flags.schedule.is_some() || self.schedule.contains_key("family")
    }
}

pub struct Run {
    pub file: FileConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Run {
    pub fn new(common: &CommonArgs) -> Result<Self, CliError> {
        let file = FileConfig::load(common.config.as_deref())?;
        let seed = file.pick(common.seed, "seed", 0)?;
        let out_dir = match file.pick_opt(common.out_dir.clone(), "out_dir")? {
            Some(p) => p,
            None => std::env::var_os("GUD_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
        };
        if let Some(n) = file.pick_opt(common.threads, "threads")? {
            if n == 0 {
                return Err(CliError::config("--threads must be positive"));
            }
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", out_dir.display())))?;
        Ok(Run { file, seed, out_dir })
    }

    pub fn output(&self, name: Option<&Path>, default: &str) -> PathBuf {
        let name = name.unwrap_or_else(|| Path::new(default));
        if name.is_absolute() {
            name.to_path_buf()
        } else {
            self.out_dir.join(name)
        }
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::config(format!("bad number '{v}' in list '{s}'"))))
        .collect()
}

pub fn parse_range(s: &str) -> Result<gud_core::score_net::ParamRange, CliError> {
    match parse_list(s)?.as_slice() {
        [lo, hi] => Ok(gud_core::score_net::ParamRange::new(*lo, *hi)?),
        _ => Err(CliError::config(format!("range '{s}' must be LO,HI"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let f = FileConfig::parse("steps = 7\n[schedule]\nfamily = column\nb = 0.3\n").unwrap();
        assert_eq!(f.pick(None, "steps", 1usize).unwrap(), 7);
        assert_eq!(f.pick(Some(9), "steps", 1usize).unwrap(), 9);
        assert_eq!(f.pick(None, "batch", 128usize).unwrap(), 128);
        let flags = ScheduleArgs { b: Some(0.4), ..Default::default() };
        let s = f.schedule(ScheduleConfig::default(), &flags).unwrap();
        assert_eq!(s.family.name(), "column");
        assert_eq!(s.b, 0.4);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(FileConfig::parse("bogus = 1\n").is_err());
        assert!(FileConfig::parse("[schedule]\nsteps = 1\n").is_err());
        assert!(FileConfig::parse("[other]\n").is_err());
    }
}
