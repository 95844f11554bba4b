//! Flat `section.key = value` configuration.
//!
//! The file is TOML restricted to dotted keys, so every setting sits on one
//! line. Missing keys keep their defaults; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sspose::{AucMode, OffsetMode};
use sspose_harness::{OptimizerSpec, RefineConfig};

use crate::error::{CliError, Result};

/// Environment variable naming a config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "SSPOSE_CONFIG";

/// Default configuration, also printed by `sspose print-config`.
pub const DEFAULT_CONFIG: &str = r#"# Rotation codebook: viewpoints on a Fibonacci sphere times in-plane steps.
codebook.viewpoints = 200
codebook.inplane = 25

# Per-frame refinement variables.
refine.crop_size = 128
refine.views = 3
# codebook neighbours of the initial rotation used as hypotheses
refine.hypotheses = 256
refine.query_gain = 1000.0
# softmax temperature of the rotation likelihood
refine.temperature = 0.1

# Anchor box enlargement and augmentation ranges.
aug.anchor_scale_min = 1.2
aug.anchor_scale_max = 1.6
aug.scale_min = 0.8
aug.scale_max = 1.25
aug.offset_frac = 0.1
aug.max_roll_deg = 30.0

# Depth pseudo-label: mask threshold, adaptive gap threshold (m),
# loss truncation (m), moving-average window, penalty depth (m).
pseudo.rho = 0.9
pseudo.gamma = 0.001
pseudo.xi = 0.1
pseudo.window = 5
pseudo.epsilon = 1000.0
pseudo.points = 8192
# "adaptive" or "plain_min"
pseudo.mode = "adaptive"

# Consistency loss weights.
self.lambda_xy = 10.0
self.lambda_z = 10.0
self.lambda_r = 0.1
self.lambda_m = 10.0

# Supervised loss weights on labeled synthetic frames.
syn.lambda_xy = 10.0
syn.lambda_z = 1.0
syn.lambda_r = 1.0
syn.lambda_m = 10.0

# Weights of the three objective terms.
objective.lambda_syn = 1.0
objective.lambda_self = 0.1
objective.lambda_pseudo = 10.0

# Adam with a cosine step schedule.
optimizer.iterations = 300
optimizer.step_size = 0.003
optimizer.final_step_size = 1e-5
optimizer.beta1 = 0.9
optimizer.beta2 = 0.999
optimizer.epsilon = 1e-8
# synthetic frames step once every this many iterations when mixed
optimizer.synthetic_period = 2

# "exact" or "binned"
metrics.auc_mode = "exact"
metrics.auc_bins = 1000

seed.aug = 0
seed.points = 0
"#;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub codebook_viewpoints: usize,
    pub codebook_inplane: usize,
    pub refine: RefineConfig,
    pub optimizer: OptimizerSpec,
    pub auc_mode: AucMode,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            codebook_viewpoints: 200,
            codebook_inplane: 25,
            refine: RefineConfig::default(),
            optimizer: OptimizerSpec::default(),
            auc_mode: AucMode::Exact,
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(usage(format!("{key} must be a number"))),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(usage(format!("{key} must be a non-negative integer"))),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(usage(format!("{key} must be a non-negative integer"))),
    }
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| usage(format!("{key} must be a string")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| usage(format!("config: {e}")))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut c = Config::default();
        let mut bins = 1000usize;
        let mut binned = false;
        for (key, v) in &flat {
            let k = key.as_str();
            let r = &mut c.refine;
            let o = &mut c.optimizer;
            match k {
                "codebook.viewpoints" => c.codebook_viewpoints = as_usize(k, v)?,
                "codebook.inplane" => c.codebook_inplane = as_usize(k, v)?,
                "refine.crop_size" => r.crop_size = as_usize(k, v)?,
                "refine.views" => r.n_views = as_usize(k, v)?,
                "refine.hypotheses" => r.n_hypotheses = as_usize(k, v)?,
                "refine.query_gain" => r.query_gain = as_f64(k, v)?,
                "refine.temperature" => r.temperature = as_f64(k, v)?,
                "aug.anchor_scale_min" => r.aug.f_anc.0 = as_f64(k, v)?,
                "aug.anchor_scale_max" => r.aug.f_anc.1 = as_f64(k, v)?,
                "aug.scale_min" => r.aug.delta_s.0 = as_f64(k, v)?,
                "aug.scale_max" => r.aug.delta_s.1 = as_f64(k, v)?,
                "aug.offset_frac" => r.aug.offset_frac = as_f64(k, v)?,
                "aug.max_roll_deg" => r.aug.max_roll = as_f64(k, v)?.to_radians(),
                "pseudo.rho" => r.pseudo.rho = as_f64(k, v)?,
                "pseudo.gamma" => r.pseudo.gamma = as_f64(k, v)?,
                "pseudo.xi" => r.pseudo.xi = as_f64(k, v)?,
                "pseudo.window" => r.pseudo.window = as_usize(k, v)?,
                "pseudo.epsilon" => r.pseudo.epsilon = as_f64(k, v)?,
                "pseudo.points" => r.pseudo.n_points = as_usize(k, v)?,
                "pseudo.mode" => {
                    r.pseudo.mode = match as_str(k, v)? {
                        "adaptive" => OffsetMode::Adaptive,
                        "plain_min" => OffsetMode::PlainMin,
                        other => return Err(usage(format!("unknown pseudo.mode {other:?}"))),
                    }
                }
                "self.lambda_xy" => r.self_weights.xy = as_f64(k, v)?,
                "self.lambda_z" => r.self_weights.z = as_f64(k, v)?,
                "self.lambda_r" => r.self_weights.r = as_f64(k, v)?,
                "self.lambda_m" => r.self_weights.m = as_f64(k, v)?,
                "syn.lambda_xy" => r.syn_weights.xy = as_f64(k, v)?,
                "syn.lambda_z" => r.syn_weights.z = as_f64(k, v)?,
                "syn.lambda_r" => r.syn_weights.r = as_f64(k, v)?,
                "syn.lambda_m" => r.syn_weights.m = as_f64(k, v)?,
                "objective.lambda_syn" => r.lambda_syn = as_f64(k, v)?,
                "objective.lambda_self" => r.lambda_self = as_f64(k, v)?,
                "objective.lambda_pseudo" => r.lambda_pseudo = as_f64(k, v)?,
                "optimizer.iterations" => o.iterations = as_usize(k, v)?,
                "optimizer.step_size" => o.step_size = as_f64(k, v)?,
                "optimizer.final_step_size" => o.final_step_size = as_f64(k, v)?,
                "optimizer.beta1" => o.beta1 = as_f64(k, v)?,
                "optimizer.beta2" => o.beta2 = as_f64(k, v)?,
                "optimizer.epsilon" => o.epsilon = as_f64(k, v)?,
                "optimizer.synthetic_period" => o.synthetic_period = as_usize(k, v)?,
                "metrics.auc_mode" => {
                    binned = match as_str(k, v)? {
                        "exact" => false,
                        "binned" => true,
                        other => return Err(usage(format!("unknown metrics.auc_mode {other:?}"))),
                    }
                }
                "metrics.auc_bins" => bins = as_usize(k, v)?,
                "seed.aug" => r.aug_seed = as_u64(k, v)?,
                "seed.points" => r.points_seed = as_u64(k, v)?,
                _ => return Err(usage(format!("unknown config key {k}"))),
            }
        }
        c.auc_mode = if binned { AucMode::Binned(bins) } else { AucMode::Exact };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_viewpoints == 0 || self.codebook_inplane == 0 {
            return Err(usage("codebook counts must be at least 1".into()));
        }
        if matches!(self.auc_mode, AucMode::Binned(0)) {
            return Err(usage("metrics.auc_bins must be at least 1".into()));
        }
        self.refine.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }

    /// Reads `path`, or the file named by [`CONFIG_ENV`], or the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let path: Option<PathBuf> = path.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Config::parse(&text)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_matches_default_config() {
        assert_eq!(Config::parse(DEFAULT_CONFIG).unwrap(), Config::default());
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn keys_override_defaults() {
        let c = Config::parse("pseudo.gamma = 0.002\noptimizer.iterations = 7\nmetrics.auc_mode = \"binned\"\nmetrics.auc_bins = 50\n")
            .unwrap();
        assert_eq!(c.refine.pseudo.gamma, 0.002);
        assert_eq!(c.optimizer.iterations, 7);
        assert_eq!(c.auc_mode, AucMode::Binned(50));
        let c = Config::parse("[pseudo]\nmode = \"plain_min\"\n").unwrap();
        assert_eq!(c.refine.pseudo.mode, OffsetMode::PlainMin);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        for text in [
            "nope.key = 1",
            "pseudo.rho = 2.0",
            "pseudo.window = -1",
            "pseudo.mode = \"median\"",
            "codebook.inplane = 0",
            "self.lambda_xy = \"x\"",
            "= broken",
        ] {
            assert!(matches!(Config::parse(text), Err(CliError::Usage(_))), "{text}");
        }
    }
}
