//! Flat key=value run configuration. Every run resolves one [`RunConfig`]
//! from defaults, an optional config file, and command-line overrides (in
//! that precedence order, CLI highest), then archives the resolved result
//! beside its outputs so any run can be replayed bit-for-bit.
//!
//! ```
//! use omnilens::runcfg::RunConfig;
//!
//! let cfg = RunConfig::resolve(None, &["train.lambda=0.5".into()]).unwrap();
//! assert_eq!(cfg.get("train.lambda").unwrap(), "0.5");
//! assert_eq!(cfg.get("seed").unwrap(), "0");
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::SceneSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tasks::TaskSpec;
use crate::train::{parse_ratio, TrainConfig};

/// Environment variable overriding the results root.
pub const RESULTS_ENV: &str = "OMNILENS_RESULTS";

/// Name under which the resolved config is archived in the results dir.
pub const ARCHIVE_NAME: &str = "config.txt";

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("data.dir", "data"),
    ("results.dir", "results"),
    ("checkpoint", "model.ckpt"),
    ("model.image_size", "64"),
    ("model.embed_dim", "64"),
    ("model.levels", "3"),
    ("model.decoder_layers", "3"),
    ("model.general_queries", "10"),
    ("model.text_max_tokens", "16"),
    ("model.semantic_steps", "12"),
    ("model.text_layers", "2"),
    ("model.hidden_mult", "4"),
    ("model.proj_dim", "32"),
    ("vocab.coord_bins", "1000"),
    ("train.steps", "200"),
    ("train.lr", "1e-4"),
    ("train.weight_decay", "0.05"),
    ("train.lambda", "0.1"),
    ("train.ratio", "1:1"),
    ("train.momentum", "0.99"),
    ("train.temperature", "0.2"),
    ("train.queue_size", "256"),
    ("train.no_object_weight", "0.1"),
    ("train.referring_every", "4"),
    ("scene.min_objects", "0"),
    ("scene.max_objects", "3"),
    ("scene.min_radius", "7"),
    ("scene.max_radius", "14"),
    ("scene.noise", "0.04"),
    ("data.train", "16"),
    ("data.val", "4"),
    ("data.test", "8"),
    ("data.unlabeled", "32"),
    ("eval.protocol", "zero-shot"),
    ("eval.tasks", "all"),
    ("eval.overlays", "2"),
    ("infer.task", "segmentation/general"),
    ("infer.prompt", ""),
    ("infer.image", ""),
    ("ablate.sweep", "lambda"),
];

/// A fully resolved run configuration: a flat, ordered key=value map over a
/// fixed key set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// The built-in defaults only.
    pub fn defaults() -> Self {
        Self { values: DEFAULTS.iter().map(|&(k, v)| (k.into(), v.into())).collect() }
    }

    /// Resolves defaults, then the environment results-root override, then a
    /// config file, then CLI `key=value` overrides. Every violation is
    /// reported at once.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::defaults();
        let mut violations = Vec::new();
        if let Ok(root) = std::env::var(RESULTS_ENV) {
            if !root.is_empty() {
                cfg.values.insert("results.dir".into(), root);
            }
        }
        if let Some(path) = file {
            let text = fs::read_to_string(path)?;
            match parse_pairs(&text) {
                Ok(pairs) => cfg.apply(&pairs, &mut violations),
                Err(e) => violations.push(e),
            }
        }
        let mut cli_pairs = Vec::new();
        for ov in overrides {
            match ov.split_once('=') {
                Some((k, v)) => cli_pairs.push((k.trim().to_string(), v.trim().to_string())),
                None => violations.push(format!("override {ov:?} is not key=value")),
            }
        }
        cfg.apply(&cli_pairs, &mut violations);
        violations.extend(cfg.violations());
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    fn apply(&mut self, pairs: &[(String, String)], violations: &mut Vec<String>) {
        for (k, v) in pairs {
            if self.values.contains_key(k) {
                self.values.insert(k.clone(), v.clone());
            } else {
                violations.push(format!("unknown key {k:?}"));
            }
        }
    }

    /// Checks every typed view; collects the first error per field group.
    pub fn validate(&self) -> Result<()> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut violations = Vec::new();
        for check in [
            self.model_config().map(|_| ()),
            self.train_config().map(|_| ()),
            self.scene_spec().map(|_| ()),
            self.eval_tasks().map(|_| ()),
            self.get_usize("vocab.coord_bins").and_then(|b| {
                if b >= 2 {
                    Ok(())
                } else {
                    Err(Error::Config("vocab.coord_bins must be >= 2".into()))
                }
            }),
            self.get_u64("seed").map(|_| ()),
        ] {
            if let Err(e) = check {
                // keep the bare message; the caller adds the error category
                violations.push(match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                });
            }
        }
        violations
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))
    }

    /// Sets a known key (used by subcommands folding flags into the
    /// archived config).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.into(), value.into());
        Ok(())
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Config(format!("{key} must be a non-negative integer")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Config(format!("{key} must be a non-negative integer")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?.parse().map_err(|_| Error::Config(format!("{key} must be a number")))
    }

    pub fn seed(&self) -> u64 {
        self.get_u64("seed").unwrap_or(0)
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(self.values["data.dir"].clone())
    }

    pub fn results_dir(&self) -> PathBuf {
        PathBuf::from(self.values["results.dir"].clone())
    }

    /// Checkpoint path; relative paths live under the results dir.
    pub fn checkpoint_path(&self) -> PathBuf {
        let p = PathBuf::from(self.values["checkpoint"].clone());
        if p.is_absolute() {
            p
        } else {
            self.results_dir().join(p)
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            image_size: self.get_usize("model.image_size")?,
            embed_dim: self.get_usize("model.embed_dim")?,
            levels: self.get_usize("model.levels")?,
            decoder_layers: self.get_usize("model.decoder_layers")?,
            general_queries: self.get_usize("model.general_queries")?,
            text_max_tokens: self.get_usize("model.text_max_tokens")?,
            semantic_steps: self.get_usize("model.semantic_steps")?,
            text_layers: self.get_usize("model.text_layers")?,
            hidden_mult: self.get_usize("model.hidden_mult")?,
            proj_dim: self.get_usize("model.proj_dim")?,
            // placeholder; the real vocabulary size is bound at model build
            vocab_size: 8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            steps: self.get_usize("train.steps")?,
            lr: self.get_f64("train.lr")?,
            weight_decay: self.get_f64("train.weight_decay")?,
            lambda: self.get_f64("train.lambda")?,
            ratio: parse_ratio(self.get("train.ratio")?)?,
            momentum: self.get_f64("train.momentum")?,
            temperature: self.get_f64("train.temperature")?,
            queue_size: self.get_usize("train.queue_size")?,
            no_object_weight: self.get_f64("train.no_object_weight")?,
            referring_every: self.get_usize("train.referring_every")?,
            seed: self.seed(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let spec = SceneSpec {
            image_size: self.get_usize("model.image_size")?,
            min_objects: self.get_usize("scene.min_objects")?,
            max_objects: self.get_usize("scene.max_objects")?,
            min_radius: self.get_usize("scene.min_radius")?,
            max_radius: self.get_usize("scene.max_radius")?,
            noise: self.get_f64("scene.noise")?,
            ..SceneSpec::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Tasks selected for evaluation: `all` or a comma list of task names.
    pub fn eval_tasks(&self) -> Result<Vec<TaskSpec>> {
        let raw = self.get("eval.tasks")?;
        if raw == "all" {
            return Ok(TaskSpec::all());
        }
        raw.split(',').map(|s| TaskSpec::parse(s.trim())).collect()
    }

    /// Canonical archived form: sorted `key=value` lines.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Parses the archived form back; the key set must match exactly.
    pub fn from_file_string(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text).map_err(Error::Config)?;
        let mut cfg = Self::defaults();
        let mut violations = Vec::new();
        cfg.apply(&pairs, &mut violations);
        if !violations.is_empty() {
            return Err(Error::Config(violations.join("; ")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the resolved config into the results dir and returns its path.
    pub fn archive(&self) -> Result<PathBuf> {
        let dir = self.results_dir();
        fs::create_dir_all(&dir)?;
        let path = dir.join(ARCHIVE_NAME);
        fs::write(&path, self.to_file_string())?;
        Ok(path)
    }
}

fn parse_pairs(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: {line:?} is not key=value", i + 1))?;
        let k = k.trim().to_string();
        if !seen.insert(k.clone()) {
            return Err(format!("line {}: duplicate key {k:?}", i + 1));
        }
        pairs.push((k, v.trim().to_string()));
    }
    Ok(pairs)
}
