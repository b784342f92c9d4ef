//! Experiment configuration: a flat `key = value` text format with `#`
//! comments. Every key has a default; unknown keys are rejected with a
//! suggestion.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable used as a prefix for relative dataset paths that do
/// not resolve from the working directory.
pub const DATA_ROOT_ENV: &str = "SCALECODEC_DATA_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub l_base: usize,
    pub l_enh: usize,
    /// Hidden width of analysis/synthesis stacks.
    pub hidden: usize,
    /// Channels of the task proxy's cut-point features.
    pub feature_channels: usize,
    pub proxy_width: usize,
    pub classes: usize,
    pub s_max: i32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_base: f64,
    pub lambda_enh: f64,
}

impl LossWeights {
    pub fn new(lambda_base: f64, lambda_enh: f64) -> Result<Self> {
        for (k, v) in [("lambda_base", lambda_base), ("lambda_enh", lambda_enh)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{k} must be positive, got {v}")));
            }
        }
        Ok(LossWeights {
            lambda_base,
            lambda_enh,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_epochs: usize,
    pub decay_interval: usize,
    pub decay_power: f64,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub patch_size: usize,
}

impl TrainingSchedule {
    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2_epochs
    }

    /// Learning rate for a 0-based epoch: constant through stage one, then
    /// polynomial decay stepped every `decay_interval` epochs.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.stage1_epochs || self.stage2_epochs == 0 {
            return self.stage1_lr;
        }
        let j = epoch - self.stage1_epochs;
        let steps = self.stage2_epochs.div_ceil(self.decay_interval) as f64;
        let k = (j / self.decay_interval) as f64;
        (self.stage1_lr * (1.0 - k / steps).powf(self.decay_power)).max(self.lr_floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub arch: Architecture,
    pub weights: LossWeights,
    pub schedule: TrainingSchedule,
    pub lambda_grid: Vec<f64>,
    pub lambda_enh_grid: Vec<f64>,
    /// Fixed enhancement weight used by the parallel baseline across the
    /// base-weight sweep.
    pub joint_lambda_enh: f64,
    pub proxy_epochs: usize,
    pub proxy_lr: f64,
    pub proxy_batch: usize,
    /// Directory with PNG images and `manifest.csv`; `None` selects the
    /// generated desk dataset.
    pub data_dir: Option<PathBuf>,
    pub synthetic_train: usize,
    pub synthetic_val: usize,
    pub image_size: usize,
    pub seed: u64,
    pub coder: bool,
    /// Checkpoint whose `residual.*` parameters initialize enhancement
    /// training.
    pub residual_init: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arch: Architecture {
                l_base: 16,
                l_enh: 48,
                hidden: 64,
                feature_channels: 16,
                proxy_width: 32,
                classes: 10,
                s_max: 64,
            },
            weights: LossWeights {
                lambda_base: 10.0,
                lambda_enh: 300.0,
            },
            schedule: TrainingSchedule {
                stage1_epochs: 60,
                stage1_lr: 1e-3,
                stage2_epochs: 30,
                decay_interval: 10,
                decay_power: 1.0,
                lr_floor: 1e-6,
                batch_size: 16,
                patch_size: 32,
            },
            lambda_grid: vec![0.3, 1.0, 3.0, 10.0, 30.0, 100.0],
            lambda_enh_grid: vec![30.0, 100.0, 300.0, 1000.0],
            joint_lambda_enh: 300.0,
            proxy_epochs: 30,
            proxy_lr: 3e-3,
            proxy_batch: 16,
            data_dir: None,
            synthetic_train: 2000,
            synthetic_val: 500,
            image_size: 32,
            seed: 0,
            coder: true,
            residual_init: None,
        }
    }
}

const KEYS: &[&str] = &[
    "l_base",
    "l_enh",
    "hidden",
    "feature_channels",
    "proxy_width",
    "classes",
    "s_max",
    "lambda_base",
    "lambda_enh",
    "lambda_grid",
    "lambda_enh_grid",
    "joint_lambda_enh",
    "stage1_epochs",
    "stage1_lr",
    "stage2_epochs",
    "decay_interval",
    "decay_power",
    "lr_floor",
    "batch_size",
    "patch_size",
    "proxy_epochs",
    "proxy_lr",
    "proxy_batch",
    "data_dir",
    "synthetic_train",
    "synthetic_val",
    "image_size",
    "seed",
    "coder",
    "residual_init",
];

fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn nearest_key(key: &str) -> &'static str {
    KEYS.iter()
        .min_by_key(|k| levenshtein(key, k))
        .copied()
        .unwrap_or("l_base")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse_with_base(text, None)
    }

    /// Parse a config file; relative paths resolve against the file's
    /// directory, then against `$SCALECODEC_DATA_ROOT`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with_base(&text, path.parent())
    }

    fn parse_with_base(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut lines: HashMap<&'static str, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!(
                        "unknown key `{key}` (did you mean `{}`?)",
                        nearest_key(key)
                    ),
                });
            };
            if lines.insert(known, line_no).is_some() {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("key `{key}` given twice"),
                });
            }
            cfg.set(known, value).map_err(|msg| Error::Config {
                line: line_no,
                msg: format!("{key}: {msg}"),
            })?;
        }
        for (key, slot) in [("data_dir", &mut cfg.data_dir), ("residual_init", &mut cfg.residual_init)] {
            if let Some(p) = slot.take() {
                let resolved = resolve_path(&p, base).ok_or_else(|| Error::Config {
                    line: lines.get(key).copied().unwrap_or(0),
                    msg: format!("{key}: path `{}` does not exist", p.display()),
                })?;
                *slot = Some(resolved);
            }
        }
        cfg.validate().map_err(|(key, msg)| Error::Config {
            line: lines.get(key).copied().unwrap_or(0),
            msg: format!("{key}: {msg}"),
        })?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn int(v: &str) -> std::result::Result<i64, String> {
            v.parse::<i64>().map_err(|_| format!("expected an integer, got `{v}`"))
        }
        fn count(v: &str) -> std::result::Result<usize, String> {
            let n = int(v)?;
            usize::try_from(n).map_err(|_| format!("expected a non-negative integer, got {n}"))
        }
        fn real(v: &str) -> std::result::Result<f64, String> {
            v.parse::<f64>().map_err(|_| format!("expected a number, got `{v}`"))
        }
        fn list(v: &str) -> std::result::Result<Vec<f64>, String> {
            v.split(',').map(|s| real(s.trim())).collect()
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v {
                "on" | "true" | "1" | "yes" => Ok(true),
                "off" | "false" | "0" | "no" => Ok(false),
                _ => Err(format!("expected on/off, got `{v}`")),
            }
        }
        match key {
            "l_base" => self.arch.l_base = count(v)?,
            "l_enh" => self.arch.l_enh = count(v)?,
            "hidden" => self.arch.hidden = count(v)?,
            "feature_channels" => self.arch.feature_channels = count(v)?,
            "proxy_width" => self.arch.proxy_width = count(v)?,
            "classes" => self.arch.classes = count(v)?,
            "s_max" => {
                self.arch.s_max =
                    i32::try_from(int(v)?).map_err(|_| format!("`{v}` out of range"))?
            }
            "lambda_base" => self.weights.lambda_base = real(v)?,
            "lambda_enh" => self.weights.lambda_enh = real(v)?,
            "lambda_grid" => self.lambda_grid = list(v)?,
            "lambda_enh_grid" => self.lambda_enh_grid = list(v)?,
            "joint_lambda_enh" => self.joint_lambda_enh = real(v)?,
            "stage1_epochs" => self.schedule.stage1_epochs = count(v)?,
            "stage1_lr" => self.schedule.stage1_lr = real(v)?,
            "stage2_epochs" => self.schedule.stage2_epochs = count(v)?,
            "decay_interval" => self.schedule.decay_interval = count(v)?,
            "decay_power" => self.schedule.decay_power = real(v)?,
            "lr_floor" => self.schedule.lr_floor = real(v)?,
            "batch_size" => self.schedule.batch_size = count(v)?,
            "patch_size" => self.schedule.patch_size = count(v)?,
            "proxy_epochs" => self.proxy_epochs = count(v)?,
            "proxy_lr" => self.proxy_lr = real(v)?,
            "proxy_batch" => self.proxy_batch = count(v)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "synthetic_train" => self.synthetic_train = count(v)?,
            "synthetic_val" => self.synthetic_val = count(v)?,
            "image_size" => self.image_size = count(v)?,
            "seed" => {
                self.seed = v
                    .parse::<u64>()
                    .map_err(|_| format!("expected an unsigned integer, got `{v}`"))?
            }
            "coder" => self.coder = flag(v)?,
            "residual_init" => self.residual_init = Some(PathBuf::from(v)),
            _ => unreachable!("key list and setter out of sync: {key}"),
        }
        Ok(())
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive_counts = [
            ("l_base", self.arch.l_base),
            ("l_enh", self.arch.l_enh),
            ("hidden", self.arch.hidden),
            ("feature_channels", self.arch.feature_channels),
            ("proxy_width", self.arch.proxy_width),
            ("decay_interval", self.schedule.decay_interval),
            ("batch_size", self.schedule.batch_size),
            ("proxy_batch", self.proxy_batch),
        ];
        for (k, v) in positive_counts {
            if v == 0 {
                return Err((k, "must be positive".into()));
            }
        }
        if self.arch.classes < 2 {
            return Err(("classes", "need at least 2 classes".into()));
        }
        if !(1..=16383).contains(&self.arch.s_max) {
            return Err(("s_max", format!("{} not in 1..=16383", self.arch.s_max)));
        }
        for (k, v) in [
            ("patch_size", self.schedule.patch_size),
            ("image_size", self.image_size),
        ] {
            if v < 8 || v % 8 != 0 {
                return Err((k, format!("{v} must be a positive multiple of 8")));
            }
        }
        let positive_reals = [
            ("lambda_base", self.weights.lambda_base),
            ("lambda_enh", self.weights.lambda_enh),
            ("joint_lambda_enh", self.joint_lambda_enh),
            ("stage1_lr", self.schedule.stage1_lr),
            ("decay_power", self.schedule.decay_power),
            ("lr_floor", self.schedule.lr_floor),
            ("proxy_lr", self.proxy_lr),
        ];
        for (k, v) in positive_reals {
            if !(v.is_finite() && v > 0.0) {
                return Err((k, format!("must be positive, got {v}")));
            }
        }
        for (k, grid) in [
            ("lambda_grid", &self.lambda_grid),
            ("lambda_enh_grid", &self.lambda_enh_grid),
        ] {
            if grid.is_empty() || grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err((k, "must be a non-empty list of positive numbers".into()));
            }
        }
        if self.data_dir.is_none() && (self.synthetic_train == 0 || self.synthetic_val == 0) {
            return Err(("synthetic_train", "generated splits must be non-empty".into()));
        }
        Ok(())
    }

    /// Resolved configuration in the same text format, every key present.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.arch;
        let t = &self.schedule;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let _ = writeln!(s, "l_base = {}", a.l_base);
        let _ = writeln!(s, "l_enh = {}", a.l_enh);
        let _ = writeln!(s, "hidden = {}", a.hidden);
        let _ = writeln!(s, "feature_channels = {}", a.feature_channels);
        let _ = writeln!(s, "proxy_width = {}", a.proxy_width);
        let _ = writeln!(s, "classes = {}", a.classes);
        let _ = writeln!(s, "s_max = {}", a.s_max);
        let _ = writeln!(s, "lambda_base = {}", self.weights.lambda_base);
        let _ = writeln!(s, "lambda_enh = {}", self.weights.lambda_enh);
        let _ = writeln!(s, "lambda_grid = {}", fmt_list(&self.lambda_grid));
        let _ = writeln!(s, "lambda_enh_grid = {}", fmt_list(&self.lambda_enh_grid));
        let _ = writeln!(s, "joint_lambda_enh = {}", self.joint_lambda_enh);
        let _ = writeln!(s, "stage1_epochs = {}", t.stage1_epochs);
        let _ = writeln!(s, "stage1_lr = {}", t.stage1_lr);
        let _ = writeln!(s, "stage2_epochs = {}", t.stage2_epochs);
        let _ = writeln!(s, "decay_interval = {}", t.decay_interval);
        let _ = writeln!(s, "decay_power = {}", t.decay_power);
        let _ = writeln!(s, "lr_floor = {}", t.lr_floor);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "patch_size = {}", t.patch_size);
        let _ = writeln!(s, "proxy_epochs = {}", self.proxy_epochs);
        let _ = writeln!(s, "proxy_lr = {}", self.proxy_lr);
        let _ = writeln!(s, "proxy_batch = {}", self.proxy_batch);
        if let Some(p) = path(&self.data_dir) {
            let _ = writeln!(s, "data_dir = {p}");
        }
        let _ = writeln!(s, "synthetic_train = {}", self.synthetic_train);
        let _ = writeln!(s, "synthetic_val = {}", self.synthetic_val);
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "coder = {}", if self.coder { "on" } else { "off" });
        if let Some(p) = path(&self.residual_init) {
            let _ = writeln!(s, "residual_init = {p}");
        }
        s
    }
}

fn resolve_path(p: &Path, base: Option<&Path>) -> Option<PathBuf> {
    if p.is_absolute() {
        return p.exists().then(|| p.to_path_buf());
    }
    let mut candidates = Vec::new();
    if let Some(b) = base {
        candidates.push(b.join(p));
    }
    candidates.push(p.to_path_buf());
    if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
        candidates.push(Path::new(&root).join(p));
    }
    candidates.into_iter().find(|c| c.exists())
}
