use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{ActivationKind, InitScheme};
use crate::tasks::ArithOp;
use crate::transformer::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Pairwise,
    Arithmetic,
    Sva,
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(TaskKind::Pairwise),
            "arithmetic" => Ok(TaskKind::Arithmetic),
            "sva" => Ok(TaskKind::Sva),
            other => Err(Error::config(
                "task",
                format!("`{other}` is not one of pairwise, arithmetic, sva"),
            )),
        }
    }
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Pairwise => "pairwise",
            TaskKind::Arithmetic => "arithmetic",
            TaskKind::Sva => "sva",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qatt,
    Qtransformer,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qatt" => Ok(ModelKind::Qatt),
            "qtransformer" | "transformer" => Ok(ModelKind::Qtransformer),
            other => Err(Error::config(
                "model",
                format!("`{other}` is not one of qatt, qtransformer"),
            )),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Qatt => "qatt",
            ModelKind::Qtransformer => "qtransformer",
        }
    }
}

/// Learning rates accepted without `expert = true`.
pub const LEARNING_RATES: [f64; 2] = [1e-3, 3e-4];
/// Batch sizes accepted without `expert = true`.
pub const BATCH_SIZES: [usize; 2] = [32, 64];

/// Everything that determines a training run.
///
/// Stored as plain-text `key = value` lines under `[run]`, `[model]`,
/// `[optim]`, `[data]` sections. Keys are unique across sections, so
/// [`TrainConfig::set`] also accepts them without a section prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    // [run]
    pub task: TaskKind,
    pub model: ModelKind,
    /// Transformer: real, partial or full. Q-Att: real or full (quaternion).
    pub variant: Variant,
    pub seed: u64,
    pub steps: usize,
    pub eval_every: usize,
    /// Stop once the validation metric reaches this value.
    pub target_metric: Option<f64>,
    /// Evaluate on the training set instead of a held-out split.
    pub eval_on_train: bool,
    // [model]
    /// Quaternion width (Q-Att token width, transformer `d_q`).
    pub d: usize,
    pub hidden_q: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub activation: ActivationKind,
    pub init: InitScheme,
    pub share_compare: bool,
    // [optim]
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Allow learning rates and batch sizes outside the standard grid.
    pub expert: bool,
    // [data]
    pub n_train: usize,
    pub n_val: usize,
    pub vocab: usize,
    pub seq_min: usize,
    pub seq_max: usize,
    pub verbatim: bool,
    pub min_digits: u32,
    pub max_digits: u32,
    pub ops: Vec<ArithOp>,
    pub allow_negative: bool,
    pub depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::Pairwise,
            model: ModelKind::Qatt,
            variant: Variant::Full,
            seed: 1,
            steps: 2000,
            eval_every: 100,
            target_metric: None,
            eval_on_train: false,
            d: 8,
            hidden_q: 8,
            layers: 2,
            heads: 2,
            ffn_hidden: 128,
            activation: ActivationKind::Relu,
            init: InitScheme::GlorotPerComponent,
            share_compare: false,
            learning_rate: 1e-3,
            batch_size: 32,
            warmup: 0,
            clip_norm: 0.0,
            expert: false,
            n_train: 2000,
            n_val: 500,
            vocab: 50,
            seq_min: 4,
            seq_max: 8,
            verbatim: false,
            min_digits: 2,
            max_digits: 2,
            ops: vec![ArithOp::Add],
            allow_negative: false,
            depth: 2,
        }
    }
}

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(field, format!("cannot parse `{value}`")))
}

fn parse_bool(field: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::config(field, format!("`{other}` is not a boolean"))),
    }
}

impl TrainConfig {
    /// Sets one field from text; `key` may carry a `section.` prefix.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let field = key.rsplit('.').next().unwrap_or(key).trim();
        let v = value.trim();
        match field {
            "task" => self.task = v.parse()?,
            "model" => self.model = v.parse()?,
            "variant" => {
                self.variant = match v {
                    "quaternion" | "q" => Variant::Full,
                    other => other.parse()?,
                }
            }
            "seed" => self.seed = parse(field, v)?,
            "steps" => self.steps = parse(field, v)?,
            "eval_every" => self.eval_every = parse(field, v)?,
            "target_metric" => {
                self.target_metric = match v {
                    "" | "none" => None,
                    _ => Some(parse(field, v)?),
                }
            }
            "eval_on_train" => self.eval_on_train = parse_bool(field, v)?,
            "d" | "d_q" => self.d = parse(field, v)?,
            "hidden_q" => self.hidden_q = parse(field, v)?,
            "layers" => self.layers = parse(field, v)?,
            "heads" => self.heads = parse(field, v)?,
            "ffn_hidden" => self.ffn_hidden = parse(field, v)?,
            "activation" => self.activation = v.parse()?,
            "init" => self.init = v.parse()?,
            "share_compare" => self.share_compare = parse_bool(field, v)?,
            "learning_rate" | "lr" => self.learning_rate = parse(field, v)?,
            "batch_size" => self.batch_size = parse(field, v)?,
            "warmup" => self.warmup = parse(field, v)?,
            "clip_norm" => self.clip_norm = parse(field, v)?,
            "expert" => self.expert = parse_bool(field, v)?,
            "n_train" => self.n_train = parse(field, v)?,
            "n_val" => self.n_val = parse(field, v)?,
            "vocab" => self.vocab = parse(field, v)?,
            "seq_min" => self.seq_min = parse(field, v)?,
            "seq_max" => self.seq_max = parse(field, v)?,
            "verbatim" => self.verbatim = parse_bool(field, v)?,
            "min_digits" => self.min_digits = parse(field, v)?,
            "max_digits" => self.max_digits = parse(field, v)?,
            "ops" => self.ops = ArithOp::parse_list(v)?,
            "allow_negative" => self.allow_negative = parse_bool(field, v)?,
            "depth" => self.depth = parse(field, v)?,
            other => return Err(Error::config(other, "unknown field")),
        }
        Ok(())
    }

    /// Defaults overridden by every key of an INI document.
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let doc = Ini::load_from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let mut cfg = TrainConfig::default();
        for (_, props) in doc.iter() {
            for (k, v) in props.iter() {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_ini_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_ini_string(&self) -> String {
        let ops: String = self.ops.iter().map(|o| o.symbol()).collect();
        let target = self
            .target_metric
            .map_or("none".to_string(), |t| t.to_string());
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "[run]").unwrap();
        writeln!(w, "task = {}", self.task.name()).unwrap();
        writeln!(w, "model = {}", self.model.name()).unwrap();
        writeln!(w, "variant = {}", self.variant).unwrap();
        writeln!(w, "seed = {}", self.seed).unwrap();
        writeln!(w, "steps = {}", self.steps).unwrap();
        writeln!(w, "eval_every = {}", self.eval_every).unwrap();
        writeln!(w, "target_metric = {target}").unwrap();
        writeln!(w, "eval_on_train = {}", self.eval_on_train).unwrap();
        writeln!(w, "\n[model]").unwrap();
        writeln!(w, "d = {}", self.d).unwrap();
        writeln!(w, "hidden_q = {}", self.hidden_q).unwrap();
        writeln!(w, "layers = {}", self.layers).unwrap();
        writeln!(w, "heads = {}", self.heads).unwrap();
        writeln!(w, "ffn_hidden = {}", self.ffn_hidden).unwrap();
        writeln!(w, "activation = {}", self.activation).unwrap();
        let init = match self.init {
            InitScheme::GlorotPerComponent => "glorot",
            InitScheme::QuaternionPolar => "polar",
        };
        writeln!(w, "init = {init}").unwrap();
        writeln!(w, "share_compare = {}", self.share_compare).unwrap();
        writeln!(w, "\n[optim]").unwrap();
        writeln!(w, "learning_rate = {}", self.learning_rate).unwrap();
        writeln!(w, "batch_size = {}", self.batch_size).unwrap();
        writeln!(w, "warmup = {}", self.warmup).unwrap();
        writeln!(w, "clip_norm = {}", self.clip_norm).unwrap();
        writeln!(w, "expert = {}", self.expert).unwrap();
        writeln!(w, "\n[data]").unwrap();
        writeln!(w, "n_train = {}", self.n_train).unwrap();
        writeln!(w, "n_val = {}", self.n_val).unwrap();
        writeln!(w, "vocab = {}", self.vocab).unwrap();
        writeln!(w, "seq_min = {}", self.seq_min).unwrap();
        writeln!(w, "seq_max = {}", self.seq_max).unwrap();
        writeln!(w, "verbatim = {}", self.verbatim).unwrap();
        writeln!(w, "min_digits = {}", self.min_digits).unwrap();
        writeln!(w, "max_digits = {}", self.max_digits).unwrap();
        writeln!(w, "ops = {ops}").unwrap();
        writeln!(w, "allow_negative = {}", self.allow_negative).unwrap();
        writeln!(w, "depth = {}", self.depth).unwrap();
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !self.expert {
            if !LEARNING_RATES.contains(&self.learning_rate) {
                return Err(Error::config(
                    "learning_rate",
                    "must be 0.001 or 0.0003 (set expert = true to override)",
                ));
            }
            if !BATCH_SIZES.contains(&self.batch_size) {
                return Err(Error::config(
                    "batch_size",
                    "must be 32 or 64 (set expert = true to override)",
                ));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.n_train == 0 {
            return Err(Error::config("n_train", "must be at least 1"));
        }
        if self.n_val == 0 && !self.eval_on_train {
            return Err(Error::config("n_val", "must be at least 1"));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::config("clip_norm", "must be non-negative"));
        }
        if self.model == ModelKind::Qatt {
            if self.variant == Variant::Partial {
                return Err(Error::config("variant", "qatt admits real or quaternion"));
            }
            if self.task == TaskKind::Arithmetic {
                return Err(Error::config(
                    "task",
                    "arithmetic needs the qtransformer model",
                ));
            }
        }
        Ok(())
    }
}
