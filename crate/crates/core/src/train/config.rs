use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffkernel::AdamConfig;
use crate::kg::Mode;
use crate::model::{Activation, ModelConfig, Variant};

use super::TrainError;

/// Every training knob. Read from and written to a flat `key = value` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub dim: usize,
    pub attn_dim: usize,
    pub depth: usize,
    pub activation: Activation,
    pub variant: Variant,
    pub max_epochs: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub deterministic: bool,
    /// Share of transductive facts kept as the fact graph during training.
    pub fact_fraction: f64,
    /// Draw a new fact/label split every epoch instead of once per run.
    pub resample_split: bool,
    /// Hide each batch's target triples from its fact graph. Disabling this
    /// leaks answers and exists only for comparison runs.
    pub masking: bool,
    /// Queries per gradient tape; fixes the reduction order independently
    /// of the worker count.
    pub chunk_size: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 1e-4,
            dropout: 0.1,
            batch_size: 20,
            dim: 48,
            attn_dim: 5,
            depth: 3,
            activation: Activation::Tanh,
            variant: Variant::Full,
            max_epochs: 50,
            eval_every: 1,
            patience: 10,
            seed: 0,
            deterministic: false,
            fact_fraction: 0.75,
            resample_split: false,
            masking: true,
            chunk_size: 10,
            eval_batch_size: 16,
        }
    }
}

/// `line N: ` prefix for config-file errors; 0 means the value came from
/// elsewhere (command line).
fn at_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("line {line}: ")
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, TrainError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| TrainError::Config(format!("{}{key} = {value}: {e}", at_line(line))))
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            attn_dim: self.attn_dim,
            depth: self.depth,
            activation: self.activation,
            variant: self.variant,
            dropout: self.dropout,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model_config().validate()?;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be a finite non-negative number");
        }
        if self.batch_size == 0 || self.chunk_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if !(self.fact_fraction > 0.0 && self.fact_fraction < 1.0) {
            return bad("fact_fraction must lie strictly between 0 and 1");
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), TrainError> {
        match key {
            "lr" => self.lr = parse(key, value, line)?,
            "weight_decay" => self.weight_decay = parse(key, value, line)?,
            "dropout" => self.dropout = parse(key, value, line)?,
            "batch_size" => self.batch_size = parse(key, value, line)?,
            "dim" => self.dim = parse(key, value, line)?,
            "attn_dim" => self.attn_dim = parse(key, value, line)?,
            "depth" => self.depth = parse(key, value, line)?,
            "activation" => self.activation = parse(key, value, line)?,
            "variant" => self.variant = parse(key, value, line)?,
            "max_epochs" => self.max_epochs = parse(key, value, line)?,
            "eval_every" => self.eval_every = parse(key, value, line)?,
            "patience" => self.patience = parse(key, value, line)?,
            "seed" => self.seed = parse(key, value, line)?,
            "deterministic" => self.deterministic = parse(key, value, line)?,
            "fact_fraction" => self.fact_fraction = parse(key, value, line)?,
            "resample_split" => self.resample_split = parse(key, value, line)?,
            "masking" => self.masking = parse(key, value, line)?,
            "chunk_size" => self.chunk_size = parse(key, value, line)?,
            "eval_batch_size" => self.eval_batch_size = parse(key, value, line)?,
            _ => return Err(TrainError::Config(format!("{}unknown key `{key}`", at_line(line)))),
        }
        Ok(())
    }

    /// Defaults for a dataset mode: relu for inductive, tanh otherwise.
    pub fn for_mode(mode: Mode) -> Self {
        let mut cfg = Self::default();
        if mode == Mode::Inductive {
            cfg.activation = Activation::Relu;
        }
        cfg
    }

    /// Parses a flat config over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies the assignments of a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), TrainError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim(), i + 1)?;
        }
        self.validate()
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text).map_err(|e| match e {
            TrainError::Config(m) => TrainError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "attn_dim = {}", self.attn_dim);
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "activation = {}", self.activation);
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "deterministic = {}", self.deterministic);
        let _ = writeln!(s, "fact_fraction = {}", self.fact_fraction);
        let _ = writeln!(s, "resample_split = {}", self.resample_split);
        let _ = writeln!(s, "masking = {}", self.masking);
        let _ = writeln!(s, "chunk_size = {}", self.chunk_size);
        let _ = writeln!(s, "eval_batch_size = {}", self.eval_batch_size);
        s
    }
}
