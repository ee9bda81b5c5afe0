//! Experiment configuration: flat `key = value` files with `#` comments.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{AgentParams, EpsilonSchedule};
use crate::lexicon::{Lexicon, MessageId, DEFAULT_CAPACITY};
use crate::nn::OptimizerKind;
use crate::shapes::{builtin_default, builtin_desk, load_catalog, ShapeCatalog};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Primitives only, no mining.
    Worst,
    /// Catalog build macros preloaded, no mining.
    Best,
    /// Wake, sleep and dream cycles.
    Full,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "worst" => Ok(Mode::Worst),
            "best" => Ok(Mode::Best),
            "full" => Ok(Mode::Full),
            other => Err(format!("unknown mode {other:?} (expected worst, best or full)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Worst => "worst",
            Mode::Best => "best",
            Mode::Full => "full",
        })
    }
}

/// Scalar type of the network and replay data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CatalogSpec {
    /// The 11-shape experimental set.
    Builtin,
    /// One shape per family.
    Desk,
    File(PathBuf),
}

impl CatalogSpec {
    pub fn load(&self) -> Result<ShapeCatalog, HarnessError> {
        match self {
            CatalogSpec::Builtin => Ok(builtin_default()),
            CatalogSpec::Desk => Ok(builtin_desk()),
            CatalogSpec::File(p) => Ok(load_catalog(p)?),
        }
    }
}

impl fmt::Display for CatalogSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CatalogSpec::Builtin => f.write_str("builtin"),
            CatalogSpec::Desk => f.write_str("desk"),
            CatalogSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub precision: Precision,
    pub m_max: usize,
    pub max_steps: usize,
    pub pretrain_epochs: u64,
    pub pretrain_min_blocks: usize,
    pub pretrain_max_blocks: usize,
    pub max_epochs: u64,
    pub wake_phase_len: u64,
    pub score_threshold: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub window: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub epsilon_bump: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub train_every: u64,
    pub dream_iterations: usize,
    pub eval_interval: u64,
    pub eval_consecutive: u32,
    pub catalog: CatalogSpec,
    /// Abstractions to preload in best mode; empty means the catalog's
    /// minimal build sequences.
    pub preload: Vec<Vec<MessageId>>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Full,
            seed: 0,
            precision: Precision::F64,
            m_max: DEFAULT_CAPACITY,
            max_steps: crate::grid::DEFAULT_MAX_STEPS,
            pretrain_epochs: 20_000,
            pretrain_min_blocks: 1,
            pretrain_max_blocks: 3,
            max_epochs: 400_000,
            wake_phase_len: 2_000,
            score_threshold: 4.0,
            min_len: crate::miner::DEFAULT_MIN_LEN,
            max_len: crate::miner::DEFAULT_MAX_LEN,
            window: 500,
            epsilon_start: 1.0,
            epsilon_decay: 0.99995,
            epsilon_min: 0.05,
            epsilon_bump: 0.3,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            gamma: 1.0,
            replay_capacity: 100_000,
            batch_size: 64,
            target_sync: 500,
            train_every: 1,
            dream_iterations: 2_000,
            eval_interval: 500,
            eval_consecutive: 3,
            catalog: CatalogSpec::Builtin,
            preload: Vec::new(),
            out: None,
        }
    }
}

/// Every accepted key, in the order [`ExperimentConfig::to_text`] writes them.
pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "seed",
    "precision",
    "m_max",
    "max_steps",
    "pretrain_epochs",
    "pretrain_min_blocks",
    "pretrain_max_blocks",
    "max_epochs",
    "wake_phase_len",
    "score_threshold",
    "min_len",
    "max_len",
    "window",
    "epsilon_start",
    "epsilon_decay",
    "epsilon_min",
    "epsilon_bump",
    "optimizer",
    "learning_rate",
    "gamma",
    "replay_capacity",
    "batch_size",
    "target_sync",
    "train_every",
    "dream_iterations",
    "eval_interval",
    "eval_consecutive",
    "catalog",
    "preload",
    "out",
];

fn parse_value<V: FromStr>(key: &str, value: &str, line: usize) -> Result<V, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config(format!("line {line}: bad value {value:?} for {key}")))
}

fn parse_preload(value: &str) -> Result<Vec<Vec<MessageId>>, String> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|group| {
            group
                .split([' ', ','])
                .filter(|s| !s.is_empty())
                .map(|m| m.parse::<MessageId>().map_err(|e| e.to_string()))
                .collect()
        })
        .collect()
}

fn format_preload(preload: &[Vec<MessageId>]) -> String {
    preload
        .iter()
        .map(|g| g.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("; ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| HarnessError::Config(format!("line {line_no}: expected `key = value`")))?;
            cfg.set(key, value, line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), HarnessError> {
        let bad = |msg: String| HarnessError::Config(format!("line {line}: {msg}"));
        match key {
            "mode" => self.mode = value.parse().map_err(bad)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => return Err(bad(format!("unknown precision {other:?}"))),
                }
            }
            "m_max" => self.m_max = parse_value(key, value, line)?,
            "max_steps" => self.max_steps = parse_value(key, value, line)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value, line)?,
            "pretrain_min_blocks" => self.pretrain_min_blocks = parse_value(key, value, line)?,
            "pretrain_max_blocks" => self.pretrain_max_blocks = parse_value(key, value, line)?,
            "max_epochs" => self.max_epochs = parse_value(key, value, line)?,
            "wake_phase_len" => self.wake_phase_len = parse_value(key, value, line)?,
            "score_threshold" => self.score_threshold = parse_value(key, value, line)?,
            "min_len" => self.min_len = parse_value(key, value, line)?,
            "max_len" => self.max_len = parse_value(key, value, line)?,
            "window" => self.window = parse_value(key, value, line)?,
            "epsilon_start" => self.epsilon_start = parse_value(key, value, line)?,
            "epsilon_decay" => self.epsilon_decay = parse_value(key, value, line)?,
            "epsilon_min" => self.epsilon_min = parse_value(key, value, line)?,
            "epsilon_bump" => self.epsilon_bump = parse_value(key, value, line)?,
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    other => return Err(bad(format!("unknown optimizer {other:?}"))),
                }
            }
            "learning_rate" => self.learning_rate = parse_value(key, value, line)?,
            "gamma" => self.gamma = parse_value(key, value, line)?,
            "replay_capacity" => self.replay_capacity = parse_value(key, value, line)?,
            "batch_size" => self.batch_size = parse_value(key, value, line)?,
            "target_sync" => self.target_sync = parse_value(key, value, line)?,
            "train_every" => self.train_every = parse_value(key, value, line)?,
            "dream_iterations" => self.dream_iterations = parse_value(key, value, line)?,
            "eval_interval" => self.eval_interval = parse_value(key, value, line)?,
            "eval_consecutive" => self.eval_consecutive = parse_value(key, value, line)?,
            "catalog" => {
                self.catalog = match value {
                    "builtin" => CatalogSpec::Builtin,
                    "desk" => CatalogSpec::Desk,
                    path => CatalogSpec::File(PathBuf::from(path)),
                }
            }
            "preload" => self.preload = parse_preload(value).map_err(bad)?,
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.m_max < crate::lexicon::PRIMITIVE_COUNT {
            return fail("m_max must be at least 12");
        }
        let positives = [
            ("max_steps", self.max_steps as u64),
            ("max_epochs", self.max_epochs),
            ("wake_phase_len", self.wake_phase_len),
            ("window", self.window as u64),
            ("replay_capacity", self.replay_capacity as u64),
            ("batch_size", self.batch_size as u64),
            ("target_sync", self.target_sync),
            ("train_every", self.train_every),
            ("eval_interval", self.eval_interval),
            ("eval_consecutive", self.eval_consecutive as u64),
        ];
        if let Some((k, _)) = positives.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::Config(format!("{k} must be positive")));
        }
        if !(1..=4).contains(&self.pretrain_min_blocks)
            || !(self.pretrain_min_blocks..=4).contains(&self.pretrain_max_blocks)
        {
            return fail("pretrain blocks must satisfy 1 <= min <= max <= 4");
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return fail("need 2 <= min_len <= max_len");
        }
        for (k, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_min", self.epsilon_min),
            ("epsilon_bump", self.epsilon_bump),
            ("epsilon_decay", self.epsilon_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(HarnessError::Config(format!("{k} must lie in [0, 1]")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in [0, 1]");
        }
        if !self.score_threshold.is_finite() {
            return fail("score_threshold must be finite");
        }
        Ok(())
    }

    pub fn agent_params(&self) -> AgentParams {
        AgentParams {
            gamma: self.gamma,
            batch_size: self.batch_size,
            target_sync: self.target_sync,
            train_every: self.train_every,
            replay_capacity: self.replay_capacity,
        }
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            value: self.epsilon_start,
            decay: self.epsilon_decay,
            floor: self.epsilon_min,
            bump: self.epsilon_bump,
        }
    }

    /// Best-mode preload list: the configured one, or the distinct minimal
    /// build sequences of the catalog shapes.
    pub fn preload_list(&self, catalog: &ShapeCatalog) -> Vec<Vec<MessageId>> {
        if !self.preload.is_empty() {
            return self.preload.clone();
        }
        let mut out: Vec<Vec<MessageId>> = Vec::new();
        for shape in catalog.shapes() {
            let ids = shape.witness_ids();
            if ids.len() >= 2 && !out.contains(&ids) {
                out.push(ids);
            }
        }
        out
    }

    /// Checks that best-mode preloads fit and reference valid ids.
    pub fn check_preload(&self, catalog: &ShapeCatalog) -> Result<(), HarnessError> {
        if self.mode != Mode::Best {
            return Ok(());
        }
        let mut lex = Lexicon::try_new(self.m_max).map_err(|e| HarnessError::Config(e.to_string()))?;
        let list = self.preload_list(catalog);
        if crate::lexicon::PRIMITIVE_COUNT + list.len() > self.m_max {
            return Err(HarnessError::Config(format!(
                "best mode preloads {} abstractions; m_max must be at least {}",
                list.len(),
                crate::lexicon::PRIMITIVE_COUNT + list.len()
            )));
        }
        for parts in list {
            lex.push_abstraction(parts).map_err(|e| HarnessError::Config(format!("preload: {e}")))?;
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let opt = match self.optimizer {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        };
        let mut lines = vec![
            format!("mode = {}", self.mode),
            format!("seed = {}", self.seed),
            format!("precision = {}", self.precision),
            format!("m_max = {}", self.m_max),
            format!("max_steps = {}", self.max_steps),
            format!("pretrain_epochs = {}", self.pretrain_epochs),
            format!("pretrain_min_blocks = {}", self.pretrain_min_blocks),
            format!("pretrain_max_blocks = {}", self.pretrain_max_blocks),
            format!("max_epochs = {}", self.max_epochs),
            format!("wake_phase_len = {}", self.wake_phase_len),
            format!("score_threshold = {:?}", self.score_threshold),
            format!("min_len = {}", self.min_len),
            format!("max_len = {}", self.max_len),
            format!("window = {}", self.window),
            format!("epsilon_start = {:?}", self.epsilon_start),
            format!("epsilon_decay = {:?}", self.epsilon_decay),
            format!("epsilon_min = {:?}", self.epsilon_min),
            format!("epsilon_bump = {:?}", self.epsilon_bump),
            format!("optimizer = {opt}"),
            format!("learning_rate = {:?}", self.learning_rate),
            format!("gamma = {:?}", self.gamma),
            format!("replay_capacity = {}", self.replay_capacity),
            format!("batch_size = {}", self.batch_size),
            format!("target_sync = {}", self.target_sync),
            format!("train_every = {}", self.train_every),
            format!("dream_iterations = {}", self.dream_iterations),
            format!("eval_interval = {}", self.eval_interval),
            format!("eval_consecutive = {}", self.eval_consecutive),
            format!("catalog = {}", self.catalog),
        ];
        if !self.preload.is_empty() {
            lines.push(format!("preload = {}", format_preload(&self.preload)));
        }
        if let Some(out) = &self.out {
            lines.push(format!("out = {}", out.display()));
        }
        lines.join("\n") + "\n"
    }
}
