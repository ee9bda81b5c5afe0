//! The training loop: pretraining, wake epochs, periodic sleep with mining
//! and dreaming, greedy evaluation and resumable checkpoints.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{greedy_rollout, DqnAgent, EpisodeId, EpisodeOrigin, EpsilonSchedule, ReplayBuffer};
use crate::dream::{dream_train, rewrite_buffer};
use crate::grid::BuildEnv;
use crate::lexicon::{format_sequence, Lexicon, MessageId};
use crate::miner::{collect_sequences, mine, promote_best};
use crate::nn::Checkpoint;
use crate::nn::{architecture, Optimizer, QNetwork};
use crate::scalar::Real;
use crate::shapes::{random_goal, ShapeCatalog};

use super::config::{ExperimentConfig, Mode};
use super::metrics::{EventKind, EventRecord, MetricsRecord, Phase, RunLog};
use super::HarnessError;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.conf";
pub const SUMMARY_FILE: &str = "summary.txt";

const PRETRAIN_STREAM: u64 = 1;
const MAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrain,
    Main,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    stage: Stage,
    pretrain_epochs: u64,
    epochs: u64,
    streak: u32,
    epochs_to_solve: Option<u64>,
    /// First episode of the current wake phase.
    wake_start: EpisodeId,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct TrainingState<T> {
    config: String,
    target: Checkpoint<T>,
    buffer: ReplayBuffer<T>,
    epsilon: EpsilonSchedule,
    pretrain_rng: ChaCha8Rng,
    rng: ChaCha8Rng,
    env_steps: u64,
    train_steps: u64,
    progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOutcome {
    pub shape: String,
    pub success: bool,
    pub messages: Vec<MessageId>,
}

/// Greedy rollout of every catalog shape.
pub fn evaluate<T: Real>(
    net: &QNetwork<T>,
    lexicon: &Lexicon,
    catalog: &ShapeCatalog,
    env: &BuildEnv,
) -> Vec<EvalOutcome> {
    catalog
        .shapes()
        .iter()
        .map(|shape| {
            let (success, messages) = greedy_rollout(net, env, shape.goal, lexicon);
            EvalOutcome { shape: shape.name.clone(), success, messages }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub epochs_run: u64,
    pub max_epochs: u64,
    pub epochs_to_solve: Option<u64>,
    pub lexicon: Vec<String>,
    pub final_eval: Vec<EvalOutcome>,
}

impl RunSummary {
    /// Epochs to solve, counting a non-finishing run as `max_epochs`.
    pub fn epochs_or_max(&self) -> u64 {
        self.epochs_to_solve.unwrap_or(self.max_epochs)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("mode = {}\nseed = {}\nepochs_run = {}\n", self.mode, self.seed, self.epochs_run);
        match self.epochs_to_solve {
            Some(e) => out += &format!("epochs_to_solve = {e}\n"),
            None => out += &format!("epochs_to_solve = DNF (max_epochs {})\n", self.max_epochs),
        }
        out += "lexicon:\n";
        for line in &self.lexicon {
            out += &format!("  {line}\n");
        }
        out += "final evaluation:\n";
        for e in &self.final_eval {
            let verdict = if e.success { "pass" } else { "fail" };
            out += &format!("  {} {verdict} {}\n", e.shape, format_sequence(&e.messages));
        }
        out
    }
}

pub struct Experiment<T: Real> {
    pub config: ExperimentConfig,
    pub catalog: ShapeCatalog,
    pub env: BuildEnv,
    pub agent: DqnAgent<T>,
    pub lexicon: Lexicon,
    pub epsilon: EpsilonSchedule,
    pretrain_rng: ChaCha8Rng,
    rng: ChaCha8Rng,
    progress: Progress,
    log: Option<RunLog>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<T: Real> Experiment<T> {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let catalog = config.catalog.load()?;
        config.check_preload(&catalog)?;
        let net = QNetwork::init(config.seed, config.m_max);
        let optimizer = Optimizer::new(config.optimizer, T::lit(config.learning_rate), &net);
        let agent = DqnAgent::new(net, optimizer, config.agent_params());
        let lexicon = Lexicon::try_new(config.m_max).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(Experiment {
            env: BuildEnv::new(config.max_steps),
            epsilon: config.epsilon_schedule(),
            pretrain_rng: stream(config.seed, PRETRAIN_STREAM),
            rng: stream(config.seed, MAIN_STREAM),
            progress: Progress {
                stage: Stage::Pretrain,
                pretrain_epochs: 0,
                epochs: 0,
                streak: 0,
                epochs_to_solve: None,
                wake_start: 0,
            },
            log: None,
            catalog,
            agent,
            lexicon,
            config,
        })
    }

    /// Starts logging into `dir`; writes the effective config there.
    pub fn with_output(mut self, dir: &Path) -> Result<Self, HarnessError> {
        let log = RunLog::open(dir)?;
        let cfg = dir.join(CONFIG_FILE);
        std::fs::write(&cfg, self.config.to_text()).map_err(|e| HarnessError::io(&cfg, e))?;
        self.log = Some(log);
        Ok(self)
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.log.as_ref().map(RunLog::dir)
    }

    pub fn stage(&self) -> Stage {
        self.progress.stage
    }

    /// Main-phase epochs completed so far.
    pub fn epoch(&self) -> u64 {
        self.progress.epochs
    }

    pub fn epochs_to_solve(&self) -> Option<u64> {
        self.progress.epochs_to_solve
    }

    /// Copy of the run under another mode, without a log. Only allowed
    /// before the main phase starts; since pretraining does not depend on
    /// the mode, the fork continues exactly as a fresh run in `mode` would.
    pub fn fork(&self, mode: Mode) -> Result<Self, HarnessError> {
        if self.progress.stage != Stage::Pretrain || self.progress.pretrain_epochs < self.config.pretrain_epochs {
            return Err(HarnessError::Config("fork needs a run paused at the end of pretraining".into()));
        }
        let config = ExperimentConfig { mode, ..self.config.clone() };
        config.check_preload(&self.catalog)?;
        Ok(Experiment {
            config,
            catalog: self.catalog.clone(),
            env: self.env,
            agent: self.agent.clone(),
            lexicon: self.lexicon.clone(),
            epsilon: self.epsilon,
            pretrain_rng: self.pretrain_rng.clone(),
            rng: self.rng.clone(),
            progress: self.progress.clone(),
            log: None,
        })
    }

    fn log_metrics(&mut self, record: MetricsRecord) -> Result<(), HarnessError> {
        match &mut self.log {
            Some(log) => log.metrics(&record),
            None => Ok(()),
        }
    }

    fn log_event(&mut self, event: EventKind, detail: String) -> Result<(), HarnessError> {
        let record = EventRecord { epoch: self.progress.epochs, event, detail };
        match &mut self.log {
            Some(log) => log.event(&record),
            None => Ok(()),
        }
    }

    /// Runs pretraining epochs until `limit` (or the configured total) have
    /// been completed. Returns true when pretraining is finished.
    pub fn pretrain_until(&mut self, limit: Option<u64>) -> Result<bool, HarnessError> {
        let total = self.config.pretrain_epochs;
        let stop = limit.map_or(total, |l| l.min(total));
        let primitives = Lexicon::try_new(self.config.m_max).map_err(|e| HarnessError::Config(e.to_string()))?;
        while self.progress.stage == Stage::Pretrain && self.progress.pretrain_epochs < stop {
            let blocks = self.pretrain_rng.gen_range(self.config.pretrain_min_blocks..=self.config.pretrain_max_blocks);
            let goal = random_goal(&mut self.pretrain_rng, blocks);
            let summary = self.agent.run_episode(
                &self.env,
                goal,
                &primitives,
                self.epsilon.value,
                &mut self.pretrain_rng,
                EpisodeOrigin::Pretrain,
                true,
            )?;
            self.progress.pretrain_epochs += 1;
            let record = MetricsRecord {
                epoch: self.progress.pretrain_epochs,
                phase: Phase::Pretrain,
                goal: format!("random{blocks}"),
                success: summary.success,
                steps: summary.steps,
                ret: summary.ret.as_f64(),
                epsilon: self.epsilon.value,
                lexicon_size: primitives.len(),
                mean_loss: summary.mean_loss(),
            };
            self.epsilon.end_episode();
            self.log_metrics(record)?;
        }
        Ok(self.progress.pretrain_epochs >= total)
    }

    fn begin_main(&mut self) -> Result<(), HarnessError> {
        if self.config.mode == Mode::Best {
            for parts in self.config.preload_list(&self.catalog) {
                self.lexicon.push_abstraction(parts).map_err(|e| HarnessError::Config(format!("preload: {e}")))?;
            }
        }
        self.progress.wake_start = self.agent.buffer.next_episode_id();
        self.progress.stage = Stage::Main;
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        Ok(())
    }

    /// One wake epoch plus whatever sleep and evaluation falls due after it.
    pub fn main_epoch(&mut self) -> Result<(), HarnessError> {
        if self.progress.stage == Stage::Pretrain {
            self.pretrain_until(None)?;
            self.begin_main()?;
        }
        if self.progress.stage == Stage::Done {
            return Ok(());
        }
        let pick = self.rng.gen_range(0..self.catalog.len());
        let shape = &self.catalog.shapes()[pick];
        let (goal, name) = (shape.goal, shape.name.clone());
        let summary = self.agent.run_episode(
            &self.env,
            goal,
            &self.lexicon,
            self.epsilon.value,
            &mut self.rng,
            EpisodeOrigin::Wake,
            true,
        )?;
        self.progress.epochs += 1;
        let epoch = self.progress.epochs;
        let record = MetricsRecord {
            epoch,
            phase: Phase::Wake,
            goal: name,
            success: summary.success,
            steps: summary.steps,
            ret: summary.ret.as_f64(),
            epsilon: self.epsilon.value,
            lexicon_size: self.lexicon.len(),
            mean_loss: summary.mean_loss(),
        };
        self.epsilon.end_episode();
        self.log_metrics(record)?;
        if summary.success {
            if let Some(log) = &mut self.log {
                log.episode(summary.episode_id, &summary.messages)?;
            }
        }

        if self.config.mode == Mode::Full && epoch.is_multiple_of(self.config.wake_phase_len) {
            self.sleep()?;
        }
        if epoch.is_multiple_of(self.config.eval_interval) {
            self.evaluation_step()?;
        }
        if self.progress.stage != Stage::Done && epoch >= self.config.max_epochs {
            self.progress.stage = Stage::Done;
        }
        Ok(())
    }

    fn evaluation_step(&mut self) -> Result<(), HarnessError> {
        let outcomes = evaluate(&self.agent.net, &self.lexicon, &self.catalog, &self.env);
        if outcomes.iter().all(|o| o.success) {
            self.progress.streak += 1;
            let streak = self.progress.streak;
            self.log_event(EventKind::EvalPass, format!("streak={streak}"))?;
            if streak >= self.config.eval_consecutive {
                let epoch = self.progress.epochs;
                self.progress.epochs_to_solve = Some(epoch);
                self.progress.stage = Stage::Done;
                self.log_event(EventKind::Solve, format!("epochs_to_solve={epoch}"))?;
            }
        } else {
            self.progress.streak = 0;
        }
        Ok(())
    }

    /// Mines the recent successful wake episodes, promotes the best new
    /// abstraction if one clears the threshold, and dreams with it.
    pub fn sleep(&mut self) -> Result<Option<MessageId>, HarnessError> {
        let seqs = collect_sequences(&self.agent.buffer, self.config.window);
        let ranking = mine(&seqs, self.config.min_len, self.config.max_len);
        let promoted = promote_best(&mut self.lexicon, &ranking, self.config.score_threshold);
        let mut result = None;
        if let Ok((id, cand)) = promoted {
            self.epsilon.on_new_message();
            self.log_event(
                EventKind::Promotion,
                format!("{id}={};score={}", format_sequence(&cand.sequence), cand.score),
            )?;
            let dreams = rewrite_buffer(&self.agent.buffer, self.progress.wake_start, id, &self.lexicon, &self.env)?;
            let transitions: usize = dreams.iter().map(|d| d.transitions.len()).sum();
            self.log_event(EventKind::DreamStart, format!("{id};episodes={};transitions={transitions}", dreams.len()))?;
            let iterations = if transitions == 0 { 0 } else { self.config.dream_iterations };
            let losses = dream_train(&mut self.agent, dreams, &self.lexicon, iterations, &mut self.rng)?;
            let last = losses.last().map_or(String::from("none"), |l| format!("{}", l.as_f64()));
            self.log_event(EventKind::DreamEnd, format!("{id};iterations={};final_loss={last}", losses.len()))?;
            result = Some(id);
        }
        self.progress.wake_start = self.agent.buffer.next_episode_id();
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        Ok(result)
    }

    /// Runs until solved or `max_epochs`, then writes the final checkpoint
    /// and summary when logging.
    pub fn run(&mut self) -> Result<RunSummary, HarnessError> {
        while self.progress.stage != Stage::Done {
            self.main_epoch()?;
        }
        self.finish()
    }

    /// Runs main epochs until `epoch` have completed (or the run ends).
    pub fn run_until(&mut self, epoch: u64) -> Result<(), HarnessError> {
        while self.progress.stage != Stage::Done
            && (self.progress.stage == Stage::Pretrain || self.progress.epochs < epoch)
        {
            self.main_epoch()?;
        }
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            mode: self.config.mode,
            seed: self.config.seed,
            epochs_run: self.progress.epochs,
            max_epochs: self.config.max_epochs,
            epochs_to_solve: self.progress.epochs_to_solve,
            lexicon: self.lexicon.describe(),
            final_eval: evaluate(&self.agent.net, &self.lexicon, &self.catalog, &self.env),
        }
    }

    fn finish(&mut self) -> Result<RunSummary, HarnessError> {
        let summary = self.summary();
        if let Some(dir) = self.output_dir().map(Path::to_path_buf) {
            self.save(&dir.join(CHECKPOINT_FILE))?;
            let path = dir.join(SUMMARY_FILE);
            std::fs::write(&path, summary.to_text()).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(summary)
    }

    /// Full checkpoint, including everything needed to resume exactly.
    pub fn checkpoint(&self) -> Result<Checkpoint<T>, HarnessError> {
        let state = TrainingState {
            config: self.config.to_text(),
            target: Checkpoint::capture(&self.agent.target, &Optimizer::sgd(T::zero()), &self.lexicon),
            buffer: self.agent.buffer.clone(),
            epsilon: self.epsilon,
            pretrain_rng: self.pretrain_rng.clone(),
            rng: self.rng.clone(),
            env_steps: self.agent.env_steps,
            train_steps: self.agent.train_steps,
            progress: self.progress.clone(),
        };
        let mut ck = Checkpoint::capture(&self.agent.net, &self.agent.optimizer, &self.lexicon);
        ck.training_state = Some(serde_json::to_value(&state).map_err(|e| HarnessError::Parse(e.to_string()))?);
        Ok(ck)
    }

    pub fn save(&mut self, path: &Path) -> Result<(), HarnessError> {
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        self.checkpoint()?.write(path)?;
        Ok(())
    }

    /// Rebuilds a run from a checkpoint written by [`Experiment::save`].
    pub fn resume(path: &Path) -> Result<Self, HarnessError> {
        let ck = Checkpoint::<T>::read(path)?;
        let raw = ck
            .training_state
            .clone()
            .ok_or_else(|| HarnessError::Parse(format!("{}: checkpoint has no training state", path.display())))?;
        let state: TrainingState<T> =
            serde_json::from_value(raw).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
        let config = ExperimentConfig::parse(&state.config)?;
        let dims = architecture(config.m_max);
        let (net, optimizer, lexicon) = ck.restore(Some(&dims))?;
        let (target, _, _) = state.target.restore(Some(&dims))?;
        let mut exp = Experiment::new(config)?;
        exp.agent.net = net;
        exp.agent.target = target;
        exp.agent.optimizer = optimizer;
        exp.agent.buffer = state.buffer;
        exp.agent.env_steps = state.env_steps;
        exp.agent.train_steps = state.train_steps;
        exp.lexicon = lexicon;
        exp.epsilon = state.epsilon;
        exp.pretrain_rng = state.pretrain_rng;
        exp.rng = state.rng;
        exp.progress = state.progress;
        Ok(exp)
    }
}

/// Trains `replicas` runs with seeds `seed, seed+1, ...` on separate
/// threads. With more than one replica each run logs into `out/seed_<s>`.
pub fn train_replicas<T: Real>(
    config: &ExperimentConfig,
    out: Option<&Path>,
    replicas: u64,
) -> Result<Vec<RunSummary>, HarnessError> {
    let run_one = |k: u64| -> Result<RunSummary, HarnessError> {
        let cfg = ExperimentConfig { seed: config.seed + k, ..config.clone() };
        let dir: Option<PathBuf> =
            out.map(|o| if replicas > 1 { o.join(format!("seed_{}", cfg.seed)) } else { o.to_path_buf() });
        let mut exp = Experiment::<T>::new(cfg)?;
        if let Some(dir) = dir {
            exp = exp.with_output(&dir)?;
        }
        exp.run()
    };
    if replicas <= 1 {
        return Ok(vec![run_one(0)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..replicas).map(|k| scope.spawn(move || run_one(k))).collect();
        handles.into_iter().map(|h| h.join().expect("replica thread panicked")).collect()
    })
}
