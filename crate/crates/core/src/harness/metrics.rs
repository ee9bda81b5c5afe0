//! Per-epoch metrics and event logs, written as CSV.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const METRICS_HEADER: &str = "epoch,phase,goal,success,steps,return,epsilon,lexicon_size,mean_loss";
pub const EVENTS_HEADER: &str = "epoch,event,detail";
pub const EPISODES_HEADER: &str = "episode_id,step,message_id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Wake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub phase: Phase,
    pub goal: String,
    pub success: bool,
    pub steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub epsilon: f64,
    pub lexicon_size: usize,
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Promotion,
    DreamStart,
    DreamEnd,
    EvalPass,
    Solve,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Promotion => "promotion",
            EventKind::DreamStart => "dream_start",
            EventKind::DreamEnd => "dream_end",
            EventKind::EvalPass => "eval_pass",
            EventKind::Solve => "solve",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub epoch: u64,
    pub event: EventKind,
    pub detail: String,
}

impl EventRecord {
    /// Parses `key=value` fields of a `;`-separated detail string.
    pub fn field<V: FromStr>(&self, key: &str) -> Option<V> {
        self.detail
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .and_then(|(_, v)| v.parse().ok())
    }
}

fn open_csv(path: &Path, header: &str) -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| HarnessError::io(path, e))?;
    if fresh {
        writeln!(file, "{header}").map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file)))
}

/// Appending writers for a run directory. Headers are written only when a
/// file is created, so a resumed run continues the same files.
pub struct RunLog {
    dir: PathBuf,
    metrics: csv::Writer<BufWriter<File>>,
    events: csv::Writer<BufWriter<File>>,
    episodes: csv::Writer<BufWriter<File>>,
}

impl RunLog {
    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        Ok(RunLog {
            dir: dir.to_path_buf(),
            metrics: open_csv(&dir.join(METRICS_FILE), METRICS_HEADER)?,
            events: open_csv(&dir.join(EVENTS_FILE), EVENTS_HEADER)?,
            episodes: open_csv(&dir.join(EPISODES_FILE), EPISODES_HEADER)?,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn metrics(&mut self, record: &MetricsRecord) -> Result<(), HarnessError> {
        let path = self.dir.join(METRICS_FILE);
        self.metrics.serialize(record).map_err(|e| HarnessError::csv(&path, e))
    }

    pub fn event(&mut self, record: &EventRecord) -> Result<(), HarnessError> {
        let path = self.dir.join(EVENTS_FILE);
        self.events.serialize(record).map_err(|e| HarnessError::csv(&path, e))
    }

    pub fn episode(&mut self, episode_id: u64, messages: &[crate::lexicon::MessageId]) -> Result<(), HarnessError> {
        let path = self.dir.join(EPISODES_FILE);
        for (step, m) in messages.iter().enumerate() {
            self.episodes.serialize((episode_id, step, m.0)).map_err(|e| HarnessError::csv(&path, e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), HarnessError> {
        let dir = self.dir.clone();
        self.metrics.flush().map_err(|e| HarnessError::io(&dir.join(METRICS_FILE), e))?;
        self.events.flush().map_err(|e| HarnessError::io(&dir.join(EVENTS_FILE), e))?;
        self.episodes.flush().map_err(|e| HarnessError::io(&dir.join(EPISODES_FILE), e))
    }
}

impl Drop for RunLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path, header: &str) -> Result<Vec<R>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let found = reader.headers().map_err(|e| HarnessError::csv(path, e))?;
    if found.iter().collect::<Vec<_>>().join(",") != header {
        return Err(HarnessError::Parse(format!("{}: unexpected header", path.display())));
    }
    reader.deserialize().collect::<Result<Vec<R>, _>>().map_err(|e| HarnessError::csv(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    read_csv(path, METRICS_HEADER)
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>, HarnessError> {
    read_csv(path, EVENTS_HEADER)
}

/// Rows of an `episode_id,step,message_id` log. Message ids may be numeric
/// or names such as `V3` and `A12`.
pub fn read_episode_log(path: &Path) -> Result<Vec<(u64, usize, crate::lexicon::MessageId)>, HarnessError> {
    let rows: Vec<(u64, usize, String)> = read_csv(path, EPISODES_HEADER)?;
    rows.into_iter()
        .map(|(ep, step, m)| {
            let id = match m.trim().parse::<usize>() {
                Ok(n) => crate::lexicon::MessageId(n),
                Err(_) => m
                    .trim()
                    .parse()
                    .map_err(|_| HarnessError::Parse(format!("{}: bad message id {m:?}", path.display())))?,
            };
            Ok((ep, step, id))
        })
        .collect()
}
