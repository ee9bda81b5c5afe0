//! Text summaries of finished runs, rebuilt from the CSV logs alone.

use std::path::Path;

use crate::lexicon::{Lexicon, MessageId};

use super::config::{ExperimentConfig, Mode};
use super::experiment::CONFIG_FILE;
use super::metrics::{
    read_events, read_metrics, EventKind, EventRecord, MetricsRecord, Phase, EVENTS_FILE, METRICS_FILE,
};
use super::HarnessError;

pub const REPORT_BUCKET: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub epochs_run: u64,
    pub epochs_to_solve: Option<u64>,
    pub promotions: Vec<EventRecord>,
    /// Abstractions rebuilt from the preload list and promotion events.
    pub lexicon: Vec<String>,
    /// `(first_epoch, last_epoch, success_rate)` per bucket of wake epochs.
    pub success_by_bucket: Vec<(u64, u64, f64)>,
}

/// Epoch of the first run of `consecutive` passing evaluations spaced
/// exactly `interval` epochs apart.
pub fn solve_epoch_from_events(events: &[EventRecord], interval: u64, consecutive: u32) -> Option<u64> {
    let mut streak = 0u32;
    let mut last: Option<u64> = None;
    for ev in events.iter().filter(|e| e.event == EventKind::EvalPass) {
        streak = match last {
            Some(prev) if ev.epoch == prev + interval => streak + 1,
            _ => 1,
        };
        last = Some(ev.epoch);
        if streak >= consecutive {
            return Some(ev.epoch);
        }
    }
    None
}

/// The definition in a promotion detail such as `A12=[V1,V2];score=6`.
pub fn promoted_sequence(detail: &str) -> Option<Vec<MessageId>> {
    let (_, rest) = detail.split_once('=')?;
    let body = rest.strip_prefix('[')?.split_once(']')?.0;
    body.split(',').map(|m| m.trim().parse().ok()).collect()
}

pub fn success_buckets(metrics: &[MetricsRecord], bucket: u64) -> Vec<(u64, u64, f64)> {
    let mut out: Vec<(u64, u64, u64, u64)> = Vec::new();
    for m in metrics.iter().filter(|m| m.phase == Phase::Wake) {
        let b = (m.epoch.max(1) - 1) / bucket;
        if out.last().map(|x| x.0) != Some(b) {
            out.push((b, m.epoch, 0, 0));
        }
        let last = out.last_mut().expect("bucket pushed above");
        last.1 = m.epoch;
        last.2 += u64::from(m.success);
        last.3 += 1;
    }
    out.into_iter().map(|(b, end, ok, n)| (b * bucket + 1, end, ok as f64 / n as f64)).collect()
}

pub fn load_report(dir: &Path) -> Result<RunReport, HarnessError> {
    let paths = [dir.join(CONFIG_FILE), dir.join(METRICS_FILE), dir.join(EVENTS_FILE)];
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        return Err(HarnessError::MissingRun(missing.clone()));
    }
    let config = ExperimentConfig::load(&paths[0])?;
    let metrics = read_metrics(&paths[1])?;
    let events = read_events(&paths[2])?;
    let mut lexicon = Lexicon::try_new(config.m_max).map_err(|e| HarnessError::Config(e.to_string()))?;
    if config.mode == Mode::Best {
        for parts in config.preload_list(&config.catalog.load()?) {
            lexicon.push_abstraction(parts).map_err(|e| HarnessError::Parse(e.to_string()))?;
        }
    }
    for ev in events.iter().filter(|e| e.event == EventKind::Promotion) {
        let parts = promoted_sequence(&ev.detail)
            .ok_or_else(|| HarnessError::Parse(format!("bad promotion detail {:?}", ev.detail)))?;
        lexicon.push_abstraction(parts).map_err(|e| HarnessError::Parse(e.to_string()))?;
    }
    let epochs_run = metrics.iter().filter(|m| m.phase == Phase::Wake).map(|m| m.epoch).max().unwrap_or(0);
    Ok(RunReport {
        epochs_to_solve: solve_epoch_from_events(&events, config.eval_interval, config.eval_consecutive),
        promotions: events.iter().filter(|e| e.event == EventKind::Promotion).cloned().collect(),
        success_by_bucket: success_buckets(&metrics, REPORT_BUCKET),
        lexicon: lexicon.describe(),
        epochs_run,
        config,
    })
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("mode {} seed {}\n", self.config.mode, self.config.seed);
        match self.epochs_to_solve {
            Some(e) => out += &format!("solved after {e} epochs\n"),
            None => out += &format!("DNF at {}\n", self.config.max_epochs),
        }
        out += &format!("epochs run: {}\n", self.epochs_run);
        if !self.promotions.is_empty() {
            out += "promotions:\n";
            for p in &self.promotions {
                out += &format!("  epoch {:>7}  {}\n", p.epoch, p.detail);
            }
        }
        out += "final lexicon:\n  V1-V6, H1-H6\n";
        for line in &self.lexicon {
            out += &format!("  {line}\n");
        }
        out += "training success rate:\n";
        for (start, end, rate) in &self.success_by_bucket {
            let bar = "#".repeat((rate * 40.0).round() as usize);
            out += &format!("  {start:>7}-{end:<7} {:>5.1}% {bar}\n", rate * 100.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pass(epoch: u64) -> EventRecord {
        EventRecord { epoch, event: EventKind::EvalPass, detail: String::new() }
    }

    #[test]
    fn streak_requires_adjacent_evaluations() {
        let evs = vec![pass(500), pass(1000), pass(2000), pass(2500), pass(3000)];
        assert_eq!(solve_epoch_from_events(&evs, 500, 3), Some(3000));
        assert_eq!(solve_epoch_from_events(&evs, 500, 2), Some(1000));
        assert_eq!(solve_epoch_from_events(&evs[..4], 500, 3), None);
        assert_eq!(solve_epoch_from_events(&[], 500, 1), None);
    }

    #[test]
    fn promotion_detail_parses() {
        assert_eq!(promoted_sequence("A12=[V1,V2];score=6"), Some(vec![MessageId(0), MessageId(1)]));
        assert_eq!(promoted_sequence("A13=[A12,H1];score=4"), Some(vec![MessageId(12), MessageId(6)]));
        assert_eq!(promoted_sequence("A12;episodes=3"), None);
    }

    #[test]
    fn buckets_split_wake_epochs() {
        let row = |epoch, success, phase| MetricsRecord {
            epoch,
            phase,
            goal: "u_1".into(),
            success,
            steps: 1,
            ret: 0.0,
            epsilon: 1.0,
            lexicon_size: 12,
            mean_loss: None,
        };
        let metrics = vec![
            row(1, true, Phase::Pretrain),
            row(1, true, Phase::Wake),
            row(2, false, Phase::Wake),
            row(3, true, Phase::Wake),
            row(4, true, Phase::Wake),
        ];
        assert_eq!(success_buckets(&metrics, 2), vec![(1, 2, 0.5), (3, 4, 1.0)]);
        assert_eq!(success_buckets(&metrics[..4], 2), vec![(1, 2, 0.5), (3, 3, 1.0)]);
    }

    #[test]
    fn missing_directory_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_report(&dir.path().join("none")), Err(HarnessError::MissingRun(_))));
    }
}
