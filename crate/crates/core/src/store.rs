//! Event-sourced persistence: an append-only JSONL event log plus an
//! occasional snapshot of the folded state.
//!
//! The log is the source of truth. Restoring loads the snapshot when it is
//! consistent with the log and replays the tail; otherwise it replays the
//! whole log. A corrupt or partial final line ends the log and is cut off.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineState, IngestError, IngestEvent, Notice};
use crate::jsonl;
use crate::scalar::Scalar;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot encoding: {0}")]
    Snapshot(#[from] serde_json::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Snapshot<S: Scalar> {
    /// Number of log lines folded into `state`.
    pub log_position: u64,
    pub state: EngineState<S>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreReport {
    /// Log position of the snapshot used, if any.
    pub snapshot_position: Option<u64>,
    pub replayed: usize,
    /// Logged events the engine refused; replay skips them deterministically.
    pub rejected: usize,
    /// Corrupt or partial lines dropped from the end of the log.
    pub skipped_lines: usize,
}

/// Folds `events` into `engine`, skipping (and counting) rejected ones.
pub fn replay<'a, S: Scalar>(
    engine: &mut Engine<S>,
    events: impl IntoIterator<Item = &'a IngestEvent>,
) -> (usize, usize) {
    let (mut applied, mut rejected) = (0, 0);
    for ev in events {
        match engine.ingest(ev) {
            Ok(_) => applied += 1,
            Err(e) => {
                tracing::warn!(ticket = %ev.ticket_id, error = %e, "logged event rejected on replay");
                rejected += 1;
            }
        }
    }
    (applied, rejected)
}

pub struct DurableEngine<S: Scalar> {
    engine: Engine<S>,
    dir: PathBuf,
    log: File,
    log_position: u64,
    snapshot_every: Option<u64>,
    since_snapshot: u64,
}

impl<S: Scalar> DurableEngine<S> {
    /// Restores `engine` (expected empty) from `dir`, creating the directory
    /// if needed. With `snapshot_every = Some(n)` a snapshot is written after
    /// every `n` accepted events.
    pub fn open(
        dir: impl AsRef<Path>,
        mut engine: Engine<S>,
        snapshot_every: Option<u64>,
    ) -> Result<(Self, RestoreReport), StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let log_path = dir.join(LOG_FILE);
        let prefix = jsonl::read_prefix::<IngestEvent>(&log_path)?;
        let mut report = RestoreReport {
            skipped_lines: prefix.skipped_lines,
            ..RestoreReport::default()
        };

        let mut start = 0usize;
        match read_snapshot::<S>(&dir) {
            Ok(Some(snap)) if snap.log_position as usize <= prefix.records.len() => {
                start = snap.log_position as usize;
                report.snapshot_position = Some(snap.log_position);
                engine.restore(snap.state);
            }
            Ok(Some(snap)) => tracing::warn!(
                position = snap.log_position,
                log = prefix.records.len(),
                "snapshot is ahead of the log, replaying from the start"
            ),
            Ok(None) => {}
            Err(e) => tracing::warn!(error = %e, "unreadable snapshot, replaying from the start"),
        }
        let (replayed, rejected) = replay(&mut engine, &prefix.records[start..]);
        report.replayed = replayed;
        report.rejected = rejected;
        if report.skipped_lines > 0 {
            tracing::warn!(skipped = report.skipped_lines, "dropped corrupt log tail");
        }

        let log = jsonl::open_append_at(&log_path, prefix.valid_bytes)?;
        Ok((
            Self {
                engine,
                dir,
                log,
                log_position: prefix.records.len() as u64,
                snapshot_every,
                since_snapshot: 0,
            },
            report,
        ))
    }

    pub fn engine(&self) -> &Engine<S> {
        &self.engine
    }

    /// Mutable access for operations that are not logged, such as feedback.
    pub fn engine_mut(&mut self) -> &mut Engine<S> {
        &mut self.engine
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_position(&self) -> u64 {
        self.log_position
    }

    /// Validates, appends to the log, then applies. Rejected events are not logged.
    pub fn ingest(&mut self, event: &IngestEvent) -> Result<Vec<Notice>, StoreError> {
        self.engine.validate(event)?;
        jsonl::append(&mut self.log, event)?;
        self.log_position += 1;
        let notices = self.engine.ingest(event)?;
        self.since_snapshot += 1;
        if self.snapshot_every.is_some_and(|n| n > 0 && self.since_snapshot >= n) {
            self.snapshot()?;
        }
        Ok(notices)
    }

    /// Atomically replaces the snapshot with the current state.
    pub fn snapshot(&mut self) -> Result<(), StoreError> {
        self.log.sync_data()?;
        let snap = Snapshot {
            log_position: self.log_position,
            state: self.engine.state().clone(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&snap)?)?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        self.since_snapshot = 0;
        Ok(())
    }
}

pub fn read_snapshot<S: Scalar>(dir: &Path) -> Result<Option<Snapshot<S>>, StoreError> {
    match fs::read(dir.join(SNAPSHOT_FILE)) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedBagOfWords;
    use crate::engine::PipelineSettings;
    use crate::mock::MockProvider;
    use crate::ticket::{Message, TicketId};
    use std::io::Write;
    use std::sync::Arc;

    fn engine() -> Engine<f64> {
        Engine::new(
            PipelineSettings::default(),
            Arc::new(MockProvider::default()),
            Arc::new(HashedBagOfWords::default()),
        )
        .unwrap()
    }

    fn events() -> Vec<IngestEvent> {
        let mut out = Vec::new();
        for (i, t) in ["a", "b", "c"].iter().enumerate() {
            let id = TicketId::new(*t).unwrap();
            let ts = i as i64 * 10;
            out.push(IngestEvent::created(id.clone(), "storage", ts));
            out.push(IngestEvent::message(
                id.clone(),
                Message::customer("object storage outage in east", ts + 1),
            ));
        }
        out.push(IngestEvent::closed(TicketId::new("a").unwrap(), 40));
        out
    }

    fn fold(evs: &[IngestEvent]) -> String {
        let mut e = engine();
        replay(&mut e, evs);
        e.state().to_json()
    }

    #[test]
    fn snapshot_with_empty_tail_restores_identically() {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let (mut d, _) = DurableEngine::open(dir.path(), engine(), None).unwrap();
            for ev in events() {
                d.ingest(&ev).unwrap();
            }
            d.snapshot().unwrap();
            d.engine().state().to_json()
        };
        let (d, report) = DurableEngine::open(dir.path(), engine(), None).unwrap();
        assert_eq!(report.snapshot_position, Some(7));
        assert_eq!(report.replayed, 0);
        assert_eq!(d.engine().state().to_json(), before);
    }

    #[test]
    fn snapshot_plus_tail_equals_full_fold() {
        let dir = tempfile::tempdir().unwrap();
        let evs = events();
        {
            let (mut d, _) = DurableEngine::open(dir.path(), engine(), Some(3)).unwrap();
            for ev in &evs {
                d.ingest(ev).unwrap();
            }
        }
        let (d, report) = DurableEngine::open(dir.path(), engine(), None).unwrap();
        assert_eq!(report.snapshot_position, Some(6));
        assert_eq!(report.replayed, 1);
        assert_eq!(d.engine().state().to_json(), fold(&evs));
    }

    #[test]
    fn truncated_final_line_loses_only_that_event() {
        let dir = tempfile::tempdir().unwrap();
        let evs = events();
        {
            let (mut d, _) = DurableEngine::open(dir.path(), engine(), None).unwrap();
            for ev in &evs {
                d.ingest(ev).unwrap();
            }
        }
        let path = dir.path().join(LOG_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let cut = text.trim_end().rfind('\n').unwrap() + 1;
        fs::write(&path, &text[..cut + 20]).unwrap();

        let (mut d, report) = DurableEngine::open(dir.path(), engine(), None).unwrap();
        assert_eq!(report.skipped_lines, 1);
        assert_eq!(d.engine().state().to_json(), fold(&evs[..evs.len() - 1]));
        // appending after the cut keeps the log parseable
        d.ingest(evs.last().unwrap()).unwrap();
        drop(d);
        let (d, report) = DurableEngine::open(dir.path(), engine(), None).unwrap();
        assert_eq!(report.skipped_lines, 0);
        assert_eq!(d.engine().state().to_json(), fold(&evs));
    }

    #[test]
    fn rejected_events_are_not_logged() {
        let dir = tempfile::tempdir().unwrap();
        let (mut d, _) = DurableEngine::open(dir.path(), engine(), None).unwrap();
        let ev = IngestEvent::closed(TicketId::new("ghost").unwrap(), 0);
        assert!(matches!(
            d.ingest(&ev),
            Err(StoreError::Ingest(IngestError::UnknownTicket(_)))
        ));
        assert_eq!(d.log_position(), 0);
        assert_eq!(fs::read_to_string(dir.path().join(LOG_FILE)).unwrap(), "");
    }

    #[test]
    fn hand_written_log_with_bad_event_replays_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = File::create(dir.path().join(LOG_FILE)).unwrap();
        let evs = events();
        writeln!(f, "{}", jsonl::to_line(&evs[0]).unwrap()).unwrap();
        writeln!(f, "{}", jsonl::to_line(&evs[0]).unwrap()).unwrap();
        drop(f);
        let (d, report) = DurableEngine::open(dir.path(), engine(), None).unwrap();
        assert_eq!((report.replayed, report.rejected), (1, 1));
        assert_eq!(d.log_position(), 2);
    }
}
