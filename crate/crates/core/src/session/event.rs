use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;
use crate::money::Cents;
use crate::payment::Payout;
use crate::scoring::GoldFeedback;
use crate::workflow::Contribution;

use super::EngineError;

/// One entry of the append-only session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// Position in the whole log, from 0.
    pub seq: u64,
    /// Position among this worker's events, from 0.
    pub worker_seq: u64,
    pub worker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_id: Option<String>,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    HitAssigned {
        item: usize,
        gold: bool,
        advertised: Cents,
    },
    Submitted {
        boxes: Vec<BoundingBox>,
        elapsed: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        contribution: Option<Contribution>,
        /// Percent; absent for HITs that carry no box work.
        #[serde(default)]
        quality: Option<f64>,
        payout: Payout,
    },
    GoldFeedback {
        feedback: GoldFeedback,
    },
    Warning {
        running_avg: f64,
    },
    Bonus {
        amount: Cents,
    },
    Block {
        reason: String,
    },
    Abandon,
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::HitAssigned { .. } => "hit_assigned",
            EventPayload::Submitted { .. } => "submitted",
            EventPayload::GoldFeedback { .. } => "gold_feedback",
            EventPayload::Warning { .. } => "warning",
            EventPayload::Bonus { .. } => "bonus",
            EventPayload::Block { .. } => "block",
            EventPayload::Abandon => "abandon",
        }
    }
}

pub trait EventSink: Send {
    fn append(&mut self, event: &SessionEvent) -> io::Result<()>;
}

/// Discards events.
#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _: &SessionEvent) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps events in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    events: Arc<Mutex<Vec<SessionEvent>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<SessionEvent> {
        self.events.lock().expect("sink lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("sink lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl EventSink for MemorySink {
    fn append(&mut self, event: &SessionEvent) -> io::Result<()> {
        self.events.lock().expect("sink lock poisoned").push(event.clone());
        Ok(())
    }
}

/// Line-delimited JSON file, flushed after every event.
#[derive(Debug)]
pub struct NdjsonSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl NdjsonSink {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| EngineError::Io { path: path.clone(), source })?;
        Ok(Self { path, out: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for NdjsonSink {
    fn append(&mut self, event: &SessionEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

pub fn parse_log(reader: impl BufRead) -> Result<Vec<SessionEvent>, EngineError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EngineError::Log { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| EngineError::Log { line: i + 1, message: e.to_string() })?;
        events.push(event);
    }
    Ok(events)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<SessionEvent>, EngineError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EngineError::Io { path: path.to_path_buf(), source })?;
    parse_log(BufReader::new(file))
}
