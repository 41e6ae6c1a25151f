//! Append-only JSONL session log.
//!
//! One record per line: `{"seq":N,"ts":MILLIS,"event":"...","payload":{...}}`.
//! Sequence numbers start at 0 and increase by one. Records stay in memory
//! even when the optional file sink fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::comms::{CommOutcome, CommunicationKind};
use crate::session::{Phase, Rating};
use crate::story::{SessionId, StoryField};

/// Source of record timestamps, in milliseconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now_millis(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock that starts at a fixed value and ticks by one per read.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn starting_at(millis: u64) -> Self {
        Self(AtomicU64::new(millis))
    }
}

impl Clock for ManualClock {
    fn now_millis(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointsCause {
    CharsAdded,
    FieldSwitch,
}

/// Everything that can happen in a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: SessionId,
        seed: u64,
        policy: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        ablation_mode: bool,
        max_turns: u32,
        k_arms: usize,
    },
    Edit {
        field: StoryField,
        text: String,
        chars_added: usize,
        revision: u64,
    },
    Points {
        cause: PointsCause,
        delta: u32,
        points: u32,
    },
    FieldSwitch {
        #[serde(default)]
        from: Option<StoryField>,
        to: StoryField,
        credited: bool,
    },
    FieldLeave {
        #[serde(default)]
        field: Option<StoryField>,
        points: u32,
        triggered: bool,
    },
    Skip {
        points: u32,
    },
    Transition {
        from: Phase,
        to: Phase,
        turn: u32,
    },
    ArmPulled {
        arm: usize,
        kind: CommunicationKind,
        turn: u32,
    },
    AgentOutcome {
        outcome: CommOutcome,
        revision: u64,
    },
    TurnFailed {
        kind: CommunicationKind,
        attempts: u32,
        error: String,
    },
    Feedback {
        #[serde(default)]
        action: Option<Rating>,
        #[serde(default)]
        content: Option<Rating>,
    },
    Reward {
        arm: usize,
        reward: f64,
        action: Rating,
        content: Rating,
        alpha: f64,
        beta: f64,
    },
    Reverted {
        fields: BTreeMap<StoryField, String>,
        revision: u64,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::SessionCreated { .. } => "session_created",
            Event::Edit { .. } => "edit",
            Event::Points { .. } => "points",
            Event::FieldSwitch { .. } => "field_switch",
            Event::FieldLeave { .. } => "field_leave",
            Event::Skip { .. } => "skip",
            Event::Transition { .. } => "transition",
            Event::ArmPulled { .. } => "arm_pulled",
            Event::AgentOutcome { .. } => "agent_outcome",
            Event::TurnFailed { .. } => "turn_failed",
            Event::Feedback { .. } => "feedback",
            Event::Reward { .. } => "reward",
            Event::Reverted { .. } => "reverted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub ts: u64,
    #[serde(flatten)]
    pub event: Event,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("log records always serialize");
        line.push('\n');
        line
    }
}

/// In-memory log with an optional write-through sink.
pub struct SessionLog {
    records: Vec<LogRecord>,
    clock: Arc<dyn Clock>,
    sink: Option<Box<dyn Write + Send>>,
    write_error: Option<String>,
}

impl std::fmt::Debug for SessionLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionLog")
            .field("records", &self.records.len())
            .field("has_sink", &self.sink.is_some())
            .field("write_error", &self.write_error)
            .finish()
    }
}

impl SessionLog {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            records: Vec::new(),
            clock,
            sink: None,
            write_error: None,
        }
    }

    /// Attaches a sink and writes any records already buffered to it.
    pub fn set_sink(&mut self, sink: Box<dyn Write + Send>) {
        self.sink = Some(sink);
        let pending: Vec<String> = self.records.iter().map(LogRecord::to_line).collect();
        for line in pending {
            self.write_line(&line);
        }
    }

    fn write_line(&mut self, line: &str) {
        let Some(sink) = self.sink.as_mut() else {
            return;
        };
        if let Err(e) = sink.write_all(line.as_bytes()).and_then(|_| sink.flush()) {
            tracing::error!(error = %e, "session log write failed");
            self.write_error = Some(e.to_string());
        }
    }

    pub fn append(&mut self, event: Event) -> &LogRecord {
        let record = LogRecord {
            seq: self.records.len() as u64,
            ts: self.clock.now_millis(),
            event,
        };
        let line = record.to_line();
        self.write_line(&line);
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    /// Most recent sink failure, if any.
    pub fn write_error(&self) -> Option<&str> {
        self.write_error.as_deref()
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(LogRecord::to_line).collect()
    }
}
