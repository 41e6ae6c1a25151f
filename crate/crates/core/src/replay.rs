//! Rebuilds session state from a JSONL log without running the engine.
//!
//! The reducer applies recorded facts (edits, agent outcomes, rewards,
//! reverts) to a fresh document and bandit, and checks each record against
//! the state it has rebuilt so far: sequence numbers, legal phase
//! transitions, point totals, document revisions and posterior values.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::bandit::{BanditState, Policy};
use crate::comms::CommOutcome;
use crate::log::{Event, LogRecord, PointsCause};
use crate::session::{
    Phase, Rating, SessionView, ViewParts, FIELD_SWITCH_POINTS, INITIATIVE_THRESHOLD, POINTS_PER_CHAR,
};
use crate::story::{SessionId, StoryDocument, StoryField};

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("line {line}: not a log record: {message}")]
    Parse { line: usize, message: String },
    #[error("seq {seq}: {message}")]
    Corrupt { seq: u64, message: String },
    #[error("log is empty")]
    Empty,
}

impl ReplayError {
    /// Sequence number of the first bad record, when known.
    pub fn seq(&self) -> Option<u64> {
        match self {
            ReplayError::Corrupt { seq, .. } => Some(*seq),
            _ => None,
        }
    }
}

/// Reward credited on one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnReward {
    pub turn: u32,
    pub arm: usize,
    pub reward: f64,
    pub action: Rating,
    pub content: Rating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedSession {
    pub session_id: SessionId,
    pub seed: u64,
    pub ablation_mode: bool,
    pub phase: Phase,
    pub turn: u32,
    pub max_turns: u32,
    pub points: u32,
    pub document: StoryDocument,
    pub bandit: BanditState,
    pub pending: Option<CommOutcome>,
    pub rewards: Vec<TurnReward>,
    pub failed_turns: u32,
    pub records: usize,
}

impl ReplayedSession {
    pub fn view(&self, debug: bool) -> SessionView {
        SessionView::build(ViewParts {
            session_id: &self.session_id,
            phase: self.phase,
            turn: self.turn,
            max_turns: self.max_turns,
            points: self.points,
            document: &self.document,
            pending: self.pending.as_ref(),
            ablation_mode: self.ablation_mode,
            bandit: debug.then_some(&self.bandit),
        })
    }

    /// Human-readable summary: document, posteriors, per-turn rewards.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "session {} ({} records)", self.session_id, self.records);
        let _ = writeln!(
            out,
            "phase: {}  turn: {}/{}  ablation: {}",
            self.phase, self.turn, self.max_turns, self.ablation_mode
        );
        let _ = writeln!(out, "\ndocument (revision {}):", self.document.revision);
        for field in StoryField::ALL {
            let _ = writeln!(out, "  {:<12} {}", field.label(), self.document.get(field));
        }
        let _ = writeln!(out, "\narms ({}):", self.bandit.policy());
        for (i, arm) in self.bandit.arms().iter().enumerate() {
            let kind = crate::comms::CommunicationKind::from_arm(i)
                .map(|k| k.as_str())
                .unwrap_or("?");
            let _ = writeln!(
                out,
                "  {i} {kind:<16} pulls={} alpha={} beta={}",
                arm.pulls, arm.alpha, arm.beta
            );
        }
        let _ = writeln!(out, "\nrewards:");
        for r in &self.rewards {
            let _ = writeln!(
                out,
                "  turn {:>2}: arm {} reward {:.3} (action {:?}, content {:?})",
                r.turn, r.arm, r.reward, r.action, r.content
            );
        }
        if self.failed_turns > 0 {
            let _ = writeln!(out, "failed generations: {}", self.failed_turns);
        }
        out
    }
}

/// Parsed log plus a flag for a cut-off final line.
#[derive(Debug)]
pub struct ParsedLog {
    pub records: Vec<LogRecord>,
    /// The last line was incomplete and has been dropped.
    pub truncated: bool,
}

/// Parses JSONL. An unparsable final line without a trailing newline is
/// treated as truncation; any other unparsable line is an error.
pub fn parse_log(text: &str) -> Result<ParsedLog, ReplayError> {
    let mut records = Vec::new();
    let mut truncated = false;
    let lines: Vec<&str> = text.split('\n').collect();
    let last = lines.len() - 1;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if i == last && !text.ends_with('\n') => truncated = true,
            Err(e) => {
                return Err(ReplayError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(ParsedLog { records, truncated })
}

struct Reducer {
    s: ReplayedSession,
    snapshot: Option<StoryDocument>,
    pending_arm: Option<usize>,
}

fn corrupt(seq: u64, message: impl Into<String>) -> ReplayError {
    ReplayError::Corrupt {
        seq,
        message: message.into(),
    }
}

/// Rebuilds the session described by `records`.
pub fn replay(records: &[LogRecord]) -> Result<ReplayedSession, ReplayError> {
    let first = records.first().ok_or(ReplayError::Empty)?;
    let Event::SessionCreated {
        session_id,
        seed,
        policy,
        epsilon,
        ablation_mode,
        max_turns,
        k_arms,
    } = &first.event
    else {
        return Err(corrupt(first.seq, "first record is not session_created"));
    };
    if first.seq != 0 {
        return Err(corrupt(first.seq, "first record must have seq 0"));
    }
    let policy = Policy::from_parts(policy, *epsilon).map_err(|e| corrupt(0, e.to_string()))?;
    let bandit = BanditState::new(*k_arms, policy, *seed).map_err(|e| corrupt(0, e.to_string()))?;
    let mut r = Reducer {
        s: ReplayedSession {
            session_id: session_id.clone(),
            seed: *seed,
            ablation_mode: *ablation_mode,
            phase: Phase::HumanInitiative,
            turn: 0,
            max_turns: *max_turns,
            points: 0,
            document: StoryDocument::default(),
            bandit,
            pending: None,
            rewards: Vec::new(),
            failed_turns: 0,
            records: 1,
        },
        snapshot: None,
        pending_arm: None,
    };
    for (i, rec) in records.iter().enumerate().skip(1) {
        if rec.seq != i as u64 {
            return Err(corrupt(rec.seq, format!("expected seq {i}")));
        }
        r.apply(rec)?;
        r.s.records += 1;
    }
    Ok(r.s)
}

impl Reducer {
    fn expect_phase(&self, seq: u64, phase: Phase, what: &str) -> Result<(), ReplayError> {
        if self.s.phase != phase {
            return Err(corrupt(seq, format!("{what} in phase {}", self.s.phase)));
        }
        Ok(())
    }

    fn apply(&mut self, rec: &LogRecord) -> Result<(), ReplayError> {
        let seq = rec.seq;
        match &rec.event {
            Event::SessionCreated { .. } => return Err(corrupt(seq, "duplicate session_created")),
            Event::Edit {
                field,
                text,
                chars_added,
                revision,
            } => {
                self.expect_phase(seq, Phase::HumanInitiative, "edit")?;
                let delta = self.s.document.apply_edit(*field, text);
                if delta.chars_added != *chars_added || self.s.document.revision != *revision {
                    return Err(corrupt(seq, "edit does not match rebuilt document"));
                }
            }
            Event::Points {
                cause,
                delta,
                points,
            } => {
                self.expect_phase(seq, Phase::HumanInitiative, "points")?;
                let valid = match cause {
                    PointsCause::CharsAdded => delta % POINTS_PER_CHAR == 0,
                    PointsCause::FieldSwitch => *delta == FIELD_SWITCH_POINTS,
                };
                self.s.points = self.s.points.saturating_add(*delta);
                if !valid || self.s.points != *points {
                    return Err(corrupt(seq, format!("points {points} != rebuilt {}", self.s.points)));
                }
            }
            Event::FieldSwitch { .. } => {
                self.expect_phase(seq, Phase::HumanInitiative, "field_switch")?;
            }
            Event::FieldLeave {
                points, triggered, ..
            } => {
                self.expect_phase(seq, Phase::HumanInitiative, "field_leave")?;
                if *points != self.s.points || *triggered != (*points >= INITIATIVE_THRESHOLD) {
                    return Err(corrupt(seq, "field_leave disagrees with point total"));
                }
            }
            Event::Skip { .. } => {
                self.expect_phase(seq, Phase::HumanInitiative, "skip")?;
            }
            Event::Transition { from, to, turn } => {
                if *from != self.s.phase {
                    return Err(corrupt(seq, format!("transition from {from} while in {}", self.s.phase)));
                }
                if !from.can_transition(*to) {
                    return Err(corrupt(seq, format!("illegal transition {from} -> {to}")));
                }
                if *turn != self.s.turn {
                    return Err(corrupt(seq, "transition turn mismatch"));
                }
                if *to == Phase::Finished && self.s.turn != self.s.max_turns {
                    return Err(corrupt(seq, "finished before max_turns"));
                }
                if *to == Phase::AgentInitiative {
                    self.s.points = 0;
                }
                if matches!(to, Phase::HumanInitiative | Phase::Finished) {
                    self.s.pending = None;
                    self.snapshot = None;
                    self.pending_arm = None;
                }
                self.s.phase = *to;
            }
            Event::ArmPulled { arm, kind, turn } => {
                self.expect_phase(seq, Phase::AgentInitiative, "arm_pulled")?;
                if kind.arm() != *arm || *arm >= self.s.bandit.k() {
                    return Err(corrupt(seq, "arm/kind mismatch"));
                }
                if *turn != self.s.turn + 1 || *turn > self.s.max_turns {
                    return Err(corrupt(seq, "turn counter out of order"));
                }
                self.s.turn = *turn;
                self.pending_arm = Some(*arm);
            }
            Event::AgentOutcome { outcome, revision } => {
                self.expect_phase(seq, Phase::AgentInitiative, "agent_outcome")?;
                if self.pending_arm != Some(outcome.kind.arm()) {
                    return Err(corrupt(seq, "outcome kind differs from pulled arm"));
                }
                if let Some(fields) = &outcome.new_fields {
                    self.snapshot = Some(self.s.document.clone());
                    for (field, text) in fields {
                        self.s.document.apply_edit(*field, text);
                    }
                }
                if self.s.document.revision != *revision {
                    return Err(corrupt(seq, "revision mismatch after agent edit"));
                }
                self.s.pending = Some(outcome.clone());
            }
            Event::TurnFailed { .. } => {
                self.expect_phase(seq, Phase::AgentInitiative, "turn_failed")?;
                self.s.failed_turns += 1;
            }
            Event::Feedback { .. } => {
                if !self.s.phase.is_awaiting() {
                    return Err(corrupt(seq, format!("feedback in phase {}", self.s.phase)));
                }
            }
            Event::Reverted { fields, revision } => {
                if !self.s.phase.is_awaiting() {
                    return Err(corrupt(seq, "revert outside feedback"));
                }
                let snap = self
                    .snapshot
                    .as_ref()
                    .ok_or_else(|| corrupt(seq, "revert without snapshot"))?;
                let rev = self.s.document.revision + 1;
                self.s.document = StoryDocument {
                    revision: rev,
                    ..snap.clone()
                };
                let matches = fields
                    .iter()
                    .all(|(f, text)| self.s.document.get(*f) == text);
                if !matches || rev != *revision {
                    return Err(corrupt(seq, "reverted content mismatch"));
                }
            }
            Event::Reward {
                arm,
                reward,
                action,
                content,
                alpha,
                beta,
            } => {
                if !self.s.phase.is_awaiting() || self.s.ablation_mode {
                    return Err(corrupt(seq, "reward outside a learning feedback phase"));
                }
                if self.pending_arm != Some(*arm) {
                    return Err(corrupt(seq, "reward for an arm that was not pulled"));
                }
                self.s
                    .bandit
                    .update(*arm, *reward)
                    .map_err(|e| corrupt(seq, e.to_string()))?;
                let stats = &self.s.bandit.arms()[*arm];
                if stats.alpha != *alpha || stats.beta != *beta {
                    return Err(corrupt(seq, "posterior mismatch"));
                }
                self.s.rewards.push(TurnReward {
                    turn: self.s.turn,
                    arm: *arm,
                    reward: *reward,
                    action: *action,
                    content: *content,
                });
            }
        }
        Ok(())
    }
}

/// Checks that every transition in the log is legal and that the session
/// ran exactly `max_turns` agent turns if it finished.
pub fn check_transitions(records: &[LogRecord]) -> Result<(), String> {
    let mut phase = Phase::HumanInitiative;
    let mut pulls = 0u32;
    let mut max_turns = None;
    for r in records {
        match &r.event {
            Event::SessionCreated { max_turns: m, .. } => max_turns = Some(*m),
            Event::ArmPulled { .. } => pulls += 1,
            Event::Transition { from, to, .. } => {
                if *from != phase || !from.can_transition(*to) {
                    return Err(format!("seq {}: {from} -> {to} while in {phase}", r.seq));
                }
                phase = *to;
            }
            _ => {}
        }
    }
    if phase == Phase::Finished && Some(pulls) != max_turns {
        return Err(format!("finished after {pulls} turns, expected {max_turns:?}"));
    }
    Ok(())
}

/// Arms pulled per turn, in order.
pub fn pulled_arms(records: &[LogRecord]) -> BTreeMap<u32, usize> {
    records
        .iter()
        .filter_map(|r| match r.event {
            Event::ArmPulled { arm, turn, .. } => Some((turn, arm)),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::MockGenerator;
    use crate::log::ManualClock;
    use crate::session::{FeedbackParts, Session, SessionConfig};
    use std::sync::Arc;

    fn played() -> Session {
        let mut s = Session::with_clock(
            SessionId("r".into()),
            SessionConfig {
                seed: 3,
                max_turns: 3,
                ..Default::default()
            },
            Arc::new(ManualClock::default()),
        )
        .unwrap();
        let gen = MockGenerator::new(3);
        for i in 0..3 {
            s.edit(StoryField::Beginning, &"abcd ".repeat(8 + i)).unwrap();
            if !s.leave_field().unwrap() {
                s.skip().unwrap();
            }
            s.run_agent_turn(&gen).unwrap();
            s.submit_feedback(FeedbackParts {
                action: Some(Rating::Good),
                content: Some(if i == 1 { Rating::Bad } else { Rating::Good }),
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn replay_matches_live_session() {
        let s = played();
        let text = s.log().to_jsonl();
        let parsed = parse_log(&text).unwrap();
        assert!(!parsed.truncated);
        let r = replay(&parsed.records).unwrap();
        assert_eq!(&r.document, s.document());
        assert_eq!(&r.bandit, s.bandit());
        assert_eq!(r.view(true), s.view(true));
        assert_eq!(r.rewards.len(), 3);
        assert!(check_transitions(&parsed.records).is_ok());
        assert!(r.report().contains("turn  2"));
    }

    #[test]
    fn truncated_last_line() {
        let text = played().log().to_jsonl();
        let cut = &text[..text.len() - 20];
        let parsed = parse_log(cut).unwrap();
        assert!(parsed.truncated);
        assert!(replay(&parsed.records).is_ok());
    }

    #[test]
    fn garbage_mid_file_is_parse_error() {
        let text = played().log().to_jsonl();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[4] = "{not json";
        let broken = lines.join("\n") + "\n";
        assert!(matches!(parse_log(&broken), Err(ReplayError::Parse { line: 5, .. })));
    }

    #[test]
    fn sequence_gap_reports_seq() {
        let s = played();
        let mut recs = s.records().to_vec();
        recs.remove(5);
        let err = replay(&recs).unwrap_err();
        assert_eq!(err.seq(), Some(6));
    }

    #[test]
    fn tampered_reward_detected() {
        let s = played();
        let mut recs = s.records().to_vec();
        let idx = recs
            .iter()
            .position(|r| matches!(r.event, Event::Reward { .. }))
            .unwrap();
        if let Event::Reward { reward, .. } = &mut recs[idx].event {
            *reward = 0.5;
        }
        assert_eq!(replay(&recs).unwrap_err().seq(), Some(idx as u64));
    }

    #[test]
    fn illegal_transition_detected() {
        let s = played();
        let mut recs = s.records().to_vec();
        let idx = recs
            .iter()
            .position(|r| matches!(r.event, Event::Transition { .. }))
            .unwrap();
        if let Event::Transition { to, .. } = &mut recs[idx].event {
            *to = Phase::Finished;
        }
        assert!(replay(&recs).is_err());
        assert!(check_transitions(&recs).is_err());
    }

    #[test]
    fn empty_log() {
        assert_eq!(replay(&[]), Err(ReplayError::Empty));
    }
}
