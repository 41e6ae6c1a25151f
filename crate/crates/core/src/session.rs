//! The experience manager: a turn-based state machine that alternates
//! between human and agent initiative.
//!
//! ```text
//! human_initiative ──(leave field at ≥200 points | skip)──▶ agent_initiative
//!        ▲                                                        │
//!        │                         (generator failed twice) ◀─────┤
//!        │                                                        ▼
//!        └──── awaiting_content_feedback ◀── awaiting_action_feedback
//!                        │ (turn == max_turns)
//!                        ▼
//!                     finished
//! ```
//!
//! Ablation sessions skip the action question, choose arms uniformly and
//! never update the bandit.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{BanditError, BanditState, Policy};
use crate::comms::{execute_communication, CommOutcome, CommunicationKind, Generator, GeneratorError};
use crate::log::{Clock, Event, LogRecord, PointsCause, SessionLog, SystemClock};
use crate::story::{EditDelta, SessionId, Snapshot, StoryDocument, StoryError, StoryField};

pub const POINTS_PER_CHAR: u32 = 5;
pub const FIELD_SWITCH_POINTS: u32 = 100;
pub const INITIATIVE_THRESHOLD: u32 = 200;
pub const ACTION_WEIGHT: f64 = 0.8;
pub const CONTENT_WEIGHT: f64 = 0.2;
pub const DEFAULT_MAX_TURNS: u32 = 10;
/// Generator attempts per agent turn (one retry).
pub const GENERATION_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    HumanInitiative,
    AgentInitiative,
    AwaitingActionFeedback,
    AwaitingContentFeedback,
    Finished,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::HumanInitiative => "human_initiative",
            Phase::AgentInitiative => "agent_initiative",
            Phase::AwaitingActionFeedback => "awaiting_action_feedback",
            Phase::AwaitingContentFeedback => "awaiting_content_feedback",
            Phase::Finished => "finished",
        }
    }

    pub fn is_awaiting(&self) -> bool {
        matches!(
            self,
            Phase::AwaitingActionFeedback | Phase::AwaitingContentFeedback
        )
    }

    /// Whether the state machine may move from `self` to `to`.
    pub fn can_transition(self, to: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, to),
            (HumanInitiative, AgentInitiative)
                | (AgentInitiative, AwaitingActionFeedback)
                | (AgentInitiative, AwaitingContentFeedback)
                | (AgentInitiative, HumanInitiative)
                | (AwaitingActionFeedback, AwaitingContentFeedback)
                | (AwaitingActionFeedback, HumanInitiative)
                | (AwaitingActionFeedback, Finished)
                | (AwaitingContentFeedback, HumanInitiative)
                | (AwaitingContentFeedback, Finished)
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary answer to a feedback question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    Good,
    Bad,
}

impl Rating {
    pub fn value(self) -> f64 {
        match self {
            Rating::Good => 1.0,
            Rating::Bad => 0.0,
        }
    }
}

impl std::str::FromStr for Rating {
    type Err = String;

    /// Accepts `good`/`bad` and the ablation wording `keep`/`revert`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "good" | "keep" => Ok(Rating::Good),
            "bad" | "revert" => Ok(Rating::Bad),
            other => Err(format!("unknown rating `{other}`")),
        }
    }
}

/// Feedback on one agent turn and the scalar reward derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSignal {
    pub action_feedback: Option<Rating>,
    pub content_feedback: Option<Rating>,
    pub composed: f64,
}

impl FeedbackSignal {
    /// `0.8 · action + 0.2 · content`.
    pub fn compose(action: Rating, content: Rating) -> Self {
        Self {
            action_feedback: Some(action),
            content_feedback: Some(content),
            composed: ACTION_WEIGHT * action.value() + CONTENT_WEIGHT * content.value(),
        }
    }
}

/// Answers submitted in one feedback request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackParts {
    #[serde(default)]
    pub action: Option<Rating>,
    #[serde(default)]
    pub content: Option<Rating>,
}

/// Human activity that earns initiative points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitiativeEvent {
    CharsAdded(usize),
    FieldSwitchAfterChange,
    FieldLeave,
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("operation not allowed in phase {actual}")]
    WrongPhase { actual: Phase },
    #[error("no pending agent outcome")]
    MissingPendingOutcome,
    #[error("missing {0} feedback")]
    MissingAnswer(&'static str),
    #[error("{0} feedback is not expected now")]
    UnexpectedAnswer(&'static str),
    #[error("generation failed after {attempts} attempts: {source}")]
    GenerationFailed {
        attempts: u32,
        #[source]
        source: GeneratorError,
    },
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Story(#[from] StoryError),
}

fn default_max_turns() -> u32 {
    DEFAULT_MAX_TURNS
}

fn default_policy() -> String {
    "thompson".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub ablation: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            policy: default_policy(),
            epsilon: None,
            ablation: false,
            seed: 0,
        }
    }
}

impl SessionConfig {
    /// Checks the config and returns the effective policy. Ablation always
    /// chooses uniformly.
    pub fn validate(&self) -> Result<Policy, SessionError> {
        if self.max_turns < 1 {
            return Err(SessionError::InvalidConfig("max_turns must be at least 1".into()));
        }
        let policy = Policy::from_parts(&self.policy, self.epsilon)
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        Ok(if self.ablation {
            Policy::UniformRandom
        } else {
            policy
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Focus {
    pub field: StoryField,
    /// Characters were added since the field gained focus.
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub turn: u32,
    pub max_turns: u32,
    pub points: u32,
    pub last_edited_field: Option<StoryField>,
    pub focus: Option<Focus>,
    pub pending_outcome: Option<CommOutcome>,
    pub pending_arm: Option<usize>,
    pub pending_snapshot: Option<Snapshot>,
    pub pending_action: Option<Rating>,
    pub bandit: BanditState,
    pub ablation_mode: bool,
}

/// Result of a successful agent turn.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTurn {
    pub arm: usize,
    pub outcome: CommOutcome,
}

/// Where a feedback submission left the session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackStep {
    /// Action answer stored; content answer still due.
    AwaitingContent,
    /// Turn resolved. `signal.composed` is the reward given to the bandit,
    /// or `None` in ablation mode.
    Resolved {
        signal: FeedbackSignal,
        reward: Option<f64>,
        reverted: bool,
    },
}

/// One co-writing session: document, state machine, bandit and log.
#[derive(Debug)]
pub struct Session {
    id: SessionId,
    config: SessionConfig,
    state: SessionState,
    document: StoryDocument,
    rng: ChaCha8Rng,
    log: SessionLog,
}

impl Session {
    pub fn new(id: SessionId, config: SessionConfig) -> Result<Self, SessionError> {
        Self::with_clock(id, config, Arc::new(SystemClock))
    }

    pub fn with_clock(
        id: SessionId,
        config: SessionConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, SessionError> {
        let policy = config.validate()?;
        let k = CommunicationKind::ALL.len();
        let bandit = BanditState::new(k, policy, config.seed)?;
        let mut log = SessionLog::new(clock);
        log.append(Event::SessionCreated {
            session_id: id.clone(),
            seed: config.seed,
            policy: policy.name().to_string(),
            epsilon: policy.epsilon(),
            ablation_mode: config.ablation,
            max_turns: config.max_turns,
            k_arms: k,
        });
        Ok(Self {
            id,
            state: SessionState {
                phase: Phase::HumanInitiative,
                turn: 0,
                max_turns: config.max_turns,
                points: 0,
                last_edited_field: None,
                focus: None,
                pending_outcome: None,
                pending_arm: None,
                pending_snapshot: None,
                pending_action: None,
                bandit,
                ablation_mode: config.ablation,
            },
            document: StoryDocument::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            log,
        })
    }

    pub fn id(&self) -> &SessionId {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn document(&self) -> &StoryDocument {
        &self.document
    }

    pub fn bandit(&self) -> &BanditState {
        &self.state.bandit
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut SessionLog {
        &mut self.log
    }

    pub fn records(&self) -> &[LogRecord] {
        self.log.records()
    }

    fn require(&self, phase: Phase) -> Result<(), SessionError> {
        if self.state.phase == phase {
            Ok(())
        } else {
            Err(SessionError::WrongPhase {
                actual: self.state.phase,
            })
        }
    }

    fn transition(&mut self, to: Phase) {
        let from = self.state.phase;
        debug_assert!(from.can_transition(to), "{from} -> {to}");
        if to == Phase::AgentInitiative {
            self.state.points = 0;
            self.state.focus = None;
        }
        self.state.phase = to;
        self.log.append(Event::Transition {
            from,
            to,
            turn: self.state.turn,
        });
    }

    /// Applies the point heuristic. Returns `true` when agent initiative was
    /// triggered.
    pub fn accrue_points(&mut self, event: InitiativeEvent) -> Result<bool, SessionError> {
        self.require(Phase::HumanInitiative)?;
        let (cause, delta) = match event {
            InitiativeEvent::CharsAdded(k) => (
                PointsCause::CharsAdded,
                (k as u32).saturating_mul(POINTS_PER_CHAR),
            ),
            InitiativeEvent::FieldSwitchAfterChange => (PointsCause::FieldSwitch, FIELD_SWITCH_POINTS),
            InitiativeEvent::FieldLeave => {
                if self.state.points >= INITIATIVE_THRESHOLD {
                    self.transition(Phase::AgentInitiative);
                    return Ok(true);
                }
                return Ok(false);
            }
        };
        if delta > 0 {
            self.state.points = self.state.points.saturating_add(delta);
            self.log.append(Event::Points {
                cause,
                delta,
                points: self.state.points,
            });
        }
        Ok(false)
    }

    /// Replaces one field with the human's text.
    pub fn edit(&mut self, field: StoryField, text: &str) -> Result<EditDelta, SessionError> {
        self.require(Phase::HumanInitiative)?;
        let mut delta = self.document.apply_edit(field, text);
        self.log.append(Event::Edit {
            field,
            text: text.to_string(),
            chars_added: delta.chars_added,
            revision: self.document.revision,
        });
        let switched = self.state.focus.map(|f| f.field) != Some(field);
        if switched {
            self.state.focus = Some(Focus {
                field,
                changed: false,
            });
        }
        delta.field_switched = switched;
        if delta.chars_added > 0 {
            if let Some(f) = self.state.focus.as_mut() {
                f.changed = true;
            }
        }
        self.state.last_edited_field = Some(field);
        self.accrue_points(InitiativeEvent::CharsAdded(delta.chars_added))?;
        Ok(delta)
    }

    /// Moves focus to `to`, crediting a switch if the previous field changed.
    pub fn switch_field(&mut self, to: StoryField) -> Result<bool, SessionError> {
        self.require(Phase::HumanInitiative)?;
        let from = self.state.focus;
        if from.map(|f| f.field) == Some(to) {
            return Ok(false);
        }
        let credited = from.is_some_and(|f| f.changed);
        self.log.append(Event::FieldSwitch {
            from: from.map(|f| f.field),
            to,
            credited,
        });
        self.state.focus = Some(Focus {
            field: to,
            changed: false,
        });
        if credited {
            self.accrue_points(InitiativeEvent::FieldSwitchAfterChange)?;
        }
        Ok(credited)
    }

    /// The human left the focused field. Returns `true` if the agent took
    /// initiative.
    pub fn leave_field(&mut self) -> Result<bool, SessionError> {
        self.require(Phase::HumanInitiative)?;
        let triggered = self.state.points >= INITIATIVE_THRESHOLD;
        self.log.append(Event::FieldLeave {
            field: self.state.focus.map(|f| f.field),
            points: self.state.points,
            triggered,
        });
        self.state.focus = None;
        self.accrue_points(InitiativeEvent::FieldLeave)
    }

    /// Hands initiative to the agent immediately.
    pub fn skip(&mut self) -> Result<(), SessionError> {
        self.require(Phase::HumanInitiative)?;
        self.log.append(Event::Skip {
            points: self.state.points,
        });
        self.transition(Phase::AgentInitiative);
        Ok(())
    }

    /// Picks a Communication and executes it.
    ///
    /// On generator failure (after one retry) the turn is logged as failed,
    /// the document is untouched, no arm is credited and the session returns
    /// to human initiative.
    pub fn run_agent_turn(&mut self, generator: &dyn Generator) -> Result<AgentTurn, SessionError> {
        self.require(Phase::AgentInitiative)?;
        let arm = self.state.bandit.select_arm(&mut self.rng)?;
        let kind = CommunicationKind::from_arm(arm).expect("bandit has one arm per communication");

        let mut last_err = None;
        let mut outcome = None;
        for attempt in 1..=GENERATION_ATTEMPTS {
            match execute_communication(kind, &self.document, generator, &mut self.rng) {
                Ok(o) => {
                    outcome = Some(o);
                    break;
                }
                Err(e) => {
                    tracing::warn!(session = %self.id, %kind, attempt, error = %e, "generation failed");
                    last_err = Some(e);
                }
            }
        }
        let Some(outcome) = outcome else {
            let source = last_err.expect("failed attempts record an error");
            self.log.append(Event::TurnFailed {
                kind,
                attempts: GENERATION_ATTEMPTS,
                error: source.to_string(),
            });
            self.transition(Phase::HumanInitiative);
            return Err(SessionError::GenerationFailed {
                attempts: GENERATION_ATTEMPTS,
                source,
            });
        };

        self.state.turn += 1;
        self.log.append(Event::ArmPulled {
            arm,
            kind,
            turn: self.state.turn,
        });
        if let Some(fields) = &outcome.new_fields {
            self.state.pending_snapshot = Some(self.document.snapshot(&self.id, self.state.turn));
            for (field, text) in fields {
                self.document.apply_edit(*field, text);
            }
        }
        self.log.append(Event::AgentOutcome {
            outcome: outcome.clone(),
            revision: self.document.revision,
        });
        self.state.pending_outcome = Some(outcome.clone());
        self.state.pending_arm = Some(arm);
        self.state.pending_action = None;
        self.transition(if self.state.ablation_mode {
            Phase::AwaitingContentFeedback
        } else {
            Phase::AwaitingActionFeedback
        });
        Ok(AgentTurn { arm, outcome })
    }

    /// Records feedback for the pending agent turn.
    ///
    /// The full system takes the action answer first and the content answer
    /// second, or both in one call. Ablation sessions take only the content
    /// answer, read as keep (`good`) or revert (`bad`).
    pub fn submit_feedback(&mut self, parts: FeedbackParts) -> Result<FeedbackStep, SessionError> {
        match self.state.phase {
            Phase::AwaitingActionFeedback => {
                let action = parts.action.ok_or(SessionError::MissingAnswer("action"))?;
                if self.state.pending_outcome.is_none() {
                    return Err(SessionError::MissingPendingOutcome);
                }
                self.state.pending_action = Some(action);
                match parts.content {
                    None => {
                        self.log.append(Event::Feedback {
                            action: Some(action),
                            content: None,
                        });
                        self.transition(Phase::AwaitingContentFeedback);
                        Ok(FeedbackStep::AwaitingContent)
                    }
                    Some(content) => self.resolve_turn(Some(action), content),
                }
            }
            Phase::AwaitingContentFeedback => {
                if parts.action.is_some() {
                    return Err(SessionError::UnexpectedAnswer("action"));
                }
                let content = parts.content.ok_or(SessionError::MissingAnswer("content"))?;
                let action = self.state.pending_action;
                self.resolve_turn(action, content)
            }
            actual => Err(SessionError::WrongPhase { actual }),
        }
    }

    fn resolve_turn(&mut self, action: Option<Rating>, content: Rating) -> Result<FeedbackStep, SessionError> {
        let outcome = self
            .state
            .pending_outcome
            .clone()
            .ok_or(SessionError::MissingPendingOutcome)?;
        let arm = self.state.pending_arm.unwrap_or_else(|| outcome.kind.arm());

        // Validate before mutating anything.
        let signal = if self.state.ablation_mode {
            FeedbackSignal {
                action_feedback: None,
                content_feedback: Some(content),
                composed: content.value(),
            }
        } else {
            let action = action.ok_or(SessionError::MissingAnswer("action"))?;
            FeedbackSignal::compose(action, content)
        };

        self.log.append(Event::Feedback {
            action: if self.state.ablation_mode { None } else { action },
            content: Some(content),
        });

        let mut reverted = false;
        if content == Rating::Bad && outcome.kind.is_rewrite() {
            if let Some(snapshot) = self.state.pending_snapshot.as_ref() {
                self.document.revert(snapshot, &self.id)?;
                reverted = true;
                self.log.append(Event::Reverted {
                    fields: outcome
                        .kind
                        .target_fields()
                        .iter()
                        .map(|f| (*f, self.document.get(*f).to_string()))
                        .collect(),
                    revision: self.document.revision,
                });
            }
        }

        let reward = if self.state.ablation_mode {
            None
        } else {
            let r = signal.composed;
            self.state.bandit.update(arm, r)?;
            let stats = &self.state.bandit.arms()[arm];
            self.log.append(Event::Reward {
                arm,
                reward: r,
                action: signal.action_feedback.expect("full system has action"),
                content,
                alpha: stats.alpha,
                beta: stats.beta,
            });
            Some(r)
        };

        self.state.pending_outcome = None;
        self.state.pending_arm = None;
        self.state.pending_snapshot = None;
        self.state.pending_action = None;
        self.transition(if self.state.turn >= self.state.max_turns {
            Phase::Finished
        } else {
            Phase::HumanInitiative
        });
        Ok(FeedbackStep::Resolved {
            signal,
            reward,
            reverted,
        })
    }

    /// Current state as shown to clients.
    pub fn view(&self, debug: bool) -> SessionView {
        SessionView::build(ViewParts {
            session_id: &self.id,
            phase: self.state.phase,
            turn: self.state.turn,
            max_turns: self.state.max_turns,
            points: self.state.points,
            document: &self.document,
            pending: self.state.pending_outcome.as_ref(),
            ablation_mode: self.state.ablation_mode,
            bandit: debug.then_some(&self.state.bandit),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingView {
    pub kind: CommunicationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changed_fields: Option<Vec<StoryField>>,
}

/// Client-facing session state. Bandit internals only appear in debug views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: SessionId,
    pub phase: Phase,
    pub turn: u32,
    pub max_turns: u32,
    pub points: u32,
    pub points_threshold: u32,
    pub document: StoryDocument,
    pub pending: Option<PendingView>,
    pub questions_due: Vec<String>,
    pub ablation_mode: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandit: Option<BanditState>,
}

/// Borrowed inputs for [`SessionView::build`].
pub struct ViewParts<'a> {
    pub session_id: &'a SessionId,
    pub phase: Phase,
    pub turn: u32,
    pub max_turns: u32,
    pub points: u32,
    pub document: &'a StoryDocument,
    pub pending: Option<&'a CommOutcome>,
    pub ablation_mode: bool,
    pub bandit: Option<&'a BanditState>,
}

impl SessionView {
    pub fn build(p: ViewParts<'_>) -> Self {
        let questions_due: Vec<String> = match (p.phase, p.ablation_mode) {
            (Phase::AwaitingActionFeedback, _) => vec!["action".into(), "content".into()],
            (Phase::AwaitingContentFeedback, false) => vec!["content".into()],
            (Phase::AwaitingContentFeedback, true) => vec!["keep_or_revert".into()],
            _ => Vec::new(),
        };
        Self {
            session_id: p.session_id.clone(),
            phase: p.phase,
            turn: p.turn,
            max_turns: p.max_turns,
            points: p.points,
            points_threshold: INITIATIVE_THRESHOLD,
            document: p.document.clone(),
            pending: p.pending.map(|o| PendingView {
                kind: o.kind,
                review_text: o.review_text.clone(),
                changed_fields: o.new_fields.as_ref().map(|_| o.changed_fields()),
            }),
            questions_due,
            ablation_mode: p.ablation_mode,
            bandit: p.bandit.cloned(),
        }
    }
}
