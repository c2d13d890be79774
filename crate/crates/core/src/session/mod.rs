//! Live training sessions: lifecycle, turn handling, guards, hints,
//! progress and rating capture.

mod log;
mod runtime;

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

pub use log::{digest, read_events, replay, ReplayError, SessionEvent, SessionOp, SessionStore, StoreError};
pub use runtime::Runtime;

use crate::builtin::{
    check_guess, coverage_update, hint_list_previous, validate_answer_turn, GuessCheck, GuessingWordConfig, QaRecord,
    Slot,
};
use crate::llm::{self, convert_transcript, Provider, ProviderError, RetryPolicy};
use crate::message::{ChatMessage, MessagePart, Role, Transcript, TranscriptError};
use crate::puzzle::{InstantiationContext, PuzzleError, PuzzleInstance, PuzzleKind, PuzzleRegistry};
use crate::tags::{parse_model_output, to_ui_directives, ComponentName, Directive, DirectiveError, ParsedOutput};

/// Corrective retries after the first rejected response.
pub const MAX_GUARD_RETRIES: usize = 2;
/// Text recorded as the user's side of a hint request.
pub const HINT_REQUEST_TEXT: &str = "I'd like a hint, please.";
pub const PREVIOUS_QUESTIONS_HINT_ID: &str = "previous-questions";
pub const MISSING_DETAILS_HINT_ID: &str = "missing-details";
/// `outcome` value of an end tag that concedes the puzzle.
pub const GAVE_UP: &str = "gave-up";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionState {
    Active,
    AwaitingDraw,
    Ended,
}

impl SessionState {
    /// The legal transition relation.
    pub fn can_become(self, next: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, next),
            (Active, Active) | (Active, AwaitingDraw) | (AwaitingDraw, Active) | (Active, Ended) | (AwaitingDraw, Ended)
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionState::Active => "active",
            SessionState::AwaitingDraw => "awaiting-draw",
            SessionState::Ended => "ended",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Solved,
    GaveUp,
    Completed,
    Aborted,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Solved => "solved",
            Outcome::GaveUp => "gave-up",
            Outcome::Completed => "completed",
            Outcome::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Puzzle(#[from] PuzzleError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("session has ended")]
    SessionEnded,
    #[error("a drawing is expected; send an image")]
    DrawExpected,
    #[error("model response rejected after {attempts} attempts: {reason}")]
    GuardViolation { attempts: usize, reason: String },
    #[error("hint budget of {0} exhausted")]
    HintBudgetExhausted(u32),
    #[error("no hints available for this puzzle")]
    NoHintsAvailable,
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("session {0:?} not found")]
    NotFound(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub session_id: String,
    pub instance: PuzzleInstance,
    pub transcript: Transcript,
    pub state: SessionState,
    pub hints_used: u32,
    pub hint_budget: u32,
    pub covered_slots: BTreeSet<Slot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    /// Guessing Word question log.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questions_asked: Vec<QaRecord>,
    /// Number of operations applied; the event log sequence number.
    pub revision: u64,
}

/// Result of one operation: the replacement session, the directives for the
/// UI and the raw provider responses consumed (including rejected ones).
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub session: Session,
    pub directives: Vec<Directive>,
    pub responses: Vec<String>,
}

/// Provider plus retry policy used for model calls.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub provider: &'a dyn Provider,
    pub retry: &'a RetryPolicy,
}

impl<'a> Engine<'a> {
    pub fn new(provider: &'a dyn Provider, retry: &'a RetryPolicy) -> Self {
        Self { provider, retry }
    }
}

pub fn new_session_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

/// Instantiates `group_id` and opens a session on it.
pub fn start_session(
    registry: &PuzzleRegistry,
    group_id: &str,
    ctx: &InstantiationContext<'_>,
    engine: Engine<'_>,
    session_id: String,
) -> Result<Step, SessionError> {
    let group = registry
        .get(group_id)
        .ok_or_else(|| PuzzleError::GroupNotFound(group_id.to_owned()))?;
    let budget = group.hint_budget;
    let instance = registry.instantiate(group_id, ctx)?;
    Session::begin(session_id, instance, budget, engine, ctx.now)
}

enum TurnKind {
    Opener,
    User { guess: Option<GuessCheck> },
}

/// Effects of an accepted model response.
struct Evaluation {
    directives: Vec<Directive>,
    assistant_parts: Vec<MessagePart>,
    covered: BTreeSet<Slot>,
    end: Option<Outcome>,
    rating: Option<u8>,
    draw: bool,
    answer: Option<crate::builtin::YesNo>,
}

impl Session {
    /// Opens a session on an existing instance: system prompt at turn 0,
    /// then the model's opening message.
    pub fn begin(
        session_id: String,
        instance: PuzzleInstance,
        hint_budget: u32,
        engine: Engine<'_>,
        now: DateTime<Utc>,
    ) -> Result<Step, SessionError> {
        let system = ChatMessage::new(Role::System, 0, now, vec![MessagePart::text(instance.system_prompt.clone())]);
        let transcript = Transcript::new().append(system)?;
        let session = Session {
            session_id,
            instance,
            transcript,
            state: SessionState::Active,
            hints_used: 0,
            hint_budget,
            covered_slots: BTreeSet::new(),
            rating: None,
            outcome: None,
            questions_asked: Vec::new(),
            revision: 0,
        };
        session.model_turn(TurnKind::Opener, None, engine, now)
    }

    pub fn is_ended(&self) -> bool {
        self.state == SessionState::Ended
    }

    /// True once every required recall slot is covered; the next model turn
    /// may then end the session.
    pub fn completable(&self) -> bool {
        match &self.instance.slot_spec {
            Some(spec) => spec.is_subset(&self.covered_slots),
            None => true,
        }
    }

    pub fn missing_slots(&self) -> Vec<Slot> {
        match &self.instance.slot_spec {
            Some(spec) => spec.difference(&self.covered_slots).copied().collect(),
            None => Vec::new(),
        }
    }

    pub fn hints_remaining(&self) -> u32 {
        self.hint_budget - self.hints_used
    }

    fn guessing_config(&self) -> Option<GuessingWordConfig> {
        let mut config = GuessingWordConfig::from_instance(&self.instance)?;
        config.questions_asked = self.questions_asked.clone();
        Some(config)
    }

    pub fn user_turn(
        &self,
        parts: Vec<MessagePart>,
        engine: Engine<'_>,
        now: DateTime<Utc>,
    ) -> Result<Step, SessionError> {
        match self.state {
            SessionState::Ended => return Err(SessionError::SessionEnded),
            SessionState::AwaitingDraw if !parts.iter().any(MessagePart::is_image) => {
                return Err(SessionError::DrawExpected)
            }
            _ => {}
        }
        let msg = ChatMessage::new(Role::User, self.transcript.next_index(), now, parts);
        let utterance = msg.text();
        let mut next = self.clone();
        next.transcript = self.transcript.append(msg)?;
        let guess = match self.instance.kind {
            PuzzleKind::GuessingWord => self.guessing_config().map(|c| check_guess(&c, &utterance)),
            _ => None,
        };
        next.model_turn(TurnKind::User { guess }, Some(utterance), engine, now)
    }

    /// Calls the model (with guard retries) and applies the accepted
    /// response to `self`, which already holds the triggering user message.
    fn model_turn(
        mut self,
        kind: TurnKind,
        utterance: Option<String>,
        engine: Engine<'_>,
        now: DateTime<Utc>,
    ) -> Result<Step, SessionError> {
        let mut request = convert_transcript(&self.instance, &self.transcript);
        let mut responses = Vec::new();
        let eval = loop {
            let resp = llm::complete(engine.provider, &request, engine.retry)?;
            responses.push(resp.raw_text.clone());
            let parsed = parse_model_output(&resp.raw_text);
            match self.evaluate(&parsed, &kind) {
                Ok(eval) => break eval,
                Err(reason) => {
                    let attempts = responses.len();
                    warn!(session = %self.session_id, attempts, %reason, "guard rejected model response");
                    if attempts > MAX_GUARD_RETRIES {
                        return Err(SessionError::GuardViolation { attempts, reason });
                    }
                    request.push_correction(format!("Your previous reply was rejected: {reason}. Reply again."));
                }
            }
        };

        let before = self.state;
        if let (Some(answer), Some(question)) = (eval.answer, utterance) {
            self.questions_asked.push(QaRecord { question, answer });
        }
        self.covered_slots = eval.covered;
        self.state = if eval.end.is_some() {
            SessionState::Ended
        } else if eval.draw {
            SessionState::AwaitingDraw
        } else {
            SessionState::Active
        };
        debug_assert!(matches!(kind, TurnKind::Opener) || before.can_become(self.state));
        self.outcome = eval.end;
        if eval.end.is_some() {
            self.rating = eval.rating;
        }
        let reply = ChatMessage::new(Role::Assistant, self.transcript.next_index(), now, eval.assistant_parts);
        self.transcript = self.transcript.append(reply)?;
        self.revision += 1;
        debug!(session = %self.session_id, state = %self.state, "model turn applied");
        Ok(Step {
            session: self,
            directives: eval.directives,
            responses,
        })
    }

    /// Applies puzzle guards and derives the effects of `parsed`. An `Err`
    /// carries the reason fed back to the model.
    fn evaluate(&self, parsed: &ParsedOutput, kind: &TurnKind) -> Result<Evaluation, String> {
        let mut effective = parsed.clone();
        let end_tag = parsed.tags_named(ComponentName::End).next();
        let gave_up = end_tag.is_some_and(|t| t.param("outcome") == Some(GAVE_UP));
        let mut end = None;
        let mut answer = None;

        let mut covered = self.covered_slots.clone();
        if let Some(spec) = &self.instance.slot_spec {
            for tag in parsed.tags_named(ComponentName::Progress) {
                covered = coverage_update(&covered, tag);
            }
            covered.retain(|s| spec.contains(s));
        }

        match kind {
            TurnKind::Opener => {
                if end_tag.is_some() {
                    warn!("ignoring end tag in opening message");
                }
            }
            TurnKind::User { guess } => match self.instance.kind {
                PuzzleKind::GuessingWord => {
                    if guess.as_ref().is_some_and(|g| g.correct) {
                        end = Some(Outcome::Solved);
                    } else if gave_up {
                        end = Some(Outcome::GaveUp);
                    } else {
                        answer = Some(validate_answer_turn(parsed).map_err(|v| v.to_string())?);
                        if end_tag.is_some() {
                            warn!("ignoring end tag without a correct guess");
                        }
                    }
                }
                PuzzleKind::LifeRecall => {
                    if gave_up {
                        end = Some(Outcome::GaveUp);
                    } else if end_tag.is_some() {
                        let missing: Vec<&str> = self
                            .instance
                            .slot_spec
                            .iter()
                            .flatten()
                            .filter(|s| !covered.contains(s))
                            .map(|s| s.as_str())
                            .collect();
                        if !missing.is_empty() {
                            return Err(format!(
                                "the session cannot end yet, these details are still missing: {}",
                                missing.join(", ")
                            ));
                        }
                        end = Some(Outcome::Completed);
                    }
                }
                PuzzleKind::Generic => {
                    if end_tag.is_some() {
                        end = Some(if gave_up { Outcome::GaveUp } else { Outcome::Completed });
                    }
                }
            },
        }

        if end.is_none() {
            effective.tags.retain(|t| t.name() != ComponentName::End);
            // awaiting-draw may only return to active or end
            if self.state == SessionState::AwaitingDraw && parsed.has_tag(ComponentName::Draw) {
                return Err("respond to the drawing you just received before asking for another one".into());
            }
        }
        let mut directives = to_ui_directives(&effective, self.instance.prepared_hints.as_slice()).map_err(
            |DirectiveError::UnknownHintId(id)| {
                let known: Vec<&str> = self.instance.prepared_hints.iter().map(|h| h.hint_id.as_str()).collect();
                format!("hint {id:?} does not exist (available: {})", known.join(", "))
            },
        )?;
        if let Some(outcome) = end {
            let mut seen = false;
            for d in &mut directives {
                if let Directive::EndSession { outcome: o } = d {
                    *o = Some(outcome);
                    seen = true;
                }
            }
            directives.retain({
                let mut first = true;
                move |d| match d {
                    Directive::EndSession { .. } => std::mem::replace(&mut first, false),
                    _ => true,
                }
            });
            if !seen {
                directives.push(Directive::EndSession { outcome: Some(outcome) });
            }
        }

        let mut assistant_parts = Vec::new();
        if !effective.visible_text.is_empty() {
            assistant_parts.push(MessagePart::text(effective.visible_text.clone()));
        }
        for d in &directives {
            if let Directive::ShowHint { parts, .. } = d {
                assistant_parts.extend(parts.iter().cloned());
            }
        }
        if assistant_parts.is_empty() {
            assistant_parts.push(MessagePart::text(""));
        }

        Ok(Evaluation {
            directives,
            assistant_parts,
            covered,
            end,
            rating: parsed.tags_named(ComponentName::Rating).filter_map(|t| t.score()).last(),
            draw: end.is_none() && parsed.has_tag(ComponentName::Draw),
            answer,
        })
    }

    /// Returns the next prepared hint, or a computed one once the prepared
    /// hints are used up.
    pub fn request_hint(&self, now: DateTime<Utc>) -> Result<Step, SessionError> {
        match self.state {
            SessionState::Ended => return Err(SessionError::SessionEnded),
            SessionState::AwaitingDraw => return Err(SessionError::DrawExpected),
            SessionState::Active => {}
        }
        if self.hints_used >= self.hint_budget {
            return Err(SessionError::HintBudgetExhausted(self.hint_budget));
        }
        let (hint_id, parts) = match self.instance.prepared_hints.get(self.hints_used as usize) {
            Some(h) => (h.hint_id.clone(), h.parts.clone()),
            None => self.computed_hint().ok_or(SessionError::NoHintsAvailable)?,
        };
        let mut next = self.clone();
        let ask = ChatMessage::new(
            Role::User,
            next.transcript.next_index(),
            now,
            vec![MessagePart::text(HINT_REQUEST_TEXT)],
        );
        next.transcript = next.transcript.append(ask)?;
        let reply = ChatMessage::new(Role::Assistant, next.transcript.next_index(), now, parts.clone());
        next.transcript = next.transcript.append(reply)?;
        next.hints_used += 1;
        next.revision += 1;
        Ok(Step {
            session: next,
            directives: vec![Directive::ShowHint { hint_id, parts }],
            responses: Vec::new(),
        })
    }

    fn computed_hint(&self) -> Option<(String, Vec<MessagePart>)> {
        match self.instance.kind {
            PuzzleKind::GuessingWord => {
                let text = hint_list_previous(&self.guessing_config()?);
                Some((PREVIOUS_QUESTIONS_HINT_ID.to_owned(), vec![MessagePart::text(text)]))
            }
            PuzzleKind::LifeRecall => {
                let missing: Vec<&str> = self.missing_slots().into_iter().map(Slot::as_str).collect();
                let text = if missing.is_empty() {
                    "You have remembered every part of it. Tell me anything else that comes to mind.".to_owned()
                } else {
                    format!("Think about the details you have not mentioned yet: {}.", missing.join(", "))
                };
                Some((MISSING_DETAILS_HINT_ID.to_owned(), vec![MessagePart::text(text)]))
            }
            PuzzleKind::Generic => None,
        }
    }

    /// Ends the session at the user's request.
    pub fn abort(&self) -> Result<Step, SessionError> {
        if self.is_ended() {
            return Err(SessionError::SessionEnded);
        }
        let mut next = self.clone();
        next.state = SessionState::Ended;
        next.outcome = Some(Outcome::Aborted);
        next.revision += 1;
        Ok(Step {
            session: next,
            directives: vec![Directive::EndSession {
                outcome: Some(Outcome::Aborted),
            }],
            responses: Vec::new(),
        })
    }

    /// Checks the documented invariants; used by tests and replay.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.hints_used > self.hint_budget {
            return Err(format!("hints used {} exceed budget {}", self.hints_used, self.hint_budget));
        }
        if self.rating.is_some() && self.state != SessionState::Ended {
            return Err("rating recorded on a live session".into());
        }
        if self.outcome.is_some() != (self.state == SessionState::Ended) {
            return Err("outcome and ended state disagree".into());
        }
        if let Some(spec) = &self.instance.slot_spec {
            if !self.covered_slots.is_subset(spec) {
                return Err("covered slots outside the slot spec".into());
            }
        }
        self.transcript.verify().map_err(|e| e.to_string())
    }
}
