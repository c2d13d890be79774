use std::sync::Arc;

use super::{
    new_session_id, start_session, Engine, Session, SessionError, SessionEvent, SessionOp, SessionStore, Step,
    StoreError,
};
use crate::builtin::WordList;
use crate::clock::{Clock, SystemClock};
use crate::lifelog::LifeLogStore;
use crate::llm::{Provider, RetryPolicy};
use crate::message::MessagePart;
use crate::puzzle::{InstantiationContext, PuzzleRegistry};

/// Everything needed to run and persist sessions: every successful
/// operation is appended to the session's event log before it is returned.
#[derive(Clone)]
pub struct Runtime {
    pub registry: Arc<PuzzleRegistry>,
    pub provider: Arc<dyn Provider>,
    pub retry: RetryPolicy,
    pub store: SessionStore,
    pub clock: Arc<dyn Clock>,
    pub lifelog: Option<Arc<LifeLogStore>>,
    pub words: Option<Arc<WordList>>,
}

impl Runtime {
    pub fn new(registry: Arc<PuzzleRegistry>, provider: Arc<dyn Provider>, store: SessionStore) -> Self {
        Self {
            registry,
            provider,
            retry: RetryPolicy::default(),
            store,
            clock: Arc::new(SystemClock),
            lifelog: None,
            words: None,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_lifelog(mut self, lifelog: Arc<LifeLogStore>) -> Self {
        self.lifelog = Some(lifelog);
        self
    }

    pub fn with_words(mut self, words: Arc<WordList>) -> Self {
        self.words = Some(words);
        self
    }

    fn engine(&self) -> Engine<'_> {
        Engine::new(self.provider.as_ref(), &self.retry)
    }

    pub fn start(&self, group_id: &str, seed: u64, session_id: Option<String>) -> Result<Step, SessionError> {
        let now = self.clock.now();
        let mut ctx = InstantiationContext::new(seed, now);
        if let Some(l) = &self.lifelog {
            ctx = ctx.with_lifelog(l);
        }
        if let Some(w) = &self.words {
            ctx = ctx.with_word_list(w);
        }
        let id = session_id.unwrap_or_else(new_session_id);
        if self.store.exists(&id) {
            return Err(StoreError::Exists(id).into());
        }
        self.store.log_path(&id)?;
        let step = start_session(&self.registry, group_id, &ctx, self.engine(), id)?;
        let op = SessionOp::Start {
            session_id: step.session.session_id.clone(),
            hint_budget: step.session.hint_budget,
            instance: Box::new(step.session.instance.clone()),
        };
        self.record(op, now, &step)?;
        Ok(step)
    }

    pub fn user_turn(&self, session: &Session, parts: Vec<MessagePart>) -> Result<Step, SessionError> {
        let now = self.clock.now();
        let step = session.user_turn(parts.clone(), self.engine(), now)?;
        self.record(SessionOp::UserTurn { parts }, now, &step)?;
        Ok(step)
    }

    pub fn request_hint(&self, session: &Session) -> Result<Step, SessionError> {
        let now = self.clock.now();
        let step = session.request_hint(now)?;
        self.record(SessionOp::Hint {}, now, &step)?;
        Ok(step)
    }

    pub fn abort(&self, session: &Session) -> Result<Step, SessionError> {
        let now = self.clock.now();
        let step = session.abort()?;
        self.record(SessionOp::Abort {}, now, &step)?;
        Ok(step)
    }

    pub fn load(&self, session_id: &str) -> Result<Session, SessionError> {
        self.store.load(session_id)
    }

    fn record(&self, op: SessionOp, at: chrono::DateTime<chrono::Utc>, step: &Step) -> Result<(), SessionError> {
        let event = SessionEvent::new(op, at, step.responses.clone(), step.session.clone());
        self.store.append(&event)?;
        Ok(())
    }
}
