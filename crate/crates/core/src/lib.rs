//! Engine for LLM-driven cognitive-training puzzles: message model, control
//! tag protocol, puzzle groups and instances, life log, model adapters and
//! persisted training sessions.

pub mod builtin;
pub mod clock;
pub mod data;
pub mod lifelog;
pub mod llm;
pub mod media;
pub mod message;
pub mod puzzle;
pub mod session;
pub mod tags;
pub mod template;

pub use clock::{Clock, StepClock, SystemClock};
pub use message::{ChatMessage, MessagePart, Role, Transcript};
pub use puzzle::{PuzzleGroup, PuzzleInstance, PuzzleRegistry};
pub use session::{Outcome, Runtime, Session, SessionError, SessionState, Step};
pub use tags::{parse_model_output, Directive, ParsedOutput};
