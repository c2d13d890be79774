//! Multimodal conversation primitives: message parts, chat messages and the
//! append-only transcript every other module builds on.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::MediaId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    System,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::System => "system",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartKind {
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "image-ref")]
    ImageRef,
    #[serde(rename = "audio-ref")]
    AudioRef,
}

/// One piece of a message. The payload fields are kept flat (rather than an
/// enum) so that persisted or client-supplied parts with a mismatched payload
/// can still be loaded and reported by [`validate_message`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MessagePart {
    pub kind: PartKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_id: Option<MediaId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mime: Option<String>,
}

impl MessagePart {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            kind: PartKind::Text,
            text: Some(text.into()),
            media_id: None,
            mime: None,
        }
    }

    pub fn image(media_id: MediaId, mime: impl Into<String>) -> Self {
        Self {
            kind: PartKind::ImageRef,
            text: None,
            media_id: Some(media_id),
            mime: Some(mime.into()),
        }
    }

    pub fn audio(media_id: MediaId, mime: impl Into<String>) -> Self {
        Self {
            kind: PartKind::AudioRef,
            text: None,
            media_id: Some(media_id),
            mime: Some(mime.into()),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self.kind {
            PartKind::Text => self.text.as_deref(),
            _ => None,
        }
    }

    pub fn is_image(&self) -> bool {
        self.kind == PartKind::ImageRef && self.media_id.is_some()
    }

    fn payload_matches_kind(&self) -> bool {
        match self.kind {
            PartKind::Text => self.text.is_some() && self.media_id.is_none(),
            PartKind::ImageRef | PartKind::AudioRef => {
                self.media_id.is_some() && self.text.is_none()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChatMessage {
    pub role: Role,
    pub turn_index: u32,
    pub timestamp: DateTime<Utc>,
    pub parts: Vec<MessagePart>,
}

impl ChatMessage {
    pub fn new(role: Role, turn_index: u32, timestamp: DateTime<Utc>, parts: Vec<MessagePart>) -> Self {
        Self {
            role,
            turn_index,
            timestamp,
            parts,
        }
    }

    /// Concatenation of all text parts, separated by single spaces.
    pub fn text(&self) -> String {
        let texts: Vec<&str> = self.parts.iter().filter_map(MessagePart::as_text).collect();
        texts.join(" ")
    }

    pub fn has_image(&self) -> bool {
        self.parts.iter().any(MessagePart::is_image)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyParts,
    KindPayloadMismatch { part: usize },
    MissingMime { part: usize },
    SystemAfterStart { turn_index: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyParts => f.write_str("empty parts"),
            Violation::KindPayloadMismatch { part } => {
                write!(f, "kind/payload mismatch (part {part})")
            }
            Violation::MissingMime { part } => write!(f, "missing mime (part {part})"),
            Violation::SystemAfterStart { turn_index } => {
                write!(f, "system message at turn {turn_index}")
            }
        }
    }
}

/// Returns every invariant violation of `msg`; an empty list means the
/// message is valid.
pub fn validate_message(msg: &ChatMessage) -> Vec<Violation> {
    let mut violations = Vec::new();
    if msg.parts.is_empty() {
        violations.push(Violation::EmptyParts);
    }
    for (i, part) in msg.parts.iter().enumerate() {
        if !part.payload_matches_kind() {
            violations.push(Violation::KindPayloadMismatch { part: i });
        } else if part.kind != PartKind::Text && part.mime.as_deref().unwrap_or("").is_empty() {
            violations.push(Violation::MissingMime { part: i });
        }
    }
    if msg.role == Role::System && msg.turn_index != 0 {
        violations.push(Violation::SystemAfterStart {
            turn_index: msg.turn_index,
        });
    }
    violations
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("turn index {got} does not follow transcript of length {expected}")]
    IndexMismatch { expected: u32, got: u32 },
    #[error("{role} message at turn {turn_index} breaks role alternation")]
    RoleViolation { role: Role, turn_index: u32 },
    #[error("invalid message: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    InvalidMessage(Vec<Violation>),
}

/// Ordered, self-indexing list of messages. Updated by replacement.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    messages: Vec<ChatMessage>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn next_index(&self) -> u32 {
        self.messages.len() as u32
    }

    pub fn last(&self) -> Option<&ChatMessage> {
        self.messages.last()
    }

    pub fn last_user_text(&self) -> Option<String> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(ChatMessage::text)
    }

    /// Returns a new transcript with `msg` appended.
    pub fn append(&self, msg: ChatMessage) -> Result<Transcript, TranscriptError> {
        let expected = self.next_index();
        if msg.turn_index != expected {
            return Err(TranscriptError::IndexMismatch {
                expected,
                got: msg.turn_index,
            });
        }
        let violations = validate_message(&msg);
        if !violations.is_empty() {
            return Err(TranscriptError::InvalidMessage(violations));
        }
        if !self.role_fits(msg.role) {
            return Err(TranscriptError::RoleViolation {
                role: msg.role,
                turn_index: msg.turn_index,
            });
        }
        let mut messages = self.messages.clone();
        messages.push(msg);
        Ok(Transcript { messages })
    }

    fn role_fits(&self, role: Role) -> bool {
        match (role, self.messages.last().map(|m| m.role)) {
            (Role::System, None) => true,
            (Role::System, Some(_)) => false,
            (_, None) | (_, Some(Role::System)) => true,
            (role, Some(prev)) => role != prev,
        }
    }

    /// Re-checks every transcript invariant; used when loading persisted data.
    pub fn verify(&self) -> Result<(), TranscriptError> {
        let mut rebuilt = Transcript::new();
        for msg in &self.messages {
            rebuilt = rebuilt.append(msg.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn at(i: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 9, 21, 10, 0, 0).unwrap() + chrono::Duration::seconds(i as i64)
    }

    fn text_msg(role: Role, i: u32, text: &str) -> ChatMessage {
        ChatMessage::new(role, i, at(i), vec![MessagePart::text(text)])
    }

    #[test]
    fn append_to_empty_with_system() {
        let t = Transcript::new()
            .append(text_msg(Role::System, 0, "sys"))
            .unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn append_keeps_alternation() {
        let t = Transcript::new()
            .append(text_msg(Role::System, 0, "sys"))
            .unwrap()
            .append(text_msg(Role::User, 1, "hi"))
            .unwrap();
        let before = t.clone();
        let t2 = t.append(text_msg(Role::Assistant, 2, "hello")).unwrap();
        assert_eq!(t2.len(), 3);
        assert_eq!(&t2.messages()[..2], before.messages());
        assert_eq!(t2.last().unwrap().text(), "hello");
    }

    #[test]
    fn append_wrong_index() {
        let t = Transcript::new()
            .append(text_msg(Role::System, 0, "sys"))
            .unwrap();
        let err = t.append(text_msg(Role::User, 5, "hi")).unwrap_err();
        assert_eq!(err, TranscriptError::IndexMismatch { expected: 1, got: 5 });
    }

    #[test]
    fn append_rejects_repeated_role() {
        let t = Transcript::new()
            .append(text_msg(Role::System, 0, "sys"))
            .unwrap()
            .append(text_msg(Role::User, 1, "a"))
            .unwrap();
        let err = t.append(text_msg(Role::User, 2, "b")).unwrap_err();
        assert!(matches!(err, TranscriptError::RoleViolation { role: Role::User, .. }));
    }

    #[test]
    fn system_only_at_start() {
        let t = Transcript::new().append(text_msg(Role::User, 0, "a")).unwrap();
        assert!(t.append(text_msg(Role::System, 1, "late")).is_err());
        let v = validate_message(&text_msg(Role::System, 3, "late"));
        assert_eq!(v, vec![Violation::SystemAfterStart { turn_index: 3 }]);
    }

    #[test]
    fn validate_plain_text_ok() {
        assert!(validate_message(&text_msg(Role::User, 1, "hello")).is_empty());
    }

    #[test]
    fn validate_empty_parts() {
        let msg = ChatMessage::new(Role::User, 1, at(1), vec![]);
        let v = validate_message(&msg);
        assert_eq!(v, vec![Violation::EmptyParts]);
        assert_eq!(v[0].to_string(), "empty parts");
    }

    #[test]
    fn validate_kind_payload_mismatch() {
        let part = MessagePart {
            kind: PartKind::Text,
            text: None,
            media_id: Some(MediaId::for_bytes(b"img")),
            mime: Some("image/png".into()),
        };
        let msg = ChatMessage::new(Role::User, 1, at(1), vec![part]);
        let v = validate_message(&msg);
        assert_eq!(v, vec![Violation::KindPayloadMismatch { part: 0 }]);
        assert!(v[0].to_string().starts_with("kind/payload mismatch"));
    }

    #[test]
    fn wire_shape() {
        let msg = ChatMessage::new(
            Role::User,
            2,
            at(0),
            vec![
                MessagePart::text("look"),
                MessagePart::image(MediaId::for_bytes(b"x"), "image/jpeg"),
            ],
        );
        let json = serde_json::to_value(&msg).unwrap();
        assert_eq!(json["role"], "user");
        assert_eq!(json["turnIndex"], 2);
        assert_eq!(json["timestamp"], "2024-09-21T10:00:00Z");
        assert_eq!(json["parts"][0], serde_json::json!({"kind": "text", "text": "look"}));
        assert_eq!(json["parts"][1]["kind"], "image-ref");
        assert_eq!(json["parts"][1]["mime"], "image/jpeg");
        assert!(json["parts"][1]["mediaId"].is_string());
        let back: ChatMessage = serde_json::from_value(json).unwrap();
        assert_eq!(back, msg);
    }

    fn arb_part() -> impl Strategy<Value = MessagePart> {
        prop_oneof![
            "[a-z ]{0,12}".prop_map(MessagePart::text),
            any::<[u8; 4]>().prop_map(|b| MessagePart::image(MediaId::for_bytes(&b), "image/png")),
            any::<[u8; 4]>().prop_map(|b| MessagePart::audio(MediaId::for_bytes(&b), "audio/wav")),
        ]
    }

    proptest! {
        #[test]
        fn appended_indices_are_contiguous(
            with_system in any::<bool>(),
            first_user in any::<bool>(),
            parts in prop::collection::vec(prop::collection::vec(arb_part(), 1..4), 0..20),
        ) {
            let mut t = Transcript::new();
            if with_system {
                t = t.append(text_msg(Role::System, 0, "sys")).unwrap();
            }
            let mut role = if first_user { Role::User } else { Role::Assistant };
            for p in parts {
                let i = t.next_index();
                t = t.append(ChatMessage::new(role, i, at(i), p)).unwrap();
                role = if role == Role::User { Role::Assistant } else { Role::User };
            }
            let idx: Vec<u32> = t.messages().iter().map(|m| m.turn_index).collect();
            let expected: Vec<u32> = (0..t.len() as u32).collect();
            prop_assert_eq!(idx, expected);
            prop_assert!(t.verify().is_ok());
        }

        #[test]
        fn validate_is_total(
            kind in prop_oneof![Just(PartKind::Text), Just(PartKind::ImageRef), Just(PartKind::AudioRef)],
            text in proptest::option::of(".{0,8}"),
            media in any::<bool>(),
            mime in proptest::option::of("[a-z/]{0,8}"),
            role in prop_oneof![Just(Role::User), Just(Role::Assistant), Just(Role::System)],
            turn in 0u32..5,
            n in 0usize..3,
        ) {
            let part = MessagePart {
                kind,
                text,
                media_id: media.then(|| MediaId::for_bytes(b"m")),
                mime,
            };
            let msg = ChatMessage::new(role, turn, at(0), vec![part; n]);
            let _ = validate_message(&msg);
        }
    }
}
