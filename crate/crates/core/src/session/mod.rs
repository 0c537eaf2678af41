//! Refinement sessions: turn history, the satisfied/abandoned lifecycle, and
//! per-turn ratio diffs.

mod log;
mod manager;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::composition::{Hundredths, RatioVector};
use crate::gateway::{Gateway, GatewayError, Generation, HistoryEntry, Modality, UserInput};

pub use self::log::{replay, LogEvent, LogRecord, SessionLog};
pub use manager::SessionManager;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session: {0}")]
    NotFound(SessionId),
    #[error("session {0} has a refinement in flight")]
    Busy(SessionId),
    #[error("session {id} is {status}; cannot {action}")]
    InvalidState {
        id: SessionId,
        status: SessionStatus,
        action: &'static str,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("session log: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log line {line}: {detail}")]
    Replay { line: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn generate() -> Self {
        Self(uuid::Uuid::new_v4().simple().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for SessionId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Satisfied,
    Abandoned,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionStatus::Active => "active",
            SessionStatus::Satisfied => "satisfied",
            SessionStatus::Abandoned => "abandoned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RefinementTurn {
    /// 0 for the zero-shot composition.
    pub index: u32,
    pub ratios: RatioVector,
    pub feedback: Option<String>,
    pub changes_made: Option<String>,
    pub justification: String,
    pub latency_ms: u64,
    pub repaired: bool,
    pub modalities: BTreeSet<Modality>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    pub id: SessionId,
    pub original_input: UserInput,
    pub turns: Vec<RefinementTurn>,
    pub status: SessionStatus,
}

impl Session {
    pub fn latest(&self) -> &RefinementTurn {
        self.turns.last().expect("sessions always hold turn 0")
    }

    /// Feedback turns after the zero-shot one.
    pub fn refinement_turns(&self) -> usize {
        self.turns.len().saturating_sub(1)
    }

    /// `(feedback, changes)` for every refinement so far, oldest first.
    pub fn history(&self) -> Vec<HistoryEntry> {
        self.turns
            .iter()
            .filter_map(|t| {
                t.feedback.as_ref().map(|f| HistoryEntry {
                    feedback: f.clone(),
                    changes: t.changes_made.clone(),
                })
            })
            .collect()
    }

    fn require_active(&self, action: &'static str) -> Result<(), SessionError> {
        if self.status == SessionStatus::Active {
            Ok(())
        } else {
            Err(SessionError::InvalidState {
                id: self.id.clone(),
                status: self.status,
                action,
            })
        }
    }
}

fn turn_from(
    index: u32,
    generation: Generation,
    feedback: Option<String>,
    modalities: BTreeSet<Modality>,
) -> RefinementTurn {
    let Generation {
        result, latency_ms, ..
    } = generation;
    RefinementTurn {
        index,
        ratios: result.ratios,
        feedback,
        changes_made: result.changes_made,
        justification: result.justification,
        latency_ms,
        repaired: result.repaired,
        modalities,
    }
}

/// Runs zero-shot generation and wraps the result as turn 0 of a new session.
pub fn start_session(gateway: &Gateway<'_>, input: UserInput) -> Result<Session, SessionError> {
    let generation = gateway.generate(&input)?;
    let modalities = input.modalities();
    Ok(Session {
        id: SessionId::generate(),
        turns: vec![turn_from(0, generation, None, modalities)],
        original_input: input,
        status: SessionStatus::Active,
    })
}

/// Appends one refinement turn conditioned on the whole history.
pub fn refine_session(
    gateway: &Gateway<'_>,
    session: &Session,
    feedback: &str,
) -> Result<Session, SessionError> {
    session.require_active("refine")?;
    let generation = gateway.refine(
        &session.original_input,
        &session.latest().ratios,
        &session.history(),
        feedback,
    )?;
    let mut next = session.clone();
    let index = session.latest().index + 1;
    next.turns.push(turn_from(
        index,
        generation,
        Some(feedback.trim().to_owned()),
        BTreeSet::from([Modality::Text]),
    ));
    Ok(next)
}

pub fn mark_satisfied(session: &Session) -> Result<Session, SessionError> {
    session.require_active("mark satisfied")?;
    Ok(Session {
        status: SessionStatus::Satisfied,
        ..session.clone()
    })
}

pub fn abandon(session: &Session) -> Result<Session, SessionError> {
    session.require_active("abandon")?;
    Ok(Session {
        status: SessionStatus::Abandoned,
        ..session.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Increased,
    Decreased,
    Zeroed,
    Introduced,
}

/// Signed difference in hundredths, shown as `+0.15` / `-0.15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delta(pub i32);

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { '-' } else { '+' };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}", Hundredths(abs))
    }
}

impl Serialize for Delta {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffEntry {
    pub name: String,
    pub change: ChangeKind,
    pub old: Hundredths,
    pub new: Hundredths,
    pub delta: Delta,
}

/// Odorants whose ratio differs between `before` and `after`, channel order.
pub fn turn_diff(before: &RatioVector, after: &RatioVector) -> Vec<DiffEntry> {
    before
        .entries()
        .iter()
        .zip(after.entries())
        .filter(|(a, b)| a.ratio != b.ratio)
        .map(|(a, b)| {
            let (old, new) = (a.ratio, b.ratio);
            let change = if new.is_zero() {
                ChangeKind::Zeroed
            } else if old.is_zero() {
                ChangeKind::Introduced
            } else if new > old {
                ChangeKind::Increased
            } else {
                ChangeKind::Decreased
            };
            DiffEntry {
                name: a.name.clone(),
                change,
                old,
                new,
                delta: Delta(new.0 as i32 - old.0 as i32),
            }
        })
        .collect()
}
