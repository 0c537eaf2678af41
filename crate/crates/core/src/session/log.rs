//! Append-only JSONL session log and replay.
//!
//! One `created` record carries the original input and turn 0, each
//! refinement adds a `turn` record, and `satisfied` / `abandoned` close the
//! session. Replaying the records rebuilds the sessions exactly.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{turn_diff, RefinementTurn, Session, SessionError, SessionId, SessionStatus};
use crate::composition::RatioVector;
use crate::gateway::{Modality, UserInput};
use crate::palette::Palette;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogEvent {
    Created,
    Turn,
    Satisfied,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub session_id: SessionId,
    pub event: LogEvent,
    pub turn_index: Option<u32>,
    pub ratios: Option<IndexMap<String, String>>,
    pub feedback: Option<String>,
    pub changes_made: Option<String>,
    pub justification: Option<String>,
    pub latency_ms: Option<u64>,
    pub repaired: Option<bool>,
    pub modalities: Option<BTreeSet<Modality>>,
    /// RFC 3339, UTC.
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<UserInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement_turns: Option<u32>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl LogRecord {
    fn lifecycle(session: &Session, event: LogEvent) -> Self {
        Self {
            session_id: session.id.clone(),
            event,
            turn_index: None,
            ratios: None,
            feedback: None,
            changes_made: None,
            justification: None,
            latency_ms: None,
            repaired: None,
            modalities: None,
            timestamp: now(),
            input: None,
            diff: None,
            refinement_turns: None,
        }
    }

    fn with_turn(mut self, turn: &RefinementTurn) -> Self {
        let ratios = turn
            .ratios
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.ratio.to_string()))
            .collect();
        self.turn_index = Some(turn.index);
        self.ratios = Some(ratios);
        self.feedback = turn.feedback.clone();
        self.changes_made = turn.changes_made.clone();
        self.justification = Some(turn.justification.clone());
        self.latency_ms = Some(turn.latency_ms);
        self.repaired = Some(turn.repaired);
        self.modalities = Some(turn.modalities.clone());
        self
    }

    /// Record for a freshly started session (turn 0 included).
    pub fn created(session: &Session) -> Self {
        let mut r = Self::lifecycle(session, LogEvent::Created).with_turn(&session.turns[0]);
        r.input = Some(session.original_input.clone());
        r
    }

    /// Record for the latest turn, with its diff against the previous one.
    pub fn turn(session: &Session) -> Self {
        let latest = session.latest();
        let mut r = Self::lifecycle(session, LogEvent::Turn).with_turn(latest);
        if let Some(prev) = session
            .turns
            .len()
            .checked_sub(2)
            .map(|i| &session.turns[i])
        {
            let diff = turn_diff(&prev.ratios, &latest.ratios);
            r.diff = Some(serde_json::to_value(diff).expect("diff serializes"));
        }
        r
    }

    /// Terminal record for a satisfied or abandoned session.
    pub fn closed(session: &Session) -> Self {
        let event = match session.status {
            SessionStatus::Abandoned => LogEvent::Abandoned,
            _ => LogEvent::Satisfied,
        };
        let mut r = Self::lifecycle(session, event);
        r.turn_index = Some(session.latest().index);
        r.refinement_turns = Some(session.refinement_turns() as u32);
        r
    }
}

/// Appends records to a JSONL file; each record is a single write.
pub struct SessionLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl SessionLog {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &LogRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)?;
        file.flush()
    }

    /// Parses every non-blank line, reporting the 1-based line number of the
    /// first bad one.
    pub fn read_records(reader: impl BufRead) -> Result<Vec<LogRecord>, SessionError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| SessionError::Replay {
                line: i + 1,
                detail: e.to_string(),
            })?;
            records.push(record);
        }
        Ok(records)
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, SessionError> {
        let file = File::open(path)?;
        Self::read_records(BufReader::new(file))
    }
}

fn turn_from_record(
    record: &LogRecord,
    palette: &Palette,
    line: usize,
) -> Result<RefinementTurn, SessionError> {
    let bad = |detail: String| SessionError::Replay { line, detail };
    let ratios_map = record
        .ratios
        .as_ref()
        .ok_or_else(|| bad("turn record without ratios".into()))?;
    let map = ratios_map
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let ratios =
        RatioVector::from_decimal_strings(palette, &map).map_err(|e| bad(e.to_string()))?;
    Ok(RefinementTurn {
        index: record
            .turn_index
            .ok_or_else(|| bad("turn record without turn_index".into()))?,
        ratios,
        feedback: record.feedback.clone(),
        changes_made: record.changes_made.clone(),
        justification: record.justification.clone().unwrap_or_default(),
        latency_ms: record.latency_ms.unwrap_or_default(),
        repaired: record.repaired.unwrap_or_default(),
        modalities: record.modalities.clone().unwrap_or_default(),
    })
}

/// Rebuilds sessions from log records, in order of creation.
pub fn replay(records: &[LogRecord], palette: &Palette) -> Result<Vec<Session>, SessionError> {
    let mut order: Vec<SessionId> = Vec::new();
    let mut sessions: HashMap<SessionId, Session> = HashMap::new();
    for (i, record) in records.iter().enumerate() {
        let line = i + 1;
        let bad = |detail: String| SessionError::Replay { line, detail };
        let id = &record.session_id;
        match record.event {
            LogEvent::Created => {
                if sessions.contains_key(id) {
                    return Err(bad(format!("session {id} created twice")));
                }
                let turn = turn_from_record(record, palette, line)?;
                if turn.index != 0 || turn.feedback.is_some() {
                    return Err(bad(
                        "created record must hold turn 0 without feedback".into()
                    ));
                }
                let input = record
                    .input
                    .clone()
                    .ok_or_else(|| bad("created record without input".into()))?;
                order.push(id.clone());
                sessions.insert(
                    id.clone(),
                    Session {
                        id: id.clone(),
                        original_input: input,
                        turns: vec![turn],
                        status: SessionStatus::Active,
                    },
                );
            }
            LogEvent::Turn => {
                let session = sessions
                    .get_mut(id)
                    .ok_or_else(|| bad(format!("turn for unknown session {id}")))?;
                if session.status != SessionStatus::Active {
                    return Err(bad(format!("turn after session {id} closed")));
                }
                let turn = turn_from_record(record, palette, line)?;
                if turn.index as usize != session.turns.len() {
                    return Err(bad(format!(
                        "turn_index {} out of sequence (expected {})",
                        turn.index,
                        session.turns.len()
                    )));
                }
                session.turns.push(turn);
            }
            LogEvent::Satisfied | LogEvent::Abandoned => {
                let session = sessions
                    .get_mut(id)
                    .ok_or_else(|| bad(format!("lifecycle event for unknown session {id}")))?;
                if session.status != SessionStatus::Active {
                    return Err(bad(format!("session {id} closed twice")));
                }
                session.status = if record.event == LogEvent::Satisfied {
                    SessionStatus::Satisfied
                } else {
                    SessionStatus::Abandoned
                };
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|id| sessions.remove(&id).expect("ordered ids exist"))
        .collect())
}
