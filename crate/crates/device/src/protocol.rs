//! Newline-terminated ASCII commands and replies.
//!
//! ```text
//! HELLO              -> OK HELLO <name> <channels>
//! STATUS             -> OK IDLE | OK ARMED <steps> | OK DISPENSING <ch> <remaining_ms>
//! PLAY <steps>       -> OK PLAY <steps> | ERR BUSY ...
//! DISPENSE <ch> <ms> -> DONE <ch> <start_ms> <end_ms> | ERR ABORTED <ch> <start_ms> <end_ms>
//! ABORT              -> OK ABORTED | OK IDLE
//! ```
//!
//! Errors are `ERR <code> <detail>` with code BUSY, RANGE, SYNTAX or ABORTED.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const CHANNELS: u8 = 12;
pub const DEVICE_NAME: &str = "aromagen-sim";
/// Longest single dispense accepted, in milliseconds.
pub const MAX_DISPENSE_MS: u64 = 600_000;
/// Most steps a PLAY may claim.
pub const MAX_PLAY_STEPS: u32 = CHANNELS as u32;
pub const MAX_LINE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Hello,
    Status,
    Play { steps: u32 },
    Dispense { channel: u8, ms: u64 },
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Busy,
    Range,
    Syntax,
    Aborted,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Busy => "BUSY",
            ErrorCode::Range => "RANGE",
            ErrorCode::Syntax => "SYNTAX",
            ErrorCode::Aborted => "ABORTED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} {detail}", code.as_str())]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub detail: String,
}

impl ProtocolError {
    pub fn syntax(detail: impl Into<String>) -> Self {
        Self {
            code: ErrorCode::Syntax,
            detail: detail.into(),
        }
    }

    pub fn range(detail: impl Into<String>) -> Self {
        Self {
            code: ErrorCode::Range,
            detail: detail.into(),
        }
    }
}

fn number<T: FromStr>(field: Option<&str>, what: &str) -> Result<T, ProtocolError> {
    let text = field.ok_or_else(|| ProtocolError::syntax(format!("missing {what}")))?;
    text.parse()
        .map_err(|_| ProtocolError::syntax(format!("bad {what}: {text}")))
}

impl FromStr for Command {
    type Err = ProtocolError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut parts = line.split_ascii_whitespace();
        let verb = parts
            .next()
            .ok_or_else(|| ProtocolError::syntax("empty command"))?
            .to_ascii_uppercase();
        let cmd = match verb.as_str() {
            "HELLO" => Command::Hello,
            "STATUS" => Command::Status,
            "ABORT" => Command::Abort,
            "PLAY" => {
                let steps: u32 = number(parts.next(), "step count")?;
                if steps == 0 || steps > MAX_PLAY_STEPS {
                    return Err(ProtocolError::range(format!(
                        "step count {steps} outside 1..={MAX_PLAY_STEPS}"
                    )));
                }
                Command::Play { steps }
            }
            "DISPENSE" => {
                let channel: u64 = number(parts.next(), "channel")?;
                let ms: u64 = number(parts.next(), "duration")?;
                if channel >= u64::from(CHANNELS) {
                    return Err(ProtocolError::range(format!(
                        "channel {channel} outside 0..{CHANNELS}"
                    )));
                }
                if ms == 0 || ms > MAX_DISPENSE_MS {
                    return Err(ProtocolError::range(format!(
                        "duration {ms} outside 1..={MAX_DISPENSE_MS}"
                    )));
                }
                Command::Dispense {
                    channel: channel as u8,
                    ms,
                }
            }
            other => return Err(ProtocolError::syntax(format!("unknown command {other}"))),
        };
        if let Some(extra) = parts.next() {
            return Err(ProtocolError::syntax(format!(
                "unexpected argument {extra}"
            )));
        }
        Ok(cmd)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Hello => f.write_str("HELLO"),
            Command::Status => f.write_str("STATUS"),
            Command::Abort => f.write_str("ABORT"),
            Command::Play { steps } => write!(f, "PLAY {steps}"),
            Command::Dispense { channel, ms } => write!(f, "DISPENSE {channel} {ms}"),
        }
    }
}

/// Half-open interval `[start_ms, end_ms)` of device time on one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub struct Interval {
    pub channel: u8,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Hello {
        name: String,
        channels: u8,
    },
    Idle,
    Armed {
        steps: u32,
    },
    Dispensing {
        channel: u8,
        remaining_ms: u64,
    },
    Playing {
        steps: u32,
    },
    Aborted,
    Done(Interval),
    /// The dispense was cut short; the interval is what actually ran.
    Cut(Interval),
    Error(ProtocolError),
}

impl From<ProtocolError> for Reply {
    fn from(e: ProtocolError) -> Self {
        Reply::Error(e)
    }
}

impl fmt::Display for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Hello { name, channels } => write!(f, "OK HELLO {name} {channels}"),
            Reply::Idle => f.write_str("OK IDLE"),
            Reply::Armed { steps } => write!(f, "OK ARMED {steps}"),
            Reply::Dispensing {
                channel,
                remaining_ms,
            } => write!(f, "OK DISPENSING {channel} {remaining_ms}"),
            Reply::Playing { steps } => write!(f, "OK PLAY {steps}"),
            Reply::Aborted => f.write_str("OK ABORTED"),
            Reply::Done(i) => write!(f, "DONE {} {} {}", i.channel, i.start_ms, i.end_ms),
            Reply::Cut(i) => write!(f, "ERR ABORTED {} {} {}", i.channel, i.start_ms, i.end_ms),
            Reply::Error(e) => write!(f, "ERR {e}"),
        }
    }
}

fn interval<'a>(mut parts: impl Iterator<Item = &'a str>) -> Result<Interval, ProtocolError> {
    Ok(Interval {
        channel: number(parts.next(), "channel")?,
        start_ms: number(parts.next(), "start")?,
        end_ms: number(parts.next(), "end")?,
    })
}

impl FromStr for Reply {
    type Err = ProtocolError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut parts = line.split_ascii_whitespace();
        let head = parts.next().unwrap_or_default();
        let bad = || ProtocolError::syntax(format!("unrecognized reply: {line}"));
        match head {
            "DONE" => Ok(Reply::Done(interval(parts)?)),
            "OK" => match parts.next().ok_or_else(bad)? {
                "HELLO" => Ok(Reply::Hello {
                    name: parts.next().ok_or_else(bad)?.to_owned(),
                    channels: number(parts.next(), "channels")?,
                }),
                "IDLE" => Ok(Reply::Idle),
                "ABORTED" => Ok(Reply::Aborted),
                "ARMED" => Ok(Reply::Armed {
                    steps: number(parts.next(), "steps")?,
                }),
                "PLAY" => Ok(Reply::Playing {
                    steps: number(parts.next(), "steps")?,
                }),
                "DISPENSING" => Ok(Reply::Dispensing {
                    channel: number(parts.next(), "channel")?,
                    remaining_ms: number(parts.next(), "remaining")?,
                }),
                _ => Err(bad()),
            },
            "ERR" => {
                let code = match parts.next().ok_or_else(bad)? {
                    "ABORTED" => return Ok(Reply::Cut(interval(parts)?)),
                    "BUSY" => ErrorCode::Busy,
                    "RANGE" => ErrorCode::Range,
                    "SYNTAX" => ErrorCode::Syntax,
                    _ => return Err(bad()),
                };
                let detail = parts.collect::<Vec<_>>().join(" ");
                Ok(Reply::Error(ProtocolError { code, detail }))
            }
            _ => Err(bad()),
        }
    }
}
