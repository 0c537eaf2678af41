use std::io;

use aromagen_core::DispenseSchedule;
use serde::Serialize;
use thiserror::Error;
use tokio::io::{
    AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader, ReadHalf, WriteHalf,
};
use tokio::net::{TcpStream, ToSocketAddrs};

use crate::protocol::{Command, ErrorCode, ProtocolError, Reply};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("device busy: {0}")]
    Busy(String),
    #[error("rejected by device: {0}")]
    Rejected(ProtocolError),
    #[error("empty schedule")]
    EmptySchedule,
    #[error("unexpected reply to {command}: {reply}")]
    Unexpected { command: String, reply: String },
    #[error("connection closed by device")]
    Disconnected,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One dispensed step, timed relative to the start of the cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReportStep {
    pub channel: u8,
    pub requested_ms: u64,
    pub started_at_ms: u64,
    pub ended_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DispenseReport {
    pub steps: Vec<ReportStep>,
    pub completed: bool,
    /// Index into the schedule of the step that did not finish.
    pub aborted_at_step: Option<usize>,
}

impl DispenseReport {
    /// Time actually spent dispensing.
    pub fn dispensed_ms(&self) -> u64 {
        self.steps
            .iter()
            .map(|s| s.ended_at_ms - s.started_at_ms)
            .sum()
    }

    /// Steps follow one another with no gap or overlap.
    pub fn is_contiguous(&self) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[0].ended_at_ms == w[1].started_at_ms)
    }
}

/// A protocol connection to a device.
pub struct DeviceClient<S> {
    reader: BufReader<ReadHalf<S>>,
    writer: WriteHalf<S>,
}

impl DeviceClient<TcpStream> {
    pub async fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Ok(Self::new(TcpStream::connect(addr).await?))
    }
}

impl<S: AsyncRead + AsyncWrite> DeviceClient<S> {
    pub fn new(stream: S) -> Self {
        let (r, writer) = tokio::io::split(stream);
        Self {
            reader: BufReader::new(r),
            writer,
        }
    }

    pub async fn send(&mut self, command: Command) -> Result<(), ClientError> {
        self.writer
            .write_all(format!("{command}\n").as_bytes())
            .await?;
        self.writer.flush().await?;
        Ok(())
    }

    pub async fn receive(&mut self) -> Result<Reply, ClientError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line).await? == 0 {
            return Err(ClientError::Disconnected);
        }
        line.trim_end()
            .parse()
            .map_err(|_| ClientError::Unexpected {
                command: "(any)".into(),
                reply: line.trim_end().to_owned(),
            })
    }

    pub async fn request(&mut self, command: Command) -> Result<Reply, ClientError> {
        self.send(command).await?;
        self.receive().await
    }

    pub async fn hello(&mut self) -> Result<Reply, ClientError> {
        self.request(Command::Hello).await
    }

    pub async fn status(&mut self) -> Result<Reply, ClientError> {
        self.request(Command::Status).await
    }

    pub async fn abort(&mut self) -> Result<Reply, ClientError> {
        self.request(Command::Abort).await
    }

    /// Claims the device and dispenses each step in order.
    ///
    /// An abort or a dropped connection mid-cycle yields a report with
    /// `completed == false` rather than an error.
    pub async fn play_schedule(
        &mut self,
        schedule: &DispenseSchedule,
    ) -> Result<DispenseReport, ClientError> {
        if schedule.steps.is_empty() {
            return Err(ClientError::EmptySchedule);
        }
        let steps = u32::try_from(schedule.steps.len()).unwrap_or(u32::MAX);
        let play = Command::Play { steps };
        match self.request(play).await? {
            Reply::Playing { .. } => {}
            other => return Err(refusal(play, other)),
        }

        let mut report = DispenseReport {
            steps: Vec::with_capacity(schedule.steps.len()),
            completed: false,
            aborted_at_step: None,
        };
        let mut origin = None;
        for (i, step) in schedule.steps.iter().enumerate() {
            let command = Command::Dispense {
                channel: step.channel,
                ms: step.duration_ms,
            };
            let reply = match self.request(command).await {
                Ok(r) => r,
                Err(ClientError::Disconnected) => {
                    report.aborted_at_step = Some(i);
                    return Ok(report);
                }
                Err(ClientError::Io(e)) => {
                    tracing::warn!(%e, step = i, "device connection lost");
                    report.aborted_at_step = Some(i);
                    return Ok(report);
                }
                Err(e) => return Err(e),
            };
            let (interval, done) = match reply {
                Reply::Done(iv) => (iv, true),
                Reply::Cut(iv) => (iv, false),
                other => return Err(refusal(command, other)),
            };
            let origin = *origin.get_or_insert(interval.start_ms);
            report.steps.push(ReportStep {
                channel: interval.channel,
                requested_ms: step.duration_ms,
                started_at_ms: interval.start_ms - origin,
                ended_at_ms: interval.end_ms - origin,
            });
            if !done {
                report.aborted_at_step = Some(i);
                return Ok(report);
            }
        }
        report.completed = true;
        Ok(report)
    }
}

fn refusal(command: Command, reply: Reply) -> ClientError {
    match reply {
        Reply::Error(e) if e.code == ErrorCode::Busy => ClientError::Busy(e.detail),
        Reply::Error(e) => ClientError::Rejected(e),
        other => ClientError::Unexpected {
            command: command.to_string(),
            reply: other.to_string(),
        },
    }
}
