use std::collections::VecDeque;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::task::{JoinHandle, JoinSet};

use crate::clock::Clock;
use crate::device::{ConnId, Device, Status};
use crate::protocol::{Command, ProtocolError, Reply, MAX_LINE};

/// A running simulator listening on a TCP socket.
pub struct Simulator<C: Clock> {
    addr: SocketAddr,
    device: Arc<Device<C>>,
    task: JoinHandle<()>,
}

impl<C: Clock> Simulator<C> {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn device(&self) -> &Arc<Device<C>> {
        &self.device
    }

    /// Stops accepting and drops every open connection.
    pub fn shutdown(self) {}

    /// Runs until the accept loop ends.
    pub async fn wait(mut self) {
        let _ = (&mut self.task).await;
    }
}

impl<C: Clock> Drop for Simulator<C> {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Binds `addr` and serves the protocol with a fresh idle device.
pub async fn serve<C: Clock>(addr: impl ToSocketAddrs, clock: C) -> io::Result<Simulator<C>> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let device = Arc::new(Device::new(clock));
    tracing::info!(%addr, "device simulator listening");
    let task = tokio::spawn(accept_loop(listener, Arc::clone(&device)));
    Ok(Simulator { addr, device, task })
}

async fn accept_loop<C: Clock>(listener: TcpListener, device: Arc<Device<C>>) {
    let mut connections = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let device = Arc::clone(&device);
                    connections.spawn(async move {
                        if let Err(e) = handle_connection(device, stream).await {
                            tracing::debug!(%peer, %e, "connection closed with error");
                        }
                    });
                }
                Err(e) => tracing::warn!(%e, "accept failed"),
            },
            Some(_) = connections.join_next(), if !connections.is_empty() => {}
        }
    }
}

struct Release<'a, C: Clock> {
    device: &'a Device<C>,
    conn: ConnId,
}

impl<C: Clock> Drop for Release<'_, C> {
    fn drop(&mut self) {
        self.device.disconnect(self.conn);
    }
}

enum Pending {
    Line(Result<String, ProtocolError>),
    /// Already executed while a dispense was running; only the reply is owed.
    Reply(Reply),
}

/// Newline-delimited reader whose `next` is cancel-safe: bytes already
/// read stay buffered if the future is dropped.
struct Lines<R> {
    reader: R,
    buf: Vec<u8>,
    discarding: bool,
}

impl<R: AsyncRead + Unpin> Lines<R> {
    fn new(reader: R) -> Self {
        Self {
            reader,
            buf: Vec::new(),
            discarding: false,
        }
    }

    /// The next line without its terminator, or `None` at end of stream.
    async fn next(&mut self) -> io::Result<Option<Result<String, ProtocolError>>> {
        loop {
            if let Some(pos) = self.buf.iter().position(|&b| b == b'\n') {
                let raw: Vec<u8> = self.buf.drain(..=pos).collect();
                if std::mem::take(&mut self.discarding) {
                    return Ok(Some(Err(ProtocolError::syntax(format!(
                        "line longer than {MAX_LINE} bytes"
                    )))));
                }
                return Ok(Some(match String::from_utf8(raw) {
                    Ok(text) => Ok(text.trim_end_matches(['\r', '\n']).to_owned()),
                    Err(_) => Err(ProtocolError::syntax("line is not valid UTF-8")),
                }));
            }
            if self.buf.len() > MAX_LINE {
                self.buf.clear();
                self.discarding = true;
            }
            let mut chunk = [0u8; 512];
            let n = self.reader.read(&mut chunk).await?;
            if n == 0 {
                return Ok(None);
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }
}

/// Speaks the protocol on one stream until the peer hangs up.
///
/// Replies come back in command order. While a dispense runs the connection
/// keeps reading: an `ABORT` takes effect immediately and a hang-up cuts
/// the step short.
pub async fn handle_connection<C, S>(device: Arc<Device<C>>, stream: S) -> io::Result<()>
where
    C: Clock,
    S: AsyncRead + AsyncWrite + Send,
{
    let conn = device.connect();
    let _release = Release {
        device: &device,
        conn,
    };
    let (reader, mut writer) = tokio::io::split(stream);
    let mut lines = Lines::new(reader);
    let mut pending: VecDeque<Pending> = VecDeque::new();

    loop {
        let next = match pending.pop_front() {
            Some(p) => p,
            None => match lines.next().await? {
                Some(line) => Pending::Line(line),
                None => return Ok(()),
            },
        };
        let command = match next {
            Pending::Reply(r) => {
                send(&mut writer, &r).await?;
                continue;
            }
            Pending::Line(Err(e)) => {
                send(&mut writer, &e.into()).await?;
                continue;
            }
            Pending::Line(Ok(text)) if text.trim().is_empty() => continue,
            Pending::Line(Ok(text)) => match text.parse::<Command>() {
                Ok(c) => c,
                Err(e) => {
                    send(&mut writer, &e.into()).await?;
                    continue;
                }
            },
        };

        let reply = match command {
            Command::Hello => device.hello(),
            Command::Status => status_reply(device.status()),
            Command::Abort => abort_reply(&device),
            Command::Play { steps } => match device.claim(conn, steps) {
                Ok(()) => Reply::Playing { steps },
                Err(e) => e.into(),
            },
            Command::Dispense { channel, ms } => {
                let step = device.dispense(conn, channel, ms);
                tokio::pin!(step);
                loop {
                    tokio::select! {
                        outcome = &mut step => break outcome.map_or_else(|r| r, Reply::Done),
                        item = lines.next() => match item? {
                            // Dropping `step` records the cut interval.
                            None => return Ok(()),
                            Some(line) => {
                                let is_abort = line.as_deref().ok()
                                    .and_then(|l| l.parse::<Command>().ok())
                                    == Some(Command::Abort);
                                pending.push_back(if is_abort {
                                    Pending::Reply(abort_reply(&device))
                                } else {
                                    Pending::Line(line)
                                });
                            }
                        },
                    }
                }
            }
        };
        send(&mut writer, &reply).await?;
    }
}

fn abort_reply<C: Clock>(device: &Device<C>) -> Reply {
    if device.abort() {
        Reply::Aborted
    } else {
        Reply::Idle
    }
}

fn status_reply(status: Status) -> Reply {
    match status {
        Status::Idle => Reply::Idle,
        Status::Armed { steps } => Reply::Armed { steps },
        Status::Dispensing {
            channel,
            remaining_ms,
        } => Reply::Dispensing {
            channel,
            remaining_ms,
        },
    }
}

async fn send<W: AsyncWrite + Unpin>(writer: &mut W, reply: &Reply) -> io::Result<()> {
    let mut line = reply.to_string();
    line.push('\n');
    writer.write_all(line.as_bytes()).await?;
    writer.flush().await
}
