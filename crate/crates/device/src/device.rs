use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};

use tokio::sync::oneshot;

use crate::clock::Clock;
use crate::protocol::{Interval, ProtocolError, Reply, CHANNELS, DEVICE_NAME};

/// Identifies one protocol connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConnId(u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Idle,
    /// A cycle is claimed but no step is running.
    Armed {
        steps: u32,
    },
    Dispensing {
        channel: u8,
        remaining_ms: u64,
    },
}

struct Active {
    channel: u8,
    start: u64,
    end: u64,
    abort: Option<oneshot::Sender<()>>,
}

#[derive(Default)]
struct State {
    /// Connection holding the current cycle and its unfinished step count.
    owner: Option<(ConnId, u32)>,
    /// Connection whose cycle was aborted between steps; its next dispense
    /// is refused once.
    revoked: Option<ConnId>,
    active: Option<Active>,
    /// End of the last recorded interval; new steps never start before it.
    cursor: u64,
    trace: Vec<Interval>,
}

/// The simulated dispenser: twelve channels, at most one releasing at a time.
pub struct Device<C> {
    clock: C,
    next_conn: AtomicU64,
    state: Mutex<State>,
}

/// Finalizes the running step if the dispensing future is dropped.
struct StepGuard<'a, C: Clock> {
    device: &'a Device<C>,
    conn: ConnId,
    armed: bool,
}

impl<C: Clock> Drop for StepGuard<'_, C> {
    fn drop(&mut self) {
        if self.armed {
            self.device.finish(self.conn, false);
        }
    }
}

impl<C: Clock> Device<C> {
    pub fn new(clock: C) -> Self {
        Self {
            clock,
            next_conn: AtomicU64::new(1),
            state: Mutex::default(),
        }
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn connect(&self) -> ConnId {
        ConnId(self.next_conn.fetch_add(1, Ordering::Relaxed))
    }

    /// Releases anything `conn` held.
    pub fn disconnect(&self, conn: ConnId) {
        let mut s = self.state();
        if s.owner.is_some_and(|(o, _)| o == conn) {
            s.owner = None;
        }
        if s.revoked == Some(conn) {
            s.revoked = None;
        }
    }

    /// Every interval dispensed so far, in order.
    pub fn trace(&self) -> Vec<Interval> {
        self.state().trace.clone()
    }

    pub fn status(&self) -> Status {
        let s = self.state();
        if let Some(a) = &s.active {
            let now = self.clock.now_ms();
            return Status::Dispensing {
                channel: a.channel,
                remaining_ms: a.end.saturating_sub(now.max(a.start)),
            };
        }
        match s.owner {
            Some((_, steps)) => Status::Armed { steps },
            None => Status::Idle,
        }
    }

    /// Claims the device for a cycle of `steps` dispenses.
    pub fn claim(&self, conn: ConnId, steps: u32) -> Result<(), ProtocolError> {
        let mut s = self.state();
        if s.owner.is_some() || s.active.is_some() {
            return Err(busy());
        }
        s.revoked = None;
        s.owner = Some((conn, steps));
        Ok(())
    }

    /// Stops the running step and cancels any claimed cycle. Returns false if
    /// the device was idle.
    pub fn abort(&self) -> bool {
        let mut s = self.state();
        let mut acted = false;
        if let Some(active) = s.active.as_mut() {
            if let Some(tx) = active.abort.take() {
                let _ = tx.send(());
            }
            acted = true;
        }
        if let Some((owner, _)) = s.owner.take() {
            s.revoked = Some(owner);
            acted = true;
        }
        acted
    }

    /// Runs one step on `channel` for `ms`, returning the interval it
    /// occupied.
    pub async fn dispense(&self, conn: ConnId, channel: u8, ms: u64) -> Result<Interval, Reply> {
        if channel >= CHANNELS {
            return Err(
                ProtocolError::range(format!("channel {channel} outside 0..{CHANNELS}")).into(),
            );
        }
        let (abort_rx, start, end) = {
            let mut s = self.state();
            if s.revoked == Some(conn) {
                s.revoked = None;
                let at = s.cursor.max(self.clock.now_ms());
                return Err(Reply::Cut(Interval {
                    channel,
                    start_ms: at,
                    end_ms: at,
                }));
            }
            if s.active.is_some() || s.owner.is_some_and(|(o, _)| o != conn) {
                return Err(busy().into());
            }
            let start = s.cursor.max(self.clock.now_ms());
            let (tx, rx) = oneshot::channel();
            s.active = Some(Active {
                channel,
                start,
                end: start + ms,
                abort: Some(tx),
            });
            (rx, start, start + ms)
        };
        tracing::debug!(channel, start, end, "dispense started");

        let mut guard = StepGuard {
            device: self,
            conn,
            armed: true,
        };
        let wait = end.saturating_sub(self.clock.now_ms());
        let completed = tokio::select! {
            biased;
            _ = abort_rx => false,
            _ = self.clock.sleep(wait) => true,
        };
        guard.armed = false;
        let interval = self.finish(conn, completed);
        if completed {
            Ok(interval)
        } else {
            Err(Reply::Cut(interval))
        }
    }

    fn finish(&self, conn: ConnId, completed: bool) -> Interval {
        let mut s = self.state();
        let a = s.active.take().expect("a step is running");
        let end = if completed {
            a.end
        } else {
            self.clock.now_ms().clamp(a.start, a.end)
        };
        let interval = Interval {
            channel: a.channel,
            start_ms: a.start,
            end_ms: end,
        };
        s.cursor = s.cursor.max(end);
        s.trace.push(interval);
        if !completed && s.revoked == Some(conn) {
            // The cut reply itself tells the owner its cycle is over.
            s.revoked = None;
        }
        match s.owner {
            Some((o, left)) if o == conn => {
                s.owner = (completed && left > 1).then_some((o, left - 1));
            }
            _ => {}
        }
        interval
    }

    pub fn hello(&self) -> Reply {
        Reply::Hello {
            name: DEVICE_NAME.to_owned(),
            channels: CHANNELS,
        }
    }
}

fn busy() -> ProtocolError {
    ProtocolError {
        code: crate::protocol::ErrorCode::Busy,
        detail: "a cycle is already running".into(),
    }
}

/// True when no two intervals overlap in time.
pub fn disjoint(trace: &[Interval]) -> bool {
    let mut sorted: Vec<&Interval> = trace.iter().filter(|i| i.end_ms > i.start_ms).collect();
    sorted.sort_by_key(|i| (i.start_ms, i.end_ms));
    sorted.windows(2).all(|w| w[0].end_ms <= w[1].start_ms)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::clock::{ManualClock, VirtualClock};

    #[tokio::test]
    async fn sequential_steps_are_contiguous() {
        let d = Device::new(VirtualClock::new());
        let c = d.connect();
        d.claim(c, 3).unwrap();
        assert_eq!(d.status(), Status::Armed { steps: 3 });
        let mut out = vec![];
        for (ch, ms) in [(9, 30_000), (1, 15_000), (8, 15_000)] {
            out.push(d.dispense(c, ch, ms).await.unwrap());
        }
        let spans: Vec<_> = out.iter().map(|i| (i.start_ms, i.end_ms)).collect();
        assert_eq!(spans, [(0, 30_000), (30_000, 45_000), (45_000, 60_000)]);
        assert_eq!(d.status(), Status::Idle);
        assert_eq!(d.trace(), out);
    }

    #[tokio::test]
    async fn claim_excludes_other_connections() {
        let d = Device::new(VirtualClock::new());
        let (a, b) = (d.connect(), d.connect());
        d.claim(a, 2).unwrap();
        assert_eq!(
            d.claim(b, 1).unwrap_err().code,
            crate::protocol::ErrorCode::Busy
        );
        assert!(matches!(d.dispense(b, 0, 10).await, Err(Reply::Error(_))));
        d.disconnect(a);
        assert!(d.dispense(b, 0, 10).await.is_ok());
    }

    #[tokio::test]
    async fn abort_cuts_running_step() {
        let clock = Arc::new(ManualClock::new());
        let d = Arc::new(Device::new(Arc::clone(&clock)));
        let c = d.connect();
        d.claim(c, 2).unwrap();
        let task = tokio::spawn({
            let d = Arc::clone(&d);
            async move { d.dispense(c, 5, 1_000).await }
        });
        clock.sleeper().await;
        clock.advance(400);
        assert_eq!(
            d.status(),
            Status::Dispensing {
                channel: 5,
                remaining_ms: 600
            }
        );
        assert!(d.abort());
        let cut = task.await.unwrap().unwrap_err();
        assert_eq!(
            cut,
            Reply::Cut(Interval {
                channel: 5,
                start_ms: 0,
                end_ms: 400
            })
        );
        assert_eq!(d.status(), Status::Idle);
        assert!(!d.abort());
    }

    #[tokio::test]
    async fn abort_between_steps_revokes_once() {
        let d = Device::new(VirtualClock::new());
        let c = d.connect();
        d.claim(c, 2).unwrap();
        d.dispense(c, 0, 100).await.unwrap();
        assert!(d.abort());
        assert_eq!(d.status(), Status::Idle);
        assert!(matches!(d.dispense(c, 1, 100).await, Err(Reply::Cut(_))));
        assert!(d.dispense(c, 1, 100).await.is_ok());
    }

    #[test]
    fn disjointness_check() {
        let iv = |s, e| Interval {
            channel: 0,
            start_ms: s,
            end_ms: e,
        };
        assert!(disjoint(&[iv(0, 10), iv(10, 20), iv(20, 20)]));
        assert!(!disjoint(&[iv(0, 10), iv(5, 20)]));
    }
}
