use std::collections::BTreeMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::sync::watch;

/// Source of device time in milliseconds.
pub trait Clock: Send + Sync + 'static {
    fn now_ms(&self) -> u64;
    fn sleep(&self, ms: u64) -> impl Future<Output = ()> + Send;
}

impl<C: Clock> Clock for Arc<C> {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }
    fn sleep(&self, ms: u64) -> impl Future<Output = ()> + Send {
        (**self).sleep(ms)
    }
}

/// Wall-clock time, optionally sped up.
#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
    speed: f64,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::scaled(1.0)
    }
}

impl SystemClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Device time runs `speed` times faster than wall time.
    pub fn scaled(speed: f64) -> Self {
        assert!(speed > 0.0 && speed.is_finite(), "speed must be positive");
        Self {
            origin: Instant::now(),
            speed,
        }
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        (self.origin.elapsed().as_secs_f64() * 1000.0 * self.speed) as u64
    }

    fn sleep(&self, ms: u64) -> impl Future<Output = ()> + Send {
        let wall = Duration::from_secs_f64(ms as f64 / 1000.0 / self.speed);
        tokio::time::sleep(wall)
    }
}

/// Simulated time that jumps forward on every sleep.
///
/// A non-zero sleep yields once to the scheduler before advancing, so other
/// tasks (an abort, say) can interleave deterministically.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    async fn sleep(&self, ms: u64) {
        if ms > 0 {
            tokio::task::yield_now().await;
            self.now.fetch_add(ms, Ordering::SeqCst);
        }
    }
}

/// Simulated time that only moves when [`ManualClock::advance`] is called.
#[derive(Debug)]
pub struct ManualClock {
    now: watch::Sender<u64>,
    next_id: AtomicU64,
    /// Deadlines of sleeps still pending, by sleep id.
    deadlines: Arc<Mutex<BTreeMap<u64, u64>>>,
}

impl Default for ManualClock {
    fn default() -> Self {
        Self {
            now: watch::Sender::new(0),
            next_id: AtomicU64::new(0),
            deadlines: Arc::default(),
        }
    }
}

struct Registration {
    id: u64,
    deadlines: Arc<Mutex<BTreeMap<u64, u64>>>,
}

impl Drop for Registration {
    fn drop(&mut self) {
        lock(&self.deadlines).remove(&self.id);
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, ms: u64) {
        self.now.send_modify(|t| *t += ms);
    }

    /// Earliest deadline of a sleep that has not yet elapsed.
    pub fn next_deadline(&self) -> Option<u64> {
        let now = self.now_ms();
        lock(&self.deadlines)
            .values()
            .copied()
            .filter(|&d| d > now)
            .min()
    }

    /// Yields until some task is sleeping on this clock; returns its deadline.
    pub async fn sleeper(&self) -> u64 {
        loop {
            if let Some(d) = self.next_deadline() {
                return d;
            }
            tokio::task::yield_now().await;
        }
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        *self.now.borrow()
    }

    fn sleep(&self, ms: u64) -> impl Future<Output = ()> + Send {
        let deadline = self.now_ms() + ms;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        lock(&self.deadlines).insert(id, deadline);
        let registration = Registration {
            id,
            deadlines: Arc::clone(&self.deadlines),
        };
        let mut rx = self.now.subscribe();
        async move {
            let _registration = registration;
            // The sender lives as long as the clock, which outlives this future.
            let _ = rx.wait_for(|t| *t >= deadline).await;
        }
    }
}
