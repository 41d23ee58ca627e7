use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Monotonic time source. `now` is measured from an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Test clock: time only moves when someone sleeps or calls `advance`.
#[derive(Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
    sleeps: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().expect("clock poisoned") += d;
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().expect("clock poisoned").clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().expect("clock poisoned")
    }

    fn sleep(&self, d: Duration) {
        self.sleeps.lock().expect("clock poisoned").push(d);
        self.advance(d);
    }
}

/// Spaces requests at least `1/rps` apart. Callers reserve a slot under the
/// lock and sleep outside it, so concurrent callers queue in order.
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Duration>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64, clock: Arc<dyn Clock>) -> Self {
        assert!(
            requests_per_second.is_finite() && requests_per_second > 0.0,
            "rate must be positive"
        );
        Self {
            // rounded up so `rps` slots never squeeze into one second
            interval: Duration::from_nanos((1e9 / requests_per_second).ceil() as u64),
            next_slot: Mutex::new(None),
            clock,
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until the caller may issue a request; returns the slot time.
    pub fn acquire(&self) -> Duration {
        let slot = {
            let mut next = self.next_slot.lock().expect("limiter poisoned");
            let now = self.clock.now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = self.clock.now();
        if slot > now {
            self.clock.sleep(slot - now);
        }
        slot
    }
}
