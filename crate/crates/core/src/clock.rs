//! Monotonic time source shared by the orchestrator and the simulator.
//!
//! Two modes exist. `Real` reads `Instant` and sleeps the calling thread.
//! `Virtual` keeps a shared nanosecond counter that only moves when someone
//! sleeps on it; it never goes backward. Every component in one process is
//! handed a clone of the same `Clock`, so simulated devices and the control
//! loop agree on "now".

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Time elapsed since the clock's origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_nanos(nanos: u64) -> Self {
        Timestamp(nanos)
    }

    pub fn from_duration(d: Duration) -> Self {
        Timestamp(d.as_nanos().min(u64::MAX as u128) as u64)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_duration(self) -> Duration {
        Duration::from_nanos(self.0)
    }

    pub fn saturating_since(self, earlier: Timestamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0))
    }

    pub fn after(self, d: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(d.as_nanos().min(u64::MAX as u128) as u64))
    }

    /// Smallest timestamp strictly after `self`.
    pub fn next_tick(self) -> Timestamp {
        Timestamp(self.0 + 1)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / 1_000_000_000, (self.0 % 1_000_000_000) / 1_000)
    }
}

#[derive(Debug)]
pub struct VirtualTime {
    nanos: AtomicU64,
}

#[derive(Clone, Debug)]
pub enum Clock {
    Real(Arc<Instant>),
    Virtual(Arc<VirtualTime>),
}

impl Clock {
    pub fn real() -> Self {
        Clock::Real(Arc::new(Instant::now()))
    }

    pub fn virtual_clock() -> Self {
        Clock::Virtual(Arc::new(VirtualTime { nanos: AtomicU64::new(0) }))
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }

    pub fn now(&self) -> Timestamp {
        match self {
            Clock::Real(origin) => Timestamp::from_duration(origin.elapsed()),
            Clock::Virtual(v) => Timestamp(v.nanos.load(Ordering::SeqCst)),
        }
    }

    /// Blocks for `d` of clock time. On a virtual clock this advances the
    /// shared counter and returns immediately.
    pub fn sleep(&self, d: Duration) {
        match self {
            Clock::Real(_) => std::thread::sleep(d),
            Clock::Virtual(v) => {
                let step = d.as_nanos().min(u64::MAX as u128) as u64;
                v.nanos.fetch_add(step, Ordering::SeqCst);
            }
        }
    }

    pub fn sleep_until(&self, t: Timestamp) {
        match self {
            Clock::Real(origin) => {
                let now = Timestamp::from_duration(origin.elapsed());
                if t > now {
                    std::thread::sleep(t.saturating_since(now));
                }
            }
            Clock::Virtual(v) => {
                v.nanos.fetch_max(t.0, Ordering::SeqCst);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_only_moves_forward() {
        let clock = Clock::virtual_clock();
        assert_eq!(clock.now(), Timestamp::ZERO);
        clock.sleep(Duration::from_millis(250));
        assert_eq!(clock.now().as_duration(), Duration::from_millis(250));
        clock.sleep_until(Timestamp::from_duration(Duration::from_millis(100)));
        assert_eq!(clock.now().as_duration(), Duration::from_millis(250));
        clock.sleep_until(Timestamp::from_duration(Duration::from_secs(1)));
        assert_eq!(clock.now().as_duration(), Duration::from_secs(1));
    }

    #[test]
    fn clones_share_virtual_time() {
        let a = Clock::virtual_clock();
        let b = a.clone();
        a.sleep(Duration::from_millis(5));
        assert_eq!(b.now(), a.now());
    }

    #[test]
    fn timestamp_display() {
        let t = Timestamp::from_duration(Duration::from_millis(2_400));
        assert_eq!(t.to_string(), "2.400000s");
    }
}
