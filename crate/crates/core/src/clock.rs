//! Time sources. Components take a [`Clock`] so tests and the fleet simulator
//! can drive virtual time.

use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::der::Asn1Time;

pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary fixed origin.
    fn monotonic(&self) -> Duration;
    /// Wall-clock UTC.
    fn now(&self) -> Asn1Time;
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn monotonic(&self) -> Duration {
        self.origin.elapsed()
    }

    fn now(&self) -> Asn1Time {
        Asn1Time::now()
    }
}

/// Manually advanced clock. Wall time is `base + monotonic`.
#[derive(Debug)]
pub struct ManualClock {
    nanos: AtomicU64,
    base_epoch: AtomicI64,
}

impl ManualClock {
    pub fn new(base: Asn1Time) -> Self {
        Self { nanos: AtomicU64::new(0), base_epoch: AtomicI64::new(base.epoch_seconds()) }
    }

    pub fn set(&self, since_origin: Duration) {
        self.nanos.store(since_origin.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn advance(&self, by: Duration) {
        self.nanos.fetch_add(by.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn monotonic(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    fn now(&self) -> Asn1Time {
        let base = self.base_epoch.load(Ordering::SeqCst);
        Asn1Time::from_epoch(base + self.monotonic().as_secs() as i64).expect("clock within ASN.1 time range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_tracks_wall_time() {
        let base = Asn1Time::from_civil(2023, 5, 4, 19, 57, 27).unwrap();
        let c = ManualClock::new(base);
        assert_eq!(c.now(), base);
        c.advance(Duration::from_millis(3_600_500));
        assert_eq!(c.now().epoch_seconds(), base.epoch_seconds() + 3600);
        c.set(Duration::from_secs(2));
        assert_eq!(c.monotonic(), Duration::from_secs(2));
    }
}
