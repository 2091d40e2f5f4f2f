use std::collections::VecDeque;
use std::time::Duration;

use super::clock::Clock;

/// Sliding-window log limiter: at most `limit` acquisitions in any half-open
/// window of length `window`.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    stamps: VecDeque<Duration>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32) -> Self {
        Self::new(limit, Duration::from_secs(60))
    }

    pub fn new(limit: u32, window: Duration) -> Self {
        Self { limit: limit.max(1) as usize, window, stamps: VecDeque::new() }
    }

    /// Blocks (on `clock`) until a slot is free, then takes it.
    pub fn acquire(&mut self, clock: &dyn Clock) -> Duration {
        loop {
            let now = clock.now();
            while self.stamps.front().is_some_and(|&t| t + self.window <= now) {
                self.stamps.pop_front();
            }
            if self.stamps.len() < self.limit {
                self.stamps.push_back(now);
                return now;
            }
            let oldest = *self.stamps.front().expect("non-empty when full");
            clock.sleep(oldest + self.window - now);
        }
    }
}
