use std::time::Duration;

use rand::Rng;

/// Exponential backoff with jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
    pub max_attempts: u32,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(60),
            max_attempts: 5,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used by tests and mock runs.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            base: Duration::ZERO,
            cap: Duration::ZERO,
            max_attempts,
            jitter: false,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = 2u32.saturating_pow(retry.saturating_sub(1));
        let raw = self.base.saturating_mul(exp).min(self.cap);
        if self.jitter && !raw.is_zero() {
            raw.mul_f64(rand::thread_rng().gen_range(0.5..=1.0))
        } else {
            raw
        }
    }
}
