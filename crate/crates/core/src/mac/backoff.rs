use rand::Rng;
use serde::{Deserialize, Serialize};

/// Binary exponential backoff counted in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackoffPolicy {
    pub base_window: u32,
    pub max_window: u32,
    pub max_retries: u32,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self {
            base_window: 2,
            max_window: 32,
            max_retries: 7,
        }
    }
}

impl BackoffPolicy {
    /// Window after `attempt` consecutive failures (`attempt >= 1`).
    pub fn window(&self, attempt: u32) -> u32 {
        let shift = attempt.saturating_sub(1).min(31);
        self.base_window.saturating_mul(1 << shift).min(self.max_window).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackoffState {
    pub attempt: u32,
    pub next_eligible_frame: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackoffOutcome {
    /// Retry no earlier than the given frame.
    Deferred { until: u64, window: u32 },
    /// Retries used up; the procedure is abandoned and the counter reset.
    Exhausted { until: u64 },
}

impl BackoffState {
    pub fn eligible(&self, frame: u64) -> bool {
        frame >= self.next_eligible_frame
    }

    pub fn on_failure<R: Rng + ?Sized>(&mut self, frame: u64, policy: &BackoffPolicy, rng: &mut R) -> BackoffOutcome {
        self.attempt += 1;
        if self.attempt > policy.max_retries {
            self.attempt = 0;
            self.next_eligible_frame = frame + 1;
            return BackoffOutcome::Exhausted { until: frame + 1 };
        }
        let window = policy.window(self.attempt);
        let delay = rng.random_range(1..=window) as u64;
        self.next_eligible_frame = frame + delay;
        BackoffOutcome::Deferred {
            until: self.next_eligible_frame,
            window,
        }
    }

    pub fn on_success(&mut self) {
        self.attempt = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_doubles_and_caps() {
        let p = BackoffPolicy::default();
        let ws: Vec<u32> = (1..=7).map(|a| p.window(a)).collect();
        assert_eq!(ws, vec![2, 4, 8, 16, 32, 32, 32]);
    }

    #[test]
    fn failures_defer_then_exhaust() {
        let p = BackoffPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = BackoffState::default();
        for attempt in 1..=7 {
            match b.on_failure(10, &p, &mut rng) {
                BackoffOutcome::Deferred { until, window } => {
                    assert_eq!(window, p.window(attempt));
                    assert!(until > 10 && until <= 10 + window as u64);
                    assert!(!b.eligible(10));
                    assert!(b.eligible(until));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(b.on_failure(10, &p, &mut rng), BackoffOutcome::Exhausted { until: 11 });
        assert_eq!(b.attempt, 0);
    }
}
