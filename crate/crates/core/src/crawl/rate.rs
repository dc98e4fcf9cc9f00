use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use tokio::time::Instant;

/// Per-host politeness gate shared by all fetch workers.
///
/// Each host owns a "next free slot"; `acquire` reserves the earliest slot
/// and sleeps until it, so consecutive permissions for one host are at least
/// `1 / rate` apart while hosts never wait on each other.
#[derive(Debug)]
pub struct RateGate {
    interval: Duration,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl RateGate {
    /// `rate` is in requests per second and must be positive.
    pub fn new(rate: f64) -> Self {
        assert!(rate.is_finite() && rate > 0.0, "rate must be positive");
        RateGate {
            interval: Duration::from_secs_f64(1.0 / rate),
            next_slot: Mutex::new(HashMap::new()),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Waits for permission to contact `host`; returns the imposed delay.
    pub async fn acquire(&self, host: &str) -> Duration {
        let now = Instant::now();
        let slot = {
            let mut slots = self.next_slot.lock().expect("rate gate poisoned");
            let slot = match slots.get(host) {
                Some(&next) if next > now => next,
                _ => now,
            };
            slots.insert(host.to_string(), slot + self.interval);
            slot
        };
        if slot > now {
            tokio::time::sleep_until(slot).await;
        }
        slot - now
    }
}
