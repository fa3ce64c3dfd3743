use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Time source for pacing, swappable so limiter arithmetic can be tested
/// without sleeping.
pub trait Clock: Send + Sync {
    /// Time since the clock's own origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct RealClock {
    origin: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock {
            origin: Instant::now(),
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manual clock: `sleep` advances time instantly.
#[derive(Default)]
pub struct SimClock {
    now: Mutex<Duration>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn elapsed(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        self.elapsed()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Token bucket in its virtual-scheduling form: each grant books the next
/// slot `interval` later, and up to `burst` slots may be booked ahead of now.
pub struct RateLimiter {
    interval: Duration,
    burst: u32,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

struct State {
    next_free: Duration,
    granted: u64,
}

impl RateLimiter {
    pub fn new(interval: Duration, burst: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            interval,
            burst: burst.max(1),
            clock,
            state: Mutex::new(State {
                next_free: Duration::ZERO,
                granted: 0,
            }),
        }
    }

    pub fn per_minute(rate: f64, clock: Arc<dyn Clock>) -> Self {
        Self::new(Duration::from_secs_f64(60.0 / rate), 1, clock)
    }

    /// Blocks until a request may be sent. Returns the time slot granted.
    pub fn acquire(&self) -> Duration {
        let (slot, wait) = {
            let mut st = self.state.lock().unwrap();
            let now = self.clock.now();
            let tat = st.next_free.max(now);
            let slack = self.interval * (self.burst - 1);
            let slot = tat.saturating_sub(slack).max(now);
            st.next_free = tat + self.interval;
            st.granted += 1;
            (slot, slot - now)
        };
        if !wait.is_zero() {
            self.clock.sleep(wait);
        }
        slot
    }

    pub fn granted(&self) -> u64 {
        self.state.lock().unwrap().granted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_per_minute_spaces_thirty_requests_over_29_seconds() {
        let clock = Arc::new(SimClock::new());
        let lim = RateLimiter::per_minute(60.0, clock.clone());
        let slots: Vec<Duration> = (0..30).map(|_| lim.acquire()).collect();
        assert_eq!(slots[0], Duration::ZERO);
        assert_eq!(slots[29], Duration::from_secs(29));
        assert_eq!(clock.elapsed(), Duration::from_secs(29));
        for w in slots.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_secs(1));
        }
    }

    #[test]
    fn idle_time_is_not_banked_beyond_burst() {
        let clock = Arc::new(SimClock::new());
        let lim = RateLimiter::new(Duration::from_secs(1), 1, clock.clone());
        lim.acquire();
        clock.advance(Duration::from_secs(100));
        let a = lim.acquire();
        let b = lim.acquire();
        assert_eq!(b - a, Duration::from_secs(1));
    }

    #[test]
    fn burst_allows_back_to_back_grants() {
        let clock = Arc::new(SimClock::new());
        let lim = RateLimiter::new(Duration::from_secs(1), 3, clock.clone());
        for _ in 0..3 {
            assert_eq!(lim.acquire(), Duration::ZERO);
        }
        assert_eq!(lim.acquire(), Duration::from_secs(1));
    }

    #[test]
    fn shared_across_threads_never_exceeds_rate() {
        let clock = Arc::new(SimClock::new());
        let lim = Arc::new(RateLimiter::new(Duration::from_millis(250), 1, clock));
        let mut slots: Vec<Duration> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..4)
                .map(|_| {
                    let lim = lim.clone();
                    s.spawn(move || (0..10).map(|_| lim.acquire()).collect::<Vec<_>>())
                })
                .collect();
            hs.into_iter().flat_map(|h| h.join().unwrap()).collect()
        });
        slots.sort();
        assert_eq!(lim.granted(), 40);
        for w in slots.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_millis(250));
        }
    }
}
