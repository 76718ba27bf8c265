use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// Time source for pacing and backoff; swappable so tests run on virtual time.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        if !duration.is_zero() {
            std::thread::sleep(duration);
        }
    }
}

/// Virtual clock: `sleep` advances time instantly. Also records every sleep.
#[derive(Debug, Default)]
pub struct ManualClock {
    nanos: AtomicU64,
    sleeps: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    fn sleep(&self, duration: Duration) {
        self.sleeps.lock().unwrap().push(duration);
        self.advance(duration);
    }
}

/// Paces requests to at most `requests_per_minute`, evenly spaced.
///
/// Equivalent to a token bucket with capacity one refilled every
/// `60 s / rpm`: each caller reserves the next free slot and parks until it.
pub struct RateLimiter {
    spacing: Option<Duration>,
    next_slot: Mutex<Duration>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: Option<u32>, clock: Arc<dyn Clock>) -> Self {
        let spacing = requests_per_minute
            .filter(|&rpm| rpm > 0)
            .map(|rpm| Duration::from_secs(60) / rpm);
        Self {
            spacing,
            next_slot: Mutex::new(Duration::ZERO),
            clock,
        }
    }

    pub fn unlimited(clock: Arc<dyn Clock>) -> Self {
        Self::new(None, clock)
    }

    /// Blocks until the caller may issue one request.
    pub fn acquire(&self) {
        let Some(spacing) = self.spacing else {
            return;
        };
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = self.clock.now();
            let slot = (*next).max(now);
            *next = slot + spacing;
            slot - now
        };
        self.clock.sleep(wait);
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyLimiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl ConcurrencyLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.max {
            count = self.freed.wait(count).unwrap();
        }
        *count += 1;
        Permit { limiter: self }
    }
}

pub struct Permit<'a> {
    limiter: &'a ConcurrencyLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut count = self.limiter.in_flight.lock().unwrap();
        *count -= 1;
        self.limiter.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    /// Start times of `n` requests queued at t=0 under a capacity-1 token
    /// bucket refilled at `rate` tokens/second, simulated step by step.
    fn token_bucket_starts(n: usize, rate: f64) -> Vec<f64> {
        let mut tokens = 1.0f64;
        let mut t = 0.0f64;
        let mut starts = Vec::with_capacity(n);
        for _ in 0..n {
            if tokens < 1.0 {
                let wait = (1.0 - tokens) / rate;
                t += wait;
                tokens = 1.0;
            }
            tokens -= 1.0;
            starts.push(t);
        }
        starts
    }

    #[test]
    fn pacing_matches_token_bucket_simulation() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::new(Some(60), clock.clone());
        let mut starts = Vec::new();
        for _ in 0..120 {
            limiter.acquire();
            starts.push(clock.now().as_secs_f64());
        }
        let oracle = token_bucket_starts(120, 1.0);
        for (got, want) in starts.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        // second half cannot begin before one minute has elapsed
        assert!(starts[60] >= 60.0 - 1e-9);
        let second_half_span = starts[119] - starts[60];
        assert!(starts[119] >= 60.0 && second_half_span >= 59.0 - 1e-9);
    }

    #[test]
    fn unlimited_never_sleeps() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::unlimited(clock.clone());
        for _ in 0..100 {
            limiter.acquire();
        }
        assert_eq!(clock.now(), Duration::ZERO);
        assert!(clock.sleeps().is_empty());
    }

    #[test]
    fn semaphore_bounds_parallelism() {
        let limiter = Arc::new(ConcurrencyLimiter::new(3));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..12 {
                let (limiter, active, peak) = (limiter.clone(), active.clone(), peak.clone());
                s.spawn(move || {
                    let _permit = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
