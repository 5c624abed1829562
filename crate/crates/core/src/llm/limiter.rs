//! Per-provider concurrency cap plus an optional requests-per-minute bucket.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

struct Bucket {
    capacity: f64,
    tokens: f64,
    per_sec: f64,
    last: Instant,
}

pub struct Limiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
    bucket: Option<Mutex<Bucket>>,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self
            .limiter
            .in_flight
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limiter.released.notify_one();
    }
}

impl Limiter {
    pub fn new(max_in_flight: usize, requests_per_minute: Option<u32>) -> Self {
        let bucket = requests_per_minute.filter(|&r| r > 0).map(|rpm| {
            let capacity = f64::from(rpm);
            Mutex::new(Bucket {
                capacity,
                tokens: capacity,
                per_sec: capacity / 60.0,
                last: Instant::now(),
            })
        });
        Limiter {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            bucket,
        }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Blocks until a slot is free and the rate bucket has a token.
    pub fn acquire(&self) -> Permit<'_> {
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = {
                    let mut b = bucket.lock().unwrap_or_else(|e| e.into_inner());
                    let now = Instant::now();
                    let refill = now.duration_since(b.last).as_secs_f64() * b.per_sec;
                    b.tokens = (b.tokens + refill).min(b.capacity);
                    b.last = now;
                    if b.tokens >= 1.0 {
                        b.tokens -= 1.0;
                        None
                    } else {
                        Some(Duration::from_secs_f64((1.0 - b.tokens) / b.per_sec))
                    }
                };
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max_in_flight {
            n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { limiter: self }
    }
}
