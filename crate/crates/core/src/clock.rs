/// Source of elapsed wall time in seconds. The core never reads a system
/// clock itself.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that always reads zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[cfg(feature = "std")]
#[derive(Clone, Copy, Debug)]
pub struct MonotonicClock(std::time::Instant);

#[cfg(feature = "std")]
impl MonotonicClock {
    pub fn start() -> Self {
        MonotonicClock(std::time::Instant::now())
    }
}

#[cfg(feature = "std")]
impl Clock for MonotonicClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
