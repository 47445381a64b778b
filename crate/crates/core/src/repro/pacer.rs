use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::WorkloadSpec;

/// Shared wall-clock origin for paced schedules, in unix milliseconds.
pub const ENV_EPOCH_MS: &str = "ISF_EPOCH_MS";

/// How a rank spaces its steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Sleep `sleep_ms`, then do the step's work.
    #[default]
    Free,
    /// Steps begin on a shared grid of `sleep_ms` ticks.
    Lockstep,
    /// Shared grid, with rank `r` of `n` shifted by `r/n` of a tick.
    Staggered,
}

/// Paces the step loop of one rank.
#[derive(Debug, Clone)]
pub struct Pacer {
    schedule: Schedule,
    period: Duration,
    origin: Instant,
}

fn instant_of_unix_ms(ms: u64) -> Instant {
    let now_instant = Instant::now();
    let now_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64);
    if ms >= now_ms {
        now_instant + Duration::from_millis(ms - now_ms)
    } else {
        now_instant
            .checked_sub(Duration::from_millis(now_ms - ms))
            .unwrap_or(now_instant)
    }
}

impl Pacer {
    /// `epoch_ms` is the shared grid origin; `None` starts the grid now.
    pub fn new(spec: &WorkloadSpec, rank: u32, num_ranks: u32, epoch_ms: Option<u64>) -> Self {
        let origin = epoch_ms.map_or_else(Instant::now, instant_of_unix_ms);
        Pacer::with_origin(spec, rank, num_ranks, origin)
    }

    fn with_origin(spec: &WorkloadSpec, rank: u32, num_ranks: u32, mut origin: Instant) -> Self {
        let period = Duration::from_millis(u64::from(spec.sleep_ms));
        if spec.schedule == Schedule::Staggered && num_ranks > 0 {
            origin += period * (rank % num_ranks) / num_ranks;
        }
        Pacer {
            schedule: spec.schedule,
            period,
            origin,
        }
    }

    /// Reads the grid origin from `ISF_EPOCH_MS` when set.
    pub fn from_env(spec: &WorkloadSpec, rank: u32, num_ranks: u32) -> Self {
        let epoch = std::env::var(ENV_EPOCH_MS).ok().and_then(|v| v.parse().ok());
        Pacer::new(spec, rank, num_ranks, epoch)
    }

    /// Blocks until the next step may start.
    pub fn wait(&mut self) {
        if self.period.is_zero() {
            return;
        }
        match self.schedule {
            Schedule::Free => std::thread::sleep(self.period),
            Schedule::Lockstep | Schedule::Staggered => {
                let now = Instant::now();
                let next = if now < self.origin {
                    self.origin
                } else {
                    let ticks = (now - self.origin).as_nanos() / self.period.as_nanos() + 1;
                    self.origin + self.period * ticks as u32
                };
                std::thread::sleep(next - now);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ticks_are_shared() {
        let mut spec = WorkloadSpec::transfer(4, 1, 0);
        spec.sleep_ms = 20;
        spec.schedule = Schedule::Lockstep;
        let origin = Instant::now();
        let mut p = Pacer {
            schedule: spec.schedule,
            period: Duration::from_millis(20),
            origin,
        };
        std::thread::sleep(Duration::from_millis(5));
        p.wait();
        let t = origin.elapsed();
        assert!(t >= Duration::from_millis(20) && t < Duration::from_millis(35), "{t:?}");
    }

    #[test]
    fn staggered_offsets() {
        let mut spec = WorkloadSpec::transfer(4, 1, 0);
        spec.sleep_ms = 100;
        spec.schedule = Schedule::Staggered;
        let t0 = Instant::now();
        let a = Pacer::with_origin(&spec, 0, 4, t0);
        let b = Pacer::with_origin(&spec, 2, 4, t0);
        assert_eq!(b.origin - a.origin, Duration::from_millis(50));
    }
}
