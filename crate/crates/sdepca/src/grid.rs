//! Dyadic master time grid.
//!
//! All solver step endpoints are snapped to ticks of size `2^-level`, so an
//! adaptive path and a fine reference path driven by the same master noise
//! consume exactly the same Brownian increments, and integer times (where the
//! piecewise-constant argument `x([t])` jumps) are hit exactly.

use crate::error::{Error, Result};
use crate::math;
use alloc::format;

/// Maximum level: keeps `horizon_ticks` well inside the exactly-representable
/// integer range of `f64` for any sane horizon.
const MAX_LEVEL: u32 = 40;

/// Uniform dyadic grid over `[0, T]` with tick size `2^-level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickGrid {
    level: u32,
    horizon_ticks: u64,
}

impl TickGrid {
    /// Creates a grid with tick `2^-level` over `[0, horizon]`. The horizon
    /// must be positive and an exact multiple of the tick.
    pub fn new(level: u32, horizon: f64) -> Result<Self> {
        if level < 1 || level > MAX_LEVEL {
            return Err(Error::Config(format!(
                "grid level must be in 1..={MAX_LEVEL}, got {level}"
            )));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        let scaled = horizon * (1u64 << level) as f64;
        if scaled > (1u64 << 52) as f64 {
            return Err(Error::Config(format!(
                "horizon {horizon} at level {level} overflows the tick counter"
            )));
        }
        if scaled != math::floor(scaled) {
            return Err(Error::Config(format!(
                "horizon {horizon} is not an exact multiple of the tick 2^-{level}"
            )));
        }
        Ok(TickGrid {
            level,
            horizon_ticks: scaled as u64,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Tick size `2^-level`.
    pub fn tick(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    /// Number of ticks per unit time, `2^level`.
    pub fn ticks_per_unit(&self) -> u64 {
        1u64 << self.level
    }

    pub fn horizon_ticks(&self) -> u64 {
        self.horizon_ticks
    }

    /// Horizon `T` as a float (exact: the tick count is below `2^52`).
    pub fn horizon(&self) -> f64 {
        self.time_of(self.horizon_ticks)
    }

    /// Time of a tick index, exact in `f64`.
    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * self.tick()
    }

    /// Whether a tick lies on an integer time.
    pub fn is_integer_time(&self, tick: u64) -> bool {
        tick % self.ticks_per_unit() == 0
    }

    /// First tick of the next integer time strictly after `tick`.
    pub fn next_integer_tick(&self, tick: u64) -> u64 {
        (tick / self.ticks_per_unit() + 1) * self.ticks_per_unit()
    }

    /// Converts a real step size to ticks; errors unless it is an exact
    /// positive multiple of the tick.
    pub fn ticks_of_step(&self, step: f64) -> Result<u64> {
        if !step.is_finite() || step <= 0.0 {
            return Err(Error::Config(format!("step must be positive, got {step}")));
        }
        let scaled = step * self.ticks_per_unit() as f64;
        if scaled > self.horizon_ticks as f64 {
            return Err(Error::Config(format!(
                "step {step} exceeds the horizon {}",
                self.horizon()
            )));
        }
        if scaled != math::floor(scaled) {
            return Err(Error::Config(format!(
                "step {step} is not an exact multiple of the tick 2^-{}",
                self.level
            )));
        }
        Ok(scaled as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_resolution() {
        // T = 2 at level 13 gives 16384 ticks.
        let g = TickGrid::new(13, 2.0).unwrap();
        assert_eq!(g.horizon_ticks(), 16384);
        assert_eq!(g.tick(), 2f64.powi(-13));
        assert_eq!(g.horizon(), 2.0);
    }

    #[test]
    fn integer_times_are_tick_aligned() {
        let g = TickGrid::new(4, 3.0).unwrap();
        assert!(g.is_integer_time(0));
        assert!(g.is_integer_time(16));
        assert!(g.is_integer_time(32));
        assert!(!g.is_integer_time(17));
        assert_eq!(g.next_integer_tick(0), 16);
        assert_eq!(g.next_integer_tick(16), 32);
        assert_eq!(g.next_integer_tick(17), 32);
    }

    #[test]
    fn fractional_horizon_rejected() {
        assert!(TickGrid::new(2, 0.3).is_err());
        // 0.125 is representable at level 3 but not at level 2.
        assert!(TickGrid::new(2, 0.125).is_err());
        assert!(TickGrid::new(3, 0.125).is_ok());
    }

    #[test]
    fn bad_levels_rejected() {
        assert!(TickGrid::new(0, 1.0).is_err());
        assert!(TickGrid::new(60, 1.0).is_err());
    }

    #[test]
    fn step_conversion() {
        let g = TickGrid::new(13, 2.0).unwrap();
        assert_eq!(g.ticks_of_step(2f64.powi(-13)).unwrap(), 1);
        assert_eq!(g.ticks_of_step(0.25).unwrap(), 2048);
        assert!(g.ticks_of_step(0.3).is_err());
        assert!(g.ticks_of_step(0.0).is_err());
        assert!(g.ticks_of_step(4.0).is_err());
    }
}
