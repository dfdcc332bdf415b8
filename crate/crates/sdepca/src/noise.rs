//! Seeded Brownian master paths on the dyadic tick grid, and coupled
//! increments / iterated stochastic integrals over tick-aligned intervals.
//!
//! A master path carries one `N(0, δ)` increment per tick and channel, where
//! `δ = 2^-level` is the grid tick. Every solver consumes intervals of this
//! shared path, which is what couples an adaptive path to the fine-step
//! reference driven by the same Brownian motion.
//!
//! Off-diagonal iterated integrals are split into a symmetric part, known in
//! closed form from the increments, and the antisymmetric Lévy area
//! `A_jr = (I_jr - I_rj) / 2`, which is accumulated over the master ticks:
//! the accumulation error vanishes as the level grows, and unlike standalone
//! exact Lévy sampling it stays consistent with the increments the coupled
//! reference path sees.

use crate::error::{Error, Result};
use crate::grid::TickGrid;
use crate::math;
use crate::rng::stream_rng;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use rand::Rng;
use rand_distr::StandardNormal;

pub use crate::math::gaussian_abs_moment;

/// Streams are packed as `path_index * 256 + channel`.
const MAX_CHANNELS: usize = 256;
const MAX_PATH_INDEX: u64 = 1 << 55;

/// A seeded Brownian master path: per-tick increments and their prefix sums
/// for each channel. Regeneration from `(seed, path_index)` is bit-identical
/// and independent of any other path.
pub struct MasterNoise {
    grid: TickGrid,
    channels: usize,
    seed: u64,
    path_index: u64,
    /// `inc[j][m]` is the increment of channel `j` over tick `m`.
    inc: Vec<Vec<f64>>,
    /// `prefix[j][m] = B^j(m δ)`, length `horizon_ticks + 1`.
    prefix: Vec<Vec<f64>>,
}

/// Draws the master path for `(seed, path_index)`: one independent ChaCha
/// stream per channel, increments `sqrt(δ) · N(0, 1)` per tick.
pub fn sample_master(
    grid: TickGrid,
    channels: usize,
    seed: u64,
    path_index: u64,
) -> Result<MasterNoise> {
    if channels < 1 {
        return Err(Error::Parameter("need at least one Brownian channel".into()));
    }
    if channels > MAX_CHANNELS {
        return Err(Error::Config(format!("at most {MAX_CHANNELS} channels supported")));
    }
    if path_index >= MAX_PATH_INDEX {
        return Err(Error::Config(format!("path index {path_index} out of range")));
    }
    let ticks = grid.horizon_ticks() as usize;
    let sqrt_tick = math::sqrt(grid.tick());
    let mut inc = Vec::with_capacity(channels);
    let mut prefix = Vec::with_capacity(channels);
    for channel in 0..channels {
        let mut rng = stream_rng(seed, path_index * MAX_CHANNELS as u64 + channel as u64);
        let mut ch_inc = vec![0.0; ticks];
        let mut ch_prefix = vec![0.0; ticks + 1];
        for m in 0..ticks {
            let z: f64 = rng.sample(StandardNormal);
            ch_inc[m] = sqrt_tick * z;
            ch_prefix[m + 1] = ch_prefix[m] + ch_inc[m];
        }
        inc.push(ch_inc);
        prefix.push(ch_prefix);
    }
    Ok(MasterNoise {
        grid,
        channels,
        seed,
        path_index,
        inc,
        prefix,
    })
}

impl MasterNoise {
    pub fn grid(&self) -> TickGrid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// `B^j` at a tick.
    pub fn value(&self, channel: usize, tick: u64) -> f64 {
        self.prefix[channel][tick as usize]
    }

    /// `B^j(t) - B^j(s)` from the prefix sums.
    pub fn increment(&self, channel: usize, s_tick: u64, t_tick: u64) -> f64 {
        self.prefix[channel][t_tick as usize] - self.prefix[channel][s_tick as usize]
    }

    /// See [`bundle`].
    pub fn bundle(&self, s_tick: u64, t_tick: u64) -> Result<IncrementBundle> {
        bundle(self, s_tick, t_tick)
    }

    /// Debug dump: one `tick,B^1,..,B^d` row per tick.
    pub fn path_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("tick");
        for j in 0..self.channels {
            let _ = write!(out, ",b{}", j + 1);
        }
        out.push('\n');
        for m in 0..=self.grid.horizon_ticks() {
            let _ = write!(out, "{m}");
            for j in 0..self.channels {
                let _ = write!(out, ",{:.16e}", self.prefix[j][m as usize]);
            }
            out.push('\n');
        }
        out
    }
}

/// Increments and iterated integrals of one solver step `[s, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementBundle {
    s_tick: u64,
    t_tick: u64,
    dt: f64,
    db: Vec<f64>,
    /// Lévy areas `A_jr` for `j < r`, packed row-wise.
    levy: Vec<f64>,
}

/// Extracts the increments `ΔB^j = B^j(t) - B^j(s)` and the Lévy areas over
/// `[s, t]`. Diagonal iterated integrals use the closed form
/// `I_jj = ((ΔB^j)^2 - (t - s)) / 2`; off-diagonal ones are reassembled as
/// `I_jr = ΔB^j ΔB^r / 2 + A_jr` and `I_rj = ΔB^j ΔB^r / 2 - A_jr` (`j < r`),
/// with `A_jr` accumulated over the master ticks.
pub fn bundle(noise: &MasterNoise, s_tick: u64, t_tick: u64) -> Result<IncrementBundle> {
    if s_tick >= t_tick || t_tick > noise.grid.horizon_ticks() {
        return Err(Error::Parameter(format!(
            "bad bundle interval [{s_tick}, {t_tick}] on a grid of {} ticks",
            noise.grid.horizon_ticks()
        )));
    }
    let d = noise.channels;
    let dt = (t_tick - s_tick) as f64 * noise.grid.tick();
    let db: Vec<f64> = (0..d).map(|j| noise.increment(j, s_tick, t_tick)).collect();
    let mut levy = vec![0.0; d * (d - 1) / 2];
    if d > 1 {
        let (s, t) = (s_tick as usize, t_tick as usize);
        let mut pair = 0;
        for j in 0..d {
            for r in j + 1..d {
                let pj = &noise.prefix[j];
                let pr = &noise.prefix[r];
                let ij = &noise.inc[j];
                let ir = &noise.inc[r];
                // Left-point Itô accumulation; the within-tick cross terms
                // cancel in the antisymmetric combination, so this is exact
                // for the discrete path.
                let mut acc = 0.0;
                for m in s..t {
                    acc += (pj[m] - pj[s]) * ir[m] - (pr[m] - pr[s]) * ij[m];
                }
                levy[pair] = 0.5 * acc;
                pair += 1;
            }
        }
    }
    Ok(IncrementBundle {
        s_tick,
        t_tick,
        dt,
        db,
        levy,
    })
}

impl IncrementBundle {
    /// Builds a bundle from explicit parts (tests, custom increment
    /// generators). `levy` packs the `d(d-1)/2` areas for `j < r` row-wise.
    pub fn from_parts(
        s_tick: u64,
        t_tick: u64,
        dt: f64,
        db: Vec<f64>,
        levy: Vec<f64>,
    ) -> Result<Self> {
        if s_tick >= t_tick {
            return Err(Error::Parameter(format!("bad bundle interval [{s_tick}, {t_tick}]")));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::Parameter(format!("bundle length must be positive, got {dt}")));
        }
        let d = db.len();
        if d == 0 || levy.len() != d * (d - 1) / 2 {
            return Err(Error::Parameter(format!(
                "expected {} Lévy areas for {d} channels, got {}",
                d * (d.max(1) - 1) / 2,
                levy.len()
            )));
        }
        Ok(IncrementBundle {
            s_tick,
            t_tick,
            dt,
            db,
            levy,
        })
    }

    pub fn s_tick(&self) -> u64 {
        self.s_tick
    }

    pub fn t_tick(&self) -> u64 {
        self.t_tick
    }

    /// Interval length `t - s` in time units.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn channels(&self) -> usize {
        self.db.len()
    }

    /// `ΔB^j` over the interval.
    pub fn db(&self, j: usize) -> f64 {
        self.db[j]
    }

    pub fn db_all(&self) -> &[f64] {
        &self.db
    }

    fn pair_index(&self, j: usize, r: usize) -> usize {
        debug_assert!(j < r);
        let d = self.db.len();
        j * d - j * (j + 1) / 2 + (r - j - 1)
    }

    /// Lévy area `A_jr = (I_jr - I_rj) / 2`; antisymmetric by construction
    /// (`A_rj = -A_jr`), zero on the diagonal.
    pub fn levy_area(&self, j: usize, r: usize) -> f64 {
        use core::cmp::Ordering;
        match j.cmp(&r) {
            Ordering::Less => self.levy[self.pair_index(j, r)],
            Ordering::Equal => 0.0,
            Ordering::Greater => -self.levy[self.pair_index(r, j)],
        }
    }

    /// Diagonal iterated integral `I_jj = ((ΔB^j)^2 - (t - s)) / 2`.
    pub fn diag(&self, j: usize) -> f64 {
        0.5 * (self.db[j] * self.db[j] - self.dt)
    }

    /// Iterated integral `I_rj = ∫_s^t ∫_s^u dB^r dB^j`.
    pub fn iterated(&self, r: usize, j: usize) -> f64 {
        if r == j {
            self.diag(j)
        } else {
            0.5 * self.db[j] * self.db[r] + self.levy_area(r, j)
        }
    }
}

/// Empirical normalized moment `E|ΔB|^p / h^(p/2)` from `sample_count` draws
/// of `ΔB ~ N(0, h)`; compares against [`gaussian_abs_moment`]. `p` must be
/// one of 1, 2, 4, 6.
pub fn increment_moments(h: f64, p: u32, sample_count: u64, seed: u64) -> Result<f64> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::Parameter(format!("h must be positive, got {h}")));
    }
    if !matches!(p, 1 | 2 | 4 | 6) {
        return Err(Error::Parameter(format!("p must be one of 1, 2, 4, 6, got {p}")));
    }
    if sample_count < 1 {
        return Err(Error::Parameter("sample_count must be at least 1".into()));
    }
    let sqrt_h = math::sqrt(h);
    let mut rng = stream_rng(seed, 0);
    let mut acc = 0.0;
    for _ in 0..sample_count {
        let z: f64 = rng.sample(StandardNormal);
        let db = math::abs(sqrt_h * z);
        let mut pw = db;
        for _ in 1..p {
            pw *= db;
        }
        acc += pw;
    }
    let scale = math::pow(h, 0.5 * p as f64);
    Ok(acc / sample_count as f64 / scale)
}
