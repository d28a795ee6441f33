//! Discrete bar-pointer state spaces.
//!
//! The beat space is the (phase, period) plane: for every beat period `τ`
//! (frames per beat) between `tau_min` and `tau_max` there is one row of `τ`
//! phase states. The bar space is the (bar position, meter) plane used by the
//! downbeat stage, which is clocked once per beat.
//!
//! Both spaces use a fixed canonical ordering (row ascending, position
//! ascending) so that flat indices are stable.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use crate::error::{Error, Result};

/// Index into the flat enumeration of a state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateIndex(pub u32);

impl StateIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for StateIndex {
    #[inline]
    fn from(idx: usize) -> Self {
        StateIndex(idx as u32)
    }
}

/// Default divisor for the beat window width, `max(1, round(τ / 16))`.
pub const DEFAULT_BEAT_WINDOW_DIVISOR: u32 = 16;

/// The (phase, period) plane of the beat stage.
#[derive(Debug, Clone)]
pub struct BeatStateSpace {
    fps: u32,
    tau_min: u32,
    tau_max: u32,
    window_divisor: u32,
    /// First flat index of each period row, plus a trailing total.
    row_start: Vec<u32>,
    phase: Vec<u32>,
    period: Vec<u32>,
    beat: Vec<bool>,
    beat_states: Vec<StateIndex>,
    /// Distinct phase fractions `φ/τ` in ascending order.
    fractions: Vec<f64>,
    /// For every state, the index of its fraction in `fractions`.
    fraction_group: Vec<u32>,
}

impl BeatStateSpace {
    /// Builds the space for a frame rate and tempo range.
    ///
    /// `tau_min = round(fps·60/max_bpm)` and `tau_max = round(fps·60/min_bpm)`;
    /// the shortest period must be at least two frames.
    pub fn new(fps: u32, min_bpm: f64, max_bpm: f64) -> Result<Self> {
        Self::with_window_divisor(fps, min_bpm, max_bpm, DEFAULT_BEAT_WINDOW_DIVISOR)
    }

    pub fn with_window_divisor(
        fps: u32,
        min_bpm: f64,
        max_bpm: f64,
        window_divisor: u32,
    ) -> Result<Self> {
        let invalid = Error::InvalidRange {
            fps,
            min_bpm,
            max_bpm,
        };
        if fps == 0 || !(min_bpm > 0.0) || !(max_bpm >= min_bpm) || !max_bpm.is_finite() {
            return Err(invalid);
        }
        if window_divisor < 2 {
            return Err(Error::InvalidConfig(
                "beat window divisor must be at least 2",
            ));
        }
        let frames_per_minute = fps as f64 * 60.0;
        let tau_min = libm::round(frames_per_minute / max_bpm);
        let tau_max = libm::round(frames_per_minute / min_bpm);
        if tau_min < 2.0 || tau_max > u32::MAX as f64 / 4.0 {
            return Err(invalid);
        }
        Ok(Self::from_periods(
            fps,
            tau_min as u32,
            tau_max as u32,
            window_divisor,
        ))
    }

    /// Builds the space directly from a period range in frames.
    pub fn from_periods(fps: u32, tau_min: u32, tau_max: u32, window_divisor: u32) -> Self {
        assert!(tau_min >= 2 && tau_max >= tau_min && window_divisor >= 2);
        let total: u32 = (tau_min..=tau_max).sum();
        let mut row_start = Vec::with_capacity((tau_max - tau_min + 2) as usize);
        let mut phase = Vec::with_capacity(total as usize);
        let mut period = Vec::with_capacity(total as usize);
        let mut beat = Vec::with_capacity(total as usize);
        let mut beat_states = Vec::new();
        for tau in tau_min..=tau_max {
            row_start.push(phase.len() as u32);
            let width = window_width(tau, window_divisor);
            for phi in 0..tau {
                if phi < width {
                    beat_states.push(StateIndex(phase.len() as u32));
                }
                beat.push(phi < width);
                phase.push(phi);
                period.push(tau);
            }
        }
        row_start.push(phase.len() as u32);

        // Group states by exact phase fraction (compare φ1·τ2 with φ2·τ1).
        let mut order: Vec<u32> = (0..total).collect();
        let cmp = |a: &u32, b: &u32| {
            let (pa, ta) = (phase[*a as usize] as u64, period[*a as usize] as u64);
            let (pb, tb) = (phase[*b as usize] as u64, period[*b as usize] as u64);
            (pa * tb).cmp(&(pb * ta))
        };
        order.sort_by(cmp);
        let mut fractions = Vec::new();
        let mut fraction_group = alloc::vec![0u32; total as usize];
        let mut prev: Option<u32> = None;
        for &s in &order {
            if prev.is_none_or(|p| cmp(&p, &s) != Ordering::Equal) {
                fractions.push(phase[s as usize] as f64 / period[s as usize] as f64);
            }
            fraction_group[s as usize] = (fractions.len() - 1) as u32;
            prev = Some(s);
        }

        BeatStateSpace {
            fps,
            tau_min,
            tau_max,
            window_divisor,
            row_start,
            phase,
            period,
            beat,
            beat_states,
            fractions,
            fraction_group,
        }
    }

    #[inline]
    pub fn fps(&self) -> u32 {
        self.fps
    }

    #[inline]
    pub fn tau_min(&self) -> u32 {
        self.tau_min
    }

    #[inline]
    pub fn tau_max(&self) -> u32 {
        self.tau_max
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.phase.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// Number of distinct periods.
    #[inline]
    pub fn period_count(&self) -> usize {
        (self.tau_max - self.tau_min + 1) as usize
    }

    pub fn periods(&self) -> core::ops::RangeInclusive<u32> {
        self.tau_min..=self.tau_max
    }

    /// Flat indices of the row with period `tau`.
    pub fn row(&self, tau: u32) -> Range<usize> {
        let r = (tau - self.tau_min) as usize;
        self.row_start[r] as usize..self.row_start[r + 1] as usize
    }

    pub fn index_of(&self, phase: u32, period: u32) -> Option<StateIndex> {
        if period < self.tau_min || period > self.tau_max || phase >= period {
            return None;
        }
        Some(StateIndex(
            self.row_start[(period - self.tau_min) as usize] + phase,
        ))
    }

    #[inline]
    pub fn phase(&self, s: StateIndex) -> u32 {
        self.phase[s.get()]
    }

    #[inline]
    pub fn period(&self, s: StateIndex) -> u32 {
        self.period[s.get()]
    }

    #[inline]
    pub fn phase_fraction(&self, s: StateIndex) -> f64 {
        self.phase(s) as f64 / self.period(s) as f64
    }

    /// Number of leading phases of a period-`tau` row that count as beat states.
    #[inline]
    pub fn beat_window(&self, tau: u32) -> u32 {
        window_width(tau, self.window_divisor)
    }

    /// Number of non-beat phases of the row with period `tau`.
    #[inline]
    pub fn off_beat_count(&self, tau: u32) -> u32 {
        tau - self.beat_window(tau)
    }

    #[inline]
    pub fn is_beat_state(&self, s: StateIndex) -> bool {
        self.beat[s.get()]
    }

    /// All beat states, in canonical order.
    pub fn beat_states(&self) -> &[StateIndex] {
        &self.beat_states
    }

    pub(crate) fn fraction_groups(&self) -> (&[f64], &[u32]) {
        (&self.fractions, &self.fraction_group)
    }

    /// Tempo in BPM of a period in frames.
    #[inline]
    pub fn bpm(&self, tau: f64) -> f64 {
        self.fps as f64 * 60.0 / tau
    }
}

/// Free-function form of [`BeatStateSpace::is_beat_state`].
pub fn is_beat_state(space: &BeatStateSpace, s: StateIndex) -> bool {
    space.is_beat_state(s)
}

/// `max(1, round(τ/divisor))`, kept below `τ` so every row has an off-beat phase.
fn window_width(tau: u32, divisor: u32) -> u32 {
    let rounded = (2 * tau + divisor) / (2 * divisor);
    rounded.max(1).min(tau - 1)
}

/// The (bar position, meter) plane of the downbeat stage.
#[derive(Debug, Clone)]
pub struct BarStateSpace {
    meters: Vec<u32>,
    row_start: Vec<u32>,
    position: Vec<u32>,
    meter: Vec<u32>,
    downbeat_states: Vec<StateIndex>,
}

impl BarStateSpace {
    /// Builds the space for a set of beats-per-bar values. Duplicates are
    /// ignored and meters are ordered ascending.
    pub fn new(meters: &[u32]) -> Result<Self> {
        if meters.is_empty() {
            return Err(Error::EmptyMeters);
        }
        if let Some(&m) = meters.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidMeter(m));
        }
        let mut sorted = meters.to_vec();
        sorted.sort_unstable();
        sorted.dedup();

        let mut row_start = Vec::with_capacity(sorted.len() + 1);
        let mut position = Vec::new();
        let mut meter = Vec::new();
        let mut downbeat_states = Vec::new();
        for &m in &sorted {
            row_start.push(position.len() as u32);
            downbeat_states.push(StateIndex(position.len() as u32));
            for b in 0..m {
                position.push(b);
                meter.push(m);
            }
        }
        row_start.push(position.len() as u32);
        Ok(BarStateSpace {
            meters: sorted,
            row_start,
            position,
            meter,
            downbeat_states,
        })
    }

    pub fn meters(&self) -> &[u32] {
        &self.meters
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.position.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn index_of(&self, position: u32, meter: u32) -> Option<StateIndex> {
        let row = self.meters.iter().position(|&m| m == meter)?;
        if position >= meter {
            return None;
        }
        Some(StateIndex(self.row_start[row] + position))
    }

    #[inline]
    pub fn position(&self, s: StateIndex) -> u32 {
        self.position[s.get()]
    }

    #[inline]
    pub fn meter(&self, s: StateIndex) -> u32 {
        self.meter[s.get()]
    }

    #[inline]
    pub fn is_downbeat_state(&self, s: StateIndex) -> bool {
        self.position[s.get()] == 0
    }

    pub fn downbeat_states(&self) -> &[StateIndex] {
        &self.downbeat_states
    }
}
