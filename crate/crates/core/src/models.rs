//! Observation and transition models shared by the particle filter and the
//! Viterbi decoder.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::state_space::{BarStateSpace, BeatStateSpace, StateIndex};

/// Likelihood floor; no state ever scores exactly zero.
pub const OBSERVATION_FLOOR: f64 = 1e-8;

/// Beat and downbeat activations of one frame. The non-beat activation is the
/// implicit residual.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActivationFrame {
    pub beat: f64,
    pub downbeat: f64,
}

impl ActivationFrame {
    pub fn new(beat: f64, downbeat: f64) -> Result<Self> {
        let frame = ActivationFrame { beat, downbeat };
        frame.validate(0)?;
        Ok(frame)
    }

    /// Checks both values lie in `[0, 1]`; `index` is reported on failure.
    pub fn validate(&self, index: usize) -> Result<()> {
        for value in [self.beat, self.downbeat] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ActivationOutOfRange {
                    frame: index,
                    value,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TransitionParams {
    /// Probability of switching tempo at a beat boundary.
    pub tempo_change_prob: f64,
    /// Decay per frame of period difference for the tempo-change kernel.
    pub tempo_change_decay: f64,
    /// Probability of switching meter at a bar boundary.
    pub meter_change_prob: f64,
}

impl Default for TransitionParams {
    fn default() -> Self {
        TransitionParams {
            tempo_change_prob: 0.05,
            tempo_change_decay: 0.6,
            meter_change_prob: 0.02,
        }
    }
}

impl TransitionParams {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.tempo_change_prob) || !unit.contains(&self.meter_change_prob) {
            return Err(Error::InvalidConfig(
                "transition probabilities must lie in [0, 1]",
            ));
        }
        if !(self.tempo_change_decay > 0.0) {
            return Err(Error::InvalidConfig("tempo change decay must be positive"));
        }
        Ok(())
    }
}

/// How the non-beat mass `1 − beat` is spread over off-beat states.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum OffBeatNorm {
    /// Divide by the number of off-beat phases of the state's row. Short
    /// periods then score higher on every off-beat frame, which pulls
    /// decoding towards the fastest tempo.
    PerRow,
    /// Divide by a constant, the same for every period.
    Fixed(f64),
}

impl Default for OffBeatNorm {
    fn default() -> Self {
        OffBeatNorm::Fixed(DEFAULT_OFF_BEAT_DIVISOR)
    }
}

/// With a divisor of 1 the off-beat likelihood is the non-beat residual
/// `1 − beat` itself.
pub const DEFAULT_OFF_BEAT_DIVISOR: f64 = 1.0;

impl OffBeatNorm {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OffBeatNorm::Fixed(k) if !(k >= 1.0) || !k.is_finite() => {
                Err(Error::InvalidConfig("off-beat divisor must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    fn divisor(&self, space: &BeatStateSpace, tau: u32) -> f64 {
        match *self {
            OffBeatNorm::PerRow => space.off_beat_count(tau) as f64,
            OffBeatNorm::Fixed(k) => k,
        }
    }
}

/// `max(ε, beat)` on beat states, `max(ε, (1 − beat)/k)` elsewhere, `k` given
/// by `norm`.
pub fn beat_observation_likelihood(
    space: &BeatStateSpace,
    s: StateIndex,
    frame: &ActivationFrame,
    norm: OffBeatNorm,
) -> f64 {
    if space.is_beat_state(s) {
        frame.beat.max(OBSERVATION_FLOOR)
    } else {
        let k = norm.divisor(space, space.period(s));
        ((1.0 - frame.beat) / k).max(OBSERVATION_FLOOR)
    }
}

/// Downbeat states score the downbeat activation, other bar positions the
/// beat activation. Only meaningful at beat instants.
pub fn bar_observation_likelihood(
    space: &BarStateSpace,
    s: StateIndex,
    frame: &ActivationFrame,
) -> f64 {
    if space.is_downbeat_state(s) {
        frame.downbeat.max(OBSERVATION_FLOOR)
    } else {
        frame.beat.max(OBSERVATION_FLOOR)
    }
}

/// Sparse transition matrix in log domain, stored row-wise (by source).
#[derive(Debug, Clone)]
pub struct SparseTransitions {
    row_offsets: Vec<u32>,
    targets: Vec<u32>,
    log_probs: Vec<f64>,
}

impl SparseTransitions {
    fn from_rows(n_states: usize, mut row: impl FnMut(usize, &mut Vec<(u32, f64)>)) -> Self {
        let mut row_offsets = Vec::with_capacity(n_states + 1);
        let mut targets = Vec::new();
        let mut log_probs = Vec::new();
        let mut buf = Vec::new();
        for s in 0..n_states {
            row_offsets.push(targets.len() as u32);
            buf.clear();
            row(s, &mut buf);
            for &(t, p) in &buf {
                if p > 0.0 {
                    targets.push(t);
                    log_probs.push(libm::log(p));
                }
            }
        }
        row_offsets.push(targets.len() as u32);
        SparseTransitions {
            row_offsets,
            targets,
            log_probs,
        }
    }

    pub fn state_count(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    /// Successors of `s` with their log probabilities.
    pub fn successors(&self, s: StateIndex) -> impl Iterator<Item = (StateIndex, f64)> + '_ {
        let r = self.row_offsets[s.get()] as usize..self.row_offsets[s.get() + 1] as usize;
        self.targets[r.clone()]
            .iter()
            .zip(&self.log_probs[r])
            .map(|(&t, &lp)| (StateIndex(t), lp))
    }

    /// Log probability of the edge `from → to`, `-inf` when absent.
    pub fn log_prob(&self, from: StateIndex, to: StateIndex) -> f64 {
        self.successors(from)
            .find(|(t, _)| *t == to)
            .map_or(f64::NEG_INFINITY, |(_, lp)| lp)
    }

    /// Transposes into per-target predecessor lists, sources ascending.
    pub fn predecessors(&self) -> Predecessors {
        let n = self.state_count();
        let mut counts = alloc::vec![0u32; n + 1];
        for &t in &self.targets {
            counts[t as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut sources = alloc::vec![0u32; self.targets.len()];
        let mut log_probs = alloc::vec![0.0; self.targets.len()];
        for s in 0..n {
            for e in self.row_offsets[s] as usize..self.row_offsets[s + 1] as usize {
                let t = self.targets[e] as usize;
                let slot = fill[t] as usize;
                sources[slot] = s as u32;
                log_probs[slot] = self.log_probs[e];
                fill[t] += 1;
            }
        }
        Predecessors {
            offsets,
            sources,
            log_probs,
        }
    }
}

/// Incoming edges per state; sources appear in ascending order.
#[derive(Debug, Clone)]
pub struct Predecessors {
    pub(crate) offsets: Vec<u32>,
    pub(crate) sources: Vec<u32>,
    pub(crate) log_probs: Vec<f64>,
}

impl Predecessors {
    pub fn state_count(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Tempo-change kernel: from each period, the distribution over other periods
/// `∝ exp(−decay·|τ′ − τ|)`.
#[derive(Debug, Clone)]
struct TempoKernel {
    change_prob: f64,
    periods: usize,
    /// Row-major `periods × periods` cumulative distribution over alternatives;
    /// the diagonal entry repeats its predecessor so it is never selected.
    cdf: Vec<f64>,
    /// Normalized alternative probabilities, same layout (diagonal zero).
    probs: Vec<f64>,
}

impl TempoKernel {
    fn new(periods: usize, params: &TransitionParams) -> Self {
        let mut cdf = alloc::vec![0.0; periods * periods];
        let mut probs = alloc::vec![0.0; periods * periods];
        for from in 0..periods {
            let row = &mut probs[from * periods..(from + 1) * periods];
            let mut total = 0.0;
            for (to, p) in row.iter_mut().enumerate() {
                if to != from {
                    // Relative to the nearest neighbour so huge decays do not underflow.
                    let d = from.abs_diff(to) as f64;
                    *p = libm::exp(-params.tempo_change_decay * (d - 1.0));
                    total += *p;
                }
            }
            let mut acc = 0.0;
            for (to, p) in row.iter_mut().enumerate() {
                if total > 0.0 {
                    *p /= total;
                }
                acc += *p;
                cdf[from * periods + to] = acc;
            }
        }
        TempoKernel {
            change_prob: if periods > 1 {
                params.tempo_change_prob
            } else {
                0.0
            },
            periods,
            cdf,
            probs,
        }
    }

    /// Probability of moving from period row `from` to row `to` at a boundary.
    fn prob(&self, from: usize, to: usize) -> f64 {
        if from == to {
            1.0 - self.change_prob
        } else {
            self.change_prob * self.probs[from * self.periods + to]
        }
    }

    fn sample<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        if self.change_prob <= 0.0 || rng.random::<f64>() >= self.change_prob {
            return from;
        }
        let row = &self.cdf[from * self.periods..(from + 1) * self.periods];
        let u = rng.random::<f64>() * row[self.periods - 1];
        let mut to = row.partition_point(|&c| c <= u).min(self.periods - 1);
        if to == from {
            // Only reachable through rounding at the top of the cdf.
            to = if from > 0 { from - 1 } else { from + 1 };
        }
        to
    }
}

/// Beat-stage dynamics and observation model bundled with their state space.
#[derive(Debug, Clone)]
pub struct BeatModel {
    space: BeatStateSpace,
    params: TransitionParams,
    kernel: TempoKernel,
    norm: OffBeatNorm,
    /// `1/k` per period row.
    inv_off_beat: Vec<f64>,
    transitions: SparseTransitions,
    predecessors: Predecessors,
}

impl BeatModel {
    /// Model with the default [`OffBeatNorm`].
    pub fn new(space: BeatStateSpace, params: TransitionParams) -> Result<Self> {
        Self::with_norm(space, params, OffBeatNorm::default())
    }

    pub fn with_norm(
        space: BeatStateSpace,
        params: TransitionParams,
        norm: OffBeatNorm,
    ) -> Result<Self> {
        params.validate()?;
        norm.validate()?;
        let kernel = TempoKernel::new(space.period_count(), &params);
        let inv_off_beat = space
            .periods()
            .map(|tau| 1.0 / norm.divisor(&space, tau))
            .collect();
        let transitions = build_beat_transitions(&space, &kernel);
        let predecessors = transitions.predecessors();
        Ok(BeatModel {
            space,
            params,
            kernel,
            norm,
            inv_off_beat,
            transitions,
            predecessors,
        })
    }

    pub fn space(&self) -> &BeatStateSpace {
        &self.space
    }

    pub fn params(&self) -> &TransitionParams {
        &self.params
    }

    pub fn off_beat_norm(&self) -> OffBeatNorm {
        self.norm
    }

    pub fn transitions(&self) -> &SparseTransitions {
        &self.transitions
    }

    pub fn predecessors(&self) -> &Predecessors {
        &self.predecessors
    }

    /// Advances one frame: phase +1 inside a beat, and at the wrap a new beat
    /// starts at phase 0 with a possibly different period.
    #[inline]
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: StateIndex, rng: &mut R) -> StateIndex {
        let space = &self.space;
        let (phi, tau) = (space.phase(s), space.period(s));
        if phi + 1 < tau {
            return StateIndex(s.0 + 1);
        }
        let row = (tau - space.tau_min()) as usize;
        let next = self.kernel.sample(row, rng) as u32 + space.tau_min();
        StateIndex(space.row(next).start as u32)
    }

    #[inline]
    pub fn likelihood(&self, s: StateIndex, frame: &ActivationFrame) -> f64 {
        if self.space.is_beat_state(s) {
            frame.beat.max(OBSERVATION_FLOOR)
        } else {
            let row = (self.space.period(s) - self.space.tau_min()) as usize;
            ((1.0 - frame.beat) * self.inv_off_beat[row]).max(OBSERVATION_FLOOR)
        }
    }

    /// Per-state log likelihoods of one frame, written into `out`.
    pub fn log_likelihoods(&self, frame: &ActivationFrame, out: &mut [f64]) {
        let on_beat = libm::log(frame.beat.max(OBSERVATION_FLOOR));
        for tau in self.space.periods() {
            let r = (tau - self.space.tau_min()) as usize;
            let off_beat =
                libm::log(((1.0 - frame.beat) * self.inv_off_beat[r]).max(OBSERVATION_FLOOR));
            let width = self.space.beat_window(tau) as usize;
            let row = self.space.row(tau);
            let (beat, rest) = out[row].split_at_mut(width);
            beat.fill(on_beat);
            rest.fill(off_beat);
        }
    }
}

/// Samples the successor of a beat state; see [`BeatModel::sample_transition`].
pub fn sample_beat_transition<R: Rng + ?Sized>(
    model: &BeatModel,
    s: StateIndex,
    rng: &mut R,
) -> StateIndex {
    model.sample_transition(s, rng)
}

/// Sparse log-domain transition structure of the beat space.
pub fn transition_log_matrix(
    space: &BeatStateSpace,
    params: &TransitionParams,
) -> SparseTransitions {
    build_beat_transitions(space, &TempoKernel::new(space.period_count(), params))
}

fn build_beat_transitions(space: &BeatStateSpace, kernel: &TempoKernel) -> SparseTransitions {
    SparseTransitions::from_rows(space.len(), |i, row| {
        let s = StateIndex::from(i);
        let (phi, tau) = (space.phase(s), space.period(s));
        if phi + 1 < tau {
            row.push((i as u32 + 1, 1.0));
        } else {
            let from = (tau - space.tau_min()) as usize;
            for next in space.periods() {
                let to = (next - space.tau_min()) as usize;
                row.push((space.row(next).start as u32, kernel.prob(from, to)));
            }
        }
    })
}

/// Downbeat-stage dynamics, stepped once per beat.
#[derive(Debug, Clone)]
pub struct BarModel {
    space: BarStateSpace,
    params: TransitionParams,
    transitions: SparseTransitions,
    predecessors: Predecessors,
}

impl BarModel {
    pub fn new(space: BarStateSpace, params: TransitionParams) -> Result<Self> {
        params.validate()?;
        let transitions = bar_transition_log_matrix(&space, &params);
        let predecessors = transitions.predecessors();
        Ok(BarModel {
            space,
            params,
            transitions,
            predecessors,
        })
    }

    pub fn space(&self) -> &BarStateSpace {
        &self.space
    }

    pub fn transitions(&self) -> &SparseTransitions {
        &self.transitions
    }

    pub fn predecessors(&self) -> &Predecessors {
        &self.predecessors
    }

    /// Advances one beat; at the end of a bar the meter may switch, uniformly
    /// among the other meters.
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: StateIndex, rng: &mut R) -> StateIndex {
        let space = &self.space;
        let (b, m) = (space.position(s), space.meter(s));
        if b + 1 < m {
            return StateIndex(s.0 + 1);
        }
        let meters = space.meters();
        let mut next = m;
        if meters.len() > 1 && rng.random::<f64>() < self.params.meter_change_prob {
            let pick = rng.random_range(0..meters.len() - 1);
            let others = meters.iter().filter(|&&x| x != m);
            next = *others.clone().nth(pick).unwrap_or(&m);
        }
        space.index_of(0, next).expect("meter is part of the space")
    }

    #[inline]
    pub fn likelihood(&self, s: StateIndex, frame: &ActivationFrame) -> f64 {
        bar_observation_likelihood(&self.space, s, frame)
    }

    pub fn log_likelihoods(&self, frame: &ActivationFrame, out: &mut [f64]) {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = libm::log(self.likelihood(StateIndex::from(i), frame));
        }
    }
}

/// Sparse log-domain transition structure of the bar space.
pub fn bar_transition_log_matrix(
    space: &BarStateSpace,
    params: &TransitionParams,
) -> SparseTransitions {
    let meters = space.meters();
    SparseTransitions::from_rows(space.len(), |i, row| {
        let s = StateIndex::from(i);
        let (b, m) = (space.position(s), space.meter(s));
        if b + 1 < m {
            row.push((i as u32 + 1, 1.0));
        } else if meters.len() == 1 {
            row.push((space.index_of(0, m).unwrap().0, 1.0));
        } else {
            let q = params.meter_change_prob;
            for &next in meters {
                let p = if next == m {
                    1.0 - q
                } else {
                    q / (meters.len() - 1) as f64
                };
                row.push((space.index_of(0, next).unwrap().0, p));
            }
        }
    })
}
