//! Offline Viterbi decoding over the bar-pointer spaces and beat
//! extrapolation from decoded history.
//!
//! The same decoder serves three purposes: the offline oracle over a whole
//! clip, the periodic decode of past activations that feeds the past-informed
//! particle injections, and the extrapolating online baseline.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::models::{ActivationFrame, BarModel, BeatModel, Predecessors, SparseTransitions};
use crate::state_space::StateIndex;

/// Default number of trailing inter-beat intervals used by [`extrapolate_beats`].
pub const DEFAULT_IBI_WINDOW: usize = 8;

/// Max-product decoding with a uniform initial distribution.
///
/// `log_obs(frame, out)` fills the per-state log likelihoods of a frame.
/// Ties go to the lower state index, both for the final state and for
/// back-pointers. Returns the state path and its log probability.
pub fn viterbi(
    preds: &Predecessors,
    n_frames: usize,
    mut log_obs: impl FnMut(usize, &mut [f64]),
) -> Result<(Vec<StateIndex>, f64)> {
    let mut forward = ViterbiForward::new(preds.state_count());
    forward.reserve(n_frames);
    for t in 0..n_frames {
        forward.push(preds, |out| log_obs(t, out));
    }
    forward.best_path()
}

/// Forward pass of [`viterbi`] fed one frame at a time, so a growing prefix
/// can be decoded repeatedly without recomputing it.
#[derive(Debug, Clone)]
pub struct ViterbiForward {
    delta: Vec<f64>,
    next: Vec<f64>,
    obs: Vec<f64>,
    back: Vec<u32>,
    frames: usize,
}

impl ViterbiForward {
    pub fn new(state_count: usize) -> Self {
        ViterbiForward {
            delta: alloc::vec![0.0; state_count],
            next: alloc::vec![0.0; state_count],
            obs: alloc::vec![0.0; state_count],
            back: Vec::new(),
            frames: 0,
        }
    }

    /// Number of frames pushed so far.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Reserves back-pointer storage for `frames` frames in total.
    pub fn reserve(&mut self, frames: usize) {
        let total = self.delta.len() * frames.saturating_sub(1);
        self.back.reserve(total.saturating_sub(self.back.len()));
    }

    /// Advances by one frame; `log_obs` fills its per-state log likelihoods.
    pub fn push(&mut self, preds: &Predecessors, log_obs: impl FnOnce(&mut [f64])) {
        let n = self.delta.len();
        assert_eq!(preds.state_count(), n, "predecessor table size mismatch");
        log_obs(&mut self.obs);
        self.frames += 1;
        if self.frames == 1 {
            let init = -libm::log(n as f64);
            for (d, o) in self.delta.iter_mut().zip(&self.obs) {
                *d = init + o;
            }
            return;
        }
        let start = self.back.len();
        self.back.resize(start + n, 0);
        let bp = &mut self.back[start..];
        let (sources, log_probs) = (&preds.sources[..], &preds.log_probs[..]);
        let delta = &self.delta;
        let cells = self.next.iter_mut().zip(bp.iter_mut()).zip(&self.obs);
        for (edges, ((next, bp), &o)) in preds.offsets.windows(2).zip(cells) {
            let edges = edges[0] as usize..edges[1] as usize;
            let mut best = f64::NEG_INFINITY;
            let mut arg = u32::MAX;
            for (&src, &lp) in sources[edges.clone()].iter().zip(&log_probs[edges.clone()]) {
                let v = delta[src as usize] + lp;
                if v > best {
                    best = v;
                    arg = src;
                }
            }
            if arg == u32::MAX {
                // Unreachable state; keep a valid pointer for back-tracking.
                arg = sources.get(edges.start).copied().unwrap_or(0);
            }
            *next = best + o;
            *bp = arg;
        }
        core::mem::swap(&mut self.delta, &mut self.next);
    }

    /// Most likely path over every frame pushed so far, with its log
    /// probability.
    pub fn best_path(&self) -> Result<(Vec<StateIndex>, f64)> {
        if self.frames == 0 {
            return Err(Error::EmptyInput);
        }
        let n = self.delta.len();
        let mut last = 0;
        for s in 1..n {
            if self.delta[s] > self.delta[last] {
                last = s;
            }
        }
        let score = self.delta[last];
        let mut path = alloc::vec![StateIndex(0); self.frames];
        path[self.frames - 1] = StateIndex::from(last);
        for t in (1..self.frames).rev() {
            let prev = self.back[(t - 1) * n + path[t].get()];
            path[t - 1] = StateIndex(prev);
        }
        Ok((path, score))
    }
}

/// Log probability of a state path under a uniform start, the given
/// transitions and per-frame log likelihoods.
pub fn path_log_prob(
    path: &[StateIndex],
    transitions: &SparseTransitions,
    mut log_obs: impl FnMut(usize, StateIndex) -> f64,
) -> f64 {
    let mut total = -libm::log(transitions.state_count() as f64);
    for (t, &s) in path.iter().enumerate() {
        if t > 0 {
            total += transitions.log_prob(path[t - 1], s);
        }
        total += log_obs(t, s);
    }
    total
}

/// Result of decoding a whole activation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPath {
    /// Beat-space state per frame.
    pub states: Vec<StateIndex>,
    pub log_prob: f64,
    /// Frames where the path enters the beat window.
    pub beat_frames: Vec<usize>,
    /// Beat timestamps in seconds.
    pub beats: Vec<f64>,
    /// Downbeat timestamps in seconds (a subset of `beats`).
    pub downbeats: Vec<f64>,
    /// Bar-space state at every beat (empty without a bar model).
    pub bar_states: Vec<StateIndex>,
    /// Meter of the bar that each decoded downbeat opens.
    pub bar_meters: Vec<u32>,
}

/// Decodes the beat path of a full activation sequence.
pub fn viterbi_decode(activations: &[ActivationFrame], model: &BeatModel) -> Result<DecodedPath> {
    let (states, log_prob) = viterbi(model.predecessors(), activations.len(), |t, out| {
        model.log_likelihoods(&activations[t], out)
    })?;
    Ok(beat_path(states, log_prob, model))
}

/// Reads the beats off a decoded beat-space path.
pub fn beat_path(states: Vec<StateIndex>, log_prob: f64, model: &BeatModel) -> DecodedPath {
    let space = model.space();
    let mut beat_frames = Vec::new();
    for (t, &s) in states.iter().enumerate() {
        let enters = if t == 0 {
            space.phase(s) == 0
        } else {
            space.is_beat_state(s) && !space.is_beat_state(states[t - 1])
        };
        if enters {
            beat_frames.push(t);
        }
    }
    let fps = space.fps() as f64;
    let beats = beat_frames.iter().map(|&f| f as f64 / fps).collect();
    DecodedPath {
        states,
        log_prob,
        beat_frames,
        beats,
        downbeats: Vec::new(),
        bar_states: Vec::new(),
        bar_meters: Vec::new(),
    }
}

/// Decodes beats and then, at the decoded beat frames, bar positions.
pub fn viterbi_decode_with_bars(
    activations: &[ActivationFrame],
    beat_model: &BeatModel,
    bar_model: &BarModel,
) -> Result<DecodedPath> {
    let mut path = viterbi_decode(activations, beat_model)?;
    decode_bars(&mut path, activations, bar_model)?;
    Ok(path)
}

/// Fills in the bar positions of a decoded beat path, decoding the bar space
/// at the beat frames.
pub fn decode_bars(
    path: &mut DecodedPath,
    activations: &[ActivationFrame],
    bar_model: &BarModel,
) -> Result<()> {
    if path.beat_frames.is_empty() {
        return Ok(());
    }
    let frames = &path.beat_frames;
    let (bar_states, _) = viterbi(bar_model.predecessors(), frames.len(), |k, out| {
        bar_model.log_likelihoods(&activations[frames[k]], out)
    })?;
    let bar = bar_model.space();
    for (k, &s) in bar_states.iter().enumerate() {
        if bar.is_downbeat_state(s) {
            path.downbeats.push(path.beats[k]);
            path.bar_meters.push(bar.meter(s));
        }
    }
    path.bar_states = bar_states;
    Ok(())
}

fn check_sorted(times: &[f64]) -> Result<()> {
    if times.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(Error::Unsorted)
    }
}

/// Median of the last `window` inter-beat intervals.
pub fn inter_beat_interval(history: &[f64], window: usize) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: history.len(),
        });
    }
    check_sorted(history)?;
    let start = history.len().saturating_sub(window.max(1) + 1);
    let mut ibis: Vec<f64> = history[start..].windows(2).map(|w| w[1] - w[0]).collect();
    ibis.sort_by(|a, b| a.total_cmp(b));
    let mid = ibis.len() / 2;
    Ok(if ibis.len() % 2 == 1 {
        ibis[mid]
    } else {
        0.5 * (ibis[mid - 1] + ibis[mid])
    })
}

/// Continues a beat history at a constant interval: `t_last + k·IBI` for
/// `k = 1, 2, …` while within `horizon` seconds of the last beat.
pub fn extrapolate_beats(history: &[f64], horizon: f64) -> Result<Vec<f64>> {
    extrapolate_beats_with_window(history, horizon, DEFAULT_IBI_WINDOW)
}

pub fn extrapolate_beats_with_window(
    history: &[f64],
    horizon: f64,
    window: usize,
) -> Result<Vec<f64>> {
    let ibi = inter_beat_interval(history, window)?;
    let last = history[history.len() - 1];
    let mut out = Vec::new();
    let mut k = 1.0;
    while k * ibi <= horizon + 1e-9 {
        out.push(last + k * ibi);
        k += 1.0;
    }
    Ok(out)
}

/// Most frequent value; ties go to the smaller value.
pub fn modal_meter(meters: &[u32]) -> Option<u32> {
    let mut sorted = meters.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(u32, usize)> = None;
    for run in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, c)| run.len() > c) {
            best = Some((run[0], run.len()));
        }
    }
    best.map(|(m, _)| m)
}

/// Marks every `meter`-th extrapolated beat as a downbeat, counting from the
/// last downbeat of the history.
pub fn extrapolate_downbeats(
    beat_history: &[f64],
    downbeat_history: &[f64],
    beat_extrapolations: &[f64],
    meter: u32,
) -> Result<Vec<f64>> {
    let &last_downbeat = downbeat_history.last().ok_or(Error::NoDownbeats)?;
    if meter == 0 {
        return Err(Error::InvalidMeter(0));
    }
    check_sorted(beat_extrapolations)?;
    // Beats after the last downbeat already elapsed in the history.
    let since = beat_history
        .iter()
        .filter(|&&b| b > last_downbeat + 1e-3)
        .count();
    Ok(beat_extrapolations
        .iter()
        .enumerate()
        .filter(|(k, _)| (since + k + 1) % meter as usize == 0)
        .map(|(_, &t)| t)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TransitionParams;
    use crate::state_space::{BarStateSpace, BeatStateSpace};

    fn impulse_train(period: usize, frames: usize) -> Vec<ActivationFrame> {
        (0..frames)
            .map(|t| ActivationFrame {
                beat: if t % period == 0 { 1.0 } else { 0.0 },
                downbeat: if t % (4 * period) == 0 { 1.0 } else { 0.0 },
            })
            .collect()
    }

    #[test]
    fn impulse_train_decodes_to_its_period() {
        let model = BeatModel::new(
            BeatStateSpace::new(50, 55.0, 215.0).unwrap(),
            TransitionParams::default(),
        )
        .unwrap();
        let acts = impulse_train(20, 500);
        let path = viterbi_decode(&acts, &model).unwrap();
        assert_eq!(path.beat_frames, (0..500).step_by(20).collect::<Vec<_>>());
        for w in path.beats.windows(2) {
            assert!((w[1] - w[0] - 0.4).abs() < 1e-12);
        }
        assert!(path.states.iter().all(|&s| model.space().period(s) == 20));
    }

    #[test]
    fn incremental_forward_matches_fresh_decodes() {
        let model = BeatModel::new(
            BeatStateSpace::new(50, 90.0, 150.0).unwrap(),
            TransitionParams::default(),
        )
        .unwrap();
        let acts: Vec<_> = (0..240)
            .map(|t| ActivationFrame {
                beat: if t % 23 < 2 {
                    0.8
                } else {
                    0.1 + 0.01 * (t % 7) as f64
                },
                downbeat: 0.0,
            })
            .collect();
        let mut forward = ViterbiForward::new(model.space().len());
        for (t, frame) in acts.iter().enumerate() {
            forward.push(model.predecessors(), |out| {
                model.log_likelihoods(frame, out)
            });
            if t % 37 == 0 || t + 1 == acts.len() {
                let fresh = viterbi_decode(&acts[..=t], &model).unwrap();
                let (states, log_prob) = forward.best_path().unwrap();
                assert_eq!(states, fresh.states);
                assert_eq!(log_prob.to_bits(), fresh.log_prob.to_bits());
            }
        }
        assert!(ViterbiForward::new(3).best_path().is_err());
    }

    #[test]
    fn constant_activations_give_a_cyclic_path() {
        let model = BeatModel::new(
            BeatStateSpace::new(50, 100.0, 100.0).unwrap(),
            TransitionParams::default(),
        )
        .unwrap();
        let acts = alloc::vec![ActivationFrame { beat: 0.3, downbeat: 0.0 }; 200];
        let path = viterbi_decode(&acts, &model).unwrap();
        for w in path.beat_frames.windows(2) {
            assert_eq!(w[1] - w[0], 30);
        }
        for w in path.states.windows(2) {
            assert!(model.transitions().log_prob(w[0], w[1]).is_finite());
        }
    }

    #[test]
    fn downbeats_follow_the_bar_pattern() {
        let beat = BeatModel::new(
            BeatStateSpace::new(50, 55.0, 215.0).unwrap(),
            TransitionParams::default(),
        )
        .unwrap();
        let bar = BarModel::new(
            BarStateSpace::new(&[3, 4]).unwrap(),
            TransitionParams::default(),
        )
        .unwrap();
        let acts = impulse_train(20, 1000);
        let path = viterbi_decode_with_bars(&acts, &beat, &bar).unwrap();
        let expected: Vec<f64> = (0..1000).step_by(80).map(|f| f as f64 / 50.0).collect();
        assert_eq!(path.downbeats, expected);
        assert_eq!(modal_meter(&path.bar_meters), Some(4));
    }

    #[test]
    fn empty_input_is_an_error() {
        let model = BeatModel::new(
            BeatStateSpace::new(50, 60.0, 180.0).unwrap(),
            TransitionParams::default(),
        )
        .unwrap();
        assert_eq!(viterbi_decode(&[], &model), Err(Error::EmptyInput));
    }

    #[test]
    fn extrapolation_examples() {
        let out = extrapolate_beats(&[1.0, 1.5, 2.0], 1.2).unwrap();
        assert_eq!(out, alloc::vec![2.5, 3.0]);

        let history = [0.0, 0.5, 1.0, 1.52, 2.02, 2.92];
        assert!((inter_beat_interval(&history, 8).unwrap() - 0.5).abs() < 1e-12);
        let out = extrapolate_beats(&history, 0.6).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0] - 3.42).abs() < 1e-12);

        assert_eq!(
            extrapolate_beats(&[1.0], 1.0),
            Err(Error::InsufficientHistory { needed: 2, got: 1 })
        );
        assert_eq!(extrapolate_beats(&[1.0, 0.5], 1.0), Err(Error::Unsorted));
    }

    #[test]
    fn extrapolated_beats_are_evenly_spaced() {
        let history = [0.1, 0.57, 1.05, 1.49, 1.98];
        let ibi = inter_beat_interval(&history, 8).unwrap();
        let out = extrapolate_beats(&history, 10.0).unwrap();
        assert!(out[0] > 1.98);
        for w in out.windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - ibi).abs() < 1e-12);
        }
    }

    #[test]
    fn downbeat_extrapolation_examples() {
        let beats: Vec<f64> = (0..=9).map(|k| k as f64 * 0.5).collect();
        let downbeats = [0.0, 2.0, 4.0];
        let future: Vec<f64> = (10..=17).map(|k| k as f64 * 0.5).collect();
        let out = extrapolate_downbeats(&beats, &downbeats, &future, 4).unwrap();
        assert_eq!(out, alloc::vec![6.0, 8.0]);

        assert_eq!(modal_meter(&[4, 4, 4, 3]), Some(4));
        assert_eq!(modal_meter(&[3, 4]), Some(3));
        assert_eq!(modal_meter(&[]), None);

        assert_eq!(
            extrapolate_downbeats(&beats, &[], &future, 4),
            Err(Error::NoDownbeats)
        );
    }
}
