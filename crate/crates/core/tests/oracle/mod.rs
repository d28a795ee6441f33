//! Independent reference implementations for the decoder, the resampler and
//! the F-measure matching. Shared by the integration and acceptance tests.

#![allow(dead_code)]

use rand::Rng;
use vocalbeat_core::dbn::{self, path_log_prob};
use vocalbeat_core::models::SparseTransitions;
use vocalbeat_core::particle_filter::systematic_resample_with_offset;
use vocalbeat_core::{
    ActivationFrame, BarModel, BarStateSpace, BeatModel, BeatStateSpace, OffBeatNorm,
    TransitionParams,
};

/// Upper bound on the number of paths an exhaustive search may enumerate.
pub const MAX_PATHS: f64 = 1_000_000.0;

/// A decoding problem small enough to enumerate every path.
#[derive(Debug, Clone)]
pub struct DecodeInstance {
    pub transitions: SparseTransitions,
    pub model: Model,
    /// Per-frame, per-state log likelihoods.
    pub log_obs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum Model {
    Beat(BeatModel),
    Bar(BarModel),
}

impl DecodeInstance {
    pub fn state_count(&self) -> usize {
        self.transitions.state_count()
    }

    pub fn frames(&self) -> usize {
        self.log_obs.len()
    }
}

fn random_frames(rng: &mut impl Rng, frames: usize) -> Vec<ActivationFrame> {
    (0..frames)
        .map(|_| {
            // Mix exact zeros and ones in to exercise the likelihood floor.
            let mut draw = || match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random::<f64>(),
            };
            ActivationFrame::new(draw(), draw()).unwrap()
        })
        .collect()
}

fn random_params(rng: &mut impl Rng) -> TransitionParams {
    TransitionParams {
        tempo_change_prob: [0.0, 0.05, rng.random(), rng.random(), 1.0][rng.random_range(0..5)],
        tempo_change_decay: rng.random_range(0.05..3.0),
        meter_change_prob: [0.0, 0.02, rng.random(), rng.random(), 1.0][rng.random_range(0..5)],
    }
}

fn random_beat_model(rng: &mut impl Rng) -> BeatModel {
    loop {
        // Short periods with few tempi wrap often within ten frames while
        // keeping the path count enumerable, so tempo branching is exercised.
        let (tau_min, span) = if rng.random_bool(0.7) {
            (rng.random_range(2..=8), rng.random_range(1..=6))
        } else {
            (rng.random_range(2..=40), rng.random_range(0..=12))
        };
        let tau_max = tau_min + span;
        let states: u32 = (tau_min..=tau_max).sum();
        if states > 200 {
            continue;
        }
        let space = BeatStateSpace::from_periods(
            rng.random_range(1..=100),
            tau_min,
            tau_max,
            rng.random_range(2..=16),
        );
        let norm = if rng.random_bool(0.5) {
            OffBeatNorm::PerRow
        } else {
            OffBeatNorm::Fixed(rng.random_range(1.0..20.0))
        };
        return BeatModel::with_norm(space, random_params(rng), norm).unwrap();
    }
}

fn random_bar_model(rng: &mut impl Rng) -> BarModel {
    let meters: Vec<u32> = (0..rng.random_range(1..=4))
        .map(|_| rng.random_range(2..=9))
        .collect();
    BarModel::new(BarStateSpace::new(&meters).unwrap(), random_params(rng)).unwrap()
}

/// Number of paths with nonzero probability.
pub fn path_count(transitions: &SparseTransitions, frames: usize) -> f64 {
    let n = transitions.state_count();
    let mut count = vec![1.0; n];
    for _ in 1..frames {
        let mut next = vec![0.0; n];
        for (s, &c) in count.iter().enumerate() {
            for (t, _) in transitions.successors(s.into()) {
                next[t.get()] += c;
            }
        }
        count = next;
    }
    count.iter().sum()
}

/// Random beat- or bar-space decoding problem with at most 200 states and 10
/// frames whose paths can be enumerated.
pub fn random_decode_instance(rng: &mut impl Rng) -> DecodeInstance {
    loop {
        let model = if rng.random_bool(0.7) {
            Model::Beat(random_beat_model(rng))
        } else {
            Model::Bar(random_bar_model(rng))
        };
        let frames = rng.random_range(1..=10);
        let transitions = match &model {
            Model::Beat(m) => m.transitions().clone(),
            Model::Bar(m) => m.transitions().clone(),
        };
        if path_count(&transitions, frames) > MAX_PATHS {
            continue;
        }
        let n = transitions.state_count();
        let log_obs = random_frames(rng, frames)
            .iter()
            .map(|f| {
                let mut out = vec![0.0; n];
                match &model {
                    Model::Beat(m) => m.log_likelihoods(f, &mut out),
                    Model::Bar(m) => m.log_likelihoods(f, &mut out),
                }
                out
            })
            .collect();
        return DecodeInstance {
            transitions,
            model,
            log_obs,
        };
    }
}

/// Best path log probability by depth-first enumeration of every path,
/// accumulating terms in path order from a uniform start.
pub fn exhaustive_max(transitions: &SparseTransitions, log_obs: &[Vec<f64>]) -> f64 {
    fn visit(
        transitions: &SparseTransitions,
        log_obs: &[Vec<f64>],
        t: usize,
        s: usize,
        acc: f64,
        best: &mut f64,
    ) {
        if t + 1 == log_obs.len() {
            if acc > *best {
                *best = acc;
            }
            return;
        }
        for (next, lp) in transitions.successors(s.into()) {
            let v = acc + lp + log_obs[t + 1][next.get()];
            visit(transitions, log_obs, t + 1, next.get(), v, best);
        }
    }
    let n = transitions.state_count();
    let init = -libm::log(n as f64);
    let mut best = f64::NEG_INFINITY;
    for s in 0..n {
        visit(transitions, log_obs, 0, s, init + log_obs[0][s], &mut best);
    }
    best
}

/// Decodes an instance and compares with the exhaustive maximum. Both the
/// reported score and the re-scored path must equal it bit for bit.
pub fn check_decode_instance(inst: &DecodeInstance) -> Result<(), String> {
    let preds = match &inst.model {
        Model::Beat(m) => m.predecessors(),
        Model::Bar(m) => m.predecessors(),
    };
    let (path, score) = dbn::viterbi(preds, inst.frames(), |t, out| {
        out.copy_from_slice(&inst.log_obs[t])
    })
    .map_err(|e| e.to_string())?;
    let oracle = exhaustive_max(&inst.transitions, &inst.log_obs);
    let rescored = path_log_prob(&path, &inst.transitions, |t, s| inst.log_obs[t][s.get()]);
    if score.to_bits() != oracle.to_bits() || rescored.to_bits() != oracle.to_bits() {
        return Err(format!(
            "{} states, {} frames: decoder {score}, path {rescored}, exhaustive {oracle}",
            inst.state_count(),
            inst.frames()
        ));
    }
    Ok(())
}

/// Random normalized weight vector with a mix of zeros, spikes and uniform
/// mass.
pub fn random_weights(rng: &mut impl Rng) -> Vec<f64> {
    let len = rng.random_range(1..=300);
    let mut w: Vec<f64> = (0..len)
        .map(|_| match rng.random_range(0..6) {
            0 => 0.0,
            1 => rng.random::<f64>() * 1e3,
            _ => rng.random::<f64>(),
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Every index must be drawn `⌊m·wᵢ⌋` or `⌈m·wᵢ⌉` times, and zero weights
/// never. Expected counts within 1e-9 of an integer may land on either
/// neighbour, since normalized weights are themselves rounded.
pub fn check_resample_law(weights: &[f64], m: usize, u: f64) -> Result<(), String> {
    let idx = systematic_resample_with_offset(weights, m, u).map_err(|e| e.to_string())?;
    if idx.len() != m {
        return Err(format!("drew {} indices, wanted {m}", idx.len()));
    }
    let mut counts = vec![0usize; weights.len()];
    for i in idx {
        counts[i] += 1;
    }
    for (i, (&c, &w)) in counts.iter().zip(weights).enumerate() {
        if w == 0.0 && c > 0 {
            return Err(format!("index {i} has zero weight but was drawn {c} times"));
        }
        let expected = m as f64 * w;
        let lo = (expected - 1e-9).floor().max(0.0) as usize;
        let hi = (expected + 1e-9).ceil() as usize;
        if c < lo || c > hi {
            return Err(format!(
                "index {i}: count {c}, expected {expected} (m = {m}, u = {u})"
            ));
        }
    }
    Ok(())
}

/// Maximum one-to-one matching between estimates and references within
/// `±tolerance` (augmenting paths).
pub fn max_matching(est: &[f64], reference: &[f64], tolerance: f64) -> usize {
    let edge = |e: f64, r: f64| (e - r).abs() <= tolerance + 1e-9;
    let mut owner: Vec<Option<usize>> = vec![None; est.len()];
    fn augment(
        r: usize,
        est: &[f64],
        reference: &[f64],
        edge: &dyn Fn(f64, f64) -> bool,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for e in 0..est.len() {
            if seen[e] || !edge(est[e], reference[r]) {
                continue;
            }
            seen[e] = true;
            let free = match owner[e] {
                None => true,
                Some(other) => augment(other, est, reference, edge, seen, owner),
            };
            if free {
                owner[e] = Some(r);
                return true;
            }
        }
        false
    }
    let mut matched = 0;
    for r in 0..reference.len() {
        let mut seen = vec![false; est.len()];
        if augment(r, est, reference, &edge, &mut seen, &mut owner) {
            matched += 1;
        }
    }
    matched
}

/// Sorted random event lists dense enough for tolerance windows to overlap.
pub fn random_match_instance(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>, f64) {
    let span = rng.random_range(0.5..10.0);
    let (n_est, n_ref) = (rng.random_range(0..=25), rng.random_range(0..=25));
    let mut draw = |n: usize| {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * span).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let est = draw(n_est);
    let reference = draw(n_ref);
    let tolerance = [0.07, 0.2, rng.random_range(0.01..0.5)][rng.random_range(0..3)];
    (est, reference, tolerance)
}
