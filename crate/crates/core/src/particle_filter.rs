//! Sequential Monte Carlo over a discrete state space with dynamic particle
//! injection.
//!
//! A step moves every particle through the transition model, reweights it by
//! the observation likelihood, optionally injects extra particles at beat or
//! downbeat states, resamples the enlarged population and then removes as
//! many particles as were injected, so the population is back to `N` when the
//! step returns.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{ActivationFrame, BarModel, BeatModel};
use crate::state_space::{BeatStateSpace, StateIndex};

/// Tolerance on `Σw = 1` accepted by [`systematic_resample`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Default salience threshold on activations.
pub const DEFAULT_SALIENCE_THRESHOLD: f64 = 0.4;

/// Which states injected particles are placed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionTarget {
    BeatStates,
    DownbeatStates,
}

/// What triggered an injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionCause {
    Salience,
    Extrapolation,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectionRequest {
    pub count: usize,
    pub target: InjectionTarget,
    pub cause: InjectionCause,
}

/// Which particles may be removed after resampling to restore `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RemovalPool {
    /// Uniformly over the whole resampled population.
    #[default]
    All,
    /// Only offspring of particles that existed before the injection.
    Survivors,
}

/// A discrete state-space model the particle filter can run on.
pub trait FilterModel {
    fn state_count(&self) -> usize;
    fn advance<R: Rng + ?Sized>(&self, s: StateIndex, rng: &mut R) -> StateIndex;
    fn likelihood(&self, s: StateIndex, frame: &ActivationFrame) -> f64;
    /// States targeted by an injection, `None` if the model has no such states.
    fn targets(&self, target: InjectionTarget) -> Option<&[StateIndex]>;
}

impl FilterModel for BeatModel {
    fn state_count(&self) -> usize {
        self.space().len()
    }

    #[inline]
    fn advance<R: Rng + ?Sized>(&self, s: StateIndex, rng: &mut R) -> StateIndex {
        self.sample_transition(s, rng)
    }

    #[inline]
    fn likelihood(&self, s: StateIndex, frame: &ActivationFrame) -> f64 {
        BeatModel::likelihood(self, s, frame)
    }

    fn targets(&self, target: InjectionTarget) -> Option<&[StateIndex]> {
        match target {
            InjectionTarget::BeatStates => Some(self.space().beat_states()),
            InjectionTarget::DownbeatStates => None,
        }
    }
}

impl FilterModel for BarModel {
    fn state_count(&self) -> usize {
        self.space().len()
    }

    fn advance<R: Rng + ?Sized>(&self, s: StateIndex, rng: &mut R) -> StateIndex {
        self.sample_transition(s, rng)
    }

    fn likelihood(&self, s: StateIndex, frame: &ActivationFrame) -> f64 {
        BarModel::likelihood(self, s, frame)
    }

    fn targets(&self, target: InjectionTarget) -> Option<&[StateIndex]> {
        match target {
            InjectionTarget::DownbeatStates => Some(self.space().downbeat_states()),
            InjectionTarget::BeatStates => None,
        }
    }
}

/// Bookkeeping of one [`ParticleSet::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepReport {
    pub injected: usize,
    pub removed: usize,
    /// Largest population held during the step.
    pub peak_population: usize,
}

/// A weighted particle population of constant size `N`.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    states: Vec<StateIndex>,
    weights: Vec<f64>,
    size: usize,
    removal_pool: RemovalPool,
    // Scratch buffers reused across steps.
    ancestors: Vec<usize>,
    scratch_states: Vec<StateIndex>,
    scratch_injected: Vec<bool>,
    scratch_pool: Vec<usize>,
    scratch_keep: Vec<bool>,
}

impl ParticleSet {
    /// `n` particles drawn uniformly over `state_count` states, weights `1/n`.
    pub fn init<R: Rng + ?Sized>(state_count: usize, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroParticles);
        }
        if state_count == 0 {
            return Err(Error::EmptyInput);
        }
        let states = (0..n)
            .map(|_| StateIndex::from(rng.random_range(0..state_count)))
            .collect();
        Ok(Self::from_states(states))
    }

    /// A population at the given states with uniform weights.
    pub fn from_states(states: Vec<StateIndex>) -> Self {
        let size = states.len();
        assert!(size > 0, "particle set needs at least one particle");
        ParticleSet {
            weights: alloc::vec![1.0 / size as f64; size],
            states,
            size,
            removal_pool: RemovalPool::All,
            ancestors: Vec::new(),
            scratch_states: Vec::new(),
            scratch_injected: Vec::new(),
            scratch_pool: Vec::new(),
            scratch_keep: Vec::new(),
        }
    }

    pub fn with_removal_pool(mut self, pool: RemovalPool) -> Self {
        self.removal_pool = pool;
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.states.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The configured population size `N`.
    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn states(&self) -> &[StateIndex] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// One filter update. See the module docs for the order of operations.
    pub fn step<M: FilterModel, R: Rng + ?Sized>(
        &mut self,
        model: &M,
        frame: &ActivationFrame,
        injections: &[InjectionRequest],
        rng: &mut R,
    ) -> Result<StepReport> {
        let n = self.size;
        debug_assert_eq!(self.states.len(), n);

        // Transition and reweight.
        let mut total = 0.0;
        for (s, w) in self.states.iter_mut().zip(self.weights.iter_mut()) {
            *s = model.advance(*s, rng);
            *w *= model.likelihood(*s, frame);
            total += *w;
        }
        normalize(&mut self.weights, total);

        // Inject at target states with weight 1/N each.
        let mut injected = 0;
        for req in injections {
            let targets = model
                .targets(req.target)
                .ok_or(Error::InvalidInjectionTarget)?;
            if targets.is_empty() {
                return Err(Error::InvalidInjectionTarget);
            }
            for _ in 0..req.count {
                self.states
                    .push(targets[rng.random_range(0..targets.len())]);
                self.weights.push(1.0 / n as f64);
            }
            injected += req.count;
        }
        let peak_population = self.states.len();
        if injected > 0 {
            let total: f64 = self.weights.iter().sum();
            normalize(&mut self.weights, total);
        }

        // Resample back to the enlarged population.
        let m = self.states.len();
        self.ancestors.clear();
        systematic_resample_into(&self.weights, m, rng.random::<f64>(), &mut self.ancestors);
        self.scratch_states.clear();
        self.scratch_injected.clear();
        for &a in &self.ancestors {
            self.scratch_states.push(self.states[a]);
            self.scratch_injected.push(a >= n);
        }
        core::mem::swap(&mut self.states, &mut self.scratch_states);

        // Remove as many particles as were injected.
        if injected > 0 {
            self.remove_random(injected, rng);
        }
        self.weights.clear();
        self.weights.resize(n, 1.0 / n as f64);

        assert_eq!(
            self.states.len(),
            n,
            "particle population must return to N after every step"
        );
        Ok(StepReport {
            injected,
            removed: injected,
            peak_population,
        })
    }

    fn remove_random<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) {
        let m = self.states.len();
        self.scratch_pool.clear();
        match self.removal_pool {
            RemovalPool::All => self.scratch_pool.extend(0..m),
            RemovalPool::Survivors => {
                self.scratch_pool
                    .extend((0..m).filter(|&i| !self.scratch_injected[i]));
                if self.scratch_pool.len() < count {
                    self.scratch_pool.clear();
                    self.scratch_pool.extend(0..m);
                }
            }
        }
        // Partial Fisher-Yates: the first `count` entries are the removed ones.
        let pool = &mut self.scratch_pool;
        for i in 0..count {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        self.scratch_keep.clear();
        self.scratch_keep.resize(m, true);
        for &i in &pool[..count] {
            self.scratch_keep[i] = false;
        }
        let keep = &self.scratch_keep;
        let mut idx = 0;
        self.states.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
    }
}

fn normalize(weights: &mut [f64], total: f64) {
    if total > 0.0 && total.is_finite() {
        let inv = 1.0 / total;
        weights.iter_mut().for_each(|w| *w *= inv);
    } else {
        let u = 1.0 / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = u);
    }
}

/// Systematic resampling: `m` indices drawn with a single uniform offset.
///
/// Every index `i` appears either `⌊m·wᵢ⌋` or `⌈m·wᵢ⌉` times.
pub fn systematic_resample<R: Rng + ?Sized>(
    weights: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    systematic_resample_with_offset(weights, m, rng.random::<f64>())
}

/// [`systematic_resample`] with an explicit offset `u ∈ [0, 1)`.
pub fn systematic_resample_with_offset(weights: &[f64], m: usize, u: f64) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::EmptyResample);
    }
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::UnnormalizedWeights(w));
        }
        total += w;
    }
    if weights.is_empty() || (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::UnnormalizedWeights(total));
    }
    let mut out = Vec::with_capacity(m);
    systematic_resample_into(weights, m, u, &mut out);
    Ok(out)
}

fn systematic_resample_into(weights: &[f64], m: usize, u: f64, out: &mut Vec<usize>) {
    // Rounding can leave the running sum short of 1; never walk onto
    // trailing zero weights.
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    let mut i = 0;
    let mut cumulative = weights[0];
    let step = 1.0 / m as f64;
    for j in 0..m {
        let position = (j as f64 + u) * step;
        while position >= cumulative && i < last {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
}

/// Beat-stage point estimate: circular median phase and median period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate {
    /// Phase as a fraction of the beat, in `[0, 1)`.
    pub phase_fraction: f64,
    /// Period in frames.
    pub period: u32,
}

/// Scratch space for [`estimate_phase`] so repeated calls do not allocate.
#[derive(Debug, Clone, Default)]
pub struct EstimatorScratch {
    group_weight: Vec<f64>,
    group_seen: Vec<bool>,
    touched: Vec<u32>,
    points: Vec<(f64, f64)>,
    period_weight: Vec<f64>,
    median: CircularScratch,
}

/// Weighted median period (ties to the lower period) and weighted circular
/// median of `φ/τ`.
pub fn estimate_phase(ps: &ParticleSet, space: &BeatStateSpace) -> PhaseEstimate {
    estimate_phase_with(ps, space, &mut EstimatorScratch::default())
}

pub fn estimate_phase_with(
    ps: &ParticleSet,
    space: &BeatStateSpace,
    scratch: &mut EstimatorScratch,
) -> PhaseEstimate {
    assert!(!ps.is_empty());
    let (fractions, groups) = space.fraction_groups();
    let total: f64 = ps.weights.iter().sum();

    // Period: histogram over rows.
    scratch.period_weight.clear();
    scratch.period_weight.resize(space.period_count(), 0.0);
    for (s, w) in ps.states.iter().zip(&ps.weights) {
        scratch.period_weight[(space.period(*s) - space.tau_min()) as usize] += w;
    }
    let half = 0.5 * total;
    let mut acc = 0.0;
    let mut period = space.tau_max();
    for (r, w) in scratch.period_weight.iter().enumerate() {
        acc += w;
        if acc >= half * (1.0 - 1e-12) {
            period = space.tau_min() + r as u32;
            break;
        }
    }

    // Phase: accumulate weight per distinct fraction, then circular median.
    scratch.group_weight.resize(fractions.len(), 0.0);
    scratch.group_seen.resize(fractions.len(), false);
    scratch.touched.clear();
    for (s, w) in ps.states.iter().zip(&ps.weights) {
        let g = groups[s.get()];
        if !scratch.group_seen[g as usize] {
            scratch.group_seen[g as usize] = true;
            scratch.touched.push(g);
        }
        scratch.group_weight[g as usize] += w;
    }
    scratch.touched.sort_unstable();
    scratch.points.clear();
    for &g in &scratch.touched {
        scratch.points.push((
            fractions[g as usize],
            scratch.group_weight[g as usize] / total,
        ));
        scratch.group_weight[g as usize] = 0.0;
        scratch.group_seen[g as usize] = false;
    }
    let phase_fraction = circular_median_with(&scratch.points, &mut scratch.median);
    PhaseEstimate {
        phase_fraction,
        period,
    }
}

#[derive(Debug, Clone, Default)]
struct CircularScratch {
    pos: Vec<f64>,
    cum_w: Vec<f64>,
    cum_wx: Vec<f64>,
    cost: Vec<f64>,
}

/// Weighted circular median of points on the unit circle `[0, 1)`.
///
/// `points` are `(position, weight)` sorted by position with distinct
/// positions. The median minimizes `Σ wᵢ·d(x, xᵢ)` over the sample points, `d`
/// being arc length; when several points tie, the midpoint of the arc they
/// span is returned.
pub fn circular_median(points: &[(f64, f64)]) -> f64 {
    circular_median_with(points, &mut CircularScratch::default())
}

fn circular_median_with(points: &[(f64, f64)], sc: &mut CircularScratch) -> f64 {
    let k = points.len();
    assert!(k > 0);
    if k == 1 {
        return points[0].0;
    }
    // Unroll the circle three times so every half-open window of length 1
    // around a middle-copy point sees each point exactly once.
    sc.pos.clear();
    sc.cum_w.clear();
    sc.cum_wx.clear();
    sc.cum_w.push(0.0);
    sc.cum_wx.push(0.0);
    for shift in [-1.0, 0.0, 1.0] {
        for &(x, w) in points {
            let p = x + shift;
            sc.pos.push(p);
            sc.cum_w.push(sc.cum_w.last().unwrap() + w);
            sc.cum_wx.push(sc.cum_wx.last().unwrap() + w * p);
        }
    }
    let (cw, cwx) = (&sc.cum_w, &sc.cum_wx);
    let range_w = |a: usize, b: usize| cw[b] - cw[a];
    let range_wx = |a: usize, b: usize| cwx[b] - cwx[a];

    sc.cost.clear();
    let mut lo = 0;
    for i in k..2 * k {
        let x = sc.pos[i];
        while sc.pos[lo] < x - 0.5 {
            lo += 1;
        }
        // Exactly one copy of every point in the window.
        let hi = lo + k;
        let left = x * range_w(lo, i) - range_wx(lo, i);
        let right = range_wx(i + 1, hi) - x * range_w(i + 1, hi);
        sc.cost.push(left + right);
    }

    let best = sc.cost.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + best.abs());
    let tied: Vec<usize> = (0..k).filter(|&i| sc.cost[i] <= best + tol).collect();
    if tied.len() == 1 {
        return points[tied[0]].0;
    }
    // The tied points span an arc; it is the complement of the widest gap.
    let mut gap_end = 0;
    let mut widest = -1.0;
    for j in 0..tied.len() {
        let a = points[tied[j]].0;
        let b = points[tied[(j + 1) % tied.len()]].0;
        let gap = wrap_unit(b - a);
        let gap = if gap == 0.0 { 1.0 } else { gap };
        if gap > widest {
            widest = gap;
            gap_end = (j + 1) % tied.len();
        }
    }
    let start = points[tied[gap_end]].0;
    let mid = wrap_unit(start + 0.5 * (1.0 - widest));
    // An antipode inside the arc can lift the midpoint above the tie.
    let mid_cost: f64 = points
        .iter()
        .map(|&(p, w)| {
            let d = wrap_unit(mid - p);
            w * d.min(1.0 - d)
        })
        .sum();
    if mid_cost <= best + tol {
        mid
    } else {
        start
    }
}

/// Maps `x` onto `[0, 1)`.
#[inline]
pub(crate) fn wrap_unit(x: f64) -> f64 {
    let r = x - libm::floor(x);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Whether the beat and downbeat activations of a frame reach the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SalienceTrigger {
    pub beat: bool,
    pub downbeat: bool,
}

pub fn salience_trigger(frame: &ActivationFrame, threshold: f64) -> SalienceTrigger {
    SalienceTrigger {
        beat: frame.beat >= threshold,
        downbeat: frame.downbeat >= threshold,
    }
}

/// Most weighted bar state; ties go to the lower state index.
pub fn bar_mode(ps: &ParticleSet, state_count: usize) -> StateIndex {
    let mut mass = alloc::vec![0.0; state_count];
    for (s, w) in ps.states.iter().zip(&ps.weights) {
        mass[s.get()] += w;
    }
    let mut best = 0;
    for (i, &m) in mass.iter().enumerate() {
        if m > mass[best] {
            best = i;
        }
    }
    StateIndex::from(best)
}
