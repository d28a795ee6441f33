//! Streaming beat and downbeat tracker.
//!
//! A [`Tracker`] consumes one [`ActivationFrame`] at a time and returns the
//! beats it detects at that frame. Particle-filter methods run a beat-stage
//! filter every frame and clock a downbeat-stage filter on every emitted beat.
//! The past-informed methods additionally decode all buffered activations on a
//! fixed schedule and inject particles when an extrapolated beat arrives.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dbn::{self, DecodedPath};
use crate::error::{Error, Result};
use crate::models::{ActivationFrame, BarModel, BeatModel, OffBeatNorm, TransitionParams};
use crate::particle_filter::{
    self, EstimatorScratch, InjectionCause, InjectionRequest, InjectionTarget, ParticleSet,
    PhaseEstimate,
};
use crate::state_space::{BarStateSpace, BeatStateSpace, StateIndex, DEFAULT_BEAT_WINDOW_DIVISOR};

pub use crate::particle_filter::RemovalPool;

/// Inference method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Method {
    /// Plain particle filtering with a fixed population.
    #[default]
    Default,
    /// Inject particles at beat states whenever an activation is salient.
    Salience,
    /// Inject particles when a beat extrapolated from decoded history arrives.
    Past,
    /// Salience and past-informed injections combined.
    Combined,
    /// Emit only beats extrapolated from periodic decodes of the history.
    OnlineDbn,
    /// Decode the whole clip at the end (non-causal reference).
    OfflineDbn,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Default,
        Method::Salience,
        Method::Past,
        Method::Combined,
        Method::OnlineDbn,
        Method::OfflineDbn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Default => "default",
            Method::Salience => "salience",
            Method::Past => "past",
            Method::Combined => "combined",
            Method::OnlineDbn => "online-dbn",
            Method::OfflineDbn => "offline-dbn",
        }
    }

    pub fn uses_particles(self) -> bool {
        matches!(
            self,
            Method::Default | Method::Salience | Method::Past | Method::Combined
        )
    }

    pub fn is_online(self) -> bool {
        self != Method::OfflineDbn
    }

    fn decodes_periodically(self) -> bool {
        matches!(self, Method::Past | Method::Combined | Method::OnlineDbn)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseMethodError(pub String);

impl fmt::Display for ParseMethodError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown method `{}` (expected default, salience, past, combined, online-dbn or offline-dbn)",
            self.0
        )
    }
}

impl core::error::Error for ParseMethodError {}

impl FromStr for Method {
    type Err = ParseMethodError;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ParseMethodError(s.into()))
    }
}

/// How the combined method merges its two injection triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CombineMode {
    /// Inject only on frames where both triggers fire.
    #[default]
    Intersection,
    /// Inject on frames where either trigger fires.
    Union,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrackerConfig {
    pub fps: u32,
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub meters: Vec<u32>,
    /// Particle count `N` of each filter stage.
    pub particles: usize,
    pub salience_threshold: f64,
    /// Seconds between decodes of the past.
    pub decode_period: f64,
    /// Seconds of audio before the first decode.
    pub first_decode_at: f64,
    /// Injected particles per trigger, as a fraction of `N`.
    pub injection_fraction: f64,
    pub combine_mode: CombineMode,
    /// Frames around an extrapolated beat in which it counts as arriving.
    pub extrapolation_match_window: usize,
    /// Extra seconds extrapolated beyond the next decode.
    pub extrapolation_slack: f64,
    /// Trailing inter-beat intervals used for extrapolation.
    pub ibi_window: usize,
    pub beat_window_divisor: u32,
    pub removal_pool: RemovalPool,
    pub transition: TransitionParams,
    pub off_beat_norm: OffBeatNorm,
    pub method: Method,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            fps: 50,
            min_bpm: 55.0,
            max_bpm: 215.0,
            meters: alloc::vec![2, 3, 4],
            particles: 1500,
            salience_threshold: particle_filter::DEFAULT_SALIENCE_THRESHOLD,
            decode_period: 6.0,
            first_decode_at: 5.0,
            injection_fraction: 0.1,
            combine_mode: CombineMode::Intersection,
            extrapolation_match_window: 3,
            extrapolation_slack: 1.0,
            ibi_window: dbn::DEFAULT_IBI_WINDOW,
            beat_window_divisor: DEFAULT_BEAT_WINDOW_DIVISOR,
            removal_pool: RemovalPool::All,
            transition: TransitionParams::default(),
            off_beat_norm: OffBeatNorm::default(),
            method: Method::Default,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::ZeroParticles);
        }
        if !(self.salience_threshold > 0.0) {
            return Err(Error::InvalidConfig("salience threshold must be positive"));
        }
        if !(self.decode_period > 0.0) || !self.decode_period.is_finite() {
            return Err(Error::InvalidConfig("decode period must be positive"));
        }
        if !(self.first_decode_at >= 0.0) {
            return Err(Error::InvalidConfig(
                "first decode time must be non-negative",
            ));
        }
        if !(self.injection_fraction > 0.0 && self.injection_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "injection fraction must lie in (0, 1]",
            ));
        }
        if !(self.extrapolation_slack >= 0.0) {
            return Err(Error::InvalidConfig(
                "extrapolation slack must be non-negative",
            ));
        }
        if self.ibi_window == 0 {
            return Err(Error::InvalidConfig("IBI window must be at least 1"));
        }
        self.off_beat_norm.validate()?;
        self.transition.validate()
    }

    /// Particles added per injection trigger: `max(1, ⌊fraction·N⌋)`.
    pub fn injection_count(&self) -> usize {
        (libm::floor(self.injection_fraction * self.particles as f64) as usize).max(1)
    }

    fn seconds_to_frames(&self, seconds: f64) -> usize {
        libm::round(seconds * self.fps as f64) as usize
    }
}

/// A detected beat.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BeatEvent {
    /// Seconds from stream start, `frame / fps`.
    pub time: f64,
    pub is_downbeat: bool,
    pub tempo_bpm: f64,
    pub frame: usize,
}

/// A beat predicted from decoded history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrapolatedBeat {
    pub time: f64,
    pub frame: usize,
    pub is_downbeat: bool,
}

/// Beats extrapolated from one decode of the past.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolation {
    /// Number of frames the decode saw.
    pub snapshot_frames: usize,
    pub ibi: f64,
    pub beats: Vec<ExtrapolatedBeat>,
}

/// Everything needed to decode a snapshot of the past away from the tracker.
#[derive(Debug, Clone)]
pub struct DecodeJob {
    activations: Vec<ActivationFrame>,
    states: Vec<StateIndex>,
    log_prob: f64,
    beat_model: Arc<BeatModel>,
    bar_model: Arc<BarModel>,
    params: ExtrapolationParams,
}

impl DecodeJob {
    pub fn snapshot_frames(&self) -> usize {
        self.activations.len()
    }

    pub fn run(self) -> Result<DecodeOutcome> {
        let mut path = dbn::beat_path(self.states, self.log_prob, &self.beat_model);
        dbn::decode_bars(&mut path, &self.activations, &self.bar_model)?;
        let extrapolation = extrapolate_path(&path, self.activations.len(), &self.params)?;
        Ok(DecodeOutcome { extrapolation })
    }
}

/// Result of a [`DecodeJob`], to be handed back with [`Tracker::apply_decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub extrapolation: Option<Extrapolation>,
}

#[derive(Debug, Clone, Copy)]
struct ExtrapolationParams {
    fps: u32,
    horizon_after_snapshot: f64,
    ibi_window: usize,
    keep_before: usize,
}

fn extrapolate_path(
    path: &DecodedPath,
    snapshot: usize,
    params: &ExtrapolationParams,
) -> Result<Option<Extrapolation>> {
    if path.beats.len() < 2 {
        return Ok(None);
    }
    let fps = params.fps as f64;
    let now = snapshot as f64 / fps;
    let last = *path.beats.last().unwrap();
    let horizon = now - last + params.horizon_after_snapshot;
    let ibi = dbn::inter_beat_interval(&path.beats, params.ibi_window)?;
    let times = dbn::extrapolate_beats_with_window(&path.beats, horizon, params.ibi_window)?;
    let downbeats = match dbn::modal_meter(&path.bar_meters) {
        Some(meter) if !path.downbeats.is_empty() => {
            dbn::extrapolate_downbeats(&path.beats, &path.downbeats, &times, meter)?
        }
        _ => Vec::new(),
    };
    let beats = times
        .iter()
        .map(|&time| ExtrapolatedBeat {
            time,
            frame: libm::round(time * fps) as usize,
            is_downbeat: downbeats.contains(&time),
        })
        .filter(|b| b.frame + params.keep_before >= snapshot)
        .collect();
    Ok(Some(Extrapolation {
        snapshot_frames: snapshot,
        ibi,
        beats,
    }))
}

/// Injection requests for one frame, per stage.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InjectionDecision {
    pub beat: Vec<InjectionRequest>,
    /// Applied only if a beat is emitted on this frame.
    pub bar: Vec<InjectionRequest>,
}

/// Counters kept while streaming.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrackerStats {
    pub frames: usize,
    /// Filter steps after which the population was verified to be `N`.
    pub population_checks: usize,
    pub beat_injections: usize,
    pub bar_injections: usize,
    /// Snapshot length (frames) of every decode applied so far.
    pub decodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct PreviousEstimate {
    fraction: f64,
    in_window: bool,
}

pub struct Tracker {
    config: TrackerConfig,
    beat_model: Arc<BeatModel>,
    bar_model: Arc<BarModel>,
    beat_particles: Option<ParticleSet>,
    bar_particles: Option<ParticleSet>,
    rng: ChaCha8Rng,
    estimator: EstimatorScratch,
    buffer: Vec<ActivationFrame>,
    forward: Option<dbn::ViterbiForward>,
    frames_seen: usize,
    next_decode: Option<usize>,
    decode_interval: usize,
    deferred: bool,
    pending_snapshot: Option<usize>,
    extrapolation: Option<Extrapolation>,
    next_extrapolated: usize,
    previous: Option<PreviousEstimate>,
    last_emit: Option<usize>,
    last_estimate: Option<PhaseEstimate>,
    finalized: bool,
    stats: TrackerStats,
}

impl fmt::Debug for Tracker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tracker")
            .field("method", &self.config.method)
            .field("frames_seen", &self.frames_seen)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let space = BeatStateSpace::with_window_divisor(
            config.fps,
            config.min_bpm,
            config.max_bpm,
            config.beat_window_divisor,
        )?;
        let bar_space = BarStateSpace::new(&config.meters)?;
        let beat_model = Arc::new(BeatModel::with_norm(
            space,
            config.transition,
            config.off_beat_norm,
        )?);
        let bar_model = Arc::new(BarModel::new(bar_space, config.transition)?);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let (beat_particles, bar_particles) = if config.method.uses_particles() {
            let beat = ParticleSet::init(beat_model.space().len(), config.particles, &mut rng)?
                .with_removal_pool(config.removal_pool);
            let bar = ParticleSet::init(bar_model.space().len(), config.particles, &mut rng)?
                .with_removal_pool(config.removal_pool);
            (Some(beat), Some(bar))
        } else {
            (None, None)
        };
        let next_decode = config
            .method
            .decodes_periodically()
            .then(|| config.seconds_to_frames(config.first_decode_at).max(1));
        let decode_interval = config.seconds_to_frames(config.decode_period).max(1);
        let forward = next_decode.map(|_| dbn::ViterbiForward::new(beat_model.space().len()));

        Ok(Tracker {
            beat_model,
            bar_model,
            beat_particles,
            bar_particles,
            rng,
            estimator: EstimatorScratch::default(),
            buffer: Vec::new(),
            forward,
            frames_seen: 0,
            next_decode,
            decode_interval,
            deferred: false,
            pending_snapshot: None,
            extrapolation: None,
            next_extrapolated: 0,
            previous: None,
            last_emit: None,
            last_estimate: None,
            finalized: false,
            stats: TrackerStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn beat_model(&self) -> &BeatModel {
        &self.beat_model
    }

    pub fn bar_model(&self) -> &BarModel {
        &self.bar_model
    }

    pub fn stats(&self) -> &TrackerStats {
        &self.stats
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn beat_particles(&self) -> Option<&ParticleSet> {
        self.beat_particles.as_ref()
    }

    pub fn extrapolation(&self) -> Option<&Extrapolation> {
        self.extrapolation.as_ref()
    }

    /// Latest beat-stage estimate (particle methods only).
    pub fn estimate(&self) -> Option<PhaseEstimate> {
        self.last_estimate
    }

    /// When enabled, scheduled decodes are not run inside
    /// [`step_frame`](Self::step_frame); the caller collects them with
    /// [`take_decode_job`](Self::take_decode_job) and hands results back via
    /// [`apply_decode`](Self::apply_decode).
    pub fn set_deferred_decoding(&mut self, deferred: bool) {
        self.deferred = deferred;
    }

    /// Processes one frame and returns the beats detected on it.
    pub fn step_frame(&mut self, frame: ActivationFrame) -> Result<Vec<BeatEvent>> {
        frame.validate(self.frames_seen)?;
        let t = self.frames_seen;
        let method = self.config.method;
        if method != Method::Default && method != Method::Salience {
            self.buffer.push(frame);
        }
        if let Some(forward) = &mut self.forward {
            let model = &self.beat_model;
            forward.push(model.predecessors(), |out| {
                model.log_likelihoods(&frame, out)
            });
        }

        let events = match method {
            Method::OfflineDbn => Vec::new(),
            Method::OnlineDbn => self.step_online_dbn(t),
            _ => self.step_particles(&frame, t)?,
        };

        self.frames_seen += 1;
        self.stats.frames = self.frames_seen;
        if let Some(due) = self.next_decode {
            if self.buffer.len() >= due {
                self.next_decode = Some(due + self.decode_interval);
                if self.deferred {
                    self.pending_snapshot = Some(self.buffer.len());
                } else {
                    self.scheduled_decode()?;
                }
            }
        }
        Ok(events)
    }

    /// Injection requests for frame `now` under the configured method.
    pub fn decide_injections(&self, frame: &ActivationFrame, now: usize) -> InjectionDecision {
        let method = self.config.method;
        let mut decision = InjectionDecision::default();
        if !matches!(method, Method::Salience | Method::Past | Method::Combined) {
            return decision;
        }
        let salient = particle_filter::salience_trigger(frame, self.config.salience_threshold);
        let window = self.config.extrapolation_match_window;
        let near = |downbeat: bool| {
            self.extrapolation.as_ref().is_some_and(|e| {
                e.beats
                    .iter()
                    .any(|b| (!downbeat || b.is_downbeat) && b.frame.abs_diff(now) <= window)
            })
        };
        let count = self.config.injection_count();
        let request = |salience: bool, past: bool, target| {
            let (fire, cause) = match method {
                Method::Salience => (salience, InjectionCause::Salience),
                Method::Past => (past, InjectionCause::Extrapolation),
                _ => {
                    let fire = match self.config.combine_mode {
                        CombineMode::Intersection => salience && past,
                        CombineMode::Union => salience || past,
                    };
                    let cause = match (salience, past) {
                        (true, true) => InjectionCause::Both,
                        (true, false) => InjectionCause::Salience,
                        _ => InjectionCause::Extrapolation,
                    };
                    (fire, cause)
                }
            };
            fire.then_some(InjectionRequest {
                count,
                target,
                cause,
            })
        };
        let uses_past = method != Method::Salience;
        decision.beat.extend(request(
            salient.beat,
            uses_past && near(false),
            InjectionTarget::BeatStates,
        ));
        decision.bar.extend(request(
            salient.downbeat,
            uses_past && near(true),
            InjectionTarget::DownbeatStates,
        ));
        decision
    }

    fn step_particles(&mut self, frame: &ActivationFrame, t: usize) -> Result<Vec<BeatEvent>> {
        let decision = self.decide_injections(frame, t);
        let n = self.config.particles;
        let beat_particles = self.beat_particles.as_mut().expect("particle method");
        beat_particles.step(&*self.beat_model, frame, &decision.beat, &mut self.rng)?;
        assert_eq!(beat_particles.len(), n);
        self.stats.population_checks += 1;
        self.stats.beat_injections += decision.beat.len();

        let space = self.beat_model.space();
        let est = particle_filter::estimate_phase_with(beat_particles, space, &mut self.estimator);
        self.last_estimate = Some(est);
        let width = space.beat_window(est.period) as f64 / est.period as f64;
        let in_window = est.phase_fraction < width;
        let crossed = self.previous.is_some_and(|prev| {
            let wrapped = est.phase_fraction < prev.fraction
                && particle_filter::wrap_unit(est.phase_fraction - prev.fraction) < 0.5;
            (in_window && !prev.in_window) || wrapped
        });
        self.previous = Some(PreviousEstimate {
            fraction: est.phase_fraction,
            in_window,
        });
        let refractory = self.refractory_frames(est.period as f64);
        let clear = self.last_emit.is_none_or(|l| (t - l) as f64 >= refractory);
        if !(crossed && clear) {
            return Ok(Vec::new());
        }

        let bar_particles = self.bar_particles.as_mut().expect("particle method");
        bar_particles.step(&*self.bar_model, frame, &decision.bar, &mut self.rng)?;
        assert_eq!(bar_particles.len(), n);
        self.stats.population_checks += 1;
        self.stats.bar_injections += decision.bar.len();
        let bar = self.bar_model.space();
        let mode = particle_filter::bar_mode(bar_particles, bar.len());

        self.last_emit = Some(t);
        Ok(alloc::vec![BeatEvent {
            time: t as f64 / self.config.fps as f64,
            is_downbeat: bar.is_downbeat_state(mode),
            tempo_bpm: self.clamp_bpm(space.bpm(est.period as f64)),
            frame: t,
        }])
    }

    fn step_online_dbn(&mut self, t: usize) -> Vec<BeatEvent> {
        let Some(ext) = &self.extrapolation else {
            return Vec::new();
        };
        let mut events = Vec::new();
        while let Some(b) = ext.beats.get(self.next_extrapolated) {
            if b.frame > t {
                break;
            }
            self.next_extrapolated += 1;
            if b.frame < t {
                continue;
            }
            let refractory = self.refractory_frames(ext.ibi * self.config.fps as f64);
            if self.last_emit.is_none_or(|l| (t - l) as f64 >= refractory) {
                self.last_emit = Some(t);
                events.push(BeatEvent {
                    time: t as f64 / self.config.fps as f64,
                    is_downbeat: b.is_downbeat,
                    tempo_bpm: self.clamp_bpm(60.0 / ext.ibi),
                    frame: t,
                });
            }
        }
        events
    }

    /// Half a beat, and never less than half of the fastest allowed beat.
    fn refractory_frames(&self, period_frames: f64) -> f64 {
        let fastest = self.config.fps as f64 * 60.0 / self.config.max_bpm;
        0.5 * period_frames.max(fastest)
    }

    fn clamp_bpm(&self, bpm: f64) -> f64 {
        bpm.clamp(self.config.min_bpm, self.config.max_bpm)
    }

    fn extrapolation_params(&self) -> ExtrapolationParams {
        ExtrapolationParams {
            fps: self.config.fps,
            horizon_after_snapshot: self.config.decode_period + self.config.extrapolation_slack,
            ibi_window: self.config.ibi_window,
            keep_before: self.config.extrapolation_match_window,
        }
    }

    /// Decodes every buffered frame and replaces the current extrapolation.
    pub fn scheduled_decode(&mut self) -> Result<Option<&Extrapolation>> {
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let mut path = match &self.forward {
            Some(forward) => {
                let (states, log_prob) = forward.best_path()?;
                dbn::beat_path(states, log_prob, &self.beat_model)
            }
            None => dbn::viterbi_decode(&self.buffer, &self.beat_model)?,
        };
        dbn::decode_bars(&mut path, &self.buffer, &self.bar_model)?;
        let ext = extrapolate_path(&path, self.buffer.len(), &self.extrapolation_params())?;
        self.install(ext, self.buffer.len());
        Ok(self.extrapolation.as_ref())
    }

    /// Snapshot of the past for a deferred decode, if one is due.
    pub fn take_decode_job(&mut self) -> Option<DecodeJob> {
        let frames = self.pending_snapshot.take()?;
        let (states, log_prob) = match &self.forward {
            Some(forward) if forward.frames() == frames => forward.best_path().ok()?,
            _ => dbn::viterbi(self.beat_model.predecessors(), frames, |t, out| {
                self.beat_model.log_likelihoods(&self.buffer[t], out)
            })
            .ok()?,
        };
        Some(DecodeJob {
            activations: self.buffer[..frames].to_vec(),
            states,
            log_prob,
            beat_model: Arc::clone(&self.beat_model),
            bar_model: Arc::clone(&self.bar_model),
            params: self.extrapolation_params(),
        })
    }

    /// Installs the result of a deferred decode. Takes effect from the next
    /// frame on.
    pub fn apply_decode(&mut self, outcome: DecodeOutcome) {
        let snapshot = outcome
            .extrapolation
            .as_ref()
            .map_or(self.frames_seen, |e| e.snapshot_frames);
        debug_assert!(snapshot <= self.frames_seen);
        self.install(outcome.extrapolation, snapshot);
    }

    fn install(&mut self, ext: Option<Extrapolation>, snapshot: usize) {
        self.stats.decodes.push(snapshot);
        self.extrapolation = ext;
        // Online-DBN emission resumes with the first beat not yet passed.
        let next = self.frames_seen;
        self.next_extrapolated = self
            .extrapolation
            .as_ref()
            .map_or(0, |e| e.beats.partition_point(|b| b.frame < next));
    }

    /// Ends the stream. The offline method decodes everything here; online
    /// methods have already emitted all their beats.
    pub fn finalize(&mut self) -> Result<Vec<BeatEvent>> {
        if self.finalized {
            return Ok(Vec::new());
        }
        self.finalized = true;
        if self.config.method != Method::OfflineDbn || self.buffer.is_empty() {
            return Ok(Vec::new());
        }
        let path = dbn::viterbi_decode_with_bars(&self.buffer, &self.beat_model, &self.bar_model)?;
        Ok(self.events_from_path(&path))
    }

    fn events_from_path(&self, path: &DecodedPath) -> Vec<BeatEvent> {
        let space = self.beat_model.space();
        path.beat_frames
            .iter()
            .zip(&path.beats)
            .map(|(&frame, &time)| BeatEvent {
                time,
                is_downbeat: path.downbeats.contains(&time),
                tempo_bpm: self.clamp_bpm(space.bpm(space.period(path.states[frame]) as f64)),
                frame,
            })
            .collect()
    }
}

/// Runs a whole activation sequence through a tracker, including
/// finalization.
pub fn track(config: TrackerConfig, activations: &[ActivationFrame]) -> Result<Vec<BeatEvent>> {
    let mut tracker = Tracker::new(config)?;
    let mut events = Vec::new();
    for &frame in activations {
        events.extend(tracker.step_frame(frame)?);
    }
    events.extend(tracker.finalize()?);
    Ok(events)
}

/// Extrapolating online baseline: decodes at the configured schedule and
/// emits only extrapolated beats.
pub fn online_dbn_track(
    config: TrackerConfig,
    activations: &[ActivationFrame],
) -> Result<Vec<BeatEvent>> {
    track(config.with_method(Method::OnlineDbn), activations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulses(period: usize, frames: usize) -> Vec<ActivationFrame> {
        (0..frames)
            .map(|t| ActivationFrame {
                beat: if t % period == 0 { 1.0 } else { 0.0 },
                downbeat: if t % (4 * period) == 0 { 1.0 } else { 0.0 },
            })
            .collect()
    }

    #[test]
    fn default_config_space() {
        let config = TrackerConfig {
            min_bpm: 60.0,
            max_bpm: 180.0,
            ..Default::default()
        };
        let tracker = Tracker::new(config).unwrap();
        assert_eq!(tracker.beat_model().space().len(), 1139);
        let tracker = Tracker::new(TrackerConfig::default()).unwrap();
        assert_eq!(tracker.beat_model().space().tau_min(), 14);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = |f: fn(&mut TrackerConfig)| {
            let mut c = TrackerConfig::default();
            f(&mut c);
            Tracker::new(c).is_err()
        };
        assert!(bad(|c| c.decode_period = 0.0));
        assert!(bad(|c| c.first_decode_at = -1.0));
        assert!(bad(|c| c.injection_fraction = 0.0));
        assert!(bad(|c| c.particles = 0));
        assert!(bad(|c| c.meters.clear()));
        assert!(bad(|c| c.min_bpm = 300.0));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("viterbi".parse::<Method>().is_err());
    }

    #[test]
    fn offline_method_only_emits_on_finalize() {
        let config = TrackerConfig::default().with_method(Method::OfflineDbn);
        let mut tracker = Tracker::new(config).unwrap();
        for f in pulses(20, 500) {
            assert!(tracker.step_frame(f).unwrap().is_empty());
        }
        let events = tracker.finalize().unwrap();
        let frames: Vec<usize> = events.iter().map(|e| e.frame).collect();
        assert_eq!(frames, (0..500).step_by(20).collect::<Vec<_>>());
        assert!(events.iter().all(|e| (e.tempo_bpm - 150.0).abs() < 1e-9));
        assert!(tracker.finalize().unwrap().is_empty());
    }

    #[test]
    fn default_method_finalize_is_empty() {
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(tracker.finalize().unwrap().is_empty());
    }

    #[test]
    fn out_of_range_frame_rejected() {
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        let err = tracker
            .step_frame(ActivationFrame {
                beat: 1.5,
                downbeat: 0.0,
            })
            .unwrap_err();
        assert_eq!(
            err,
            Error::ActivationOutOfRange {
                frame: 0,
                value: 1.5
            }
        );
    }

    #[test]
    fn decode_schedule() {
        let config = TrackerConfig::default().with_method(Method::Past);
        let mut tracker = Tracker::new(config).unwrap();
        for f in pulses(25, 1500) {
            tracker.step_frame(f).unwrap();
        }
        assert_eq!(
            tracker.stats().decodes,
            alloc::vec![250, 550, 850, 1150, 1450]
        );

        let config = TrackerConfig::default().with_method(Method::OnlineDbn);
        let events = track(config, &pulses(25, 200)).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn extrapolation_continues_decoded_beats() {
        let config = TrackerConfig::default().with_method(Method::Past);
        let mut tracker = Tracker::new(config).unwrap();
        for f in pulses(20, 250) {
            tracker.step_frame(f).unwrap();
        }
        let ext = tracker.extrapolation().unwrap();
        assert_eq!(ext.snapshot_frames, 250);
        assert!((ext.ibi - 0.4).abs() < 1e-12);
        let times: Vec<f64> = ext.beats.iter().take(3).map(|b| b.time).collect();
        for (got, want) in times.iter().zip([5.2, 5.6, 6.0]) {
            assert!((got - want).abs() < 1e-9, "{times:?}");
        }
        // Horizon covers the next decode plus slack.
        assert!(ext.beats.last().unwrap().time >= 11.0);
    }

    #[test]
    fn injection_rules() {
        let frame = ActivationFrame {
            beat: 0.9,
            downbeat: 0.0,
        };
        let mut tracker =
            Tracker::new(TrackerConfig::default().with_method(Method::Combined)).unwrap();
        // Salience alone is not enough in intersection mode.
        assert!(tracker.decide_injections(&frame, 100).beat.is_empty());

        tracker.extrapolation = Some(Extrapolation {
            snapshot_frames: 90,
            ibi: 0.5,
            beats: alloc::vec![ExtrapolatedBeat {
                time: 2.04,
                frame: 102,
                is_downbeat: false,
            }],
        });
        let decision = tracker.decide_injections(&frame, 100);
        assert_eq!(
            decision.beat,
            alloc::vec![InjectionRequest {
                count: 150,
                target: InjectionTarget::BeatStates,
                cause: InjectionCause::Both,
            }]
        );
        assert!(decision.bar.is_empty());
        assert!(tracker.decide_injections(&frame, 106).beat.is_empty());

        let quiet = ActivationFrame::default();
        tracker.config.combine_mode = CombineMode::Union;
        assert_eq!(
            tracker.decide_injections(&quiet, 100).beat[0].cause,
            InjectionCause::Extrapolation
        );

        let tracker = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(tracker.decide_injections(&frame, 100).beat.is_empty());
    }

    #[test]
    fn no_events_before_data() {
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(tracker
            .step_frame(ActivationFrame::default())
            .unwrap()
            .is_empty());
    }
}
