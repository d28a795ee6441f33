//! Synthetic activations: Gaussian peaks at known beat times plus uniform
//! noise, standing in for a trained network's output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocalbeat_core::eval::Annotation;
use vocalbeat_core::ActivationFrame;

use crate::error::{Error, Result};
use crate::io::ActivationFile;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Beat times in seconds, sorted.
    pub beats: Vec<f64>,
    /// One flag per beat.
    pub downbeats: Vec<bool>,
    /// Peak width (standard deviation) in seconds.
    pub sigma: f64,
    pub height: f64,
    /// Noise is drawn uniformly from `[0, noise)`.
    pub noise: f64,
    pub fps: u32,
    pub seed: u64,
    /// Clip length in seconds; defaults to half a second past the last beat.
    pub duration: Option<f64>,
}

impl SynthSpec {
    pub fn from_annotation(annotation: &Annotation) -> Self {
        let downbeats = annotation
            .beats
            .iter()
            .map(|b| annotation.downbeats.iter().any(|d| (d - b).abs() <= 1e-3))
            .collect();
        SynthSpec {
            beats: annotation.beats.clone(),
            downbeats,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::Config("peak width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.height) || !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(
                "peak height and noise must lie in [0, 1]".into(),
            ));
        }
        if self.fps == 0 {
            return Err(Error::Config("fps must be positive".into()));
        }
        if self.downbeats.len() != self.beats.len() {
            return Err(Error::Config("one downbeat flag per beat".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        let duration = self
            .duration
            .unwrap_or_else(|| self.beats.last().map_or(0.0, |b| b + 0.5));
        (duration * self.fps as f64).round().max(0.0) as usize
    }
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            beats: Vec::new(),
            downbeats: Vec::new(),
            sigma: 0.04,
            height: 0.95,
            noise: 0.05,
            fps: 50,
            seed: 0,
            duration: None,
        }
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<ActivationFile> {
    spec.validate()?;
    let n = spec.frame_count();
    let mut beat = vec![0.0; n];
    let mut downbeat = vec![0.0; n];
    let inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let fps = spec.fps as f64;
    for (&tb, &is_down) in spec.beats.iter().zip(&spec.downbeats) {
        for (t, (b, d)) in beat.iter_mut().zip(downbeat.iter_mut()).enumerate() {
            let dt = t as f64 / fps - tb;
            let v = spec.height * (-dt * dt * inv).exp();
            *b += v;
            if is_down {
                *d += v;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut channel = |v: f64| {
        let noise = if spec.noise > 0.0 {
            rng.random::<f64>() * spec.noise
        } else {
            0.0
        };
        (v.clamp(0.0, 1.0) + noise).clamp(0.0, 1.0)
    };
    let frames = beat
        .into_iter()
        .zip(downbeat)
        .map(|(b, d)| {
            let beat = channel(b);
            let downbeat = channel(d);
            ActivationFrame { beat, downbeat }
        })
        .collect();
    Ok(ActivationFile {
        fps: spec.fps,
        frames,
    })
}

/// Beats at a constant tempo from `offset` up to `duration`, a downbeat every
/// `meter` beats starting with the first.
pub fn constant_tempo(bpm: f64, meter: u32, offset: f64, duration: f64) -> Annotation {
    let ibi = 60.0 / bpm;
    let beats: Vec<f64> = (0..)
        .map(|k| offset + k as f64 * ibi)
        .take_while(|&t| t < duration)
        .collect();
    let downbeats = beats
        .iter()
        .copied()
        .step_by(meter.max(1) as usize)
        .collect();
    Annotation::new(beats, downbeats).expect("generated beats are sorted")
}

/// Parameters of a random benchmark clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipParams {
    pub duration: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
    /// Probability of one mid-clip tempo change.
    pub change_probability: f64,
    /// Relative size range of a tempo change.
    pub change_range: (f64, f64),
    pub meters: Vec<u32>,
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams {
            duration: 30.0,
            min_bpm: 60.0,
            max_bpm: 180.0,
            change_probability: 0.3,
            change_range: (0.10, 0.25),
            meters: vec![3, 4],
        }
    }
}

/// Ground truth of a random clip.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomClip {
    pub annotation: Annotation,
    pub tempo: f64,
    /// Tempo after the change and the time it happens.
    pub change: Option<(f64, f64)>,
    pub meter: u32,
}

/// Draws a clip: a tempo, a meter, a random phase and, with the configured
/// probability, a tempo change somewhere in the middle third that stays in
/// the tempo range.
pub fn random_clip<R: Rng + ?Sized>(params: &ClipParams, rng: &mut R) -> RandomClip {
    let tempo = rng.random_range(params.min_bpm..=params.max_bpm);
    let meter = params.meters[rng.random_range(0..params.meters.len())];
    let change = rng.random_bool(params.change_probability).then(|| {
        let (lo, hi) = params.change_range;
        let r = rng.random_range(lo..=hi);
        let up = tempo * (1.0 + r);
        let down = tempo * (1.0 - r);
        let new = match (up <= params.max_bpm, down >= params.min_bpm) {
            (true, true) => {
                if rng.random_bool(0.5) {
                    up
                } else {
                    down
                }
            }
            (true, false) => up,
            (false, true) => down,
            (false, false) => tempo,
        };
        let at = rng.random_range(params.duration / 3.0..2.0 * params.duration / 3.0);
        (new, at)
    });

    let mut beats = Vec::new();
    let mut t = rng.random_range(0.0..60.0 / tempo);
    while t < params.duration {
        beats.push(t);
        let bpm = match change {
            Some((new, at)) if t >= at => new,
            _ => tempo,
        };
        t += 60.0 / bpm;
    }
    let first_down = rng.random_range(0..meter as usize);
    let downbeats = beats
        .iter()
        .copied()
        .skip(first_down)
        .step_by(meter as usize)
        .collect();
    RandomClip {
        annotation: Annotation::new(beats, downbeats).expect("generated beats are sorted"),
        tempo,
        change,
        meter,
    }
}
