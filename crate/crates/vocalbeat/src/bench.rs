//! Method comparison over a corpus of (activation, annotation) pairs.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use vocalbeat_core::eval::{self, Annotation, EvalTable, EventKind};
use vocalbeat_core::{Method, Tracker, TrackerConfig};

use crate::error::{io_error, Error, Result};
use crate::io::{self, ActivationFile};
use crate::synth::{self, ClipParams, SynthSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchClip {
    pub name: String,
    pub activations: ActivationFile,
    pub annotation: Annotation,
    /// Whether the clip contains a tempo change (unknown clips count as not).
    pub tempo_change: bool,
}

/// Recipe for a generated benchmark corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub clips: usize,
    pub clip: ClipParams,
    pub noise: f64,
    pub sigma: f64,
    pub height: f64,
    pub fps: u32,
    pub seed: u64,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        SyntheticCorpus {
            clips: 200,
            clip: ClipParams::default(),
            noise: 0.1,
            sigma: 0.04,
            height: 0.95,
            fps: 50,
            seed: 0,
        }
    }
}

impl SyntheticCorpus {
    pub fn generate(&self) -> Result<Vec<BenchClip>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.clips)
            .map(|i| {
                let clip = synth::random_clip(&self.clip, &mut rng);
                let spec = SynthSpec {
                    noise: self.noise,
                    sigma: self.sigma,
                    height: self.height,
                    fps: self.fps,
                    seed: self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                    duration: Some(self.clip.duration),
                    ..SynthSpec::from_annotation(&clip.annotation)
                };
                Ok(BenchClip {
                    name: format!("synth-{i:04}"),
                    activations: synth::synthesize(&spec)?,
                    annotation: clip.annotation,
                    tempo_change: clip.change.is_some(),
                })
            })
            .collect()
    }
}

/// Loads every `<stem>.act` with a matching `<stem>.beats` from `dir`,
/// sorted by stem.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<BenchClip>> {
    let dir = dir.as_ref();
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_error(dir))? {
        let path = entry.map_err(io_error(dir))?.path();
        if path.extension().is_some_and(|e| e == "act") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Corpus(format!("no .act files in {}", dir.display())));
    }
    stems
        .into_iter()
        .map(|stem| {
            let annotation_path = dir.join(format!("{stem}.beats"));
            if !annotation_path.exists() {
                return Err(Error::Corpus(format!("{stem}.act has no {stem}.beats")));
            }
            Ok(BenchClip {
                activations: io::read_activations(dir.join(format!("{stem}.act")))?,
                annotation: io::read_annotations(annotation_path)?,
                tempo_change: false,
                name: stem,
            })
        })
        .collect()
}

/// Writes a corpus in the layout [`load_corpus`] reads.
pub fn save_corpus(dir: impl AsRef<Path>, clips: &[BenchClip]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    for clip in clips {
        io::write_activations(dir.join(format!("{}.act", clip.name)), &clip.activations)?;
        let path = dir.join(format!("{}.beats", clip.name));
        fs::write(&path, io::format_annotations(&clip.annotation)).map_err(io_error(&path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Base configuration; method, seed and fps are set per run.
    pub config: TrackerConfig,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            config: TrackerConfig::default(),
        }
    }
}

/// Corpus means of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: Method,
    /// Mean over every (clip, seed) run, in percent.
    pub all: EvalTable,
    /// Same, over clips with a tempo change; `None` if there are none.
    pub tempo_change: Option<EvalTable>,
    /// Population checks that passed during the runs.
    pub population_checks: usize,
}

impl MethodRow {
    pub fn beat_f1(&self) -> f64 {
        self.all.f1(EventKind::Beat, 0.07, 0.0).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub clips: usize,
    pub seeds: usize,
    pub rows: Vec<MethodRow>,
}

impl BenchReport {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

struct ClipRun {
    table: EvalTable,
    population_checks: usize,
}

fn run_one(clip: &BenchClip, config: TrackerConfig) -> Result<ClipRun> {
    let mut tracker = Tracker::new(config)?;
    let mut events = Vec::new();
    for &frame in &clip.activations.frames {
        events.extend(tracker.step_frame(frame)?);
    }
    events.extend(tracker.finalize()?);
    Ok(ClipRun {
        table: eval::evaluate_clip_default(&events, &clip.annotation)?,
        population_checks: tracker.stats().population_checks,
    })
}

/// Runs every method over every clip. Particle methods run once per seed;
/// the decoder baselines do not depend on the seed and run once, counted for
/// every seed. Clips are processed in parallel; results do not depend on
/// scheduling.
pub fn run_bench(clips: &[BenchClip], options: &BenchOptions) -> Result<BenchReport> {
    if clips.is_empty() {
        return Err(Error::Corpus("empty corpus".into()));
    }
    if options.seeds.is_empty() || options.methods.is_empty() {
        return Err(Error::Config(
            "need at least one method and one seed".into(),
        ));
    }
    // runs[clip][method] = one run per seed
    let runs: Vec<Vec<Vec<ClipRun>>> = clips
        .par_iter()
        .map(|clip| {
            options
                .methods
                .iter()
                .map(|&method| {
                    let config = TrackerConfig {
                        fps: clip.activations.fps,
                        ..options.config.clone().with_method(method)
                    };
                    if method.uses_particles() {
                        options
                            .seeds
                            .iter()
                            .map(|&seed| run_one(clip, config.clone().with_seed(seed)))
                            .collect()
                    } else {
                        let run = run_one(clip, config)?;
                        Ok(options
                            .seeds
                            .iter()
                            .map(|_| ClipRun {
                                table: run.table.clone(),
                                population_checks: 0,
                            })
                            .collect())
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (m, &method) in options.methods.iter().enumerate() {
        let tables = |subset: bool| -> Vec<EvalTable> {
            runs.iter()
                .zip(clips)
                .filter(|(_, c)| !subset || c.tempo_change)
                .flat_map(|(r, _)| r[m].iter().map(|run| run.table.clone()))
                .collect()
        };
        let subset = tables(true);
        rows.push(MethodRow {
            method,
            all: eval::aggregate(&tables(false))?,
            tempo_change: if subset.is_empty() {
                None
            } else {
                Some(eval::aggregate(&subset)?)
            },
            population_checks: runs
                .iter()
                .flat_map(|r| &r[m])
                .map(|r| r.population_checks)
                .sum(),
        });
    }
    Ok(BenchReport {
        clips: clips.len(),
        seeds: options.seeds.len(),
        rows,
    })
}

const COLUMNS: [(EventKind, f64); 4] = [
    (EventKind::Beat, 0.07),
    (EventKind::Downbeat, 0.07),
    (EventKind::Beat, 0.2),
    (EventKind::Downbeat, 0.2),
];

fn write_table(f: &mut fmt::Formatter<'_>, rows: &[(Method, &EvalTable)]) -> fmt::Result {
    writeln!(
        f,
        "{:<12} | {:^47} | {:^47}",
        "", "No Skip", "Skip First 5 Seconds"
    )?;
    write!(f, "{:<12}", "Method")?;
    for _ in eval::SKIPS {
        write!(f, " |")?;
        for (kind, tol) in COLUMNS {
            let name = match kind {
                EventKind::Beat => "Beat",
                EventKind::Downbeat => "Down",
            };
            write!(
                f,
                " {:>10}",
                format!("{name}({}ms)", (tol * 1000.0).round())
            )?;
        }
    }
    writeln!(f)?;
    for (method, table) in rows {
        write!(f, "{:<12}", method.as_str())?;
        for skip in eval::SKIPS {
            write!(f, " |")?;
            for (kind, tol) in COLUMNS {
                match table.f1(kind, tol, skip) {
                    Some(v) => write!(f, " {v:>10.2}")?,
                    None => write!(f, " {:>10}", "-")?,
                }
            }
        }
        writeln!(f)?;
    }
    Ok(())
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "F1 (%) over {} clips x {} seeds", self.clips, self.seeds)?;
        let all: Vec<_> = self.rows.iter().map(|r| (r.method, &r.all)).collect();
        write_table(f, &all)?;
        let subset: Vec<_> = self
            .rows
            .iter()
            .filter_map(|r| r.tempo_change.as_ref().map(|t| (r.method, t)))
            .collect();
        if !subset.is_empty() {
            writeln!(f)?;
            writeln!(f, "Clips with a tempo change")?;
            write_table(f, &subset)?;
        }
        Ok(())
    }
}
