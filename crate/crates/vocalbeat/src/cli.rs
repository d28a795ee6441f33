//! The `vocalbeat` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on I/O or parse errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use vocalbeat_core::eval::{self, EvalTable, EventKind};
use vocalbeat_core::{BeatEvent, Method, Tracker, TrackerConfig};

use crate::bench::{self, BenchOptions, SyntheticCorpus};
use crate::error::{io_error, Error, Result};
use crate::io;
use crate::synth::{self, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "vocalbeat",
    version,
    about = "Real-time beat and downbeat tracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track beats in an activation file.
    Track(TrackArgs),
    /// Score estimated beats against a reference.
    Eval(EvalArgs),
    /// Generate activations from an annotation file.
    Synth(SynthArgs),
    /// Compare methods over a corpus.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[arg(long)]
    activations: PathBuf,
    /// default, salience, past, combined, online-dbn or offline-dbn
    #[arg(long)]
    method: Method,
    /// TOML tracker configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Only this tolerance (seconds).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Only this leading skip (seconds).
    #[arg(long)]
    skip: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    ann: PathBuf,
    #[arg(long, default_value_t = 50)]
    fps: u32,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Peak width in seconds.
    #[arg(long, default_value_t = 0.04)]
    sigma: f64,
    #[arg(long, default_value_t = 0.95)]
    height: f64,
    /// Clip length in seconds (default: half a second past the last beat).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory of `<stem>.act` / `<stem>.beats` pairs.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    corpus: Option<PathBuf>,
    /// Generate the corpus instead of reading one.
    #[arg(long)]
    synthetic: bool,
    /// Number of generated clips.
    #[arg(long, default_value_t = 200, requires = "synthetic")]
    clips: usize,
    /// Seed of the generated corpus.
    #[arg(long, default_value_t = 0, requires = "synthetic")]
    corpus_seed: u64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "default,salience,past,combined,online-dbn,offline-dbn"
    )]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command, writing
/// reports to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let mut text = e.render().to_string();
            if e.use_stderr() && !text.contains("Usage:") {
                text = format!("{text}\n{}\n", usage(&args));
            }
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Track(a) => track(a),
        Command::Eval(a) => evaluate(a, out),
        Command::Synth(a) => synthesize(a),
        Command::Bench(a) => run_bench(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_IO,
            }
        }
    }
}

/// Usage of the subcommand named in `args`, or of the whole program.
fn usage(args: &[OsString]) -> clap::builder::StyledStr {
    let mut cli = Cli::command();
    cli.build();
    let name = args.iter().skip(1).find_map(|a| {
        let a = a.to_str()?;
        cli.get_subcommands()
            .find(|c| c.get_name() == a)
            .map(|c| c.get_name().to_owned())
    });
    match name.and_then(|n| cli.find_subcommand_mut(n)) {
        Some(sub) => sub.render_usage(),
        None => cli.render_usage(),
    }
}

fn load_config(path: Option<&Path>) -> Result<TrackerConfig> {
    let Some(path) = path else {
        return Ok(TrackerConfig::default());
    };
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    toml::from_str(&text).map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))
}

/// A configuration the tracker rejects is a usage error.
fn invalid_config(e: vocalbeat_core::Error) -> Error {
    Error::Config(e.to_string())
}

fn track(args: TrackArgs) -> Result<()> {
    let file = io::read_activations(&args.activations)?;
    let mut config = load_config(args.config.as_deref())?.with_method(args.method);
    config.fps = file.fps;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let mut tracker = Tracker::new(config).map_err(invalid_config)?;
    let mut events: Vec<BeatEvent> = Vec::new();
    for &frame in &file.frames {
        events.extend(tracker.step_frame(frame)?);
    }
    events.extend(tracker.finalize()?);
    io::write_events(&args.out, &events)
}

fn evaluate(args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let est = io::read_annotations(&args.est)?;
    let reference = io::read_annotations(&args.reference)?;
    let events: Vec<BeatEvent> = est
        .beats
        .iter()
        .map(|&time| BeatEvent {
            time,
            is_downbeat: est.downbeats.contains(&time),
            tempo_bpm: 0.0,
            frame: 0,
        })
        .collect();
    let tolerances = args
        .tolerance
        .map_or(eval::TOLERANCES.to_vec(), |t| vec![t]);
    let skips = args.skip.map_or(eval::SKIPS.to_vec(), |s| vec![s]);
    let table = eval::evaluate_clip(&events, &reference, &tolerances, &skips)?;
    write_eval_table(out, &table).map_err(io_error("<stdout>"))
}

fn write_eval_table(out: &mut dyn Write, table: &EvalTable) -> std::io::Result<()> {
    writeln!(
        out,
        "kind      tolerance  skip   f1      precision  recall   tp  fp  fn"
    )?;
    for c in &table.cells {
        let kind = match c.kind {
            EventKind::Beat => "beat",
            EventKind::Downbeat => "downbeat",
        };
        let r = &c.result;
        writeln!(
            out,
            "{kind:<9} {:>6.0}ms  {:>4}s  {:>6.2}  {:>9.2}  {:>6.2}  {:>3} {:>3} {:>3}",
            c.tolerance * 1000.0,
            c.skip,
            100.0 * r.f1,
            100.0 * r.precision,
            100.0 * r.recall,
            r.true_positives,
            r.false_positives,
            r.false_negatives
        )?;
    }
    Ok(())
}

fn synthesize(args: SynthArgs) -> Result<()> {
    let annotation = io::read_annotations(&args.ann)?;
    let spec = SynthSpec {
        fps: args.fps,
        noise: args.noise,
        seed: args.seed,
        sigma: args.sigma,
        height: args.height,
        duration: args.duration,
        ..SynthSpec::from_annotation(&annotation)
    };
    let file = synth::synthesize(&spec)?;
    io::write_activations(&args.out, &file)
}

fn run_bench(args: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    Tracker::new(config.clone()).map_err(invalid_config)?;
    let clips = match &args.corpus {
        Some(dir) => bench::load_corpus(dir)?,
        None => SyntheticCorpus {
            clips: args.clips,
            seed: args.corpus_seed,
            ..Default::default()
        }
        .generate()?,
    };
    let options = BenchOptions {
        methods: args.methods,
        seeds: args.seeds,
        config,
    };
    let report = bench::run_bench(&clips, &options)?.to_string();
    if let Some(path) = &args.out {
        fs::write(path, &report).map_err(io_error(path))?;
    }
    out.write_all(report.as_bytes())
        .map_err(io_error("<stdout>"))
}
