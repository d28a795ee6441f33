//! Text formats for activations, annotations and tracker output.
//!
//! Activations: a header line `# fps=<int>` then one `beat,downbeat` row per
//! frame, six decimals. Annotations: `<time>\t<position>` per beat, position
//! 1 marking a downbeat.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use vocalbeat_core::eval::Annotation;
use vocalbeat_core::{ActivationFrame, BeatEvent};

use crate::error::{io_error, Error, Result};

/// An activation sequence with its frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationFile {
    pub fps: u32,
    pub frames: Vec<ActivationFrame>,
}

impl ActivationFile {
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps as f64
    }
}

pub fn parse_activations(text: &str) -> Result<ActivationFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let fps = match lines.next() {
        Some((_, header)) => header
            .strip_prefix("# fps=")
            .and_then(|v| v.parse::<u32>().ok())
            .filter(|&fps| fps > 0)
            .ok_or(Error::MissingHeader { line: 1 })?,
        None => return Err(Error::MissingHeader { line: 1 }),
    };
    let mut frames = Vec::new();
    for (line, row) in lines {
        let malformed = || Error::MalformedRow {
            line,
            text: row.to_string(),
        };
        let (b, d) = row.split_once(',').ok_or_else(malformed)?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| malformed());
        let (beat, downbeat) = (parse(b)?, parse(d)?);
        for value in [beat, downbeat] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange { line, value });
            }
        }
        frames.push(ActivationFrame { beat, downbeat });
    }
    Ok(ActivationFile { fps, frames })
}

pub fn format_activations(file: &ActivationFile) -> String {
    let mut out = String::with_capacity(16 * file.frames.len() + 16);
    writeln!(out, "# fps={}", file.fps).unwrap();
    for f in &file.frames {
        writeln!(out, "{:.6},{:.6}", f.beat, f.downbeat).unwrap();
    }
    out
}

pub fn read_activations(path: impl AsRef<Path>) -> Result<ActivationFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    parse_activations(&text)
}

pub fn write_activations(path: impl AsRef<Path>, file: &ActivationFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_activations(file)).map_err(io_error(path))
}

/// Parses `<time>\t<position>` lines. Position 1 is a downbeat, any other
/// non-negative integer a plain beat; a missing position means a plain beat.
/// Blank lines are skipped.
pub fn parse_annotations(text: &str) -> Result<Annotation> {
    let mut beats = Vec::new();
    let mut downbeats = Vec::new();
    for (i, row) in text.lines().enumerate() {
        let line = i + 1;
        if row.trim().is_empty() {
            continue;
        }
        let malformed = || Error::MalformedRow {
            line,
            text: row.to_string(),
        };
        let mut fields = row.split_whitespace();
        let time: f64 = fields
            .next()
            .and_then(|t| t.parse().ok())
            .filter(|t: &f64| t.is_finite() && *t >= 0.0)
            .ok_or_else(malformed)?;
        let position = match fields.next() {
            Some(p) => parse_position(p).ok_or_else(malformed)?,
            None => 0,
        };
        if fields.next().is_some() {
            return Err(malformed());
        }
        if beats.last().is_some_and(|&prev| time <= prev) {
            return Err(Error::NonMonotone { line, time });
        }
        beats.push(time);
        if position == 1 {
            downbeats.push(time);
        }
    }
    Ok(Annotation::new(beats, downbeats)?)
}

// Integral positions only; `2.0` is accepted for corpora written by float
// formatters.
fn parse_position(p: &str) -> Option<u32> {
    if let Ok(v) = p.parse::<u32>() {
        return Some(v);
    }
    let v: f64 = p.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as u32)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Annotation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    parse_annotations(&text)
}

/// Annotation-style text for an annotation, positions counted from each
/// downbeat (beats before the first downbeat get position 2 and up).
pub fn format_annotations(annotation: &Annotation) -> String {
    let mut out = String::new();
    let mut position = 1;
    for &b in &annotation.beats {
        if annotation.downbeats.iter().any(|&d| (d - b).abs() <= 1e-9) {
            position = 1;
        } else {
            position += 1;
        }
        writeln!(out, "{b:.6}\t{position}").unwrap();
    }
    out
}

/// Tracker output: `<time>\t<1|0>` per event, 1 marking a downbeat.
pub fn format_events(events: &[BeatEvent]) -> String {
    let mut out = String::with_capacity(12 * events.len());
    for e in events {
        writeln!(out, "{:.6}\t{}", e.time, u8::from(e.is_downbeat)).unwrap();
    }
    out
}

pub fn write_events(path: impl AsRef<Path>, events: &[BeatEvent]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_events(events)).map_err(io_error(path))
}
