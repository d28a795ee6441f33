//! A tracker whose scheduled decodes run on a worker thread.
//!
//! Decodes see a snapshot of the activations received so far and their
//! result is installed at the first frame boundary after the worker
//! finishes, so frame processing never waits on the decoder.

use std::thread::{self, JoinHandle};

use vocalbeat_core::tracker::DecodeOutcome;
use vocalbeat_core::{ActivationFrame, BeatEvent, Tracker, TrackerConfig};

use crate::error::Result;

pub struct BackgroundTracker {
    tracker: Tracker,
    worker: Option<JoinHandle<vocalbeat_core::Result<DecodeOutcome>>>,
}

impl BackgroundTracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        let mut tracker = Tracker::new(config)?;
        tracker.set_deferred_decoding(true);
        Ok(BackgroundTracker {
            tracker,
            worker: None,
        })
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Whether a decode is still running.
    pub fn decoding(&self) -> bool {
        self.worker.as_ref().is_some_and(|w| !w.is_finished())
    }

    pub fn step_frame(&mut self, frame: ActivationFrame) -> Result<Vec<BeatEvent>> {
        if self.worker.as_ref().is_some_and(|w| w.is_finished()) {
            self.collect()?;
        }
        let events = self.tracker.step_frame(frame)?;
        if let Some(job) = self.tracker.take_decode_job() {
            // A decode still running when the next one is due is waited for.
            if self.worker.is_some() {
                self.collect()?;
            }
            self.worker = Some(thread::spawn(move || job.run()));
        }
        Ok(events)
    }

    /// Waits for any running decode, installs it, and finalizes the tracker.
    pub fn finalize(&mut self) -> Result<Vec<BeatEvent>> {
        if self.worker.is_some() {
            self.collect()?;
        }
        Ok(self.tracker.finalize()?)
    }

    fn collect(&mut self) -> Result<()> {
        let worker = self.worker.take().expect("a decode is running");
        let outcome = worker.join().expect("decode thread panicked")?;
        self.tracker.apply_decode(outcome);
        Ok(())
    }
}

impl Drop for BackgroundTracker {
    fn drop(&mut self) {
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}
