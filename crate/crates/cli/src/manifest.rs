//! Run manifests: everything needed to repeat a run, plus what happened.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use survey_mc::TuningTriple;

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    /// Echo of the configuration or command-line settings.
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub wall_seconds: f64,
    pub stages: Vec<Stage>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningTriple>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fallback_items: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub empty_items: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipped_probabilities: Option<usize>,
    pub outputs: Vec<PathBuf>,
}

/// Accumulates stage timings while a command runs.
pub struct Recorder {
    start: Instant,
    last: Instant,
    pub manifest: Manifest,
}

impl Recorder {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, threads: Option<usize>) -> Self {
        let now = Instant::now();
        Recorder {
            start: now,
            last: now,
            manifest: Manifest {
                command: command.to_owned(),
                version: env!("CARGO_PKG_VERSION"),
                config,
                seed,
                threads,
                wall_seconds: 0.0,
                stages: Vec::new(),
                warnings: Vec::new(),
                tuning: None,
                fallback_items: Vec::new(),
                empty_items: Vec::new(),
                clipped_probabilities: None,
                outputs: Vec::new(),
            },
        }
    }

    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.manifest.stages.push(Stage { name: name.to_owned(), seconds: (now - self.last).as_secs_f64() });
        self.last = now;
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.manifest.warnings.push(msg);
    }

    pub fn write(mut self, path: &Path) -> Result<(), Failure> {
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(path, text + "\n")
            .map_err(|e| Failure::Runtime(format!("cannot write manifest {}: {e}", path.display())))
    }
}
