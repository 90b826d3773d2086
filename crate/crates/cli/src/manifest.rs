//! `manifest.json`: the resolved invocation plus what it produced.
//!
//! The `invocation` block alone is enough to re-execute the command with
//! `evseg replay`; inputs are stored as absolute paths.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cmd_eval::EvalInvocation;
use crate::cmd_gate::GateInvocation;
use crate::cmd_run::RunInvocation;
use crate::cmd_synth::SynthInvocation;
use crate::error::{CliError, Context};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Run(RunInvocation),
    Gate(GateInvocation),
    Eval(EvalInvocation),
    Synth(SynthInvocation),
}

impl Invocation {
    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Invocation::Run(r) => r.inputs.iter().map(PathBuf::as_path).collect(),
            Invocation::Gate(g) => vec![g.input.as_path()],
            Invocation::Eval(e) => vec![e.input.as_path(), e.annotations.as_path()],
            Invocation::Synth(s) => s.source.iter().map(PathBuf::as_path).collect(),
        }
    }

    /// Outputs go to fresh file names inside `out`, so `out` must not be the
    /// directory any input lives in (or is).
    pub fn check_output_dir(&self, out: &Path) -> Result<(), CliError> {
        for input in self.inputs() {
            let clash = input == out || input.parent() == Some(out);
            if clash {
                return Err(CliError::Usage(format!(
                    "--out {} would write next to input {}; choose another directory",
                    out.display(),
                    input.display()
                )));
            }
        }
        Ok(())
    }
}

/// What a command produced, besides its files.
pub struct Outcome {
    /// Paths relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub report: serde_json::Value,
    /// Set when the command wrote its outputs but must still exit with 1.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub outputs: Vec<PathBuf>,
    pub report: serde_json::Value,
    pub elapsed_secs: f64,
}

impl Manifest {
    pub fn new(invocation: Invocation, outputs: Vec<PathBuf>, report: serde_json::Value, elapsed: Duration) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            outputs,
            report,
            elapsed_secs: elapsed.as_secs_f64(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").at(&path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Canonical path of an existing input, or a usage error.
pub fn existing(path: &Path) -> Result<PathBuf, CliError> {
    std::fs::canonicalize(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}
