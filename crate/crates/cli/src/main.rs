//! `evseg`: online event segmentation from the command line.
//!
//! Subcommands: `synth` writes a synthetic stream with annotations, `run`
//! trains over one or more streams, `gate` turns a loss trace into
//! detections over a (psi, phi) grid, `eval` scores detections, and `replay`
//! re-executes any of them from its `manifest.json`.

mod cmd_eval;
mod cmd_gate;
mod cmd_run;
mod cmd_synth;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use evseg::feature_stream::Fps;
use evseg::gating::GateMode;
use evseg::losses::LossKind;

use error::CliError;
use manifest::{Invocation, Manifest};
use settings::Settings;

#[derive(Parser)]
#[command(name = "evseg", version, about = "Online self-supervised event segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train online over feature streams and write loss traces.
    Run(RunArgs),
    /// Gate a loss trace over a (psi, phi) grid and write detections.
    Gate(GateArgs),
    /// Score gated detections against annotations and write ROC curves.
    Eval(EvalArgs),
    /// Generate a synthetic stream and its ground-truth annotations.
    Synth(SynthArgs),
    /// Re-execute a command from its manifest into a new directory.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// TOML settings file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Feature stream (.evsg); repeat for several independent streams.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Loss the model is trained on.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// Recurrent dropout rate.
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Streams trained at the same time (capped by EVSEG_THREADS).
    #[arg(long)]
    parallel: Option<usize>,
    /// Truncated backpropagation window, in steps.
    #[arg(long)]
    bptt: Option<usize>,
    /// Hidden width (defaults to the feature dimension).
    #[arg(long)]
    hidden: Option<usize>,
    /// Run inference only, without updates or dropout.
    #[arg(long)]
    frozen: bool,
    /// Write attention.csv.
    #[arg(long)]
    attention: bool,
    /// Write one attention PNG per frame.
    #[arg(long)]
    attention_png: bool,
    /// Render losses.png.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct GateArgs {
    /// Loss trace written by `run`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Which loss signal to gate.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long, value_parser = parse_gate)]
    gate: Option<GateMode>,
    /// Thresholds; omit to use quantiles of the gated signal.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    psi: Option<Vec<f64>>,
    /// Joining windows, in frames.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    phi: Option<Vec<u64>>,
    /// Adaptive smoothing window.
    #[arg(long = "n")]
    n: Option<usize>,
    /// Adaptive history length (must exceed n).
    #[arg(long = "m")]
    m: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Output directory of `gate`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Annotation CSV (`start_frame,end_frame,label`).
    #[arg(long)]
    annotations: PathBuf,
    /// Frame rate, `N` or `N/D`.
    #[arg(long, value_parser = parse_fps)]
    fps: Option<Fps>,
    /// Frames added on each side of instant annotations.
    #[arg(long)]
    pad: Option<u64>,
    /// Frames a detection must share with an event to match it.
    #[arg(long)]
    min_overlap: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Scenario TOML; the remaining flags then only override seed and fps.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long)]
    grid_side: Option<u32>,
    #[arg(long)]
    feature_dim: Option<u32>,
    /// Number of regime changes, spaced evenly.
    #[arg(long)]
    boundaries: Option<usize>,
    /// Per-value Gaussian noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Linear drift over each regime.
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_fps)]
    fps: Option<Fps>,
}

#[derive(Args)]
struct ReplayArgs {
    /// A manifest.json written by any command.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: evseg::Error| e.to_string())
}

fn parse_gate(s: &str) -> Result<GateMode, String> {
    s.parse().map_err(|e: evseg::Error| e.to_string())
}

fn parse_fps(s: &str) -> Result<Fps, String> {
    s.parse().map_err(|e: evseg::Error| e.to_string())
}

fn resolve(command: Command) -> Result<(Invocation, PathBuf), CliError> {
    Ok(match command {
        Command::Run(a) => {
            let mut s = Settings::load(a.common.config.as_deref())?;
            let t = &mut s.trainer;
            set(&mut t.learning_rate, a.lr);
            set(&mut t.training_loss, a.loss);
            set(&mut t.dropout, a.dropout);
            set(&mut t.seed, a.seed);
            set(&mut t.bptt_window, a.bptt);
            if a.hidden.is_some() {
                t.model.hidden_dim = a.hidden;
            }
            t.frozen |= a.frozen;
            if a.parallel.is_some() {
                s.run.parallel = a.parallel;
            }
            s.run.attention |= a.attention;
            s.run.attention_png |= a.attention_png;
            s.run.plot |= a.plot;
            (Invocation::Run(cmd_run::invocation(a.input, s)?), a.common.out)
        }
        Command::Gate(a) => {
            let mut s = Settings::load(a.common.config.as_deref())?;
            let g = &mut s.gate;
            set(&mut g.signal, a.loss);
            set(&mut g.mode, a.gate);
            set(&mut g.psi, a.psi);
            set(&mut g.phi, a.phi);
            set(&mut g.window, a.n);
            set(&mut g.buffer, a.m);
            (Invocation::Gate(cmd_gate::invocation(a.input, s.gate)?), a.common.out)
        }
        Command::Eval(a) => {
            let mut s = Settings::load(a.common.config.as_deref())?;
            let e = &mut s.eval;
            if a.fps.is_some() {
                e.fps = a.fps;
            }
            set(&mut e.pad, a.pad);
            set(&mut e.min_overlap, a.min_overlap);
            (Invocation::Eval(cmd_eval::invocation(a.input, a.annotations, s.eval)?), a.common.out)
        }
        Command::Synth(a) => {
            let mut s = Settings::load(a.common.config.as_deref())?;
            let y = &mut s.synth;
            if a.scenario.is_some() {
                y.scenario = a.scenario;
            }
            set(&mut y.frames, a.frames);
            set(&mut y.grid_side, a.grid_side);
            set(&mut y.feature_dim, a.feature_dim);
            set(&mut y.boundaries, a.boundaries);
            set(&mut y.noise, a.noise);
            set(&mut y.drift, a.drift);
            if a.seed.is_some() {
                y.seed = a.seed;
            }
            if a.fps.is_some() {
                y.fps = a.fps;
            }
            (Invocation::Synth(cmd_synth::invocation(s.synth)?), a.common.out)
        }
        Command::Replay(a) => (Manifest::read(&a.manifest)?.invocation, a.out),
    })
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    let (invocation, out) = resolve(command)?;
    let started = Instant::now();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let out = std::fs::canonicalize(&out).map_err(|e| CliError::io(&out, e))?;
    invocation.check_output_dir(&out)?;
    let outcome = match &invocation {
        Invocation::Run(r) => cmd_run::execute(r, &out),
        Invocation::Gate(g) => cmd_gate::execute(g, &out),
        Invocation::Eval(e) => cmd_eval::execute(e, &out),
        Invocation::Synth(s) => cmd_synth::execute(s, &out),
    }?;
    let manifest = Manifest::new(invocation, outcome.outputs, outcome.report, started.elapsed());
    manifest.write(&out)?;
    match outcome.failure {
        Some(msg) => Err(CliError::Runtime(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
