use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use evseg::attention::AttentionMap;
use evseg::feature_stream::{read_stream, StreamHeader};
use evseg::io::{loss_chart, loss_signal, AttentionSink, LossCsvSink};
use evseg::losses::{LossKind, LossSample};
use evseg::trainer::{run_parallel, RunOptions, TraceSink, TrainerConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Context};
use crate::manifest::{existing, Outcome};
use crate::settings::{RunSettings, Settings};

pub const LOSSES: &str = "losses.csv";
pub const ATTENTION: &str = "attention.csv";
pub const ATTENTION_PNG_DIR: &str = "attention_png";
pub const CHECKPOINT: &str = "checkpoint.evck";
pub const PLOT: &str = "losses.png";
pub const THREADS_ENV: &str = "EVSEG_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInvocation {
    pub inputs: Vec<PathBuf>,
    pub trainer: TrainerConfig,
    pub run: RunSettings,
}

pub fn invocation(inputs: Vec<PathBuf>, s: Settings) -> Result<RunInvocation, CliError> {
    s.trainer.validate()?;
    if s.run.parallel == Some(0) {
        return Err(CliError::Usage("--parallel must be at least 1".into()));
    }
    if s.run.png_scale == 0 {
        return Err(CliError::Usage("png_scale must be at least 1".into()));
    }
    let inputs = inputs.iter().map(|p| existing(p)).collect::<Result<_, _>>()?;
    Ok(RunInvocation {
        inputs,
        trainer: s.trainer,
        run: s.run,
    })
}

/// Worker count: `--parallel` (default: one per input), capped by
/// `EVSEG_THREADS` when set.
fn worker_count(requested: Option<usize>, inputs: usize) -> Result<usize, CliError> {
    let mut n = requested.unwrap_or(inputs);
    if let Ok(cap) = std::env::var(THREADS_ENV) {
        let cap: usize = cap
            .trim()
            .parse()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {cap:?}")))?;
        n = n.min(cap);
    }
    Ok(n.clamp(1, inputs.max(1)))
}

/// Per-input output directory: the output directory itself for a single
/// input, `NN_<stem>` below it otherwise.
fn job_dirs(inputs: &[PathBuf], out: &Path) -> Vec<PathBuf> {
    if inputs.len() == 1 {
        return vec![out.to_path_buf()];
    }
    inputs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let stem = p.file_stem().map_or("stream".into(), |s| s.to_string_lossy());
            out.join(format!("{i:02}_{stem}"))
        })
        .collect()
}

struct JobSink {
    losses: LossCsvSink<BufWriter<File>>,
    attention: Option<AttentionSink<BufWriter<File>>>,
}

impl TraceSink for JobSink {
    fn loss(&mut self, s: &LossSample) -> evseg::Result<()> {
        self.losses.loss(s)
    }

    fn attention(&mut self, t: u64, map: &AttentionMap) -> evseg::Result<()> {
        match &mut self.attention {
            Some(a) => a.attention(t, map),
            None => Ok(()),
        }
    }

    fn flush(&mut self) -> evseg::Result<()> {
        self.losses.flush()?;
        if let Some(a) = &mut self.attention {
            a.flush()?;
        }
        Ok(())
    }
}

fn open_sink(dir: &Path, header: &StreamHeader, run: &RunSettings) -> evseg::Result<JobSink> {
    std::fs::create_dir_all(dir)?;
    let losses = LossCsvSink::new(BufWriter::new(File::create(dir.join(LOSSES))?))?;
    let attention = if run.attention || run.attention_png {
        let mut a = AttentionSink::new(BufWriter::new(File::create(dir.join(ATTENTION))?));
        if run.attention_png {
            let png = dir.join(ATTENTION_PNG_DIR);
            std::fs::create_dir_all(&png)?;
            a = a.with_png(&png, header.grid_side, run.png_scale);
        }
        Some(a)
    } else {
        None
    };
    Ok(JobSink { losses, attention })
}

pub fn execute(inv: &RunInvocation, out: &Path) -> Result<Outcome, CliError> {
    let mut headers = Vec::with_capacity(inv.inputs.len());
    let mut streams = Vec::with_capacity(inv.inputs.len());
    for path in &inv.inputs {
        let file = File::open(path).at(path)?;
        let (header, reader) = read_stream(BufReader::new(file)).at(path)?;
        headers.push(header);
        streams.push(reader);
    }
    let first = headers[0];
    if let Some((i, h)) = headers
        .iter()
        .enumerate()
        .find(|(_, h)| (h.grid_side, h.feature_dim) != (first.grid_side, first.feature_dim))
    {
        return Err(CliError::Usage(format!(
            "{} has grid {}x{} with M={}, {} has {}x{} with M={}; one run shares one model shape",
            inv.inputs[i].display(),
            h.grid_side,
            h.grid_side,
            h.feature_dim,
            inv.inputs[0].display(),
            first.grid_side,
            first.grid_side,
            first.feature_dim
        )));
    }

    let model = inv.trainer.init_model(first.grid_len(), first.feature_dim())?;
    let threads = worker_count(inv.run.parallel, inv.inputs.len())?;
    let dirs = job_dirs(&inv.inputs, out);
    let options = RunOptions {
        retain_losses: inv.run.plot,
        retain_attention: false,
    };
    let results = run_parallel(
        &inv.trainer,
        &model,
        streams,
        threads,
        |i| open_sink(&dirs[i], &headers[i], &inv.run),
        options,
    );

    let mut outputs = Vec::new();
    let mut jobs = Vec::new();
    let mut failures = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        let dir = &dirs[i];
        let rel = |name: &str| dir.strip_prefix(out).unwrap_or(dir).join(name);
        let ckpt = dir.join(CHECKPOINT);
        let mut files = vec![rel(LOSSES)];
        if inv.run.attention || inv.run.attention_png {
            files.push(rel(ATTENTION));
        }
        if inv.run.attention_png {
            files.push(rel(ATTENTION_PNG_DIR));
        }
        match result {
            Ok(run) => {
                let mut f = BufWriter::new(File::create(&ckpt).at(&ckpt)?);
                run.checkpoint.write_to(&mut f).at(&ckpt)?;
                std::io::Write::flush(&mut f).at(&ckpt)?;
                files.push(rel(CHECKPOINT));
                if inv.run.plot {
                    let pred = loss_signal(&run.losses, LossKind::Prediction);
                    let mw = loss_signal(&run.losses, LossKind::MotionWeighted);
                    let png = dir.join(PLOT);
                    loss_chart(&[&pred, &mw], 1200, 400).save(&png).map_err(evseg::Error::from).at(&png)?;
                    files.push(rel(PLOT));
                }
                jobs.push(json!({
                    "input": inv.inputs[i],
                    "dir": rel(""),
                    "status": "ok",
                    "frames": run.frames_seen,
                    "peak_retained_frames": run.peak_retained_frames,
                }));
            }
            Err(fail) => {
                let mut saved = None;
                if let Some(c) = &fail.checkpoint {
                    let mut f = BufWriter::new(File::create(&ckpt).at(&ckpt)?);
                    c.write_to(&mut f).at(&ckpt)?;
                    std::io::Write::flush(&mut f).at(&ckpt)?;
                    files.push(rel(CHECKPOINT));
                    saved = Some(ckpt.clone());
                }
                let msg = match &saved {
                    Some(p) => format!(
                        "{}: {} (last finite checkpoint: {})",
                        inv.inputs[i].display(),
                        fail.error,
                        p.display()
                    ),
                    None => format!("{}: {}", inv.inputs[i].display(), fail.error),
                };
                failures.push(msg);
                jobs.push(json!({
                    "input": inv.inputs[i],
                    "dir": rel(""),
                    "status": "failed",
                    "error": fail.error.to_string(),
                    "frames": fail.frames_seen,
                    "checkpoint": saved,
                }));
            }
        }
        outputs.extend(files);
    }

    let failure = (!failures.is_empty()).then(|| failures.join("\nerror: "));
    Ok(Outcome {
        outputs,
        report: json!({ "threads": threads, "jobs": jobs }),
        failure,
    })
}
