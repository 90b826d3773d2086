use std::fs::File;
use std::path::{Path, PathBuf};

use evseg::evaluation::{detect_events, SweepGrid};
use evseg::gating::EventInterval;
use evseg::io::{loss_signal, read_losses, write_detections};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Context};
use crate::manifest::{existing, Outcome};
use crate::settings::{GateSettings, DEFAULT_PSI_QUANTILES};

pub const GATED: &str = "gated.csv";
pub const INDEX: &str = "index.csv";
pub const DETECTIONS_DIR: &str = "detections";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateInvocation {
    pub input: PathBuf,
    /// With `psi` already resolved to concrete thresholds.
    pub gate: GateSettings,
}

/// Frame span of a loss trace: the first frame it covers and one past the
/// last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub first_frame: u64,
    pub total_frames: u64,
}

fn grid(g: &GateSettings) -> SweepGrid {
    SweepGrid {
        psi: g.psi.clone(),
        phi: g.phi.clone(),
        mode: g.mode,
        window: g.window,
        buffer: g.buffer,
        min_overlap: 1,
    }
}

fn load(path: &Path, g: &GateSettings) -> Result<(Vec<f64>, Span), CliError> {
    let samples = read_losses(File::open(path).at(path)?).at(path)?;
    if samples.is_empty() {
        return Err(CliError::Runtime(format!("{}: empty loss trace", path.display())));
    }
    let first = samples[0].t;
    let span = Span {
        first_frame: first,
        total_frames: first + samples.len() as u64 + 1,
    };
    Ok((loss_signal(&samples, g.signal), span))
}

/// Nearest-rank quantile of the finite values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

pub fn invocation(input: PathBuf, mut gate: GateSettings) -> Result<GateInvocation, CliError> {
    let input = existing(&input)?;
    if gate.phi.is_empty() {
        return Err(CliError::Usage("--phi needs at least one value".into()));
    }
    if gate.psi.is_empty() {
        let probe = SweepGrid {
            psi: vec![0.0],
            ..grid(&gate)
        };
        probe.validate()?;
        let (signal, _) = load(&input, &gate)?;
        let mut values: Vec<f64> = probe
            .gated_values(&signal)
            .into_iter()
            .filter(|v| v.is_finite())
            .collect();
        if values.is_empty() {
            return Err(CliError::Runtime(format!("{}: no finite loss values", input.display())));
        }
        values.sort_by(f64::total_cmp);
        gate.psi = DEFAULT_PSI_QUANTILES.iter().map(|&q| quantile(&values, q)).collect();
        gate.psi.dedup();
    }
    grid(&gate).validate()?;
    Ok(GateInvocation { input, gate })
}

pub fn detections_file(i: usize, j: usize) -> PathBuf {
    Path::new(DETECTIONS_DIR).join(format!("psi{i:02}_phi{j:02}.csv"))
}

fn shift(events: &mut [EventInterval], by: u64) {
    for e in events {
        e.start += by;
        e.end += by;
    }
}

pub fn execute(inv: &GateInvocation, out: &Path) -> Result<Outcome, CliError> {
    let (signal, span) = load(&inv.input, &inv.gate)?;
    let grid = grid(&inv.gate);
    let values = grid.gated_values(&signal);

    let gated = out.join(GATED);
    let mut w = csv::Writer::from_path(&gated).at(&gated)?;
    w.write_record(["frame", "value"]).at(&gated)?;
    for (k, v) in values.iter().enumerate() {
        w.write_record([(span.first_frame + k as u64 + 1).to_string(), v.to_string()])
            .at(&gated)?;
    }
    w.flush().at(&gated)?;

    let det_dir = out.join(DETECTIONS_DIR);
    std::fs::create_dir_all(&det_dir).at(&det_dir)?;
    let index = out.join(INDEX);
    let mut idx = csv::Writer::from_path(&index).at(&index)?;
    idx.write_record(["psi", "phi", "file", "events"]).at(&index)?;
    let mut outputs = vec![PathBuf::from(GATED), PathBuf::from(INDEX)];
    let local_frames = span.total_frames - span.first_frame;
    for (i, &psi) in inv.gate.psi.iter().enumerate() {
        for (j, &phi) in inv.gate.phi.iter().enumerate() {
            let mut events = detect_events(&values, psi, phi, local_frames)?;
            shift(&mut events, span.first_frame);
            let rel = detections_file(i, j);
            let path = out.join(&rel);
            write_detections(File::create(&path).at(&path)?, &events).at(&path)?;
            idx.write_record([
                psi.to_string(),
                phi.to_string(),
                rel.to_string_lossy().into_owned(),
                events.len().to_string(),
            ])
            .at(&index)?;
            outputs.push(rel);
        }
    }
    idx.flush().at(&index)?;

    Ok(Outcome {
        outputs,
        report: json!({
            "samples": signal.len(),
            "span": span,
        }),
        failure: None,
    })
}
