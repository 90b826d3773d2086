use std::fs::File;
use std::path::{Path, PathBuf};

use evseg::evaluation::{activity_level, frame_level, per_label_recall, AnnotationSet, RocCurve, RocPoint};
use evseg::feature_stream::Fps;
use evseg::gating::rasterize;
use evseg::io::{read_annotations, read_detections, write_roc_curve};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cmd_gate::{Span, INDEX};
use crate::error::{CliError, Context};
use crate::manifest::{existing, Manifest, Outcome, FILE_NAME};
use crate::settings::EvalSettings;

pub const SUMMARY: &str = "summary.csv";
pub const CURVES: &str = "curves.csv";
pub const LABELS: &str = "labels.csv";
pub const FRAME_DIR: &str = "frame_roc";
pub const ACTIVITY_DIR: &str = "activity_roc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInvocation {
    /// A `gate` output directory.
    pub input: PathBuf,
    pub annotations: PathBuf,
    pub fps: Fps,
    pub pad: u64,
    pub min_overlap: u64,
}

pub fn invocation(input: PathBuf, annotations: PathBuf, e: EvalSettings) -> Result<EvalInvocation, CliError> {
    let fps = e
        .fps
        .ok_or_else(|| CliError::Usage("--fps is required (or set eval.fps in the config)".into()))?;
    if e.min_overlap == 0 {
        return Err(CliError::Usage("--min-overlap must be at least 1".into()));
    }
    Ok(EvalInvocation {
        input: existing(&input)?,
        annotations: existing(&annotations)?,
        fps,
        pad: e.pad,
        min_overlap: e.min_overlap,
    })
}

struct Row {
    psi: f64,
    phi: u64,
    file: PathBuf,
}

fn read_index(dir: &Path) -> Result<Vec<Row>, CliError> {
    let path = dir.join(INDEX);
    let mut r = csv::Reader::from_path(&path).at(&path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.at(&path)?;
        let bad = |what: &str| CliError::Runtime(format!("{}: bad {what} in row {:?}", path.display(), rec));
        rows.push(Row {
            psi: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("psi"))?,
            phi: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("phi"))?,
            file: rec.get(2).map(PathBuf::from).ok_or_else(|| bad("file"))?,
        });
    }
    Ok(rows)
}

fn gate_span(dir: &Path) -> Result<Span, CliError> {
    let path = dir.join(FILE_NAME);
    let m = Manifest::read(&path)?;
    serde_json::from_value(m.report["span"].clone())
        .map_err(|e| CliError::Runtime(format!("{}: no gate span: {e}", path.display())))
}

/// Distinct values in first-seen order.
fn distinct<T: PartialEq + Copy>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for v in it {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn write_curve(out: &Path, rel: &Path, curve: &RocCurve) -> Result<(), CliError> {
    let path = out.join(rel);
    write_roc_curve(File::create(&path).at(&path)?, curve).at(&path)
}

pub fn execute(inv: &EvalInvocation, out: &Path) -> Result<Outcome, CliError> {
    let span = gate_span(&inv.input)?;
    let total = span.total_frames;
    let gt = read_annotations(File::open(&inv.annotations).at(&inv.annotations)?, total, inv.pad)
        .at(&inv.annotations)?;
    let truth = AnnotationSet::new(gt, total, inv.fps).at(&inv.annotations)?;
    let minutes = truth.duration_minutes();
    let rows = read_index(&inv.input)?;

    let summary = out.join(SUMMARY);
    let mut sw = csv::Writer::from_path(&summary).at(&summary)?;
    sw.write_record([
        "psi",
        "phi",
        "frame_recall",
        "frame_fpr",
        "activity_recall",
        "fp_per_min",
        "matched",
        "detections",
    ])
    .at(&summary)?;
    let labels = out.join(LABELS);
    let mut lw = csv::Writer::from_path(&labels).at(&labels)?;
    lw.write_record(["psi", "phi", "label", "matched", "total"]).at(&labels)?;

    let psis = distinct(rows.iter().map(|r| r.psi));
    let phis = distinct(rows.iter().map(|r| r.phi));
    let mut frame: Vec<RocCurve> = phis
        .iter()
        .map(|&phi| RocCurve {
            fixed: phi as f64,
            points: Vec::new(),
        })
        .collect();
    let mut activity: Vec<RocCurve> = psis
        .iter()
        .map(|&psi| RocCurve {
            fixed: psi,
            points: Vec::new(),
        })
        .collect();
    let mut best: Option<(f64, f64, f64, u64)> = None;

    for row in &rows {
        let path = inv.input.join(&row.file);
        let det = read_detections(File::open(&path).at(&path)?).at(&path)?;
        if let Some(e) = det.iter().find(|e| e.end >= total) {
            return Err(CliError::Runtime(format!(
                "{}: detection [{}, {}] is past the {total} frames of the trace",
                path.display(),
                e.start,
                e.end
            )));
        }
        let fm = frame_level(&rasterize(&det, total as usize), &truth)?;
        let am = activity_level(&truth.intervals, &det, minutes, inv.min_overlap)?;
        sw.write_record([
            row.psi.to_string(),
            row.phi.to_string(),
            fm.recall.to_string(),
            fm.fpr.to_string(),
            am.recall.to_string(),
            am.fp_per_min.to_string(),
            am.matched.to_string(),
            am.det_total.to_string(),
        ])
        .at(&summary)?;
        for (label, (matched, count)) in per_label_recall(&truth.intervals, &det, inv.min_overlap) {
            lw.write_record([
                row.psi.to_string(),
                row.phi.to_string(),
                label,
                matched.to_string(),
                count.to_string(),
            ])
            .at(&labels)?;
        }

        let j = phis.iter().position(|&p| p == row.phi).expect("phi listed");
        frame[j].points.push(RocPoint {
            param: row.psi,
            recall: fm.recall,
            x: fm.fpr,
        });
        let i = psis.iter().position(|&p| p == row.psi).expect("psi listed");
        activity[i].points.push(RocPoint {
            param: row.phi as f64,
            recall: am.recall,
            x: am.fp_per_min,
        });
        let better = match best {
            None => true,
            Some((r, f, _, _)) => am.recall > r || (am.recall == r && am.fp_per_min < f),
        };
        if better {
            best = Some((am.recall, am.fp_per_min, row.psi, row.phi));
        }
    }
    sw.flush().at(&summary)?;
    lw.flush().at(&labels)?;

    std::fs::create_dir_all(out.join(FRAME_DIR)).at(&out.join(FRAME_DIR))?;
    std::fs::create_dir_all(out.join(ACTIVITY_DIR)).at(&out.join(ACTIVITY_DIR))?;
    let curves = out.join(CURVES);
    let mut cw = csv::Writer::from_path(&curves).at(&curves)?;
    cw.write_record(["level", "fixed", "file"]).at(&curves)?;
    let mut outputs = vec![PathBuf::from(SUMMARY), PathBuf::from(LABELS), PathBuf::from(CURVES)];
    for (j, c) in frame.iter().enumerate() {
        let rel = Path::new(FRAME_DIR).join(format!("phi{j:02}.csv"));
        write_curve(out, &rel, c)?;
        cw.write_record(["frame".to_string(), c.fixed.to_string(), rel.to_string_lossy().into_owned()])
            .at(&curves)?;
        outputs.push(rel);
    }
    for (i, c) in activity.iter().enumerate() {
        let rel = Path::new(ACTIVITY_DIR).join(format!("psi{i:02}.csv"));
        write_curve(out, &rel, c)?;
        cw.write_record(["activity".to_string(), c.fixed.to_string(), rel.to_string_lossy().into_owned()])
            .at(&curves)?;
        outputs.push(rel);
    }
    cw.flush().at(&curves)?;

    let best = best.map(|(recall, fpm, psi, phi)| {
        json!({ "activity_recall": recall, "fp_per_min": fpm, "psi": psi, "phi": phi })
    });
    Ok(Outcome {
        outputs,
        report: json!({
            "total_frames": total,
            "minutes": minutes,
            "events": truth.intervals.len(),
            "grid_points": rows.len(),
            "best": best,
        }),
        failure: None,
    })
}
