//! File schemas.
//!
//! | file | columns |
//! |------|---------|
//! | loss trace | `t,pred_loss,mw_loss` |
//! | attention trace | `t,w0,w1,...,w{G-1}` |
//! | detections | `start_frame,end_frame,score` |
//! | annotations | `start_frame,end_frame,label` (empty `end_frame` = instant) |
//! | ROC curve | `param,recall,fpr_or_fpm` |
//!
//! All files carry a header row. Reals are written in Rust's shortest
//! round-trip form.

use std::io::{Read, Write};
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::attention::AttentionMap;
use crate::error::{Error, Result};
use crate::evaluation::RocCurve;
use crate::gating::EventInterval;
use crate::losses::{LossKind, LossSample};
use crate::trainer::TraceSink;

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad {what} {field:?}")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Streams loss samples to CSV as they are produced.
pub struct LossCsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> LossCsvSink<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["t", "pred_loss", "mw_loss"])?;
        Ok(Self { writer })
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush()?;
        self.writer
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

impl<W: Write> TraceSink for LossCsvSink<W> {
    fn loss(&mut self, s: &LossSample) -> Result<()> {
        self.writer
            .write_record([s.t.to_string(), s.pred_loss.to_string(), s.mw_loss.to_string()])?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_losses<W: Write>(sink: W, samples: &[LossSample]) -> Result<W> {
    let mut s = LossCsvSink::new(sink)?;
    for x in samples {
        s.loss(x)?;
    }
    s.finish()
}

pub fn read_losses<R: Read>(source: R) -> Result<Vec<LossSample>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(Error::Parse(format!("line {line}: expected 3 columns")));
        }
        out.push(LossSample {
            t: parse(&rec[0], "t", line)?,
            pred_loss: parse(&rec[1], "pred_loss", line)?,
            mw_loss: parse(&rec[2], "mw_loss", line)?,
        });
    }
    let first = out.first().map_or(0, |s| s.t);
    for (i, s) in out.iter().enumerate() {
        if s.t != first + i as u64 {
            return Err(Error::Parse(format!(
                "loss trace has a gap or reordering at row {i} (t = {})",
                s.t
            )));
        }
    }
    Ok(out)
}

/// One loss column of a trace.
pub fn loss_signal(samples: &[LossSample], kind: LossKind) -> Vec<f64> {
    samples.iter().map(|s| s.get(kind)).collect()
}

/// Streams attention maps to CSV, and optionally one grayscale PNG per frame.
pub struct AttentionSink<W: Write> {
    writer: csv::Writer<W>,
    header_written: bool,
    png: Option<(std::path::PathBuf, u32, u32)>,
}

impl<W: Write> AttentionSink<W> {
    pub fn new(sink: W) -> Self {
        Self {
            writer: csv::Writer::from_writer(sink),
            header_written: false,
            png: None,
        }
    }

    /// Also writes `dir/attention_{t:08}.png`, each grid cell `scale` pixels wide.
    pub fn with_png(mut self, dir: &Path, grid_side: u32, scale: u32) -> Self {
        self.png = Some((dir.to_path_buf(), grid_side, scale));
        self
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

impl<W: Write> TraceSink for AttentionSink<W> {
    fn loss(&mut self, _s: &LossSample) -> Result<()> {
        Ok(())
    }

    fn attention(&mut self, t: u64, map: &AttentionMap) -> Result<()> {
        if !self.header_written {
            let mut h = vec!["t".to_string()];
            h.extend((0..map.len()).map(|g| format!("w{g}")));
            self.writer.write_record(&h)?;
            self.header_written = true;
        }
        let mut row = vec![t.to_string()];
        row.extend(map.weights().iter().map(|w| w.to_string()));
        self.writer.write_record(&row)?;
        if let Some((dir, side, scale)) = &self.png {
            attention_image(map, *side, *scale)?.save(dir.join(format!("attention_{t:08}.png")))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Fans one stream of traces out to two sinks.
pub struct Tee<A, B>(pub A, pub B);

impl<A: TraceSink, B: TraceSink> TraceSink for Tee<A, B> {
    fn loss(&mut self, s: &LossSample) -> Result<()> {
        self.0.loss(s)?;
        self.1.loss(s)
    }

    fn attention(&mut self, t: u64, map: &AttentionMap) -> Result<()> {
        self.0.attention(t, map)?;
        self.1.attention(t, map)
    }

    fn flush(&mut self) -> Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

pub fn read_attention<R: Read>(source: R) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let t = parse(&rec[0], "t", line)?;
        let w = rec.iter().skip(1).map(|f| parse(f, "weight", line)).collect::<Result<_>>()?;
        out.push((t, w));
    }
    Ok(out)
}

/// Grayscale image of an attention map, min-max scaled to 0..=255 and
/// enlarged by nearest neighbour.
pub fn attention_image(map: &AttentionMap, grid_side: u32, scale: u32) -> Result<GrayImage> {
    if (grid_side * grid_side) as usize != map.len() || scale == 0 {
        return Err(Error::Shape(format!(
            "attention map of {} weights is not a {grid_side}x{grid_side} grid",
            map.len()
        )));
    }
    let gray = map.to_gray();
    Ok(ImageBuffer::from_fn(grid_side * scale, grid_side * scale, |x, y| {
        let (gx, gy) = (x / scale, y / scale);
        Luma([gray[(gy * grid_side + gx) as usize]])
    }))
}

pub fn write_detections<W: Write>(sink: W, events: &[EventInterval]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["start_frame", "end_frame", "score"])?;
    for e in events {
        w.write_record([
            e.start.to_string(),
            e.end.to_string(),
            e.score.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections<R: Read>(source: R) -> Result<Vec<EventInterval>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let start: u64 = parse(&rec[0], "start_frame", line)?;
        let end: u64 = parse(&rec[1], "end_frame", line)?;
        if end < start {
            return Err(Error::Parse(format!("line {line}: end before start")));
        }
        let score = match rec.get(2).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(parse(s, "score", line)?),
        };
        out.push(EventInterval {
            start,
            end,
            label: None,
            score,
        });
    }
    Ok(out)
}

/// Reads `start_frame,end_frame,label`. Rows with an empty `end_frame`, or
/// with `end_frame == start_frame`, are instants and are widened by `pad`
/// frames on each side, clipped to `[0, total_frames)`.
pub fn read_annotations<R: Read>(source: R, total_frames: u64, pad: u64) -> Result<Vec<EventInterval>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let mut out = Vec::new();
    let last = total_frames.saturating_sub(1);
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let start: u64 = parse(&rec[0], "start_frame", line)?;
        let end = match rec.get(1).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(parse::<u64>(s, "end_frame", line)?),
        };
        let label = rec.get(2).map(str::trim).filter(|s| !s.is_empty()).map(String::from);
        let (s, e) = match end {
            Some(e) if e < start => {
                return Err(Error::Parse(format!("line {line}: end before start")));
            }
            Some(e) if e > start => (start, e),
            _ => (start.saturating_sub(pad), (start + pad).min(last)),
        };
        if s > last {
            return Err(Error::Parse(format!(
                "line {line}: annotation starts at {s}, past the last frame {last}"
            )));
        }
        out.push(EventInterval {
            start: s,
            end: e.min(last),
            label,
            score: None,
        });
    }
    out.sort_by_key(|e| (e.start, e.end));
    Ok(out)
}

pub fn write_annotations<W: Write>(sink: W, events: &[EventInterval]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["start_frame", "end_frame", "label"])?;
    for e in events {
        w.write_record([e.start.to_string(), e.end.to_string(), e.label.clone().unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_curve<W: Write>(sink: W, curve: &RocCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["param", "recall", "fpr_or_fpm"])?;
    for p in &curve.points {
        w.write_record([p.param.to_string(), p.recall.to_string(), p.x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_roc_curve<R: Read>(source: R) -> Result<Vec<(f64, f64, f64)>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        out.push((
            parse(&rec[0], "param", line)?,
            parse(&rec[1], "recall", line)?,
            parse(&rec[2], "fpr_or_fpm", line)?,
        ));
    }
    Ok(out)
}

/// A plain line chart of one or two loss signals, each scaled to its own
/// range (first in blue, second in red).
pub fn loss_chart(signals: &[&[f64]], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let colors = [Rgb([30, 80, 200]), Rgb([200, 40, 40])];
    for (k, sig) in signals.iter().enumerate() {
        let finite = sig.iter().copied().filter(|v| v.is_finite());
        let lo = finite.clone().fold(f64::INFINITY, f64::min);
        let hi = finite.fold(f64::NEG_INFINITY, f64::max);
        if sig.len() < 2 || !lo.is_finite() {
            continue;
        }
        let span = if hi > lo { hi - lo } else { 1.0 };
        let point = |i: usize| {
            let x = i as f64 / (sig.len() - 1) as f64 * (width - 1) as f64;
            let y = (1.0 - (sig[i] - lo) / span) * (height - 1) as f64;
            (x.round() as i64, y.round() as i64)
        };
        for i in 1..sig.len() {
            draw_line(&mut img, point(i - 1), point(i), colors[k % colors.len()]);
        }
    }
    img
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
