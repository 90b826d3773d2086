//! The feature-stream container: a fixed 32-byte header followed by frames of
//! little-endian `f32` values.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EVSG"
//!      4     4  version (u32, currently 1)
//!      8     4  grid side N (u32)
//!     12     4  feature dim M (u32)
//!     16     8  frame count T (u64, 0 = open-ended)
//!     24     4  fps numerator (u32)
//!     28     4  fps denominator (u32)
//!     32   ...  frames, each N*N*M f32 values, grid-location-major
//! ```
//!
//! When `T` is zero the reader treats a clean end of input at a frame
//! boundary as normal termination.

mod synthetic;

pub use synthetic::{generate_synthetic, Regime, Segment, SyntheticFrames, SyntheticScenario};

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EVSG";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

/// Frames per second as an exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FpsRepr", into = "String")]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!("fps must be positive, got {num}/{den}")));
        }
        Ok(Self { num, den })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Duration of `frames` frames, in minutes.
    pub fn minutes(self, frames: u64) -> f64 {
        frames as f64 / self.as_f64() / 60.0
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Fps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("invalid fps {s:?}, expected N or N/D"));
        match s.trim().split_once('/') {
            Some((n, d)) => Fps::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Fps::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

impl From<Fps> for String {
    fn from(f: Fps) -> String {
        f.to_string()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FpsRepr {
    Int(u32),
    Text(String),
}

impl TryFrom<FpsRepr> for Fps {
    type Error = Error;

    fn try_from(r: FpsRepr) -> Result<Self> {
        match r {
            FpsRepr::Int(n) => Fps::new(n, 1),
            FpsRepr::Text(s) => s.parse(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u32,
    pub grid_side: u32,
    pub feature_dim: u32,
    /// Number of frames, 0 when unknown.
    pub frame_count: u64,
    pub fps: Fps,
}

impl StreamHeader {
    pub fn new(grid_side: u32, feature_dim: u32, frame_count: u64, fps: Fps) -> Result<Self> {
        let h = Self {
            version: VERSION,
            grid_side,
            feature_dim,
            frame_count,
            fps,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        if self.grid_side == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidHeader(format!(
                "grid side and feature dim must be >= 1, got N={} M={}",
                self.grid_side, self.feature_dim
            )));
        }
        if self.fps.num == 0 || self.fps.den == 0 {
            return Err(Error::InvalidHeader(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }

    /// Number of grid locations, `N*N`.
    pub fn grid_len(&self) -> usize {
        (self.grid_side as usize).pow(2)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim as usize
    }

    pub fn values_per_frame(&self) -> usize {
        self.grid_len() * self.feature_dim()
    }

    pub fn frame_bytes(&self) -> usize {
        self.values_per_frame() * 4
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..12].copy_from_slice(&self.grid_side.to_le_bytes());
        b[12..16].copy_from_slice(&self.feature_dim.to_le_bytes());
        b[16..24].copy_from_slice(&self.frame_count.to_le_bytes());
        b[24..28].copy_from_slice(&self.fps.num.to_le_bytes());
        b[28..32].copy_from_slice(&self.fps.den.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let magic: [u8; 4] = b[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let h = Self {
            version: u32_at(4),
            grid_side: u32_at(8),
            feature_dim: u32_at(12),
            frame_count: u64::from_le_bytes(b[16..24].try_into().unwrap()),
            fps: Fps {
                num: u32_at(24),
                den: u32_at(28),
            },
        };
        h.validate()?;
        Ok(h)
    }

    /// Checks that `frame` has this header's shape.
    pub fn check_frame(&self, frame: &FeatureFrame) -> Result<()> {
        if frame.grid_len() != self.grid_len() || frame.feature_dim() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "frame {} is {}x{}, header expects {}x{}",
                frame.index,
                frame.grid_len(),
                frame.feature_dim(),
                self.grid_len(),
                self.feature_dim()
            )));
        }
        Ok(())
    }
}

/// One time step of encoded features: `grid_len` locations of `feature_dim`
/// values each, stored location-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub index: u64,
    grid_len: usize,
    feature_dim: usize,
    values: Vec<f32>,
}

impl FeatureFrame {
    /// Builds a frame, rejecting wrong lengths and non-finite values.
    pub fn new(index: u64, grid_len: usize, feature_dim: usize, values: Vec<f32>) -> Result<Self> {
        if grid_len == 0 || feature_dim == 0 {
            return Err(Error::Shape("frame dimensions must be non-zero".into()));
        }
        if values.len() != grid_len * feature_dim {
            return Err(Error::Shape(format!(
                "frame {index}: {} values for a {grid_len}x{feature_dim} grid",
                values.len()
            )));
        }
        if let Some(offset) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFrame {
                frame: index,
                offset,
            });
        }
        Ok(Self {
            index,
            grid_len,
            feature_dim,
            values,
        })
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn location(&self, g: usize) -> &[f32] {
        &self.values[g * self.feature_dim..(g + 1) * self.feature_dim]
    }

    /// Values widened to `f64`, same layout.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// Squared Euclidean distance to another frame of the same shape.
    pub fn sq_distance(&self, other: &FeatureFrame) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum()
    }
}

/// Sequential frame writer. The header is written on construction.
pub struct StreamWriter<W: Write> {
    sink: W,
    header: StreamHeader,
    written: u64,
    buf: Vec<u8>,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut sink: W, header: StreamHeader) -> Result<Self> {
        header.validate()?;
        sink.write_all(&header.to_bytes())?;
        Ok(Self {
            sink,
            header,
            written: 0,
            buf: Vec::with_capacity(header.frame_bytes()),
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn write_frame(&mut self, frame: &FeatureFrame) -> Result<()> {
        self.header.check_frame(frame)?;
        if self.header.frame_count != 0 && self.written >= self.header.frame_count {
            return Err(Error::Shape(format!(
                "header declares {} frames, refusing to write more",
                self.header.frame_count
            )));
        }
        self.buf.clear();
        for v in frame.values() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.sink.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u64 {
        self.written
    }

    /// Flushes and returns the sink. Fails if a declared frame count was
    /// not met.
    pub fn finish(mut self) -> Result<W> {
        self.sink.flush()?;
        if self.header.frame_count != 0 && self.written != self.header.frame_count {
            return Err(Error::Shape(format!(
                "header declares {} frames but {} were written",
                self.header.frame_count, self.written
            )));
        }
        Ok(self.sink)
    }
}

/// Writes a whole stream to `sink`.
pub fn write_stream<W, I>(header: StreamHeader, frames: I, sink: W) -> Result<W>
where
    W: Write,
    I: IntoIterator<Item = FeatureFrame>,
{
    let mut w = StreamWriter::new(sink, header)?;
    for f in frames {
        w.write_frame(&f)?;
    }
    w.finish()
}

/// Sequential frame reader. Iteration stops after the first error.
pub struct StreamReader<R: Read> {
    source: R,
    header: StreamHeader,
    next_index: u64,
    /// Frames still to read; `None` means read until end of input.
    remaining: Option<u64>,
    buf: Vec<u8>,
    done: bool,
}

impl<R: Read> StreamReader<R> {
    /// Reads and validates the header.
    pub fn open(mut source: R) -> Result<Self> {
        let mut hb = [0u8; HEADER_LEN];
        let got = read_full(&mut source, &mut hb)?;
        if got < 4 {
            return Err(Error::InvalidHeader(format!("stream too short ({got} bytes)")));
        }
        if hb[0..4] != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: hb[0..4].try_into().unwrap(),
            });
        }
        if got < HEADER_LEN {
            return Err(Error::InvalidHeader(format!("header truncated at {got} bytes")));
        }
        let header = StreamHeader::from_bytes(&hb)?;
        let remaining = (header.frame_count != 0).then_some(header.frame_count);
        Ok(Self::resume(source, header, 0, remaining))
    }

    /// Continues reading from a source already positioned at the start of
    /// frame `first_index`, yielding at most `limit` frames.
    pub fn resume(source: R, header: StreamHeader, first_index: u64, limit: Option<u64>) -> Self {
        Self {
            source,
            header,
            next_index: first_index,
            remaining: limit,
            buf: vec![0u8; header.frame_bytes()],
            done: false,
        }
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn read_frame(&mut self) -> Result<Option<FeatureFrame>> {
        if self.remaining == Some(0) {
            return Ok(None);
        }
        let index = self.next_index;
        let got = read_full(&mut self.source, &mut self.buf)?;
        if got == 0 && self.remaining.is_none() {
            return Ok(None);
        }
        if got < self.buf.len() {
            return Err(Error::Truncated {
                frame: index,
                expected: self.buf.len(),
                got,
            });
        }
        let values = self
            .buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let frame = FeatureFrame::new(
            index,
            self.header.grid_len(),
            self.header.feature_dim(),
            values,
        )?;
        self.next_index += 1;
        if let Some(r) = self.remaining.as_mut() {
            *r -= 1;
        }
        Ok(Some(frame))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<FeatureFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_frame() {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a stream: returns its header and a frame iterator.
pub fn read_stream<R: Read>(source: R) -> Result<(StreamHeader, StreamReader<R>)> {
    let reader = StreamReader::open(source)?;
    Ok((*reader.header(), reader))
}

/// Like `read_exact`, but reports how many bytes were read before EOF.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
