//! Binary checkpoints: every parameter with its Adam moments, the recurrent
//! state and the optimizer/dropout counters.
//!
//! ```text
//! "EVCK" | version u32 | value bytes u32 (8)
//! adam step u64 | state step u64 | next frame u64
//! dropout rng: seed [u8; 32] | stream u64 | word position u128
//! grid_len u32 | feature_dim u32 | hidden_dim u32 | input_dim u32 | attn_dim u32 | flags u32
//! tensor count u32
//! per tensor: rows u32 | cols u32 | rows*cols little-endian f64
//! ```
//!
//! Tensors are written as `value, m, v` for each parameter in model order,
//! then the hidden and cell states. Flags: bit 0 pooled attention, bit 1
//! teacher-concat input, bit 2 unshared cells.

use std::io::{Read, Write};

use crate::attention::AttentionShape;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::predictor::{InputMode, PredictorState};
use crate::tensor::{Parameterized, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngPosition {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub state: PredictorState,
    pub adam_step: u64,
    /// Index of the next frame the trainer expects.
    pub next_frame: u64,
    pub rng: RngPosition,
}

struct Dims {
    grid_len: usize,
    feature_dim: usize,
    hidden_dim: usize,
    input_dim: usize,
    attn_dim: usize,
    pooled: bool,
    teacher: bool,
    unshared: bool,
}

impl Checkpoint {
    fn dims(&self) -> Dims {
        let p = self.model.predictor.shape();
        let a = self.model.attention.shape();
        Dims {
            grid_len: p.grid_len,
            feature_dim: p.feature_dim,
            hidden_dim: p.hidden_dim,
            input_dim: p.input_dim,
            attn_dim: a.attn_dim,
            pooled: a.pooled,
            teacher: p.input_mode == InputMode::TeacherConcat,
            unshared: !p.shared,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dims();
        w.write_all(&CHECKPOINT_MAGIC)?;
        for v in [CHECKPOINT_VERSION, 8] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.adam_step, self.state.step, self.next_frame] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.rng.seed)?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;
        let flags = d.pooled as u32 | (d.teacher as u32) << 1 | (d.unshared as u32) << 2;
        for v in [d.grid_len, d.feature_dim, d.hidden_dim, d.input_dim, d.attn_dim] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&flags.to_le_bytes())?;

        let mut tensors: Vec<&Tensor> = Vec::new();
        for p in self.model.params() {
            tensors.extend([&p.value, &p.m, &p.v]);
        }
        tensors.extend([&self.state.h, &self.state.c]);
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for t in tensors {
            w.write_all(&(t.rows() as u32).to_le_bytes())?;
            w.write_all(&(t.cols() as u32).to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 8);
            for x in t.as_slice() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let width = read_u32(&mut r)?;
        if width != 8 {
            return Err(Error::InvalidHeader(format!("unsupported value width {width}")));
        }
        let adam_step = read_u64(&mut r)?;
        let state_step = read_u64(&mut r)?;
        let next_frame = read_u64(&mut r)?;
        let mut seed = [0u8; 32];
        read_exact(&mut r, &mut seed)?;
        let stream = read_u64(&mut r)?;
        let mut wp = [0u8; 16];
        read_exact(&mut r, &mut wp)?;
        let word_pos = u128::from_le_bytes(wp);

        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = read_u32(&mut r)? as usize;
        }
        let [grid_len, feature_dim, hidden_dim, input_dim, attn_dim] = dims;
        if dims.contains(&0) {
            return Err(Error::InvalidHeader("checkpoint dimension is zero".into()));
        }
        let flags = read_u32(&mut r)?;
        let config = ModelConfig {
            hidden_dim: Some(hidden_dim),
            input_dim: Some(input_dim),
            attn_dim: Some(attn_dim),
            pooled_attention: flags & 1 != 0,
            input_mode: if flags & 2 != 0 {
                InputMode::TeacherConcat
            } else {
                InputMode::Recurrent
            },
            shared_cells: flags & 4 == 0,
            ..ModelConfig::default()
        };
        debug_assert_eq!(
            config.attention_shape(feature_dim),
            AttentionShape {
                hidden_dim,
                feature_dim,
                attn_dim,
                pooled: flags & 1 != 0
            }
        );
        let mut model = Model::zeros(&config, grid_len, feature_dim);
        let mut state = PredictorState::zeros(grid_len, hidden_dim);
        state.step = state_step;

        let count = read_u32(&mut r)? as usize;
        let expected = model.params().len() * 3 + 2;
        if count != expected {
            return Err(Error::Shape(format!(
                "checkpoint holds {count} tensors, model needs {expected}"
            )));
        }
        {
            let mut slots: Vec<&mut Tensor> = Vec::with_capacity(expected);
            for p in model.params_mut() {
                slots.push(&mut p.value);
                slots.push(&mut p.m);
                slots.push(&mut p.v);
            }
            slots.push(&mut state.h);
            slots.push(&mut state.c);
            for (i, slot) in slots.into_iter().enumerate() {
                let rows = read_u32(&mut r)? as usize;
                let cols = read_u32(&mut r)? as usize;
                if (rows, cols) != slot.shape() {
                    return Err(Error::Shape(format!(
                        "checkpoint tensor {i} is {rows}x{cols}, expected {:?}",
                        slot.shape()
                    )));
                }
                let mut buf = vec![0u8; rows * cols * 8];
                read_exact(&mut r, &mut buf)?;
                for (x, c) in slot.as_mut_slice().iter_mut().zip(buf.chunks_exact(8)) {
                    *x = f64::from_le_bytes(c.try_into().unwrap());
                }
            }
        }
        Ok(Self {
            model,
            state,
            adam_step,
            next_frame,
            rng: RngPosition {
                seed,
                stream,
                word_pos,
            },
        })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::InvalidHeader("checkpoint is truncated".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(config: &ModelConfig) -> Checkpoint {
        let mut model = Model::init(config, 4, 5, 9).unwrap();
        for (i, p) in model.params_mut().into_iter().enumerate() {
            p.m.fill(i as f64 * 0.25);
            p.v.fill(-(i as f64));
        }
        let mut state = PredictorState::zeros(4, model.hidden_dim());
        state.h.fill(0.125);
        state.c.fill(f64::MIN_POSITIVE);
        state.step = 17;
        Checkpoint {
            model,
            state,
            adam_step: 16,
            next_frame: 18,
            rng: RngPosition {
                seed: [7; 32],
                stream: 1,
                word_pos: 123_456_789_012_345,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for config in [
            ModelConfig::default(),
            ModelConfig {
                pooled_attention: true,
                input_mode: InputMode::TeacherConcat,
                shared_cells: false,
                hidden_dim: Some(3),
                input_dim: Some(6),
                attn_dim: Some(2),
                ..ModelConfig::default()
            },
        ] {
            let ck = sample(&config);
            let bytes = ck.to_bytes();
            let back = Checkpoint::read_from(&bytes[..]).unwrap();
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back.state, ck.state);
            assert_eq!(back.model.params(), ck.model.params());
        }
    }

    #[test]
    fn truncation_and_magic_errors() {
        let bytes = sample(&ModelConfig::default()).to_bytes();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(Error::BadMagic { .. })));
    }
}
