//! Binary model container shared by every trained predictor.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "LSNM"
//!      4     4  format version (u32, currently 1)
//!      8     1  kind: 1 lstm trajectory, 2 lstm intention, 3 feedforward
//!      9     3  zero padding
//!     12     4  history length (u32)
//!     16     4  horizon steps (u32, 0 for recurrent models)
//!     20    16  dims (4 × u32): lstm (H, D, O, 0); feedforward (in, h1, h2, out)
//!     36     8  dt (f64, 0 for the intention model)
//!     44     4  block count (u32)
//!     48     …  blocks, each: rows (u32), cols (u32), rows·cols f64 row-major
//! ```
//!
//! Block order: input mean, input std, then for the trajectory and
//! feedforward kinds output mean and output std, then the parameter tensors
//! (lstm: W_f W_i W_c W_o b_f b_i b_c b_o W_y b_y; feedforward: W1 b1 W2 b2
//! W3 b3). Vectors are stored as 1 × n blocks. Trailing bytes are rejected.

use std::path::Path;

use crate::baselines::{FeedforwardModel, FeedforwardParams};
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::lstm::{IntentionModel, LstmModel, LstmParams};
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"LSNM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LstmTrajectory = 1,
    LstmIntention = 2,
    Feedforward = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Trajectory(LstmModel),
    Intention(IntentionModel),
    Feedforward(FeedforwardModel),
}

impl SavedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SavedModel::Trajectory(_) => ModelKind::LstmTrajectory,
            SavedModel::Intention(_) => ModelKind::LstmIntention,
            SavedModel::Feedforward(_) => ModelKind::Feedforward,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn block(&mut self, rows: usize, cols: usize, data: &[f64]) {
        self.u32(rows);
        self.u32(cols);
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn vector(&mut self, v: &[f64]) {
        self.block(1, v.len(), v);
    }

    fn matrix(&mut self, m: &Matrix) {
        self.block(m.rows(), m.cols(), m.as_slice());
    }
}

fn lstm_blocks(w: &mut Writer, p: &LstmParams) {
    for m in [&p.w_f, &p.w_i, &p.w_c, &p.w_o] {
        w.matrix(m);
    }
    for b in [&p.b_f, &p.b_i, &p.b_c, &p.b_o] {
        w.vector(b);
    }
    w.matrix(&p.w_y);
    w.vector(&p.b_y);
}

pub fn encode(model: &SavedModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.0.extend_from_slice(&[model.kind() as u8, 0, 0, 0]);
    let (history, horizon, dims, dt, blocks) = match model {
        SavedModel::Trajectory(m) => (
            m.history_len,
            0,
            [m.params.hidden, m.params.input, m.params.output, 0],
            m.dt,
            14,
        ),
        SavedModel::Intention(m) => (
            m.history_len,
            0,
            [m.params.hidden, m.params.input, m.params.output, 0],
            0.0,
            12,
        ),
        SavedModel::Feedforward(m) => (
            m.history_len,
            m.horizon,
            [
                m.params.w1.cols(),
                m.params.w1.rows(),
                m.params.w2.rows(),
                m.params.w3.rows(),
            ],
            m.dt,
            10,
        ),
    };
    w.u32(history);
    w.u32(horizon);
    for d in dims {
        w.u32(d);
    }
    w.0.extend_from_slice(&dt.to_le_bytes());
    w.u32(blocks);
    match model {
        SavedModel::Trajectory(m) => {
            w.vector(&m.input_norm.mean);
            w.vector(&m.input_norm.std);
            w.vector(&m.output_norm.mean);
            w.vector(&m.output_norm.std);
            lstm_blocks(&mut w, &m.params);
        }
        SavedModel::Intention(m) => {
            w.vector(&m.input_norm.mean);
            w.vector(&m.input_norm.std);
            lstm_blocks(&mut w, &m.params);
        }
        SavedModel::Feedforward(m) => {
            w.vector(&m.input_norm.mean);
            w.vector(&m.input_norm.std);
            w.vector(&m.output_norm.mean);
            w.vector(&m.output_norm.std);
            let p = &m.params;
            w.matrix(&p.w1);
            w.vector(&p.b1);
            w.matrix(&p.w2);
            w.vector(&p.b2);
            w.matrix(&p.w3);
            w.vector(&p.b3);
        }
    }
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self, rows: usize, cols: usize, what: &str) -> Result<Vec<f64>> {
        let (r, c) = (self.u32()?, self.u32()?);
        if (r, c) != (rows, cols) {
            return Err(format_err(format!("{what}: stored shape {r}x{c}, expected {rows}x{cols}")));
        }
        let raw = self.take(r.checked_mul(c).and_then(|n| n.checked_mul(8)).ok_or_else(|| format_err("block too large"))?)?;
        Ok(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }

    fn vector(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        self.block(1, n, what)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        Ok(Matrix::from_vec(rows, cols, self.block(rows, cols, what)?))
    }

    fn normalizer(&mut self, n: usize, what: &str) -> Result<Normalizer> {
        Ok(Normalizer {
            mean: self.vector(n, what)?,
            std: self.vector(n, what)?,
        })
    }
}

fn read_lstm(r: &mut Reader, h: usize, d: usize, o: usize) -> Result<LstmParams> {
    let mut p = LstmParams::zeros(h, d, o);
    p.w_f = r.matrix(h, h + d, "W_f")?;
    p.w_i = r.matrix(h, h + d, "W_i")?;
    p.w_c = r.matrix(h, h + d, "W_c")?;
    p.w_o = r.matrix(h, h + d, "W_o")?;
    p.b_f = r.vector(h, "b_f")?;
    p.b_i = r.vector(h, "b_i")?;
    p.b_c = r.vector(h, "b_c")?;
    p.b_o = r.vector(h, "b_o")?;
    p.w_y = r.matrix(o, h, "W_y")?;
    p.b_y = r.vector(o, "b_y")?;
    p.validate()?;
    Ok(p)
}

pub fn decode(bytes: &[u8]) -> Result<SavedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(format_err(format!("unsupported format version {version}")));
    }
    let head = r.take(4)?;
    let kind = head[0];
    let history = r.u32()?;
    let horizon = r.u32()?;
    let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let dt = r.f64()?;
    let blocks = r.u32()?;
    let expected_blocks = match kind {
        1 => 14,
        2 => 12,
        3 => 10,
        k => return Err(format_err(format!("unknown model kind {k}"))),
    };
    if blocks != expected_blocks {
        return Err(format_err(format!("{blocks} blocks, expected {expected_blocks}")));
    }
    if history == 0 {
        return Err(format_err("history length must be positive"));
    }
    let model = match kind {
        1 | 2 => {
            let [h, d, o, _] = dims;
            let input_norm = r.normalizer(d, "input normalization")?;
            if kind == 1 {
                let output_norm = r.normalizer(o, "output normalization")?;
                let m = LstmModel {
                    params: read_lstm(&mut r, h, d, o)?,
                    input_norm,
                    output_norm,
                    history_len: history,
                    dt,
                };
                m.validate()?;
                SavedModel::Trajectory(m)
            } else {
                SavedModel::Intention(IntentionModel {
                    params: read_lstm(&mut r, h, d, o)?,
                    input_norm,
                    history_len: history,
                })
            }
        }
        _ => {
            let [input, h1, h2, out] = dims;
            if input % history != 0 {
                return Err(format_err("feedforward input is not a multiple of the history length"));
            }
            let input_norm = r.normalizer(input / history, "input normalization")?;
            let output_norm = r.normalizer(out, "output normalization")?;
            let params = FeedforwardParams {
                w1: r.matrix(h1, input, "W1")?,
                b1: r.vector(h1, "b1")?,
                w2: r.matrix(h2, h1, "W2")?,
                b2: r.vector(h2, "b2")?,
                w3: r.matrix(out, h2, "W3")?,
                b3: r.vector(out, "b3")?,
            };
            let m = FeedforwardModel {
                params,
                input_norm,
                output_norm,
                history_len: history,
                horizon,
                dt,
            };
            m.validate()?;
            SavedModel::Feedforward(m)
        }
    };
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    decode(&std::fs::read(path)?)
}
