//! Binary model file.
//!
//! Little-endian throughout:
//!
//! ```text
//! "SONN" | u32 version (1) | u32 layer count
//! per layer:
//!   u32 kind (0 = Self-ONN column layer, 1 = fusion convolution)
//!   u32 column index (u32::MAX for fusion) | u32 pool_after (0/1) | u32 q_max
//!   u32 kernel_h | u32 kernel_w | u32 padding | u32 stride
//!   u32 in_channels | u32 out_channels
//!   f32 weights, q_max banks of [out, in, kh, kw] in bank order
//!   f32 bias [out]
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::config::{ColumnSpec, DroneNetConfig, LayerDesc};
use super::layer::SelfOnnLayer;
use super::model::DroneNet;
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Scalar, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"SONN";
pub const MODEL_VERSION: u32 = 1;

const KIND_SELFONN: u32 = 0;
const KIND_FUSION: u32 = 1;
const NO_COLUMN: u32 = u32::MAX;

pub fn model_to_bytes<T: Scalar>(model: &DroneNet<T>) -> Vec<u8> {
    let layer_count = model.columns().iter().map(Vec::len).sum::<usize>() + 1;
    let mut out = Vec::with_capacity(12 + layer_count * 40 + 4 * model.param_count() + 4);
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    put_u32(&mut out, layer_count as u32);
    for (ci, (col, desc)) in model
        .columns()
        .iter()
        .zip(&model.config().columns)
        .enumerate()
    {
        for (layer, d) in col.iter().zip(&desc.layers) {
            put_layer(&mut out, KIND_SELFONN, ci as u32, d.pool_after, layer);
        }
    }
    put_layer(&mut out, KIND_FUSION, NO_COLUMN, false, model.fusion());
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

pub fn save_model<T: Scalar>(model: &DroneNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<DroneNet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes).map_err(|e| match e {
        Error::ModelFormat(msg) => Error::ModelFormat(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_layer<T: Scalar>(
    out: &mut Vec<u8>,
    kind: u32,
    column: u32,
    pool_after: bool,
    layer: &SelfOnnLayer<T>,
) {
    let s = layer.spec();
    for v in [
        kind,
        column,
        pool_after as u32,
        layer.q_max() as u32,
        s.kernel_h as u32,
        s.kernel_w as u32,
        s.padding as u32,
        s.stride as u32,
        s.in_channels as u32,
        s.out_channels as u32,
    ] {
        put_u32(out, v);
    }
    for t in layer.weights().iter().chain(std::iter::once(layer.bias())) {
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFormat(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn floats<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::ModelFormat(format!("{what}: size overflow")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect())
    }
}

struct Record<T> {
    kind: u32,
    column: u32,
    pool_after: bool,
    layer: SelfOnnLayer<T>,
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<DroneNet<T>> {
    let fmt = |m: String| Error::ModelFormat(m);
    if bytes.len() < 16 {
        return Err(fmt(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(fmt(format!(
            "bad magic {:?}, expected \"SONN\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([trailer[0], trailer[1], trailer[2], trailer[3]]);
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(fmt(format!(
            "checksum mismatch (stored {stored:#010x}, computed {actual:#010x}); file is corrupt or truncated"
        )));
    }

    let mut r = Reader {
        buf: payload,
        pos: 4,
    };
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let count = r.u32("layer count")? as usize;
    if count < 2 {
        return Err(fmt(format!("implausible layer count {count}")));
    }

    let mut records = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let what = |f: &str| format!("layer {i} {f}");
        let mut h = [0u32; 10];
        for v in h.iter_mut() {
            *v = r.u32(&what("header"))?;
        }
        let [kind, column, pool, q_max, kh, kw, padding, stride, c_in, c_out] = h;
        if kind != KIND_SELFONN && kind != KIND_FUSION {
            return Err(fmt(format!("layer {i}: unknown kind {kind}")));
        }
        if pool > 1 {
            return Err(fmt(format!("layer {i}: pool flag {pool}")));
        }
        let spec = ConvSpec::new(
            c_in as usize,
            c_out as usize,
            kh as usize,
            kw as usize,
            padding as usize,
            stride as usize,
        )
        .map_err(|e| fmt(format!("layer {i}: {e}")))?;
        if q_max == 0 {
            return Err(fmt(format!("layer {i}: q_max is zero")));
        }
        let bank = spec.weight_shape().len();
        let mut weights = Vec::with_capacity(q_max as usize);
        for q in 0..q_max {
            let data = r.floats::<T>(bank, &what(&format!("bank q={}", q + 1)))?;
            weights.push(Tensor::from_vec(spec.weight_shape(), data)?);
        }
        let bias = Tensor::from_vec(
            spec.bias_shape(),
            r.floats::<T>(spec.out_channels, &what("bias"))?,
        )?;
        records.push(Record {
            kind,
            column,
            pool_after: pool == 1,
            layer: SelfOnnLayer::from_parts(spec, weights, bias)?,
        });
    }
    if r.pos != payload.len() {
        return Err(fmt(format!(
            "{} trailing bytes after last layer",
            payload.len() - r.pos
        )));
    }

    let fusion = records.pop().expect("count >= 2");
    if fusion.kind != KIND_FUSION || records.iter().any(|r| r.kind != KIND_SELFONN) {
        return Err(fmt("the fusion layer must be the single last record".into()));
    }
    let mut columns: Vec<Vec<SelfOnnLayer<T>>> = Vec::new();
    let mut specs: Vec<ColumnSpec> = Vec::new();
    for rec in records {
        let ci = rec.column as usize;
        if ci == columns.len() {
            columns.push(Vec::new());
            specs.push(ColumnSpec { layers: Vec::new() });
        } else if ci + 1 != columns.len() {
            return Err(fmt(format!("column index {ci} out of order")));
        }
        let s = rec.layer.spec();
        if s.kernel_h != s.kernel_w {
            return Err(fmt(format!(
                "non-square kernel {}x{}",
                s.kernel_h, s.kernel_w
            )));
        }
        specs[ci].layers.push(LayerDesc::new(
            s.kernel_h,
            s.out_channels,
            rec.layer.q_max(),
            rec.pool_after,
        ));
        columns[ci].push(rec.layer);
    }
    let in_channels = columns
        .first()
        .and_then(|c| c.first())
        .map(|l| l.spec().in_channels)
        .ok_or_else(|| fmt("no column layers".into()))?;
    let config = DroneNetConfig {
        in_channels,
        columns: specs,
    };
    DroneNet::from_layers(config, columns, fusion.layer).map_err(|e| match e {
        Error::ModelFormat(m) => Error::ModelFormat(m),
        other => Error::ModelFormat(other.to_string()),
    })
}
