//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AADM" | u32 version | u32 len | config JSON | u64 adam step | u32 count
//! count x ( u32 name len | name | u32 ndim | ndim x u32 dim | f32 data )
//! ```
//!
//! Tensors are the parameters by name, their Adam moments as `adam.m.<name>`
//! and `adam.v.<name>`, and batch-norm running statistics as
//! `<layer>.running_mean` / `<layer>.running_var`.

use std::collections::HashMap;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::model::{build_model, Model, ModelConfig};
use super::NetError;

const MAGIC: &[u8; 4] = b"AADM";
const VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> NetError {
    NetError::CorruptCheckpoint(msg.into())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), NetError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(model.config()).map_err(|e| corrupt(e.to_string()))?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let adam = model.adam();
    out.extend_from_slice(&adam.step.to_le_bytes());
    let count = 3 * model.params().len() + 2 * model.buffers().len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (i, p) in model.params().iter().enumerate() {
        put_tensor(&mut out, &p.name, p.value.shape(), p.value.data());
        put_tensor(
            &mut out,
            &format!("adam.m.{}", p.name),
            p.value.shape(),
            &adam.m[i],
        );
        put_tensor(
            &mut out,
            &format!("adam.v.{}", p.name),
            p.value.shape(),
            &adam.v[i],
        );
    }
    for b in model.buffers() {
        put_tensor(
            &mut out,
            &format!("{}.running_mean", b.name),
            &[b.mean.len()],
            &b.mean,
        );
        put_tensor(
            &mut out,
            &format!("{}.running_var", b.name),
            &[b.var.len()],
            &b.var,
        );
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&out)?;
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, NetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
    };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let cfg: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| corrupt(e.to_string()))?;
    let mut model = build_model(&cfg, 0).map_err(|e| corrupt(e.to_string()))?;
    let step = r.u64()?;

    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?
            .to_owned();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt("tensor too large"))?;
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| corrupt("tensor too large"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.insert(name, (shape, data));
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }

    let mut fetch = |name: &str, shape: &[usize]| -> Result<Vec<f32>, NetError> {
        let (s, d) = tensors
            .remove(name)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if s != shape {
            return Err(corrupt(format!(
                "tensor {name} has shape {s:?}, expected {shape:?}"
            )));
        }
        Ok(d)
    };
    model.adam.step = step;
    for i in 0..model.params.len() {
        let name = model.params[i].name.clone();
        let shape = model.params[i].value.shape().to_vec();
        let value = fetch(&name, &shape)?;
        model.params[i].value.data_mut().copy_from_slice(&value);
        model.adam.m[i] = fetch(&format!("adam.m.{name}"), &shape)?;
        model.adam.v[i] = fetch(&format!("adam.v.{name}"), &shape)?;
    }
    for b in &mut model.buffers {
        let c = b.mean.len();
        b.mean = fetch(&format!("{}.running_mean", b.name), &[c])?;
        b.var = fetch(&format!("{}.running_var", b.name), &[c])?;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(corrupt(format!("unexpected tensor {extra}")));
    }
    Ok(model)
}
