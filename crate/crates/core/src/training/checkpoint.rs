//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "WIPU"  u16 version
//! u32 len, spec line (utf-8)
//! u64 step
//! u32 count, then per parameter:
//!     u32 len, name (utf-8); 4 × u32 shape; numel × f32
//! u64 CRC-64/XZ of every preceding byte
//! ```

use std::path::Path;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::models::{build, Model, ModelSpec};

pub const MAGIC: &[u8; 4] = b"WIPU";
pub const VERSION: u16 = 1;

const CRC: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);

/// A decoded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub step: u64,
    pub params: ParamStore,
}

impl Checkpoint {
    /// Instantiates the model the checkpoint was taken from.
    pub fn into_model(self) -> Result<Model> {
        let mut model = build(&self.spec)?;
        install(&mut model, &self.params)?;
        Ok(model)
    }
}

fn install(model: &mut Model, params: &ParamStore) -> Result<()> {
    if model.params().len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors in file, model has {}",
            params.len(),
            model.params().len()
        )));
    }
    for (dst, src) in model.params_mut().iter_mut().zip(params.iter()) {
        if dst.name != src.name || dst.value.shape() != src.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match model tensor `{}` {:?}",
                src.name,
                src.value.shape(),
                dst.name,
                dst.value.shape()
            )));
        }
        dst.value = src.value.clone();
    }
    Ok(())
}

pub fn encode(model: &Model, step: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let line = model.spec().to_line();
    out.extend_from_slice(&(line.len() as u32).to_le_bytes());
    out.extend_from_slice(line.as_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        for d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = CRC.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

/// Verifies the checksum before reading anything else, so a damaged file
/// never yields a partial model.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 2 + 8 {
        return Err(Error::Checkpoint("checksum mismatch (file too short)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if CRC.checksum(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }
    let spec = ModelSpec::from_line(&r.string()?)?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::default();
    for _ in 0..count {
        let name = r.string()?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        params.push(name, Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { spec, step, params })
}

pub fn save_checkpoint(model: &Model, step: u64, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode(model, step))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads parameters into an existing model; the file's spec must match.
pub fn load_into(model: &mut Model, path: &Path) -> Result<u64> {
    let ck = load_checkpoint(path)?;
    if ck.spec != *model.spec() {
        return Err(Error::Checkpoint(format!(
            "spec mismatch: file has `{}`, model is `{}`",
            ck.spec.to_line(),
            model.spec().to_line()
        )));
    }
    install(model, &ck.params)?;
    Ok(ck.step)
}
