//! Versioned binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "ENVRBCKP"
//! version    u32
//! arch       channels, width, height, n_hidden (u32), hidden widths (u32 each),
//!            activation, head, shared_trunk (u8 each)
//! weights    n (u64), then n f32 values
//! metadata   seed (u64), steps (u64), algo (u32 length + utf-8),
//!            parent (u8 flag, then u32 length + utf-8)
//! checksum   SHA-256 of everything above
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Activation, ArchSpec, CheckpointMeta, HeadKind, PolicyParams};

const MAGIC: &[u8; 8] = b"ENVRBCKP";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    Magic,
    #[error("unsupported checkpoint version {0}, expected {VERSION}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Corrupt("invalid utf-8".into()))
    }
}

pub fn write_checkpoint(params: &PolicyParams<f32>, mut out: impl Write) -> Result<(), CheckpointError> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let arch = params.arch();
    w.u32(arch.channels as u32);
    w.u32(arch.width as u32);
    w.u32(arch.height as u32);
    w.u32(arch.hidden.len() as u32);
    for &h in &arch.hidden {
        w.u32(h as u32);
    }
    w.u8(match arch.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
    });
    w.u8(match arch.head {
        HeadKind::Joint => 0,
        HeadKind::Factorized => 1,
    });
    w.u8(arch.shared_trunk as u8);
    w.u64(params.values().len() as u64);
    for v in params.values() {
        w.0.extend_from_slice(&v.to_le_bytes());
    }
    w.u64(params.meta.seed);
    w.u64(params.meta.steps);
    w.str(&params.meta.algo);
    match &params.meta.parent {
        Some(p) => {
            w.u8(1);
            w.str(p);
        }
        None => w.u8(0),
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    out.write_all(&w.0)?;
    Ok(())
}

pub fn read_checkpoint(mut input: impl Read) -> Result<PolicyParams<f32>, CheckpointError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let mut r = Reader { buf: &buf, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    if buf.len() < 32 + r.pos {
        return Err(CheckpointError::Corrupt("file too short".into()));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: r.pos };

    let channels = r.u32()? as usize;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let hidden = (0..n_hidden).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>, _>>()?;
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        x => return Err(CheckpointError::Corrupt(format!("unknown activation tag {x}"))),
    };
    let head = match r.u8()? {
        0 => HeadKind::Joint,
        1 => HeadKind::Factorized,
        x => return Err(CheckpointError::Corrupt(format!("unknown head tag {x}"))),
    };
    let shared_trunk = r.u8()? != 0;
    let arch = ArchSpec { channels, width, height, hidden, activation, head, shared_trunk };

    let n = r.u64()? as usize;
    let raw = r.take(n.checked_mul(4).ok_or_else(|| CheckpointError::Corrupt("weight count overflow".into()))?)?;
    let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();

    let seed = r.u64()?;
    let steps = r.u64()?;
    let algo = r.str()?;
    let parent = match r.u8()? {
        0 => None,
        _ => Some(r.str()?),
    };
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    let meta = CheckpointMeta { seed, steps, algo, parent };
    PolicyParams::from_values(arch, values, meta).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

pub fn save_checkpoint(params: &PolicyParams<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PolicyParams<f32>, CheckpointError> {
    read_checkpoint(std::fs::File::open(path)?)
}
