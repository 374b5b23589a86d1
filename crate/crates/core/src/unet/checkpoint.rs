//! Versioned binary checkpoint container: magic, config block, little-endian
//! float32 parameter and optimizer blobs, CRC32 trailer.

use super::adam::Moments;
use super::layers::Conv;
use super::{TrainState, UNetConfig};
use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"CLSTCKPT";
const VERSION: u32 = 1;

/// A trained model snapshot: parameters, optimizer state, provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState<f32>,
    /// Digest of the synthesis config the model was trained with.
    pub synth_digest: u64,
    pub epoch: u32,
    pub val_score: f64,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32_slice(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::BadCheckpoint(format!(
                "{}: truncated at offset {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = flate2::Crc::new();
    crc.update(bytes);
    crc.sum()
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let cfg = &ckpt.state.config;
    let mut w = Writer { buf: Vec::new() };
    w.u32(VERSION);
    w.u32(cfg.levels as u32);
    w.u32(cfg.base_features as u32);
    w.u32(cfg.class_codes.len() as u32);
    for &c in &cfg.class_codes {
        w.u32(c);
    }
    w.u32(cfg.claustrum_code);
    w.u64(cfg.seed);
    w.u64(ckpt.synth_digest);
    w.u32(ckpt.epoch);
    w.f64(ckpt.val_score);
    w.u64(ckpt.state.step);
    w.u32(ckpt.state.epoch);
    w.u32(ckpt.state.convs.len() as u32);
    for (conv, (mw, mb)) in ckpt.state.convs.iter().zip(&ckpt.state.moments) {
        w.u32(conv.cout as u32);
        w.u32(conv.cin as u32);
        w.u32(conv.k as u32);
        w.f32_slice(&conv.weights);
        w.f32_slice(&conv.bias);
        w.f32_slice(&mw.m);
        w.f32_slice(&mw.v);
        w.f32_slice(&mb.m);
        w.f32_slice(&mb.v);
    }
    let crc = crc32(&w.buf);
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    file.write_all(&w.buf).map_err(|e| Error::io(path, e))?;
    file.write_all(&crc.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::BadCheckpoint(format!("{}: too short", path.display())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadCheckpoint(format!("{}: bad magic", path.display())));
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual_crc = crc32(body);
    if stored_crc != actual_crc {
        return Err(Error::BadCheckpoint(format!(
            "{}: CRC mismatch (stored {stored_crc:08x}, computed {actual_crc:08x})",
            path.display()
        )));
    }
    let mut r = Reader { buf: body, pos: 0, path };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let levels = r.u32()? as usize;
    let base_features = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    let mut class_codes = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        class_codes.push(r.u32()?);
    }
    let claustrum_code = r.u32()?;
    let seed = r.u64()?;
    let config = UNetConfig { levels, base_features, class_codes, claustrum_code, seed };
    config.validate().map_err(|e| Error::BadCheckpoint(format!("{}: {e}", path.display())))?;
    let synth_digest = r.u64()?;
    let epoch = r.u32()?;
    let val_score = r.f64()?;
    let step = r.u64()?;
    let state_epoch = r.u32()?;
    let n_convs = r.u32()? as usize;
    if n_convs != config.layer_specs().len() {
        return Err(Error::BadCheckpoint(format!(
            "{}: layer count {n_convs} does not match config",
            path.display()
        )));
    }
    let mut convs = Vec::with_capacity(n_convs);
    let mut moments = Vec::with_capacity(n_convs);
    for (cout_spec, cin_spec, k_spec) in config.layer_specs() {
        let cout = r.u32()? as usize;
        let cin = r.u32()? as usize;
        let k = r.u32()? as usize;
        if (cout, cin, k) != (cout_spec, cin_spec, k_spec) {
            return Err(Error::BadCheckpoint(format!(
                "{}: layer shape ({cout},{cin},{k}) does not match config ({cout_spec},{cin_spec},{k_spec})",
                path.display()
            )));
        }
        let nw = cout * cin * k * k * k;
        let conv = Conv { cout, cin, k, weights: r.f32_vec(nw)?, bias: r.f32_vec(cout)? };
        let mw = Moments { m: r.f32_vec(nw)?, v: r.f32_vec(nw)? };
        let mb = Moments { m: r.f32_vec(cout)?, v: r.f32_vec(cout)? };
        convs.push(conv);
        moments.push((mw, mb));
    }
    if r.pos != body.len() {
        return Err(Error::BadCheckpoint(format!(
            "{}: {} trailing bytes",
            path.display(),
            body.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        state: TrainState { config, convs, moments, step, epoch: state_epoch },
        synth_digest,
        epoch,
        val_score,
    })
}
