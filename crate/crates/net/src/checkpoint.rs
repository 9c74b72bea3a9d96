//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    8 bytes  "PSTYLNET"
//! version  u32      1
//! config   alpha f64, embed_dim u32, dropout f64, channels 4×u32,
//!          fc_hidden u32, bn_momentum f64, bn_eps f64
//! count    u32      number of tensors
//! tensor   name_len u16, name utf-8, ndim u8, dims ndim×u32, data f32×prod(dims)
//! ```
//!
//! Tensors come in [`Model::params`] order followed by [`Model::buffers`].
//! A text manifest written next to the file records training metadata.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::branch::Branch;
use crate::model::Model;
use crate::{NetConfig, NetError};

pub const MAGIC: &[u8; 8] = b"PSTYLNET";
pub const VERSION: u32 = 1;

fn branch_dims(b: &Branch<f32>) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for (c, bn) in b.convs.iter().zip(&b.bns) {
        let s = c.spec;
        out.push(vec![s.cout, s.cin, s.kh, s.kw]);
        out.push(vec![s.cout]);
        out.push(vec![bn.channels()]);
        out.push(vec![bn.channels()]);
    }
    out.push(vec![b.fc1.fan_out, b.fc1.fan_in]);
    out.push(vec![b.fc1.fan_out]);
    out.push(vec![b.fc1.fan_out]);
    out.push(vec![b.fc1.fan_out]);
    out.push(vec![b.fc2.fan_out, b.fc2.fan_in]);
    out.push(vec![b.fc2.fan_out]);
    out
}

fn buffer_dims(b: &Branch<f32>) -> Vec<Vec<usize>> {
    b.bns.iter().flat_map(|bn| [vec![bn.channels()], vec![bn.channels()]]).collect()
}

fn all_dims(m: &Model<f32>) -> Vec<Vec<usize>> {
    let mut d = branch_dims(&m.loc);
    d.extend(branch_dims(&m.dir));
    d.extend(buffer_dims(&m.loc));
    d.extend(buffer_dims(&m.dir));
    d
}

fn names(m: &Model<f32>) -> Vec<String> {
    m.params().into_iter().chain(m.buffers()).map(|(n, _)| n).collect()
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model<f32>) -> Result<(), NetError> {
    let c = &model.config;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&c.alpha.to_le_bytes())?;
    w.write_all(&(c.embed_dim as u32).to_le_bytes())?;
    w.write_all(&c.dropout.to_le_bytes())?;
    for ch in c.channels {
        w.write_all(&(ch as u32).to_le_bytes())?;
    }
    w.write_all(&(c.fc_hidden as u32).to_le_bytes())?;
    w.write_all(&c.bn_momentum.to_le_bytes())?;
    w.write_all(&c.bn_eps.to_le_bytes())?;
    let tensors: Vec<(String, &[f32])> = model.params().into_iter().chain(model.buffers()).collect();
    let dims = all_dims(model);
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for ((name, data), d) in tensors.iter().zip(&dims) {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[d.len() as u8])?;
        for v in d {
            w.write_all(&(*v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], NetError> {
        let mut b = [0u8; N];
        self.r
            .read_exact(&mut b)
            .map_err(|e| NetError::Checkpoint(format!("truncated: {e}")))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Model<f32>, NetError> {
    let mut rd = Reader { r };
    if &rd.bytes::<8>()? != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let alpha = rd.f64()?;
    let embed_dim = rd.u32()? as usize;
    let dropout = rd.f64()?;
    let mut channels = [0usize; 4];
    for ch in &mut channels {
        *ch = rd.u32()? as usize;
    }
    let config = NetConfig {
        alpha,
        embed_dim,
        dropout,
        channels,
        fc_hidden: rd.u32()? as usize,
        bn_momentum: rd.f64()?,
        bn_eps: rd.f64()?,
    };
    config.validate().map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let mut model = Model::<f32>::zeros(config);
    let want_names = names(&model);
    let want_dims = all_dims(&model);
    let count = rd.u32()? as usize;
    if count != want_names.len() {
        return Err(NetError::Checkpoint(format!("expected {} tensors, found {count}", want_names.len())));
    }
    let mut data = Vec::with_capacity(count);
    for (wn, wd) in want_names.iter().zip(&want_dims) {
        let len = u16::from_le_bytes(rd.bytes()?) as usize;
        let mut name = vec![0u8; len];
        rd.r.read_exact(&mut name).map_err(|e| NetError::Checkpoint(format!("truncated: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| NetError::Checkpoint("tensor name is not utf-8".into()))?;
        if &name != wn {
            return Err(NetError::Checkpoint(format!("expected tensor {wn}, found {name}")));
        }
        let ndim = rd.bytes::<1>()?[0] as usize;
        let dims: Vec<usize> = (0..ndim).map(|_| rd.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
        if &dims != wd {
            return Err(NetError::Checkpoint(format!("tensor {name}: shape {dims:?}, expected {wd:?}")));
        }
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        rd.r.read_exact(&mut raw).map_err(|e| NetError::Checkpoint(format!("truncated: {e}")))?;
        data.push(raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect::<Vec<f32>>());
    }
    let mut rest = [0u8; 1];
    if rd.r.read(&mut rest)? != 0 {
        return Err(NetError::Checkpoint("trailing bytes".into()));
    }
    let n_params = model.params().len();
    let mut data = data.into_iter();
    for (slot, d) in model.params_mut().into_iter().zip(data.by_ref().take(n_params)) {
        *slot = d;
    }
    for (slot, d) in model.buffers_mut().into_iter().zip(data) {
        *slot = d;
    }
    Ok(model)
}

/// `key = value` lines, sorted by key.
pub fn write_manifest<W: Write>(mut w: W, model: &Model<f32>, meta: &BTreeMap<String, String>) -> Result<(), NetError> {
    let mut all = meta.clone();
    all.insert("format".into(), format!("{} v{VERSION}", String::from_utf8_lossy(MAGIC)));
    all.insert("parameters".into(), model.param_count().to_string());
    all.insert("embedding_dim".into(), model.embed_dim().to_string());
    all.insert("alpha".into(), model.config.alpha.to_string());
    all.insert("dropout".into(), model.config.dropout.to_string());
    for (k, v) in &all {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}
