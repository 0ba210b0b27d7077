//! Binary checkpoint: `CJTV`, a `u16` version, then records of
//! `(name_len: u16, name, rank: u8, dims: u32 x rank, f32 payload)`, all
//! little-endian, closed by the CRC32 of every preceding byte.
//!
//! Parameters come first in registration order, then the Adam state as
//! `adam.m/<name>`, `adam.v/<name>` and `adam.t/<name>`, then integer
//! metadata as `meta/<key>`. Integers are stored as four 16-bit chunks,
//! which are exact in `f32`.

use std::path::Path;

use super::{NnError, ParamStore, Result, Tensor};

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"CJTV";
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";
const STEPS: &str = "adam.t/";
const META: &str = "meta/";

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn u64_chunks(v: u64) -> [f32; 4] {
    std::array::from_fn(|i| ((v >> (16 * i)) & 0xffff) as f32)
}

fn chunks_u64(d: &[f32]) -> Result<u64> {
    if d.len() != 4 {
        return Err(NnError::Checkpoint(
            "metadata record must hold 4 values".into(),
        ));
    }
    let mut v = 0u64;
    for (i, &x) in d.iter().enumerate() {
        if !(0.0..65536.0).contains(&x) || x.fract() != 0.0 {
            return Err(NnError::Checkpoint("bad metadata chunk".into()));
        }
        v |= (x as u64) << (16 * i);
    }
    Ok(v)
}

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (id, name) in store.names().iter().enumerate() {
        let t = store.tensor(id);
        put_record(&mut out, name, t.shape(), t.data());
    }
    for (id, name) in store.names().iter().enumerate() {
        let (m, v) = store.moments(id);
        let shape = store.tensor(id).shape();
        put_record(&mut out, &format!("{MOMENT1}{name}"), shape, m);
        put_record(&mut out, &format!("{MOMENT2}{name}"), shape, v);
        put_record(
            &mut out,
            &format!("{STEPS}{name}"),
            &[4],
            &u64_chunks(store.adam_steps(id)),
        );
    }
    for (k, &v) in store.meta_entries() {
        put_record(&mut out, &format!("{META}{k}"), &[4], &u64_chunks(v));
    }
    let crc = crc32fast::hash(&out);
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
        let end = end.ok_or_else(|| NnError::Checkpoint("truncated record".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(NnError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != crc {
        return Err(NnError::Checkpoint("CRC mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut store = ParamStore::new();
    while r.pos < body.len() {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| NnError::Checkpoint("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(p) = name.strip_prefix(MOMENT1) {
            let (id, data) = (store.id(p)?, checked(&store, p, &data)?);
            store.moments_mut(id).0.copy_from_slice(&data);
        } else if let Some(p) = name.strip_prefix(MOMENT2) {
            let (id, data) = (store.id(p)?, checked(&store, p, &data)?);
            store.moments_mut(id).1.copy_from_slice(&data);
        } else if let Some(p) = name.strip_prefix(STEPS) {
            let id = store.id(p)?;
            store.set_adam_steps(id, chunks_u64(&data)?);
        } else if let Some(k) = name.strip_prefix(META) {
            store.set_meta(k, chunks_u64(&data)?);
        } else {
            store.insert(&name, Tensor::new(shape, data)?)?;
        }
    }
    Ok(store)
}

fn checked(store: &ParamStore, name: &str, data: &[f32]) -> Result<Vec<f32>> {
    let want = store.get(name)?.len();
    if want != data.len() {
        return Err(NnError::Checkpoint(format!(
            "moment size mismatch for `{name}`"
        )));
    }
    Ok(data.to_vec())
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> std::io::Result<()> {
    // write-then-rename keeps the previous file intact on failure
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(store))?;
    std::fs::rename(tmp, path)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes =
        std::fs::read(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
