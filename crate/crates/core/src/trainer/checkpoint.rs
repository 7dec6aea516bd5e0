//! Binary parameter dump: magic, version, config hash, then every named
//! parameter as `(name, rows, cols, f32 values)`, all little-endian.

use std::fs;
use std::path::Path;

use super::UmcNetwork;
use crate::error::{Result, UmcError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint(path: &Path, net: &UmcNetwork, config_hash: &[u8; 32]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(config_hash);
    let mut params = Vec::new();
    net.visit_params(&mut |n, p| params.push((n.to_owned(), p.value.clone())));
    put_u32(&mut out, params.len() as u32);
    for (name, value) in params {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, value.rows() as u32);
        put_u32(&mut out, value.cols() as u32);
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| UmcError::BadContainer("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Overwrite `net`'s parameters from `path`; returns the stored config hash.
/// Names and shapes must match the network exactly.
pub fn load_checkpoint(path: &Path, net: &mut UmcNetwork) -> Result<[u8; 32]> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(UmcError::BadContainer("not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(UmcError::BadContainer(format!(
            "checkpoint version {version}"
        )));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let count = r.u32()? as usize;
    let mut stored = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| UmcError::BadContainer("parameter name is not UTF-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        stored.push((name, rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(UmcError::BadContainer(
            "trailing bytes in checkpoint".into(),
        ));
    }
    let mut expected = 0;
    net.visit_params(&mut |_, _| expected += 1);
    if expected != count {
        return Err(UmcError::CountMismatch {
            what: "checkpoint parameters".into(),
            expected,
            got: count,
        });
    }
    let mut it = stored.into_iter();
    let mut err = None;
    net.visit_params_mut(&mut |n, p| {
        let (name, rows, cols, data) = it.next().expect("count checked");
        if err.is_some() {
            return;
        }
        if name != n || (rows, cols) != p.value.shape() {
            err = Some(UmcError::BadContainer(format!(
                "checkpoint entry {name} does not match {n}"
            )));
            return;
        }
        p.value.data_mut().copy_from_slice(&data);
    });
    match err {
        Some(e) => Err(e),
        None => Ok(hash),
    }
}
