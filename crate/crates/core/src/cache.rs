//! Distance-matrix reuse across sweeps and ensembles.
//!
//! Matrices are keyed by (dataset hash, C, T_dur, min_points). The on-disk
//! form is a little-endian binary blob:
//!
//! ```text
//! magic  "PHIDDM01"
//! key    u32 length + utf-8
//! n      u64
//! ids    n x (u32 length + utf-8)
//! pairs  n(n-1)/2 x (pcc f64 [NaN = undefined], total_points u64, flags u8)
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::correlation::{pairwise_distance_matrix, DistanceMatrix, PairMeta};
use crate::error::{Error, Result};
use crate::ingest::FeederDataset;
use crate::segmentation::SegmentParams;

const MAGIC: &[u8; 8] = b"PHIDDM01";

fn cache_key(dataset_hash: &str, p: &SegmentParams) -> String {
    format!(
        "{dataset_hash}:{:016x}:{:016x}:{}:{}",
        p.c_threshold.to_bits(),
        p.t_dur_hours.to_bits(),
        p.delta_t_minutes,
        p.min_points
    )
}

pub fn encode(dm: &DistanceMatrix, key: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let put_str = |out: &mut Vec<u8>, s: &str| {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    };
    put_str(&mut out, key);
    out.extend_from_slice(&(dm.n() as u64).to_le_bytes());
    for id in dm.ids() {
        put_str(&mut out, id);
    }
    for (p, m) in dm.condensed() {
        out.extend_from_slice(&p.unwrap_or(f64::NAN).to_le_bytes());
        out.extend_from_slice(&(m.total_points as u64).to_le_bytes());
        out.push(m.fallback_used as u8 | (m.degenerate as u8) << 1);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Input("truncated distance cache".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Input("distance cache holds invalid utf-8".into()))
    }
}

/// Decodes a cached matrix, returning it with its stored key.
pub fn decode(bytes: &[u8]) -> Result<(DistanceMatrix, String)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Input("not a distance cache file".into()));
    }
    let key = c.string()?;
    let n = c.u64()? as usize;
    let ids = (0..n).map(|_| c.string()).collect::<Result<Vec<_>>>()?;
    let n_pairs = n * n.saturating_sub(1) / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let p = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        let total_points = c.u64()? as usize;
        let flags = c.take(1)?[0];
        let pcc = if p.is_nan() { None } else { Some(p) };
        pairs.push((
            pcc,
            PairMeta {
                total_points,
                fallback_used: flags & 1 != 0,
                degenerate: flags & 2 != 0,
            },
        ));
    }
    if c.pos != bytes.len() {
        return Err(Error::Input("trailing bytes in distance cache".into()));
    }
    Ok((DistanceMatrix::from_pairs(ids, pairs)?, key))
}

/// In-memory memo, optionally backed by a directory of binary files.
#[derive(Debug, Default)]
pub struct DistanceCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, Arc<DistanceMatrix>>>,
}

impl DistanceCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir: Some(dir),
            mem: Mutex::default(),
        })
    }

    fn file_for(&self, key: &str) -> Option<PathBuf> {
        let digest = hex::encode(Sha256::digest(key.as_bytes()));
        self.dir.as_ref().map(|d| d.join(format!("dm-{}.bin", &digest[..32])))
    }

    pub fn get_or_compute(
        &self,
        ds: &FeederDataset,
        dataset_hash: &str,
        p: &SegmentParams,
    ) -> Result<Arc<DistanceMatrix>> {
        let key = cache_key(dataset_hash, p);
        if let Some(dm) = self.mem.lock().unwrap().get(&key) {
            return Ok(Arc::clone(dm));
        }
        let file = self.file_for(&key);
        if let Some(path) = &file {
            if let Ok(bytes) = fs::read(path) {
                match decode(&bytes) {
                    Ok((dm, stored)) if stored == key => {
                        let dm = Arc::new(dm);
                        self.mem.lock().unwrap().insert(key, Arc::clone(&dm));
                        return Ok(dm);
                    }
                    _ => log::warn!("ignoring stale cache file {}", path.display()),
                }
            }
        }
        let dm = Arc::new(pairwise_distance_matrix(ds, p)?);
        if let Some(path) = &file {
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, encode(&dm, &key))
                .and_then(|_| fs::rename(&tmp, path))
                .map_err(|e| Error::io(path, e))?;
        }
        self.mem.lock().unwrap().insert(key, Arc::clone(&dm));
        Ok(dm)
    }
}
