//! On-disk snapshot format: magic, version, then a named tensor table.
//! Everything little-endian; payloads are raw 64-bit floats. The file is
//! read fully and validated before anything is handed back, so a corrupt
//! file can never produce a partial load.
//!
//! Layout:
//!   8  bytes  magic "FINPCKP1"
//!   4  bytes  u32 format version
//!   8  bytes  u64 entry count
//!   per entry:
//!     4 bytes  u32 name length, then the UTF-8 name
//!     4 bytes  u32 rank, then rank x u64 dims
//!     product(dims) x 8 bytes f64 data

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FINPCKP1";
const VERSION: u32 = 1;

/// A named table of shaped f64 buffers. BTreeMap keeps the on-disk entry
/// order deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub entries: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Snapshot {
    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.insert(name.to_string(), (shape.to_vec(), data));
    }

    pub fn get(&self, name: &str) -> Result<&(Vec<usize>, Vec<f64>)> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, (shape, data)) in &self.entries {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Snapshot> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let count = r.u64()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("non-UTF-8 entry name".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.insert(name, (shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after table".into()));
        }
        Ok(Snapshot { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Snapshot {
        let mut s = Snapshot::default();
        s.insert("a.weight", &[2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-300, f64::MAX]);
        s.insert("b", &[1], vec![42.0]);
        s.insert("empty-shape-scalarish", &[1, 1, 1], vec![-0.0]);
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.ckpt");
        let s = sample();
        s.save(&p).unwrap();
        let back = Snapshot::load(&p).unwrap();
        assert_eq!(s, back);
        // bit-level equality, not just float equality
        let (_, d) = back.get("a.weight").unwrap();
        assert_eq!(d[4].to_bits(), 1e-300_f64.to_bits());
    }

    #[test]
    fn corrupted_magic_is_a_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.ckpt");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&p, &bytes).unwrap();
        match Snapshot::load(&p) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.ckpt");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[8] = 99;
        std::fs::write(&p, &bytes).unwrap();
        match Snapshot::load(&p) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_rejected_with_no_partial_data() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.ckpt");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Snapshot::load(&p), Err(Error::Checkpoint(_))));
        // trailing garbage also rejected
        let mut padded = bytes.clone();
        padded.push(0);
        std::fs::write(&p, &padded).unwrap();
        assert!(matches!(Snapshot::load(&p), Err(Error::Checkpoint(_))));
    }
}
