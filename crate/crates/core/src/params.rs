//! Named parameter storage and the shared checkpoint format.
//!
//! All trainable weights live in one flat `f64` buffer. Modules allocate
//! named arrays at construction and keep [`ParamId`] handles; gradients and
//! optimizer state are parallel buffers with the same layout. Checkpoints are
//! a single file: a manifest of (name, shape, offset) entries followed by the
//! payload as 64-bit little-endian floats.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CDZW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the flat buffer, in elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    data: Vec<f64>,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate a zero-initialized named array. Names must be unique.
    pub fn alloc(&mut self, name: &str, shape: &[usize]) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "parameter `{}` allocated twice",
            name
        );
        let len: usize = shape.iter().product();
        let offset = self.data.len();
        self.data.resize(offset + len, 0.0);
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .map(ParamId)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn view(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.len]
    }

    pub fn view_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        &mut self.data[e.offset..e.offset + e.len]
    }

    /// Total element count across all arrays.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Element ranges of every entry whose name starts with `prefix`.
    pub fn ranges_with_prefix(&self, prefix: &str) -> Vec<std::ops::Range<usize>> {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.offset..e.offset + e.len)
            .collect()
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(64 + self.data.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            buf.extend_from_slice(&(e.offset as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for &x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Checkpoint("truncated file".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", version)));
        }
        let n_entries = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(n_entries);
        let mut index = HashMap::new();
        for i in 0..n_entries {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("non-utf8 name".into()))?;
            let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
            }
            let offset = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            let len = shape.iter().product();
            index.insert(name.clone(), i);
            entries.push(ParamEntry { name, shape, offset, len });
        }
        let payload_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let mut data = Vec::with_capacity(payload_len);
        for _ in 0..payload_len {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        for e in &entries {
            if e.offset + e.len > data.len() {
                return Err(Error::Checkpoint(format!("entry `{}` outside payload", e.name)));
            }
        }
        Ok(ParamStore { data, entries, index })
    }
}

/// Flat gradient (or optimizer-state) buffer matching a store's layout.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    data: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuffer { data: vec![0.0; store.len()] }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn view(&self, store: &ParamStore, id: ParamId) -> &[f64] {
        let e = store.entry(id);
        &self.data[e.offset..e.offset + e.len]
    }

    pub fn view_mut(&mut self, store: &ParamStore, id: ParamId) -> &mut [f64] {
        let e = store.entry(id);
        &mut self.data[e.offset..e.offset + e.len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut store = ParamStore::new();
        let a = store.alloc("backbone.wq", &[3, 4]);
        let b = store.alloc("refiner.head1", &[2]);
        for (i, x) in store.view_mut(a).iter_mut().enumerate() {
            *x = (i as f64) * 0.25 - 1.0;
        }
        store.view_mut(b).copy_from_slice(&[f64::MIN_POSITIVE, -0.0]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        store.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();

        assert_eq!(loaded.len(), store.len());
        let a2 = loaded.id("backbone.wq").unwrap();
        assert_eq!(loaded.entry(a2).shape, vec![3, 4]);
        assert_eq!(
            loaded.view(a2).iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            store.view(a).iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn prefix_ranges_select_groups() {
        let mut store = ParamStore::new();
        store.alloc("backbone.a", &[2]);
        store.alloc("refiner.b", &[3]);
        store.alloc("backbone.c", &[1]);
        let ranges = store.ranges_with_prefix("backbone.");
        let total: usize = ranges.iter().map(|r| r.len()).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(ParamStore::load(&path).is_err());
    }
}
