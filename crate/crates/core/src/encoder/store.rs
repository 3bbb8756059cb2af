//! File-backed embedding store and the WEM1 binary format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0..4    b"WEM1"
//! 4..8    u32 dim
//! 8..12   u32 record count
//! 12      u8 normalized flag (0 or 1)
//! then per record:
//!         u16 id length L, L bytes UTF-8 id, dim x f32 values
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::encoder::{EncoderBackend, ImageInput, TextInput};
use crate::error::{FormatErrorKind, Result, WcaError};
use crate::math::Embedding;

pub const MAGIC: &[u8; 4] = b"WEM1";
pub const HEADER_LEN: usize = 13;

/// Norm tolerance enforced on stores carrying the normalized flag.
pub const STORE_NORM_TOL: f64 = 1e-3;

/// Immutable id -> vector mapping loaded eagerly from a WEM1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedStore {
    dim: usize,
    normalized: bool,
    entries: IndexMap<String, Vec<f32>>,
}

impl PrecomputedStore {
    pub fn new(dim: usize, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(WcaError::domain("store dimension must be at least 1"));
        }
        if dim > u32::MAX as usize {
            return Err(WcaError::domain("store dimension does not fit in u32"));
        }
        Ok(PrecomputedStore {
            dim,
            normalized,
            entries: IndexMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Ids in insertion (file) order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Number of consecutive crop entries `<image_id>::0`, `<image_id>::1`, ...
    pub fn patch_count(&self, image_id: &str) -> usize {
        (0..)
            .take_while(|i| self.entries.contains_key(&super::patch_key(image_id, *i)))
            .count()
    }

    pub fn raw(&self, id: &str) -> Option<&[f32]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// Adds a vector, narrowing to `f32`.
    pub fn insert(&mut self, id: impl Into<String>, values: &[f64]) -> Result<()> {
        let narrowed: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        self.insert_f32(id, narrowed)
    }

    pub fn insert_f32(&mut self, id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let id = id.into();
        if id.is_empty() {
            return Err(WcaError::domain("embedding id must be nonempty"));
        }
        if id.len() > u16::MAX as usize {
            return Err(WcaError::domain(format!(
                "embedding id of {} bytes exceeds the u16 length field",
                id.len()
            )));
        }
        if values.len() != self.dim {
            return Err(WcaError::Dimension {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(WcaError::domain(format!("embedding {id:?} has a non-finite value")));
        }
        if self.normalized && !within_unit(&values) {
            return Err(WcaError::domain(format!(
                "embedding {id:?} is not unit-norm but the store is flagged normalized"
            )));
        }
        if self.entries.contains_key(&id) {
            return Err(WcaError::domain(format!("duplicate embedding id {id:?}")));
        }
        self.entries.insert(id, values);
        Ok(())
    }

    /// Looks up `id`, widened to `f64`.
    pub fn lookup(&self, id: &str) -> Result<Embedding> {
        let raw = self
            .entries
            .get(id)
            .ok_or_else(|| WcaError::MissingEmbedding(id.to_string()))?;
        Embedding::from_f32(raw)
    }

    /// Copy of this store with every vector passed through `f`.
    /// The normalized flag is dropped.
    pub fn map_vectors(&self, mut f: impl FnMut(&str, &[f32]) -> Vec<f32>) -> Result<Self> {
        let mut out = PrecomputedStore::new(self.dim, false)?;
        for (id, v) in &self.entries {
            out.insert_f32(id.clone(), f(id, v))?;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .entries
            .keys()
            .map(|id| 2 + id.len() + 4 * self.dim)
            .sum();
        let mut out = Vec::with_capacity(HEADER_LEN + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.push(u8::from(self.normalized));
        for (id, values) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a WEM1 image. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        Parser { bytes, pos: 0, path }.parse()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| WcaError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Reads a store and requires its dimension to be `dim`.
    pub fn read_expecting_dim(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let store = Self::read(path)?;
        if store.dim != dim {
            return Err(WcaError::Format {
                path: path.to_path_buf(),
                offset: 4,
                kind: FormatErrorKind::DimMismatch,
                message: format!("file has dim {}, expected {dim}", store.dim),
            });
        }
        Ok(store)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| WcaError::io(path, e))
    }
}

fn within_unit(values: &[f32]) -> bool {
    let n = values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    (n - 1.0).abs() <= STORE_NORM_TOL
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Parser<'a> {
    fn fail(&self, offset: usize, kind: FormatErrorKind, message: impl Into<String>) -> WcaError {
        WcaError::Format {
            path: PathBuf::from(self.path),
            offset: offset as u64,
            kind,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, kind: FormatErrorKind, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let bytes: &'a [u8] = self.bytes;
                let slice = &bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(self.fail(
                self.pos,
                kind,
                format!(
                    "need {n} bytes for {what}, only {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u32_at(&mut self, kind: FormatErrorKind, what: &str) -> Result<u32> {
        let b = self.take(4, kind, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn parse(mut self) -> Result<PrecomputedStore> {
        use FormatErrorKind::*;

        let magic = self.take(4, TruncatedHeader, "magic")?;
        if magic != MAGIC {
            return Err(self.fail(0, BadMagic, format!("magic {magic:?} is not \"WEM1\"")));
        }
        let dim = self.u32_at(TruncatedHeader, "dim")? as usize;
        if dim == 0 {
            return Err(self.fail(4, ZeroDim, "dim must be at least 1"));
        }
        let count = self.u32_at(TruncatedHeader, "count")? as usize;
        let flag = self.take(1, TruncatedHeader, "normalized flag")?[0];
        let normalized = match flag {
            0 => false,
            1 => true,
            other => return Err(self.fail(12, BadNormalizedFlag, format!("flag byte {other}"))),
        };

        let mut entries = IndexMap::with_capacity(count.min(1 << 20));
        for record in 0..count {
            let start = self.pos;
            let len_bytes = self.take(2, TruncatedRecord, "id length")?;
            let id_len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
            if id_len == 0 {
                return Err(self.fail(start, EmptyId, format!("record {record} has an empty id")));
            }
            let id_bytes = self.take(id_len, TruncatedRecord, "id")?;
            let id = std::str::from_utf8(id_bytes)
                .map_err(|e| self.fail(start + 2, InvalidUtf8, format!("record {record}: {e}")))?
                .to_string();
            let value_start = self.pos;
            let raw = self.take(4 * dim, TruncatedRecord, "values")?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(self.fail(
                    value_start + 4 * i,
                    NonFinite,
                    format!("id {id:?} component {i} is not finite"),
                ));
            }
            if normalized && !within_unit(&values) {
                return Err(self.fail(
                    value_start,
                    NotNormalized,
                    format!("id {id:?} is not unit-norm in a normalized store"),
                ));
            }
            if entries.contains_key(&id) {
                return Err(self.fail(start, DuplicateId, format!("duplicate id {id:?}")));
            }
            entries.insert(id, values);
        }
        if self.pos != self.bytes.len() {
            return Err(self.fail(
                self.pos,
                TrailingBytes,
                format!("{} bytes after the last record", self.bytes.len() - self.pos),
            ));
        }
        Ok(PrecomputedStore {
            dim,
            normalized,
            entries,
        })
    }
}

impl EncoderBackend for PrecomputedStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_image(&self, input: ImageInput<'_>) -> Result<Embedding> {
        self.lookup(input.key)
    }

    fn encode_text(&self, input: TextInput<'_>) -> Result<Embedding> {
        self.lookup(input.key)
    }

    fn name(&self) -> &str {
        "precomputed"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PrecomputedStore {
        let mut s = PrecomputedStore::new(2, false).unwrap();
        s.insert("img_001", &[1.0, 2.0]).unwrap();
        s.insert("img_002", &[-0.5, 0.25]).unwrap();
        s
    }

    fn parse(bytes: &[u8]) -> Result<PrecomputedStore> {
        PrecomputedStore::from_bytes(bytes, Path::new("mem.wem1"))
    }

    fn kind_of(err: WcaError) -> FormatErrorKind {
        match err {
            WcaError::Format { kind, .. } => kind,
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn empty_store_is_header_only() {
        let s = PrecomputedStore::new(4, false).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 13);
        assert_eq!(parse(&bytes).unwrap(), s);
    }

    #[test]
    fn two_records_round_trip() {
        let s = sample();
        let bytes = s.to_bytes();
        // 13 header + 2 * (2 + 7 + 8)
        assert_eq!(bytes.len(), 13 + 2 * 17);
        let back = parse(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.ids().collect::<Vec<_>>(), ["img_001", "img_002"]);
    }

    #[test]
    fn lookup_present_and_absent() {
        let s = sample();
        assert_eq!(s.lookup("img_001").unwrap().as_slice(), &[1.0, 2.0]);
        match s.lookup("absent") {
            Err(WcaError::MissingEmbedding(id)) => assert_eq!(id, "absent"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(kind_of(parse(&bytes).unwrap_err()), FormatErrorKind::BadMagic);
    }

    #[test]
    fn duplicate_id_rejected_at_load() {
        let mut bytes = sample().to_bytes();
        // rename the second id to match the first
        let second = 13 + 17 + 2;
        bytes[second..second + 7].copy_from_slice(b"img_001");
        let err = parse(&bytes).unwrap_err();
        match err {
            WcaError::Format { kind, offset, .. } => {
                assert_eq!(kind, FormatErrorKind::DuplicateId);
                assert_eq!(offset, 30);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes();
        let err = parse(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            WcaError::Format { kind, offset, .. } => {
                assert_eq!(kind, FormatErrorKind::TruncatedRecord);
                assert_eq!(offset, (13 + 17 + 2 + 7) as u64);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn normalized_flag_enforced() {
        let mut s = PrecomputedStore::new(2, true).unwrap();
        assert!(s.insert("a", &[3.0, 4.0]).is_err());
        s.insert("a", &[0.6, 0.8]).unwrap();
        let mut bytes = sample().to_bytes();
        bytes[12] = 1;
        assert_eq!(kind_of(parse(&bytes).unwrap_err()), FormatErrorKind::NotNormalized);
    }

    #[test]
    fn expected_dim_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wem1");
        sample().write(&path).unwrap();
        assert!(PrecomputedStore::read_expecting_dim(&path, 2).is_ok());
        assert_eq!(
            kind_of(PrecomputedStore::read_expecting_dim(&path, 3).unwrap_err()),
            FormatErrorKind::DimMismatch
        );
    }

    #[test]
    fn insert_validation() {
        let mut s = sample();
        assert!(matches!(s.insert("img_001", &[0.0, 0.0]), Err(WcaError::Domain(_))));
        assert!(matches!(s.insert("x", &[0.0]), Err(WcaError::Dimension { .. })));
        assert!(s.insert("", &[0.0, 0.0]).is_err());
        assert!(PrecomputedStore::new(0, false).is_err());
    }
}
