//! Evaluation manifests: JSONL, one `{"id": ..., "label": ...}` per line.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, WcaError};
use crate::text_prompt::LabelCatalog;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory image ids resolve against when pixels are needed.
    pub root: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.id.is_empty() {
                return Err(WcaError::domain("manifest record with empty id"));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(WcaError::domain(format!("duplicate image id {:?} in manifest", r.id)));
            }
        }
        Ok(DatasetManifest { records, root: None })
    }

    pub fn with_root(mut self, root: Option<PathBuf>) -> Self {
        self.root = root;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every true label must be a catalog class.
    pub fn check_labels(&self, catalog: &LabelCatalog) -> Result<()> {
        for r in &self.records {
            if catalog.index_of(&r.label).is_none() {
                return Err(WcaError::domain(format!(
                    "image {:?} has label {:?} which is not in the description catalog",
                    r.id, r.label
                )));
            }
        }
        Ok(())
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        match &self.root {
            Some(root) => root.join(id),
            None => PathBuf::from(id),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord = serde_json::from_str(line).map_err(|e| WcaError::Decode {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
            records.push(record);
        }
        Self::new(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| WcaError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| WcaError::io(path, e))?;
        f.write_all(&out).map_err(|e| WcaError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_jsonl_and_skips_blank_lines() {
        let text = "{\"id\": \"a\", \"label\": \"cat\"}\n\n{\"id\": \"b\", \"label\": \"dog\"}\n";
        let m = DatasetManifest::parse(text, Path::new("m.jsonl")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records[1].label, "dog");
    }

    #[test]
    fn bad_line_is_named() {
        let text = "{\"id\": \"a\", \"label\": \"cat\"}\nnot json\n";
        match DatasetManifest::parse(text, Path::new("m.jsonl")) {
            Err(WcaError::Decode { message, .. }) => assert!(message.starts_with("line 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\": \"a\", \"label\": \"cat\"}\n{\"id\": \"a\", \"label\": \"dog\"}\n";
        assert!(matches!(
            DatasetManifest::parse(text, Path::new("m.jsonl")),
            Err(WcaError::Domain(_))
        ));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = DatasetManifest::new(vec![ManifestRecord { id: "x/1.png".into(), label: "cat".into() }]).unwrap();
        m.write(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    }
}
