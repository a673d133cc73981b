//! Per-epoch record sources, with optional in-memory caching of JSONL files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::Result;

use super::jsonl;
use super::record::MaterialRecord;

/// Something the trainer can pull one epoch's worth of records from.
pub trait RecordSource: Send {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load_epoch(&mut self) -> Result<Arc<Vec<MaterialRecord>>>;
}

/// Records already held in memory.
#[derive(Clone, Debug)]
pub struct InMemory(pub Arc<Vec<MaterialRecord>>);

impl InMemory {
    pub fn new(records: Vec<MaterialRecord>) -> Self {
        Self(Arc::new(records))
    }
}

impl RecordSource for InMemory {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn load_epoch(&mut self) -> Result<Arc<Vec<MaterialRecord>>> {
        Ok(Arc::clone(&self.0))
    }
}

/// A JSONL file (optionally a subset of its records) read once per epoch,
/// or once in total when caching is on.
#[derive(Debug)]
pub struct JsonlDataset {
    path: PathBuf,
    selection: Option<Arc<[usize]>>,
    caching: bool,
    cached: Option<Arc<Vec<MaterialRecord>>>,
    parses: usize,
    len: usize,
}

/// Open `path` with caching enabled.
pub fn cache(path: impl AsRef<Path>) -> Result<JsonlDataset> {
    JsonlDataset::open(path, true)
}

impl JsonlDataset {
    pub fn open(path: impl AsRef<Path>, caching: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let len = jsonl::count_records(&path)?;
        Ok(Self {
            path,
            selection: None,
            caching,
            cached: None,
            parses: 0,
            len,
        })
    }

    /// Restrict to the given record indices (in that order).
    pub fn select(mut self, indices: Vec<usize>) -> Self {
        self.len = indices.len();
        self.selection = Some(indices.into());
        self.cached = None;
        self
    }

    /// How many times the file has been parsed.
    pub fn parse_count(&self) -> usize {
        self.parses
    }

    pub fn caching(&self) -> bool {
        self.caching
    }

    fn parse(&mut self) -> Result<Arc<Vec<MaterialRecord>>> {
        self.parses += 1;
        let all = jsonl::load_jsonl(&self.path)?;
        let records = match &self.selection {
            None => all,
            Some(sel) => sel.iter().map(|&i| all[i].clone()).collect(),
        };
        Ok(Arc::new(records))
    }
}

impl RecordSource for JsonlDataset {
    fn len(&self) -> usize {
        self.len
    }

    fn load_epoch(&mut self) -> Result<Arc<Vec<MaterialRecord>>> {
        if let Some(c) = &self.cached {
            return Ok(Arc::clone(c));
        }
        let records = self.parse()?;
        if self.caching {
            self.cached = Some(Arc::clone(&records));
        }
        Ok(records)
    }
}
