// Copyright 2026 The Unimart Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Directory-per-table storage of immutable segments.
//!
//! Layout: `<root>/<table>/<batch_id>.seg`. A segment holds comma-separated
//! rows in the table's stored column order, LF terminated, no header.
//! Loading a batch moves a fully written staged file into the table
//! directory, so a commit costs the same whatever the batch size. Readers
//! only ever see whole segments.
//!
//! Duplicates are tolerated at rest. Scans with [`Dedupe::On`] keep, for
//! every natural key, the row from the most recent batch (the last such row
//! within that batch).

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::schema::WarehouseSchema;

/// Staging area for files awaiting commit. Lives under the root so that a
/// commit never crosses file systems.
pub const STAGING_DIR: &str = "_staging";
const SEGMENT_EXT: &str = "seg";
const LOCK_FILE: &str = ".lock";
const NEXT_BATCH_FILE: &str = ".next_batch";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("invalid table name `{0}`")]
    InvalidTableName(String),
    #[error("table `{table}` has no batch {batch_id}")]
    UnknownBatch { table: String, batch_id: u64 },
    #[error("table `{0}` has no natural key to deduplicate on")]
    NoNaturalKey(String),
    #[error("unreadable segment {}: {source}", path.display())]
    UnreadableSegment { path: PathBuf, source: io::Error },
    #[error("commit of {} into `{table}` aborted: {source}", staged.display())]
    CommitFailed {
        table: String,
        staged: PathBuf,
        source: io::Error,
    },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> StoreError {
    let context = context.into();
    move |source| StoreError::Io { context, source }
}

/// One stored row. `line` is the 1-based row position within its segment
/// (or within the source upload, for records produced by extraction).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Record {
    pub line: u64,
    pub fields: Vec<String>,
}

impl Record {
    pub fn new(line: u64, fields: Vec<String>) -> Self {
        Record { line, fields }
    }

    pub fn field(&self, i: usize) -> &str {
        &self.fields[i]
    }

    /// Internal text form, without the trailing newline.
    pub fn to_line(&self) -> String {
        self.fields.join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dedupe {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub table: String,
    pub batch_id: u64,
    pub path: PathBuf,
    pub row_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableState {
    pub table: String,
    pub segments: Vec<Segment>,
}

impl TableState {
    pub fn row_count(&self) -> u64 {
        self.segments.iter().map(|s| s.row_count).sum()
    }

    pub fn latest(&self) -> Option<&Segment> {
        self.segments.last()
    }
}

/// A fully written file waiting to become a segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedFile {
    pub path: PathBuf,
    pub row_count: u64,
}

impl StagedFile {
    /// Wraps an existing file, counting its rows.
    pub fn from_path(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let row_count = count_rows(&fs::read(&path)?);
        Ok(StagedFile { path, row_count })
    }
}

/// Counts LF-terminated rows, plus a final unterminated one.
pub fn count_rows(bytes: &[u8]) -> u64 {
    let n = memchr::memchr_iter(b'\n', bytes).count() as u64;
    match bytes.last() {
        Some(b'\n') | None => n,
        Some(_) => n + 1,
    }
}

/// Injection points for exercising commit failure handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Fail before the staged file is moved.
    BeforeMove,
    /// Fail after the move but before the staged path is released.
    AfterMove,
}

#[derive(Debug)]
pub struct SegmentStore {
    root: PathBuf,
    schema: Arc<WarehouseSchema>,
    fault: Mutex<Option<FaultPoint>>,
}

impl SegmentStore {
    /// Opens (creating if needed) a warehouse rooted at `root`.
    pub fn open(
        root: impl Into<PathBuf>,
        schema: Arc<WarehouseSchema>,
    ) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(STAGING_DIR))
            .map_err(io_err(format!("creating {}", root.display())))?;
        Ok(SegmentStore {
            root,
            schema,
            fault: Mutex::new(None),
        })
    }

    /// Creates a directory for every catalog table.
    pub fn init_layout(&self) -> Result<(), StoreError> {
        for table in self.schema.tables() {
            let dir = self.table_dir(&table.name)?;
            fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn schema(&self) -> &Arc<WarehouseSchema> {
        &self.schema
    }

    pub fn staging_dir(&self) -> PathBuf {
        self.root.join(STAGING_DIR)
    }

    /// Arms a one-shot fault for the next commit.
    #[doc(hidden)]
    pub fn inject_fault(&self, point: FaultPoint) {
        *self.fault.lock().unwrap() = Some(point);
    }

    fn take_fault(&self, point: FaultPoint) -> Option<io::Error> {
        let mut armed = self.fault.lock().unwrap();
        if *armed == Some(point) {
            *armed = None;
            Some(io::Error::other(format!("injected fault at {point:?}")))
        } else {
            None
        }
    }

    fn table_dir(&self, table: &str) -> Result<PathBuf, StoreError> {
        let valid = !table.is_empty()
            && !table.starts_with('_')
            && table
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_');
        if !valid {
            return Err(StoreError::InvalidTableName(table.to_string()));
        }
        Ok(self.root.join(table))
    }

    /// Batch ids and paths of `table`'s segments, in batch order. A catalog
    /// table that has never been loaded has none; any other missing table is
    /// an error.
    fn segment_paths(&self, table: &str) -> Result<Vec<(u64, PathBuf)>, StoreError> {
        let dir = self.table_dir(table)?;
        let entries = match fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                if self.schema.table(table).is_ok() {
                    return Ok(Vec::new());
                }
                return Err(StoreError::UnknownTable(table.to_string()));
            }
            Err(e) => return Err(io_err(format!("listing {}", dir.display()))(e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry
                .map_err(io_err(format!("listing {}", dir.display())))?
                .path();
            if let Some(batch_id) = batch_id_of(&path) {
                out.push((batch_id, path));
            }
        }
        out.sort();
        Ok(out)
    }

    /// Segments of `table` in batch order, with row counts.
    pub fn table_state(&self, table: &str) -> Result<TableState, StoreError> {
        let mut segments = Vec::new();
        for (batch_id, path) in self.segment_paths(table)? {
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                // Dropped while listing.
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(source) => return Err(StoreError::UnreadableSegment { path, source }),
            };
            segments.push(Segment {
                table: table.to_string(),
                batch_id,
                path,
                row_count: count_rows(&bytes),
            });
        }
        Ok(TableState {
            table: table.to_string(),
            segments,
        })
    }

    /// Most recent segment of `table`, if any, without reading segment contents.
    pub fn latest_segment_path(&self, table: &str) -> Result<Option<(u64, PathBuf)>, StoreError> {
        Ok(self.segment_paths(table)?.pop())
    }

    /// Moves `staged` into `table` as its next segment.
    ///
    /// The move is a hard link followed by unlinking the staged path, so an
    /// existing segment is never overwritten. On failure before the link
    /// the table directory is untouched and the staged file stays in place.
    pub fn commit_batch(&self, table: &str, staged: StagedFile) -> Result<Segment, StoreError> {
        let dir = self.table_dir(table)?;
        fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let lock = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))
            .map_err(io_err("opening table lock"))?;
        lock.lock().map_err(io_err("locking table"))?;

        let failed = |source| StoreError::CommitFailed {
            table: table.to_string(),
            staged: staged.path.clone(),
            source,
        };

        let mut batch_id = self.next_batch_id(&dir)?;
        if let Some(e) = self.take_fault(FaultPoint::BeforeMove) {
            return Err(failed(e));
        }
        let dest = loop {
            let dest = dir.join(format!("{batch_id}.{SEGMENT_EXT}"));
            match fs::hard_link(&staged.path, &dest) {
                Ok(()) => break dest,
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => batch_id += 1,
                // File systems without hard links fall back to a rename
                // guarded by the table lock.
                Err(e) if e.kind() == io::ErrorKind::Unsupported || e.raw_os_error() == Some(1) => {
                    if dest.exists() {
                        batch_id += 1;
                        continue;
                    }
                    fs::rename(&staged.path, &dest).map_err(failed)?;
                    break dest;
                }
                Err(e) => return Err(failed(e)),
            }
        };
        write_atomic(
            &dir.join(NEXT_BATCH_FILE),
            format!("{}\n", batch_id + 1).as_bytes(),
        )
        .map_err(io_err("recording next batch id"))?;
        if let Some(e) = self.take_fault(FaultPoint::AfterMove) {
            return Err(failed(e));
        }
        if staged.path.exists() {
            let _ = fs::remove_file(&staged.path);
        }
        log::debug!(
            "committed {} rows to {table} as batch {batch_id}",
            staged.row_count
        );
        Ok(Segment {
            table: table.to_string(),
            batch_id,
            path: dest,
            row_count: staged.row_count,
        })
    }

    fn next_batch_id(&self, dir: &Path) -> Result<u64, StoreError> {
        let recorded = fs::read_to_string(dir.join(NEXT_BATCH_FILE))
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .unwrap_or(1);
        let mut max_existing = 0;
        for entry in fs::read_dir(dir).map_err(io_err("listing table"))? {
            let entry = entry.map_err(io_err("listing table"))?;
            if let Some(id) = batch_id_of(&entry.path()) {
                max_existing = max_existing.max(id);
            }
        }
        Ok(recorded.max(max_existing + 1))
    }

    /// Reads every row of `table`.
    pub fn scan(&self, table: &str, dedupe: Dedupe) -> Result<Vec<Record>, StoreError> {
        let segments = self.segment_paths(table)?;
        let key_indices = match dedupe {
            Dedupe::Off => None,
            Dedupe::On => Some(
                self.schema
                    .table(table)
                    .map_err(|_| StoreError::NoNaturalKey(table.to_string()))?
                    .natural_key_indices(),
            ),
        };

        let mut records = Vec::new();
        for (_, path) in &segments {
            records.extend(read_segment(path)?);
        }
        let Some(key_indices) = key_indices else {
            return Ok(records);
        };
        if records.len() <= 1 {
            return Ok(records);
        }

        // Later rows shadow earlier ones; segments are already in batch order.
        let mut survivor: HashMap<Vec<&str>, usize> = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let key: Vec<&str> = key_indices.iter().map(|&k| r.field(k)).collect();
            survivor.insert(key, i);
        }
        let mut keep = vec![false; records.len()];
        for &i in survivor.values() {
            keep[i] = true;
        }
        drop(survivor);
        Ok(records
            .into_iter()
            .zip(keep)
            .filter_map(|(r, k)| k.then_some(r))
            .collect())
    }

    /// Removes one batch from `table`.
    pub fn drop_batch(&self, table: &str, batch_id: u64) -> Result<(), StoreError> {
        let dir = self.table_dir(table)?;
        let path = dir.join(format!("{batch_id}.{SEGMENT_EXT}"));
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::UnknownBatch {
                table: table.to_string(),
                batch_id,
            }),
            Err(e) => Err(io_err(format!("removing {}", path.display()))(e)),
        }
    }
}

fn batch_id_of(path: &Path) -> Option<u64> {
    if path.extension()? != SEGMENT_EXT {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(contents)?;
    drop(f);
    fs::rename(tmp, path)
}

/// Parses one segment file.
pub fn read_segment(path: &Path) -> Result<Vec<Record>, StoreError> {
    let unreadable = |source| StoreError::UnreadableSegment {
        path: path.to_path_buf(),
        source,
    };
    let bytes = fs::read(path).map_err(unreadable)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| unreadable(io::Error::new(io::ErrorKind::InvalidData, e)))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, line)| Record::new(i as u64 + 1, line.split(',').map(str::to_string).collect()))
        .collect())
}
