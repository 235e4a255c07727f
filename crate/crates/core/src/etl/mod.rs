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

//! Upload ingestion: extract, transform and load.
//!
//! An upload is cut into record-aligned splits ([`split`]). Each split is
//! validated and transformed by its own worker into an intermediate part
//! file. If no worker reported an error the parts are concatenated into one
//! staged file which is committed to the segment store; otherwise nothing is
//! committed and the complete error report is returned.

pub mod extract;
pub mod split;

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::parallel::WorkerPool;
use crate::schema::{SchemaError, TableDef, TenantKey};
use crate::store::{Segment, SegmentStore, StagedFile, StoreError};

pub use extract::{extract, transform, Extracted, RowTransformer};
pub use split::{
    mapper_count, plan_splits, split_size, EtlMode, SplitConfig, SplitPlan, SplitRange,
};

#[derive(Debug, thiserror::Error)]
pub enum EtlError {
    #[error("invalid split configuration (s_min={s_min}, s_max={s_max}, s_b={s_b})")]
    InvalidSplitConfig { s_min: u64, s_max: u64, s_b: u64 },
    #[error("input file is empty")]
    EmptyInput,
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl EtlError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> EtlError {
        let context = context.into();
        move |source| EtlError::Io { context, source }
    }
}

/// One rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ErrorEntry {
    /// 1-based line in the uploaded file (the header is line 1).
    pub line_number: u64,
    /// Tenant-provided key of the offending row, when it could be read.
    pub tenant_key_value: Option<String>,
    pub reason: String,
}

/// Every problem found in a rejected upload, ordered by line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EtlErrorReport {
    pub entries: Vec<ErrorEntry>,
}

impl EtlErrorReport {
    pub fn new(mut entries: Vec<ErrorEntry>) -> Self {
        entries.sort();
        EtlErrorReport { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn line_numbers(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.line_number).collect()
    }

    /// CSV with columns `line_number,tenant_key_value,reason`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["line_number", "tenant_key_value", "reason"])
            .expect("in-memory write");
        for e in &self.entries {
            w.write_record([
                e.line_number.to_string().as_str(),
                e.tenant_key_value.as_deref().unwrap_or(""),
                e.reason.as_str(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchOutcome {
    Committed(Segment),
    Rejected(EtlErrorReport),
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub outcome: BatchOutcome,
    /// Wall-clock duration of the whole run.
    pub effective_time: Duration,
    /// Sum of per-worker busy time.
    pub cumulative_time: Duration,
    /// Input lines, header included.
    pub rows_in: u64,
    /// Rows written to the committed segment; zero when rejected.
    pub rows_out: u64,
    pub n_m: u64,
    pub s_split: u64,
}

impl BatchResult {
    pub fn segment(&self) -> Option<&Segment> {
        match &self.outcome {
            BatchOutcome::Committed(s) => Some(s),
            BatchOutcome::Rejected(_) => None,
        }
    }

    pub fn report(&self) -> Option<&EtlErrorReport> {
        match &self.outcome {
            BatchOutcome::Rejected(r) => Some(r),
            BatchOutcome::Committed(_) => None,
        }
    }
}

/// Per-split worker output.
struct PartOutput {
    path: PathBuf,
    lines: u64,
    rows: u64,
    errors: Vec<ErrorEntry>,
    header_error: bool,
}

/// Runs uploads into a segment store on a worker pool.
#[derive(Debug)]
pub struct Pipeline {
    store: Arc<SegmentStore>,
    pool: WorkerPool,
}

impl Pipeline {
    pub fn new(store: Arc<SegmentStore>, pool: WorkerPool) -> Self {
        Pipeline { store, pool }
    }

    pub fn store(&self) -> &Arc<SegmentStore> {
        &self.store
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    /// Ingests `file` into `table` for `tenant`. All-or-nothing: any error
    /// anywhere in the file rejects the whole upload.
    pub fn run_etl(
        &self,
        file: &Path,
        table: &str,
        tenant: &TenantKey,
        mode: EtlMode,
        cfg: &SplitConfig,
    ) -> Result<BatchResult, EtlError> {
        let start = Instant::now();
        let table_def = self.store.schema().table(table)?.clone();
        let plan = plan_splits(file, cfg, mode)?;
        let work_dir = tempfile::Builder::new()
            .prefix("etl-")
            .tempdir_in(self.store.staging_dir())
            .map_err(EtlError::io("creating intermediate directory"))?;
        let transformer = RowTransformer::new(&table_def, tenant);

        let tasks: Vec<(usize, SplitRange)> = plan.splits.iter().copied().enumerate().collect();
        let run = self.pool.run_timed(tasks, |(index, range)| {
            let part = work_dir.path().join(format!("part-{index:05}"));
            process_split(file, range, index == 0, &table_def, &transformer, part)
        });
        let cumulative_time = run.cumulative();

        let mut parts = Vec::with_capacity(run.outputs.len());
        for out in run.outputs {
            parts.push(out?);
        }
        let rows_in: u64 = parts.iter().map(|p| p.lines).sum();

        let mut errors = Vec::new();
        if parts.first().is_some_and(|p| p.header_error) {
            errors.append(&mut parts[0].errors);
        } else {
            let mut base = 0;
            for part in &mut parts {
                errors.extend(part.errors.drain(..).map(|mut e| {
                    e.line_number += base;
                    e
                }));
                base += part.lines;
            }
        }
        if !errors.is_empty() {
            return Ok(BatchResult {
                outcome: BatchOutcome::Rejected(EtlErrorReport::new(errors)),
                effective_time: start.elapsed(),
                cumulative_time,
                rows_in,
                rows_out: 0,
                n_m: plan.n_m,
                s_split: plan.s_split,
            });
        }

        let rows_out: u64 = parts.iter().map(|p| p.rows).sum();
        let staged_path = work_dir.path().join("staged.seg");
        concatenate(parts.iter().map(|p| p.path.as_path()), &staged_path)
            .map_err(EtlError::io("concatenating intermediate files"))?;
        let committed = self.store.commit_batch(
            table,
            StagedFile {
                path: staged_path,
                row_count: rows_out,
            },
        );
        let segment = match committed {
            Ok(segment) => segment,
            Err(e) => {
                // The staged file stays behind for diagnosis.
                let kept = work_dir.keep();
                log::warn!(
                    "commit into `{table}` failed; staged data kept in {}",
                    kept.display()
                );
                return Err(e.into());
            }
        };
        Ok(BatchResult {
            outcome: BatchOutcome::Committed(segment),
            effective_time: start.elapsed(),
            cumulative_time,
            rows_in,
            rows_out,
            n_m: plan.n_m,
            s_split: plan.s_split,
        })
    }
}

fn process_split(
    file: &Path,
    range: SplitRange,
    starts_file: bool,
    table: &TableDef,
    transformer: &RowTransformer,
    part: PathBuf,
) -> Result<PartOutput, EtlError> {
    let mut buf = vec![0u8; range.len as usize];
    let mut f = File::open(file).map_err(EtlError::io(format!("opening {}", file.display())))?;
    f.seek(SeekFrom::Start(range.offset))
        .and_then(|_| f.read_exact(&mut buf))
        .map_err(EtlError::io("reading split"))?;

    let mut out = PartOutput {
        path: part,
        lines: 0,
        rows: 0,
        errors: Vec::new(),
        header_error: false,
    };
    let mut writer = BufWriter::with_capacity(
        256 * 1024,
        File::create(&out.path).map_err(EtlError::io("creating intermediate file"))?,
    );
    let mut row = Vec::with_capacity(256);
    for (n, line) in extract::split_lines(&buf) {
        out.lines = n;
        if starts_file && n == 1 {
            if let Some(e) = extract::check_header(table, line) {
                out.errors.push(e);
                out.header_error = true;
                break;
            }
            continue;
        }
        match extract::check_line(table, transformer, n, line) {
            extract::LineCheck::Valid(fields) => {
                row.clear();
                match transformer.write_row(&fields, &mut row) {
                    Ok(()) => {
                        // Once a split has errors nothing will be loaded.
                        if out.errors.is_empty() {
                            writer
                                .write_all(&row)
                                .map_err(EtlError::io("writing intermediate file"))?;
                        }
                        out.rows += 1;
                    }
                    Err(reason) => out.errors.push(ErrorEntry {
                        line_number: n,
                        tenant_key_value: transformer.report_key(&fields),
                        reason,
                    }),
                }
            }
            extract::LineCheck::Invalid(e) => out.errors.push(e),
        }
    }
    if out.header_error {
        // Line counts past the header are meaningless once rejected.
        out.lines = extract::split_lines(&buf).count() as u64;
    }
    writer
        .flush()
        .map_err(EtlError::io("writing intermediate file"))?;
    Ok(out)
}

fn concatenate<'a>(parts: impl Iterator<Item = &'a Path>, dest: &Path) -> io::Result<()> {
    let mut out = File::create(dest)?;
    for part in parts {
        let mut f = File::open(part)?;
        io::copy(&mut f, &mut out)?;
        fs::remove_file(part)?;
    }
    out.flush()
}
