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

//! Tenant-scoped queries over materialized cubes and the report catalog.
//!
//! Every query is pinned to one cube version: the cube file is opened once
//! and all scan workers read from that handle. Rows are only ever returned
//! when their tenant column equals the session tenant.

use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};

use serde::Serialize;

use crate::cube::{read_exact_at, CubeEngine, CubeError, CubeLayout, CubeRow, StoredCube};
use crate::parallel::WorkerPool;
use crate::schema::{TenantKey, RESERVED_VALUE, TENANT_ATTRIBUTE};

/// Bytes of cube file per scan task.
pub const DEFAULT_SCAN_CHUNK: u64 = 256 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum OlapError {
    #[error("unknown report `{0}`")]
    UnknownReport(String),
    #[error("mask {mask} out of range for a cube over {k} attributes")]
    MaskOutOfRange { mask: u64, k: usize },
    #[error("cube `{cube}` has no attribute `{attribute}`")]
    UnknownAttribute { cube: String, attribute: String },
    #[error("cube `{0}` has no tenant column")]
    NoTenantColumn(String),
    #[error("missing report parameter `{0}`")]
    MissingParameter(String),
    #[error("unknown report parameter `{0}`")]
    UnknownParameter(String),
    #[error(transparent)]
    Cube(#[from] CubeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TenantContext {
    pub university_key: TenantKey,
    pub session_id: String,
}

impl TenantContext {
    pub fn new(university_key: TenantKey, session_id: impl Into<String>) -> Self {
        TenantContext {
            university_key,
            session_id: session_id.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub rows: Vec<CubeRow>,
    pub warning: Option<String>,
    pub cube_version: u64,
    pub scan_workers: usize,
    pub effective: Duration,
    /// Summed busy time of all scan tasks.
    pub cumulative: Duration,
}

/// Where the tenant value of a cube row lives.
#[derive(Debug, Clone, Copy)]
enum TenantColumn {
    Mandatory(usize),
    /// Cube attribute; rows with it rolled up span tenants and never match.
    Attr(usize),
}

#[derive(Debug, Clone, Copy)]
enum FilterColumn {
    Mandatory(usize),
    Attr(usize),
}

impl FilterColumn {
    fn value<'a>(&self, row: &'a CubeRow) -> Option<&'a str> {
        match *self {
            FilterColumn::Mandatory(i) => Some(&row.mandatory[i]),
            FilterColumn::Attr(j) => row.attrs[j].as_deref(),
        }
    }
}

#[derive(Debug)]
pub struct OlapEngine {
    cubes: Arc<CubeEngine>,
    pool: WorkerPool,
    scan_chunk: u64,
}

impl OlapEngine {
    pub fn new(cubes: Arc<CubeEngine>, pool: WorkerPool) -> Self {
        OlapEngine {
            cubes,
            pool,
            scan_chunk: DEFAULT_SCAN_CHUNK,
        }
    }

    /// Sets the cube bytes per scan task; the task count grows with the cube.
    pub fn with_scan_chunk(mut self, bytes: u64) -> Self {
        self.scan_chunk = bytes.max(1);
        self
    }

    pub fn cubes(&self) -> &Arc<CubeEngine> {
        &self.cubes
    }

    /// Rows of `cube` whose grouping id is in `masks`, whose tenant equals
    /// the session tenant and which match every filter on a present
    /// attribute.
    pub fn query_cube(
        &self,
        ctx: &TenantContext,
        cube: &str,
        masks: &[u64],
        filters: &[(String, String)],
    ) -> Result<QueryResult, OlapError> {
        let start = Instant::now();
        let spec = self.cubes.spec(cube)?.clone();
        let k = spec.k();
        for &mask in masks {
            if mask > spec.full_mask() {
                return Err(OlapError::MaskOutOfRange { mask, k });
            }
        }
        let column = |attr: &str| {
            if let Some(i) = spec.mandatory_keys.iter().position(|a| a == attr) {
                Some(FilterColumn::Mandatory(i))
            } else {
                spec.attr_position(attr).map(FilterColumn::Attr)
            }
        };
        let tenant = match column(TENANT_ATTRIBUTE) {
            Some(FilterColumn::Mandatory(i)) => TenantColumn::Mandatory(i),
            Some(FilterColumn::Attr(j)) => TenantColumn::Attr(j),
            None => return Err(OlapError::NoTenantColumn(spec.name.clone())),
        };
        let mut warning = None;
        let mut compiled = Vec::with_capacity(filters.len());
        for (attr, value) in filters {
            let col = column(attr).ok_or_else(|| OlapError::UnknownAttribute {
                cube: spec.name.clone(),
                attribute: attr.clone(),
            })?;
            if let FilterColumn::Attr(j) = col {
                if masks.iter().all(|m| m & (1 << j) == 0) {
                    warning = Some(format!(
                        "filter on `{attr}` which is rolled up in every requested mask"
                    ));
                }
            }
            compiled.push((col, value.clone()));
        }
        if let TenantColumn::Attr(j) = tenant {
            if masks.iter().all(|m| m & (1 << j) == 0) {
                warning = Some(format!(
                    "`{TENANT_ATTRIBUTE}` is rolled up in every requested mask"
                ));
            }
        }

        let stored = StoredCube::open_latest(self.cubes.store(), spec)?;
        let layout = CubeLayout::of(&stored.spec);
        let tenant_value = ctx.university_key.as_str();
        let keep = |row: &CubeRow| {
            if !masks.contains(&row.grouping_id) {
                return false;
            }
            let t = match tenant {
                TenantColumn::Mandatory(i) => Some(row.mandatory[i].as_str()),
                TenantColumn::Attr(j) => row.attrs[j].as_deref(),
            };
            t == Some(tenant_value)
                && compiled
                    .iter()
                    .all(|(c, v)| c.value(row) == Some(v.as_str()))
        };

        let n_tasks = stored.len.div_ceil(self.scan_chunk).max(1);
        let ranges: Vec<(u64, u64)> = (0..n_tasks)
            .map(|i| {
                (
                    i * self.scan_chunk,
                    ((i + 1) * self.scan_chunk).min(stored.len),
                )
            })
            .collect();
        let scan_workers = ranges.len();
        let run = self
            .pool
            .run_timed(ranges, |(lo, hi)| -> Result<Vec<CubeRow>, CubeError> {
                let mut out = Vec::new();
                let mut bad = None;
                scan_lines(&stored, lo, hi, |line| {
                    if bad.is_some() {
                        return;
                    }
                    match layout.parse_line(line) {
                        Some(row) if keep(&row) => out.push(row),
                        Some(_) => {}
                        None => bad = Some(line.to_string()),
                    }
                })?;
                match bad {
                    Some(line) => Err(CubeError::MalformedCubeFile {
                        path: stored.path.clone(),
                        reason: format!("bad line `{line}`"),
                    }),
                    None => Ok(out),
                }
            });
        let cumulative = run.cumulative();
        let mut rows = Vec::new();
        for part in run.outputs {
            rows.extend(part?);
        }
        Ok(QueryResult {
            rows,
            warning,
            cube_version: stored.version,
            scan_workers,
            effective: start.elapsed(),
            cumulative,
        })
    }

    pub fn generate_report(
        &self,
        ctx: &TenantContext,
        report_id: &str,
        params: &[(String, String)],
    ) -> Result<ReportResult, OlapError> {
        let def = ReportDef::find(report_id)?;
        for (name, _) in params {
            if !def.params.iter().any(|p| p == name) {
                return Err(OlapError::UnknownParameter(name.clone()));
            }
        }
        let filters = def
            .params
            .iter()
            .map(|p| {
                params
                    .iter()
                    .find(|(n, _)| n == p)
                    .map(|(n, v)| (n.clone(), v.clone()))
                    .ok_or_else(|| OlapError::MissingParameter(p.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let q = self.query_cube(ctx, &def.cube, &def.masks, &filters)?;
        let spec = self.cubes.spec(&def.cube)?;

        let mut keyed: Vec<(Vec<Option<String>>, Vec<String>)> = Vec::with_capacity(q.rows.len());
        for row in &q.rows {
            let mut sort_key = Vec::new();
            let mut cells = Vec::with_capacity(def.columns.len());
            for col in &def.columns {
                match col {
                    ReportColumn::Attr(a) => {
                        let v = match spec.attr_position(a) {
                            Some(j) => row.attrs[j].clone(),
                            None => spec
                                .mandatory_keys
                                .iter()
                                .position(|m| m == a)
                                .map(|i| row.mandatory[i].clone()),
                        };
                        cells.push(v.clone().unwrap_or_else(|| RESERVED_VALUE.to_string()));
                        sort_key.push(v);
                    }
                    ReportColumn::Mean(out) | ReportColumn::Sum(out) => {
                        let i = spec.aggregate_position(out).ok_or_else(|| {
                            OlapError::UnknownAttribute {
                                cube: spec.name.clone(),
                                attribute: out.clone(),
                            }
                        })?;
                        let acc = &row.aggregates[i];
                        cells.push(match col {
                            ReportColumn::Mean(_) => {
                                acc.mean().map(|m| format!("{m:.4}")).unwrap_or_default()
                            }
                            _ => acc.sum.to_string(),
                        });
                    }
                }
            }
            keyed.push((sort_key, cells));
        }
        // Present values ascending, rolled-up values after them.
        keyed.sort_by(|a, b| {
            let key = |k: &Vec<Option<String>>| {
                k.iter()
                    .map(|v| (v.is_none(), v.clone()))
                    .collect::<Vec<_>>()
            };
            key(&a.0).cmp(&key(&b.0)).then_with(|| a.1.cmp(&b.1))
        });
        Ok(ReportResult {
            report_id: def.id.clone(),
            columns: def.columns.iter().map(ReportColumn::header).collect(),
            rows: keyed.into_iter().map(|(_, c)| c).collect(),
            generated_at: SystemTime::now(),
            cube_version: q.cube_version,
            warning: q.warning,
        })
    }

    pub fn list_reports(&self, _ctx: &TenantContext) -> Vec<ReportDef> {
        ReportDef::catalog()
    }
}

/// Calls `f` with every line whose first byte lies in `[lo, hi)`.
fn scan_lines(
    cube: &StoredCube,
    lo: u64,
    hi: u64,
    mut f: impl FnMut(&str),
) -> Result<(), CubeError> {
    if lo >= hi {
        return Ok(());
    }
    let io = |source| CubeError::Io {
        context: format!("reading {}", cube.path.display()),
        source,
    };
    // Start one byte early to see whether `lo` begins a line.
    let from = lo.saturating_sub(1);
    let mut buf = vec![0u8; (hi - from) as usize];
    read_exact_at(&cube.file, &mut buf, from).map_err(io)?;
    let mut end = hi;
    while buf.last() != Some(&b'\n') && end < cube.len {
        let more = 4096.min(cube.len - end) as usize;
        let at = buf.len();
        buf.resize(at + more, 0);
        read_exact_at(&cube.file, &mut buf[at..], end).map_err(io)?;
        if let Some(i) = memchr::memchr(b'\n', &buf[at..]) {
            buf.truncate(at + i + 1);
        }
        end = from + buf.len() as u64;
    }
    let first = if lo == 0 {
        0
    } else {
        match memchr::memchr(b'\n', &buf) {
            Some(i) => i + 1,
            None => return Ok(()),
        }
    };
    let mut pos = first;
    while pos < buf.len() && from + (pos as u64) < hi {
        let next = memchr::memchr(b'\n', &buf[pos..]).map_or(buf.len(), |i| pos + i);
        let line =
            std::str::from_utf8(&buf[pos..next]).map_err(|e| CubeError::MalformedCubeFile {
                path: cube.path.clone(),
                reason: e.to_string(),
            })?;
        if !line.is_empty() {
            f(line);
        }
        pos = next + 1;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ReportColumn {
    Attr(String),
    /// Mean of the named cube aggregate.
    Mean(String),
    /// Sum behind the named cube aggregate.
    Sum(String),
}

impl ReportColumn {
    pub fn header(&self) -> String {
        match self {
            ReportColumn::Attr(a) | ReportColumn::Mean(a) => a.clone(),
            ReportColumn::Sum(a) => format!("sum_of_{}", a.trim_start_matches("avg_")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportDef {
    pub id: String,
    pub title: String,
    pub cube: String,
    pub masks: Vec<u64>,
    /// Cube attributes bound from same-named request parameters.
    pub params: Vec<String>,
    pub columns: Vec<ReportColumn>,
}

impl ReportDef {
    pub fn catalog() -> Vec<ReportDef> {
        let attr = |s: &str| ReportColumn::Attr(s.into());
        vec![
            ReportDef {
                id: "avg_marks_by_regtype".into(),
                title: "Average marks per registration type for a term".into(),
                cube: "student_performance".into(),
                masks: vec![0b010, 0b110],
                params: vec!["time_code".into()],
                columns: vec![
                    attr("time_code"),
                    attr("regtype_code"),
                    ReportColumn::Mean("avg_marks".into()),
                ],
            },
            ReportDef {
                id: "avg_attendance_by_course".into(),
                title: "Average attendance per course for a term".into(),
                cube: "student_performance".into(),
                masks: vec![0b010, 0b011],
                params: vec!["time_code".into()],
                columns: vec![
                    attr("time_code"),
                    attr("course_code"),
                    ReportColumn::Mean("avg_per_att".into()),
                ],
            },
            ReportDef {
                id: "student_counts_by_department".into(),
                title: "Student head counts per department for an academic year".into(),
                cube: "student_counts".into(),
                masks: vec![0b010, 0b011],
                params: vec!["academic_year".into()],
                columns: vec![
                    attr("academic_year"),
                    attr("department_code"),
                    ReportColumn::Mean("avg_head_count".into()),
                    ReportColumn::Sum("avg_head_count".into()),
                ],
            },
        ]
    }

    pub fn find(id: &str) -> Result<ReportDef, OlapError> {
        ReportDef::catalog()
            .into_iter()
            .find(|r| r.id == id)
            .ok_or_else(|| OlapError::UnknownReport(id.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportResult {
    pub report_id: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub generated_at: SystemTime,
    pub cube_version: u64,
    pub warning: Option<String>,
}

impl ReportResult {
    /// Header and rows as CSV. Depends only on the columns and rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    /// Fixed-width table, one line per row.
    pub fn to_table(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.columns);
        out += &(widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("  ")
            + "\n");
        for r in &self.rows {
            out += &line(r);
        }
        out
    }
}
