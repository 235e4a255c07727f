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

//! OLAP cube materialization.
//!
//! A cube over `k` attributes holds one row per group for every one of the
//! `2^k` roll-up patterns. The pattern is recorded in `grouping_id`: the
//! attribute listed first owns the least significant bit, the one listed
//! last the most significant bit, and a bit is 1 when the attribute is
//! present in the row and 0 when it is rolled up. Mandatory keys (the tenant
//! key) are grouped in every row and never rolled up.
//!
//! Aggregates are carried as exact `(sum, count)` accumulators so partial
//! results from any partitioning merge to identical totals.

pub mod refresh;

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::decimal::Fixed;
use crate::parallel::WorkerPool;
use crate::schema::{SchemaError, TableClass, TENANT_ATTRIBUTE};
use crate::store::{Dedupe, SegmentStore, StagedFile, StoreError};

pub use refresh::{CubeRefresher, RefreshHandle, RefreshStats, VisibilityLag};

/// Largest supported number of roll-up attributes.
pub const MAX_CUBE_ATTRS: usize = 62;

/// Prefix of the store tables holding materialized cubes.
pub const CUBE_TABLE_PREFIX: &str = "cube_";

#[derive(Debug, thiserror::Error)]
pub enum CubeError {
    #[error("unknown cube `{0}`")]
    UnknownCube(String),
    #[error("invalid cube definition: {0}")]
    InvalidSpec(String),
    #[error("dimension `{0}` has no committed rows")]
    MissingDimension(String),
    #[error("cube `{cube}` is not built yet")]
    NotBuilt { cube: String },
    #[error("corrupt value in {table} row {line}: {attribute} = `{value}`")]
    Corrupt {
        table: String,
        line: u64,
        attribute: String,
        value: String,
    },
    #[error("malformed cube file {}: {reason}", path.display())]
    MalformedCubeFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

fn io_err(context: &str) -> impl FnOnce(std::io::Error) -> CubeError + '_ {
    move |source| CubeError::Io {
        context: context.to_string(),
        source,
    }
}

/// `AVG(measure) AS output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregateDef {
    pub measure: String,
    pub output: String,
}

/// Joins a fact reference to a dimension and exposes one of its attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DimensionJoin {
    pub fact_ref: String,
    pub dimension: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CubeSpec {
    pub name: String,
    pub fact: String,
    pub mandatory_keys: Vec<String>,
    /// Roll-up attributes in definition order.
    pub cube_attrs: Vec<String>,
    pub aggregates: Vec<AggregateDef>,
    pub joins: Vec<DimensionJoin>,
}

impl CubeSpec {
    pub fn new(
        name: &str,
        fact: &str,
        mandatory_keys: &[&str],
        cube_attrs: &[&str],
        aggregates: &[(&str, &str)],
        joins: &[(&str, &str, &str)],
    ) -> Result<Self, CubeError> {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let spec = CubeSpec {
            name: name.to_string(),
            fact: fact.to_string(),
            mandatory_keys: owned(mandatory_keys),
            cube_attrs: owned(cube_attrs),
            aggregates: aggregates
                .iter()
                .map(|(m, o)| AggregateDef {
                    measure: m.to_string(),
                    output: o.to_string(),
                })
                .collect(),
            joins: joins
                .iter()
                .map(|(r, d, o)| DimensionJoin {
                    fact_ref: r.to_string(),
                    dimension: d.to_string(),
                    output: o.to_string(),
                })
                .collect(),
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), CubeError> {
        let invalid = |m: String| Err(CubeError::InvalidSpec(m));
        if self.name.is_empty()
            || !self
                .name
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_')
        {
            return invalid(format!("bad cube name `{}`", self.name));
        }
        if self.cube_attrs.is_empty() || self.cube_attrs.len() > MAX_CUBE_ATTRS {
            return invalid(format!(
                "cube needs 1..={MAX_CUBE_ATTRS} roll-up attributes"
            ));
        }
        if self.aggregates.is_empty() {
            return invalid("cube needs at least one aggregate".into());
        }
        let mut seen = HashSet::new();
        for a in self.mandatory_keys.iter().chain(&self.cube_attrs) {
            if !seen.insert(a) {
                return invalid(format!("attribute `{a}` is listed twice"));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.cube_attrs.len()
    }

    /// Store table holding this cube.
    pub fn table_name(&self) -> String {
        format!("{CUBE_TABLE_PREFIX}{}", self.name)
    }

    /// Bitmask with every roll-up attribute present.
    pub fn full_mask(&self) -> u64 {
        (1u64 << self.k()) - 1
    }

    pub fn attr_position(&self, name: &str) -> Option<usize> {
        self.cube_attrs.iter().position(|a| a == name)
    }

    pub fn aggregate_position(&self, output: &str) -> Option<usize> {
        self.aggregates.iter().position(|a| a.output == output)
    }

    /// Average marks and attendance per university over course, term and
    /// registration type.
    pub fn student_performance() -> Self {
        CubeSpec::new(
            "student_performance",
            "StudentPerformance",
            &[TENANT_ATTRIBUTE],
            &["course_code", "time_code", "regtype_code"],
            &[("marks", "avg_marks"), ("percent_attended", "avg_per_att")],
            &[
                ("course_key", "Courses", "course_code"),
                ("time_key", "Times", "time_code"),
                ("regtype_key", "Regtypes", "regtype_code"),
            ],
        )
        .expect("valid builtin cube")
    }

    /// Head counts per university over department, academic year and program.
    pub fn student_counts() -> Self {
        CubeSpec::new(
            "student_counts",
            "StudentCounts",
            &[TENANT_ATTRIBUTE],
            &["department_code", "academic_year", "program_code"],
            &[("head_count", "avg_head_count")],
            &[
                ("department_key", "Departments", "department_code"),
                ("time_key", "Times", "academic_year"),
                ("program_key", "Programs", "program_code"),
            ],
        )
        .expect("valid builtin cube")
    }

    pub fn builtin() -> Vec<CubeSpec> {
        vec![CubeSpec::student_performance(), CubeSpec::student_counts()]
    }
}

/// Computes the grouping id of a roll-up pattern: attribute `j` (0-based, in
/// definition order) contributes `2^j` when present.
pub fn grouping_id(present: &[bool]) -> u64 {
    assert!(present.len() <= MAX_CUBE_ATTRS, "too many cube attributes");
    present
        .iter()
        .enumerate()
        .filter(|(_, p)| **p)
        .fold(0, |acc, (j, _)| acc | (1u64 << j))
}

/// Inverse of [`grouping_id`] for `k` attributes.
pub fn presence(grouping_id: u64, k: usize) -> Vec<bool> {
    (0..k).map(|j| grouping_id & (1 << j) != 0).collect()
}

/// `grouping_id` as a `k`-digit binary string, most significant bit first.
pub fn grouping_id_bits(grouping_id: u64, k: usize) -> String {
    format!("{grouping_id:0k$b}")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConvError {
    #[error("base {0} out of range 2..=36")]
    BadBase(u32),
    #[error("invalid digit `{digit}` for base {base}")]
    InvalidDigit { digit: char, base: u32 },
    #[error("empty number")]
    Empty,
    #[error("number too large")]
    Overflow,
}

/// Re-expresses a non-negative number from one base in another, using
/// lowercase digits and no leading zeros.
pub fn conv(value: &str, from_base: u32, to_base: u32) -> Result<String, ConvError> {
    for base in [from_base, to_base] {
        if !(2..=36).contains(&base) {
            return Err(ConvError::BadBase(base));
        }
    }
    if value.is_empty() {
        return Err(ConvError::Empty);
    }
    let mut n: u128 = 0;
    for c in value.chars() {
        let d = c.to_digit(from_base).ok_or(ConvError::InvalidDigit {
            digit: c,
            base: from_base,
        })?;
        n = n
            .checked_mul(from_base as u128)
            .and_then(|n| n.checked_add(d as u128))
            .ok_or(ConvError::Overflow)?;
    }
    if n == 0 {
        return Ok("0".to_string());
    }
    let mut digits = Vec::new();
    while n > 0 {
        let d = (n % to_base as u128) as u32;
        digits.push(std::char::from_digit(d, to_base).expect("digit below base"));
        n /= to_base as u128;
    }
    Ok(digits.iter().rev().collect())
}

/// Mergeable `(sum, count)` state of an average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Accumulator {
    pub sum: Fixed,
    pub count: u64,
}

impl Accumulator {
    pub fn add(&mut self, v: Fixed) {
        self.sum += v;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn mean(&self) -> Option<f64> {
        self.sum.mean(self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubeRow {
    pub grouping_id: u64,
    pub mandatory: Vec<String>,
    /// `None` where the attribute is rolled up.
    pub attrs: Vec<Option<String>>,
    pub aggregates: Vec<Accumulator>,
    /// Fact rows aggregated into this row.
    pub support_count: u64,
}

impl CubeRow {
    fn to_line(&self, out: &mut Vec<u8>) {
        let mut first = true;
        let mut push = |out: &mut Vec<u8>, s: &str| {
            if !first {
                out.push(b',');
            }
            first = false;
            out.extend_from_slice(s.as_bytes());
        };
        push(out, &self.grouping_id.to_string());
        for m in &self.mandatory {
            push(out, m);
        }
        for a in &self.attrs {
            push(out, a.as_deref().unwrap_or(""));
        }
        for acc in &self.aggregates {
            push(out, &acc.sum.to_string());
            push(out, &acc.count.to_string());
            push(out, &acc.mean().map(|m| m.to_string()).unwrap_or_default());
        }
        push(out, &self.support_count.to_string());
        out.push(b'\n');
    }
}

/// Field positions of a cube file line for one `CubeSpec`.
#[derive(Debug, Clone, Copy)]
pub struct CubeLayout {
    pub mandatory: usize,
    pub k: usize,
    pub aggregates: usize,
}

impl CubeLayout {
    pub fn of(spec: &CubeSpec) -> Self {
        CubeLayout {
            mandatory: spec.mandatory_keys.len(),
            k: spec.k(),
            aggregates: spec.aggregates.len(),
        }
    }

    pub fn width(&self) -> usize {
        1 + self.mandatory + self.k + 3 * self.aggregates + 1
    }

    /// Parses one stored line. `None` if the line is malformed.
    pub fn parse_line(&self, line: &str) -> Option<CubeRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != self.width() {
            return None;
        }
        let gid: u64 = fields[0].parse().ok()?;
        let m_end = 1 + self.mandatory;
        let a_end = m_end + self.k;
        let mandatory = fields[1..m_end].iter().map(|s| s.to_string()).collect();
        let attrs = fields[m_end..a_end]
            .iter()
            .enumerate()
            .map(|(j, s)| (gid & (1 << j) != 0).then(|| s.to_string()))
            .collect();
        let mut aggregates = Vec::with_capacity(self.aggregates);
        for chunk in fields[a_end..a_end + 3 * self.aggregates].chunks(3) {
            aggregates.push(Accumulator {
                sum: chunk[0].parse().ok()?,
                count: chunk[1].parse().ok()?,
            });
        }
        Some(CubeRow {
            grouping_id: gid,
            mandatory,
            attrs,
            aggregates,
            support_count: fields[fields.len() - 1].parse().ok()?,
        })
    }
}

/// One fact row reduced to the cube's inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectedRow {
    pub mandatory: Vec<String>,
    pub attrs: Vec<String>,
    /// `None` for an absent measure value.
    pub measures: Vec<Option<Fixed>>,
}

#[derive(Debug, Default, Clone)]
struct GroupAcc {
    support: u64,
    aggs: Vec<Accumulator>,
}

impl GroupAcc {
    fn new(n: usize) -> Self {
        GroupAcc {
            support: 0,
            aggs: vec![Accumulator::default(); n],
        }
    }

    fn merge(&mut self, other: &GroupAcc) {
        self.support += other.support;
        for (a, b) in self.aggs.iter_mut().zip(&other.aggs) {
            a.merge(b);
        }
    }
}

const ROLLED_UP: u32 = u32::MAX;

/// Aggregates projected rows into all `2^k` groupings.
///
/// Rows are dictionary-encoded, aggregated at the finest grain over
/// `partitions` chunks in parallel, merged, and then rolled up into every
/// coarser pattern with the patterns spread across the pool. The result is
/// sorted by grouping id, then by group values.
pub fn aggregate_cube(
    rows: &[ProjectedRow],
    k: usize,
    n_aggregates: usize,
    pool: &WorkerPool,
    partitions: usize,
) -> Vec<CubeRow> {
    aggregate_cube_timed(rows, k, n_aggregates, pool, partitions).0
}

/// [`aggregate_cube`] that also reports the summed busy time of the
/// parallel stages.
pub fn aggregate_cube_timed(
    rows: &[ProjectedRow],
    k: usize,
    n_aggregates: usize,
    pool: &WorkerPool,
    partitions: usize,
) -> (Vec<CubeRow>, Duration) {
    assert!((1..=MAX_CUBE_ATTRS).contains(&k));
    let Some(first) = rows.first() else {
        return (Vec::new(), Duration::ZERO);
    };
    let m = first.mandatory.len();
    let width = m + k;

    // Dictionary-encode every grouping column.
    let mut dicts: Vec<HashMap<&str, u32>> = vec![HashMap::new(); width];
    let mut values: Vec<Vec<&str>> = vec![Vec::new(); width];
    let mut encoded: Vec<u32> = Vec::with_capacity(rows.len() * width);
    for r in rows {
        for (c, v) in r.mandatory.iter().chain(&r.attrs).enumerate() {
            let next = values[c].len() as u32;
            let id = *dicts[c].entry(v.as_str()).or_insert_with(|| {
                values[c].push(v.as_str());
                next
            });
            encoded.push(id);
        }
    }
    drop(dicts);

    // Finest-grain partial aggregation per partition.
    let partitions = partitions.clamp(1, rows.len());
    let chunk = rows.len().div_ceil(partitions);
    let ranges: Vec<(usize, usize)> = (0..rows.len())
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(rows.len())))
        .collect();
    let partials = pool.run_timed(ranges, |(lo, hi)| {
        let mut groups: HashMap<&[u32], GroupAcc> = HashMap::new();
        for i in lo..hi {
            let key = &encoded[i * width..(i + 1) * width];
            let acc = groups
                .entry(key)
                .or_insert_with(|| GroupAcc::new(n_aggregates));
            acc.support += 1;
            for (a, v) in acc.aggs.iter_mut().zip(&rows[i].measures) {
                if let Some(v) = v {
                    a.add(*v);
                }
            }
        }
        groups
    });
    let mut busy = partials.cumulative();
    let mut finest: HashMap<&[u32], GroupAcc> = HashMap::new();
    for part in partials.outputs {
        for (key, acc) in part {
            match finest.get_mut(key) {
                Some(existing) => existing.merge(&acc),
                None => {
                    finest.insert(key, acc);
                }
            }
        }
    }
    let finest: Vec<(&[u32], GroupAcc)> = finest.into_iter().collect();

    // Roll up into every pattern.
    let masks: Vec<u64> = (0..(1u64 << k)).collect();
    let per_mask = pool.run_timed(masks, |mask| {
        let mut groups: HashMap<Vec<u32>, GroupAcc> = HashMap::new();
        for (key, acc) in &finest {
            let mut rolled = key.to_vec();
            for j in 0..k {
                if mask & (1 << j) == 0 {
                    rolled[m + j] = ROLLED_UP;
                }
            }
            groups
                .entry(rolled)
                .or_insert_with(|| GroupAcc::new(n_aggregates))
                .merge(acc);
        }
        let mut out: Vec<CubeRow> = groups
            .into_iter()
            .map(|(key, acc)| CubeRow {
                grouping_id: mask,
                mandatory: (0..m)
                    .map(|c| values[c][key[c] as usize].to_string())
                    .collect(),
                attrs: (0..k)
                    .map(|j| {
                        let id = key[m + j];
                        (id != ROLLED_UP).then(|| values[m + j][id as usize].to_string())
                    })
                    .collect(),
                aggregates: acc.aggs,
                support_count: acc.support,
            })
            .collect();
        out.sort_by(|a, b| (&a.mandatory, &a.attrs).cmp(&(&b.mandatory, &b.attrs)));
        out
    });
    busy += per_mask.cumulative();
    (per_mask.outputs.into_iter().flatten().collect(), busy)
}

/// Summary of one cube build.
#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub cube: String,
    pub rows_scanned: u64,
    pub rows_excluded: u64,
    pub cube_rows: u64,
    pub build_duration: Duration,
    pub cumulative_worker_time: Duration,
    /// Store batch holding the cube, once persisted.
    pub version: Option<u64>,
}

/// Where a cube column's value comes from.
enum Source {
    Fact(usize),
    Join(usize),
}

/// Materializes cubes from the segment store.
#[derive(Debug)]
pub struct CubeEngine {
    store: Arc<SegmentStore>,
    pool: WorkerPool,
    specs: Vec<CubeSpec>,
}

impl CubeEngine {
    pub fn new(store: Arc<SegmentStore>, pool: WorkerPool, specs: Vec<CubeSpec>) -> Self {
        CubeEngine { store, pool, specs }
    }

    pub fn with_builtin_cubes(store: Arc<SegmentStore>, pool: WorkerPool) -> Self {
        CubeEngine::new(store, pool, CubeSpec::builtin())
    }

    pub fn store(&self) -> &Arc<SegmentStore> {
        &self.store
    }

    pub fn specs(&self) -> &[CubeSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Result<&CubeSpec, CubeError> {
        self.specs
            .iter()
            .find(|s| s.name == name || s.table_name() == name)
            .ok_or_else(|| CubeError::UnknownCube(name.to_string()))
    }

    /// Joins and projects the deduplicated fact rows of `spec`. Returns the
    /// projected rows and the number of fact rows scanned.
    pub fn project(&self, spec: &CubeSpec) -> Result<(Vec<ProjectedRow>, u64), CubeError> {
        let schema = self.store.schema();
        let fact = schema.table(&spec.fact)?;
        if fact.class != TableClass::Fact {
            return Err(CubeError::InvalidSpec(format!(
                "{} is not a fact table",
                fact.name
            )));
        }
        let fact_col = |name: &str| {
            fact.attribute_index(name).ok_or_else(|| {
                CubeError::InvalidSpec(format!("{} has no attribute {name}", fact.name))
            })
        };

        let mut lookups: Vec<(usize, HashMap<String, String>)> = Vec::new();
        for join in &spec.joins {
            let dim = schema.table(&join.dimension)?;
            let key = dim.dimension_key().ok_or_else(|| {
                CubeError::InvalidSpec(format!("{} is not a dimension", dim.name))
            })?;
            let key_col = dim.attribute_index(&key.name).expect("own attribute");
            if self.store.table_state(&dim.name)?.segments.is_empty() {
                return Err(CubeError::MissingDimension(dim.name.clone()));
            }
            let out_col = dim.attribute_index(&join.output).ok_or_else(|| {
                CubeError::InvalidSpec(format!("{} has no attribute {}", dim.name, join.output))
            })?;
            let map = self
                .store
                .scan(&dim.name, Dedupe::On)?
                .into_iter()
                .map(|mut r| {
                    let out = std::mem::take(&mut r.fields[out_col]);
                    (std::mem::take(&mut r.fields[key_col]), out)
                })
                .collect();
            lookups.push((fact_col(&join.fact_ref)?, map));
        }

        let resolve = |name: &str| -> Result<Source, CubeError> {
            match spec.joins.iter().position(|j| j.output == name) {
                Some(i) => Ok(Source::Join(i)),
                None => fact_col(name).map(Source::Fact),
            }
        };
        let mandatory: Vec<Source> = spec
            .mandatory_keys
            .iter()
            .map(|a| resolve(a))
            .collect::<Result<_, _>>()?;
        let attrs: Vec<Source> = spec
            .cube_attrs
            .iter()
            .map(|a| resolve(a))
            .collect::<Result<_, _>>()?;
        let measures: Vec<usize> = spec
            .aggregates
            .iter()
            .map(|a| fact_col(&a.measure))
            .collect::<Result<_, _>>()?;

        let facts = self.store.scan(&spec.fact, Dedupe::On)?;
        let scanned = facts.len() as u64;
        let mut out = Vec::with_capacity(facts.len());
        'rows: for r in &facts {
            let mut joined: Vec<&str> = Vec::with_capacity(lookups.len());
            for (col, map) in &lookups {
                match map.get(r.field(*col)) {
                    Some(v) => joined.push(v),
                    None => continue 'rows,
                }
            }
            let value = |s: &Source| match *s {
                Source::Fact(c) => r.field(c).to_string(),
                Source::Join(j) => joined[j].to_string(),
            };
            let mut parsed = Vec::with_capacity(measures.len());
            for (&c, agg) in measures.iter().zip(&spec.aggregates) {
                let raw = r.field(c);
                if raw.is_empty() {
                    parsed.push(None);
                    continue;
                }
                let v: Fixed = raw.parse().map_err(|_| CubeError::Corrupt {
                    table: spec.fact.clone(),
                    line: r.line,
                    attribute: agg.measure.clone(),
                    value: raw.to_string(),
                })?;
                parsed.push(Some(v));
            }
            out.push(ProjectedRow {
                mandatory: mandatory.iter().map(value).collect(),
                attrs: attrs.iter().map(value).collect(),
                measures: parsed,
            });
        }
        Ok((out, scanned))
    }

    /// Builds `spec` in memory.
    pub fn build(&self, spec: &CubeSpec) -> Result<(Vec<CubeRow>, BuildSummary), CubeError> {
        let start = Instant::now();
        let (rows, scanned) = self.project(spec)?;
        let excluded = scanned - rows.len() as u64;
        let projected = start.elapsed();
        let partitions = self.pool.size() * 4;
        let (cube, busy) = aggregate_cube_timed(
            &rows,
            spec.k(),
            spec.aggregates.len(),
            &self.pool,
            partitions,
        );
        let summary = BuildSummary {
            cube: spec.name.clone(),
            rows_scanned: scanned,
            rows_excluded: excluded,
            cube_rows: cube.len() as u64,
            build_duration: start.elapsed(),
            cumulative_worker_time: projected + busy,
            version: None,
        };
        if excluded > 0 {
            log::info!(
                "cube {}: {excluded} fact rows had unresolved references",
                spec.name
            );
        }
        Ok((cube, summary))
    }

    /// Builds `spec` and atomically replaces its stored version.
    pub fn materialize(&self, spec: &CubeSpec) -> Result<BuildSummary, CubeError> {
        let (rows, mut summary) = self.build(spec)?;
        let table = spec.table_name();
        let staged = tempfile::Builder::new()
            .prefix("cube-")
            .tempfile_in(self.store.staging_dir())
            .map_err(io_err("staging cube"))?;
        let (file, path) = staged.keep().map_err(|e| io_err("staging cube")(e.error))?;
        let mut w = BufWriter::new(file);
        let mut line = Vec::with_capacity(128);
        for row in &rows {
            line.clear();
            row.to_line(&mut line);
            w.write_all(&line).map_err(io_err("writing cube"))?;
        }
        w.flush().map_err(io_err("writing cube"))?;
        drop(w);

        let segment = match self.store.commit_batch(
            &table,
            StagedFile {
                path: path.clone(),
                row_count: rows.len() as u64,
            },
        ) {
            Ok(s) => s,
            Err(e) => {
                let _ = fs::remove_file(&path);
                return Err(e.into());
            }
        };
        // Keep the previous version for readers still holding it.
        for old in self.store.table_state(&table)?.segments {
            if old.batch_id + 1 < segment.batch_id {
                let _ = self.store.drop_batch(&table, old.batch_id);
            }
        }
        summary.version = Some(segment.batch_id);
        Ok(summary)
    }

    pub fn materialize_all(&self) -> Vec<(String, Result<BuildSummary, CubeError>)> {
        self.specs
            .iter()
            .map(|s| (s.name.clone(), self.materialize(s)))
            .collect()
    }

    /// The newest stored version of a cube.
    pub fn open(&self, name: &str) -> Result<StoredCube, CubeError> {
        let spec = self.spec(name)?.clone();
        StoredCube::open_latest(&self.store, spec)
    }
}

/// A pinned version of a materialized cube.
#[derive(Debug)]
pub struct StoredCube {
    pub spec: CubeSpec,
    pub version: u64,
    pub path: PathBuf,
    pub file: File,
    pub len: u64,
}

impl StoredCube {
    pub fn open_latest(store: &SegmentStore, spec: CubeSpec) -> Result<Self, CubeError> {
        let table = spec.table_name();
        // A refresh may drop the version between listing and opening.
        for _ in 0..3 {
            let Some((version, path)) = store.latest_segment_path(&table).or_else(|e| match e {
                StoreError::UnknownTable(_) => Ok(None),
                e => Err(e),
            })?
            else {
                return Err(CubeError::NotBuilt { cube: spec.name });
            };
            match File::open(&path) {
                Ok(file) => {
                    let len = file.metadata().map_err(io_err("reading cube"))?.len();
                    return Ok(StoredCube {
                        spec,
                        version,
                        path,
                        file,
                        len,
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(io_err("opening cube")(e)),
            }
        }
        Err(CubeError::NotBuilt { cube: spec.name })
    }

    /// Every row of this version.
    pub fn rows(&self) -> Result<Vec<CubeRow>, CubeError> {
        let layout = CubeLayout::of(&self.spec);
        let mut bytes = vec![0u8; self.len as usize];
        read_exact_at(&self.file, &mut bytes, 0).map_err(io_err("reading cube"))?;
        let text = String::from_utf8(bytes).map_err(|e| CubeError::MalformedCubeFile {
            path: self.path.clone(),
            reason: e.to_string(),
        })?;
        text.lines()
            .map(|l| {
                layout
                    .parse_line(l)
                    .ok_or_else(|| CubeError::MalformedCubeFile {
                        path: self.path.clone(),
                        reason: format!("bad line `{l}`"),
                    })
            })
            .collect()
    }
}

#[cfg(unix)]
pub(crate) fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(not(unix))]
pub(crate) fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = file.try_clone()?;
    f.seek(SeekFrom::Start(offset))?;
    f.read_exact(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_grouping_ids() {
        // university_key, course_code, time_code, regtype_code
        assert_eq!(grouping_id(&[true, false, true, false]), 0b0101);
        assert_eq!(grouping_id(&[true, true, false, true]), 0b1011);
        assert_eq!(grouping_id(&[true; 4]), 15);
        assert_eq!(grouping_id(&[false; 4]), 0);
        assert_eq!(grouping_id_bits(5, 4), "0101");
        assert_eq!(grouping_id_bits(2, 3), "010");
    }

    #[test]
    fn conv_examples() {
        assert_eq!(conv("010", 2, 10).unwrap(), "2");
        assert_eq!(conv("1011", 2, 10).unwrap(), "11");
        assert_eq!(conv("15", 10, 2).unwrap(), "1111");
        assert_eq!(conv("0", 10, 2).unwrap(), "0");
        assert_eq!(conv("FF", 16, 10).unwrap(), "255");
        assert_eq!(conv("255", 10, 16).unwrap(), "ff");
        assert_eq!(
            conv("012", 2, 10),
            Err(ConvError::InvalidDigit {
                digit: '2',
                base: 2
            })
        );
        assert_eq!(conv("1", 1, 10), Err(ConvError::BadBase(1)));
        assert_eq!(conv("", 2, 10), Err(ConvError::Empty));
    }

    fn row(u: &str, attrs: &[&str], marks: &str) -> ProjectedRow {
        ProjectedRow {
            mandatory: vec![u.into()],
            attrs: attrs.iter().map(|s| s.to_string()).collect(),
            measures: vec![Some(marks.parse().unwrap())],
        }
    }

    #[test]
    fn two_attribute_cube_row_counts() {
        let rows = vec![row("U", &["a1", "b1"], "1"), row("U", &["a2", "b1"], "2")];
        let cube = aggregate_cube(&rows, 2, 1, &WorkerPool::sequential(), 1);
        let count = |mask| cube.iter().filter(|r| r.grouping_id == mask).count();
        assert_eq!(
            (count(0b11), count(0b10), count(0b01), count(0b00)),
            (2, 1, 2, 1)
        );
        assert_eq!(cube.len(), 6);
    }

    #[test]
    fn two_point_mean() {
        let rows = vec![row("U", &["a", "b"], "80"), row("U", &["a", "b"], "90")];
        let cube = aggregate_cube(&rows, 2, 1, &WorkerPool::sequential(), 2);
        let finest = cube.iter().find(|r| r.grouping_id == 0b11).unwrap();
        assert_eq!(finest.aggregates[0].mean(), Some(85.0));
        assert_eq!(finest.support_count, 2);
    }

    #[test]
    fn absent_measures_do_not_count() {
        let mut r = row("U", &["a"], "10");
        r.measures.push(None);
        let mut r2 = row("U", &["a"], "20");
        r2.measures.push(Some(Fixed::from_int(4)));
        let cube = aggregate_cube(&[r, r2], 1, 2, &WorkerPool::sequential(), 1);
        let top = &cube[0];
        assert_eq!(top.aggregates[0].count, 2);
        assert_eq!(top.aggregates[1].count, 1);
        assert_eq!(top.aggregates[1].mean(), Some(4.0));
    }

    #[test]
    fn mandatory_keys_never_mix() {
        let rows = vec![row("U1", &["a"], "10"), row("U2", &["a"], "30")];
        let cube = aggregate_cube(&rows, 1, 1, &WorkerPool::sequential(), 1);
        assert_eq!(cube.len(), 4);
        assert!(cube.iter().all(|r| r.support_count == 1));
    }

    #[test]
    fn cube_line_round_trip() {
        let spec = CubeSpec::student_performance();
        let layout = CubeLayout::of(&spec);
        let row = CubeRow {
            grouping_id: 0b110,
            mandatory: vec!["University1".into()],
            attrs: vec![None, Some("2016-17-SPR".into()), Some("R1".into())],
            aggregates: vec![
                Accumulator {
                    sum: "170.5".parse().unwrap(),
                    count: 2,
                },
                Accumulator {
                    sum: Fixed::ZERO,
                    count: 0,
                },
            ],
            support_count: 2,
        };
        let mut buf = Vec::new();
        row.to_line(&mut buf);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "6,University1,,2016-17-SPR,R1,170.5,2,85.25,0,0,,2\n");
        assert_eq!(layout.parse_line(text.trim_end()).unwrap(), row);
    }

    #[test]
    fn spec_validation() {
        assert!(CubeSpec::new("x", "F", &["a"], &[], &[("m", "o")], &[]).is_err());
        assert!(CubeSpec::new("x", "F", &["a"], &["a"], &[("m", "o")], &[]).is_err());
        assert!(CubeSpec::new("x", "F", &[], &["a"], &[], &[]).is_err());
        assert!(CubeSpec::new("bad name", "F", &[], &["a"], &[("m", "o")], &[]).is_err());
        assert_eq!(
            CubeSpec::student_performance().table_name(),
            "cube_student_performance"
        );
    }

    proptest! {
        #[test]
        fn grouping_id_is_a_bijection(k in 1usize..=8) {
            let mut seen = HashSet::new();
            for id in 0..(1u64 << k) {
                let p = presence(id, k);
                prop_assert_eq!(grouping_id(&p), id);
                prop_assert!(seen.insert(p));
            }
            prop_assert_eq!(seen.len(), 1 << k);
        }

        #[test]
        fn partitioning_never_changes_accumulators(
            raw in proptest::collection::vec((0u8..2, 0u8..3, 0u8..3, -5000i64..5000), 1..120),
            parts in 1usize..9,
            pool_size in 1usize..4,
        ) {
            let rows: Vec<ProjectedRow> = raw.iter().map(|(u, a, b, v)| ProjectedRow {
                mandatory: vec![format!("U{u}")],
                attrs: vec![format!("a{a}"), format!("b{b}")],
                measures: vec![Some(Fixed::from_units(*v as i128 * 10_007))],
            }).collect();
            let reference = aggregate_cube(&rows, 2, 1, &WorkerPool::sequential(), 1);
            let other = aggregate_cube(&rows, 2, 1, &WorkerPool::new(pool_size), parts);
            prop_assert_eq!(&reference, &other);
            let mut reversed = rows.clone();
            reversed.reverse();
            prop_assert_eq!(&reference, &aggregate_cube(&reversed, 2, 1, &WorkerPool::sequential(), parts));
        }
    }
}
