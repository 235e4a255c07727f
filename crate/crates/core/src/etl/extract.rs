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

//! Extract and transform of one split.

use crate::schema::{qualify_key, validate_row_shape, AttributeKind, TableDef, TenantKey};
use crate::store::Record;

use super::ErrorEntry;

/// Where each stored column comes from.
#[derive(Debug, Clone, Copy)]
enum Column {
    Tenant,
    Upload(usize),
    Qualified(usize),
}

/// Maps upload rows of one table to its stored layout for one tenant.
#[derive(Debug, Clone)]
pub struct RowTransformer {
    tenant: TenantKey,
    columns: Vec<Column>,
    /// Upload positions whose values get qualified, with their names.
    key_sources: Vec<(usize, String)>,
    report_key: usize,
}

impl RowTransformer {
    pub fn new(table: &TableDef, tenant: &TenantKey) -> Self {
        let upload: Vec<&str> = table.upload_attributes().map(|a| a.name.as_str()).collect();
        let position = |name: &str| {
            upload
                .iter()
                .position(|u| *u == name)
                .expect("validated catalog")
        };
        let mut key_sources: Vec<(usize, String)> = Vec::new();
        let columns = table
            .attributes
            .iter()
            .map(|a| {
                if a.kind == AttributeKind::TenantKey {
                    Column::Tenant
                } else if let Some(src) = &a.qualifies {
                    let i = position(src);
                    if !key_sources.iter().any(|(j, _)| *j == i) {
                        key_sources.push((i, src.clone()));
                    }
                    Column::Qualified(i)
                } else {
                    Column::Upload(position(&a.name))
                }
            })
            .collect();
        RowTransformer {
            tenant: tenant.clone(),
            columns,
            key_sources,
            report_key: table.report_key_column(),
        }
    }

    /// The tenant-provided key quoted in error reports for this row.
    pub fn report_key<S: AsRef<str>>(&self, fields: &[S]) -> Option<String> {
        fields
            .get(self.report_key)
            .map(|s| s.as_ref())
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    }

    fn check_keys<S: AsRef<str>>(&self, fields: &[S]) -> Result<(), String> {
        for (i, name) in &self.key_sources {
            if fields[*i].as_ref().is_empty() {
                return Err(format!("empty key field {name}"));
            }
        }
        Ok(())
    }

    /// Appends the stored form of a shape-valid row to `out`, LF terminated.
    pub fn write_row(&self, fields: &[&str], out: &mut Vec<u8>) -> Result<(), String> {
        self.check_keys(fields)?;
        for (n, col) in self.columns.iter().enumerate() {
            if n > 0 {
                out.push(b',');
            }
            match *col {
                Column::Tenant => out.extend_from_slice(self.tenant.as_str().as_bytes()),
                Column::Upload(i) => out.extend_from_slice(fields[i].as_bytes()),
                Column::Qualified(i) => {
                    out.extend_from_slice(self.tenant.as_str().as_bytes());
                    out.push(crate::schema::KEY_SEPARATOR as u8);
                    out.extend_from_slice(fields[i].as_bytes());
                }
            }
        }
        out.push(b'\n');
        Ok(())
    }

    /// Stored form of one upload record.
    pub fn transform_record(&self, record: &Record) -> Result<Record, String> {
        self.check_keys(&record.fields)?;
        let fields = self
            .columns
            .iter()
            .map(|col| match *col {
                Column::Tenant => self.tenant.as_str().to_string(),
                Column::Upload(i) => record.fields[i].clone(),
                Column::Qualified(i) => {
                    qualify_key(&self.tenant, &record.fields[i]).expect("checked non-empty")
                }
            })
            .collect();
        Ok(Record::new(record.line, fields))
    }
}

/// Lines of a split: `(1-based line within the split, text)`, with the
/// line terminator (LF or CRLF) removed.
pub(crate) fn split_lines(bytes: &[u8]) -> impl Iterator<Item = (u64, &[u8])> {
    let mut rest = bytes;
    let mut n = 0u64;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        let (line, tail) = match memchr::memchr(b'\n', rest) {
            Some(i) => (&rest[..i], &rest[i + 1..]),
            None => (rest, &rest[rest.len()..]),
        };
        rest = tail;
        n += 1;
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        Some((n, line))
    })
}

/// Outcome of parsing one line.
pub(crate) enum LineCheck<'a> {
    Valid(Vec<&'a str>),
    Invalid(ErrorEntry),
}

pub(crate) fn check_line<'a>(
    table: &TableDef,
    transformer: &RowTransformer,
    line_number: u64,
    line: &'a [u8],
) -> LineCheck<'a> {
    let Ok(text) = std::str::from_utf8(line) else {
        return LineCheck::Invalid(ErrorEntry {
            line_number,
            tenant_key_value: None,
            reason: "invalid utf-8".to_string(),
        });
    };
    let fields: Vec<&str> = text.split(',').collect();
    match validate_row_shape(table, &fields) {
        Ok(()) => LineCheck::Valid(fields),
        Err(e) => LineCheck::Invalid(ErrorEntry {
            line_number,
            tenant_key_value: transformer.report_key(&fields),
            reason: e.to_string(),
        }),
    }
}

/// Records and error entries from one split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extracted {
    pub records: Vec<Record>,
    pub errors: Vec<ErrorEntry>,
    /// Lines seen, header included.
    pub lines: u64,
}

/// Parses and shape-checks the lines of one record-aligned split.
///
/// `line_base` is the number of input lines before this split. The split
/// starting at offset zero must begin with the table's upload header; a
/// mismatch yields a single error entry for line 1 and nothing else.
pub fn extract(
    split: &[u8],
    starts_file: bool,
    line_base: u64,
    table: &TableDef,
    tenant: &TenantKey,
) -> Extracted {
    let transformer = RowTransformer::new(table, tenant);
    let mut out = Extracted::default();
    for (n, line) in split_lines(split) {
        out.lines = n;
        let line_number = line_base + n;
        if starts_file && n == 1 {
            if let Some(err) = check_header(table, line) {
                out.records.clear();
                out.errors = vec![err];
                return out;
            }
            continue;
        }
        match check_line(table, &transformer, line_number, line) {
            LineCheck::Valid(fields) => out.records.push(Record::new(
                line_number,
                fields.into_iter().map(str::to_string).collect(),
            )),
            LineCheck::Invalid(e) => out.errors.push(e),
        }
    }
    out
}

pub(crate) fn check_header(table: &TableDef, line: &[u8]) -> Option<ErrorEntry> {
    let expected = table.upload_header();
    if line == expected.as_bytes() {
        return None;
    }
    Some(ErrorEntry {
        line_number: 1,
        tenant_key_value: None,
        reason: format!("header mismatch: expected `{expected}`"),
    })
}

/// Qualifies the key and reference columns of extracted records.
///
/// Rows whose key fields are empty become error entries.
pub fn transform(
    records: &[Record],
    table: &TableDef,
    tenant: &TenantKey,
) -> (Vec<Record>, Vec<ErrorEntry>) {
    let transformer = RowTransformer::new(table, tenant);
    let mut out = Vec::with_capacity(records.len());
    let mut errors = Vec::new();
    for r in records {
        match transformer.transform_record(r) {
            Ok(t) => out.push(t),
            Err(reason) => errors.push(ErrorEntry {
                line_number: r.line,
                tenant_key_value: transformer.report_key(&r.fields),
                reason,
            }),
        }
    }
    (out, errors)
}
