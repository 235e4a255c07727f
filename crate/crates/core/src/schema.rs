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

//! The multi-tenant snowflake schema and its key-qualification rule.
//!
//! Every table carries the tenant's `university_key`. Tenant-provided
//! identifiers are stored twice: as uploaded (the natural key or code column)
//! and qualified with the tenant prefix (the dimension key or reference
//! column), so joins never cross tenants and reports never need to strip
//! prefixes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use crate::decimal::{DecimalError, Fixed};

/// Separator between the tenant prefix and a tenant-provided key.
pub const KEY_SEPARATOR: char = '_';

/// Text reserved for rolled-up attributes in rendered reports. Uploads may
/// not use it as a key or code value.
pub const RESERVED_VALUE: &str = "ALL";

/// Name of the tenant-key attribute present in every table.
pub const TENANT_ATTRIBUTE: &str = "university_key";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("invalid tenant key `{value}`: {reason}")]
    InvalidTenant { value: String, reason: &'static str },
    #[error("empty key value")]
    EmptyKey,
    #[error("catalog violation: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    TenantKey,
    DimensionKey,
    NaturalKey,
    Reference,
    Code,
    Measure,
    Descriptive,
}

impl AttributeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::TenantKey => "tenant-key",
            AttributeKind::DimensionKey => "dimension-key",
            AttributeKind::NaturalKey => "natural-key",
            AttributeKind::Reference => "reference",
            AttributeKind::Code => "code",
            AttributeKind::Measure => "measure",
            AttributeKind::Descriptive => "descriptive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueClass {
    Text,
    Integer,
    Decimal,
}

impl ValueClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueClass::Text => "text",
            ValueClass::Integer => "integer",
            ValueClass::Decimal => "decimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttributeKind,
    pub value_class: ValueClass,
    /// Target dimension for `Reference` attributes.
    pub references: Option<String>,
    /// Uploaded attribute whose value this attribute qualifies. Set for
    /// dimension keys and references; such attributes are derived during
    /// transform and do not appear in the upload format.
    pub qualifies: Option<String>,
}

impl AttributeDef {
    fn new(name: &str, kind: AttributeKind, value_class: ValueClass) -> Self {
        AttributeDef {
            name: name.to_string(),
            kind,
            value_class,
            references: None,
            qualifies: None,
        }
    }

    /// Whether this attribute is part of the tenant's upload format.
    pub fn is_uploaded(&self) -> bool {
        self.kind != AttributeKind::TenantKey && self.qualifies.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableClass {
    Dimension,
    Fact,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDef {
    pub name: String,
    pub class: TableClass,
    /// Stored column order.
    pub attributes: Vec<AttributeDef>,
    /// Attributes identifying one logical row across batches.
    pub natural_key: Vec<String>,
}

impl TableDef {
    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Attributes of the upload CSV, in header order.
    pub fn upload_attributes(&self) -> impl Iterator<Item = &AttributeDef> {
        self.attributes.iter().filter(|a| a.is_uploaded())
    }

    pub fn upload_arity(&self) -> usize {
        self.upload_attributes().count()
    }

    /// The canonical CSV header tenants must send.
    pub fn upload_header(&self) -> String {
        self.upload_attributes()
            .map(|a| a.name.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Stored column positions of the natural key.
    pub fn natural_key_indices(&self) -> Vec<usize> {
        self.natural_key
            .iter()
            .map(|n| self.attribute_index(n).expect("natural key validated"))
            .collect()
    }

    /// Upload column quoted in error reports as the tenant-provided key:
    /// the natural key of a dimension, the first uploaded column of a fact.
    pub fn report_key_column(&self) -> usize {
        self.upload_attributes()
            .position(|a| a.kind == AttributeKind::NaturalKey)
            .unwrap_or(0)
    }

    /// The dimension-key attribute, for dimension tables.
    pub fn dimension_key(&self) -> Option<&AttributeDef> {
        self.attributes
            .iter()
            .find(|a| a.kind == AttributeKind::DimensionKey)
    }

    pub fn references(&self) -> impl Iterator<Item = &AttributeDef> {
        self.attributes
            .iter()
            .filter(|a| a.kind == AttributeKind::Reference)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarehouseSchema {
    tables: BTreeMap<String, TableDef>,
    pub version: u64,
}

impl WarehouseSchema {
    /// Builds a schema from table definitions, checking every catalog invariant.
    pub fn new(tables: Vec<TableDef>, version: u64) -> Result<Self, SchemaError> {
        let schema = WarehouseSchema {
            tables: tables.into_iter().map(|t| (t.name.clone(), t)).collect(),
            version,
        };
        schema.check()?;
        Ok(schema)
    }

    /// The shipped academic data mart: eight dimensions, three facts.
    pub fn builtin() -> Self {
        use AttributeKind::*;
        use ValueClass::*;

        let tenant = || AttributeDef::new(TENANT_ATTRIBUTE, TenantKey, Text);
        let dim_key = |name: &str, from: &str| AttributeDef {
            qualifies: Some(from.to_string()),
            ..AttributeDef::new(name, DimensionKey, Text)
        };
        let reference = |name: &str, table: &str, from: &str| AttributeDef {
            references: Some(table.to_string()),
            qualifies: Some(from.to_string()),
            ..AttributeDef::new(name, Reference, Text)
        };
        let attr = AttributeDef::new;

        let dimension = |name: &str, key: &str, natural: &str, rest: Vec<AttributeDef>| {
            let mut attributes = vec![
                tenant(),
                dim_key(key, natural),
                attr(natural, NaturalKey, Text),
            ];
            attributes.extend(rest);
            TableDef {
                name: name.to_string(),
                class: TableClass::Dimension,
                attributes,
                natural_key: vec![TENANT_ATTRIBUTE.to_string(), natural.to_string()],
            }
        };
        let fact = |name: &str, attributes: Vec<AttributeDef>, natural: &[&str]| TableDef {
            name: name.to_string(),
            class: TableClass::Fact,
            attributes,
            natural_key: std::iter::once(TENANT_ATTRIBUTE)
                .chain(natural.iter().copied())
                .map(String::from)
                .collect(),
        };

        let tables = vec![
            dimension(
                "Universities",
                "university_dim_key",
                "university_id",
                vec![
                    attr("university_name", Descriptive, Text),
                    attr("city", Descriptive, Text),
                ],
            ),
            dimension(
                "Departments",
                "department_key",
                "department_code",
                vec![attr("department_name", Descriptive, Text)],
            ),
            dimension(
                "Programs",
                "program_key",
                "program_code",
                vec![
                    attr("program_name", Descriptive, Text),
                    attr("level", Descriptive, Text),
                ],
            ),
            dimension(
                "Courses",
                "course_key",
                "course_code",
                vec![
                    attr("course_title", Descriptive, Text),
                    attr("credits", Descriptive, Integer),
                    reference("department_key", "Departments", "department_code"),
                    attr("department_code", Code, Text),
                ],
            ),
            dimension(
                "Students",
                "student_key",
                "student_id",
                vec![
                    attr("student_name", Descriptive, Text),
                    attr("gender", Descriptive, Text),
                    attr("admission_year", Descriptive, Integer),
                ],
            ),
            dimension(
                "Teachers",
                "teacher_key",
                "teacher_id",
                vec![
                    attr("teacher_name", Descriptive, Text),
                    attr("designation", Descriptive, Text),
                ],
            ),
            dimension(
                "Times",
                "time_key",
                "time_code",
                vec![
                    attr("academic_year", Code, Text),
                    attr("term", Descriptive, Text),
                ],
            ),
            dimension(
                "Regtypes",
                "regtype_key",
                "regtype_code",
                vec![attr("regtype_description", Descriptive, Text)],
            ),
            fact(
                "StudentPerformance",
                vec![
                    tenant(),
                    reference("student_key", "Students", "student_id"),
                    attr("student_id", Code, Text),
                    reference("course_key", "Courses", "course_code"),
                    attr("course_code", Code, Text),
                    reference("time_key", "Times", "time_code"),
                    attr("time_code", Code, Text),
                    reference("regtype_key", "Regtypes", "regtype_code"),
                    attr("regtype_code", Code, Text),
                    attr("marks", Measure, Decimal),
                    attr("percent_attended", Measure, Decimal),
                    attr("grade", Descriptive, Text),
                ],
                &["student_id", "course_code", "time_code"],
            ),
            fact(
                "TeachingQuality",
                vec![
                    tenant(),
                    reference("teacher_key", "Teachers", "teacher_id"),
                    attr("teacher_id", Code, Text),
                    reference("course_key", "Courses", "course_code"),
                    attr("course_code", Code, Text),
                    reference("time_key", "Times", "time_code"),
                    attr("time_code", Code, Text),
                    attr("rating", Measure, Decimal),
                ],
                &["teacher_id", "course_code", "time_code"],
            ),
            fact(
                "StudentCounts",
                vec![
                    tenant(),
                    reference("program_key", "Programs", "program_code"),
                    attr("program_code", Code, Text),
                    reference("department_key", "Departments", "department_code"),
                    attr("department_code", Code, Text),
                    reference("time_key", "Times", "time_code"),
                    attr("time_code", Code, Text),
                    attr("head_count", Measure, Integer),
                ],
                &["program_code", "department_code", "time_code"],
            ),
        ];
        WarehouseSchema::new(tables, 1).expect("builtin catalog is consistent")
    }

    pub fn table(&self, name: &str) -> Result<&TableDef, SchemaError> {
        self.tables
            .get(name)
            .ok_or_else(|| SchemaError::UnknownTable(name.to_string()))
    }

    pub fn tables(&self) -> impl Iterator<Item = &TableDef> {
        self.tables.values()
    }

    pub fn dimensions(&self) -> impl Iterator<Item = &TableDef> {
        self.tables().filter(|t| t.class == TableClass::Dimension)
    }

    pub fn facts(&self) -> impl Iterator<Item = &TableDef> {
        self.tables().filter(|t| t.class == TableClass::Fact)
    }

    fn check(&self) -> Result<(), SchemaError> {
        let fail = |msg: String| Err(SchemaError::Catalog(msg));
        for table in self.tables() {
            let count = |kind| table.attributes.iter().filter(|a| a.kind == kind).count();
            if count(AttributeKind::TenantKey) != 1 {
                return fail(format!("{} must have exactly one tenant key", table.name));
            }
            match table.class {
                TableClass::Dimension => {
                    if count(AttributeKind::DimensionKey) != 1
                        || count(AttributeKind::NaturalKey) != 1
                    {
                        return fail(format!(
                            "{} must have one dimension key and one natural key",
                            table.name
                        ));
                    }
                }
                TableClass::Fact => {
                    if count(AttributeKind::Reference) == 0 || count(AttributeKind::Measure) == 0 {
                        return fail(format!(
                            "{} needs at least one reference and one measure",
                            table.name
                        ));
                    }
                }
            }
            for attr in &table.attributes {
                if table
                    .attributes
                    .iter()
                    .filter(|a| a.name == attr.name)
                    .count()
                    > 1
                {
                    return fail(format!("{}.{} is declared twice", table.name, attr.name));
                }
                if let Some(source) = &attr.qualifies {
                    match table.attribute(source) {
                        Some(src) if src.is_uploaded() => {}
                        _ => {
                            return fail(format!(
                                "{}.{} qualifies unknown upload column {source}",
                                table.name, attr.name
                            ))
                        }
                    }
                }
                match (attr.kind, &attr.references) {
                    (AttributeKind::Reference, Some(target)) => match self.tables.get(target) {
                        Some(t) if t.class == TableClass::Dimension => {}
                        _ => {
                            return fail(format!(
                                "{}.{} references {target}, which is not a dimension",
                                table.name, attr.name
                            ))
                        }
                    },
                    (AttributeKind::Reference, None) => {
                        return fail(format!("{}.{} has no target", table.name, attr.name))
                    }
                    (AttributeKind::DimensionKey, _) if attr.qualifies.is_none() => {
                        return fail(format!("{}.{} qualifies nothing", table.name, attr.name))
                    }
                    _ => {}
                }
            }
            for key in &table.natural_key {
                if table.attribute(key).is_none() {
                    return fail(format!("{} natural key names unknown {key}", table.name));
                }
            }
        }
        self.check_acyclic()
    }

    fn check_acyclic(&self) -> Result<(), SchemaError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Visiting,
            Done,
        }
        fn visit<'a>(
            schema: &'a WarehouseSchema,
            name: &'a str,
            marks: &mut HashMap<&'a str, Mark>,
        ) -> Result<(), SchemaError> {
            match marks.get(name) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Visiting) => {
                    return Err(SchemaError::Catalog(format!(
                        "reference cycle through {name}"
                    )))
                }
                None => {}
            }
            marks.insert(name, Mark::Visiting);
            for r in schema.tables[name].references() {
                visit(schema, r.references.as_deref().unwrap_or_default(), marks)?;
            }
            marks.insert(name, Mark::Done);
            Ok(())
        }
        let mut marks = HashMap::new();
        for name in self.tables.keys() {
            visit(self, name, &mut marks)?;
        }
        Ok(())
    }

    /// Human-readable reference of every table and its upload format.
    pub fn reference_document(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Warehouse schema (version {})\n", self.version);
        for table in self.dimensions().chain(self.facts()) {
            let class = match table.class {
                TableClass::Dimension => "dimension",
                TableClass::Fact => "fact",
            };
            let _ = writeln!(out, "## {} ({class})\n", table.name);
            let _ = writeln!(out, "| attribute | kind | class | references | qualifies |");
            let _ = writeln!(out, "|---|---|---|---|---|");
            for a in &table.attributes {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    a.name,
                    a.kind.as_str(),
                    a.value_class.as_str(),
                    a.references.as_deref().unwrap_or(""),
                    a.qualifies.as_deref().unwrap_or(""),
                );
            }
            let _ = writeln!(
                out,
                "\nUpload CSV header:\n\n    {}\n",
                table.upload_header()
            );
            let _ = writeln!(out, "Natural key: {}\n", table.natural_key.join(", "));
        }
        out
    }
}

/// A registered tenant's prefix, e.g. `University1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(transparent)]
pub struct TenantKey(String);

impl TenantKey {
    pub fn new(value: impl Into<String>) -> Result<Self, SchemaError> {
        let value = value.into();
        let reason = if value.is_empty() {
            Some("empty")
        } else if value.contains(KEY_SEPARATOR) {
            Some("contains the key separator")
        } else if value.contains([',', '\n', '\r']) {
            Some("contains a delimiter character")
        } else if value == RESERVED_VALUE {
            Some("reserved value")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(SchemaError::InvalidTenant { value, reason }),
            None => Ok(TenantKey(value)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TenantKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for TenantKey {
    type Err = SchemaError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TenantKey::new(s)
    }
}

/// Prefixes a tenant-provided key with the tenant key.
pub fn qualify_key(tenant: &TenantKey, raw_key: &str) -> Result<String, SchemaError> {
    if raw_key.is_empty() {
        return Err(SchemaError::EmptyKey);
    }
    let mut out = String::with_capacity(tenant.0.len() + 1 + raw_key.len());
    out.push_str(&tenant.0);
    out.push(KEY_SEPARATOR);
    out.push_str(raw_key);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShapeReason {
    Arity { expected: usize, found: usize },
    NotNumeric,
    NotInteger,
    TooPrecise,
    Reserved,
}

impl fmt::Display for ShapeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeReason::Arity { expected, found } => {
                write!(f, "arity: expected {expected} fields but found {found}")
            }
            ShapeReason::NotNumeric => f.write_str("not-numeric"),
            ShapeReason::NotInteger => f.write_str("not-integer"),
            ShapeReason::TooPrecise => f.write_str("too-precise"),
            ShapeReason::Reserved => write!(f, "reserved value {RESERVED_VALUE}"),
        }
    }
}

/// A row that does not match a table's upload format.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}", self.describe())]
pub struct ShapeError {
    /// Upload column position, when a single field is at fault.
    pub index: Option<usize>,
    pub field: Option<String>,
    pub reason: ShapeReason,
}

impl ShapeError {
    fn describe(&self) -> String {
        match &self.field {
            Some(field) => format!("{field}: {}", self.reason),
            None => self.reason.to_string(),
        }
    }
}

/// A typed upload field. Empty fields parse to `Absent`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Absent,
    Text(String),
    Integer(i64),
    Decimal(Fixed),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Absent => Ok(()),
            Value::Text(s) => f.write_str(s),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Decimal(d) => write!(f, "{d}"),
        }
    }
}

fn parse_field(attr: &AttributeDef, index: usize, raw: &str) -> Result<Value, ShapeError> {
    let err = |reason| ShapeError {
        index: Some(index),
        field: Some(attr.name.clone()),
        reason,
    };
    if raw.is_empty() {
        return Ok(Value::Absent);
    }
    match attr.value_class {
        ValueClass::Text => {
            if matches!(attr.kind, AttributeKind::NaturalKey | AttributeKind::Code)
                && raw == RESERVED_VALUE
            {
                return Err(err(ShapeReason::Reserved));
            }
            Ok(Value::Text(raw.to_string()))
        }
        ValueClass::Integer => raw
            .parse::<i64>()
            .map(Value::Integer)
            .map_err(|_| err(ShapeReason::NotInteger)),
        ValueClass::Decimal => raw.parse::<Fixed>().map(Value::Decimal).map_err(|e| {
            err(match e {
                DecimalError::TooPrecise => ShapeReason::TooPrecise,
                _ => ShapeReason::NotNumeric,
            })
        }),
    }
}

fn check_arity(table: &TableDef, found: usize) -> Result<(), ShapeError> {
    let expected = table.upload_arity();
    if found != expected {
        return Err(ShapeError {
            index: None,
            field: None,
            reason: ShapeReason::Arity { expected, found },
        });
    }
    Ok(())
}

/// Checks one upload row against the table's upload format.
pub fn validate_row_shape<S: AsRef<str>>(
    table: &TableDef,
    raw_fields: &[S],
) -> Result<(), ShapeError> {
    check_arity(table, raw_fields.len())?;
    for (i, (attr, raw)) in table.upload_attributes().zip(raw_fields).enumerate() {
        let raw = raw.as_ref();
        // Text fields other than keys and codes accept anything.
        if attr.value_class == ValueClass::Text
            && !matches!(attr.kind, AttributeKind::NaturalKey | AttributeKind::Code)
        {
            continue;
        }
        parse_field(attr, i, raw)?;
    }
    Ok(())
}

/// Validates and parses one upload row into typed values.
pub fn parse_row<S: AsRef<str>>(
    table: &TableDef,
    raw_fields: &[S],
) -> Result<Vec<Value>, ShapeError> {
    check_arity(table, raw_fields.len())?;
    table
        .upload_attributes()
        .zip(raw_fields)
        .enumerate()
        .map(|(i, (attr, raw))| parse_field(attr, i, raw.as_ref()))
        .collect()
}
