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

//! Deterministic synthetic upload files.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::WarehouseSchema;

/// Fixed dimension values that generated facts refer to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionUniverse {
    pub courses: usize,
    pub times: usize,
    pub regtypes: usize,
    pub departments: usize,
    pub programs: usize,
}

impl Default for DimensionUniverse {
    fn default() -> Self {
        DimensionUniverse {
            courses: 40,
            times: 4,
            regtypes: 4,
            departments: 5,
            programs: 6,
        }
    }
}

impl DimensionUniverse {
    pub fn course_code(&self, i: usize) -> String {
        format!("C{i:05}")
    }

    /// Two terms per academic year starting 2016-17.
    pub fn time_code(&self, i: usize) -> String {
        format!(
            "{}-{}",
            self.academic_year(i),
            if i.is_multiple_of(2) { "SPR" } else { "FAL" }
        )
    }

    pub fn academic_year(&self, i: usize) -> String {
        let y = 2016 + i / 2;
        format!("{y}-{:02}", (y + 1) % 100)
    }

    pub fn regtype_code(&self, i: usize) -> String {
        format!("R{}", i + 1)
    }

    pub fn department_code(&self, i: usize) -> String {
        format!("D{:02}", i + 1)
    }

    pub fn program_code(&self, i: usize) -> String {
        format!("P{:02}", i + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetInfo {
    pub bytes: u64,
    pub rows: u64,
}

fn header(table: &str) -> io::Result<String> {
    WarehouseSchema::builtin()
        .table(table)
        .map(|t| t.upload_header())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))
}

fn grade(marks: u32) -> &'static str {
    match marks {
        80.. => "A",
        65..=79 => "B",
        50..=64 => "C",
        40..=49 => "D",
        _ => "F",
    }
}

fn fact_row(
    table: &str,
    row: u64,
    u: &DimensionUniverse,
    rng: &mut ChaCha8Rng,
) -> io::Result<String> {
    match table {
        "StudentPerformance" => {
            let marks_tenths: u32 = rng.random_range(0..=1000);
            Ok(format!(
                "S{row:09},{},{},{},{}.{},{},{}\n",
                u.course_code(rng.random_range(0..u.courses)),
                u.time_code(rng.random_range(0..u.times)),
                u.regtype_code(rng.random_range(0..u.regtypes)),
                marks_tenths / 10,
                marks_tenths % 10,
                rng.random_range(0..=100u32),
                grade(marks_tenths / 10),
            ))
        }
        "StudentCounts" => Ok(format!(
            "{},{},{},{}\n",
            u.program_code((row as usize) % u.programs),
            u.department_code((row as usize / u.programs) % u.departments),
            u.time_code(row as usize / (u.programs * u.departments)),
            rng.random_range(1..=400u32),
        )),
        other => Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("no generator for table {other}"),
        )),
    }
}

/// Writes a header plus random rows to `path`, stopping before the first row
/// that would push the file past `size` bytes.
pub fn gen_dataset(
    path: &Path,
    size: u64,
    table: &str,
    universe: &DimensionUniverse,
    seed: u64,
) -> io::Result<DatasetInfo> {
    let header = header(table)? + "\n";
    if size < header.len() as u64 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "size below header length",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(header.as_bytes())?;
    let mut bytes = header.len() as u64;
    let mut rows = 0;
    loop {
        let row = fact_row(table, rows, universe, &mut rng)?;
        if bytes + row.len() as u64 > size {
            break;
        }
        w.write_all(row.as_bytes())?;
        bytes += row.len() as u64;
        rows += 1;
    }
    w.flush()?;
    Ok(DatasetInfo { bytes, rows })
}

/// Writes StudentPerformance rows covering every (course, term, regtype)
/// combination `per_cell` times, so every cube group is populated.
pub fn gen_covering_facts(
    path: &Path,
    universe: &DimensionUniverse,
    per_cell: usize,
    seed: u64,
) -> io::Result<DatasetInfo> {
    let header = header("StudentPerformance")? + "\n";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(header.as_bytes())?;
    let mut bytes = header.len() as u64;
    let mut rows = 0u64;
    for c in 0..universe.courses {
        for t in 0..universe.times {
            for r in 0..universe.regtypes {
                for _ in 0..per_cell {
                    let marks_tenths: u32 = rng.random_range(0..=1000);
                    let line = format!(
                        "S{rows:09},{},{},{},{}.{},{},{}\n",
                        universe.course_code(c),
                        universe.time_code(t),
                        universe.regtype_code(r),
                        marks_tenths / 10,
                        marks_tenths % 10,
                        rng.random_range(0..=100u32),
                        grade(marks_tenths / 10),
                    );
                    w.write_all(line.as_bytes())?;
                    bytes += line.len() as u64;
                    rows += 1;
                }
            }
        }
    }
    w.flush()?;
    Ok(DatasetInfo { bytes, rows })
}

/// Writes one upload file per dimension of `universe` into `dir`.
pub fn write_dimension_files(
    dir: &Path,
    u: &DimensionUniverse,
) -> io::Result<Vec<(&'static str, PathBuf)>> {
    let mut out = Vec::new();
    let mut write = |table: &'static str, rows: Vec<String>| -> io::Result<()> {
        let path = dir.join(format!("{table}.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", header(table)?)?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        out.push((table, path));
        Ok(())
    };
    write(
        "Departments",
        (0..u.departments)
            .map(|i| format!("{},Department {}", u.department_code(i), i + 1))
            .collect(),
    )?;
    write(
        "Programs",
        (0..u.programs)
            .map(|i| {
                format!(
                    "{},Program {},{}",
                    u.program_code(i),
                    i + 1,
                    ["UG", "PG"][i % 2]
                )
            })
            .collect(),
    )?;
    write(
        "Courses",
        (0..u.courses)
            .map(|i| {
                format!(
                    "{},Course {},{},{}",
                    u.course_code(i),
                    i + 1,
                    3 + i % 2,
                    u.department_code(i % u.departments)
                )
            })
            .collect(),
    )?;
    write(
        "Times",
        (0..u.times)
            .map(|i| {
                format!(
                    "{},{},{}",
                    u.time_code(i),
                    u.academic_year(i),
                    if i % 2 == 0 { "Spring" } else { "Fall" }
                )
            })
            .collect(),
    )?;
    write(
        "Regtypes",
        (0..u.regtypes)
            .map(|i| format!("{},Registration type {}", u.regtype_code(i), i + 1))
            .collect(),
    )?;
    Ok(out)
}
