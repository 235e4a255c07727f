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

//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 1 4 11`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unimart_core::bench::{self, remove_outliers, BenchPlan};
use unimart_core::cube::{
    aggregate_cube, grouping_id, grouping_id_bits, presence, CubeEngine, ProjectedRow,
};
use unimart_core::decimal::Fixed;
use unimart_core::etl::{mapper_count, split_size, EtlMode, Pipeline, SplitConfig};
use unimart_core::olap::{OlapEngine, ReportDef};
use unimart_core::parallel::{available_parallelism, WorkerPool};
use unimart_core::store::{Dedupe, StagedFile};
use unimart_core::{SegmentStore, TenantContext, TenantKey, WarehouseSchema};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/cli");
const BIN: &str = env!("CARGO_BIN_EXE_unimart");
const MIB: u64 = 1 << 20;

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 11] = [
        (1, "split math", split_math),
        (2, "grouping_id conformance", grouping_ids),
        (3, "cube equals group-by oracle", cube_oracle),
        (4, "worked report query", worked_query),
        (5, "tenant isolation", tenant_isolation),
        (6, "etl all-or-nothing", planted_errors),
        (7, "etl scalability shape", etl_shape),
        (8, "olap scalability shape", olap_shape),
        (9, "constant-time load", constant_time_load),
        (10, "outlier removal oracle", outlier_oracle),
        (11, "cli round trip", cli_round_trip),
    ];
    let selected: BTreeSet<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (verdict, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{verdict} criterion {n:>2} {name}: {detail} [{secs:.2}s]");
    }
    println!("acceptance: {} of {ran} passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn split_math() -> Result<String, String> {
    let start = Instant::now();
    let kib: Vec<u64> = (0..=10).map(|e| 1024u64 << e).collect();
    let inputs: Vec<u64> = [
        1,
        1023,
        1024,
        1025,
        3 * MIB / 2,
        2 * MIB,
        2 * MIB + 1,
        64 * MIB - 1,
        64 * MIB,
        2 << 30,
    ]
    .into_iter()
    .collect();
    let (mut valid, mut rejected) = (0, 0);
    for &s_min in &kib {
        for &s_max in &kib {
            for &s_b in &kib {
                let cfg = match SplitConfig::new(s_min, s_max, s_b) {
                    Ok(cfg) => cfg,
                    Err(_) => {
                        ensure(s_min > s_max, || {
                            format!("rejected valid ({s_min},{s_max},{s_b})")
                        })?;
                        rejected += 1;
                        continue;
                    }
                };
                ensure(s_min <= s_max, || {
                    format!("accepted s_min > s_max ({s_min},{s_max})")
                })?;
                // Clamp of the block size into [s_min, s_max].
                let want = if s_b < s_min {
                    s_min
                } else if s_b > s_max {
                    s_max
                } else {
                    s_b
                };
                let got = split_size(&cfg);
                ensure(got == want, || {
                    format!("split_size({s_min},{s_max},{s_b}) = {got}, want {want}")
                })?;
                for &s_ip in &inputs {
                    // Exact in f64: every operand is below 2^53.
                    let n = ((s_ip as f64) / (want as f64)).ceil().max(1.0) as u64;
                    let m = mapper_count(s_ip, want);
                    ensure(m == n, || {
                        format!("mapper_count({s_ip},{want}) = {m}, want {n}")
                    })?;
                }
                valid += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || {
        format!("grid took {elapsed:?}")
    })?;
    Ok(format!(
        "{valid} configurations exact, {rejected} with s_min > s_max rejected"
    ))
}

// ---------------------------------------------------------------- 2

fn grouping_ids() -> Result<String, String> {
    // Attributes: university, course, time, regtype.
    let course_regtype_rolled = grouping_id(&[true, false, true, false]);
    let time_rolled = grouping_id(&[true, true, false, true]);
    ensure(grouping_id_bits(course_regtype_rolled, 4) == "0101", || {
        format!("got {course_regtype_rolled}")
    })?;
    ensure(grouping_id_bits(time_rolled, 4) == "1011", || {
        format!("got {time_rolled}")
    })?;
    for k in 1..=8usize {
        let mut seen = BTreeSet::new();
        for bits in 0..(1u32 << k) {
            let present: Vec<bool> = (0..k)
                .map(|j| (bits / 2u32.pow(j as u32)) % 2 == 1)
                .collect();
            let want: u64 = present
                .iter()
                .enumerate()
                .filter(|(_, p)| **p)
                .map(|(j, _)| 2u64.pow(j as u32))
                .sum();
            let id = grouping_id(&present);
            ensure(id == want, || format!("k={k} {present:?}: {id} != {want}"))?;
            ensure(presence(id, k) == present, || {
                format!("k={k} id {id} does not invert")
            })?;
            ensure(id < 1 << k && seen.insert(id), || {
                format!("k={k} id {id} repeated or out of range")
            })?;
        }
    }
    Ok("0101 and 1011 reproduced; bijective for k = 1..8".into())
}

// ---------------------------------------------------------------- 3

type Fact = (String, Vec<String>, Option<i64>);
/// (mask, tenant, kept attribute values) -> (present values, support).
type Groups = BTreeMap<(u64, String, Vec<Option<String>>), (Vec<f64>, u64)>;

fn cube_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(20261016);
    let pool = WorkerPool::new(available_parallelism().max(2));
    let mut checked = 0usize;
    for round in 0..100 {
        let k = rng.random_range(1..=4usize);
        let n = rng.random_range(1..=500);
        let facts: Vec<Fact> = (0..n)
            .map(|_| {
                let tenant = ["UnivA", "UnivB"][rng.random_range(0..2)].to_string();
                let attrs = (0..k)
                    .map(|j| format!("a{j}v{}", rng.random_range(0..4)))
                    .collect();
                let cents =
                    (rng.random_range(0..8) > 0).then(|| rng.random_range(-50_000..150_000));
                (tenant, attrs, cents)
            })
            .collect();
        let rows: Vec<ProjectedRow> = facts
            .iter()
            .map(|(t, a, c)| ProjectedRow {
                mandatory: vec![t.clone()],
                attrs: a.clone(),
                measures: vec![c.map(|c| Fixed::from_units(c as i128 * 10_000))],
            })
            .collect();
        let cube = aggregate_cube(&rows, k, 1, &pool, rng.random_range(1..8));

        // Brute force in floating point: (mask, tenant, kept values) -> values.
        let mut groups: Groups = BTreeMap::new();
        for mask in 0..(1u64 << k) {
            for (t, attrs, cents) in &facts {
                let key: Vec<Option<String>> = attrs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (mask & (1 << j) != 0).then(|| v.clone()))
                    .collect();
                let e = groups.entry((mask, t.clone(), key)).or_default();
                if let Some(c) = cents {
                    e.0.push(*c as f64 / 100.0);
                }
                e.1 += 1;
            }
        }
        ensure(cube.len() == groups.len(), || {
            format!(
                "round {round}: {} rows, oracle {}",
                cube.len(),
                groups.len()
            )
        })?;
        for r in &cube {
            let key = (r.grouping_id, r.mandatory[0].clone(), r.attrs.clone());
            let (values, support) = groups
                .get(&key)
                .ok_or_else(|| format!("round {round}: stray group {key:?}"))?;
            ensure(r.support_count == *support, || {
                format!("round {round}: support of {key:?}")
            })?;
            ensure(r.aggregates[0].count == values.len() as u64, || {
                format!("round {round}: count of {key:?}")
            })?;
            match r.aggregates[0].mean() {
                None => ensure(values.is_empty(), || {
                    format!("round {round}: missing mean for {key:?}")
                })?,
                Some(mean) => {
                    let want = values.iter().sum::<f64>() / values.len() as f64;
                    let rel = (mean - want).abs() / want.abs().max(f64::MIN_POSITIVE);
                    ensure(rel <= 1e-9 || (mean - want).abs() < 1e-12, || {
                        format!("round {round}: {key:?} mean {mean} vs {want}")
                    })?;
                }
            }
            checked += 1;
        }
    }
    Ok(format!(
        "100 fact sets, {checked} cube rows agree within 1e-9"
    ))
}

// ---------------------------------------------------------------- 4, 5 shared setup

struct Env {
    dir: tempfile::TempDir,
    pipeline: Pipeline,
    cubes: Arc<CubeEngine>,
    olap: OlapEngine,
    files: usize,
}

impl Env {
    fn new(chunk: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(
            SegmentStore::open(dir.path().join("wh"), Arc::new(WarehouseSchema::builtin()))
                .unwrap(),
        );
        store.init_layout().unwrap();
        let pool = WorkerPool::new(available_parallelism().max(2));
        let cubes = Arc::new(CubeEngine::with_builtin_cubes(
            Arc::clone(&store),
            pool.clone(),
        ));
        Env {
            pipeline: Pipeline::new(store, pool.clone()),
            olap: OlapEngine::new(Arc::clone(&cubes), pool).with_scan_chunk(chunk),
            cubes,
            dir,
            files: 0,
        }
    }

    fn load_file(&self, table: &str, tenant: &str, path: &Path) -> Result<u64, String> {
        let r = self
            .pipeline
            .run_etl(
                path,
                table,
                &TenantKey::new(tenant).unwrap(),
                EtlMode::Case2,
                &SplitConfig::default(),
            )
            .map_err(|e| e.to_string())?;
        r.segment()
            .map(|s| s.batch_id)
            .ok_or_else(|| format!("{table} rejected: {:?}", r.report()))
    }

    fn load(&mut self, table: &str, tenant: &str, rows: &[String]) -> Result<u64, String> {
        self.files += 1;
        let header = self
            .pipeline
            .store()
            .schema()
            .table(table)
            .unwrap()
            .upload_header();
        let path = self.dir.path().join(format!("{}.csv", self.files));
        std::fs::write(&path, format!("{header}\n{}\n", rows.join("\n"))).unwrap();
        self.load_file(table, tenant, &path)
    }

    fn materialize(&self) -> Result<(), String> {
        for (name, r) in self.cubes.materialize_all() {
            r.map_err(|e| format!("{name}: {e}"))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- 4

fn worked_query() -> Result<String, String> {
    let env = Env::new(64);
    for t in [
        "Departments",
        "Programs",
        "Courses",
        "Times",
        "Regtypes",
        "StudentPerformance",
        "StudentCounts",
    ] {
        env.load_file(
            t,
            "University1",
            &Path::new(FIXTURES).join(format!("{t}.csv")),
        )?;
    }
    env.materialize()?;

    // Hand computation straight from the upload file.
    let text = std::fs::read_to_string(Path::new(FIXTURES).join("StudentPerformance.csv")).unwrap();
    let mut by_regtype: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[2] == "2016-17-SPR" {
            by_regtype
                .entry(f[3].to_string())
                .or_default()
                .push(f[4].parse().unwrap());
        }
    }
    let all: Vec<f64> = by_regtype.values().flatten().copied().collect();
    let mean = |v: &[f64]| format!("{:.4}", v.iter().sum::<f64>() / v.len() as f64);
    let mut want: Vec<Vec<String>> = by_regtype
        .iter()
        .map(|(r, v)| vec!["2016-17-SPR".to_string(), r.clone(), mean(v)])
        .collect();
    want.push(vec!["2016-17-SPR".into(), "ALL".into(), mean(&all)]);

    let def = ReportDef::find("avg_marks_by_regtype").map_err(|e| e.to_string())?;
    let masks: BTreeSet<u64> = def.masks.iter().copied().collect();
    ensure(masks == BTreeSet::from([0b110, 0b010]), || {
        format!("masks {:?}", def.masks)
    })?;
    let ctx = TenantContext::new(TenantKey::new("University1").unwrap(), "acceptance");
    let r = env
        .olap
        .generate_report(
            &ctx,
            "avg_marks_by_regtype",
            &[("time_code".into(), "2016-17-SPR".into())],
        )
        .map_err(|e| e.to_string())?;
    ensure(r.rows.len() == 4 && want.len() == 4, || {
        format!("{} rows", r.rows.len())
    })?;
    ensure(r.rows == want, || {
        format!("got {:?}, want {:?}", r.rows, want)
    })?;
    let values: Vec<&str> = r.rows.iter().map(|row| row[2].as_str()).collect();
    Ok(format!(
        "3 regtype rows and 1 summary row: {}",
        values.join(" ")
    ))
}

// ---------------------------------------------------------------- 5

const TERMS: [&str; 2] = ["2016-17-SPR", "2016-17-FAL"];

fn random_tenant(
    env: &mut Env,
    tenant: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(&'static str, u64)>, String> {
    let courses: Vec<String> = (1..=rng.random_range(1..5))
        .map(|i| format!("CS{i:03}"))
        .collect();
    let regtypes: Vec<String> = (1..=rng.random_range(1..4))
        .map(|i| format!("R{i}"))
        .collect();
    let mut batches = vec![
        (
            "Departments",
            env.load("Departments", tenant, &["D1,Dept".into(), "D2,Dept".into()])?,
        ),
        (
            "Programs",
            env.load("Programs", tenant, &["P1,Prog,UG".into()])?,
        ),
        (
            "Courses",
            env.load(
                "Courses",
                tenant,
                &courses
                    .iter()
                    .map(|c| format!("{c},T,3,D1"))
                    .collect::<Vec<_>>(),
            )?,
        ),
        (
            "Times",
            env.load(
                "Times",
                tenant,
                &TERMS
                    .iter()
                    .map(|t| format!("{t},2016-17,X"))
                    .collect::<Vec<_>>(),
            )?,
        ),
        (
            "Regtypes",
            env.load(
                "Regtypes",
                tenant,
                &regtypes
                    .iter()
                    .map(|r| format!("{r},X"))
                    .collect::<Vec<_>>(),
            )?,
        ),
    ];
    let facts: Vec<String> = (0..rng.random_range(1..80))
        .map(|i| {
            format!(
                "S{i},{},{},{},{}.{},{},B",
                courses[rng.random_range(0..courses.len())],
                TERMS[rng.random_range(0..2)],
                regtypes[rng.random_range(0..regtypes.len())],
                rng.random_range(0..100),
                rng.random_range(0..10),
                rng.random_range(0..=100)
            )
        })
        .collect();
    batches.push((
        "StudentPerformance",
        env.load("StudentPerformance", tenant, &facts)?,
    ));
    let counts = vec![
        format!("P1,D1,{},{}", TERMS[0], rng.random_range(1..500)),
        format!("P1,D2,{},{}", TERMS[1], rng.random_range(1..500)),
    ];
    batches.push(("StudentCounts", env.load("StudentCounts", tenant, &counts)?));
    Ok(batches)
}

fn serialized_reports(env: &Env, tenant: &str) -> Result<Vec<String>, String> {
    let ctx = TenantContext::new(TenantKey::new(tenant).unwrap(), "acceptance");
    let mut out = Vec::new();
    for def in ReportDef::catalog() {
        let values: &[&str] = if def.params[0] == "academic_year" {
            &["2016-17"]
        } else {
            &TERMS
        };
        for v in values {
            let r = env
                .olap
                .generate_report(&ctx, &def.id, &[(def.params[0].clone(), v.to_string())])
                .map_err(|e| e.to_string())?;
            out.push(r.to_csv());
            out.push(r.to_table());
        }
    }
    Ok(out)
}

fn tenant_isolation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut bytes = 0;
    for round in 0..20 {
        let mut env = Env::new(rng.random_range(32..2048));
        let (a, b) = if rng.random_bool(0.5) {
            ("UnivA", "UnivB")
        } else {
            ("UnivB", "UnivA")
        };
        let order_b_first = rng.random_bool(0.5);
        let b_batches = if order_b_first {
            let bb = random_tenant(&mut env, b, &mut rng)?;
            random_tenant(&mut env, a, &mut rng)?;
            bb
        } else {
            random_tenant(&mut env, a, &mut rng)?;
            random_tenant(&mut env, b, &mut rng)?
        };
        env.materialize()?;
        let before = serialized_reports(&env, a)?;
        for (table, batch) in b_batches {
            env.pipeline
                .store()
                .drop_batch(table, batch)
                .map_err(|e| e.to_string())?;
        }
        env.materialize()?;
        let after = serialized_reports(&env, a)?;
        ensure(before == after, || {
            format!("round {round}: reports of {a} changed")
        })?;
        bytes += after.iter().map(String::len).sum::<usize>();
    }
    Ok(format!("20 fixtures, {bytes} report bytes unchanged"))
}

// ---------------------------------------------------------------- 6

fn planted_errors() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(
        SegmentStore::open(dir.path().join("wh"), Arc::new(WarehouseSchema::builtin())).unwrap(),
    );
    store.init_layout().unwrap();
    let pipeline = Pipeline::new(
        Arc::clone(&store),
        WorkerPool::new(available_parallelism().max(2)),
    );
    let tenant = TenantKey::new("University1").unwrap();
    let header = store
        .schema()
        .table("StudentPerformance")
        .unwrap()
        .upload_header();
    let seed = dir.path().join("seed.csv");
    std::fs::write(
        &seed,
        format!("{header}\nS0,CS101,2016-17-SPR,R1,50,90,C\n"),
    )
    .unwrap();
    pipeline
        .run_etl(
            &seed,
            "StudentPerformance",
            &tenant,
            EtlMode::Case1,
            &SplitConfig::default(),
        )
        .map_err(|e| e.to_string())?;
    let rows_before = store
        .scan("StudentPerformance", Dedupe::Off)
        .map_err(|e| e.to_string())?;
    let segments_before = store
        .table_state("StudentPerformance")
        .map_err(|e| e.to_string())?
        .segments;

    let mut planted_total = 0;
    for round in 0..50 {
        let n = rng.random_range(20..4000u64);
        let planted: BTreeSet<u64> = (0..rng.random_range(1..10))
            .map(|_| rng.random_range(2..=n + 1))
            .collect();
        let mut text = format!("{header}\n");
        for line in 2..=n + 1 {
            let row = if planted.contains(&line) {
                match rng.random_range(0..6) {
                    0 => format!("S{line},CS1,T1,R1,80,90"),
                    1 => format!("S{line},CS1,T1,R1,80,90,A,extra"),
                    2 => format!("S{line},CS1,T1,R1,high,90,A"),
                    3 => format!("S{line},CS1,T1,R1,80,9x,A"),
                    4 => ",CS1,T1,R1,80,90,A".to_string(),
                    _ => format!("S{line},CS1,ALL,R1,80,90,A"),
                }
            } else {
                format!(
                    "S{line},CS{},T{},R1,{}.25,{},B",
                    line % 9,
                    line % 3,
                    line % 100,
                    line % 101
                )
            };
            text += &row;
            text.push('\n');
        }
        let path = dir.path().join(format!("planted{round}.csv"));
        std::fs::write(&path, &text).unwrap();
        let mode = if round % 2 == 0 {
            EtlMode::Case1
        } else {
            EtlMode::Case2
        };
        let cfg = SplitConfig::constant(rng.random_range(256..16384), 4096).unwrap();
        let r = pipeline
            .run_etl(&path, "StudentPerformance", &tenant, mode, &cfg)
            .map_err(|e| e.to_string())?;
        let report = r
            .report()
            .ok_or_else(|| format!("round {round}: batch committed"))?;
        let got = report.line_numbers();
        let want: Vec<u64> = planted.iter().copied().collect();
        ensure(got == want, || {
            format!("round {round}: reported {got:?}, planted {want:?}")
        })?;
        let segments = store
            .table_state("StudentPerformance")
            .map_err(|e| e.to_string())?
            .segments;
        ensure(segments == segments_before, || {
            format!("round {round}: segments changed")
        })?;
        ensure(
            store
                .scan("StudentPerformance", Dedupe::Off)
                .map_err(|e| e.to_string())?
                == rows_before,
            || format!("round {round}: table rows changed"),
        )?;
        planted_total += want.len();
    }
    Ok(format!(
        "50 fixtures, {planted_total} planted lines reported exactly, table untouched"
    ))
}

// ---------------------------------------------------------------- 7

fn etl_shape() -> Result<String, String> {
    let start = Instant::now();
    let threads = available_parallelism();
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(
        SegmentStore::open(dir.path().join("wh"), Arc::new(WarehouseSchema::builtin())).unwrap(),
    );
    store.init_layout().unwrap();
    let pipeline = Pipeline::new(store, WorkerPool::new(threads));
    let plan = BenchPlan::new(
        BenchPlan::doubling(2 * MIB, 64 * MIB),
        20,
        vec![EtlMode::Case1, EtlMode::Case2],
        7,
    )
    .map_err(|e| e.to_string())?;
    let report = bench::run_etl_bench(&pipeline, &plan, &SplitConfig::default(), dir.path())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let rows = &report.series.rows;
    let case1: Vec<f64> = rows.iter().filter_map(|r| r.y).collect();
    let case2: Vec<f64> = rows.iter().filter_map(|r| r.z).collect();
    ensure(case1.len() == 6 && case2.len() == 6, || {
        "incomplete series".into()
    })?;
    let growth = case1[5] / case1[0];
    let spread = case2.iter().cloned().fold(f64::MIN, f64::max)
        / case2.iter().cloned().fold(f64::MAX, f64::min);
    let detail = format!(
        "{threads} hardware threads, up to {} splits; case1 64MiB/2MiB = {growth:.2} (need >= 8), case2 max/min = {spread:.2} (need <= 2.0), {:.0}s of 900s",
        report.max_tasks,
        elapsed.as_secs_f64()
    );
    let ok = threads >= 8 && growth >= 8.0 && spread <= 2.0 && elapsed <= Duration::from_secs(900);
    if ok {
        Ok(detail)
    } else if threads < 8 {
        Err(format!("requires >= 8 hardware threads; {detail}"))
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 8

fn olap_shape() -> Result<String, String> {
    let start = Instant::now();
    let threads = available_parallelism();
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(
        SegmentStore::open(dir.path().join("wh"), Arc::new(WarehouseSchema::builtin())).unwrap(),
    );
    store.init_layout().unwrap();
    let plan = BenchPlan::new(
        vec![200_000, 400_000, 600_000, 800_000, 1_000_000],
        20,
        vec![],
        7,
    )
    .map_err(|e| e.to_string())?;
    // A 200k-row cube file is about 13 MiB: one scan task per 200k rows.
    let chunk = 16 * MIB;
    let report = bench::run_olap_bench(store, WorkerPool::new(threads), &plan, chunk, dir.path())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let rows = &report.series.rows;
    let xs: Vec<u64> = rows.iter().map(|r| r.x).collect();
    let cumulative: Vec<f64> = rows.iter().filter_map(|r| r.y).collect();
    let effective: Vec<f64> = rows.iter().filter_map(|r| r.z).collect();
    let tasks: Vec<u64> = report.cells.iter().map(|c| c.tasks).collect();
    let inversions = cumulative.windows(2).filter(|w| w[1] <= w[0]).count();
    let eff_ratio = effective.iter().cloned().fold(f64::MIN, f64::max)
        / effective.iter().cloned().fold(f64::MAX, f64::min);
    let span = *xs.last().unwrap() as f64 / xs[0] as f64;
    let detail = format!(
        "cube rows {xs:?} (span {span:.1}x), scan tasks {tasks:?} on {threads} threads; cumulative inversions {inversions} (need <= 1), effective max/min {eff_ratio:.2} (need <= 1.5), {:.0}s of 600s",
        elapsed.as_secs_f64()
    );
    if span >= 5.0 && inversions <= 1 && eff_ratio <= 1.5 && elapsed <= Duration::from_secs(600) {
        Ok(detail)
    } else if report.insufficient_workers {
        Err(format!("scan tasks exceed worker threads; {detail}"))
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 9

fn constant_time_load() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let store =
        SegmentStore::open(dir.path().join("wh"), Arc::new(WarehouseSchema::builtin())).unwrap();
    store.init_layout().unwrap();
    let mut medians = Vec::new();
    for rows in [1_000u64, 10_000, 100_000, 1_000_000] {
        let mut times = Vec::new();
        for rep in 0..5 {
            let path = store.staging_dir().join(format!("load-{rows}-{rep}.seg"));
            let mut text = String::with_capacity(rows as usize * 80);
            for i in 0..rows {
                text += &format!(
                    "U1,U1_S{i},S{i},U1_C{c},C{c},U1_T1,T1,U1_R1,R1,{m}.5,{a},B\n",
                    c = i % 50,
                    m = i % 100,
                    a = i % 101
                );
            }
            std::fs::write(&path, text).unwrap();
            let staged = StagedFile {
                path,
                row_count: rows,
            };
            let t = Instant::now();
            let seg = store
                .commit_batch("StudentPerformance", staged)
                .map_err(|e| e.to_string())?;
            times.push(t.elapsed());
            store
                .drop_batch("StudentPerformance", seg.batch_id)
                .map_err(|e| e.to_string())?;
        }
        times.sort();
        medians.push((rows, times[times.len() / 2]));
    }
    let max = medians.iter().map(|m| m.1).max().unwrap();
    let min = medians.iter().map(|m| m.1).min().unwrap();
    let spread = max - min;
    let shown: Vec<String> = medians
        .iter()
        .map(|(r, d)| format!("{r}:{:.3}ms", d.as_secs_f64() * 1e3))
        .collect();
    let detail = format!(
        "median commit {}; spread {:.3}ms (need <= 20ms)",
        shown.join(" "),
        spread.as_secs_f64() * 1e3
    );
    ensure(spread <= Duration::from_millis(20), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 10

#[derive(serde::Deserialize)]
struct OutlierCase {
    samples: Vec<f64>,
    survivors: Vec<f64>,
}

#[derive(serde::Deserialize)]
struct OutlierFixture {
    cases: Vec<OutlierCase>,
}

fn outlier_oracle() -> Result<String, String> {
    let fixture: OutlierFixture =
        serde_json::from_str(include_str!("../../core/tests/fixtures/outliers.json"))
            .map_err(|e| e.to_string())?;
    ensure(fixture.cases.len() == 50, || {
        format!("{} cases", fixture.cases.len())
    })?;
    let mut removed = 0;
    for (i, case) in fixture.cases.iter().enumerate() {
        let got = remove_outliers(&case.samples);
        ensure(got == case.survivors, || {
            format!("case {i}: {got:?} vs {:?}", case.survivors)
        })?;
        removed += case.samples.len() - got.len();
    }
    Ok(format!(
        "50 samples, identical survivor sets ({removed} values removed)"
    ))
}

// ---------------------------------------------------------------- 11

fn cli(root: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .arg("--root")
        .arg(root)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn cli_round_trip() -> Result<String, String> {
    let golden =
        std::fs::read_to_string(Path::new(FIXTURES).join("golden_avg_marks_by_regtype.csv"))
            .unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("wh");
        cli(&root, &["init"])?;
        for t in [
            "Departments",
            "Programs",
            "Courses",
            "Times",
            "Regtypes",
            "StudentPerformance",
            "StudentCounts",
        ] {
            let file = Path::new(FIXTURES).join(format!("{t}.csv"));
            cli(
                &root,
                &[
                    "ingest",
                    "--tenant",
                    "University1",
                    "--table",
                    t,
                    "--file",
                    file.to_str().unwrap(),
                ],
            )?;
        }
        cli(&root, &["build-cube"])?;
        let out = dir.path().join("report.csv");
        cli(
            &root,
            &[
                "report",
                "--tenant",
                "University1",
                "--report",
                "avg_marks_by_regtype",
                "--param",
                "time_code=2016-17-SPR",
                "--out",
                out.to_str().unwrap(),
            ],
        )?;
        let csv = std::fs::read_to_string(&out).unwrap();
        ensure(csv == golden, || {
            format!("run {run} differs from golden:\n{csv}")
        })?;
        outputs.push(csv);
    }
    ensure(outputs[0] == outputs[1], || "runs differ".into())?;
    Ok(format!(
        "two runs byte-identical to the golden CSV ({} bytes)",
        golden.len()
    ))
}
