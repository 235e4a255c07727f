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

//! Scalability benchmarks for ETL and cube queries.
//!
//! Each benchmark runs one extra warm-up repetition that is discarded, then
//! reduces the remaining timings with [`remove_outliers`] and reports means in
//! milliseconds.

mod dataset;
mod outliers;

pub use dataset::{
    gen_covering_facts, gen_dataset, write_dimension_files, DatasetInfo, DimensionUniverse,
};
pub use outliers::{
    quantile, remove_outliers, remove_outliers_with, robust_mean, OutlierOutcome, QuartileRule,
};

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::cube::{CubeEngine, CubeError, CubeSpec};
use crate::etl::{mapper_count, plan_splits, split_size, EtlError, EtlMode, Pipeline, SplitConfig};
use crate::olap::{OlapEngine, OlapError, ReportDef, TenantContext};
use crate::parallel::WorkerPool;
use crate::schema::TenantKey;
use crate::store::{SegmentStore, StoreError};

/// Lock file guarding a warehouse against concurrent benchmarks.
pub const BENCH_LOCK: &str = ".bench.lock";

/// Tenant owning all benchmark data.
pub const BENCH_TENANT: &str = "BenchUniversity";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid bench plan: {0}")]
    InvalidPlan(String),
    #[error("another benchmark holds {0}")]
    Busy(String),
    #[error("generated dataset of {size} bytes was rejected under {mode}")]
    Rejected { size: u64, mode: EtlMode },
    #[error(transparent)]
    Etl(#[from] EtlError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Olap(#[from] OlapError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchPlan {
    /// Bytes for ETL; target cube rows for OLAP.
    pub sizes: Vec<u64>,
    /// Measured repetitions per size, excluding the warm-up.
    pub reps: usize,
    /// ETL modes to run; ignored by the OLAP benchmark.
    pub modes: Vec<EtlMode>,
    pub seed: u64,
    pub rule: QuartileRuleName,
}

/// Serializable mirror of [`QuartileRule`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum QuartileRuleName {
    #[default]
    Interquartile,
    TukeyFences,
}

impl From<QuartileRuleName> for QuartileRule {
    fn from(r: QuartileRuleName) -> Self {
        match r {
            QuartileRuleName::Interquartile => QuartileRule::Interquartile,
            QuartileRuleName::TukeyFences => QuartileRule::TukeyFences,
        }
    }
}

impl BenchPlan {
    pub fn new(
        sizes: Vec<u64>,
        reps: usize,
        modes: Vec<EtlMode>,
        seed: u64,
    ) -> Result<Self, BenchError> {
        let plan = BenchPlan {
            sizes,
            reps,
            modes,
            seed,
            rule: QuartileRuleName::default(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.reps < 3 {
            return Err(BenchError::InvalidPlan("reps must be at least 3".into()));
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::InvalidPlan(
                "sizes must be nonempty and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Sizes doubling from `from` up to and including `to`.
    pub fn doubling(from: u64, to: u64) -> Vec<u64> {
        std::iter::successors(Some(from), |s| s.checked_mul(2))
            .take_while(|s| *s <= to)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingSample {
    pub size: u64,
    pub mode: Option<EtlMode>,
    pub rep_index: usize,
    pub warmup: bool,
    pub effective: Duration,
    pub cumulative: Duration,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub x: u64,
    pub y: Option<f64>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchSeries {
    pub rows: Vec<SeriesRow>,
}

impl BenchSeries {
    /// `x,y,z` CSV; a missing value is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z\n");
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.x, cell(r.y), cell(r.z));
        }
        out
    }
}

/// Gnuplot script plotting the `y` and `z` columns of a series CSV.
pub fn gnuplot_script(
    csv: &str,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    y_name: &str,
    z_name: &str,
) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set title '{title}'\n\
         set xlabel '{xlabel}'\n\
         set ylabel '{ylabel}'\n\
         set terminal pngcairo size 900,600\n\
         set output '{csv}.png'\n\
         plot '{csv}' using 1:2 with linespoints title '{y_name}', \\\n     '{csv}' using 1:3 with linespoints title '{z_name}'\n"
    )
}

/// Mean timing of one (size, mode) cell after outlier removal.
#[derive(Debug, Clone, Serialize)]
pub struct CellStat {
    pub size: u64,
    pub mode: Option<EtlMode>,
    pub mean_effective_ms: f64,
    pub mean_cumulative_ms: f64,
    pub kept: usize,
    pub fell_back: bool,
    /// Splits (ETL) or scan tasks (OLAP) per run.
    pub tasks: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub series: BenchSeries,
    pub cells: Vec<CellStat>,
    pub samples: Vec<TimingSample>,
    pub workers: usize,
    /// Largest task count of any run.
    pub max_tasks: u64,
    /// Some run had more tasks than workers.
    pub insufficient_workers: bool,
    pub warmups_dropped: usize,
}

/// Exclusive advisory lock on a warehouse root for the life of a benchmark.
pub struct BenchLock {
    _file: File,
}

impl BenchLock {
    pub fn acquire(root: &Path) -> Result<Self, BenchError> {
        std::fs::create_dir_all(root)?;
        let path = root.join(BENCH_LOCK);
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)?;
        match file.try_lock() {
            Ok(()) => Ok(BenchLock { _file: file }),
            Err(std::fs::TryLockError::WouldBlock) => {
                Err(BenchError::Busy(path.display().to_string()))
            }
            Err(std::fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }
}

fn cell(
    size: u64,
    mode: Option<EtlMode>,
    samples: &[TimingSample],
    rule: QuartileRule,
    tasks: u64,
) -> CellStat {
    let measured: Vec<&TimingSample> = samples.iter().filter(|s| !s.warmup).collect();
    let eff: Vec<f64> = measured.iter().map(|s| ms(s.effective)).collect();
    let cum: Vec<f64> = measured.iter().map(|s| ms(s.cumulative)).collect();
    let eff_out = remove_outliers_with(&eff, rule);
    let cum_out = remove_outliers_with(&cum, rule);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    CellStat {
        size,
        mode,
        mean_effective_ms: mean(&eff_out.survivors),
        mean_cumulative_ms: mean(&cum_out.survivors),
        kept: eff_out.survivors.len(),
        fell_back: eff_out.fell_back || cum_out.fell_back,
        tasks,
    }
}

/// Times repeated ingestion of generated StudentPerformance files.
///
/// Each committed batch is dropped again so every run sees the same table
/// state. Series rows are `(size, case1 mean effective ms, case2 mean
/// effective ms)`.
pub fn run_etl_bench(
    pipeline: &Pipeline,
    plan: &BenchPlan,
    cfg: &SplitConfig,
    work_dir: &Path,
) -> Result<BenchReport, BenchError> {
    plan.validate()?;
    if plan.modes.is_empty() {
        return Err(BenchError::InvalidPlan("no ETL mode selected".into()));
    }
    let store = pipeline.store();
    let _lock = BenchLock::acquire(store.root())?;
    let tenant = TenantKey::new(BENCH_TENANT).expect("valid tenant");
    let universe = DimensionUniverse::default();
    let table = "StudentPerformance";
    let workers = pipeline.pool().size();
    let mut report = BenchReport {
        series: BenchSeries::default(),
        cells: Vec::new(),
        samples: Vec::new(),
        workers,
        max_tasks: 0,
        insufficient_workers: false,
        warmups_dropped: 0,
    };
    for &size in &plan.sizes {
        let path = work_dir.join(format!("etl-{size}.csv"));
        gen_dataset(&path, size, table, &universe, plan.seed)?;
        let mut row = SeriesRow {
            x: size,
            y: None,
            z: None,
        };
        for &mode in &plan.modes {
            let n_m = plan_splits(&path, cfg, mode)?.n_m;
            report.max_tasks = report.max_tasks.max(n_m);
            let mut samples = Vec::with_capacity(plan.reps + 1);
            for rep in 0..=plan.reps {
                let r = pipeline.run_etl(&path, table, &tenant, mode, cfg)?;
                let Some(seg) = r.segment() else {
                    return Err(BenchError::Rejected { size, mode });
                };
                store.drop_batch(table, seg.batch_id)?;
                samples.push(TimingSample {
                    size,
                    mode: Some(mode),
                    rep_index: rep,
                    warmup: rep == 0,
                    effective: r.effective_time,
                    cumulative: r.cumulative_time,
                });
            }
            report.warmups_dropped += 1;
            let stat = cell(size, Some(mode), &samples, plan.rule.into(), n_m);
            match mode {
                EtlMode::Case1 => row.y = Some(stat.mean_effective_ms),
                EtlMode::Case2 => row.z = Some(stat.mean_effective_ms),
            }
            report.cells.push(stat);
            report.samples.extend(samples);
        }
        std::fs::remove_file(&path)?;
        report.series.rows.push(row);
    }
    report.insufficient_workers = report.max_tasks > workers as u64;
    if report.insufficient_workers {
        log::warn!(
            "etl bench: up to {} splits ran on {} workers; scaling assumes one worker per split",
            report.max_tasks,
            workers
        );
    }
    Ok(report)
}

/// Ingests every dimension of `universe` for `tenant`.
pub fn load_dimensions(
    universe: &DimensionUniverse,
    pipeline: &Pipeline,
    tenant: &TenantKey,
    work_dir: &Path,
) -> Result<(), BenchError> {
    for (table, path) in write_dimension_files(work_dir, universe)? {
        let r = pipeline.run_etl(
            &path,
            table,
            tenant,
            EtlMode::Case2,
            &SplitConfig::default(),
        )?;
        if r.segment().is_none() {
            return Err(BenchError::Rejected {
                size: std::fs::metadata(&path)?.len(),
                mode: EtlMode::Case2,
            });
        }
        std::fs::remove_file(&path)?;
    }
    Ok(())
}

/// Courses needed for a cube of about `target` rows over 4 terms and 4
/// registration types: `(courses + 1) * 5 * 5` rows per tenant.
pub fn courses_for_cube_rows(target: u64) -> usize {
    (target / 25).saturating_sub(1).max(1) as usize
}

/// Times the term-level registration-type report over cubes of growing size.
///
/// Series rows are `(cube rows, mean cumulative ms, mean effective ms)`.
pub fn run_olap_bench(
    store: Arc<SegmentStore>,
    pool: WorkerPool,
    plan: &BenchPlan,
    scan_chunk: u64,
    work_dir: &Path,
) -> Result<BenchReport, BenchError> {
    plan.validate()?;
    let _lock = BenchLock::acquire(store.root())?;
    let tenant = TenantKey::new(BENCH_TENANT).expect("valid tenant");
    let ctx = TenantContext::new(tenant.clone(), "bench");
    let pipeline = Pipeline::new(Arc::clone(&store), pool.clone());
    let cubes = Arc::new(CubeEngine::new(
        Arc::clone(&store),
        pool.clone(),
        vec![CubeSpec::student_performance()],
    ));
    let olap = OlapEngine::new(Arc::clone(&cubes), pool.clone()).with_scan_chunk(scan_chunk);
    let def = ReportDef::find("avg_marks_by_regtype")?;
    let cfg = SplitConfig::default();

    let largest = *plan.sizes.last().expect("validated");
    let full = DimensionUniverse {
        courses: courses_for_cube_rows(largest),
        ..DimensionUniverse::default()
    };
    load_dimensions(&full, &pipeline, &tenant, work_dir)?;
    let filters = vec![("time_code".to_string(), full.time_code(0))];

    let mut report = BenchReport {
        series: BenchSeries::default(),
        cells: Vec::new(),
        samples: Vec::new(),
        workers: pool.size(),
        max_tasks: 0,
        insufficient_workers: false,
        warmups_dropped: 0,
    };
    for &target in &plan.sizes {
        for old in store.table_state("StudentPerformance")?.segments {
            store.drop_batch("StudentPerformance", old.batch_id)?;
        }
        let universe = DimensionUniverse {
            courses: courses_for_cube_rows(target),
            ..full.clone()
        };
        let path = work_dir.join(format!("olap-{target}.csv"));
        gen_covering_facts(&path, &universe, 1, plan.seed)?;
        let r = pipeline.run_etl(&path, "StudentPerformance", &tenant, EtlMode::Case2, &cfg)?;
        if r.segment().is_none() {
            return Err(BenchError::Rejected {
                size: target,
                mode: EtlMode::Case2,
            });
        }
        std::fs::remove_file(&path)?;
        let built = cubes.materialize(&cubes.specs()[0])?;

        let mut samples = Vec::with_capacity(plan.reps + 1);
        let mut tasks = 0;
        for rep in 0..=plan.reps {
            let q = olap.query_cube(&ctx, &def.cube, &def.masks, &filters)?;
            tasks = q.scan_workers as u64;
            samples.push(TimingSample {
                size: built.cube_rows,
                mode: None,
                rep_index: rep,
                warmup: rep == 0,
                effective: q.effective,
                cumulative: q.cumulative,
            });
        }
        report.max_tasks = report.max_tasks.max(tasks);
        report.warmups_dropped += 1;
        let stat = cell(built.cube_rows, None, &samples, plan.rule.into(), tasks);
        report.series.rows.push(SeriesRow {
            x: built.cube_rows,
            y: Some(stat.mean_cumulative_ms),
            z: Some(stat.mean_effective_ms),
        });
        report.cells.push(stat);
        report.samples.extend(samples);
    }
    report.insufficient_workers = report.max_tasks > report.workers as u64;
    Ok(report)
}

/// Split geometry of an ETL run over `size` bytes, without touching disk.
pub fn planned_mappers(size: u64, cfg: &SplitConfig, mode: EtlMode) -> u64 {
    match mode {
        EtlMode::Case1 => mapper_count(size, size.div_ceil(2).max(1)),
        EtlMode::Case2 => mapper_count(size, split_size(cfg)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::WarehouseSchema;

    fn setup() -> (tempfile::TempDir, Pipeline) {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(
            SegmentStore::open(dir.path().join("wh"), Arc::new(WarehouseSchema::builtin()))
                .unwrap(),
        );
        store.init_layout().unwrap();
        (dir, Pipeline::new(store, WorkerPool::new(2)))
    }

    #[test]
    fn plan_validation() {
        assert!(BenchPlan::new(vec![1, 2], 2, vec![EtlMode::Case1], 1).is_err());
        assert!(BenchPlan::new(vec![2, 2], 3, vec![EtlMode::Case1], 1).is_err());
        assert!(BenchPlan::new(vec![], 3, vec![EtlMode::Case1], 1).is_err());
        assert_eq!(BenchPlan::doubling(2, 64), vec![2, 4, 8, 16, 32, 64]);
    }

    #[test]
    fn etl_bench_small_run() {
        let (dir, pipeline) = setup();
        let plan = BenchPlan::new(
            vec![20_000, 40_000],
            3,
            vec![EtlMode::Case1, EtlMode::Case2],
            3,
        )
        .unwrap();
        let cfg = SplitConfig::constant(8_192, 8_192).unwrap();
        let rep = run_etl_bench(&pipeline, &plan, &cfg, dir.path()).unwrap();
        assert_eq!(rep.series.rows.len(), 2);
        assert!(rep
            .series
            .rows
            .iter()
            .all(|r| r.y.is_some() && r.z.is_some()));
        assert_eq!(rep.samples.len(), 2 * 2 * 4);
        assert_eq!(rep.warmups_dropped, 4);
        assert!(rep.insufficient_workers);
        assert_eq!(rep.max_tasks, planned_mappers(40_000, &cfg, EtlMode::Case2));
        assert_eq!(
            pipeline
                .store()
                .table_state("StudentPerformance")
                .unwrap()
                .segments
                .len(),
            0
        );
        let csv = rep.series.to_csv();
        assert!(csv.starts_with("x,y,z\n20000,"));
        for s in rep
            .samples
            .iter()
            .filter(|s| s.mode == Some(EtlMode::Case1))
        {
            assert!(s.cumulative + Duration::from_millis(5) >= s.effective / 2);
        }
    }

    #[test]
    fn olap_bench_small_run() {
        let (dir, pipeline) = setup();
        let plan = BenchPlan::new(vec![500, 1000], 3, vec![], 3).unwrap();
        let rep = run_olap_bench(
            Arc::clone(pipeline.store()),
            WorkerPool::new(2),
            &plan,
            4096,
            dir.path(),
        )
        .unwrap();
        let xs: Vec<u64> = rep.series.rows.iter().map(|r| r.x).collect();
        assert_eq!(
            xs,
            vec![
                25 * (courses_for_cube_rows(500) as u64 + 1),
                25 * (courses_for_cube_rows(1000) as u64 + 1)
            ]
        );
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let _a = BenchLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            BenchLock::acquire(dir.path()),
            Err(BenchError::Busy(_))
        ));
    }

    #[test]
    fn series_csv_and_plot() {
        let s = BenchSeries {
            rows: vec![SeriesRow {
                x: 2,
                y: Some(1.5),
                z: None,
            }],
        };
        assert_eq!(s.to_csv(), "x,y,z\n2,1.500,\n");
        assert!(gnuplot_script("etl.csv", "t", "x", "y", "a", "b").contains("using 1:3"));
    }
}
