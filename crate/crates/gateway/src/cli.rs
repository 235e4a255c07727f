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

//! Operator command line.
//!
//! Failures print one line `error: <kind>: <message>` on stderr. Exit codes:
//! 0 success, 1 failure, 2 usage error, 3 rejected batch.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;
use unimart_core::bench::{self, BenchLock, BenchPlan, QuartileRuleName};
use unimart_core::etl::{EtlMode, SplitConfig};
use unimart_core::parallel::WorkerPool;
use unimart_core::schema::TENANT_ATTRIBUTE;
use unimart_core::{Pipeline, SegmentStore, TenantContext, TenantKey, WarehouseSchema};

use crate::config::{parse_bytes, GatewayConfig, CONFIG_FILE};
use crate::registry::{registry_line, REGISTRY_HEADER};
use crate::service::{batch_json, AppState};
use crate::warehouse::{millis, Warehouse};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_REJECTED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "unimart",
    version,
    about = "Multi-tenant academic data warehouse"
)]
pub struct Cli {
    /// Configuration file (default: <root>/unimart.conf when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Warehouse root; overrides the configuration.
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the warehouse layout, a configuration file and a sample registry.
    Init(InitArgs),
    /// Load one CSV file into a table for a tenant.
    Ingest(IngestArgs),
    /// Rebuild materialized cubes.
    BuildCube(BuildCubeArgs),
    /// Produce a predefined report for a tenant.
    Report(ReportArgs),
    /// List the predefined reports.
    Reports,
    /// Run a scalability benchmark in a scratch warehouse.
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Serve the tenant HTTP interface.
    Serve(ServeArgs),
    /// Print the table catalog.
    Schema,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// `login=UNIVERSITY_KEY`; repeatable. Secrets are generated and printed.
    #[arg(long = "tenant", value_name = "LOGIN=KEY")]
    pub tenants: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TenantArgs {
    /// Registered university key to act for.
    #[arg(long, conflicts_with_all = ["login", "secret"])]
    pub tenant: Option<String>,
    /// Tenant login; use with --secret or UNIMART_SECRET.
    #[arg(long, requires = "secret")]
    pub login: Option<String>,
    #[arg(long, env = "UNIMART_SECRET", hide_env_values = true)]
    pub secret: Option<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub who: TenantArgs,
    #[arg(long)]
    pub table: String,
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Case2)]
    pub mode: ModeArg,
    /// Where to write the error report of a rejected batch
    /// (default: <file>.errors.csv).
    #[arg(long)]
    pub errors_out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Case1,
    Case2,
}

impl From<ModeArg> for EtlMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Case1 => EtlMode::Case1,
            ModeArg::Case2 => EtlMode::Case2,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildCubeArgs {
    /// Cube to build (default: all).
    #[arg(long)]
    pub cube: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub who: TenantArgs,
    #[arg(long)]
    pub report: String,
    /// `name=value`; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BenchModes {
    Case1,
    Case2,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    Interquartile,
    Tukey,
}

#[derive(Debug, Args)]
pub struct BenchCommon {
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RuleArg::Interquartile)]
    pub rule: RuleArg,
    /// Worker threads (default: configuration).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Series CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a gnuplot script plotting the series.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Ingestion time against input size.
    Etl {
        #[arg(long, default_value = "2MiB")]
        from: String,
        #[arg(long, default_value = "64MiB")]
        to: String,
        #[arg(long, value_enum, default_value_t = BenchModes::Both)]
        mode: BenchModes,
        /// Constant split size for case2.
        #[arg(long, default_value = "1MiB")]
        split: String,
        #[command(flatten)]
        common: BenchCommon,
    },
    /// Report query time against cube size.
    Olap {
        /// Target cube row counts.
        #[arg(long, value_delimiter = ',', default_values_t = [200_000u64, 400_000, 600_000, 800_000, 1_000_000])]
        sizes: Vec<u64>,
        #[arg(long, default_value = "256KiB")]
        scan_chunk: String,
        #[command(flatten)]
        common: BenchCommon,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: Option<String>,
}

/// Parses `argv`, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let kind = e.downcast_ref::<Kind>().map(|k| k.0);
            // `kind` attaches the category as the outermost context.
            let mut parts: Vec<String> = Vec::new();
            for cause in e.chain().skip(usize::from(kind.is_some())) {
                let text = cause.to_string();
                // Many errors already print their source; skip the repeat.
                if !parts.last().is_some_and(|p| p.ends_with(&text)) {
                    parts.push(text);
                }
            }
            let message = parts.join(": ").replace('\n', "; ");
            eprintln!("error: {}: {message}", kind.unwrap_or("failure"));
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

/// Error category shown in the one-line error output.
#[derive(Debug)]
struct Kind(&'static str);

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}

impl std::error::Error for Kind {}

fn kind<T>(k: &'static str, r: anyhow::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| e.context(Kind(k)))
}

fn load_config(cli: &Cli) -> anyhow::Result<GatewayConfig> {
    let mut cfg = match (&cli.config, &cli.root) {
        (Some(path), _) => GatewayConfig::load(path)?,
        (None, Some(root)) if root.join(CONFIG_FILE).exists() => {
            GatewayConfig::load(&root.join(CONFIG_FILE))?
        }
        (None, _) if Path::new(CONFIG_FILE).exists() => {
            GatewayConfig::load(Path::new(CONFIG_FILE))?
        }
        _ => GatewayConfig::default(),
    };
    if let Some(root) = &cli.root {
        cfg.warehouse_root = root.clone();
    }
    Ok(cfg)
}

fn resolve_tenant(w: &Warehouse, who: &TenantArgs) -> anyhow::Result<TenantKey> {
    let registry = kind("registry", w.registry())?;
    match (&who.tenant, &who.login, &who.secret) {
        (Some(t), _, _) => {
            let t = TenantKey::new(t.as_str())?;
            if !registry.has_tenant(&t) {
                return Err(anyhow!("tenant {t} is not registered").context(Kind("auth")));
            }
            Ok(t)
        }
        (None, Some(login), Some(secret)) => registry
            .authenticate(login, secret)
            .map_err(|e| anyhow!(e).context(Kind("auth"))),
        _ => Err(anyhow!("pass --tenant or --login with --secret").context(Kind("usage"))),
    }
}

fn parse_params(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for p in raw {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| anyhow!("parameter `{p}` is not NAME=VALUE").context(Kind("usage")))?;
        // Tenant scope comes from the authenticated tenant only.
        if k != TENANT_ATTRIBUTE {
            out.push((k.to_string(), v.to_string()));
        }
    }
    Ok(out)
}

fn write_output(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<u8> {
    let cfg = kind("config", load_config(&cli))?;
    match cli.command {
        Command::Init(args) => init(cfg, &args),
        Command::Ingest(args) => ingest(cfg, &args),
        Command::BuildCube(args) => build_cube(cfg, &args),
        Command::Report(args) => report(cfg, &args),
        Command::Reports => {
            let mut out = String::new();
            for d in unimart_core::olap::ReportDef::catalog() {
                let _ = writeln!(out, "{}\tparams={}\t{}", d.id, d.params.join(","), d.title);
            }
            write_output(&None, &out)?;
            Ok(0)
        }
        Command::Bench { which } => kind("bench", bench_cmd(cfg, which)),
        Command::Serve(args) => serve(cfg, &args),
        Command::Schema => {
            write_output(&None, &WarehouseSchema::builtin().reference_document())?;
            Ok(0)
        }
    }
}

fn init(cfg: GatewayConfig, args: &InitArgs) -> anyhow::Result<u8> {
    let root = cfg.warehouse_root.clone();
    let store = kind(
        "io",
        SegmentStore::open(&root, Arc::new(WarehouseSchema::builtin()))
            .map_err(anyhow::Error::from),
    )?;
    kind("io", store.init_layout().map_err(anyhow::Error::from))?;
    let mut out = format!("initialized {}\n", root.display());
    let conf = root.join(CONFIG_FILE);
    if !conf.exists() {
        std::fs::write(&conf, cfg.to_text())?;
        let _ = writeln!(out, "wrote {}", conf.display());
    }
    let registry = cfg.registry_path();
    if registry.exists() {
        let _ = writeln!(out, "kept existing {}", registry.display());
    } else {
        let tenants: Vec<String> = if args.tenants.is_empty() {
            vec![
                "university1=University1".into(),
                "university2=University2".into(),
            ]
        } else {
            args.tenants.clone()
        };
        let mut text = format!("{REGISTRY_HEADER}\n");
        let mut secrets = String::new();
        for t in &tenants {
            let (login, key) = t
                .split_once('=')
                .ok_or_else(|| anyhow!("`{t}` is not LOGIN=KEY").context(Kind("usage")))?;
            let key = TenantKey::new(key)?;
            let mut raw = [0u8; 12];
            rand::rng().fill_bytes(&mut raw);
            let secret = hex::encode(raw);
            text += &registry_line(login, &secret, &key);
            text.push('\n');
            let _ = writeln!(
                secrets,
                "tenant login={login} university_key={key} secret={secret}"
            );
        }
        crate::registry::TenantRegistry::parse(&text)
            .map_err(|e| anyhow!(e).context(Kind("registry")))?;
        std::fs::write(&registry, text)?;
        let _ = writeln!(out, "wrote {}", registry.display());
        out += &secrets;
    }
    write_output(&None, &out)?;
    Ok(0)
}

fn ingest(cfg: GatewayConfig, args: &IngestArgs) -> anyhow::Result<u8> {
    let w = kind("io", Warehouse::open(cfg))?;
    let tenant = resolve_tenant(&w, &args.who)?;
    let r = kind(
        "ingest",
        w.ingest(&tenant, &args.table, &args.file, args.mode.into()),
    )?;
    if args.json {
        write_output(
            &None,
            &(serde_json::to_string(&batch_json(&args.table, &r))? + "\n"),
        )?;
    }
    match (r.segment(), r.report()) {
        (Some(seg), _) => {
            if !args.json {
                write_output(
                    &None,
                    &format!(
                        "batch_id={} table={} rows_in={} rows_out={} n_m={} s_split={} effective_ms={:.3} cumulative_ms={:.3}\n",
                        seg.batch_id,
                        args.table,
                        r.rows_in,
                        r.rows_out,
                        r.n_m,
                        r.s_split,
                        millis(r.effective_time),
                        millis(r.cumulative_time)
                    ),
                )?;
            }
            Ok(0)
        }
        (None, Some(report)) => {
            let path = args.errors_out.clone().unwrap_or_else(|| {
                let mut p = args.file.clone().into_os_string();
                p.push(".errors.csv");
                PathBuf::from(p)
            });
            std::fs::write(&path, report.to_csv())
                .with_context(|| format!("writing {}", path.display()))?;
            if !args.json {
                write_output(
                    &None,
                    &format!(
                        "rejected table={} errors={} report={}\n",
                        args.table,
                        report.entries.len(),
                        path.display()
                    ),
                )?;
            }
            Ok(EXIT_REJECTED)
        }
        (None, None) => bail!("batch neither committed nor rejected"),
    }
}

fn build_cube(cfg: GatewayConfig, args: &BuildCubeArgs) -> anyhow::Result<u8> {
    let w = kind("io", Warehouse::open(cfg))?;
    let specs = match &args.cube {
        Some(name) => vec![kind(
            "cube",
            w.cubes.spec(name).cloned().map_err(anyhow::Error::from),
        )?],
        None => w.cubes.specs().to_vec(),
    };
    let mut out = String::new();
    for spec in &specs {
        let s = kind(
            "cube",
            w.cubes.materialize(spec).map_err(anyhow::Error::from),
        )?;
        let _ = writeln!(
            out,
            "cube={} version={} rows_scanned={} rows_excluded={} cube_rows={} build_ms={:.3} cumulative_ms={:.3}",
            s.cube,
            s.version.unwrap_or(0),
            s.rows_scanned,
            s.rows_excluded,
            s.cube_rows,
            millis(s.build_duration),
            millis(s.cumulative_worker_time)
        );
    }
    write_output(&None, &out)?;
    Ok(0)
}

fn report(cfg: GatewayConfig, args: &ReportArgs) -> anyhow::Result<u8> {
    let w = kind("io", Warehouse::open(cfg))?;
    let tenant = resolve_tenant(&w, &args.who)?;
    let params = parse_params(&args.params)?;
    let ctx = TenantContext::new(tenant, "cli");
    let r = kind(
        "report",
        w.olap
            .generate_report(&ctx, &args.report, &params)
            .map_err(anyhow::Error::from),
    )?;
    if let Some(warning) = &r.warning {
        eprintln!("warning: {warning}");
    }
    let text = match args.format {
        Format::Csv => r.to_csv(),
        Format::Table => r.to_table(),
        Format::Json => {
            serde_json::to_string(&serde_json::json!({
                "report_id": r.report_id,
                "columns": r.columns,
                "rows": r.rows,
                "cube_version": r.cube_version,
            }))? + "\n"
        }
    };
    write_output(&args.out, &text)?;
    Ok(0)
}

fn bench_plan(
    sizes: Vec<u64>,
    modes: Vec<EtlMode>,
    common: &BenchCommon,
) -> anyhow::Result<BenchPlan> {
    let mut plan = BenchPlan::new(sizes, common.reps, modes, common.seed)?;
    plan.rule = match common.rule {
        RuleArg::Interquartile => QuartileRuleName::Interquartile,
        RuleArg::Tukey => QuartileRuleName::TukeyFences,
    };
    Ok(plan)
}

fn bench_cmd(cfg: GatewayConfig, which: BenchCommand) -> anyhow::Result<u8> {
    std::fs::create_dir_all(&cfg.warehouse_root)?;
    let _lock = BenchLock::acquire(&cfg.warehouse_root)?;
    let scratch = tempfile::Builder::new()
        .prefix("_bench-")
        .tempdir_in(&cfg.warehouse_root)
        .context("creating scratch warehouse")?;
    let store = Arc::new(SegmentStore::open(
        scratch.path().join("wh"),
        Arc::new(WarehouseSchema::builtin()),
    )?);
    store.init_layout()?;
    let (report, common, title, ylabel, y_name, z_name) = match which {
        BenchCommand::Etl {
            from,
            to,
            mode,
            split,
            common,
        } => {
            let (from, to, split) = (
                parse_bytes(&from).map_err(|e| anyhow!(e))?,
                parse_bytes(&to).map_err(|e| anyhow!(e))?,
                parse_bytes(&split).map_err(|e| anyhow!(e))?,
            );
            let modes = match mode {
                BenchModes::Case1 => vec![EtlMode::Case1],
                BenchModes::Case2 => vec![EtlMode::Case2],
                BenchModes::Both => vec![EtlMode::Case1, EtlMode::Case2],
            };
            let plan = bench_plan(BenchPlan::doubling(from, to), modes, &common)?;
            let pool = WorkerPool::new(common.workers.unwrap_or(cfg.worker_pool_size));
            let pipeline = Pipeline::new(Arc::clone(&store), pool);
            let split_cfg = SplitConfig::constant(split, split)?;
            let report = bench::run_etl_bench(&pipeline, &plan, &split_cfg, scratch.path())?;
            (
                report,
                common,
                "ETL time against input size",
                "mean effective time (ms)",
                "case1",
                "case2",
            )
        }
        BenchCommand::Olap {
            sizes,
            scan_chunk,
            common,
        } => {
            let plan = bench_plan(sizes, vec![], &common)?;
            let pool = WorkerPool::new(common.workers.unwrap_or(cfg.worker_pool_size));
            let chunk = parse_bytes(&scan_chunk).map_err(|e| anyhow!(e))?;
            let report =
                bench::run_olap_bench(Arc::clone(&store), pool, &plan, chunk, scratch.path())?;
            (
                report,
                common,
                "Report query time against cube size",
                "mean time (ms)",
                "cumulative",
                "effective",
            )
        }
    };
    eprintln!(
        "workers={} max_tasks={} insufficient_workers={} warmups_dropped={}",
        report.workers, report.max_tasks, report.insufficient_workers, report.warmups_dropped
    );
    write_output(&common.out, &report.series.to_csv())?;
    if let Some(plot) = &common.plot {
        let csv = common
            .out
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "series.csv".into());
        let xlabel = if y_name == "case1" {
            "input bytes"
        } else {
            "cube rows"
        };
        std::fs::write(
            plot,
            bench::gnuplot_script(&csv, title, xlabel, ylabel, y_name, z_name),
        )?;
    }
    Ok(0)
}

fn serve(mut cfg: GatewayConfig, args: &ServeArgs) -> anyhow::Result<u8> {
    if let Some(listen) = &args.listen {
        cfg.listen_address = listen.clone();
    }
    let w = kind("io", Warehouse::open(cfg))?;
    let registry = kind("registry", w.registry())?;
    let addr = w.config.listen_address.clone();
    let state = Arc::new(AppState::new(w, registry));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))
            .map_err(|e| e.context(Kind("io")))?;
        crate::service::serve(state, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(0)
}
