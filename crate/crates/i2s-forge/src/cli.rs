//! Command-line front end: single campaigns, the benchmark matrix, the
//! mapping oracle, and report aggregation over saved stats files.
//!
//! Exit codes: 0 success, 1 oracle/acceptance failure, 2 usage error,
//! 3 I/O failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::bench::{render_bench_table, run_matrix, BenchSpec};
use crate::campaign::{
    render_report, render_seed_rankings, run_campaign_observed, CampaignConfig, CampaignStats,
    SeedEntry, DEFAULT_HAVOC_PER_SEED,
};
use crate::color::{colorize, default_color_budget, ColorMode};
use crate::coverage::EdgeSet;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::cache::CacheMode;
use crate::i2s::{
    all_variants, variant_by_name, ConditionMode, MappingMode, NullObserver, StageEvent,
    StageObserver, VariantSpec,
};
use crate::taint::{brute_force_check, fine_map};
use crate::targets::{builtin_target, TargetParams, TargetProgram, BUILTIN_TARGET_NAMES};

#[derive(Parser)]
#[command(
    name = "i2s-forge",
    version,
    about = "Input-to-state comparison solving stage with a desk-scale benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign and write plot data, stats, report and final corpus.
    Run(RunArgs),
    /// Run the target x variant matrix with several trials per cell.
    Bench(BenchArgs),
    /// Check the fine taint mapping against a brute-force region-flip oracle.
    Oracle(OracleArgs),
    /// Aggregate saved stats.json files into one comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct TargetArgs {
    /// Builtin target program.
    #[arg(long)]
    target: String,
    /// Target parameter as key=value; may be repeated.
    #[arg(long = "param", value_parser = parse_key_val)]
    params: Vec<(String, String)>,
}

impl TargetArgs {
    fn build(&self) -> Result<TargetProgram> {
        builtin_target(&self.target, &TargetParams::from_pairs(self.params.iter().cloned()))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Stage variant; aflplusplus_cmplog_-prefixed names are accepted.
    #[arg(long, default_value = "baseline")]
    variant: String,
    /// Stop after this many executions (virtual clock, reproducible).
    #[arg(long)]
    budget_execs: Option<u64>,
    /// Stop after this many wall-clock seconds (not reproducible).
    #[arg(long)]
    budget_secs: Option<f64>,
    /// Campaign RNG seed.
    #[arg(long = "seed", default_value_t = 0)]
    rng_seed: u64,
    /// Directory of raw seed files, loaded in filename order.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Havoc mutations per scheduled seed.
    #[arg(long, default_value_t = DEFAULT_HAVOC_PER_SEED)]
    havoc_per_seed: u64,
    /// Colorization mode: legacy or entropic.
    #[arg(long, default_value = "legacy", value_parser = parse_color_mode)]
    color_mode: ColorMode,
    /// Override the variant's prefix condition (and, or).
    #[arg(long, value_parser = parse_condition)]
    condition: Option<ConditionMode>,
    /// Override the variant's taint mapping (none, coarse, fine).
    #[arg(long, value_parser = parse_mapping)]
    mapping: Option<MappingMode>,
    /// Override the variant's cache (off, fixed, lru:<capacity>).
    #[arg(long, value_parser = parse_cache)]
    cache: Option<CacheMode>,
    /// Force the identical-byte skip on.
    #[arg(long)]
    skip_identical: bool,
    /// Disable the prefix condition entirely (transform stand-in).
    #[arg(long)]
    transform_stub: bool,
    /// Override the per-seed stage execution cap.
    #[arg(long)]
    max_stage_execs: Option<u64>,
    /// Output directory.
    #[arg(long, env = "I2S_FORGE_OUT", default_value = "out")]
    out: PathBuf,
    /// Write one line per executed stage probe to this file.
    #[arg(long, value_name = "PATH")]
    trace_i2s: Option<PathBuf>,
    /// Print the fine taint association of the first seed.
    #[arg(long)]
    dump_taint_map: bool,
    /// Print the union edge coverage of the final corpus.
    #[arg(long)]
    dump_coverage: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated target list; defaults to every builtin.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    /// Comma-separated variant list; defaults to all five.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Independent trials per cell; trial k uses RNG seed k.
    #[arg(long, default_value_t = 1)]
    trials: u64,
    /// Execution budget per campaign (virtual clock).
    #[arg(long, default_value_t = 100_000)]
    budget_execs: u64,
    /// Havoc mutations per scheduled seed.
    #[arg(long, default_value_t = DEFAULT_HAVOC_PER_SEED)]
    havoc_per_seed: u64,
    /// Worker threads; the output does not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, env = "I2S_FORGE_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Directory of raw seed files; defaults to the target's builtin seed.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// RNG seed for colorization and oracle probes.
    #[arg(long = "seed", default_value_t = 0)]
    rng_seed: u64,
    /// Colorization mode: legacy or entropic.
    #[arg(long, default_value = "entropic", value_parser = parse_color_mode)]
    color_mode: ColorMode,
}

#[derive(Args)]
struct ReportArgs {
    /// stats.json files, or directories scanned for *.json (sorted).
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Also write the table to <dir>/report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_key_val(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn parse_color_mode(s: &str) -> std::result::Result<ColorMode, String> {
    match s {
        "legacy" => Ok(ColorMode::Legacy),
        "entropic" => Ok(ColorMode::Entropic),
        other => Err(format!("unknown color mode {other:?}; expected legacy or entropic")),
    }
}

fn parse_condition(s: &str) -> std::result::Result<ConditionMode, String> {
    match s {
        "and" => Ok(ConditionMode::And),
        "or" => Ok(ConditionMode::Or),
        other => Err(format!("unknown condition {other:?}; expected and or or")),
    }
}

fn parse_mapping(s: &str) -> std::result::Result<MappingMode, String> {
    match s {
        "none" => Ok(MappingMode::None),
        "coarse" => Ok(MappingMode::Coarse),
        "fine" => Ok(MappingMode::Fine),
        other => Err(format!("unknown mapping {other:?}; expected none, coarse or fine")),
    }
}

fn parse_cache(s: &str) -> std::result::Result<CacheMode, String> {
    match s {
        "off" => Ok(CacheMode::Off),
        "fixed" => Ok(CacheMode::FixedSet),
        other => match other.strip_prefix("lru:").map(str::parse::<usize>) {
            Some(Ok(cap)) if cap >= 1 => Ok(CacheMode::Lru(cap)),
            _ => Err(format!("unknown cache {other:?}; expected off, fixed or lru:<capacity>")),
        },
    }
}

fn resolve_variant(name: &str) -> Result<VariantSpec> {
    variant_by_name(name).ok_or_else(|| Error::UnknownVariant {
        name: name.to_string(),
        valid: all_variants().iter().map(|v| v.name).collect(),
    })
}

/// Raw seed files in filename order; an empty directory is a usage error.
fn read_seed_dir(dir: &Path) -> Result<Vec<Vec<u8>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    paths.sort();
    let mut seeds = Vec::new();
    for path in paths {
        if path.is_file() {
            seeds.push(fs::read(&path).map_err(|e| Error::io(&path, e))?);
        }
    }
    if seeds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(seeds)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Print to stdout, tolerating a closed pipe: `i2s-forge ... | head` should
/// truncate the listing, not kill the process before its artifact writes.
fn emit(text: impl AsRef<str>) {
    use std::io::{ErrorKind, Write as _};
    if let Err(err) = std::io::stdout().write_all(text.as_ref().as_bytes()) {
        if err.kind() != ErrorKind::BrokenPipe {
            panic!("stdout: {err}");
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Observer that renders every executed probe as one trace line.
struct TraceObserver {
    lines: String,
}

impl StageObserver for TraceObserver {
    fn on_event(&mut self, event: StageEvent<'_>) {
        if let StageEvent::Executed { info, .. } = event {
            writeln!(
                self.lines,
                "site={} slot={} side={} variant={} idx={} len={}",
                info.site,
                info.slot,
                info.side.index(),
                info.variant,
                info.idx,
                info.written_len
            )
            .unwrap();
        }
    }
}

fn load_seeds(dir: &Option<PathBuf>, target: &TargetProgram) -> Result<Vec<Vec<u8>>> {
    match dir {
        Some(dir) => read_seed_dir(dir),
        None => Ok(vec![target.default_seed().to_vec()]),
    }
}

/// Union edge coverage of the corpus, one `edge=<n>` line per covered edge.
fn render_corpus_coverage(target: &TargetProgram, corpus: &[SeedEntry]) -> Result<String> {
    let mut exec = Executor::new();
    let mut edges = EdgeSet::new(target.map_size());
    let mut covered = std::collections::BTreeSet::new();
    for entry in corpus {
        let result = exec.execute(target, &entry.input, false)?;
        edges.absorb(&result.coverage);
        covered.extend(result.coverage.entries().iter().map(|&(i, _)| i));
    }
    let mut out = String::new();
    for edge in &covered {
        writeln!(out, "edge={edge}").unwrap();
    }
    writeln!(out, "edges_total={}", edges.len()).unwrap();
    Ok(out)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let target = args.target.build()?;
    let variant = resolve_variant(&args.variant)?;
    let seeds = load_seeds(&args.seeds, &target)?;

    let mut stage = variant.config;
    if let Some(condition) = args.condition {
        stage.condition = condition;
    }
    if let Some(mapping) = args.mapping {
        stage.mapping = mapping;
    }
    if let Some(cache) = args.cache {
        stage.cache = cache;
    }
    if args.skip_identical {
        stage.skip_identical = true;
    }
    if args.transform_stub {
        stage.transform_stub = true;
    }
    if let Some(cap) = args.max_stage_execs {
        stage.max_stage_execs = cap;
    }

    let mut config = CampaignConfig::new(variant.name, stage);
    config.color_mode = args.color_mode;
    config.rng_seed = args.rng_seed;
    config.havoc_per_seed = args.havoc_per_seed;
    config.max_execs = args.budget_execs;
    config.max_wall_seconds = args.budget_secs;
    if config.max_execs.is_none() && config.max_wall_seconds.is_none() {
        config.max_execs = Some(100_000);
    }

    if args.dump_taint_map {
        let mut exec = Executor::new();
        let mut rng = ChaCha12Rng::seed_from_u64(args.rng_seed);
        let seed = &seeds[0];
        let budget = default_color_budget(seed.len());
        let col = colorize(&mut exec, &target, seed, args.color_mode, &mut rng, budget)?;
        let orig = exec.execute(&target, seed, true)?.cmp_map.expect("cmplog requested");
        let assoc = fine_map(&mut exec, &target, seed, &col, &orig, budget)?;
        emit("# taint map\n");
        emit(assoc.dump());
    }

    let mut trace = TraceObserver { lines: String::new() };
    let outcome = if args.trace_i2s.is_some() {
        run_campaign_observed(&target, &seeds, &config, &mut trace)?
    } else {
        run_campaign_observed(&target, &seeds, &config, &mut NullObserver)?
    };
    if let Some(path) = &args.trace_i2s {
        write_file(path, trace.lines.as_bytes())?;
    }
    if args.dump_coverage {
        emit("# coverage\n");
        emit(render_corpus_coverage(&target, &outcome.corpus)?);
    }

    let report = format!(
        "{}\ntop seeds by time:\n{}",
        render_report(std::slice::from_ref(&outcome.stats)),
        render_seed_rankings(&outcome.corpus, 15)
    );
    create_dir(&args.out)?;
    write_file(&args.out.join("plot_data"), outcome.plot_csv.as_bytes())?;
    let stats_json = serde_json::to_string_pretty(&outcome.stats).expect("stats serialize");
    write_file(&args.out.join("stats.json"), format!("{stats_json}\n").as_bytes())?;
    write_file(&args.out.join("report.txt"), report.as_bytes())?;
    let corpus_dir = args.out.join("corpus");
    create_dir(&corpus_dir)?;
    for entry in &outcome.corpus {
        write_file(&corpus_dir.join(format!("id:{:06}", entry.id)), &entry.input)?;
    }

    emit(&report);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: &BenchArgs) -> Result<ExitCode> {
    let targets = if args.targets.is_empty() {
        BUILTIN_TARGET_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        args.targets.clone()
    };
    let variants = if args.variants.is_empty() {
        all_variants().iter().map(|v| v.name.to_string()).collect()
    } else {
        args.variants.clone()
    };
    let mut spec = BenchSpec::new(targets, variants);
    spec.trials = args.trials.max(1);
    spec.max_execs = args.budget_execs;
    spec.havoc_per_seed = args.havoc_per_seed;
    spec.jobs = args.jobs;

    let cells = run_matrix(&spec)?;
    let table = render_bench_table(&cells);

    create_dir(&args.out)?;
    let json = serde_json::to_string_pretty(&cells).expect("cells serialize");
    write_file(&args.out.join("bench.json"), format!("{json}\n").as_bytes())?;
    write_file(&args.out.join("report.txt"), table.as_bytes())?;
    for cell in &cells {
        for (trial, plot) in cell.plots.iter().enumerate() {
            let name = format!("plot_data.{}.{}.{trial}", cell.target, cell.fuzzer);
            write_file(&args.out.join(name), plot.as_bytes())?;
        }
    }

    emit(&table);
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(args: &OracleArgs) -> Result<ExitCode> {
    let target = args.target.build()?;
    let seeds = load_seeds(&args.seeds, &target)?;
    let mut exec = Executor::new();
    let mut rng = ChaCha12Rng::seed_from_u64(args.rng_seed);
    let mut stable_total = 0usize;
    let mut agree_total = 0usize;
    for (i, seed) in seeds.iter().enumerate() {
        let budget = default_color_budget(seed.len());
        let col = colorize(&mut exec, &target, seed, args.color_mode, &mut rng, budget)?;
        let orig = exec.execute(&target, seed, true)?.cmp_map.expect("cmplog requested");
        let assoc = fine_map(&mut exec, &target, seed, &col, &orig, budget)?;
        let report = brute_force_check(&mut exec, &target, seed, &col, &orig, &assoc, &mut rng)?;
        emit(format!(
            "seed=id:{i:06} bytes={} regions={} pairs_total={} pairs_stable={} pairs_agree={} agreement={:.2}% probes={}\n",
            seed.len(),
            col.regions.len(),
            report.pairs_total,
            report.pairs_stable,
            report.pairs_agree,
            report.agreement() * 100.0,
            report.probe_execs,
        ));
        for d in &report.disagreements {
            emit(format!(
                "disagree site={} slot={} side={} region={} predicted={}\n",
                d.key.site,
                d.key.slot,
                d.key.side.label(),
                d.region,
                if d.predicted_depends { "depends" } else { "independent" },
            ));
        }
        stable_total += report.pairs_stable;
        agree_total += report.pairs_agree;
    }
    let overall = if stable_total == 0 { 1.0 } else { agree_total as f64 / stable_total as f64 };
    emit(format!(
        "overall agreement={:.2}% ({agree_total}/{stable_total} stable pairs)\n",
        overall * 100.0
    ));
    if agree_total == stable_total {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    let mut files = Vec::new();
    for path in &args.paths {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .map(|entry| entry.map(|e| e.path()))
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(path, e))?;
            found.retain(|p| p.extension().is_some_and(|ext| ext == "json"));
            found.sort();
            files.extend(found);
        } else {
            files.push(path.clone());
        }
    }
    let mut rows: Vec<CampaignStats> = Vec::new();
    for file in &files {
        let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
        let stats = serde_json::from_slice(&bytes).map_err(|e| Error::BadStats {
            path: file.clone(),
            reason: e.to_string(),
        })?;
        rows.push(stats);
    }
    if rows.is_empty() {
        return Err(Error::BadStats {
            path: args.paths[0].clone(),
            reason: "no stats files found".to_string(),
        });
    }
    let table = render_report(&rows);
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_file(&dir.join("report.txt"), table.as_bytes())?;
    }
    emit(&table);
    Ok(ExitCode::SUCCESS)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::UnknownTarget { .. }
        | Error::UnknownVariant { .. }
        | Error::BadTargetParam { .. }
        | Error::BadStats { .. }
        | Error::EmptyCorpus => 2,
        _ => 1,
    }
}

/// Parse arguments and dispatch; the binary's whole `main`.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
