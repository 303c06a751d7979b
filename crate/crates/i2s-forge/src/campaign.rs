//! Campaign driver: schedule a seed queue through colorization, operand
//! logging, the input-to-state stage and a small havoc tail, tracking
//! coverage, per-seed cost and progress over time.
//!
//! Executions are the only meaningful cost unit for in-process targets, so
//! budgeted runs use a virtual clock that advances a fixed rate per
//! execution. That makes every derived artifact — plot rows, reports,
//! serialized stats — a pure function of the configuration, reproducible
//! byte for byte.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::cache::ReplacementCache;
use crate::color::{colorize, default_color_budget, ColorMode};
use crate::coverage::EdgeSet;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::i2s::{input_to_state, I2SConfig, I2SOutcome, MappingMode, NullObserver, StageInputs, StageObserver};
use crate::taint::fine_map;
use crate::targets::TargetProgram;

/// Rate of the virtual clock: executions per simulated second.
pub const VIRTUAL_EXECS_PER_SEC: f64 = 10_000.0;

pub const DEFAULT_HAVOC_PER_SEED: u64 = 256;

pub const PLOT_HEADER: &str = "relative_time,cycles_done,corpus_count,execs_done,execs_per_sec,edges_found";

/// One corpus entry with its accumulated processing cost.
#[derive(Debug, Clone)]
pub struct SeedEntry {
    pub id: u32,
    pub input: Vec<u8>,
    /// Times the queue cursor reached this entry.
    pub processed: u64,
    /// Executions spent processing this entry, all phases included.
    pub execs_spent: u64,
    /// Seconds (virtual or wall) spent processing this entry.
    pub time_spent: f64,
}

/// Campaign-wide knobs. Exactly one budget must be set.
#[derive(Debug, Clone)]
pub struct CampaignConfig {
    /// Reported as the `fuzzer` column.
    pub fuzzer_name: String,
    pub stage: I2SConfig,
    pub color_mode: ColorMode,
    /// Stop once this many executions were spent (virtual clock).
    pub max_execs: Option<u64>,
    /// Stop after this much wall time (wall clock; not reproducible).
    pub max_wall_seconds: Option<f64>,
    pub rng_seed: u64,
    pub havoc_per_seed: u64,
}

impl CampaignConfig {
    pub fn new(fuzzer_name: impl Into<String>, stage: I2SConfig) -> Self {
        CampaignConfig {
            fuzzer_name: fuzzer_name.into(),
            stage,
            color_mode: ColorMode::Legacy,
            max_execs: None,
            max_wall_seconds: None,
            rng_seed: 0,
            havoc_per_seed: DEFAULT_HAVOC_PER_SEED,
        }
    }

    pub fn with_max_execs(mut self, execs: u64) -> Self {
        self.max_execs = Some(execs);
        self
    }
}

/// Stage counters summed over every stage invocation of a campaign.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct StageTotals {
    pub candidate_bytes: u64,
    pub stage_execs: u64,
    pub skipped_by_cache: u64,
    pub skipped_identical: u64,
    pub skipped_by_condition: u64,
    pub skipped_by_novelty: u64,
    pub skipped_by_budget: u64,
    pub sites_total: u64,
    pub sites_skipped_unchanged: u64,
    pub variants_skipped_mapping: u64,
    pub novel_inputs: u64,
}

impl StageTotals {
    fn absorb(&mut self, out: &I2SOutcome) {
        self.candidate_bytes += out.candidate_bytes;
        self.stage_execs += out.stage_execs;
        self.skipped_by_cache += out.skipped_by_cache;
        self.skipped_identical += out.skipped_identical;
        self.skipped_by_condition += out.skipped_by_condition;
        self.skipped_by_novelty += out.skipped_by_novelty;
        self.skipped_by_budget += out.skipped_by_budget;
        self.sites_total += out.sites_total;
        self.sites_skipped_unchanged += out.sites_skipped_unchanged;
        self.variants_skipped_mapping += out.variants_skipped_mapping;
        self.novel_inputs += out.novel_inputs.len() as u64;
    }
}

/// Final account of one campaign, serializable for later aggregation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CampaignStats {
    pub fuzzer: String,
    pub target: String,
    pub cycles_done: u64,
    pub execs_done: u64,
    pub execs_per_sec: f64,
    pub corpus_count: usize,
    pub edges_found: u64,
    pub run_time: f64,
    pub max_time_per_seed: f64,
    pub avg_time_per_seed: f64,
    pub max_execs_per_seed: u64,
    pub avg_execs_per_seed: f64,
    pub stage: StageTotals,
}

#[derive(Debug)]
pub struct CampaignOutcome {
    pub stats: CampaignStats,
    pub corpus: Vec<SeedEntry>,
    pub plot_csv: String,
}

enum Clock {
    Virtual,
    Wall(Instant),
}

impl Clock {
    fn now(&self, execs: u64) -> f64 {
        match self {
            Clock::Virtual => execs as f64 / VIRTUAL_EXECS_PER_SEC,
            Clock::Wall(start) => start.elapsed().as_secs_f64(),
        }
    }
}

struct PlotRecorder {
    rows: String,
    last_execs: u64,
    last_time: f64,
    any: bool,
}

impl PlotRecorder {
    fn new() -> Self {
        PlotRecorder { rows: String::new(), last_execs: 0, last_time: 0.0, any: false }
    }

    fn emit(&mut self, time: f64, cycles: u64, corpus: usize, execs: u64, edges: u64) {
        let eps = if time > 0.0 { execs as f64 / time } else { 0.0 };
        writeln!(self.rows, "{time:.6},{cycles},{corpus},{execs},{eps:.6},{edges}").unwrap();
        self.last_execs = execs;
        self.last_time = time;
        self.any = true;
    }

    /// Record a row if enough progress accumulated: 1000 executions or one
    /// second since the previous row. Rows are strictly increasing in time.
    fn tick(&mut self, time: f64, cycles: u64, corpus: usize, execs: u64, edges: u64) {
        if execs <= self.last_execs && self.any {
            return;
        }
        if self.any && execs - self.last_execs < 1000 && time - self.last_time < 1.0 {
            return;
        }
        self.emit(time, cycles, corpus, execs, edges);
    }

    /// Force a final row when anything happened since the last one.
    fn finish(&mut self, time: f64, cycles: u64, corpus: usize, execs: u64, edges: u64) {
        if !self.any || execs > self.last_execs {
            self.emit(time, cycles, corpus, execs, edges);
        }
    }

    fn into_csv(self) -> String {
        format!("{PLOT_HEADER}\n{}", self.rows)
    }
}

const INTERESTING_8: [u8; 9] = [0x00, 0x01, 0x10, 0x20, 0x40, 0x64, 0x7f, 0x80, 0xff];
const INTERESTING_32: [u32; 8] =
    [0, 1, 100, 65_535, 0x0100_0000, 0x7fff_ffff, 0x8000_0000, 0xffff_ffff];

fn havoc_mutate(input: &mut Vec<u8>, rng: &mut ChaCha12Rng) {
    if input.is_empty() {
        return;
    }
    let len = input.len();
    match rng.gen_range(0..4u8) {
        0 => {
            let pos = rng.gen_range(0..len);
            let bit = rng.gen_range(0..8);
            input[pos] ^= 1 << bit;
        }
        1 => {
            let pos = rng.gen_range(0..len);
            input[pos] = rng.gen();
        }
        2 => {
            let pos = rng.gen_range(0..len);
            input[pos] = INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())];
        }
        _ => {
            if len >= 4 {
                let pos = rng.gen_range(0..=len - 4);
                let value = INTERESTING_32[rng.gen_range(0..INTERESTING_32.len())];
                input[pos..pos + 4].copy_from_slice(&value.to_le_bytes());
            } else {
                let pos = rng.gen_range(0..len);
                input[pos] = INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())];
            }
        }
    }
}

/// Run one campaign over `initial_seeds`, using `observer` for stage events.
pub fn run_campaign_observed(
    target: &TargetProgram,
    initial_seeds: &[Vec<u8>],
    config: &CampaignConfig,
    observer: &mut dyn StageObserver,
) -> Result<CampaignOutcome> {
    if initial_seeds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.max_execs.is_none() && config.max_wall_seconds.is_none() {
        return Err(Error::NoBudget);
    }
    let clock = if config.max_wall_seconds.is_some() && config.max_execs.is_none() {
        Clock::Wall(Instant::now())
    } else {
        Clock::Virtual
    };

    let mut exec = Executor::new();
    let mut edges = EdgeSet::new(target.map_size());
    let mut cache = ReplacementCache::new(config.stage.cache);
    let mut rng = ChaCha12Rng::seed_from_u64(config.rng_seed);
    let mut plot = PlotRecorder::new();
    let mut totals = StageTotals::default();

    let mut queue: Vec<SeedEntry> = Vec::new();
    for input in initial_seeds {
        let result = exec.execute(target, input, false)?;
        edges.absorb(&result.coverage);
        queue.push(SeedEntry {
            id: queue.len() as u32,
            input: input.clone(),
            processed: 0,
            execs_spent: 0,
            time_spent: 0.0,
        });
    }
    let mut next_id = queue.len() as u32;
    let mut cycles_done = 0u64;
    let mut cursor = 0usize;

    plot.tick(clock.now(exec.executions()), cycles_done, queue.len(), exec.executions(), edges.len());

    loop {
        let execs = exec.executions();
        let now = clock.now(execs);
        let out_of_budget = config.max_execs.map_or(false, |cap| execs >= cap)
            || config.max_wall_seconds.map_or(false, |cap| now >= cap);
        if out_of_budget {
            break;
        }
        if cursor >= queue.len() {
            cycles_done += 1;
            cursor = 0;
        }

        let seed = queue[cursor].input.clone();
        let before = exec.executions();
        let seed_started = Instant::now();

        let color_budget = default_color_budget(seed.len());
        let col = colorize(&mut exec, target, &seed, config.color_mode, &mut rng, color_budget)?;
        let orig_run = exec.execute(target, &seed, true)?;
        edges.absorb(&orig_run.coverage);
        let col_run = exec.execute(target, &col.input, true)?;
        edges.absorb(&col_run.coverage);
        let orig_map = orig_run.cmp_map.expect("cmplog requested");
        let col_map = col_run.cmp_map.expect("cmplog requested");

        let assoc = if config.stage.mapping == MappingMode::Fine {
            Some(fine_map(&mut exec, target, &seed, &col, &orig_map, color_budget)?)
        } else {
            None
        };

        let stage_out = input_to_state(
            &mut exec,
            target,
            StageInputs {
                seed: &seed,
                colorization: &col,
                orig_map: &orig_map,
                col_map: &col_map,
                assoc: assoc.as_ref(),
            },
            &mut edges,
            &mut cache,
            &config.stage,
            observer,
        )?;
        totals.absorb(&stage_out);
        for novel in &stage_out.novel_inputs {
            queue.push(SeedEntry {
                id: next_id,
                input: novel.clone(),
                processed: 0,
                execs_spent: 0,
                time_spent: 0.0,
            });
            next_id += 1;
        }

        for _ in 0..config.havoc_per_seed {
            let mut mutant = seed.clone();
            havoc_mutate(&mut mutant, &mut rng);
            let result = exec.execute(target, &mutant, false)?;
            if edges.absorb(&result.coverage) > 0 {
                queue.push(SeedEntry {
                    id: next_id,
                    input: mutant,
                    processed: 0,
                    execs_spent: 0,
                    time_spent: 0.0,
                });
                next_id += 1;
            }
        }

        let spent = exec.executions() - before;
        let entry = &mut queue[cursor];
        entry.processed += 1;
        entry.execs_spent += spent;
        entry.time_spent += match clock {
            Clock::Virtual => spent as f64 / VIRTUAL_EXECS_PER_SEC,
            Clock::Wall(_) => seed_started.elapsed().as_secs_f64(),
        };
        cursor += 1;

        plot.tick(clock.now(exec.executions()), cycles_done, queue.len(), exec.executions(), edges.len());
    }

    let execs_done = exec.executions();
    let run_time = clock.now(execs_done);
    plot.finish(run_time, cycles_done, queue.len(), execs_done, edges.len());

    let processed: Vec<&SeedEntry> = queue.iter().filter(|s| s.processed > 0).collect();
    let (max_time, avg_time, max_execs, avg_execs) = if processed.is_empty() {
        (0.0, 0.0, 0, 0.0)
    } else {
        let n = processed.len() as f64;
        (
            processed.iter().map(|s| s.time_spent).fold(0.0, f64::max),
            processed.iter().map(|s| s.time_spent).sum::<f64>() / n,
            processed.iter().map(|s| s.execs_spent).max().unwrap(),
            processed.iter().map(|s| s.execs_spent).sum::<u64>() as f64 / n,
        )
    };

    let stats = CampaignStats {
        fuzzer: config.fuzzer_name.clone(),
        target: target.name().to_string(),
        cycles_done,
        execs_done,
        execs_per_sec: if run_time > 0.0 { execs_done as f64 / run_time } else { 0.0 },
        corpus_count: queue.len(),
        edges_found: edges.len(),
        run_time,
        max_time_per_seed: max_time,
        avg_time_per_seed: avg_time,
        max_execs_per_seed: max_execs,
        avg_execs_per_seed: avg_execs,
        stage: totals,
    };
    Ok(CampaignOutcome { stats, corpus: queue, plot_csv: plot.into_csv() })
}

pub fn run_campaign(
    target: &TargetProgram,
    initial_seeds: &[Vec<u8>],
    config: &CampaignConfig,
) -> Result<CampaignOutcome> {
    run_campaign_observed(target, initial_seeds, config, &mut NullObserver)
}

/// Seeds ranked by processing time, costliest first; ties break on id.
pub fn top_seeds_by_time(corpus: &[SeedEntry], count: usize) -> Vec<&SeedEntry> {
    let mut ranked: Vec<&SeedEntry> = corpus.iter().filter(|s| s.processed > 0).collect();
    ranked.sort_by(|a, b| {
        b.time_spent
            .partial_cmp(&a.time_spent)
            .unwrap()
            .then(a.id.cmp(&b.id))
    });
    ranked.truncate(count);
    ranked
}

/// Text table of the costliest seeds.
pub fn render_seed_rankings(corpus: &[SeedEntry], count: usize) -> String {
    let mut out = String::from("rank  seed    time/seed  execs/seed  bytes\n");
    for (rank, seed) in top_seeds_by_time(corpus, count).iter().enumerate() {
        writeln!(
            out,
            "{:<4}  id:{:06}  {:>8.3}s  {:>10}  {:>5}",
            rank + 1,
            seed.id,
            seed.time_spent,
            seed.execs_spent,
            seed.input.len()
        )
        .unwrap();
    }
    out
}

/// Fixed-width comparison table over finished campaigns.
pub fn render_report(rows: &[CampaignStats]) -> String {
    let header = [
        "fuzzer",
        "binary",
        "cycles done",
        "execs/sec",
        "corpus count",
        "MaxTime/seed",
        "AvgTime/seed",
        "MaxExecs/seed",
        "AvgExecs/seed",
    ];
    let cells: Vec<[String; 9]> = rows
        .iter()
        .map(|s| {
            [
                s.fuzzer.clone(),
                s.target.clone(),
                s.cycles_done.to_string(),
                format!("{:.1}", s.execs_per_sec),
                s.corpus_count.to_string(),
                format!("{:.3}s", s.max_time_per_seed),
                format!("{:.3}s", s.avg_time_per_seed),
                s.max_execs_per_seed.to_string(),
                format!("{:.1}", s.avg_execs_per_seed),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let render_row = |out: &mut String, row: &[String]| {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if i < 2 {
                    format!("{:<width$}", cell, width = widths[i])
                } else {
                    format!("{:>width$}", cell, width = widths[i])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    let header_row: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    render_row(&mut out, &header_row);
    for row in &cells {
        render_row(&mut out, row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::i2s::all_variants;
    use crate::targets::{builtin_target, magic_header, TargetParams};

    fn target(name: &str) -> TargetProgram {
        builtin_target(name, &TargetParams::default()).unwrap()
    }

    fn quick_config(name: &str, max_execs: u64) -> CampaignConfig {
        let spec = crate::i2s::variant_by_name(name).unwrap();
        CampaignConfig::new(spec.name, spec.config).with_max_execs(max_execs)
    }

    #[test]
    fn empty_corpus_and_missing_budget_are_errors() {
        let t = target("mega_switch");
        let config = quick_config("baseline", 1000);
        assert!(matches!(run_campaign(&t, &[], &config), Err(Error::EmptyCorpus)));
        let unbudgeted = CampaignConfig::new("baseline", I2SConfig::default());
        assert!(matches!(
            run_campaign(&t, &[vec![1, 2, 3]], &unbudgeted),
            Err(Error::NoBudget)
        ));
    }

    #[test]
    fn campaign_is_deterministic_end_to_end() {
        let t = target("pcap_like");
        let seeds = vec![t.default_seed().to_vec(), vec![0u8; 40]];
        let config = quick_config("impr_extra_cache", 30_000);
        let a = run_campaign(&t, &seeds, &config).unwrap();
        let b = run_campaign(&t, &seeds, &config).unwrap();
        assert_eq!(a.plot_csv, b.plot_csv);
        assert_eq!(
            serde_json::to_string(&a.stats).unwrap(),
            serde_json::to_string(&b.stats).unwrap()
        );
        assert_eq!(render_report(&[a.stats]), render_report(&[b.stats]));
    }

    #[test]
    fn plot_rows_are_well_formed_and_time_increases() {
        let t = target("magic_header");
        let config = quick_config("baseline", 20_000);
        let out = run_campaign(&t, &[t.default_seed().to_vec()], &config).unwrap();
        let mut lines = out.plot_csv.lines();
        assert_eq!(lines.next().unwrap(), PLOT_HEADER);
        let mut last_time = -1.0;
        let mut rows = 0;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 6, "bad row {line}");
            let time: f64 = fields[0].parse().unwrap();
            assert!(time > last_time, "time must strictly increase: {line}");
            last_time = time;
            let eps: f64 = fields[4].parse().unwrap();
            assert!((eps - VIRTUAL_EXECS_PER_SEC).abs() < 1.0, "virtual rate expected: {line}");
            rows += 1;
        }
        assert!(rows >= 2);
    }

    #[test]
    fn campaign_discovers_the_first_gate_and_grows_the_corpus() {
        let t = target("magic_header");
        let config = quick_config("baseline", 50_000);
        let out = run_campaign(&t, &[t.default_seed().to_vec()], &config).unwrap();
        assert!(out.stats.corpus_count > 1, "stage should enqueue discoveries");
        let solved = out
            .corpus
            .iter()
            .any(|s| s.input.len() >= 4
                && u32::from_le_bytes(s.input[..4].try_into().unwrap()) == magic_header::DEFAULT_MAGIC_A);
        assert!(solved);
        assert!(out.stats.edges_found >= 3);
        assert!(out.stats.run_time > 0.0);
    }

    #[test]
    fn cheap_variants_complete_cycles_where_the_budget_allows() {
        let t = target("mega_switch");
        let seeds = vec![t.default_seed().to_vec()];
        let small = run_campaign(&t, &seeds, &quick_config("baseline", 10)).unwrap();
        assert_eq!(small.stats.cycles_done, 0, "budget below one pass");
        let big = run_campaign(&t, &seeds, &quick_config("impr_extra_cache", 100_000)).unwrap();
        assert!(big.stats.cycles_done >= 1, "cheap config should wrap the queue");
    }

    #[test]
    fn per_seed_accounting_feeds_the_report() {
        let t = target("deep_nest");
        let config = quick_config("baseline", 40_000);
        let out = run_campaign(&t, &[t.default_seed().to_vec()], &config).unwrap();
        assert!(out.stats.max_execs_per_seed as f64 >= out.stats.avg_execs_per_seed);
        assert!(out.stats.max_time_per_seed >= out.stats.avg_time_per_seed);
        let ranked = top_seeds_by_time(&out.corpus, 15);
        assert!(!ranked.is_empty());
        assert!(ranked.len() <= 15);
        for pair in ranked.windows(2) {
            assert!(pair[0].time_spent >= pair[1].time_spent);
        }
        let table = render_seed_rankings(&out.corpus, 15);
        assert!(table.starts_with("rank  seed"));
        let report = render_report(&[out.stats.clone()]);
        let mut lines = report.lines();
        assert!(lines.next().unwrap().starts_with("fuzzer"));
        assert!(report.contains("deep_nest"));
    }

    #[test]
    fn every_variant_runs_under_a_tight_budget() {
        let t = target("pcap_like");
        for spec in all_variants() {
            let config = CampaignConfig::new(spec.name, spec.config).with_max_execs(5_000);
            let out = run_campaign(&t, &[t.default_seed().to_vec()], &config).unwrap();
            assert!(out.stats.execs_done >= 5_000, "{}", spec.name);
            assert_eq!(out.stats.fuzzer, spec.name);
        }
    }
}
