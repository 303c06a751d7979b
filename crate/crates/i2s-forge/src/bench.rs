//! Benchmark matrix: every requested stage variant against every requested
//! target, several independent trials per cell, aggregated into a
//! deterministic comparison table.
//!
//! Trials differ only in their campaign RNG seed (the trial index), so a
//! matrix is reproducible run to run, whatever the worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::campaign::{run_campaign, CampaignConfig, CampaignStats};
use crate::error::{Error, Result};
use crate::i2s::variant_by_name;
use crate::targets::{builtin_target, TargetParams};

/// What to run: the cross product of targets and variants.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub targets: Vec<String>,
    pub variants: Vec<String>,
    pub trials: u64,
    pub max_execs: u64,
    pub havoc_per_seed: u64,
    /// Worker threads; results are ordered the same regardless.
    pub jobs: usize,
}

impl BenchSpec {
    pub fn new(targets: Vec<String>, variants: Vec<String>) -> Self {
        BenchSpec {
            targets,
            variants,
            trials: 1,
            max_execs: 100_000,
            havoc_per_seed: crate::campaign::DEFAULT_HAVOC_PER_SEED,
            jobs: 1,
        }
    }
}

/// Across-trial means of the headline columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMeans {
    pub cycles_done: f64,
    pub execs_per_sec: f64,
    pub corpus_count: f64,
    pub edges_found: f64,
    pub max_time_per_seed: f64,
    pub avg_time_per_seed: f64,
    pub max_execs_per_seed: f64,
    pub avg_execs_per_seed: f64,
}

/// One (target, variant) cell with all its trial stats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub target: String,
    pub fuzzer: String,
    pub trials: Vec<CampaignStats>,
    pub means: CellMeans,
    /// Per-trial plot CSVs, kept out of the JSON form.
    #[serde(skip)]
    pub plots: Vec<String>,
}

fn means_of(trials: &[CampaignStats]) -> CellMeans {
    let n = trials.len().max(1) as f64;
    let sum = |f: &dyn Fn(&CampaignStats) -> f64| trials.iter().map(f).sum::<f64>() / n;
    CellMeans {
        cycles_done: sum(&|s| s.cycles_done as f64),
        execs_per_sec: sum(&|s| s.execs_per_sec),
        corpus_count: sum(&|s| s.corpus_count as f64),
        edges_found: sum(&|s| s.edges_found as f64),
        max_time_per_seed: sum(&|s| s.max_time_per_seed),
        avg_time_per_seed: sum(&|s| s.avg_time_per_seed),
        max_execs_per_seed: sum(&|s| s.max_execs_per_seed as f64),
        avg_execs_per_seed: sum(&|s| s.avg_execs_per_seed),
    }
}

/// Run the full matrix. Each job builds its own target instance and
/// executor, so workers share nothing but the work list.
pub fn run_matrix(spec: &BenchSpec) -> Result<Vec<CellResult>> {
    struct Job {
        target: String,
        fuzzer: &'static str,
        trial: u64,
    }

    let mut jobs = Vec::new();
    let mut cells = Vec::new();
    for target_name in &spec.targets {
        builtin_target(target_name, &TargetParams::default())?;
        for variant_name in &spec.variants {
            let variant = variant_by_name(variant_name).ok_or_else(|| Error::UnknownVariant {
                name: variant_name.clone(),
                valid: crate::i2s::all_variants().iter().map(|v| v.name).collect(),
            })?;
            cells.push((target_name.clone(), variant.name));
            for trial in 0..spec.trials {
                jobs.push(Job { target: target_name.clone(), fuzzer: variant.name, trial });
            }
        }
    }

    let results: Vec<Mutex<Option<Result<(CampaignStats, String)>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = spec.jobs.max(1).min(jobs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let job = &jobs[i];
                let outcome = (|| {
                    let target = builtin_target(&job.target, &TargetParams::default())?;
                    let variant = variant_by_name(job.fuzzer).expect("validated above");
                    let mut config = CampaignConfig::new(variant.name, variant.config)
                        .with_max_execs(spec.max_execs);
                    config.havoc_per_seed = spec.havoc_per_seed;
                    config.rng_seed = job.trial;
                    let out = run_campaign(&target, &[target.default_seed().to_vec()], &config)?;
                    Ok((out.stats, out.plot_csv))
                })();
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut stats: Vec<CampaignStats> = Vec::with_capacity(jobs.len());
    let mut plots: Vec<String> = Vec::with_capacity(jobs.len());
    for slot in results {
        let (stat, plot) = slot.into_inner().unwrap().expect("worker finished")?;
        stats.push(stat);
        plots.push(plot);
    }

    let mut out = Vec::new();
    let mut offset = 0;
    for (target, fuzzer) in cells {
        let span = offset..offset + spec.trials as usize;
        let trials: Vec<CampaignStats> = stats[span.clone()].to_vec();
        let cell_plots: Vec<String> = plots[span].to_vec();
        offset += spec.trials as usize;
        let means = means_of(&trials);
        out.push(CellResult {
            target,
            fuzzer: fuzzer.to_string(),
            trials,
            means,
            plots: cell_plots,
        });
    }
    Ok(out)
}

/// Fixed-width table of across-trial means, one row per cell.
pub fn render_bench_table(cells: &[CellResult]) -> String {
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
    let rows: Vec<[String; 9]> = cells
        .iter()
        .map(|c| {
            [
                c.fuzzer.clone(),
                c.target.clone(),
                format!("{:.1}", c.means.cycles_done),
                format!("{:.1}", c.means.execs_per_sec),
                format!("{:.1}", c.means.corpus_count),
                format!("{:.3}s", c.means.max_time_per_seed),
                format!("{:.3}s", c.means.avg_time_per_seed),
                format!("{:.1}", c.means.max_execs_per_seed),
                format!("{:.1}", c.means.avg_execs_per_seed),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |cols: &[String]| {
        let line: Vec<String> = cols
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
    push_row(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for row in &rows {
        push_row(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> BenchSpec {
        let mut spec = BenchSpec::new(
            vec!["magic_header".into(), "mega_switch".into()],
            vec!["baseline".into(), "impr_extra_cache".into()],
        );
        spec.trials = 2;
        spec.max_execs = 3_000;
        spec.havoc_per_seed = 16;
        spec.jobs = 4;
        spec
    }

    #[test]
    fn matrix_is_deterministic_across_runs_and_worker_counts() {
        let spec = tiny_spec();
        let a = run_matrix(&spec).unwrap();
        let mut serial = tiny_spec();
        serial.jobs = 1;
        let b = run_matrix(&serial).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(render_bench_table(&a), render_bench_table(&b));
        for (ca, cb) in a.iter().zip(&b) {
            assert_eq!(ca.plots, cb.plots);
            assert_eq!(ca.plots.len(), ca.trials.len());
        }
    }

    #[test]
    fn matrix_yields_one_cell_per_target_variant_pair() {
        let cells = run_matrix(&tiny_spec()).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].trials.len(), 2);
        let expected: Vec<(&str, &str)> = vec![
            ("magic_header", "baseline"),
            ("magic_header", "impr_extra_cache"),
            ("mega_switch", "baseline"),
            ("mega_switch", "impr_extra_cache"),
        ];
        for (cell, (target, fuzzer)) in cells.iter().zip(expected) {
            assert_eq!(cell.target, target);
            assert_eq!(cell.fuzzer, fuzzer);
        }
    }

    #[test]
    fn means_average_the_trials() {
        let cells = run_matrix(&tiny_spec()).unwrap();
        for cell in &cells {
            let by_hand = cell.trials.iter().map(|t| t.edges_found as f64).sum::<f64>()
                / cell.trials.len() as f64;
            assert!((cell.means.edges_found - by_hand).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_names_are_rejected_up_front() {
        let spec = BenchSpec::new(vec!["magic_header".into()], vec!["warpdrive".into()]);
        let err = run_matrix(&spec).unwrap_err();
        assert!(err.to_string().contains("warpdrive"));
        let spec = BenchSpec::new(vec!["no_such_target".into()], vec!["baseline".into()]);
        assert!(run_matrix(&spec).is_err());
    }

    #[test]
    fn bench_table_is_aligned_and_complete() {
        let cells = run_matrix(&tiny_spec()).unwrap();
        let table = render_bench_table(&cells);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("fuzzer"));
        assert!(lines[1].contains("magic_header"));
    }
}
