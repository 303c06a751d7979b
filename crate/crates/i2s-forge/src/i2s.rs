//! The input-to-state solving stage: walk every logged comparison, render its
//! operands into byte patterns, locate the pattern in the input and overwrite
//! it byte by byte with the other operand, executing after each write.
//!
//! The stage is instrumented to the byte: every candidate write position ends
//! up in exactly one bucket — executed, suppressed by the cache, skipped as
//! identical, cut off by the prefix condition, cut short by a novelty break,
//! or dropped when the stage budget ran out — so run shapes can be compared
//! across configurations exactly.

use std::ops::Range;

use crate::cache::{Admission, CacheKey, CacheMode, ReplacementCache};
use crate::cmplog::{diff_maps, CmpEntry, CmpKind, CmpMap, InsPair, RtnPair};
use crate::color::Colorization;
use crate::coverage::EdgeSet;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::taint::{ChangeSet, OperandKey, Side, TaintAssociation};
use crate::targets::TargetProgram;

/// Prefix condition for byte-sequence (RTN) comparisons.
///
/// Extension keeps writing while the pattern still matches the buffer. `And`
/// aborts only when the colorized *and* the original pattern byte both
/// mismatch — on low-entropy operands the original side keeps matching long
/// after the colorized side stopped carrying information. `Or` aborts as
/// soon as either side mismatches. Integer (INS) comparisons always use the
/// strict form; their patterns are too short for leniency to help.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionMode {
    And,
    Or,
}

/// How taint information gates the stage. In every mode the candidate
/// offsets ride the colorized regions; mapping decides how much of that
/// space each operand is allowed to search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingMode {
    /// Attempt every offset for every operand.
    None,
    /// Skip sites untouched by colorization and variants whose pattern
    /// operand is input independent. Costs no executions.
    Coarse,
    /// Coarse gates plus per-operand restriction of the search offsets to
    /// the input regions the operand actually reacts to.
    Fine,
}

/// Stage configuration; the five benchmark variants are points in this space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct I2SConfig {
    pub condition: ConditionMode,
    pub mapping: MappingMode,
    pub cache: CacheMode,
    /// Skip executions whose written prefix equals the bytes it replaced —
    /// such a buffer is the unmodified colorized input, which already ran.
    pub skip_identical: bool,
    /// Disable the prefix condition entirely, as a transform-search stand-in
    /// where byte equality cannot guide extension.
    pub transform_stub: bool,
    /// Hard cap on executions spent by one stage invocation. The default
    /// guards ad-hoc runs against unbounded stages; the named benchmark
    /// variants run uncapped, because a stage that really does run to
    /// completion on every seed is the phenomenon being measured.
    pub max_stage_execs: u64,
}

pub const DEFAULT_MAX_STAGE_EXECS: u64 = 200_000;

impl Default for I2SConfig {
    fn default() -> Self {
        I2SConfig {
            condition: ConditionMode::And,
            mapping: MappingMode::None,
            cache: CacheMode::Off,
            skip_identical: false,
            transform_stub: false,
            max_stage_execs: DEFAULT_MAX_STAGE_EXECS,
        }
    }
}

/// A named stage configuration.
#[derive(Debug, Clone, Copy)]
pub struct VariantSpec {
    pub name: &'static str,
    pub config: I2SConfig,
}

/// The benchmark matrix: the faithful reimplementation and the cumulative
/// improvement stack.
pub fn all_variants() -> [VariantSpec; 5] {
    let base = I2SConfig { max_stage_execs: u64::MAX, ..I2SConfig::default() };
    [
        VariantSpec { name: "baseline", config: base },
        VariantSpec {
            name: "impr_coarseg",
            config: I2SConfig { mapping: MappingMode::Coarse, ..base },
        },
        VariantSpec {
            name: "impr",
            config: I2SConfig { mapping: MappingMode::Fine, ..base },
        },
        VariantSpec {
            name: "impr_extra",
            config: I2SConfig {
                condition: ConditionMode::Or,
                mapping: MappingMode::Fine,
                skip_identical: true,
                ..base
            },
        },
        VariantSpec {
            name: "impr_extra_cache",
            config: I2SConfig {
                condition: ConditionMode::Or,
                mapping: MappingMode::Fine,
                cache: CacheMode::FixedSet,
                skip_identical: true,
                ..base
            },
        },
    ]
}

/// Resolve a variant name, accepting `aflplusplus`-prefixed aliases.
pub fn variant_by_name(name: &str) -> Option<VariantSpec> {
    let canonical = match name {
        "aflplusplus" | "aflplusplus_cmplog" => "baseline",
        other => other.strip_prefix("aflplusplus_cmplog_").unwrap_or(other),
    };
    all_variants().into_iter().find(|v| v.name == canonical)
}

/// One replacement attempt: search the buffer for `pattern`, write `repl`.
/// `o_pattern`/`o_repl` are the same operands as logged on the original
/// (uncolorized) execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub side: Side,
    pub pattern: Vec<u8>,
    pub o_pattern: Vec<u8>,
    pub repl: Vec<u8>,
    pub o_repl: Vec<u8>,
}

fn render(value: u64, bytes: usize, big_endian: bool) -> Vec<u8> {
    if big_endian {
        value.to_be_bytes()[8 - bytes..].to_vec()
    } else {
        value.to_le_bytes()[..bytes].to_vec()
    }
}

/// Enumerate the replacement variants of one integer comparison: each side
/// as the pattern, truncated to every cast width up to the operand width,
/// rendered most-significant-byte-first and least-significant-byte-first.
/// Duplicates keep their first occurrence; at most 16 variants survive.
pub fn ins_variants(col: InsPair, orig: InsPair) -> Vec<Variant> {
    let width = col.width_bytes().max(1);
    let mut out: Vec<Variant> = Vec::new();
    for side in Side::BOTH {
        let (p, r) = match side {
            Side::Left => (col.v0, col.v1),
            Side::Right => (col.v1, col.v0),
        };
        let (op, or) = match side {
            Side::Left => (orig.v0, orig.v1),
            Side::Right => (orig.v1, orig.v0),
        };
        for cast in [1usize, 2, 4, 8] {
            if cast > width {
                break;
            }
            for big_endian in [true, false] {
                let variant = Variant {
                    side,
                    pattern: render(p, cast, big_endian),
                    o_pattern: render(op, cast, big_endian),
                    repl: render(r, cast, big_endian),
                    o_repl: render(or, cast, big_endian),
                };
                let dup = out.iter().any(|v| {
                    v.pattern == variant.pattern
                        && v.o_pattern == variant.o_pattern
                        && v.repl == variant.repl
                        && v.o_repl == variant.o_repl
                });
                if !dup {
                    out.push(variant);
                }
            }
        }
    }
    out
}

/// The two role assignments of one RTN pair; the right operand serves as
/// pattern first, then the sides swap.
pub fn rtn_variant(col: &RtnPair, orig: &RtnPair, side: Side) -> Variant {
    match side {
        Side::Right => Variant {
            side,
            pattern: col.o1.data.to_vec(),
            o_pattern: orig.o1.data.to_vec(),
            repl: col.o0.data.to_vec(),
            o_repl: orig.o0.data.to_vec(),
        },
        Side::Left => Variant {
            side,
            pattern: col.o0.data.to_vec(),
            o_pattern: orig.o0.data.to_vec(),
            repl: col.o1.data.to_vec(),
            o_repl: orig.o1.data.to_vec(),
        },
    }
}

/// Number of bytes the prefix condition lets an extension write at `idx`.
/// Conditions only ever read bytes the extension has not yet overwritten, so
/// the length is a pure function of the pristine buffers.
pub fn condition_length(
    pattern: &[u8],
    o_pattern: &[u8],
    colorized: &[u8],
    orig: &[u8],
    idx: usize,
    strict: bool,
) -> usize {
    let window = pattern.len().min(colorized.len() - idx);
    for j in 0..window {
        let p_match = pattern[j] == colorized[idx + j];
        let o_match = o_pattern[j] == orig[idx + j];
        let keep_going = if strict { p_match && o_match } else { p_match || o_match };
        if !keep_going {
            return j;
        }
    }
    window
}

/// Identifies one probe for observers and traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeInfo {
    pub site: u32,
    pub slot: u8,
    pub side: Side,
    pub variant: usize,
    pub idx: usize,
    /// Bytes of the replacement written so far, this probe included.
    pub written_len: usize,
}

/// Stage activity, reported probe by probe.
#[derive(Debug)]
pub enum StageEvent<'a> {
    Executed { info: ProbeInfo, input: &'a [u8], novel: bool },
    SuppressedByCache { info: ProbeInfo, written: &'a [u8] },
    SkippedIdentical { info: ProbeInfo },
}

pub trait StageObserver {
    fn on_event(&mut self, _event: StageEvent<'_>) {}
}

/// Observer that discards everything.
pub struct NullObserver;

impl StageObserver for NullObserver {}

/// Byte-exact account of one stage invocation. Every candidate byte lands in
/// exactly one bucket:
/// `candidate_bytes == stage_execs + skipped_by_cache + skipped_identical +
/// skipped_by_condition + skipped_by_novelty + skipped_by_budget`.
#[derive(Debug, Clone, Default)]
pub struct I2SOutcome {
    pub candidate_bytes: u64,
    pub stage_execs: u64,
    pub skipped_by_cache: u64,
    pub skipped_identical: u64,
    pub skipped_by_condition: u64,
    pub skipped_by_novelty: u64,
    pub skipped_by_budget: u64,
    /// Comparison sites visited (paired in both maps).
    pub sites_total: u64,
    /// Sites dropped whole because no operand reacted to colorization.
    pub sites_skipped_unchanged: u64,
    /// Variants dropped because their pattern operand is input independent.
    pub variants_skipped_mapping: u64,
    pub new_edges: u64,
    /// Inputs that reached new coverage, in discovery order.
    pub novel_inputs: Vec<Vec<u8>>,
}

impl I2SOutcome {
    pub fn accounted(&self) -> u64 {
        self.stage_execs
            + self.skipped_by_cache
            + self.skipped_identical
            + self.skipped_by_condition
            + self.skipped_by_novelty
            + self.skipped_by_budget
    }
}

/// Everything the stage reads about one seed.
#[derive(Debug, Clone, Copy)]
pub struct StageInputs<'a> {
    pub seed: &'a [u8],
    pub colorization: &'a Colorization,
    /// Operand log of the original seed execution.
    pub orig_map: &'a CmpMap,
    /// Operand log of the colorized input execution.
    pub col_map: &'a CmpMap,
    /// Fine association; required when `mapping == Fine`.
    pub assoc: Option<&'a TaintAssociation>,
}

enum IndexFilter {
    All,
    Mask(Vec<bool>),
}

impl IndexFilter {
    fn allows(&self, idx: usize) -> bool {
        match self {
            IndexFilter::All => true,
            IndexFilter::Mask(mask) => mask[idx],
        }
    }
}

struct StageRunner<'a> {
    exec: &'a mut Executor,
    target: &'a TargetProgram,
    edges: &'a mut EdgeSet,
    cache: &'a mut ReplacementCache,
    config: &'a I2SConfig,
    observer: &'a mut dyn StageObserver,
    orig: &'a [u8],
    pristine: &'a [u8],
    regions: &'a [Range<usize>],
    changes: Option<ChangeSet>,
    assoc: Option<&'a TaintAssociation>,
    buf: Vec<u8>,
    out: I2SOutcome,
    budget_exhausted: bool,
}

impl<'a> StageRunner<'a> {
    fn mapping(&self) -> MappingMode {
        self.config.mapping
    }

    fn site_skippable(&self, site: u32) -> bool {
        match &self.changes {
            Some(changes) => changes.skippable(site),
            None => false,
        }
    }

    fn pattern_side_active(&self, site: u32, slot: usize, side: Side) -> bool {
        match &self.changes {
            Some(changes) => changes.changed(site, slot, side),
            None => true,
        }
    }

    fn index_filter(&self, site: u32, slot: u8, side: Side) -> IndexFilter {
        if self.mapping() != MappingMode::Fine {
            return IndexFilter::All;
        }
        let assoc = self.assoc.expect("fine mapping requires an association");
        let key = OperandKey { site, slot, side };
        let mut mask = vec![false; self.pristine.len()];
        for range in assoc.ranges_for(&key, self.regions) {
            mask[range].fill(true);
        }
        IndexFilter::Mask(mask)
    }

    fn run(&mut self, orig_map: &CmpMap, col_map: &CmpMap) -> Result<()> {
        for (site, col_entry) in col_map.sites() {
            let Some(orig_entry) = orig_map.entry(site) else { continue };
            if col_entry.kind() != orig_entry.kind() {
                continue;
            }
            self.out.sites_total += 1;
            if self.mapping() != MappingMode::None && self.site_skippable(site) {
                self.out.sites_skipped_unchanged += 1;
                continue;
            }
            match col_entry.kind() {
                CmpKind::Ins => self.cmp_fuzz(site, col_entry, orig_entry)?,
                CmpKind::Rtn => self.rtn_fuzz(site, col_entry, orig_entry)?,
            }
        }
        Ok(())
    }

    fn cmp_fuzz(&mut self, site: u32, col: &CmpEntry, orig: &CmpEntry) -> Result<()> {
        let regions = self.regions;
        let slots = col.logged().min(orig.logged());
        for slot in 0..slots {
            let variants = ins_variants(col.ins_slot(slot).unwrap(), orig.ins_slot(slot).unwrap());
            for (v_idx, variant) in variants.iter().enumerate() {
                if !self.pattern_side_active(site, slot, variant.side) {
                    self.out.variants_skipped_mapping += 1;
                    continue;
                }
                let filter = self.index_filter(site, slot as u8, variant.side);
                for region in regions {
                    for idx in region.clone() {
                        if filter.allows(idx) {
                            self.extend(site, slot as u8, v_idx, variant, idx, region.end, true)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn rtn_fuzz(&mut self, site: u32, col: &CmpEntry, orig: &CmpEntry) -> Result<()> {
        let regions = self.regions;
        let strict = self.config.condition == ConditionMode::Or;
        let slots = col.logged().min(orig.logged());
        for slot in 0..slots {
            let col_pair = col.rtn_slot(slot).unwrap();
            let orig_pair = orig.rtn_slot(slot).unwrap();
            let mut roles = Vec::new();
            for (v_idx, side) in [Side::Right, Side::Left].into_iter().enumerate() {
                if !self.pattern_side_active(site, slot, side) {
                    self.out.variants_skipped_mapping += 1;
                    continue;
                }
                let variant = rtn_variant(&col_pair, &orig_pair, side);
                let filter = self.index_filter(site, slot as u8, side);
                roles.push((v_idx, variant, filter));
            }
            for region in regions {
                for idx in region.clone() {
                    for (v_idx, variant, filter) in &roles {
                        if filter.allows(idx) {
                            self.extend(site, slot as u8, *v_idx, variant, idx, region.end, strict)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Extend one candidate at `idx`, writing at most up to `limit` (the end
    /// of the region containing `idx` — extensions never cross region ends).
    fn extend(
        &mut self,
        site: u32,
        slot: u8,
        v_idx: usize,
        variant: &Variant,
        idx: usize,
        limit: usize,
        strict: bool,
    ) -> Result<()> {
        let window = variant.pattern.len().min(limit - idx);
        if window == 0 {
            return Ok(());
        }
        self.out.candidate_bytes += window as u64;
        if self.budget_exhausted {
            self.out.skipped_by_budget += window as u64;
            return Ok(());
        }
        let cond_len = if self.config.transform_stub {
            window
        } else {
            condition_length(&variant.pattern, &variant.o_pattern, self.pristine, self.orig, idx, strict)
                .min(window)
        };
        self.out.skipped_by_condition += (window - cond_len) as u64;

        let mut identical = true;
        for j in 0..cond_len {
            self.buf[idx + j] = variant.repl[j];
            identical = identical && self.buf[idx + j] == self.pristine[idx + j];
            let info = ProbeInfo { site, slot, side: variant.side, variant: v_idx, idx, written_len: j + 1 };
            if self.config.skip_identical && identical {
                self.out.skipped_identical += 1;
                self.observer.on_event(StageEvent::SkippedIdentical { info });
                continue;
            }
            let key = CacheKey::new(idx, &self.buf[idx..=idx + j]);
            if self.cache.check(key) == Admission::Suppress {
                self.out.skipped_by_cache += 1;
                self.observer
                    .on_event(StageEvent::SuppressedByCache { info, written: &self.buf[idx..=idx + j] });
                continue;
            }
            if self.out.stage_execs >= self.config.max_stage_execs {
                self.budget_exhausted = true;
                self.out.skipped_by_budget += (cond_len - j) as u64;
                break;
            }
            let result = self.exec.execute(self.target, &self.buf, false)?;
            self.out.stage_execs += 1;
            let new = self.edges.absorb(&result.coverage);
            self.observer
                .on_event(StageEvent::Executed { info, input: &self.buf, novel: new > 0 });
            if new > 0 {
                self.out.new_edges += new;
                self.out.novel_inputs.push(self.buf.clone());
                self.out.skipped_by_novelty += (cond_len - j - 1) as u64;
                break;
            }
        }
        self.buf[idx..idx + cond_len].copy_from_slice(&self.pristine[idx..idx + cond_len]);
        Ok(())
    }
}

/// Run the solving stage for one seed. `edges` carries the campaign-global
/// coverage frontier; `cache` is reset on entry (its keys only describe this
/// stage's buffers) but its counters accumulate across stages.
pub fn input_to_state(
    exec: &mut Executor,
    target: &TargetProgram,
    inputs: StageInputs<'_>,
    edges: &mut EdgeSet,
    cache: &mut ReplacementCache,
    config: &I2SConfig,
    observer: &mut dyn StageObserver,
) -> Result<I2SOutcome> {
    if config.mapping == MappingMode::Fine && inputs.assoc.is_none() {
        return Err(Error::MissingTaintAssociation);
    }
    assert_eq!(
        inputs.seed.len(),
        inputs.colorization.input.len(),
        "colorization must preserve input length"
    );
    cache.reset();
    let changes = match config.mapping {
        MappingMode::None => None,
        MappingMode::Coarse | MappingMode::Fine => {
            Some(diff_maps(inputs.orig_map, inputs.col_map))
        }
    };
    let mut runner = StageRunner {
        exec,
        target,
        edges,
        cache,
        config,
        observer,
        orig: inputs.seed,
        pristine: &inputs.colorization.input,
        regions: &inputs.colorization.regions,
        changes,
        assoc: inputs.assoc,
        buf: inputs.colorization.input.clone(),
        out: I2SOutcome::default(),
        budget_exhausted: false,
    };
    runner.run(inputs.orig_map, inputs.col_map)?;
    Ok(runner.out)
}

/// Upper bound on the executions the unimproved stage will spend on this
/// seed: the same enumeration over the same regions with the same prefix
/// conditions, but with no novelty breaks, caching, skips, or budget.
/// Conditions only read pristine bytes, so the count is exact arithmetic,
/// not simulation of writes.
pub fn predicted_executions(
    seed: &[u8],
    col_input: &[u8],
    regions: &[Range<usize>],
    orig_map: &CmpMap,
    col_map: &CmpMap,
) -> u64 {
    assert_eq!(seed.len(), col_input.len());
    let per_variant = |v: &Variant, strict: bool| -> u64 {
        let mut sum = 0u64;
        for region in regions {
            for idx in region.clone() {
                let window = v.pattern.len().min(region.end - idx);
                sum += condition_length(&v.pattern, &v.o_pattern, col_input, seed, idx, strict)
                    .min(window) as u64;
            }
        }
        sum
    };
    let mut total = 0u64;
    for (site, col_entry) in col_map.sites() {
        let Some(orig_entry) = orig_map.entry(site) else { continue };
        if col_entry.kind() != orig_entry.kind() {
            continue;
        }
        let slots = col_entry.logged().min(orig_entry.logged());
        for slot in 0..slots {
            match col_entry.kind() {
                CmpKind::Ins => {
                    let variants =
                        ins_variants(col_entry.ins_slot(slot).unwrap(), orig_entry.ins_slot(slot).unwrap());
                    for v in &variants {
                        total += per_variant(v, true);
                    }
                }
                CmpKind::Rtn => {
                    let col_pair = col_entry.rtn_slot(slot).unwrap();
                    let orig_pair = orig_entry.rtn_slot(slot).unwrap();
                    for side in [Side::Right, Side::Left] {
                        let v = rtn_variant(&col_pair, &orig_pair, side);
                        total += per_variant(&v, false);
                    }
                }
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{colorize, default_color_budget, ColorMode};
    use crate::taint::fine_map;
    use crate::targets::{builtin_target, magic_header, TargetParams};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::collections::HashSet;

    struct Prepared {
        target: TargetProgram,
        exec: Executor,
        seed: Vec<u8>,
        col: Colorization,
        orig_map: CmpMap,
        col_map: CmpMap,
        edges: EdgeSet,
    }

    fn prepare(name: &str, seed: Vec<u8>, rng_seed: u64) -> Prepared {
        let target = builtin_target(name, &TargetParams::default()).unwrap();
        let mut exec = Executor::new();
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        let budget = default_color_budget(seed.len());
        let col = colorize(&mut exec, &target, &seed, ColorMode::Legacy, &mut rng, budget).unwrap();
        let orig_run = exec.execute(&target, &seed, true).unwrap();
        let col_run = exec.execute(&target, &col.input, true).unwrap();
        let mut edges = EdgeSet::new(target.map_size());
        edges.absorb(&orig_run.coverage);
        edges.absorb(&col_run.coverage);
        Prepared {
            target,
            exec,
            seed,
            col,
            orig_map: orig_run.cmp_map.unwrap(),
            col_map: col_run.cmp_map.unwrap(),
            edges,
        }
    }

    fn run_stage(p: &mut Prepared, config: &I2SConfig, assoc: Option<&TaintAssociation>) -> I2SOutcome {
        let mut cache = ReplacementCache::new(config.cache);
        let inputs = StageInputs {
            seed: &p.seed,
            colorization: &p.col,
            orig_map: &p.orig_map,
            col_map: &p.col_map,
            assoc,
        };
        input_to_state(&mut p.exec, &p.target, inputs, &mut p.edges, &mut cache, config, &mut NullObserver)
            .unwrap()
    }

    #[test]
    fn zero_pair_at_width_64_yields_four_variants() {
        let pair = InsPair { v0: 0, v1: 0, width_bits: 64 };
        let variants = ins_variants(pair, pair);
        assert_eq!(variants.len(), 4);
        let lens: Vec<usize> = variants.iter().map(|v| v.pattern.len()).collect();
        assert_eq!(lens, vec![1, 2, 4, 8]);
        assert!(variants.iter().all(|v| v.side == Side::Left), "side-right renderings are duplicates");
    }

    #[test]
    fn cast_renderings_truncate_and_order_bytes() {
        let col = InsPair { v0: 0x0101_0111, v1: 0x0e, width_bits: 32 };
        let variants = ins_variants(col, col);
        let le2: Vec<&Variant> = variants
            .iter()
            .filter(|v| v.side == Side::Left && v.pattern == vec![0x11, 0x01])
            .collect();
        assert_eq!(le2.len(), 1, "exactly one cast-2 little-endian rendering");
        assert_eq!(le2[0].repl, vec![0x0e, 0x00]);
        assert!(variants.iter().any(|v| v.pattern == vec![0x01, 0x11]), "cast-2 big-endian also present");
    }

    #[test]
    fn asymmetric_wide_pair_yields_fourteen_variants() {
        // Single-byte casts render identically in both byte orders, so the
        // 2 sides x 4 casts x 2 orders enumeration dedups to 14.
        let col = InsPair { v0: 0x1122_3344_5566_7788, v1: 0x99aa_bbcc_ddee_ff00, width_bits: 64 };
        let orig = InsPair { v0: 0x0102_0304_0506_0708, v1: 0x090a_0b0c_0d0e_0f10, width_bits: 64 };
        assert_eq!(ins_variants(col, orig).len(), 14);
    }

    #[test]
    fn condition_length_depends_on_strictness() {
        let colorized = [0x01u8, 0x01, 0x01, 0x01];
        let orig = [0x00u8, 0x00, 0x00, 0x00];
        let pattern = [0xa4u8, 0xa4, 0xa4];
        let o_pattern = [0x00u8, 0x00, 0xff];
        assert_eq!(condition_length(&pattern, &o_pattern, &colorized, &orig, 0, false), 2);
        assert_eq!(condition_length(&pattern, &o_pattern, &colorized, &orig, 0, true), 0);
        let matching = [0x01u8, 0x01];
        let o_matching = [0x00u8, 0x00];
        assert_eq!(condition_length(&matching, &o_matching, &colorized, &orig, 2, true), 2);
        assert_eq!(condition_length(&matching, &o_matching, &colorized, &orig, 3, true), 1, "window clamps at end");
    }

    #[test]
    fn stage_solves_the_first_magic_gate() {
        let mut p = prepare("magic_header", (0..48u8).map(|i| b'a' + i % 26).collect(), 21);
        let out = run_stage(&mut p, &I2SConfig::default(), None);
        assert!(!out.novel_inputs.is_empty(), "expected a coverage discovery");
        let solved = out
            .novel_inputs
            .iter()
            .any(|input| u32::from_le_bytes(input[..4].try_into().unwrap()) == magic_header::DEFAULT_MAGIC_A);
        assert!(solved, "some novel input carries the four magic bytes");
        assert_eq!(out.candidate_bytes, out.accounted());
    }

    #[test]
    fn zero_heavy_rtn_seed_explodes_and_matches_prediction() {
        let mut p = prepare("zero_prefix_rtn", vec![0u8; 512], 22);
        let predicted =
            predicted_executions(&p.seed, &p.col.input, &p.col.regions, &p.orig_map, &p.col_map);
        assert!(predicted as usize > 10 * p.seed.len(), "prediction {predicted} too small");
        let config = I2SConfig { max_stage_execs: u64::MAX, ..I2SConfig::default() };
        let out = run_stage(&mut p, &config, None);
        assert_eq!(out.stage_execs, predicted, "no novelty on this target, so the bound is tight");
        assert_eq!(out.candidate_bytes, out.accounted());
    }

    #[test]
    fn coarse_mapping_collapses_the_explosion() {
        let mut p = prepare("zero_prefix_rtn", vec![0u8; 512], 23);
        let baseline = run_stage(&mut p, &I2SConfig::default(), None);
        let coarse_cfg = I2SConfig { mapping: MappingMode::Coarse, ..I2SConfig::default() };
        let coarse = run_stage(&mut p, &coarse_cfg, None);
        assert!(baseline.stage_execs >= 100 * coarse.stage_execs.max(1));
        assert!(coarse.variants_skipped_mapping > 0, "constant side must be dropped");
    }

    #[test]
    fn or_condition_windows_never_exceed_and_windows() {
        #[derive(Default)]
        struct WindowLens(std::collections::BTreeMap<(u32, u8, usize, usize), u64>);
        impl StageObserver for WindowLens {
            fn on_event(&mut self, event: StageEvent<'_>) {
                if let StageEvent::Executed { info, .. } = event {
                    *self.0.entry((info.site, info.slot, info.variant, info.idx)).or_default() += 1;
                }
            }
        }
        let mut p = prepare("zero_prefix_rtn", vec![0u8; 256], 24);
        let mut run = |condition: ConditionMode, p: &mut Prepared| {
            let config = I2SConfig { condition, ..I2SConfig::default() };
            let mut cache = ReplacementCache::new(config.cache);
            let mut observer = WindowLens::default();
            let mut edges = EdgeSet::new(p.target.map_size());
            let inputs = StageInputs {
                seed: &p.seed,
                colorization: &p.col,
                orig_map: &p.orig_map,
                col_map: &p.col_map,
                assoc: None,
            };
            input_to_state(&mut p.exec, &p.target, inputs, &mut edges, &mut cache, &config, &mut observer)
                .unwrap();
            observer.0
        };
        let and_lens = run(ConditionMode::And, &mut p);
        let or_lens = run(ConditionMode::Or, &mut p);
        for (key, or_count) in &or_lens {
            let and_count = and_lens.get(key).copied().unwrap_or(0);
            assert!(*or_count <= and_count, "cell {key:?}: or={or_count} and={and_count}");
        }
    }

    #[test]
    fn lru_cache_makes_executed_buffers_unique() {
        #[derive(Default)]
        struct BufHashes(Vec<u64>);
        impl StageObserver for BufHashes {
            fn on_event(&mut self, event: StageEvent<'_>) {
                if let StageEvent::Executed { input, .. } = event {
                    self.0.push(crate::coverage::fnv1a(input));
                }
            }
        }
        let mut p = prepare("zero_prefix_rtn", vec![0u8; 128], 25);
        let config = I2SConfig {
            cache: CacheMode::Lru(CacheMode::DEFAULT_LRU_CAPACITY),
            ..I2SConfig::default()
        };
        let mut cache = ReplacementCache::new(config.cache);
        let mut observer = BufHashes::default();
        let inputs = StageInputs {
            seed: &p.seed,
            colorization: &p.col,
            orig_map: &p.orig_map,
            col_map: &p.col_map,
            assoc: None,
        };
        let out = input_to_state(
            &mut p.exec, &p.target, inputs, &mut p.edges, &mut cache, &config, &mut observer,
        )
        .unwrap();
        assert!(out.skipped_by_cache > 0, "repeat traffic expected on this shape");
        let distinct: HashSet<u64> = observer.0.iter().copied().collect();
        assert_eq!(distinct.len(), observer.0.len(), "an executed buffer repeated");
        assert_eq!(out.candidate_bytes, out.accounted());
    }

    #[test]
    fn skip_identical_suppresses_pristine_reexecutions() {
        struct NoPristine<'a> {
            pristine: &'a [u8],
        }
        impl StageObserver for NoPristine<'_> {
            fn on_event(&mut self, event: StageEvent<'_>) {
                if let StageEvent::Executed { input, .. } = event {
                    assert_ne!(input, self.pristine, "pristine colorized buffer re-executed");
                }
            }
        }
        let mut p = prepare("magic_header", (0..64u8).map(|i| b'a' + i % 26).collect(), 26);
        // A comparison that already holds: replacing the matched bytes with
        // the other operand writes back exactly what is there.
        let held = u32::from_le_bytes(p.seed[..4].try_into().unwrap()) as u64;
        let held_col = u32::from_le_bytes(p.col.input[..4].try_into().unwrap()) as u64;
        p.orig_map.log_ins(9, held, held, 32);
        p.col_map.log_ins(9, held_col, held_col, 32);
        let config = I2SConfig { skip_identical: true, ..I2SConfig::default() };
        let mut cache = ReplacementCache::new(config.cache);
        let pristine = p.col.input.clone();
        let mut observer = NoPristine { pristine: &pristine };
        let inputs = StageInputs {
            seed: &p.seed,
            colorization: &p.col,
            orig_map: &p.orig_map,
            col_map: &p.col_map,
            assoc: None,
        };
        let out = input_to_state(
            &mut p.exec, &p.target, inputs, &mut p.edges, &mut cache, &config, &mut observer,
        )
        .unwrap();
        assert!(out.skipped_identical > 0, "identical writes expected on equality comparisons");
        assert_eq!(out.candidate_bytes, out.accounted());
    }

    #[test]
    fn fine_mapping_without_association_is_an_error() {
        let mut p = prepare("magic_header", b"plainseed".to_vec(), 27);
        let config = I2SConfig { mapping: MappingMode::Fine, ..I2SConfig::default() };
        let mut cache = ReplacementCache::new(config.cache);
        let inputs = StageInputs {
            seed: &p.seed,
            colorization: &p.col,
            orig_map: &p.orig_map,
            col_map: &p.col_map,
            assoc: None,
        };
        let err = input_to_state(
            &mut p.exec, &p.target, inputs, &mut p.edges, &mut cache, &config, &mut NullObserver,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingTaintAssociation));
    }

    #[test]
    fn fine_mapping_still_solves_and_spends_no_more_than_coarse() {
        let seed: Vec<u8> = (0..48u8).map(|i| b'a' + i % 26).collect();
        let mut p = prepare("magic_header", seed.clone(), 28);
        let assoc = fine_map(&mut p.exec, &p.target, &p.seed, &p.col, &p.orig_map, u64::MAX).unwrap();

        let coarse_cfg = I2SConfig { mapping: MappingMode::Coarse, ..I2SConfig::default() };
        let mut q = prepare("magic_header", seed, 28);
        let coarse = run_stage(&mut q, &coarse_cfg, None);

        let fine_cfg = I2SConfig { mapping: MappingMode::Fine, ..I2SConfig::default() };
        let fine = run_stage(&mut p, &fine_cfg, Some(&assoc));

        assert!(fine.stage_execs <= coarse.stage_execs);
        let solved = fine
            .novel_inputs
            .iter()
            .any(|i| u32::from_le_bytes(i[..4].try_into().unwrap()) == magic_header::DEFAULT_MAGIC_A);
        assert!(solved, "restriction must not lose the solve");
    }

    #[test]
    fn stage_budget_is_respected_and_accounted() {
        let mut p = prepare("zero_prefix_rtn", vec![0u8; 256], 29);
        let config = I2SConfig { max_stage_execs: 10, ..I2SConfig::default() };
        let out = run_stage(&mut p, &config, None);
        assert_eq!(out.stage_execs, 10);
        assert!(out.skipped_by_budget > 0);
        assert_eq!(out.candidate_bytes, out.accounted());
    }

    #[test]
    fn variant_names_resolve_with_aliases() {
        assert_eq!(variant_by_name("baseline").unwrap().name, "baseline");
        assert_eq!(variant_by_name("aflplusplus").unwrap().name, "baseline");
        assert_eq!(variant_by_name("aflplusplus_cmplog_impr_extra").unwrap().name, "impr_extra");
        assert_eq!(
            variant_by_name("impr_extra_cache").unwrap().config.cache,
            CacheMode::FixedSet
        );
        assert!(variant_by_name("nonsense").is_none());
        assert_eq!(all_variants().len(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn accounting_identity_holds_for_any_config(
            bytes in proptest::collection::vec(any::<u8>(), 1..96),
            rng_seed: u64,
            cond_or: bool,
            mapping_pick in 0u8..3,
            cache_pick in 0u8..3,
            skip: bool,
            budget in 1u64..2000,
        ) {
            let mapping = match mapping_pick {
                0 => MappingMode::None,
                1 => MappingMode::Coarse,
                _ => MappingMode::Fine,
            };
            let config = I2SConfig {
                condition: if cond_or { ConditionMode::Or } else { ConditionMode::And },
                mapping,
                cache: match cache_pick {
                    0 => CacheMode::Off,
                    1 => CacheMode::FixedSet,
                    _ => CacheMode::Lru(64),
                },
                skip_identical: skip,
                transform_stub: false,
                max_stage_execs: budget,
            };
            let mut p = prepare("pcap_like", bytes, rng_seed);
            let assoc = if mapping == MappingMode::Fine {
                Some(fine_map(&mut p.exec, &p.target, &p.seed, &p.col, &p.orig_map, u64::MAX).unwrap())
            } else {
                None
            };
            let out = run_stage(&mut p, &config, assoc.as_ref());
            prop_assert_eq!(out.candidate_bytes, out.accounted());
            prop_assert!(out.stage_execs <= budget);
        }

        #[test]
        fn ins_variants_dedup_is_sound(v0: u64, v1: u64, o0: u64, o1: u64, w in 0u8..4) {
            let width = 8u8 << w;
            let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
            let col = InsPair { v0: v0 & mask, v1: v1 & mask, width_bits: width };
            let orig = InsPair { v0: o0 & mask, v1: o1 & mask, width_bits: width };
            let variants = ins_variants(col, orig);
            prop_assert!(variants.len() <= 16);
            for (i, a) in variants.iter().enumerate() {
                for b in &variants[i + 1..] {
                    let same = a.pattern == b.pattern && a.o_pattern == b.o_pattern
                        && a.repl == b.repl && a.o_repl == b.o_repl;
                    prop_assert!(!same, "duplicate variant survived");
                }
            }
        }
    }
}
