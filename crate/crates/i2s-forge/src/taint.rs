//! Taint-to-comparison association.
//!
//! Two precision levels tie comparison operands back to input bytes:
//!
//! * coarse — [`crate::cmplog::diff_maps`] compares the operand logs of the
//!   original and the colorized execution. It costs no extra executions and
//!   yields one changed/unchanged bit per (site, slot, operand side). An
//!   unchanged operand is input independent, so searching the input for its
//!   bytes is wasted work.
//! * fine — [`fine_map`] re-executes the target once per colorized region
//!   with only that region recolored, recording which operands reacted. The
//!   result narrows each operand to the byte ranges that actually feed it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;

use rand::Rng;

use crate::cmplog::{CmpKind, CmpMap};
use crate::color::{recolor_byte, ColorMode, Colorization};
use crate::error::Result;
use crate::exec::Executor;
use crate::targets::TargetProgram;

/// Which operand of a comparison: left is `v0`/`o0`, right is `v1`/`o1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn label(self) -> char {
        match self {
            Side::Left => 'l',
            Side::Right => 'r',
        }
    }
}

/// Identifies one logged operand: comparison site, ring slot, operand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OperandKey {
    pub site: u32,
    pub slot: u8,
    pub side: Side,
}

/// Changed flags for one site: `slots[i][side]` says whether that operand
/// differed between the original and the colorized execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteMarks {
    pub skippable: bool,
    pub slots: Vec<[bool; 2]>,
}

impl SiteMarks {
    pub fn all_changed(slots: usize) -> SiteMarks {
        SiteMarks {
            skippable: false,
            slots: vec![[true, true]; slots],
        }
    }
}

/// Coarse per-site marks. Absent or out-of-range entries read as changed —
/// the conservative answer that never skips work it should not.
#[derive(Debug, Clone, Default)]
pub struct ChangeSet {
    marks: BTreeMap<u32, SiteMarks>,
}

impl ChangeSet {
    pub fn insert(&mut self, site: u32, marks: SiteMarks) {
        self.marks.insert(site, marks);
    }

    /// True when no operand of the site reacted to colorization at all.
    pub fn skippable(&self, site: u32) -> bool {
        self.marks.get(&site).map_or(false, |m| m.skippable)
    }

    pub fn changed(&self, site: u32, slot: usize, side: Side) -> bool {
        self.marks
            .get(&site)
            .and_then(|m| m.slots.get(slot))
            .map_or(true, |flags| flags[side.index()])
    }

    pub fn sites(&self) -> impl Iterator<Item = (u32, &SiteMarks)> {
        self.marks.iter().map(|(&s, m)| (s, m))
    }
}

/// Fine-grained map from operands to the indices of the colorized regions
/// they react to.
#[derive(Debug, Clone, Default)]
pub struct TaintAssociation {
    map: BTreeMap<OperandKey, BTreeSet<usize>>,
    /// Target executions spent probing (one per probed region).
    pub probe_execs: u64,
    /// True when the budget ran out and unprobed regions were conservatively
    /// attributed to every operand.
    pub partial: bool,
}

impl TaintAssociation {
    pub fn regions_for(&self, key: &OperandKey) -> Option<&BTreeSet<usize>> {
        self.map.get(key)
    }

    /// Byte ranges the operand depends on, resolved against the region list
    /// of the colorization that produced this association.
    pub fn ranges_for(&self, key: &OperandKey, regions: &[Range<usize>]) -> Vec<Range<usize>> {
        match self.map.get(key) {
            Some(set) => set.iter().filter_map(|&i| regions.get(i).cloned()).collect(),
            None => Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn add(&mut self, key: OperandKey, region: usize) {
        self.map.entry(key).or_default().insert(region);
    }

    /// One line per operand, sorted by (site, slot, side).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (key, regions) in &self.map {
            let list = regions.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",");
            writeln!(
                out,
                "key site={} slot={} side={} regions={}",
                key.site,
                key.slot,
                key.side.label(),
                list
            )
            .unwrap();
        }
        out
    }
}

fn operand_keys(map: &CmpMap) -> Vec<OperandKey> {
    let mut keys = Vec::new();
    for (site, entry) in map.sites() {
        for slot in 0..entry.logged() {
            for side in Side::BOTH {
                keys.push(OperandKey { site, slot: slot as u8, side });
            }
        }
    }
    keys
}

/// Did `key`'s operand value differ between `orig` and `probe`? Structural
/// drift — site missing, kind flip, slot count mismatch — reads as changed.
fn operand_changed(orig: &CmpMap, probe: &CmpMap, key: &OperandKey) -> bool {
    let Some(o) = orig.entry(key.site) else { return true };
    let Some(p) = probe.entry(key.site) else { return true };
    if o.kind() != p.kind() || o.logged() != p.logged() {
        return true;
    }
    let slot = key.slot as usize;
    if slot >= o.logged() {
        return true;
    }
    match o.kind() {
        CmpKind::Ins => {
            let (a, b) = (o.ins_slot(slot).unwrap(), p.ins_slot(slot).unwrap());
            match key.side {
                Side::Left => a.v0 != b.v0,
                Side::Right => a.v1 != b.v1,
            }
        }
        CmpKind::Rtn => {
            let (a, b) = (o.rtn_slot(slot).unwrap(), p.rtn_slot(slot).unwrap());
            match key.side {
                Side::Left => a.o0.data != b.o0.data,
                Side::Right => a.o1.data != b.o1.data,
            }
        }
    }
}

fn diff_into(assoc: &mut TaintAssociation, orig: &CmpMap, probe: &CmpMap, region: usize) {
    let width = orig.width().max(probe.width()) as u32;
    for site in 0..width {
        let (o, p) = (orig.entry(site), probe.entry(site));
        let slots = match (o, p) {
            (None, None) => continue,
            (Some(e), None) | (None, Some(e)) => e.logged(),
            (Some(a), Some(b)) => a.logged().max(b.logged()),
        };
        for slot in 0..slots {
            for side in Side::BOTH {
                let key = OperandKey { site, slot: slot as u8, side };
                if operand_changed(orig, probe, &key) {
                    assoc.add(key, region);
                }
            }
        }
    }
}

/// Probe each colorized region in isolation — the unmodified seed plus that
/// one region's recolored bytes — and record which operands moved. Spends at
/// most `budget` executions; leftover regions are attributed to every
/// operand of `orig_map` and the result is flagged partial.
pub fn fine_map(
    exec: &mut Executor,
    target: &TargetProgram,
    seed: &[u8],
    colorization: &Colorization,
    orig_map: &CmpMap,
    budget: u64,
) -> Result<TaintAssociation> {
    let mut assoc = TaintAssociation::default();
    let mut probed = 0usize;
    for (region_idx, range) in colorization.regions.iter().enumerate() {
        if (probed as u64) >= budget {
            break;
        }
        let mut input = seed.to_vec();
        input[range.clone()].copy_from_slice(&colorization.input[range.clone()]);
        let probe = exec.execute(target, &input, true)?;
        probed += 1;
        let probe_map = probe.cmp_map.expect("cmplog requested");
        diff_into(&mut assoc, orig_map, &probe_map, region_idx);
    }
    assoc.probe_execs = probed as u64;
    if probed < colorization.regions.len() {
        assoc.partial = true;
        for key in operand_keys(orig_map) {
            for region in probed..colorization.regions.len() {
                assoc.add(key, region);
            }
        }
    }
    Ok(assoc)
}

/// Ground-truth verdict for one (operand, region) pair, as sampled by the
/// brute-force oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Depends,
    Independent,
    Unstable,
}

/// One stable pair where the association contradicted the observed truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleDisagreement {
    pub key: OperandKey,
    pub region: usize,
    /// What the association claimed; the observation said the opposite.
    pub predicted_depends: bool,
}

/// Aggregate outcome of [`brute_force_check`].
#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    /// (operand, region) pairs examined.
    pub pairs_total: usize,
    /// Pairs whose trials all agreed with each other.
    pub pairs_stable: usize,
    /// Stable pairs where the association predicted the observed verdict.
    pub pairs_agree: usize,
    pub probe_execs: u64,
    pub disagreements: Vec<OracleDisagreement>,
}

impl OracleReport {
    /// Agreement over stable pairs; vacuously 1 when nothing was stable.
    pub fn agreement(&self) -> f64 {
        if self.pairs_stable == 0 {
            1.0
        } else {
            self.pairs_agree as f64 / self.pairs_stable as f64
        }
    }
}

pub const ORACLE_TRIALS: usize = 3;

/// Independently re-derive per-region dependence by flipping each region to
/// fresh random bytes of the same class, several trials per region, and
/// check the fine association against the observed reactions. Pairs whose
/// trials disagree with each other are excluded as unstable.
pub fn brute_force_check<R: Rng + ?Sized>(
    exec: &mut Executor,
    target: &TargetProgram,
    seed: &[u8],
    colorization: &Colorization,
    orig_map: &CmpMap,
    assoc: &TaintAssociation,
    rng: &mut R,
) -> Result<OracleReport> {
    let keys = operand_keys(orig_map);
    let mut report = OracleReport::default();
    for (region_idx, range) in colorization.regions.iter().enumerate() {
        let mut changed_counts = vec![0usize; keys.len()];
        for _ in 0..ORACLE_TRIALS {
            let mut input = seed.to_vec();
            for i in range.clone() {
                input[i] = recolor_byte(seed[i], ColorMode::Entropic, rng);
            }
            let probe = exec.execute(target, &input, true)?;
            report.probe_execs += 1;
            let probe_map = probe.cmp_map.expect("cmplog requested");
            for (k, key) in keys.iter().enumerate() {
                if operand_changed(orig_map, &probe_map, key) {
                    changed_counts[k] += 1;
                }
            }
        }
        for (k, key) in keys.iter().enumerate() {
            report.pairs_total += 1;
            let verdict = match changed_counts[k] {
                0 => Verdict::Independent,
                n if n == ORACLE_TRIALS => Verdict::Depends,
                _ => Verdict::Unstable,
            };
            if verdict == Verdict::Unstable {
                continue;
            }
            report.pairs_stable += 1;
            let predicted = assoc
                .regions_for(key)
                .map_or(false, |set| set.contains(&region_idx));
            let truth = verdict == Verdict::Depends;
            if predicted == truth {
                report.pairs_agree += 1;
            } else {
                report.disagreements.push(OracleDisagreement {
                    key: *key,
                    region: region_idx,
                    predicted_depends: predicted,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{colorize, default_color_budget};
    use crate::targets::{builtin_target, magic_header, pcap_like, zero_prefix_rtn, TargetParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn key(site: u32, slot: u8, side: Side) -> OperandKey {
        OperandKey { site, slot, side }
    }

    fn prepared(
        name: &str,
        seed: &[u8],
        rng_seed: u64,
    ) -> (TargetProgram, Executor, Colorization, CmpMap) {
        let target = builtin_target(name, &TargetParams::default()).unwrap();
        let mut exec = Executor::new();
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        let budget = default_color_budget(seed.len());
        let col = colorize(&mut exec, &target, seed, ColorMode::Entropic, &mut rng, budget).unwrap();
        let orig = exec.execute(&target, seed, true).unwrap().cmp_map.unwrap();
        (target, exec, col, orig)
    }

    #[test]
    fn changeset_defaults_are_conservative() {
        let set = ChangeSet::default();
        assert!(!set.skippable(9));
        assert!(set.changed(9, 0, Side::Left));
        let mut set = ChangeSet::default();
        set.insert(1, SiteMarks { skippable: false, slots: vec![[false, true]] });
        assert!(!set.changed(1, 0, Side::Left));
        assert!(set.changed(1, 0, Side::Right));
        assert!(set.changed(1, 5, Side::Left), "out-of-range slot reads changed");
    }

    #[test]
    fn fine_map_ties_the_free_magic_operand_to_its_bytes() {
        let mut seed = b"\x7fELF".to_vec();
        seed.extend_from_slice(&[b'x'; 28]);
        let (target, mut exec, col, orig) = prepared("magic_header", &seed, 11);
        assert_eq!(col.regions, vec![4..32], "everything behind the held magic recolors as one run");
        let assoc = fine_map(&mut exec, &target, &seed, &col, &orig, u64::MAX).unwrap();
        assert_eq!(assoc.probe_execs, 1);
        assert!(!assoc.partial);

        let b_left = assoc
            .regions_for(&key(magic_header::SITE_MAGIC_B, 0, Side::Left))
            .unwrap();
        assert_eq!(b_left.iter().copied().collect::<Vec<_>>(), vec![0]);
        assert!(assoc.regions_for(&key(magic_header::SITE_MAGIC_B, 0, Side::Right)).is_none());
        assert!(assoc.regions_for(&key(magic_header::SITE_MAGIC_A, 0, Side::Left)).is_none());
        assert!(assoc.regions_for(&key(magic_header::SITE_MAGIC_A, 0, Side::Right)).is_none());
    }

    #[test]
    fn fine_map_budget_shortfall_is_conservative_and_flagged() {
        let target = builtin_target("pcap_like", &TargetParams::default()).unwrap();
        let seed = target.default_seed().to_vec();
        let (target, mut exec, col, orig) = prepared("pcap_like", &seed, 12);
        assert!(col.regions.len() >= 2, "pinned record headers split the runs: {:?}", col.regions);
        let budget = col.regions.len() as u64 - 1;
        let assoc = fine_map(&mut exec, &target, &seed, &col, &orig, budget).unwrap();
        assert_eq!(assoc.probe_execs, budget);
        assert!(assoc.partial);
        let unprobed = col.regions.len() - 1;
        let magic_left = assoc
            .regions_for(&key(pcap_like::SITE_MAGIC, 0, Side::Left))
            .unwrap();
        assert!(magic_left.contains(&unprobed), "unprobed region attributed to every operand");
        let magic_right = assoc
            .regions_for(&key(pcap_like::SITE_MAGIC, 0, Side::Right))
            .unwrap();
        assert!(magic_right.contains(&unprobed));
    }

    #[test]
    fn fine_map_sees_the_input_independent_operand() {
        let seed = vec![0u8; 256];
        let (target, mut exec, col, orig) = prepared("zero_prefix_rtn", &seed, 13);
        assert_eq!(col.regions.len(), 1);
        let assoc = fine_map(&mut exec, &target, &seed, &col, &orig, u64::MAX).unwrap();
        for slot in 0..8u8 {
            let right = key(zero_prefix_rtn::SITE_CMP, slot, Side::Right);
            assert_eq!(
                assoc.regions_for(&right).unwrap().iter().copied().collect::<Vec<_>>(),
                vec![0]
            );
            let left = key(zero_prefix_rtn::SITE_CMP, slot, Side::Left);
            assert!(assoc.regions_for(&left).is_none(), "left operand is a constant");
        }
    }

    #[test]
    fn dump_lists_keys_in_order() {
        let mut assoc = TaintAssociation::default();
        assoc.add(key(2, 0, Side::Left), 1);
        assoc.add(key(2, 0, Side::Left), 0);
        assoc.add(key(1, 3, Side::Right), 4);
        let dump = assoc.dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(
            lines,
            vec![
                "key site=1 slot=3 side=r regions=4",
                "key site=2 slot=0 side=l regions=0,1",
            ]
        );
    }

    #[test]
    fn ranges_resolve_region_indices() {
        let mut assoc = TaintAssociation::default();
        assoc.add(key(1, 0, Side::Left), 0);
        assoc.add(key(1, 0, Side::Left), 2);
        let regions = vec![0..4, 4..8, 10..12];
        assert_eq!(assoc.ranges_for(&key(1, 0, Side::Left), &regions), vec![0..4, 10..12]);
        assert!(assoc.ranges_for(&key(9, 9, Side::Right), &regions).is_empty());
    }

    #[test]
    fn oracle_agrees_with_fine_map_on_magic_header() {
        let mut seed = b"\x7fELF".to_vec();
        seed.extend_from_slice(&[b'x'; 28]);
        let (target, mut exec, col, orig) = prepared("magic_header", &seed, 14);
        let assoc = fine_map(&mut exec, &target, &seed, &col, &orig, u64::MAX).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let report =
            brute_force_check(&mut exec, &target, &seed, &col, &orig, &assoc, &mut rng).unwrap();
        assert!(report.pairs_stable > 0);
        assert_eq!(report.probe_execs, 3 * col.regions.len() as u64);
        assert!(
            report.agreement() >= 0.9,
            "agreement {} below bar",
            report.agreement()
        );
    }
}
