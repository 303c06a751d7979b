//! Comparison operand log: a fixed-width map of per-site ring buffers that
//! record the operands of integer (INS) and byte-sequence (RTN) comparisons.
//!
//! Site ids are static per comparison statement, so two executions of the same
//! target touch the same slots and maps can be diffed entry by entry.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::taint::{ChangeSet, SiteMarks};

/// Number of comparison sites a map can hold.
pub const DEFAULT_MAP_WIDTH: usize = 65536;
/// An INS site keeps the operands of its last 32 hits.
pub const INS_RING_CAPACITY: usize = 32;
/// An RTN site keeps the operands of its last 8 hits.
pub const RTN_RING_CAPACITY: usize = 8;
/// RTN operands are copied at this fixed length, zero padded.
pub const RTN_OPERAND_LEN: usize = 31;

/// Comparison flavour logged at a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpKind {
    Ins,
    Rtn,
}

/// One integer comparison: both operands plus their width in bits.
/// Bits above `width_bits` are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsPair {
    pub v0: u64,
    pub v1: u64,
    pub width_bits: u8,
}

impl InsPair {
    pub fn width_bytes(&self) -> usize {
        self.width_bits as usize / 8
    }
}

/// A fixed-capacity copy of one RTN operand. `len` is always 31 for logged
/// operands (the copy length); `true_len` remembers the length the target
/// actually passed, for diagnostics only — the engine never reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperandBytes {
    pub data: [u8; RTN_OPERAND_LEN],
    pub len: u8,
    pub true_len: u8,
}

impl OperandBytes {
    pub fn from_slice(bytes: &[u8]) -> Self {
        let mut data = [0u8; RTN_OPERAND_LEN];
        let copy = bytes.len().min(RTN_OPERAND_LEN);
        data[..copy].copy_from_slice(&bytes[..copy]);
        OperandBytes {
            data,
            len: RTN_OPERAND_LEN as u8,
            true_len: bytes.len().min(u8::MAX as usize) as u8,
        }
    }
}

/// One byte-sequence comparison (memcmp/strcmp flavour).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RtnPair {
    pub o0: OperandBytes,
    pub o1: OperandBytes,
}

/// Ring buffer payload of a site, keyed by comparison kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CmpRing {
    Ins(VecDeque<InsPair>),
    Rtn(VecDeque<RtnPair>),
}

/// State of one comparison site: saturating total hit counter plus the ring
/// of most recent operand pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmpEntry {
    pub hits: u32,
    pub width_bits: u8,
    pub ring: CmpRing,
}

impl CmpEntry {
    pub fn kind(&self) -> CmpKind {
        match self.ring {
            CmpRing::Ins(_) => CmpKind::Ins,
            CmpRing::Rtn(_) => CmpKind::Rtn,
        }
    }

    /// Number of operand pairs currently retained: min(hits, ring capacity).
    pub fn logged(&self) -> usize {
        match &self.ring {
            CmpRing::Ins(r) => r.len(),
            CmpRing::Rtn(r) => r.len(),
        }
    }

    pub fn ins_slot(&self, slot: usize) -> Option<InsPair> {
        match &self.ring {
            CmpRing::Ins(r) => r.get(slot).copied(),
            CmpRing::Rtn(_) => None,
        }
    }

    pub fn rtn_slot(&self, slot: usize) -> Option<RtnPair> {
        match &self.ring {
            CmpRing::Rtn(r) => r.get(slot).copied(),
            CmpRing::Ins(_) => None,
        }
    }
}

fn width_mask(width_bits: u8) -> u64 {
    match width_bits {
        64 => u64::MAX,
        w => (1u64 << w) - 1,
    }
}

/// Comparison operand map for one execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmpMap {
    entries: Vec<Option<CmpEntry>>,
    kind_collisions: u64,
}

impl CmpMap {
    pub fn new(width: usize) -> Self {
        assert!(width > 0, "cmp map width must be positive");
        CmpMap { entries: vec![None; width], kind_collisions: 0 }
    }

    pub fn with_default_width() -> Self {
        CmpMap::new(DEFAULT_MAP_WIDTH)
    }

    pub fn width(&self) -> usize {
        self.entries.len()
    }

    /// Hits dropped because a site was reused with the other comparison kind.
    pub fn kind_collisions(&self) -> u64 {
        self.kind_collisions
    }

    pub fn entry(&self, site: u32) -> Option<&CmpEntry> {
        self.entries.get(site as usize).and_then(|e| e.as_ref())
    }

    /// Iterate non-empty sites in ascending site order.
    pub fn sites(&self) -> impl Iterator<Item = (u32, &CmpEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|e| (i as u32, e)))
    }

    /// Record an integer comparison. Values are masked to `width_bits`.
    /// A hit against a site already holding RTN data is dropped and counted.
    pub fn log_ins(&mut self, site: u32, v0: u64, v1: u64, width_bits: u8) {
        assert!(
            matches!(width_bits, 8 | 16 | 32 | 64),
            "INS width must be 8/16/32/64 bits"
        );
        assert!((site as usize) < self.entries.len(), "site id out of range");
        let mask = width_mask(width_bits);
        let pair = InsPair { v0: v0 & mask, v1: v1 & mask, width_bits };
        let slot = &mut self.entries[site as usize];
        match slot {
            None => {
                let mut ring = VecDeque::with_capacity(INS_RING_CAPACITY);
                ring.push_back(pair);
                *slot = Some(CmpEntry { hits: 1, width_bits, ring: CmpRing::Ins(ring) });
            }
            Some(entry) => match &mut entry.ring {
                CmpRing::Ins(ring) => {
                    entry.hits = entry.hits.saturating_add(1);
                    if ring.len() == INS_RING_CAPACITY {
                        ring.pop_front();
                    }
                    ring.push_back(pair);
                }
                CmpRing::Rtn(_) => self.kind_collisions += 1,
            },
        }
    }

    /// Record a byte-sequence comparison. Operands are copied at the fixed
    /// 31-byte length (truncated or zero padded).
    pub fn log_rtn(&mut self, site: u32, p0: &[u8], p1: &[u8]) {
        assert!((site as usize) < self.entries.len(), "site id out of range");
        let pair = RtnPair {
            o0: OperandBytes::from_slice(p0),
            o1: OperandBytes::from_slice(p1),
        };
        let slot = &mut self.entries[site as usize];
        match slot {
            None => {
                let mut ring = VecDeque::with_capacity(RTN_RING_CAPACITY);
                ring.push_back(pair);
                *slot = Some(CmpEntry { hits: 1, width_bits: 0, ring: CmpRing::Rtn(ring) });
            }
            Some(entry) => match &mut entry.ring {
                CmpRing::Rtn(ring) => {
                    entry.hits = entry.hits.saturating_add(1);
                    if ring.len() == RTN_RING_CAPACITY {
                        ring.pop_front();
                    }
                    ring.push_back(pair);
                }
                CmpRing::Ins(_) => self.kind_collisions += 1,
            },
        }
    }

    /// Text dump, one line per non-empty site:
    /// `site=<id> kind=<INS|RTN> width=<bits> hits=<n> slot<i>=<hex v0>,<hex v1>`.
    /// INS values print most-significant byte first at their logged width;
    /// RTN operands print their 31 stored bytes in raw order. RTN sites print
    /// `width=0`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (site, entry) in self.sites() {
            let kind = match entry.kind() {
                CmpKind::Ins => "INS",
                CmpKind::Rtn => "RTN",
            };
            write!(out, "site={site} kind={kind} width={} hits={}", entry.width_bits, entry.hits)
                .unwrap();
            match &entry.ring {
                CmpRing::Ins(ring) => {
                    for (i, pair) in ring.iter().enumerate() {
                        let digits = pair.width_bytes() * 2;
                        write!(
                            out,
                            " slot{i}={:0digits$x},{:0digits$x}",
                            pair.v0, pair.v1
                        )
                        .unwrap();
                    }
                }
                CmpRing::Rtn(ring) => {
                    for (i, pair) in ring.iter().enumerate() {
                        write!(out, " slot{i}=").unwrap();
                        for b in pair.o0.data {
                            write!(out, "{b:02x}").unwrap();
                        }
                        out.push(',');
                        for b in pair.o1.data {
                            write!(out, "{b:02x}").unwrap();
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per-slot changed flags for both operand sides of one site.
fn slot_flags(orig: &CmpEntry, colorized: &CmpEntry) -> Option<Vec<[bool; 2]>> {
    if orig.kind() != colorized.kind() || orig.logged() != colorized.logged() {
        return None;
    }
    let n = orig.logged();
    let mut flags = Vec::with_capacity(n);
    for slot in 0..n {
        match (&orig.ring, &colorized.ring) {
            (CmpRing::Ins(a), CmpRing::Ins(b)) => {
                flags.push([a[slot].v0 != b[slot].v0, a[slot].v1 != b[slot].v1]);
            }
            (CmpRing::Rtn(a), CmpRing::Rtn(b)) => {
                flags.push([a[slot].o0.data != b[slot].o0.data, a[slot].o1.data != b[slot].o1.data]);
            }
            _ => unreachable!("kinds checked above"),
        }
    }
    Some(flags)
}

/// Compare the operand logs of an original and a colorized execution and mark,
/// per (site, slot, operand side), whether the logged value changed. Sites
/// whose slots are all unchanged on both sides are flagged skippable. A site
/// hit in only one map, or with diverging slot counts or kinds, is marked
/// changed everywhere (conservative). Costs no target executions.
pub fn diff_maps(orig: &CmpMap, colorized: &CmpMap) -> ChangeSet {
    let width = orig.width().max(colorized.width());
    let mut set = ChangeSet::default();
    for site in 0..width as u32 {
        let (o, c) = (orig.entry(site), colorized.entry(site));
        let marks = match (o, c) {
            (None, None) => continue,
            (Some(o), Some(c)) => match slot_flags(o, c) {
                Some(slots) => {
                    let skippable = slots.iter().all(|s| !s[0] && !s[1]);
                    SiteMarks { skippable, slots }
                }
                None => SiteMarks::all_changed(o.logged().max(c.logged())),
            },
            (Some(only), None) | (None, Some(only)) => SiteMarks::all_changed(only.logged()),
        };
        set.insert(site, marks);
    }
    set
}
