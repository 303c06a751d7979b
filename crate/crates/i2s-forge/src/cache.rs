//! Deduplication of replacement executions.
//!
//! During one solving stage every probe buffer is fully determined by the
//! pristine colorized input plus (offset, bytes written so far), so two
//! probes with the same key are byte-identical executions — the second can
//! never observe anything the first did not. The cache suppresses those
//! repeats. It must be reset between stages: a different base input makes
//! equal keys describe different buffers.

use std::collections::{BTreeMap, HashMap};

use crate::cmplog::RTN_OPERAND_LEN;

/// What a stage writes per probe: start offset and the cumulative replacement
/// prefix placed there. Replacement sources are at most 31 bytes, so the
/// prefix always fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub offset: u32,
    pub len: u8,
    pub bytes: [u8; RTN_OPERAND_LEN],
}

impl CacheKey {
    pub fn new(offset: usize, written: &[u8]) -> CacheKey {
        assert!(written.len() <= RTN_OPERAND_LEN, "replacement prefix too long");
        let mut bytes = [0u8; RTN_OPERAND_LEN];
        bytes[..written.len()].copy_from_slice(written);
        CacheKey {
            offset: u32::try_from(offset).expect("offset fits in u32"),
            len: written.len() as u8,
            bytes,
        }
    }

    fn written(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }
}

/// Cache verdict for one probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    /// First sighting: execute the probe.
    Admit,
    /// Seen before in this stage: the execution would be byte-identical.
    Suppress,
}

/// Cache policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Every probe executes.
    Off,
    /// Track only the handful of low-entropy prefixes that dominate repeat
    /// traffic on zero-heavy inputs; constant memory.
    FixedSet,
    /// Track every key, evicting least-recently-used beyond the capacity.
    Lru(usize),
}

impl CacheMode {
    pub const DEFAULT_LRU_CAPACITY: usize = 65536;
}

fn is_fixed_pattern(written: &[u8]) -> bool {
    matches!(written, [0x00] | [0x01] | [0x00, 0x00] | [0x00, 0x01])
}

/// Per-stage dedup cache; see [`CacheMode`] for policies.
#[derive(Debug)]
pub struct ReplacementCache {
    mode: CacheMode,
    entries: HashMap<CacheKey, u64>,
    order: BTreeMap<u64, CacheKey>,
    tick: u64,
    admitted: u64,
    suppressed: u64,
}

impl ReplacementCache {
    pub fn new(mode: CacheMode) -> ReplacementCache {
        ReplacementCache {
            mode,
            entries: HashMap::new(),
            order: BTreeMap::new(),
            tick: 0,
            admitted: 0,
            suppressed: 0,
        }
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    /// Record one probe and decide whether it must execute.
    pub fn check(&mut self, key: CacheKey) -> Admission {
        let verdict = match self.mode {
            CacheMode::Off => Admission::Admit,
            CacheMode::FixedSet => {
                if !is_fixed_pattern(key.written()) {
                    Admission::Admit
                } else if self.entries.contains_key(&key) {
                    Admission::Suppress
                } else {
                    self.entries.insert(key, 0);
                    Admission::Admit
                }
            }
            CacheMode::Lru(capacity) => {
                self.tick += 1;
                if let Some(old_tick) = self.entries.insert(key, self.tick) {
                    self.order.remove(&old_tick);
                    self.order.insert(self.tick, key);
                    Admission::Suppress
                } else {
                    self.order.insert(self.tick, key);
                    if self.entries.len() > capacity.max(1) {
                        let (&oldest, &victim) = self.order.iter().next().unwrap();
                        self.order.remove(&oldest);
                        self.entries.remove(&victim);
                    }
                    Admission::Admit
                }
            }
        };
        match verdict {
            Admission::Admit => self.admitted += 1,
            Admission::Suppress => self.suppressed += 1,
        }
        verdict
    }

    /// Forget all keys; call between stages. Counters survive so a campaign
    /// can aggregate them.
    pub fn reset(&mut self) {
        self.entries.clear();
        self.order.clear();
        self.tick = 0;
    }

    pub fn admitted(&self) -> u64 {
        self.admitted
    }

    pub fn suppressed(&self) -> u64 {
        self.suppressed
    }

    pub fn tracked(&self) -> usize {
        self.entries.len()
    }
}
