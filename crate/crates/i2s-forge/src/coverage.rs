//! Edge coverage map and path hashing.
//!
//! Coverage is a fixed-size array of saturating 8-bit edge counters. The map
//! is stored sparsely (synthetic targets touch a handful of edges out of
//! 65536) but hashes and dumps exactly as the dense byte array would.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over `bytes`, the reference definition used by [`path_hash`].
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    h
}

/// Advance an FNV-1a state over `n` zero bytes in O(log n): hashing a zero
/// byte is a plain multiply by the prime, so a run collapses to `h * prime^n`.
fn fnv_skip_zeros(mut h: u64, mut n: usize) -> u64 {
    let mut base = FNV_PRIME;
    while n > 0 {
        if n & 1 == 1 {
            h = h.wrapping_mul(base);
        }
        base = base.wrapping_mul(base);
        n >>= 1;
    }
    h
}

/// Edge-counter map of one execution. Counters saturate at 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    map_size: usize,
    /// (edge index, counter), sorted by edge index, counters non-zero.
    entries: Vec<(u32, u8)>,
}

impl CoverageMap {
    pub fn map_size(&self) -> usize {
        self.map_size
    }

    /// Non-zero counters in ascending edge order.
    pub fn entries(&self) -> &[(u32, u8)] {
        &self.entries
    }

    pub fn counter(&self, edge: u32) -> u8 {
        match self.entries.binary_search_by_key(&edge, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    /// Materialize the dense `map_size`-byte array.
    pub fn to_dense(&self) -> Vec<u8> {
        let mut bytes = vec![0u8; self.map_size];
        for &(i, c) in &self.entries {
            bytes[i as usize] = c;
        }
        bytes
    }

    /// FNV-1a over the dense counter array, computed without materializing it.
    pub fn path_hash(&self) -> u64 {
        let mut h = FNV_OFFSET;
        let mut pos = 0usize;
        for &(i, c) in &self.entries {
            h = fnv_skip_zeros(h, i as usize - pos);
            h = (h ^ c as u64).wrapping_mul(FNV_PRIME);
            pos = i as usize + 1;
        }
        fnv_skip_zeros(h, self.map_size - pos)
    }
}

/// Reusable dense scratch buffer that collects one execution's edge hits.
#[derive(Debug)]
pub struct CovScratch {
    bits: Vec<u8>,
    touched: Vec<u32>,
}

impl CovScratch {
    pub fn new(map_size: usize) -> Self {
        CovScratch { bits: vec![0; map_size], touched: Vec::new() }
    }

    pub fn map_size(&self) -> usize {
        self.bits.len()
    }

    pub fn resize(&mut self, map_size: usize) {
        debug_assert!(self.touched.is_empty(), "resize with pending hits");
        self.bits = vec![0; map_size];
    }

    #[inline]
    pub fn hit(&mut self, edge: u32) {
        let slot = &mut self.bits[edge as usize];
        if *slot == 0 {
            self.touched.push(edge);
        }
        *slot = slot.saturating_add(1);
    }

    /// Drain the recorded hits into a [`CoverageMap`], resetting the scratch.
    pub fn take(&mut self) -> CoverageMap {
        self.touched.sort_unstable();
        let mut entries = Vec::with_capacity(self.touched.len());
        for &i in &self.touched {
            entries.push((i, self.bits[i as usize]));
            self.bits[i as usize] = 0;
        }
        self.touched.clear();
        CoverageMap { map_size: self.bits.len(), entries }
    }
}

/// Set of edges observed so far across a campaign.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    seen: Vec<bool>,
    count: u64,
}

impl EdgeSet {
    pub fn new(map_size: usize) -> Self {
        EdgeSet { seen: vec![false; map_size], count: 0 }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, edge: u32) -> bool {
        self.seen.get(edge as usize).copied().unwrap_or(false)
    }

    /// Record every edge of `coverage`; returns how many were new.
    pub fn absorb(&mut self, coverage: &CoverageMap) -> u64 {
        let mut new = 0;
        for &(i, _) in coverage.entries() {
            let slot = &mut self.seen[i as usize];
            if !*slot {
                *slot = true;
                new += 1;
            }
        }
        self.count += new;
        new
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// FNV-1a of 65536 zero bytes, frozen; guards the sparse fast path.
    const ZERO_MAP_HASH: u64 = 0xeb05052ea5b62325;

    fn map_from(pairs: &[(u32, u8)], size: usize) -> CoverageMap {
        let mut scratch = CovScratch::new(size);
        for &(i, c) in pairs {
            for _ in 0..c {
                scratch.hit(i);
            }
        }
        scratch.take()
    }

    #[test]
    fn all_zero_map_hashes_to_the_frozen_constant() {
        let empty = map_from(&[], 65536);
        assert_eq!(empty.path_hash(), fnv1a(&vec![0u8; 65536]));
        assert_eq!(empty.path_hash(), ZERO_MAP_HASH);
    }

    #[test]
    fn counters_saturate_at_255() {
        let mut scratch = CovScratch::new(8);
        for _ in 0..300 {
            scratch.hit(2);
        }
        let map = scratch.take();
        assert_eq!(map.counter(2), 255);
    }

    #[test]
    fn scratch_resets_between_executions() {
        let mut scratch = CovScratch::new(8);
        scratch.hit(1);
        let first = scratch.take();
        scratch.hit(3);
        let second = scratch.take();
        assert_eq!(first.entries(), &[(1, 1)]);
        assert_eq!(second.entries(), &[(3, 1)]);
    }

    #[test]
    fn single_byte_flips_change_the_hash() {
        // 1000 random single-counter maps, all distinct from the zero map
        // and from each other at different positions.
        let base = map_from(&[], 65536).path_hash();
        let mut state = 0x12345u64;
        for _ in 0..1000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let edge = (state >> 16) as u32 % 65536;
            let flipped = map_from(&[(edge, 1)], 65536);
            assert_ne!(flipped.path_hash(), base, "flip at edge {edge} collided");
        }
    }

    #[test]
    fn edge_set_counts_new_edges_once() {
        let mut edges = EdgeSet::new(16);
        let a = map_from(&[(1, 3), (4, 1)], 16);
        assert_eq!(edges.absorb(&a), 2);
        assert_eq!(edges.absorb(&a), 0);
        assert_eq!(edges.len(), 2);
        assert!(edges.contains(4));
        assert!(!edges.contains(5));
    }

    proptest! {
        #[test]
        fn sparse_hash_matches_dense_fnv(
            pairs in proptest::collection::vec((0u32..512, 1u8..4), 0..40)
        ) {
            let map = map_from(&pairs, 512);
            prop_assert_eq!(map.path_hash(), fnv1a(&map.to_dense()));
        }

        #[test]
        fn dense_roundtrip_preserves_counters(
            pairs in proptest::collection::vec((0u32..64, 1u8..6), 0..20)
        ) {
            let map = map_from(&pairs, 64);
            let dense = map.to_dense();
            for (i, &b) in dense.iter().enumerate() {
                prop_assert_eq!(map.counter(i as u32), b);
            }
        }
    }
}
