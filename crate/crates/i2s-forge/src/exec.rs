//! In-process target execution.
//!
//! Targets are pure functions from input bytes to coverage and comparison
//! logs; running one cannot crash the harness, so an "execution" is a plain
//! function call plus bookkeeping. Every execution anywhere in the process
//! increments one shared atomic counter.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::cmplog::CmpMap;
use crate::coverage::{CovScratch, CoverageMap};
use crate::error::{Error, Result};
use crate::targets::TargetProgram;

/// Process-wide execution counter shared by all executors.
static GLOBAL_EXECS: AtomicU64 = AtomicU64::new(0);

/// Total executions performed by any executor in this process.
pub fn global_exec_count() -> u64 {
    GLOBAL_EXECS.load(Ordering::Relaxed)
}

/// Inputs larger than this are rejected as harness misuse.
pub const DEFAULT_MAX_INPUT_LEN: usize = 1 << 20;

/// Everything observed from one execution.
#[derive(Debug, Clone)]
pub struct ExecResult {
    pub coverage: CoverageMap,
    /// Present only when the execution was run with comparison logging.
    pub cmp_map: Option<CmpMap>,
    /// FNV-1a over the dense coverage counters.
    pub path_hash: u64,
    /// Value of the shared execution counter for this run (1-based).
    pub exec_index: u64,
}

/// Sink handed to a target while it runs. Comparison logging is a no-op when
/// the execution was requested without a cmp map.
pub struct TraceSink<'a> {
    cov: &'a mut CovScratch,
    cmp: Option<&'a mut CmpMap>,
}

impl TraceSink<'_> {
    #[inline]
    pub fn hit(&mut self, edge: u32) {
        self.cov.hit(edge);
    }

    #[inline]
    pub fn cmp_ins(&mut self, site: u32, v0: u64, v1: u64, width_bits: u8) {
        if let Some(map) = self.cmp.as_deref_mut() {
            map.log_ins(site, v0, v1, width_bits);
        }
    }

    #[inline]
    pub fn cmp_rtn(&mut self, site: u32, p0: &[u8], p1: &[u8]) {
        if let Some(map) = self.cmp.as_deref_mut() {
            map.log_rtn(site, p0, p1);
        }
    }
}

/// Runs targets and accounts for executions. One executor per campaign; the
/// coverage scratch is reused across runs, so executions cost O(edges hit).
pub struct Executor {
    scratch: CovScratch,
    cmp_width: usize,
    max_input_len: usize,
    local_execs: u64,
}

impl Executor {
    pub fn new() -> Self {
        Executor {
            scratch: CovScratch::new(0),
            cmp_width: crate::cmplog::DEFAULT_MAP_WIDTH,
            max_input_len: DEFAULT_MAX_INPUT_LEN,
            local_execs: 0,
        }
    }

    pub fn with_max_input_len(mut self, max: usize) -> Self {
        self.max_input_len = max;
        self
    }

    /// Executions performed through this executor.
    pub fn executions(&self) -> u64 {
        self.local_execs
    }

    /// Run `target` on `input`. With `want_cmplog` the result carries the
    /// comparison operand map. Over-long inputs are rejected without running
    /// or counting anything.
    pub fn execute(
        &mut self,
        target: &TargetProgram,
        input: &[u8],
        want_cmplog: bool,
    ) -> Result<ExecResult> {
        if input.len() > self.max_input_len {
            return Err(Error::InputTooLong { len: input.len(), max: self.max_input_len });
        }
        if self.scratch.map_size() != target.map_size() {
            self.scratch.resize(target.map_size());
        }
        let mut cmp = want_cmplog.then(|| CmpMap::new(self.cmp_width));
        {
            let mut sink = TraceSink { cov: &mut self.scratch, cmp: cmp.as_mut() };
            target.run(input, &mut sink);
        }
        let coverage = self.scratch.take();
        let path_hash = coverage.path_hash();
        let exec_index = GLOBAL_EXECS.fetch_add(1, Ordering::Relaxed) + 1;
        self.local_execs += 1;
        Ok(ExecResult { coverage, cmp_map: cmp, path_hash, exec_index })
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::builtin_target;

    #[test]
    fn over_long_input_is_rejected_without_counting() {
        let target = builtin_target("magic_header", &Default::default()).unwrap();
        let mut exec = Executor::new().with_max_input_len(8);
        let before = exec.executions();
        let err = exec.execute(&target, &[0u8; 9], false).unwrap_err();
        assert!(matches!(err, Error::InputTooLong { len: 9, max: 8 }));
        assert_eq!(exec.executions(), before);
    }

    #[test]
    fn executions_increment_local_and_global_counters() {
        let target = builtin_target("magic_header", &Default::default()).unwrap();
        let mut exec = Executor::new();
        let global_before = global_exec_count();
        let a = exec.execute(&target, b"test", false).unwrap();
        let b = exec.execute(&target, b"test", false).unwrap();
        assert_eq!(exec.executions(), 2);
        assert!(b.exec_index > a.exec_index);
        assert!(global_exec_count() >= global_before + 2);
    }

    #[test]
    fn cmp_map_only_present_when_requested() {
        let target = builtin_target("magic_header", &Default::default()).unwrap();
        let mut exec = Executor::new();
        let plain = exec.execute(&target, b"\x7fELFxxxx", false).unwrap();
        let logged = exec.execute(&target, b"\x7fELFxxxx", true).unwrap();
        assert!(plain.cmp_map.is_none());
        assert!(logged.cmp_map.is_some());
        assert_eq!(plain.path_hash, logged.path_hash);
    }
}
