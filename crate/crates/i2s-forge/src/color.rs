//! Input colorization: rewrite as many bytes as possible while keeping the
//! execution path identical, so that comparison operands observed on the
//! recolored input can be told apart from constants baked into the target.
//!
//! Replacement is class preserving (an ASCII digit stays a digit, a control
//! byte stays a control byte, ...) to keep superficial parsers on the same
//! path. The search walks a worklist of ranges: try to recolor the whole
//! range at once, and on a path change split it in half and retry the halves.

use std::ops::Range;
use std::sync::OnceLock;

use rand::Rng;

use crate::error::Result;
use crate::exec::Executor;
use crate::targets::TargetProgram;

/// Coarse byte classes used for class-preserving replacement. Every class
/// has at least two members, so a replacement can always differ from the
/// original byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ByteClass {
    Upper,
    Lower,
    Digit,
    OtherPrintable,
    ControlZero,
    High,
}

impl ByteClass {
    const ALL: [ByteClass; 6] = [
        ByteClass::Upper,
        ByteClass::Lower,
        ByteClass::Digit,
        ByteClass::OtherPrintable,
        ByteClass::ControlZero,
        ByteClass::High,
    ];
}

pub fn classify_byte(b: u8) -> ByteClass {
    match b {
        b'A'..=b'Z' => ByteClass::Upper,
        b'a'..=b'z' => ByteClass::Lower,
        b'0'..=b'9' => ByteClass::Digit,
        0x20..=0x7e => ByteClass::OtherPrintable,
        0x00..=0x1f | 0x7f => ByteClass::ControlZero,
        _ => ByteClass::High,
    }
}

/// Sorted members of a class.
pub fn class_members(class: ByteClass) -> &'static [u8] {
    static TABLES: OnceLock<Vec<Vec<u8>>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| {
        ByteClass::ALL
            .iter()
            .map(|&c| (0u8..=255).filter(|&b| classify_byte(b) == c).collect())
            .collect()
    });
    let idx = ByteClass::ALL.iter().position(|&c| c == class).unwrap();
    &tables[idx]
}

/// How replacement bytes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorMode {
    /// Deterministic low-entropy swap; notably 0x00 <-> 0x01, so zero runs
    /// recolor to runs of 0x01. Mirrors replacement schemes that draw from a
    /// tiny per-class pool.
    Legacy,
    /// Uniform over the byte's class, excluding the byte itself.
    Entropic,
}

/// Pick a replacement for `b`: same class, guaranteed to differ.
pub fn recolor_byte<R: Rng + ?Sized>(b: u8, mode: ColorMode, rng: &mut R) -> u8 {
    let class = classify_byte(b);
    match mode {
        ColorMode::Legacy => match class {
            ByteClass::Upper => b'A' + (b - b'A' + 13) % 26,
            ByteClass::Lower => b'a' + (b - b'a' + 13) % 26,
            ByteClass::Digit => b'0' + (b - b'0' + 5) % 10,
            ByteClass::ControlZero => {
                if b == 0x00 {
                    0x01
                } else {
                    0x00
                }
            }
            ByteClass::OtherPrintable | ByteClass::High => {
                let members = class_members(class);
                let pos = members.binary_search(&b).unwrap();
                members[(pos + 1) % members.len()]
            }
        },
        ColorMode::Entropic => {
            let members = class_members(class);
            let pos = members.binary_search(&b).unwrap();
            let pick = rng.gen_range(0..members.len() - 1);
            members[pick + usize::from(pick >= pos)]
        }
    }
}

/// Execution budget for colorizing an input of `len` bytes, including the
/// baseline run.
pub fn default_color_budget(len: usize) -> u64 {
    let ceil_log2 = if len <= 1 {
        0
    } else {
        u64::from((len as u64).next_power_of_two().trailing_zeros())
    };
    (2 + 4 * ceil_log2 * len as u64 / 64).min(4096)
}

/// Result of a colorization pass.
#[derive(Debug, Clone)]
pub struct Colorization {
    /// The recolored input; bytes outside `regions` equal the original.
    pub input: Vec<u8>,
    /// Maximal recolored runs, disjoint and sorted by start. Ranges accepted
    /// by adjacent probes coalesce into one region: a region is a series of
    /// replaced bytes, however many probes it took to validate.
    pub regions: Vec<Range<usize>>,
    /// Executions spent, baseline included.
    pub probe_execs: u64,
    /// Path hash of the original input that every accepted probe matched.
    pub baseline_hash: u64,
}

impl Colorization {
    pub fn changed_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.input.len()];
        for r in &self.regions {
            mask[r.clone()].fill(true);
        }
        mask
    }

    pub fn changed_bytes(&self) -> usize {
        self.regions.iter().map(|r| r.len()).sum()
    }
}

/// Recolor `seed` against `target`, spending at most `budget` executions.
pub fn colorize<R: Rng + ?Sized>(
    exec: &mut Executor,
    target: &TargetProgram,
    seed: &[u8],
    mode: ColorMode,
    rng: &mut R,
    budget: u64,
) -> Result<Colorization> {
    let mut used = 0u64;
    let baseline = exec.execute(target, seed, false)?;
    used += 1;
    let baseline_hash = baseline.path_hash;

    let mut buf = seed.to_vec();
    let mut regions: Vec<Range<usize>> = Vec::new();
    let mut worklist = std::collections::VecDeque::new();
    if !seed.is_empty() {
        worklist.push_back(0..seed.len());
    }

    while let Some(range) = worklist.pop_front() {
        if used >= budget {
            break;
        }
        let saved: Vec<u8> = buf[range.clone()].to_vec();
        for i in range.clone() {
            buf[i] = recolor_byte(seed[i], mode, rng);
        }
        let probe = exec.execute(target, &buf, false)?;
        used += 1;
        if probe.path_hash == baseline_hash {
            regions.push(range);
        } else {
            buf[range.clone()].copy_from_slice(&saved);
            if range.len() > 1 {
                let mid = range.start + range.len() / 2;
                worklist.push_back(range.start..mid);
                worklist.push_back(mid..range.end);
            }
        }
    }

    regions.sort_by_key(|r| r.start);
    let mut merged: Vec<Range<usize>> = Vec::with_capacity(regions.len());
    for r in regions {
        match merged.last_mut() {
            Some(last) if last.end == r.start => last.end = r.end,
            _ => merged.push(r),
        }
    }
    Ok(Colorization {
        input: buf,
        regions: merged,
        probe_execs: used,
        baseline_hash,
    })
}
