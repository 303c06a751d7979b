//! Builtin synthetic targets.
//!
//! Every target is a deterministic pure function over the input bytes that
//! emits edge hits and comparison operands through a [`TraceSink`]. Site and
//! edge ids are static constants so operand maps from different executions
//! line up slot by slot.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec::TraceSink;

/// Coverage map size shared by all builtin targets.
pub const BUILTIN_MAP_SIZE: usize = 65536;

pub const BUILTIN_TARGET_NAMES: [&str; 5] = [
    "magic_header",
    "zero_prefix_rtn",
    "mega_switch",
    "pcap_like",
    "deep_nest",
];

/// Key=value options accepted by [`builtin_target`].
#[derive(Debug, Clone, Default)]
pub struct TargetParams(BTreeMap<String, String>);

impl TargetParams {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        TargetParams(pairs.into_iter().collect())
    }

    fn check_keys(&self, target: &str, allowed: &[&str]) -> Result<()> {
        for (key, value) in &self.0 {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::BadTargetParam {
                    target: target.to_string(),
                    key: key.clone(),
                    value: value.clone(),
                    reason: format!("unknown key; allowed: {}", allowed.join(", ")),
                });
            }
        }
        Ok(())
    }

    fn get_u32(&self, target: &str, key: &str, default: u32, range: std::ops::RangeInclusive<u32>) -> Result<u32> {
        let Some(raw) = self.0.get(key) else { return Ok(default) };
        let parsed: u32 = raw.parse().map_err(|_| Error::BadTargetParam {
            target: target.to_string(),
            key: key.to_string(),
            value: raw.clone(),
            reason: "expected an unsigned integer".to_string(),
        })?;
        if !range.contains(&parsed) {
            return Err(Error::BadTargetParam {
                target: target.to_string(),
                key: key.to_string(),
                value: raw.clone(),
                reason: format!("expected a value in {range:?}"),
            });
        }
        Ok(parsed)
    }

    fn get_hex_u32(&self, target: &str, key: &str, default: u32) -> Result<u32> {
        let Some(raw) = self.0.get(key) else { return Ok(default) };
        let digits = raw.strip_prefix("0x").unwrap_or(raw);
        u32::from_str_radix(digits, 16).map_err(|_| Error::BadTargetParam {
            target: target.to_string(),
            key: key.to_string(),
            value: raw.clone(),
            reason: "expected a hex u32".to_string(),
        })
    }
}

type Runner = Box<dyn Fn(&[u8], &mut TraceSink) + Send + Sync>;

/// A named in-process target: pure function, fixed map size, default seed.
pub struct TargetProgram {
    name: &'static str,
    map_size: usize,
    default_seed: Vec<u8>,
    runner: Runner,
}

impl TargetProgram {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn map_size(&self) -> usize {
        self.map_size
    }

    /// Seed used when no corpus directory is supplied.
    pub fn default_seed(&self) -> &[u8] {
        &self.default_seed
    }

    #[inline]
    pub fn run(&self, input: &[u8], sink: &mut TraceSink) {
        (self.runner)(input, sink);
    }
}

impl std::fmt::Debug for TargetProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TargetProgram")
            .field("name", &self.name)
            .field("map_size", &self.map_size)
            .finish()
    }
}

/// Construct a builtin target by name.
pub fn builtin_target(name: &str, params: &TargetParams) -> Result<TargetProgram> {
    match name {
        "magic_header" => magic_header::build(params),
        "zero_prefix_rtn" => zero_prefix_rtn::build(params),
        "mega_switch" => mega_switch::build(params),
        "pcap_like" => pcap_like::build(params),
        "deep_nest" => deep_nest::build(params),
        _ => Err(Error::UnknownTarget {
            name: name.to_string(),
            valid: BUILTIN_TARGET_NAMES.to_vec(),
        }),
    }
}

fn u16le(bytes: &[u8]) -> u16 {
    u16::from_le_bytes([bytes[0], bytes[1]])
}

fn u32le(bytes: &[u8]) -> u32 {
    u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
}

fn u64le(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[..8]);
    u64::from_le_bytes(buf)
}

/// Three nested magic gates of growing width: a 4-byte and an 8-byte integer
/// compare followed by a 16-byte memcmp-style key.
pub mod magic_header {
    use super::*;

    pub const EDGE_ENTRY: u32 = 0;
    pub const EDGE_TOO_SHORT: u32 = 1;
    pub const EDGE_BRANCH_A: u32 = 2;
    pub const EDGE_BRANCH_B: u32 = 3;
    pub const EDGE_BRANCH_C: u32 = 4;

    pub const SITE_MAGIC_A: u32 = 1;
    pub const SITE_MAGIC_B: u32 = 2;
    pub const SITE_KEY_C: u32 = 3;

    /// "\x7fELF" read as a little-endian u32.
    pub const DEFAULT_MAGIC_A: u32 = 0x464c_457f;
    pub const MAGIC_B: u64 = 0x0123_4567_89ab_cdef;
    pub const KEY_C: &[u8; 16] = b"SESSION-KEY-0042";

    pub fn build(params: &TargetParams) -> Result<TargetProgram> {
        params.check_keys("magic_header", &["magic"])?;
        let magic_a = params.get_hex_u32("magic_header", "magic", DEFAULT_MAGIC_A)?;
        let runner = move |input: &[u8], s: &mut TraceSink| {
            s.hit(EDGE_ENTRY);
            if input.len() < 4 {
                s.hit(EDGE_TOO_SHORT);
                return;
            }
            let a = u32le(input);
            s.cmp_ins(SITE_MAGIC_A, a as u64, magic_a as u64, 32);
            if a != magic_a {
                return;
            }
            s.hit(EDGE_BRANCH_A);
            if input.len() < 12 {
                s.hit(EDGE_TOO_SHORT);
                return;
            }
            let b = u64le(&input[4..]);
            s.cmp_ins(SITE_MAGIC_B, b, MAGIC_B, 64);
            if b != MAGIC_B {
                return;
            }
            s.hit(EDGE_BRANCH_B);
            if input.len() < 28 {
                s.hit(EDGE_TOO_SHORT);
                return;
            }
            s.cmp_rtn(SITE_KEY_C, &input[12..28], KEY_C);
            if &input[12..28] == KEY_C {
                s.hit(EDGE_BRANCH_C);
            }
        };
        Ok(TargetProgram {
            name: "magic_header",
            map_size: BUILTIN_MAP_SIZE,
            default_seed: (0..64u8).map(|i| b'a' + i % 26).collect(),
            runner: Box::new(runner),
        })
    }
}

/// One RTN comparison site hit `k` times per execution. The left operands are
/// input independent and begin with `z` zero bytes — the low-entropy shape
/// that blows up byte-extension against zero-heavy inputs. The right operands
/// are an xor transform of a sliding input window, so they depend on the
/// input without ever matching it literally.
pub mod zero_prefix_rtn {
    use super::*;
    use crate::cmplog::RTN_OPERAND_LEN;

    pub const EDGE_ENTRY: u32 = 0;
    pub const EDGE_EQ_BASE: u32 = 1;

    pub const SITE_CMP: u32 = 1;

    pub const DEFAULT_K: u32 = 50;
    pub const DEFAULT_Z: u32 = 24;
    pub const XOR_MASK: u8 = 0xa5;

    pub fn left_operand(k: u32, z: u32) -> [u8; RTN_OPERAND_LEN] {
        let mut op = [0u8; RTN_OPERAND_LEN];
        for i in z as usize..RTN_OPERAND_LEN {
            op[i] = 0x80 | ((k.wrapping_mul(31).wrapping_add(i as u32 * 7)) as u8 & 0x7f);
        }
        op
    }

    pub fn build(params: &TargetParams) -> Result<TargetProgram> {
        params.check_keys("zero_prefix_rtn", &["k", "z"])?;
        let k = params.get_u32("zero_prefix_rtn", "k", DEFAULT_K, 1..=1024)?;
        let z = params.get_u32("zero_prefix_rtn", "z", DEFAULT_Z, 0..=RTN_OPERAND_LEN as u32 - 1)?;
        let lefts: Vec<[u8; RTN_OPERAND_LEN]> = (0..k).map(|i| left_operand(i, z)).collect();
        let runner = move |input: &[u8], s: &mut TraceSink| {
            s.hit(EDGE_ENTRY);
            for (i, left) in lefts.iter().enumerate() {
                let mut right = [XOR_MASK; RTN_OPERAND_LEN];
                if !input.is_empty() {
                    for (j, slot) in right.iter_mut().enumerate() {
                        *slot = input[(i * 7 + j) % input.len()] ^ XOR_MASK;
                    }
                }
                s.cmp_rtn(SITE_CMP, left, &right);
                if *left == right {
                    s.hit(EDGE_EQ_BASE + i as u32);
                }
            }
        };
        Ok(TargetProgram {
            name: "zero_prefix_rtn",
            map_size: BUILTIN_MAP_SIZE,
            default_seed: vec![0u8; 4096],
            runner: Box::new(runner),
        })
    }
}

/// Every input byte indexes a 256-arm switch; each arm owns one coverage edge
/// and one 8-bit comparison site, so coverage is exactly the byte histogram.
pub mod mega_switch {
    use super::*;

    pub const EDGE_ENTRY: u32 = 0;
    pub const EDGE_ARM_BASE: u32 = 1;

    pub const SITE_ARM_BASE: u32 = 1;

    pub fn build(params: &TargetParams) -> Result<TargetProgram> {
        params.check_keys("mega_switch", &[])?;
        let runner = move |input: &[u8], s: &mut TraceSink| {
            s.hit(EDGE_ENTRY);
            for &b in input {
                s.hit(EDGE_ARM_BASE + b as u32);
                s.cmp_ins(SITE_ARM_BASE + b as u32, b as u64, b as u64, 8);
            }
        };
        Ok(TargetProgram {
            name: "mega_switch",
            map_size: BUILTIN_MAP_SIZE,
            default_seed: (0..64u8).map(|i| b'0' + i % 10).collect(),
            runner: Box::new(runner),
        })
    }
}

/// A toy capture format: file magic, then length-prefixed records with a
/// 16-bit type tag and a type-specific body parser.
pub mod pcap_like {
    use super::*;

    pub const EDGE_ENTRY: u32 = 0;
    pub const EDGE_BAD_MAGIC: u32 = 1;
    pub const EDGE_MAGIC_OK: u32 = 2;
    pub const EDGE_RECORD: u32 = 3;
    pub const EDGE_TRUNCATED: u32 = 4;
    pub const EDGE_PACKET: u32 = 5;
    pub const EDGE_PACKET_MAGIC: u32 = 6;
    pub const EDGE_COMMENT: u32 = 7;
    pub const EDGE_COMMENT_NAME: u32 = 8;
    pub const EDGE_STATS: u32 = 9;
    pub const EDGE_STATS_OK: u32 = 10;
    pub const EDGE_UNKNOWN_TYPE: u32 = 11;
    /// 16 value-bucket edges fed by packet payload bytes.
    pub const EDGE_BUCKET_BASE: u32 = 16;

    pub const SITE_MAGIC: u32 = 1;
    pub const SITE_TAG_PACKET: u32 = 2;
    pub const SITE_TAG_COMMENT: u32 = 3;
    pub const SITE_TAG_STATS: u32 = 4;
    pub const SITE_PACKET_MAGIC: u32 = 5;
    pub const SITE_COMMENT_NAME: u32 = 6;
    pub const SITE_STATS_SUM: u32 = 7;

    pub const FILE_MAGIC: u32 = 0xa1b2_c3d4;
    pub const TAG_PACKET: u16 = 0x0001;
    pub const TAG_COMMENT: u16 = 0x0002;
    pub const TAG_STATS: u16 = 0x00ab;
    pub const PACKET_MAGIC: u32 = 0xfeed_face;
    pub const COMMENT_NAME: &[u8; 8] = b"COMMENT\0";
    pub const STATS_SUM: u16 = 0x1337;

    pub fn build(params: &TargetParams) -> Result<TargetProgram> {
        params.check_keys("pcap_like", &[])?;
        let runner = move |input: &[u8], s: &mut TraceSink| {
            s.hit(EDGE_ENTRY);
            if input.len() < 4 || u32le(input) != FILE_MAGIC {
                if input.len() >= 4 {
                    s.cmp_ins(SITE_MAGIC, u32le(input) as u64, FILE_MAGIC as u64, 32);
                }
                s.hit(EDGE_BAD_MAGIC);
                return;
            }
            s.cmp_ins(SITE_MAGIC, u32le(input) as u64, FILE_MAGIC as u64, 32);
            s.hit(EDGE_MAGIC_OK);
            let mut pos = 4;
            while pos + 4 <= input.len() {
                let tag = u16le(&input[pos..]);
                let body_len = u16le(&input[pos + 2..]) as usize;
                let body_start = pos + 4;
                if body_start + body_len > input.len() {
                    s.hit(EDGE_TRUNCATED);
                    return;
                }
                s.hit(EDGE_RECORD);
                let body = &input[body_start..body_start + body_len];
                s.cmp_ins(SITE_TAG_PACKET, tag as u64, TAG_PACKET as u64, 16);
                if tag == TAG_PACKET {
                    s.hit(EDGE_PACKET);
                    if body.len() >= 4 {
                        let m = u32le(body);
                        s.cmp_ins(SITE_PACKET_MAGIC, m as u64, PACKET_MAGIC as u64, 32);
                        if m == PACKET_MAGIC {
                            s.hit(EDGE_PACKET_MAGIC);
                        }
                    }
                    for &b in body {
                        s.hit(EDGE_BUCKET_BASE + (b >> 4) as u32);
                    }
                } else {
                    s.cmp_ins(SITE_TAG_COMMENT, tag as u64, TAG_COMMENT as u64, 16);
                    if tag == TAG_COMMENT {
                        s.hit(EDGE_COMMENT);
                        if body.len() >= 8 {
                            s.cmp_rtn(SITE_COMMENT_NAME, &body[..8], COMMENT_NAME);
                            if &body[..8] == COMMENT_NAME {
                                s.hit(EDGE_COMMENT_NAME);
                            }
                        }
                    } else {
                        s.cmp_ins(SITE_TAG_STATS, tag as u64, TAG_STATS as u64, 16);
                        if tag == TAG_STATS {
                            s.hit(EDGE_STATS);
                            let sum = body.iter().fold(0u16, |acc, &b| acc.wrapping_add(b as u16));
                            s.cmp_ins(SITE_STATS_SUM, sum as u64, STATS_SUM as u64, 16);
                            if sum == STATS_SUM {
                                s.hit(EDGE_STATS_OK);
                            }
                        } else {
                            s.hit(EDGE_UNKNOWN_TYPE);
                        }
                    }
                }
                pos = body_start + body_len;
            }
        };
        let mut seed = Vec::new();
        seed.extend_from_slice(&FILE_MAGIC.to_le_bytes());
        seed.extend_from_slice(&TAG_PACKET.to_le_bytes());
        seed.extend_from_slice(&12u16.to_le_bytes());
        seed.extend_from_slice(b"payload-data");
        seed.extend_from_slice(&TAG_COMMENT.to_le_bytes());
        seed.extend_from_slice(&10u16.to_le_bytes());
        seed.extend_from_slice(b"remark-xyz");
        seed.extend_from_slice(&TAG_STATS.to_le_bytes());
        seed.extend_from_slice(&6u16.to_le_bytes());
        seed.extend_from_slice(b"abcdef");
        Ok(TargetProgram {
            name: "pcap_like",
            map_size: BUILTIN_MAP_SIZE,
            default_seed: seed,
            runner: Box::new(runner),
        })
    }
}

/// `n` chained 4-byte magic gates; gate `i` only executes once gates
/// `0..i` all passed.
pub mod deep_nest {
    use super::*;

    pub const EDGE_ENTRY: u32 = 0;
    pub const EDGE_PASS_BASE: u32 = 1;
    pub const EDGE_TOO_SHORT: u32 = 40;

    pub const SITE_BASE: u32 = 1;

    pub const DEFAULT_DEPTH: u32 = 8;

    fn splitmix64(x: u64) -> u64 {
        let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Gate value for level `i`; never zero, so all-zero inputs fail level 0.
    pub fn magic(level: u32) -> u32 {
        (splitmix64(level as u64 + 0x6e) as u32) | 1
    }

    pub fn build(params: &TargetParams) -> Result<TargetProgram> {
        params.check_keys("deep_nest", &["n"])?;
        let depth = params.get_u32("deep_nest", "n", DEFAULT_DEPTH, 1..=16)?;
        let runner = move |input: &[u8], s: &mut TraceSink| {
            s.hit(EDGE_ENTRY);
            let mut pos = 0;
            for level in 0..depth {
                if input.len() < pos + 4 {
                    s.hit(EDGE_TOO_SHORT);
                    return;
                }
                let v = u32le(&input[pos..]);
                s.cmp_ins(SITE_BASE + level, v as u64, magic(level) as u64, 32);
                if v != magic(level) {
                    return;
                }
                s.hit(EDGE_PASS_BASE + level);
                pos += 4;
            }
        };
        Ok(TargetProgram {
            name: "deep_nest",
            map_size: BUILTIN_MAP_SIZE,
            default_seed: vec![0u8; 64],
            runner: Box::new(runner),
        })
    }
}
