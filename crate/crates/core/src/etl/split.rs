// Copyright 2026 The Unimart Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Split planning: how an upload is cut into record-aligned byte ranges,
//! one per mapper.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::Path;
use std::str::FromStr;

use super::EtlError;

/// Split sizing parameters, all in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    s_min: u64,
    s_max: u64,
    s_b: u64,
}

impl SplitConfig {
    pub fn new(s_min: u64, s_max: u64, s_b: u64) -> Result<Self, EtlError> {
        if s_min == 0 || s_max == 0 || s_b == 0 || s_min > s_max {
            return Err(EtlError::InvalidSplitConfig { s_min, s_max, s_b });
        }
        Ok(SplitConfig { s_min, s_max, s_b })
    }

    /// `s_min = s_max = c`: a split size independent of the block size.
    pub fn constant(c: u64, s_b: u64) -> Result<Self, EtlError> {
        SplitConfig::new(c, c, s_b)
    }

    pub fn s_min(&self) -> u64 {
        self.s_min
    }

    pub fn s_max(&self) -> u64 {
        self.s_max
    }

    pub fn s_b(&self) -> u64 {
        self.s_b
    }
}

impl Default for SplitConfig {
    /// 1 MiB constant splits over 1 MiB blocks.
    fn default() -> Self {
        SplitConfig {
            s_min: 1 << 20,
            s_max: 1 << 20,
            s_b: 1 << 20,
        }
    }
}

/// `max(s_min, min(s_max, s_b))`.
pub fn split_size(cfg: &SplitConfig) -> u64 {
    cfg.s_min.max(cfg.s_max.min(cfg.s_b))
}

/// Number of mappers for an input of `s_ip` bytes: `ceil(s_ip / s_split)`,
/// never less than one.
pub fn mapper_count(s_ip: u64, s_split: u64) -> u64 {
    assert!(s_split > 0, "split size must be positive");
    s_ip.div_ceil(s_split).max(1)
}

/// How many mappers an ETL run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EtlMode {
    /// Always two mappers; each takes half of the input.
    Case1,
    /// Constant split size; mapper count grows with the input.
    Case2,
}

impl EtlMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EtlMode::Case1 => "case1",
            EtlMode::Case2 => "case2",
        }
    }
}

impl FromStr for EtlMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "case1" => Ok(EtlMode::Case1),
            "case2" => Ok(EtlMode::Case2),
            other => Err(format!("unknown mode `{other}` (expected case1 or case2)")),
        }
    }
}

impl std::fmt::Display for EtlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRange {
    pub offset: u64,
    pub len: u64,
}

impl SplitRange {
    pub fn end(&self) -> u64 {
        self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    /// Input size.
    pub s_ip: u64,
    /// Nominal split size before record alignment.
    pub s_split: u64,
    /// Contiguous record-aligned ranges covering `[0, s_ip)`. A range may be
    /// empty when a single record spans several nominal splits.
    pub splits: Vec<SplitRange>,
    /// Mapper count; always `splits.len()`.
    pub n_m: u64,
}

/// Random access to the bytes being split.
pub trait ByteSource {
    fn len(&self) -> u64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> io::Result<usize>;
}

impl ByteSource for &[u8] {
    fn len(&self) -> u64 {
        <[u8]>::len(self) as u64
    }

    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> io::Result<usize> {
        let start = (offset as usize).min(<[u8]>::len(self));
        let n = buf.len().min(<[u8]>::len(self) - start);
        buf[..n].copy_from_slice(&self[start..start + n]);
        Ok(n)
    }
}

struct FileSource {
    file: File,
    len: u64,
}

impl ByteSource for FileSource {
    fn len(&self) -> u64 {
        self.len
    }

    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> io::Result<usize> {
        self.file.seek(SeekFrom::Start(offset))?;
        self.file.read(buf)
    }
}

/// Moves `pos` forward to the start of the next record (just after an LF).
fn align_forward<S: ByteSource>(src: &mut S, pos: u64) -> io::Result<u64> {
    let len = src.len();
    if pos == 0 || pos >= len {
        return Ok(pos.min(len));
    }
    let mut prev = [0u8; 1];
    src.read_at(pos - 1, &mut prev)?;
    if prev[0] == b'\n' {
        return Ok(pos);
    }
    let mut buf = vec![0u8; 64 * 1024];
    let mut at = pos;
    while at < len {
        let n = src.read_at(at, &mut buf)?;
        if n == 0 {
            break;
        }
        if let Some(i) = memchr::memchr(b'\n', &buf[..n]) {
            return Ok(at + i as u64 + 1);
        }
        at += n as u64;
    }
    Ok(len)
}

/// Cuts a source into `count` nominal ranges of `s_split` bytes and aligns
/// every interior boundary to a record start.
pub fn aligned_splits<S: ByteSource>(
    src: &mut S,
    s_split: u64,
    count: u64,
) -> io::Result<Vec<SplitRange>> {
    let len = src.len();
    let mut bounds = Vec::with_capacity(count as usize + 1);
    bounds.push(0);
    for i in 1..count {
        let nominal = i.saturating_mul(s_split);
        let prev = *bounds.last().unwrap();
        bounds.push(align_forward(src, nominal)?.max(prev));
    }
    bounds.push(len);
    Ok(bounds
        .windows(2)
        .map(|w| SplitRange {
            offset: w[0],
            len: w[1] - w[0],
        })
        .collect())
}

/// Plans the splits of an in-memory or on-disk source.
pub fn plan_source<S: ByteSource>(
    src: &mut S,
    cfg: &SplitConfig,
    mode: EtlMode,
) -> Result<SplitPlan, EtlError> {
    let s_ip = src.len();
    if s_ip == 0 {
        return Err(EtlError::EmptyInput);
    }
    let s_split = match mode {
        EtlMode::Case1 => s_ip.div_ceil(2),
        EtlMode::Case2 => split_size(cfg),
    };
    let n_m = mapper_count(s_ip, s_split);
    if mode == EtlMode::Case1 && n_m < 2 {
        log::info!("{s_ip}-byte input is too small for two mappers; using one");
    }
    let splits = aligned_splits(src, s_split, n_m).map_err(EtlError::io("aligning splits"))?;
    Ok(SplitPlan {
        s_ip,
        s_split,
        n_m: splits.len() as u64,
        splits,
    })
}

/// Plans the splits of the file at `path`.
pub fn plan_splits(path: &Path, cfg: &SplitConfig, mode: EtlMode) -> Result<SplitPlan, EtlError> {
    let file = File::open(path).map_err(EtlError::io(format!("opening {}", path.display())))?;
    let len = file
        .metadata()
        .map_err(EtlError::io(format!("reading {}", path.display())))?
        .len();
    plan_source(&mut FileSource { file, len }, cfg, mode)
}

/// Record-aligned ranges of roughly `target` bytes each over a file.
pub fn split_file_by_size(path: &Path, target: u64) -> io::Result<Vec<SplitRange>> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    let count = mapper_count(len, target.max(1));
    aligned_splits(&mut FileSource { file, len }, target.max(1), count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MIB: u64 = 1 << 20;

    #[test]
    fn split_size_examples() {
        for s_b in [1, 64 * MIB, 10 * 1024 * MIB] {
            assert_eq!(
                split_size(&SplitConfig::constant(7 * MIB, s_b).unwrap()),
                7 * MIB
            );
        }
        assert_eq!(
            split_size(&SplitConfig::new(1, 256 * MIB, 64 * MIB).unwrap()),
            64 * MIB
        );
        assert_eq!(
            split_size(&SplitConfig::new(128 * MIB, 256 * MIB, 64 * MIB).unwrap()),
            128 * MIB
        );
    }

    #[test]
    fn invalid_configs() {
        assert!(SplitConfig::new(0, 1, 1).is_err());
        assert!(SplitConfig::new(2, 1, 1).is_err());
        assert!(SplitConfig::new(1, 1, 0).is_err());
    }

    #[test]
    fn mapper_count_examples() {
        assert_eq!(mapper_count(2_097_152, 1_048_576), 2);
        assert_eq!(mapper_count(2_095_843, 1_048_576), 2);
        assert_eq!(mapper_count(100, 1_048_576), 1);
    }

    #[test]
    fn case2_two_mib_gives_two_splits() {
        let line = b"0123456789abcde\n"; // 16 bytes
        let data: Vec<u8> = line
            .iter()
            .copied()
            .cycle()
            .take(2 * MIB as usize)
            .collect();
        let plan = plan_source(
            &mut data.as_slice(),
            &SplitConfig::constant(MIB, MIB).unwrap(),
            EtlMode::Case2,
        )
        .unwrap();
        assert_eq!(plan.n_m, 2);
        assert_eq!(plan.splits[1].offset, MIB);
    }

    #[test]
    fn case1_always_two() {
        let cfg = SplitConfig::default();
        for size in [2usize, 10, 1000, 5 * MIB as usize] {
            let data = vec![b'\n'; size];
            let plan = plan_source(&mut data.as_slice(), &cfg, EtlMode::Case1).unwrap();
            assert_eq!(plan.n_m, 2, "size {size}");
        }
        let plan = plan_source(&mut b"x".as_slice(), &cfg, EtlMode::Case1).unwrap();
        assert_eq!(plan.n_m, 1);
    }

    #[test]
    fn boundary_mid_record_moves_to_next_line() {
        let data = b"aaaa\nbbbbbbbb\ncc\n";
        let cfg = SplitConfig::constant(7, 7).unwrap();
        let plan = plan_source(&mut data.as_slice(), &cfg, EtlMode::Case2).unwrap();
        assert_eq!(plan.n_m, 3);
        // nominal 7 falls inside "bbbbbbbb", nominal 14 is exactly a line start
        assert_eq!(plan.splits[1].offset, 14);
        assert_eq!(plan.splits[1].len, 0);
        assert_eq!(plan.splits[2].offset, 14);
        let joined: Vec<u8> = plan
            .splits
            .iter()
            .flat_map(|s| data[s.offset as usize..s.end() as usize].iter().copied())
            .collect();
        assert_eq!(joined, data);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            plan_source(&mut b"".as_slice(), &SplitConfig::default(), EtlMode::Case2),
            Err(EtlError::EmptyInput)
        ));
    }

    proptest! {
        #[test]
        fn split_size_within_bounds(a in 1u64..1 << 30, b in 1u64..1 << 30, s_b in 1u64..1 << 30) {
            let cfg = SplitConfig::new(a.min(b), a.max(b), s_b).unwrap();
            let s = split_size(&cfg);
            prop_assert!(cfg.s_min() <= s && s <= cfg.s_max());
        }

        #[test]
        fn mapper_count_monotone(s_ip in 1u64..1 << 40, extra in 0u64..1 << 20, c in 1u64..1 << 24) {
            prop_assert!(mapper_count(s_ip, c) <= mapper_count(s_ip + extra, c));
        }

        #[test]
        fn splits_reassemble_and_align(
            lines in proptest::collection::vec("[a-z,]{0,40}", 1..60),
            crlf in any::<bool>(),
            trailing in any::<bool>(),
            s_split in 1u64..200,
            case1 in any::<bool>(),
        ) {
            let eol = if crlf { "\r\n" } else { "\n" };
            let mut text = lines.join(eol);
            if trailing { text.push_str(eol); }
            prop_assume!(!text.is_empty());
            let data = text.into_bytes();
            let mode = if case1 { EtlMode::Case1 } else { EtlMode::Case2 };
            let cfg = SplitConfig::constant(s_split, 64).unwrap();
            let plan = plan_source(&mut data.as_slice(), &cfg, mode).unwrap();
            prop_assert_eq!(plan.n_m as usize, plan.splits.len());
            prop_assert_eq!(plan.n_m, mapper_count(data.len() as u64, plan.s_split));
            let mut expect = 0;
            let mut joined = Vec::new();
            for s in &plan.splits {
                prop_assert_eq!(s.offset, expect);
                if s.offset > 0 && s.offset < data.len() as u64 {
                    prop_assert_eq!(data[s.offset as usize - 1], b'\n');
                }
                joined.extend_from_slice(&data[s.offset as usize..s.end() as usize]);
                expect = s.end();
            }
            prop_assert_eq!(expect, data.len() as u64);
            prop_assert_eq!(joined, data);
        }
    }
}
