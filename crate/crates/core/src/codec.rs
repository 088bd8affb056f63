//! Diff-time-tag codec: difference transform, partition-level shuffling, and
//! fixed-width bit packing.
//!
//! Time-tag arrays travel as a first stamp `t1` plus inter-arrival
//! differences in codec ticks. The differences are split into `2^k`
//! contiguous, near-equal partitions which are shuffled by a permutation ρ;
//! ρ itself packs into exactly `k * 2^k` bits and each difference into `b`
//! bits, which is precisely how the key budget accounts for them.

use rand::Rng;
use thiserror::Error;

use crate::bits::BitString;
use crate::timebase::TimeTagArray;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("diff at index {index} needs {min_bits} bits, exceeds b = {width}")]
    DiffOverflow { index: usize, width: u32, min_bits: u32 },
    #[error("gap at index {index} ({gap} ps) is not a multiple of the codec tick {tick_ps} ps")]
    MisalignedGap { index: usize, gap: i64, tick_ps: i64 },
    #[error("tags not strictly increasing at index {index}")]
    NonMonotonic { index: usize },
    #[error("bit length {len_bits} is not a multiple of the field width {width}")]
    LengthNotDivisible { len_bits: usize, width: u32 },
    #[error("value {value} at index {index} does not fit in {width} bits")]
    ValueOverflow { index: usize, value: u64, width: u32 },
    #[error("permutation encoding is not a bijection: {reason}")]
    CorruptPermutation { reason: String },
    #[error("permutation over {perm_blocks} blocks applied to {data_blocks} partitions")]
    DimensionMismatch { perm_blocks: usize, data_blocks: usize },
    #[error("invalid codec parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Widest supported diff field; `b` also travels as a single wire byte.
pub const MAX_DIFF_BITS: u32 = 57;
/// Largest supported partition exponent (2^24 blocks).
pub const MAX_PARTITION_EXPONENT: u32 = 24;

fn check_width(b: u32) -> Result<(), CodecError> {
    if b == 0 || b > MAX_DIFF_BITS {
        return Err(CodecError::InvalidParameter {
            name: "bits_per_diff",
            reason: format!("must be in 1..={MAX_DIFF_BITS}, got {b}"),
        });
    }
    Ok(())
}

fn check_exponent(k: u32) -> Result<(), CodecError> {
    if k > MAX_PARTITION_EXPONENT {
        return Err(CodecError::InvalidParameter {
            name: "k",
            reason: format!("must be <= {MAX_PARTITION_EXPONENT}, got {k}"),
        });
    }
    Ok(())
}

/// A time-tag array in difference form.
///
/// Reconstruction is the exact prefix sum
/// `t_{j+1} = t_j + diffs[j] * codec_tick_ps` starting from `t1_ps`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffTagArray {
    pub t1_ps: i64,
    pub diffs: Vec<u64>,
    pub codec_tick_ps: i64,
    pub bits_per_diff: u32,
    pub duration_ps: i64,
}

/// Converts a strictly increasing tag array into difference form.
///
/// Every gap must be a positive multiple of `codec_tick_ps` (guaranteed when
/// the tick equals the tagger resolution) and must fit in `b` bits; an
/// overflow reports the offending index and the minimal feasible width.
pub fn to_diffs(tags: &TimeTagArray, codec_tick_ps: i64, b: u32) -> Result<DiffTagArray, CodecError> {
    check_width(b)?;
    if codec_tick_ps <= 0 {
        return Err(CodecError::InvalidParameter {
            name: "codec_tick_ps",
            reason: format!("must be > 0, got {codec_tick_ps}"),
        });
    }
    let t1_ps = *tags.tags_ps.first().ok_or(CodecError::InvalidParameter {
        name: "tags",
        reason: "array is empty; t1 is undefined".into(),
    })?;
    let max = (1u64 << b) - 1;
    let mut diffs = Vec::with_capacity(tags.tags_ps.len().saturating_sub(1));
    for (index, pair) in tags.tags_ps.windows(2).enumerate() {
        let gap = pair[1] - pair[0];
        if gap <= 0 {
            return Err(CodecError::NonMonotonic { index: index + 1 });
        }
        if gap % codec_tick_ps != 0 {
            return Err(CodecError::MisalignedGap { index, gap, tick_ps: codec_tick_ps });
        }
        let d = (gap / codec_tick_ps) as u64;
        if d > max {
            return Err(CodecError::DiffOverflow {
                index,
                width: b,
                min_bits: 64 - d.leading_zeros(),
            });
        }
        diffs.push(d);
    }
    Ok(DiffTagArray {
        t1_ps,
        diffs,
        codec_tick_ps,
        bits_per_diff: b,
        duration_ps: tags.duration_ps,
    })
}

/// Exact inverse of [`to_diffs`].
pub fn from_diffs(d: &DiffTagArray) -> TimeTagArray {
    let mut tags = Vec::with_capacity(d.diffs.len() + 1);
    let mut t = d.t1_ps;
    tags.push(t);
    for &diff in &d.diffs {
        t += diff as i64 * d.codec_tick_ps;
        tags.push(t);
    }
    TimeTagArray { tags_ps: tags, duration_ps: d.duration_ps }
}

/// `2^k` contiguous blocks of diffs in original order.
///
/// When the length is not divisible, the first `len mod 2^k` blocks carry one
/// extra element; `ragged_tail_len` records that count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionedDiffs {
    pub blocks: Vec<Vec<u64>>,
    pub ragged_tail_len: usize,
}

/// Near-equal block sizes for `len` elements over `2^k` blocks.
fn block_sizes(len: usize, k: u32) -> Vec<usize> {
    let n_blocks = 1usize << k;
    let base = len / n_blocks;
    let extra = len % n_blocks;
    (0..n_blocks).map(|i| base + usize::from(i < extra)).collect()
}

/// Splits diffs into `2^k` contiguous near-equal blocks.
pub fn partition(diffs: &[u64], k: u32) -> Result<PartitionedDiffs, CodecError> {
    check_exponent(k)?;
    let sizes = block_sizes(diffs.len(), k);
    let mut blocks = Vec::with_capacity(sizes.len());
    let mut cursor = 0usize;
    for size in sizes {
        blocks.push(diffs[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(PartitionedDiffs { blocks, ragged_tail_len: diffs.len() % (1usize << k) })
}

/// A bijection on `2^k` partition slots, stored zero-based.
///
/// `mapping[i]` is the input block that lands at output slot `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<u32>,
    k: u32,
}

impl Permutation {
    pub fn identity(k: u32) -> Self {
        Self { mapping: (0..1u32 << k).collect(), k }
    }

    pub fn from_mapping(mapping: Vec<u32>, k: u32) -> Result<Self, CodecError> {
        check_exponent(k)?;
        let n = 1usize << k;
        if mapping.len() != n {
            return Err(CodecError::CorruptPermutation {
                reason: format!("expected {n} entries, got {}", mapping.len()),
            });
        }
        let mut seen = vec![false; n];
        for &m in &mapping {
            if (m as usize) >= n || seen[m as usize] {
                return Err(CodecError::CorruptPermutation {
                    reason: format!("index {m} out of range or repeated"),
                });
            }
            seen[m as usize] = true;
        }
        Ok(Self { mapping, k })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn mapping(&self) -> &[u32] {
        &self.mapping
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

/// Uniform random bijection via Fisher-Yates from the given generator.
pub fn sample_permutation<R: Rng + ?Sized>(k: u32, rng: &mut R) -> Result<Permutation, CodecError> {
    check_exponent(k)?;
    let mut mapping: Vec<u32> = (0..1u32 << k).collect();
    for i in (1..mapping.len()).rev() {
        let j = rng.random_range(0..=i);
        mapping.swap(i, j);
    }
    Ok(Permutation { mapping, k })
}

/// Packs ρ as `2^k` zero-based indices of `k` bits each, MSB first.
pub fn encode_rho(rho: &Permutation) -> BitString {
    let mut bits = BitString::with_capacity(rho.k as usize * rho.len());
    for &m in &rho.mapping {
        bits.push_uint(u64::from(m), rho.k as usize);
    }
    bits
}

/// Inverse of [`encode_rho`]; rejects non-bijective encodings.
pub fn decode_rho(bits: &BitString, k: u32) -> Result<Permutation, CodecError> {
    check_exponent(k)?;
    let n = 1usize << k;
    let expected = k as usize * n;
    if bits.len() != expected {
        return Err(CodecError::CorruptPermutation {
            reason: format!("expected {expected} bits, got {}", bits.len()),
        });
    }
    let mapping = (0..n)
        .map(|i| bits.read_uint(i * k as usize, k as usize) as u32)
        .collect();
    Permutation::from_mapping(mapping, k)
}

/// Reorders partitions so output block `i` is input block `rho(i)`;
/// within-block order is preserved. Returns the flattened diff list.
pub fn shuffle(p: &PartitionedDiffs, rho: &Permutation) -> Result<Vec<u64>, CodecError> {
    if rho.len() != p.blocks.len() {
        return Err(CodecError::DimensionMismatch {
            perm_blocks: rho.len(),
            data_blocks: p.blocks.len(),
        });
    }
    let mut out = Vec::with_capacity(p.blocks.iter().map(Vec::len).sum());
    for &m in &rho.mapping {
        out.extend_from_slice(&p.blocks[m as usize]);
    }
    Ok(out)
}

/// Inverse of [`shuffle`] on the flattened list; block sizes are re-derived
/// from the total length and `rho.k()`.
pub fn unshuffle(shuffled: &[u64], rho: &Permutation) -> Result<Vec<u64>, CodecError> {
    let sizes = block_sizes(shuffled.len(), rho.k());
    if sizes.len() != rho.len() {
        return Err(CodecError::DimensionMismatch {
            perm_blocks: rho.len(),
            data_blocks: sizes.len(),
        });
    }
    let mut blocks: Vec<&[u64]> = vec![&[]; sizes.len()];
    let mut cursor = 0usize;
    for &m in &rho.mapping {
        let size = sizes[m as usize];
        blocks[m as usize] = &shuffled[cursor..cursor + size];
        cursor += size;
    }
    Ok(blocks.concat())
}

/// Packs diffs as fixed-width `b`-bit big-endian fields; total length `b * len`.
pub fn serialize_diffs(diffs: &[u64], b: u32) -> Result<BitString, CodecError> {
    check_width(b)?;
    let max = (1u64 << b) - 1;
    let mut bits = BitString::with_capacity(diffs.len() * b as usize);
    for (index, &d) in diffs.iter().enumerate() {
        if d > max {
            return Err(CodecError::ValueOverflow { index, value: d, width: b });
        }
        bits.push_uint(d, b as usize);
    }
    Ok(bits)
}

/// Inverse of [`serialize_diffs`].
pub fn deserialize_diffs(bits: &BitString, b: u32) -> Result<Vec<u64>, CodecError> {
    check_width(b)?;
    if bits.len() % b as usize != 0 {
        return Err(CodecError::LengthNotDivisible { len_bits: bits.len(), width: b });
    }
    Ok((0..bits.len() / b as usize)
        .map(|i| bits.read_uint(i * b as usize, b as usize))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn tag_array(tags: Vec<i64>) -> TimeTagArray {
        let duration_ps = tags.last().copied().unwrap_or(0);
        TimeTagArray { tags_ps: tags, duration_ps }
    }

    #[test]
    fn diff_transform_by_hand() {
        let tags = tag_array(vec![0, 5, 9]);
        let d = to_diffs(&tags, 1, 10).unwrap();
        assert_eq!(d.t1_ps, 0);
        assert_eq!(d.diffs, vec![5, 4]);
        assert_eq!(from_diffs(&d), tags);
    }

    #[test]
    fn single_tag_gives_empty_diffs() {
        let tags = tag_array(vec![17]);
        let d = to_diffs(&tags, 1, 8).unwrap();
        assert!(d.diffs.is_empty());
        assert_eq!(from_diffs(&d), tags);
    }

    #[test]
    fn overflow_reports_index_and_minimal_width() {
        let tags = tag_array(vec![0, 1024, 1030]);
        let err = to_diffs(&tags, 1, 10).unwrap_err();
        assert_eq!(err, CodecError::DiffOverflow { index: 0, width: 10, min_bits: 11 });
    }

    #[test]
    fn misaligned_gap_rejected() {
        let tags = tag_array(vec![0, 1500, 2500]);
        let err = to_diffs(&tags, 1000, 10).unwrap_err();
        assert_eq!(err, CodecError::MisalignedGap { index: 0, gap: 1500, tick_ps: 1000 });
    }

    /// At the reference detection rate (5.5e5 events/s, 1 ns grid) the mean
    /// gap is about 1.8 µs, so 10-bit diffs overflow almost immediately;
    /// the error must point at the first gap above 1023 ticks.
    #[test]
    fn overflow_at_realistic_detection_rate() {
        use crate::timebase::{detect, generate_pairs, ChannelModel, ClockModel};
        let stream = generate_pairs(550_000.0, 0.01, 0.0, 23).unwrap();
        let tags = detect(&stream, &ChannelModel::ideal(1000), &ClockModel::identity(), 24).unwrap();
        let first_oversized = tags
            .tags_ps
            .windows(2)
            .position(|w| w[1] - w[0] > 1023 * 1000)
            .expect("an oversized gap is statistically certain here");
        match to_diffs(&tags, 1000, 10) {
            Err(CodecError::DiffOverflow { index, width: 10, .. }) => {
                assert_eq!(index, first_oversized);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_many_random_arrays() {
        let mut rng = seeded(31);
        for _ in 0..10_000 {
            let n = rng.random_range(1..40usize);
            let tick = *[1i64, 2, 500, 1000].get(rng.random_range(0..4)).unwrap();
            let b = rng.random_range(4..16u32);
            let mut t = rng.random_range(0..1_000_000i64);
            let mut tags = vec![t];
            for _ in 1..n {
                t += rng.random_range(1..1u64 << b) as i64 * tick;
                tags.push(t);
            }
            let arr = tag_array(tags);
            let d = to_diffs(&arr, tick, b).unwrap();
            assert_eq!(from_diffs(&d), arr);
        }
    }

    #[test]
    fn partition_divisible_and_ragged() {
        let sixteen: Vec<u64> = (1..=16).collect();
        let p = partition(&sixteen, 2).unwrap();
        assert_eq!(p.blocks.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 4, 4]);
        assert_eq!(p.ragged_tail_len, 0);

        let seventeen: Vec<u64> = (1..=17).collect();
        let p = partition(&seventeen, 2).unwrap();
        assert_eq!(p.blocks.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 4, 4, 4]);
        assert_eq!(p.ragged_tail_len, 1);
        assert_eq!(p.blocks.concat(), seventeen);

        let p = partition(&sixteen, 0).unwrap();
        assert_eq!(p.blocks, vec![sixteen.clone()]);
    }

    /// The worked four-partition example: 16 samples, ρ = (3,1,4,2) one-based.
    #[test]
    fn shuffle_four_partition_example() {
        let diffs: Vec<u64> = (1..=16).collect();
        let p = partition(&diffs, 2).unwrap();
        let rho = Permutation::from_mapping(vec![2, 0, 3, 1], 2).unwrap();
        let shuffled = shuffle(&p, &rho).unwrap();
        let expected: Vec<u64> = [9, 10, 11, 12, 1, 2, 3, 4, 13, 14, 15, 16, 5, 6, 7, 8].into();
        assert_eq!(shuffled, expected);
        assert_eq!(unshuffle(&shuffled, &rho).unwrap(), diffs);
    }

    #[test]
    fn identity_shuffle_is_noop() {
        let diffs: Vec<u64> = (0..23).collect();
        let p = partition(&diffs, 3).unwrap();
        let rho = Permutation::identity(3);
        assert_eq!(shuffle(&p, &rho).unwrap(), diffs);
    }

    #[test]
    fn shuffle_dimension_mismatch() {
        let diffs: Vec<u64> = (0..8).collect();
        let p = partition(&diffs, 2).unwrap();
        let rho = Permutation::identity(3);
        assert!(matches!(shuffle(&p, &rho), Err(CodecError::DimensionMismatch { .. })));
    }

    #[test]
    fn unshuffle_inverts_on_random_instances() {
        let mut rng = seeded(77);
        for _ in 0..1000 {
            let k = rng.random_range(0..5u32);
            let len = rng.random_range(0..70usize);
            let diffs: Vec<u64> = (0..len).map(|_| rng.random_range(0..1000u64)).collect();
            let rho = sample_permutation(k, &mut rng).unwrap();
            let p = partition(&diffs, k).unwrap();
            let shuffled = shuffle(&p, &rho).unwrap();
            let mut sorted_in = diffs.clone();
            let mut sorted_out = shuffled.clone();
            sorted_in.sort_unstable();
            sorted_out.sort_unstable();
            assert_eq!(sorted_in, sorted_out, "shuffle must preserve the multiset");
            assert_eq!(unshuffle(&shuffled, &rho).unwrap(), diffs);
        }
    }

    #[test]
    fn rho_encoding_lengths_and_identity() {
        let rho = sample_permutation(6, &mut seeded(5)).unwrap();
        assert_eq!(encode_rho(&rho).len(), 384); // 6 * 64

        let id = Permutation::identity(1);
        assert_eq!(encode_rho(&id).to_bin_string(), "01");

        let zero = Permutation::identity(0);
        assert_eq!(encode_rho(&zero).len(), 0);
        assert_eq!(decode_rho(&BitString::new(), 0).unwrap(), zero);
    }

    #[test]
    fn rho_decode_roundtrip_and_rejection() {
        let mut rng = seeded(6);
        for _ in 0..1000 {
            let k = rng.random_range(0..7u32);
            let rho = sample_permutation(k, &mut rng).unwrap();
            assert_eq!(decode_rho(&encode_rho(&rho), k).unwrap(), rho);
        }
        // A repeated index is not a bijection.
        let mut bits = BitString::new();
        bits.push_uint(0, 2);
        bits.push_uint(0, 2);
        bits.push_uint(1, 2);
        bits.push_uint(2, 2);
        assert!(matches!(decode_rho(&bits, 2), Err(CodecError::CorruptPermutation { .. })));
    }

    #[test]
    fn serialize_forced_encoding() {
        let bits = serialize_diffs(&[5, 4], 4).unwrap();
        assert_eq!(bits.to_bin_string(), "01010100");
        assert_eq!(serialize_diffs(&(0..64).collect::<Vec<u64>>(), 10).unwrap().len(), 640);
        assert_eq!(deserialize_diffs(&bits, 4).unwrap(), vec![5, 4]);
    }

    #[test]
    fn serialize_rejects_overflow_and_bad_length() {
        assert!(matches!(
            serialize_diffs(&[16], 4),
            Err(CodecError::ValueOverflow { index: 0, value: 16, width: 4 })
        ));
        let bits = BitString::from_bin_str("10101");
        assert!(matches!(
            deserialize_diffs(&bits, 2),
            Err(CodecError::LengthNotDivisible { len_bits: 5, width: 2 })
        ));
    }
}
