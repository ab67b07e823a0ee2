//! Stripe planning and reassembly for parallel transfers.
//!
//! Transfers larger than the minimum block are split across up to
//! `max_streams` balanced segments, each at least `min_block` bytes.

use crate::config::{MAX_STREAMS, MIN_BLOCK};
use crate::error::{Result, XufsError};
use crate::wire::Extent;

/// One stripe of a transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub stream_index: u32,
    pub offset: u64,
    pub length: u64,
}

/// Decomposition of a transfer into contiguous, non-overlapping segments
/// covering `[0, total_length)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripePlan {
    pub total_length: u64,
    pub segments: Vec<Segment>,
}

impl StripePlan {
    pub fn stream_count(&self) -> usize {
        self.segments.len()
    }
}

/// Plans a striped transfer: `max(1, min(max_streams, total / min_block))`
/// segments whose lengths differ by at most one byte.
pub fn plan_stripes(total_length: u64, max_streams: u32, min_block: u64) -> StripePlan {
    assert!(max_streams >= 1, "max_streams must be positive");
    assert!(min_block >= 1, "min_block must be positive");
    let count = (total_length / min_block).clamp(1, max_streams as u64);
    let base = total_length / count;
    let remainder = total_length % count;
    let mut segments = Vec::with_capacity(count as usize);
    let mut offset = 0u64;
    for i in 0..count {
        let length = base + u64::from(i < remainder);
        segments.push(Segment { stream_index: i as u32, offset, length });
        offset += length;
    }
    debug_assert_eq!(offset, total_length);
    StripePlan { total_length, segments }
}

/// Plans with the protocol defaults (12 streams, 64 KiB minimum block).
pub fn plan_stripes_default(total_length: u64) -> StripePlan {
    plan_stripes(total_length, MAX_STREAMS, MIN_BLOCK)
}

/// Tracks which byte ranges of a transfer have arrived, independent of
/// arrival order. Rejects overlap immediately; gaps surface at the end.
#[derive(Debug, Default)]
pub struct Coverage {
    /// Disjoint received ranges as (start, end), kept sorted and merged.
    ranges: Vec<(u64, u64)>,
}

impl Coverage {
    pub fn new() -> Self {
        Coverage::default()
    }

    /// Records `[offset, offset+len)`. Zero-length ranges are ignored.
    pub fn add(&mut self, offset: u64, len: u64) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        let (start, end) = (offset, offset + len);
        let idx = self.ranges.partition_point(|&(s, _)| s < start);
        if idx > 0 && self.ranges[idx - 1].1 > start {
            return Err(XufsError::IncompleteTransfer(format!(
                "overlapping segment at offset {start}"
            )));
        }
        if idx < self.ranges.len() && self.ranges[idx].0 < end {
            return Err(XufsError::IncompleteTransfer(format!(
                "overlapping segment at offset {start}"
            )));
        }
        self.ranges.insert(idx, (start, end));
        // Merge with adjacent ranges so the vector stays small.
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(self.ranges.len());
        for &(s, e) in &self.ranges {
            match merged.last_mut() {
                Some(last) if last.1 == s => last.1 = e,
                _ => merged.push((s, e)),
            }
        }
        self.ranges = merged;
        Ok(())
    }

    /// True iff exactly `[0, total)` has been received.
    pub fn complete(&self, total: u64) -> bool {
        if total == 0 {
            return self.ranges.is_empty();
        }
        self.ranges == [(0, total)]
    }

    pub fn check_complete(&self, total: u64) -> Result<()> {
        if self.complete(total) {
            Ok(())
        } else {
            Err(XufsError::IncompleteTransfer(format!(
                "coverage {:?} does not equal [0, {total})",
                self.ranges
            )))
        }
    }
}

/// Reassembles segments into the original byte sequence. Succeeds iff the
/// segments are pairwise non-overlapping and exactly cover
/// `[0, total_length)`; arrival order is irrelevant.
pub fn reassemble(segments: &[Extent], total_length: u64) -> Result<Vec<u8>> {
    let mut coverage = Coverage::new();
    for seg in segments {
        coverage.add(seg.offset, seg.data.len() as u64)?;
    }
    coverage.check_complete(total_length)?;
    let mut out = vec![0u8; total_length as usize];
    for seg in segments {
        out[seg.offset as usize..seg.offset as usize + seg.data.len()]
            .copy_from_slice(&seg.data);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent soundness check used to freeze the derived examples:
    /// exact coverage, stream bound, minimum-block bound, balance.
    fn check_plan(total: u64, plan: &StripePlan) {
        assert_eq!(plan.total_length, total);
        assert!(!plan.segments.is_empty());
        assert!(plan.segments.len() <= 12, "stream count bound");
        let mut expected_offset = 0u64;
        for (i, seg) in plan.segments.iter().enumerate() {
            assert_eq!(seg.stream_index, i as u32);
            assert_eq!(seg.offset, expected_offset, "contiguity");
            expected_offset += seg.length;
        }
        assert_eq!(expected_offset, total, "exact coverage");
        if total > 65536 {
            for seg in &plan.segments {
                assert!(seg.length >= 65536, "segment below minimum block");
            }
        } else {
            assert_eq!(plan.segments.len(), 1, "at or below threshold: one segment");
        }
        let min = plan.segments.iter().map(|s| s.length).min().unwrap();
        let max = plan.segments.iter().map(|s| s.length).max().unwrap();
        assert!(max - min <= 1, "balanced split");
    }

    #[test]
    fn boundary_64k_is_single_segment() {
        let plan = plan_stripes_default(65536);
        check_plan(65536, &plan);
        assert_eq!(plan.segments.len(), 1);
        assert_eq!(plan.segments[0], Segment { stream_index: 0, offset: 0, length: 65536 });
    }

    #[test]
    fn double_block_splits_in_two() {
        let plan = plan_stripes_default(131072);
        check_plan(131072, &plan);
        assert_eq!(plan.segments.len(), 2);
        assert!(plan.segments.iter().all(|s| s.length == 65536));
    }

    #[test]
    fn one_mib_uses_twelve_balanced_segments() {
        let plan = plan_stripes_default(1_048_576);
        check_plan(1_048_576, &plan);
        assert_eq!(plan.segments.len(), 12);
        // 1048576 = 12 * 87381 + 4: four segments of 87382 and eight of 87381.
        let longs = plan.segments.iter().filter(|s| s.length == 87382).count();
        let shorts = plan.segments.iter().filter(|s| s.length == 87381).count();
        assert_eq!((longs, shorts), (4, 8));
    }

    #[test]
    fn small_transfer_single_segment() {
        let plan = plan_stripes_default(1000);
        check_plan(1000, &plan);
        assert_eq!(plan.segments.len(), 1);
        assert_eq!(plan.segments[0].length, 1000);
    }

    #[test]
    fn zero_length_yields_one_empty_segment() {
        let plan = plan_stripes_default(0);
        assert_eq!(plan.segments.len(), 1);
        assert_eq!(plan.segments[0], Segment { stream_index: 0, offset: 0, length: 0 });
    }

    #[test]
    fn soundness_over_boundary_lengths() {
        // Includes 2^30: planned only, nothing allocated.
        for n in [0u64, 1, 65535, 65536, 65537, 1 << 20, 1 << 30] {
            let plan = plan_stripes_default(n);
            if n > 0 {
                check_plan(n, &plan);
            }
        }
    }

    #[test]
    fn reassemble_in_order() {
        let segs = vec![Extent::new(0, b"ab".to_vec()), Extent::new(2, b"cd".to_vec())];
        assert_eq!(reassemble(&segs, 4).unwrap(), b"abcd");
    }

    #[test]
    fn reassemble_order_independent() {
        let segs = vec![Extent::new(2, b"cd".to_vec()), Extent::new(0, b"ab".to_vec())];
        assert_eq!(reassemble(&segs, 4).unwrap(), b"abcd");
    }

    #[test]
    fn reassemble_gap_rejected() {
        let segs = vec![Extent::new(0, b"ab".to_vec())];
        match reassemble(&segs, 4) {
            Err(XufsError::IncompleteTransfer(_)) => {}
            other => panic!("expected IncompleteTransfer, got {other:?}"),
        }
    }

    #[test]
    fn reassemble_overlap_rejected() {
        let segs = vec![Extent::new(0, b"abc".to_vec()), Extent::new(2, b"cd".to_vec())];
        assert!(matches!(reassemble(&segs, 4), Err(XufsError::IncompleteTransfer(_))));
    }

    #[test]
    fn reassemble_empty_total_zero() {
        assert_eq!(reassemble(&[], 0).unwrap(), Vec::<u8>::new());
        assert!(reassemble(&[], 1).is_err());
    }
}
