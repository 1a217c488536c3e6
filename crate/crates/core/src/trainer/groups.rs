//! Grouping segments of one interview and sampling in-audio negatives.

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Index of a training segment in the trainer's segment table.
pub type SegmentRef = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingGroup {
    pub group_id: usize,
    /// `None` when members were pooled across interviews.
    pub interview_id: Option<String>,
    pub segments: Vec<SegmentRef>,
    /// Set when the interview had fewer than `n` segments.
    pub undersized: bool,
}

/// Shuffles `segments` and cuts them into groups of `n`, `augmentation` times.
///
/// When `n` does not divide the segment count, each pass adds one more group
/// made of the last `n` segments of that pass's shuffle so every segment is
/// covered.
pub fn build_groups(
    interview_id: Option<&str>,
    segments: &[SegmentRef],
    n: usize,
    augmentation: usize,
    rng: &mut Rng,
) -> Result<Vec<TrainingGroup>> {
    if n < 2 {
        return Err(Error::Argument(format!("group size must be ≥ 2, got {n}")));
    }
    if augmentation == 0 {
        return Err(Error::Argument("augmentation count must be ≥ 1".into()));
    }
    let mut groups = Vec::new();
    let push = |segs: Vec<SegmentRef>, undersized: bool, groups: &mut Vec<TrainingGroup>| {
        groups.push(TrainingGroup {
            group_id: groups.len(),
            interview_id: interview_id.map(str::to_owned),
            segments: segs,
            undersized,
        })
    };
    for _ in 0..augmentation {
        let mut order = segments.to_vec();
        order.shuffle(rng);
        if order.len() < n {
            if !order.is_empty() {
                push(order, true, &mut groups);
            }
            continue;
        }
        for g in order.chunks_exact(n) {
            push(g.to_vec(), false, &mut groups);
        }
        if !order.len().is_multiple_of(n) {
            push(order[order.len() - n..].to_vec(), false, &mut groups);
        }
    }
    Ok(groups)
}

/// One batch member: a segment and the group it was drawn with.
#[derive(Debug, Clone, Copy)]
pub struct BatchEntry<'a> {
    pub segment: SegmentRef,
    pub group: &'a TrainingGroup,
}

/// A negative: chunk `chunk` of segment `segment`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NegativeRef {
    pub segment: SegmentRef,
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeAssignment {
    /// Negatives per chunk, the same for every chunk of the batch.
    pub k: usize,
    /// Per-entry potential-pool sizes `k_x`.
    pub pool_sizes: Vec<usize>,
    /// `[batch entry][chunk] → K negatives`.
    pub negatives: Vec<Vec<Vec<NegativeRef>>>,
}

/// Samples `K = min_x k_x` distinct negatives for every chunk in the batch,
/// where `k_x` counts the chunks of the other segments in `x`'s group.
pub fn assign_negatives(
    batch: &[BatchEntry<'_>],
    chunk_count: impl Fn(SegmentRef) -> usize,
    rng: &mut Rng,
) -> Result<NegativeAssignment> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let pools: Vec<Vec<NegativeRef>> = batch
        .iter()
        .map(|e| {
            e.group
                .segments
                .iter()
                .filter(|&&s| s != e.segment)
                .flat_map(|&s| (0..chunk_count(s)).map(move |c| NegativeRef { segment: s, chunk: c }))
                .collect()
        })
        .collect();
    let pool_sizes: Vec<usize> = pools.iter().map(Vec::len).collect();
    let k = pool_sizes.iter().copied().min().unwrap_or(0);
    if k == 0 {
        return Err(Error::Config(
            "a batch segment has no potential negatives in its group".into(),
        ));
    }
    let negatives = batch
        .iter()
        .zip(&pools)
        .map(|(e, pool)| {
            (0..chunk_count(e.segment))
                .map(|_| {
                    index::sample(rng, pool.len(), k)
                        .into_iter()
                        .map(|i| pool[i])
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(NegativeAssignment {
        k,
        pool_sizes,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use std::collections::{BTreeMap, HashSet};

    fn counts(groups: &[TrainingGroup]) -> BTreeMap<SegmentRef, usize> {
        let mut m = BTreeMap::new();
        for g in groups {
            for &s in &g.segments {
                *m.entry(s).or_default() += 1;
            }
        }
        m
    }

    #[test]
    fn eight_by_four() {
        let segs: Vec<_> = (0..8).collect();
        let g = build_groups(Some("I"), &segs, 4, 1, &mut substream(1, "g")).unwrap();
        assert_eq!(g.len(), 2);
        assert!(counts(&g).values().all(|&c| c == 1));
        assert_eq!(counts(&g).len(), 8);
    }

    #[test]
    fn nine_by_four_wraps() {
        let segs: Vec<_> = (0..9).collect();
        let mut rng = substream(2, "g");
        let mut replay = rng.clone();
        let g = build_groups(Some("I"), &segs, 4, 1, &mut rng).unwrap();
        // replay the same shuffle by hand and check the wrap rule
        let mut order = segs.clone();
        order.shuffle(&mut replay);
        assert_eq!(g.len(), 3);
        assert_eq!(g[0].segments, order[0..4]);
        assert_eq!(g[1].segments, order[4..8]);
        assert_eq!(g[2].segments, order[5..9]);
        assert_eq!(counts(&g).len(), 9);
    }

    #[test]
    fn augmentation_doubles_multiplicity() {
        let segs: Vec<_> = (0..8).collect();
        let g = build_groups(Some("I"), &segs, 4, 2, &mut substream(3, "g")).unwrap();
        assert_eq!(g.len(), 4);
        assert!(counts(&g).values().all(|&c| c == 2));
    }

    #[test]
    fn undersized_and_invalid() {
        let g = build_groups(Some("I"), &[1, 2], 4, 1, &mut substream(3, "g")).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g[0].undersized);
        assert!(build_groups(Some("I"), &[1, 2], 1, 1, &mut substream(3, "g")).is_err());
    }

    #[test]
    fn two_segment_counting_oracle() {
        let group = TrainingGroup {
            group_id: 0,
            interview_id: Some("I".into()),
            segments: vec![0, 1],
            undersized: false,
        };
        let chunks = [3usize, 5];
        let batch = [
            BatchEntry { segment: 0, group: &group },
            BatchEntry { segment: 1, group: &group },
        ];
        let a = assign_negatives(&batch, |s| chunks[s], &mut substream(4, "n")).unwrap();
        assert_eq!(a.pool_sizes, vec![5, 3]);
        assert_eq!(a.k, 3);
        for (e, per_chunk) in batch.iter().zip(&a.negatives) {
            assert_eq!(per_chunk.len(), chunks[e.segment]);
            for negs in per_chunk {
                assert_eq!(negs.len(), 3);
                assert_eq!(negs.iter().collect::<HashSet<_>>().len(), 3);
                assert!(negs.iter().all(|n| n.segment != e.segment));
            }
        }
    }

    #[test]
    fn empty_partner_is_config_error() {
        let group = TrainingGroup {
            group_id: 0,
            interview_id: None,
            segments: vec![0, 1],
            undersized: false,
        };
        let batch = [BatchEntry { segment: 0, group: &group }];
        let err = assign_negatives(&batch, |s| if s == 0 { 4 } else { 0 }, &mut substream(5, "n"));
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
