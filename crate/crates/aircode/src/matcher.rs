//! Descriptor comparison, thresholded cross-frame matching, and
//! frame-level relocalization over a descriptor database.

use crate::error::{Error, Result};
use crate::model::ObjectDescriptor;
use std::collections::BTreeMap;

/// Dot product of two descriptors. Inputs carry unit (or exactly zero) norm
/// by the [`ObjectDescriptor`] invariant, so this is cosine similarity.
pub fn cosine_similarity(a: &ObjectDescriptor, b: &ObjectDescriptor) -> f64 {
    assert_eq!(a.len(), b.len(), "descriptor widths differ");
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// One stored object observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub object_id: String,
    pub frame_id: i64,
    pub descriptor: ObjectDescriptor,
}

/// A cross-frame pair whose similarity cleared the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMatch {
    pub index_a: usize,
    pub index_b: usize,
    pub similarity: f64,
}

/// All cross-frame object pairs with similarity strictly above `threshold`,
/// ordered by `(index_a, index_b)`.
///
/// No assignment problem is solved: one object may appear in several pairs.
/// `mutual_nearest` optionally keeps only pairs where each side is the
/// other's highest-scoring candidate (ties resolved to the lower index).
pub fn match_objects(
    frame_a: &[DescriptorRecord],
    frame_b: &[DescriptorRecord],
    threshold: f64,
    mutual_nearest: bool,
) -> Vec<ObjectMatch> {
    let mut sims = vec![0.0; frame_a.len() * frame_b.len()];
    for (i, ra) in frame_a.iter().enumerate() {
        for (j, rb) in frame_b.iter().enumerate() {
            sims[i * frame_b.len() + j] = cosine_similarity(&ra.descriptor, &rb.descriptor);
        }
    }
    let best_b_for = |i: usize| -> usize {
        let row = &sims[i * frame_b.len()..(i + 1) * frame_b.len()];
        row.iter()
            .enumerate()
            .max_by(|(ja, a), (jb, b)| a.total_cmp(b).then(jb.cmp(ja)))
            .map(|(j, _)| j)
            .unwrap()
    };
    let best_a_for = |j: usize| -> usize {
        (0..frame_a.len())
            .max_by(|&ia, &ib| {
                sims[ia * frame_b.len() + j]
                    .total_cmp(&sims[ib * frame_b.len() + j])
                    .then(ib.cmp(&ia))
            })
            .unwrap()
    };
    let mut out = Vec::new();
    for i in 0..frame_a.len() {
        for j in 0..frame_b.len() {
            let s = sims[i * frame_b.len() + j];
            if s <= threshold {
                continue;
            }
            if mutual_nearest && (best_b_for(i) != j || best_a_for(j) != i) {
                continue;
            }
            out.push(ObjectMatch {
                index_a: i,
                index_b: j,
                similarity: s,
            });
        }
    }
    out
}

/// Accumulated similarity of every cross-frame pair above `threshold`.
pub fn frame_similarity(
    frame_a: &[DescriptorRecord],
    frame_b: &[DescriptorRecord],
    threshold: f64,
) -> f64 {
    match_objects(frame_a, frame_b, threshold, false)
        .iter()
        .map(|m| m.similarity)
        .sum()
}

/// Append-only record store indexed by frame.
///
/// Invariants: `(object_id, frame_id)` pairs are unique and all descriptors
/// share one width.
#[derive(Debug, Clone, Default)]
pub struct DescriptorDatabase {
    frames: BTreeMap<i64, Vec<DescriptorRecord>>,
    width: Option<usize>,
    len: usize,
}

impl DescriptorDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: DescriptorRecord) -> Result<()> {
        if record.object_id.is_empty() {
            return Err(Error::contract("record object_id must be non-empty"));
        }
        match self.width {
            None => self.width = Some(record.descriptor.len()),
            Some(w) if w != record.descriptor.len() => {
                return Err(Error::contract(format!(
                    "descriptor width {} does not match database width {w}",
                    record.descriptor.len()
                )));
            }
            Some(_) => {}
        }
        let frame = self.frames.entry(record.frame_id).or_default();
        if frame.iter().any(|r| r.object_id == record.object_id) {
            return Err(Error::contract(format!(
                "duplicate record for object `{}` in frame {}",
                record.object_id, record.frame_id
            )));
        }
        frame.push(record);
        self.len += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> Option<usize> {
        self.width
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = i64> + '_ {
        self.frames.keys().copied()
    }

    /// Records of one frame; empty when the frame is absent.
    pub fn frame(&self, frame_id: i64) -> &[DescriptorRecord] {
        self.frames.get(&frame_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All records, frames ascending, insertion order within a frame.
    pub fn iter(&self) -> impl Iterator<Item = &DescriptorRecord> {
        self.frames.values().flatten()
    }
}

/// One ranked relocalization candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub frame_id: i64,
    pub score: f64,
}

/// Ranks database frames by [`frame_similarity`] to the query, score
/// descending with ties broken by ascending frame id, and keeps `top_n`.
pub fn relocalize(
    query: &[DescriptorRecord],
    db: &DescriptorDatabase,
    threshold: f64,
    top_n: usize,
) -> Result<Vec<FrameScore>> {
    if db.is_empty() {
        return Err(Error::contract("descriptor database is empty"));
    }
    let mut scores: Vec<FrameScore> = db
        .frames
        .iter()
        .map(|(&frame_id, records)| FrameScore {
            frame_id,
            score: frame_similarity(query, records, threshold),
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.frame_id.cmp(&b.frame_id)));
    scores.truncate(top_n);
    Ok(scores)
}
