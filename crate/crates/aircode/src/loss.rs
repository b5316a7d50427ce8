//! Training objective: cosine matching loss on labeled descriptor pairs plus
//! the two regularizers that shape the sparsity branch (per-key-point L1
//! sparsity and a hinge that keeps the per-object aggregate dense enough).

use crate::error::{Error, Result};
use crate::model::{encode_batch, EncodedBatch, ObjectInstance, ParamVars};
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Margin of the negative-pair hinge: negatives only contribute above this
/// cosine similarity.
pub const MATCH_MARGIN: f64 = 0.2;

/// Default margin of the dense hinge on the aggregated location vector.
pub const DENSE_MARGIN: f64 = 16.0;

/// Term multipliers for the total loss. All must be finite and non-negative;
/// a zero weight removes its term from the total entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub negative: f64,
    pub positive: f64,
    pub sparse: f64,
    pub dense: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            negative: 1.0,
            positive: 0.5,
            sparse: 0.1,
            dense: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("negative", self.negative),
            ("positive", self.positive),
            ("sparse", self.sparse),
            ("dense", self.dense),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::contract(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Same weights with the sparsity-shaping terms removed (ablation).
    pub fn without_sparse_dense(mut self) -> Self {
        self.sparse = 0.0;
        self.dense = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Labeled pair of objects inside one batch, by batch index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabel {
    pub a: usize,
    pub b: usize,
    pub polarity: Polarity,
}

impl PairLabel {
    pub fn positive(a: usize, b: usize) -> Self {
        PairLabel {
            a,
            b,
            polarity: Polarity::Positive,
        }
    }

    pub fn negative(a: usize, b: usize) -> Self {
        PairLabel {
            a,
            b,
            polarity: Polarity::Negative,
        }
    }
}

/// Sparsity loss of one object: L1 norm of each key-point's L2-normalized
/// location row, summed over rows. `location` must be the `[m x n_o]`
/// location branch output (element-wise non-negative).
pub fn sparse_loss(tape: &mut Tape, location: Var) -> Result<Var> {
    debug_assert!(tape.value(location).iter().all(|v| *v >= 0.0));
    let unit_rows = tape.l2_normalize_rows(location)?;
    tape.sum_all(unit_rows)
}

/// Dense hinge of one object: `max(0, margin - ||normalize(sum_i x_i)||_1)`
/// over the same `[m x n_o]` location rows.
pub fn dense_loss(tape: &mut Tape, location: Var, margin: f64) -> Result<Var> {
    debug_assert!(tape.value(location).iter().all(|v| *v >= 0.0));
    let summed = tape.sum_rows(location)?;
    let unit = tape.l2_normalize(summed)?;
    let l1 = tape.sum_all(unit)?;
    let neg = tape.scale(l1, -1.0)?;
    let shifted = tape.add_scalar(neg, margin)?;
    tape.relu(shifted)
}

/// Matching terms over unit descriptor rows: positives contribute `1 - S`,
/// negatives `max(0, S - margin)`. The two sums come back separately so the
/// caller can weight them independently.
pub fn matching_terms(
    tape: &mut Tape,
    descriptors: Var,
    pairs: &[PairLabel],
    margin: f64,
) -> Result<(Var, Var)> {
    let rows = tape.value(descriptors).rows();
    let mut positive: Option<Var> = None;
    let mut negative: Option<Var> = None;
    for pair in pairs {
        if pair.a >= rows || pair.b >= rows {
            return Err(Error::contract(format!(
                "pair ({}, {}) out of range for a batch of {rows} descriptors",
                pair.a, pair.b
            )));
        }
        let a = tape.slice_rows(descriptors, pair.a, 1)?;
        let b = tape.slice_rows(descriptors, pair.b, 1)?;
        let prod = tape.mul(a, b)?;
        let s = tape.sum_all(prod)?;
        match pair.polarity {
            Polarity::Positive => {
                let neg_s = tape.scale(s, -1.0)?;
                let term = tape.add_scalar(neg_s, 1.0)?;
                positive = Some(match positive {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            Polarity::Negative => {
                let shifted = tape.add_scalar(s, -margin)?;
                let term = tape.relu(shifted)?;
                negative = Some(match negative {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
        }
    }
    let zero = |tape: &mut Tape| tape.leaf(Tensor::scalar(0.0));
    Ok((
        positive.unwrap_or_else(|| zero(tape)),
        negative.unwrap_or_else(|| zero(tape)),
    ))
}

/// Margins used by the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossMargins {
    /// Negative-pair cosine hinge.
    pub matching: f64,
    /// Dense hinge on the aggregated location L1 norm.
    pub dense: f64,
}

impl Default for LossMargins {
    fn default() -> Self {
        LossMargins {
            matching: MATCH_MARGIN,
            dense: DENSE_MARGIN,
        }
    }
}

impl LossMargins {
    pub fn validate(&self) -> Result<()> {
        if !self.matching.is_finite() || !(0.0..1.0).contains(&self.matching) {
            return Err(Error::contract(format!(
                "matching margin must lie in [0, 1), got {}",
                self.matching
            )));
        }
        if !self.dense.is_finite() || self.dense < 0.0 {
            return Err(Error::contract(format!(
                "dense margin must be finite and non-negative, got {}",
                self.dense
            )));
        }
        Ok(())
    }
}

/// Loss graph over one encoded batch. Component values are always computed
/// for reporting; `total` only links terms whose weight is non-zero, so a
/// zero-weight term contributes nothing to gradients.
#[derive(Debug)]
pub struct LossGraph {
    pub batch: EncodedBatch,
    pub positive: Var,
    pub negative: Var,
    pub sparse: Var,
    pub dense: Var,
    pub total: Var,
}

/// Encodes `objects` and assembles the weighted total loss on `tape`.
///
/// The sparse and dense terms sum over the distinct objects of the batch
/// (not over pairs). With the dense-head ablation both terms are zero.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    objects: &[&ObjectInstance],
    pairs: &[PairLabel],
    weights: &LossWeights,
    margins: &LossMargins,
) -> Result<LossGraph> {
    weights.validate()?;
    margins.validate()?;
    let batch = encode_batch(tape, pv, objects)?;
    let (positive, negative) = matching_terms(tape, batch.descriptors, pairs, margins.matching)?;
    let (sparse, dense) = match batch.location {
        Some(location) => {
            let mut sparse_acc: Option<Var> = None;
            let mut dense_acc: Option<Var> = None;
            for r in &batch.ranges {
                let rows = tape.slice_rows(location, r.start, r.len())?;
                let s = sparse_loss(tape, rows)?;
                sparse_acc = Some(match sparse_acc {
                    Some(acc) => tape.add(acc, s)?,
                    None => s,
                });
                let d = dense_loss(tape, rows, margins.dense)?;
                dense_acc = Some(match dense_acc {
                    Some(acc) => tape.add(acc, d)?,
                    None => d,
                });
            }
            (
                sparse_acc.expect("batch is non-empty"),
                dense_acc.expect("batch is non-empty"),
            )
        }
        None => (
            tape.leaf(Tensor::scalar(0.0)),
            tape.leaf(Tensor::scalar(0.0)),
        ),
    };
    // Fixed accumulation order: negative, positive, sparse, dense.
    let mut total: Option<Var> = None;
    for (weight, term) in [
        (weights.negative, negative),
        (weights.positive, positive),
        (weights.sparse, sparse),
        (weights.dense, dense),
    ] {
        if weight == 0.0 {
            continue;
        }
        let scaled = tape.scale(term, weight)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = total.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)));
    Ok(LossGraph {
        batch,
        positive,
        negative,
        sparse,
        dense,
        total,
    })
}

/// Loss component values of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub positive: f64,
    pub negative: f64,
    pub sparse: f64,
    pub dense: f64,
    pub total: f64,
}

impl LossGraph {
    pub fn breakdown(&self, tape: &Tape) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            positive: tape.value(self.positive).item()?,
            negative: tape.value(self.negative).item()?,
            sparse: tape.value(self.sparse).item()?,
            dense: tape.value(self.dense).item()?,
            total: tape.value(self.total).item()?,
        })
    }
}
