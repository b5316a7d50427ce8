//! Metrics and analyses: precision/recall/F1, precision-recall curves,
//! frame-gap matching evaluation, recall@N, sparsity statistics, location
//! usage, and a per-stage runtime benchmark.

use crate::error::{Error, Result};
use crate::matcher::{cosine_similarity, relocalize, DescriptorRecord, DescriptorDatabase};
use crate::model::{
    bind_params, encode_batch, encode_object_timed, ModelParams, ObjectDescriptor, ObjectInstance,
};
use crate::synth::{generate_object, SynthConfig};
use crate::tensor::{Tape, EPS_L2};
use serde::Serialize;

/// Precision, recall, and F1 over a set of match decisions.
///
/// `degenerate` flags any zero denominator (no predicted positives, or
/// precision + recall both zero), in which case the affected value is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

/// Metrics from raw confusion counts. Errors when there is no ground-truth
/// positive (`tp + fn_ == 0`), since recall is then meaningless.
pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Result<PrfReport> {
    if tp + fn_ == 0 {
        return Err(Error::contract(
            "precision/recall need at least one ground-truth positive",
        ));
    }
    let mut degenerate = false;
    let precision = if tp + fp == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = tp as f64 / (tp + fn_) as f64;
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrfReport {
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// Metrics over `(predicted, actual)` decision pairs.
pub fn precision_recall_f1(decisions: &[(bool, bool)]) -> Result<PrfReport> {
    let tp = decisions.iter().filter(|(p, a)| *p && *a).count();
    let fp = decisions.iter().filter(|(p, a)| *p && !*a).count();
    let fn_ = decisions.iter().filter(|(p, a)| !*p && *a).count();
    prf_from_counts(tp, fp, fn_)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision-recall curve over a threshold sweep, plus its area.
///
/// Points are ordered by descending threshold, so recall is non-decreasing
/// along the list. The first point is a synthetic endpoint at recall 0
/// carrying the highest-threshold precision; the area integrates the curve
/// over recall with the trapezoid rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub area: f64,
}

/// Sweeps every distinct score as a decision threshold (predict positive at
/// `score >= threshold`). Errors when only one class is present or any score
/// is not finite.
pub fn pr_curve(scored: &[(f64, bool)]) -> Result<PrCurve> {
    let total_pos = scored.iter().filter(|(_, label)| *label).count();
    if total_pos == 0 || total_pos == scored.len() {
        return Err(Error::contract(format!(
            "precision-recall curve needs both classes, got {total_pos} positives out of {}",
            scored.len()
        )));
    }
    if scored.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::contract("scores must be finite"));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scored[order[i]].0;
        // Consume the whole tie group so counts reflect `score >= threshold`.
        while i < order.len() && scored[order[i]].0 == threshold {
            if scored[order[i]].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / total_pos as f64,
        });
    }
    let first = points[0];
    points.insert(
        0,
        PrPoint {
            threshold: f64::INFINITY,
            precision: first.precision,
            recall: 0.0,
        },
    );
    let mut area = 0.0;
    for pair in points.windows(2) {
        area += (pair[1].recall - pair[0].recall) * (pair[0].precision + pair[1].precision) / 2.0;
    }
    Ok(PrCurve { points, area })
}

/// Matching quality of one frame gap: metrics at the decision threshold plus
/// the full threshold-swept curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub gap: usize,
    pub threshold: f64,
    pub pairs_evaluated: usize,
    pub prf: PrfReport,
    pub curve: PrCurve,
}

fn encode_frames(
    params: &ModelParams,
    frames: &[Vec<ObjectInstance>],
) -> Result<Vec<Vec<DescriptorRecord>>> {
    frames
        .iter()
        .map(|frame| {
            if frame.is_empty() {
                return Ok(Vec::new());
            }
            let descs = crate::model::encode_objects(params, frame)?;
            Ok(frame
                .iter()
                .zip(descs)
                .map(|(obj, descriptor)| DescriptorRecord {
                    object_id: obj.object_id().to_string(),
                    frame_id: obj.frame_id(),
                    descriptor,
                })
                .collect())
        })
        .collect()
}

/// Evaluates matching across every frame pair `(t, t + gap)` of a sequence.
/// Ground truth is a shared object id; predictions are `similarity >
/// threshold`, mirroring the matcher.
pub fn frame_gap_eval(
    params: &ModelParams,
    frames: &[Vec<ObjectInstance>],
    gap: usize,
    threshold: f64,
) -> Result<MatchReport> {
    if gap == 0 {
        return Err(Error::contract("frame gap must be at least 1"));
    }
    if frames.len() <= gap {
        return Err(Error::contract(format!(
            "sequence of {} frames has no pair at gap {gap}",
            frames.len()
        )));
    }
    let encoded = encode_frames(params, frames)?;
    let mut scored = Vec::new();
    let mut decisions = Vec::new();
    for t in 0..frames.len() - gap {
        let (a, b) = (&encoded[t], &encoded[t + gap]);
        for ra in a {
            for rb in b {
                let s = cosine_similarity(&ra.descriptor, &rb.descriptor);
                let actual = ra.object_id == rb.object_id;
                scored.push((s, actual));
                decisions.push((s > threshold, actual));
            }
        }
    }
    Ok(MatchReport {
        gap,
        threshold,
        pairs_evaluated: scored.len(),
        prf: precision_recall_f1(&decisions)?,
        curve: pr_curve(&scored)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecallPoint {
    pub n: usize,
    pub recall: f64,
}

/// Fraction of queries whose true frame lands in the top-N relocalization
/// ranking, for each N. Every query's true frame must exist in the database.
pub fn recall_at_n(
    queries: &[(Vec<DescriptorRecord>, i64)],
    db: &DescriptorDatabase,
    threshold: f64,
    n_values: &[usize],
) -> Result<Vec<RecallPoint>> {
    if queries.is_empty() {
        return Err(Error::contract("recall@N needs at least one query"));
    }
    let total_frames = db.frame_ids().count();
    let mut ranks = Vec::with_capacity(queries.len());
    for (records, true_frame) in queries {
        if db.frame(*true_frame).is_empty() {
            return Err(Error::contract(format!(
                "query's true frame {true_frame} is not in the database"
            )));
        }
        let ranked = relocalize(records, db, threshold, total_frames)?;
        let rank = ranked
            .iter()
            .position(|f| f.frame_id == *true_frame)
            .expect("true frame present in full ranking");
        ranks.push(rank);
    }
    Ok(n_values
        .iter()
        .map(|&n| RecallPoint {
            n,
            recall: ranks.iter().filter(|&&r| r < n).count() as f64 / ranks.len() as f64,
        })
        .collect())
}

/// Non-zero structure of the sparsity head over a set of objects.
///
/// `per_keypoint` counts strictly positive entries of each key-point's
/// location feature; `per_object` counts non-zeros of the aggregated
/// pre-projection vector. Histograms bin those counts with `bin_width`-wide
/// bins covering `[0, n_o]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityReport {
    pub n_o: usize,
    pub bin_width: usize,
    pub per_keypoint: Vec<usize>,
    pub per_object: Vec<usize>,
    pub keypoint_hist: Vec<usize>,
    pub object_hist: Vec<usize>,
}

impl SparsityReport {
    pub fn mean_keypoint_nonzeros(&self) -> f64 {
        mean_usize(&self.per_keypoint)
    }

    pub fn mean_object_nonzeros(&self) -> f64 {
        mean_usize(&self.per_object)
    }
}

fn mean_usize(v: &[usize]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

const SPARSITY_BIN_WIDTH: usize = 64;
const STATS_CHUNK: usize = 32;

fn histogram(counts: &[usize], n_o: usize, bin_width: usize) -> Vec<usize> {
    let bins = n_o.div_ceil(bin_width).max(1);
    let mut hist = vec![0usize; bins];
    for &c in counts {
        hist[(c / bin_width).min(bins - 1)] += 1;
    }
    hist
}

/// Counts non-zero structure of the dual-branch head; errors for the
/// dense-head ablation, which has no location features.
pub fn sparsity_stats(params: &ModelParams, objects: &[ObjectInstance]) -> Result<SparsityReport> {
    if objects.is_empty() {
        return Err(Error::contract("sparsity statistics need at least one object"));
    }
    let n_o = params.dims().n_o;
    let mut per_keypoint = Vec::new();
    let mut per_object = Vec::new();
    for chunk in objects.chunks(STATS_CHUNK) {
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, params);
        let refs: Vec<&ObjectInstance> = chunk.iter().collect();
        let batch = encode_batch(&mut tape, &pv, &refs)?;
        let location = batch.location.ok_or_else(|| {
            Error::contract("sparsity statistics need the dual-branch head, model has the dense ablation head")
        })?;
        let loc = tape.value(location);
        let (rows, cols) = loc.dims2()?;
        debug_assert_eq!(cols, n_o);
        for r in 0..rows {
            let row = &loc.data()[r * cols..(r + 1) * cols];
            per_keypoint.push(row.iter().filter(|&&v| v > 0.0).count());
        }
        let pre = tape.value(batch.pre_projection);
        let (objs, cols) = pre.dims2()?;
        for r in 0..objs {
            let row = &pre.data()[r * cols..(r + 1) * cols];
            per_object.push(row.iter().filter(|&&v| v != 0.0).count());
        }
    }
    Ok(SparsityReport {
        n_o,
        bin_width: SPARSITY_BIN_WIDTH,
        keypoint_hist: histogram(&per_keypoint, n_o, SPARSITY_BIN_WIDTH),
        object_hist: histogram(&per_object, n_o, SPARSITY_BIN_WIDTH),
        per_keypoint,
        per_object,
    })
}

/// Fraction of descriptor positions non-zero in at least one object's
/// pre-projection aggregate. Works for both head variants.
pub fn usage_rate(params: &ModelParams, objects: &[ObjectInstance]) -> Result<f64> {
    if objects.is_empty() {
        return Err(Error::contract("usage rate needs at least one object"));
    }
    let n_o = params.dims().n_o;
    let mut used = vec![false; n_o];
    for chunk in objects.chunks(STATS_CHUNK) {
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, params);
        let refs: Vec<&ObjectInstance> = chunk.iter().collect();
        let batch = encode_batch(&mut tape, &pv, &refs)?;
        let pre = tape.value(batch.pre_projection);
        let (rows, cols) = pre.dims2()?;
        for r in 0..rows {
            for (flag, &v) in used.iter_mut().zip(&pre.data()[r * cols..(r + 1) * cols]) {
                *flag |= v != 0.0;
            }
        }
    }
    Ok(used.iter().filter(|&&u| u).count() as f64 / n_o as f64)
}

/// Median per-stage wall-clock times for one object size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTiming {
    pub keypoints: usize,
    pub node_ms: f64,
    pub graph_ms: f64,
    pub head_ms: f64,
    pub total_ms: f64,
}

fn median_ms(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    }
}

/// Times the encoder stages on synthetic objects with exactly `m` key-points
/// for each `m` in `object_sizes`; medians over `repeats` runs.
pub fn runtime_bench(
    params: &ModelParams,
    object_sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<StageTiming>> {
    if repeats == 0 {
        return Err(Error::contract("runtime bench needs at least one repeat"));
    }
    let mut out = Vec::with_capacity(object_sizes.len());
    for (i, &m) in object_sizes.iter().enumerate() {
        if m == 0 {
            return Err(Error::contract("object size must be at least 1 key-point"));
        }
        let cfg = SynthConfig {
            descriptor_width: params.dims().n_p,
            min_keypoints: m,
            max_keypoints: m,
            ..SynthConfig::default()
        };
        let object = generate_object(&cfg, crate::seed::derive2(seed, 0x6265, i as u64))?;
        let mut node = Vec::with_capacity(repeats);
        let mut graph = Vec::with_capacity(repeats);
        let mut head = Vec::with_capacity(repeats);
        let mut total = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let (_, t) = encode_object_timed(params, &object)?;
            node.push(t.node.as_secs_f64() * 1e3);
            graph.push(t.graph.as_secs_f64() * 1e3);
            head.push(t.head.as_secs_f64() * 1e3);
            total.push(t.total.as_secs_f64() * 1e3);
        }
        out.push(StageTiming {
            keypoints: m,
            node_ms: median_ms(&mut node),
            graph_ms: median_ms(&mut graph),
            head_ms: median_ms(&mut head),
            total_ms: median_ms(&mut total),
        });
    }
    Ok(out)
}

/// Baseline descriptor: normalized mean of the raw key-point descriptors,
/// ignoring structure entirely.
pub fn mean_pool_descriptor(object: &ObjectInstance) -> Result<ObjectDescriptor> {
    let width = object.descriptor_width();
    let mut mean = vec![0.0; width];
    for kp in object.keypoints() {
        for (m, d) in mean.iter_mut().zip(&kp.descriptor) {
            *m += d;
        }
    }
    let inv = 1.0 / object.keypoints().len() as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(EPS_L2);
    for m in mean.iter_mut() {
        *m /= norm;
    }
    ObjectDescriptor::new(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadKind, KeyPoint, ModelDims};
    use crate::synth::{gen_frame, reobserve_frame, AugmentationParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn compact_params(seed: u64) -> ModelParams {
        ModelParams::init(ModelDims::compact(), HeadKind::Sparse, seed).unwrap()
    }

    fn compact_synth() -> SynthConfig {
        SynthConfig {
            descriptor_width: ModelDims::compact().n_p,
            min_keypoints: 3,
            max_keypoints: 6,
            common_atoms: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn prf_hand_cases() {
        let all_correct = precision_recall_f1(&[(true, true), (false, false)]).unwrap();
        assert_eq!(
            (all_correct.precision, all_correct.recall, all_correct.f1),
            (1.0, 1.0, 1.0)
        );
        assert!(!all_correct.degenerate);
        let halves = prf_from_counts(1, 1, 1).unwrap();
        assert_eq!((halves.precision, halves.recall, halves.f1), (0.5, 0.5, 0.5));
        let none_predicted = precision_recall_f1(&[(false, true), (false, false)]).unwrap();
        assert_eq!(none_predicted.precision, 0.0);
        assert_eq!(none_predicted.recall, 0.0);
        assert_eq!(none_predicted.f1, 0.0);
        assert!(none_predicted.degenerate);
        assert!(precision_recall_f1(&[(true, false), (false, false)]).is_err());
    }

    #[test]
    fn prf_matches_counts_exactly() {
        let decisions = [
            (true, true),
            (true, false),
            (false, true),
            (true, true),
            (false, false),
        ];
        let a = precision_recall_f1(&decisions).unwrap();
        let b = prf_from_counts(2, 1, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pr_curve_four_pair_hand_case() {
        // Thresholds 0.9/0.8/0.7/0.1 give precisions 1, 1/2, 2/3, 1/2 at
        // recalls 1/2, 1/2, 1, 1; with the recall-0 endpoint the trapezoid
        // area is 19/24.
        let scored = [(0.9, true), (0.8, false), (0.7, true), (0.1, false)];
        let curve = pr_curve(&scored).unwrap();
        assert_eq!(curve.points.len(), 5);
        let expect = [
            (f64::INFINITY, 1.0, 0.0),
            (0.9, 1.0, 0.5),
            (0.8, 0.5, 0.5),
            (0.7, 2.0 / 3.0, 1.0),
            (0.1, 0.5, 1.0),
        ];
        for (p, (t, prec, rec)) in curve.points.iter().zip(expect) {
            assert_eq!(p.threshold, t);
            assert!((p.precision - prec).abs() < 1e-15);
            assert!((p.recall - rec).abs() < 1e-15);
        }
        assert!((curve.area - 19.0 / 24.0).abs() < 1e-12, "{}", curve.area);
    }

    #[test]
    fn pr_curve_perfect_separation_has_unit_area() {
        let scored = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        let curve = pr_curve(&scored).unwrap();
        assert!((curve.area - 1.0).abs() < 1e-12);
        for p in &curve.points {
            assert!(p.recall >= 0.0 && p.recall <= 1.0);
        }
    }

    #[test]
    fn pr_curve_random_scores_near_half_area() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let scored: Vec<(f64, bool)> = (0..10_000)
            .map(|i| (rng.random_range(0.0..1.0), i % 2 == 0))
            .collect();
        let curve = pr_curve(&scored).unwrap();
        assert!((curve.area - 0.5).abs() < 0.05, "{}", curve.area);
    }

    #[test]
    fn pr_curve_rejects_single_class_and_non_finite() {
        assert!(pr_curve(&[(0.5, true), (0.4, true)]).is_err());
        assert!(pr_curve(&[(0.5, false), (0.4, false)]).is_err());
        assert!(pr_curve(&[(f64::NAN, true), (0.4, false)]).is_err());
    }

    #[test]
    fn pr_curve_recall_monotone_and_area_invariant_under_monotone_transform() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let scored: Vec<(f64, bool)> = (0..200)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0) < 0.4))
            .collect();
        let curve = pr_curve(&scored).unwrap();
        for pair in curve.points.windows(2) {
            assert!(pair[1].recall >= pair[0].recall);
            assert!(pair[1].threshold <= pair[0].threshold);
        }
        assert!(curve.area >= 0.0 && curve.area <= 1.0);
        let transformed: Vec<(f64, bool)> =
            scored.iter().map(|(s, l)| (s.exp() + 3.0, *l)).collect();
        let curve2 = pr_curve(&transformed).unwrap();
        assert_eq!(curve.area, curve2.area);
    }

    #[test]
    fn frame_gap_eval_static_sequence_is_perfect() {
        let cfg = compact_synth();
        let base = gen_frame(&cfg, 4, 0, 7).unwrap();
        let frames: Vec<Vec<ObjectInstance>> = (0..4)
            .map(|t| {
                reobserve_frame(&AugmentationParams::identity(), &base, t, 0).unwrap()
            })
            .collect();
        let params = compact_params(1);
        let report = frame_gap_eval(&params, &frames, 1, 1.0 - 1e-9).unwrap();
        assert_eq!(report.gap, 1);
        assert_eq!(report.pairs_evaluated, 3 * 16);
        assert_eq!((report.prf.precision, report.prf.recall, report.prf.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn frame_gap_eval_rejects_short_sequences_and_zero_gap() {
        let cfg = compact_synth();
        let base = gen_frame(&cfg, 2, 0, 1).unwrap();
        // Reobserved frames keep the object ids, so gap pairs have ground
        // truth; freshly generated frames would share none.
        let frames = vec![
            base.clone(),
            reobserve_frame(&AugmentationParams::identity(), &base, 1, 0).unwrap(),
        ];
        let params = compact_params(1);
        assert!(frame_gap_eval(&params, &frames, 2, 0.5).is_err());
        assert!(frame_gap_eval(&params, &frames, 0, 0.5).is_err());
        assert!(frame_gap_eval(&params, &frames, 1, 0.5).is_ok());
    }

    fn random_records(rng: &mut ChaCha12Rng, frame: i64, n: usize) -> Vec<DescriptorRecord> {
        (0..n)
            .map(|i| {
                let raw: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                DescriptorRecord {
                    object_id: format!("f{frame}-o{i}"),
                    frame_id: frame,
                    descriptor: ObjectDescriptor::new(raw.iter().map(|v| v / norm).collect())
                        .unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn recall_at_n_exact_copies_rank_first() {
        // Each query is a verbatim copy of one frame, so its self-pairs
        // contribute 1.0 each while cross pairs of random unit vectors
        // rarely clear the threshold.
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut db = DescriptorDatabase::new();
        let mut queries = Vec::new();
        for f in 0..5i64 {
            let records = random_records(&mut rng, f, 3);
            for r in &records {
                db.insert(r.clone()).unwrap();
            }
            queries.push((records, f));
        }
        let points = recall_at_n(&queries, &db, 0.5, &[1, 3, 5]).unwrap();
        assert_eq!(points[0], RecallPoint { n: 1, recall: 1.0 });
        assert_eq!(points[2], RecallPoint { n: 5, recall: 1.0 });
        // N = db size always reaches full recall.
        assert_eq!(points.last().unwrap().recall, 1.0);
    }

    #[test]
    fn recall_at_n_missing_true_frame_errors() {
        let params = compact_params(2);
        let cfg = compact_synth();
        let frame = gen_frame(&cfg, 2, 0, 5).unwrap();
        let descs = crate::model::encode_objects(&params, &frame).unwrap();
        let records: Vec<DescriptorRecord> = frame
            .iter()
            .zip(descs)
            .map(|(o, d)| DescriptorRecord {
                object_id: o.object_id().to_string(),
                frame_id: 0,
                descriptor: d,
            })
            .collect();
        let mut db = DescriptorDatabase::new();
        for r in &records {
            db.insert(r.clone()).unwrap();
        }
        assert!(recall_at_n(&[(records.clone(), 0)], &db, 0.5, &[1]).is_ok());
        assert!(recall_at_n(&[(records, 9)], &db, 0.5, &[1]).is_err());
    }

    #[test]
    fn sparsity_counts_bounded_and_zero_for_zeroed_branch() {
        let cfg = compact_synth();
        let objects: Vec<ObjectInstance> = (0..5)
            .map(|i| generate_object(&cfg, i).unwrap())
            .collect();
        let mut params = compact_params(3);
        let n_o = params.dims().n_o;
        let report = sparsity_stats(&params, &objects).unwrap();
        assert_eq!(report.per_object.len(), 5);
        assert!(report.per_keypoint.iter().all(|&c| c <= n_o));
        assert!(report.per_object.iter().all(|&c| c <= n_o));
        assert_eq!(report.keypoint_hist.iter().sum::<usize>(), report.per_keypoint.len());
        assert_eq!(report.object_hist.iter().sum::<usize>(), report.per_object.len());

        for (name, tensor) in params.named_mut() {
            if name.starts_with("head.location") {
                tensor.data_mut().fill(0.0);
            }
        }
        let zeroed = sparsity_stats(&params, &objects).unwrap();
        assert!(zeroed.per_keypoint.iter().all(|&c| c == 0));
        assert!(zeroed.per_object.iter().all(|&c| c == 0));
    }

    #[test]
    fn sparsity_stats_rejects_dense_head() {
        let params = ModelParams::init(ModelDims::compact(), HeadKind::Dense, 3).unwrap();
        let cfg = compact_synth();
        let objects = vec![generate_object(&cfg, 0).unwrap()];
        let err = sparsity_stats(&params, &objects).unwrap_err().to_string();
        assert!(err.contains("dense"), "{err}");
    }

    #[test]
    fn object_nonzeros_grow_with_nested_keypoint_sets() {
        let cfg = SynthConfig {
            min_keypoints: 8,
            max_keypoints: 8,
            ..compact_synth()
        };
        let full = generate_object(&cfg, 11).unwrap();
        let params = compact_params(4);
        let mut previous = 0usize;
        for k in [1usize, 2, 4, 8] {
            let subset = ObjectInstance::new(
                full.object_id(),
                full.frame_id(),
                *full.bbox(),
                full.keypoints()[..k].to_vec(),
            )
            .unwrap();
            let report = sparsity_stats(&params, std::slice::from_ref(&subset)).unwrap();
            let count = report.per_object[0];
            assert!(
                count >= previous,
                "nonzeros shrank from {previous} to {count} at k={k}"
            );
            previous = count;
        }
    }

    #[test]
    fn usage_rate_monotone_under_inclusion() {
        let cfg = compact_synth();
        let objects: Vec<ObjectInstance> = (0..12)
            .map(|i| generate_object(&cfg, 50 + i).unwrap())
            .collect();
        let params = compact_params(5);
        let mut previous = 0.0;
        for n in [1usize, 4, 12] {
            let rate = usage_rate(&params, &objects[..n]).unwrap();
            assert!((0.0..=1.0).contains(&rate));
            assert!(rate >= previous);
            previous = rate;
        }
        let single = usage_rate(&params, &objects[..1]).unwrap();
        let report = sparsity_stats(&params, &objects[..1]).unwrap();
        let expect = report.per_object[0] as f64 / report.n_o as f64;
        assert!((single - expect).abs() < 1e-15);
        assert!(usage_rate(&params, &[]).is_err());
    }

    #[test]
    fn runtime_bench_reports_positive_growing_graph_cost() {
        let params = compact_params(6);
        let rows = runtime_bench(&params, &[2, 8], 3, 0).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(row.node_ms > 0.0);
            assert!(row.graph_ms > 0.0);
            assert!(row.head_ms > 0.0);
            assert!(row.total_ms > 0.0);
        }
        assert!(rows[1].graph_ms >= rows[0].graph_ms * 0.5);
    }

    #[test]
    fn mean_pool_is_unit_norm_and_order_invariant() {
        let cfg = compact_synth();
        let object = generate_object(&cfg, 17).unwrap();
        let pooled = mean_pool_descriptor(&object).unwrap();
        let norm: f64 = pooled.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let mut reversed: Vec<KeyPoint> = object.keypoints().to_vec();
        reversed.reverse();
        let swapped = ObjectInstance::new(
            object.object_id(),
            object.frame_id(),
            *object.bbox(),
            reversed,
        )
        .unwrap();
        let pooled2 = mean_pool_descriptor(&swapped).unwrap();
        for (a, b) in pooled.as_slice().iter().zip(pooled2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
