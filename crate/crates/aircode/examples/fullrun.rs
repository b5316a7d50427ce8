use std::time::Instant;

use aircode::eval::{mean_pool_descriptor, pr_curve, recall_at_n, sparsity_stats, usage_rate};
use aircode::matcher::{cosine_similarity, DescriptorDatabase, DescriptorRecord};
use aircode::model::{encode_objects, ModelDims, ModelParams, ObjectInstance};
use aircode::synth::{augment, gen_sequence, generate_object, AugmentationParams, SequenceConfig, SynthConfig};
use aircode::train::{train_with, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn heldout_objects(cfg: &SynthConfig, base: u64, n: usize) -> Vec<ObjectInstance> {
    (0..n)
        .map(|i| generate_object(cfg, base + i as u64).unwrap())
        .collect()
}

fn records_for(params: &ModelParams, objects: &[ObjectInstance]) -> Vec<DescriptorRecord> {
    let descs = encode_objects(params, objects).unwrap();
    objects
        .iter()
        .zip(descs)
        .map(|(o, d)| DescriptorRecord {
            object_id: o.object_id().to_string(),
            frame_id: o.frame_id(),
            descriptor: d,
        })
        .collect()
}

fn gap_auprc(params: &ModelParams, frames: &[Vec<ObjectInstance>], gap: usize) -> f64 {
    let encoded: Vec<Vec<DescriptorRecord>> =
        frames.iter().map(|f| records_for(params, f)).collect();
    let mut scored = Vec::new();
    for t in 0..frames.len() - gap {
        for ra in &encoded[t] {
            for rb in &encoded[t + gap] {
                scored.push((
                    cosine_similarity(&ra.descriptor, &rb.descriptor),
                    ra.object_id == rb.object_id,
                ));
            }
        }
    }
    pr_curve(&scored).unwrap().area
}

fn mean_pool_gap_auprc(frames: &[Vec<ObjectInstance>], gap: usize) -> f64 {
    let pooled: Vec<Vec<(String, aircode::model::ObjectDescriptor)>> = frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|o| (o.object_id().to_string(), mean_pool_descriptor(o).unwrap()))
                .collect()
        })
        .collect();
    let mut scored = Vec::new();
    for t in 0..frames.len() - gap {
        for (ida, da) in &pooled[t] {
            for (idb, db) in &pooled[t + gap] {
                scored.push((cosine_similarity(da, db), ida == idb));
            }
        }
    }
    pr_curve(&scored).unwrap().area
}

fn main() {
    let dims = ModelDims::default();
    let synth = SynthConfig::default();
    let aug = AugmentationParams::default();

    let mut cfg = TrainConfig::default();
    println!(
        "config: steps={} batch={} pos={} lr={}",
        cfg.steps, cfg.batch_pairs, cfg.positive_pairs, cfg.learning_rate
    );

    let t0 = Instant::now();
    let with = train_with(&cfg, &dims, &synth, &aug, |step, _, row| {
        if step % 200 == 0 || step + 1 == 2000 {
            println!(
                "  with step {step}: total={:.4} pos={:.4} neg={:.4} sparse={:.4} dense={:.4}",
                row.total, row.positive, row.negative, row.sparse, row.dense
            );
        }
        Ok(())
    })
    .unwrap();
    let t_with = t0.elapsed();
    println!("train WITH losses: {:?}", t_with);

    cfg.disable_sparse_dense_losses = true;
    let t1 = Instant::now();
    let without = train_with(&cfg, &dims, &synth, &aug, |step, _, row| {
        if step % 400 == 0 {
            println!("  without step {step}: total={:.4}", row.total);
        }
        Ok(())
    })
    .unwrap();
    let t_without = t1.elapsed();
    println!("train WITHOUT sparse+dense: {:?}", t_without);
    println!(
        "criterion-4 runtime: {:?} (budget 900 s)",
        t_with + t_without
    );

    // Criterion 4: sparsity effect on held-out objects.
    let t = Instant::now();
    let objs100 = heldout_objects(&synth, 10_000, 100);
    let rep_with = sparsity_stats(&with.params, &objs100).unwrap();
    let rep_without = sparsity_stats(&without.params, &objs100).unwrap();
    let n_o = dims.n_o as f64;
    let frac_with = rep_with.mean_keypoint_nonzeros() / n_o;
    let frac_without = rep_without.mean_keypoint_nonzeros() / n_o;
    println!(
        "criterion 4: frac_with={:.4} frac_without={:.4} strict_lower={} below_half={} ({:?})",
        frac_with,
        frac_without,
        frac_with < frac_without,
        frac_with < 0.5,
        t.elapsed()
    );

    // Criterion 5: usage-rate monotonicity.
    let t = Instant::now();
    let mut rates = Vec::new();
    for n in [1usize, 10, 100] {
        rates.push(usage_rate(&with.params, &objs100[..n]).unwrap());
    }
    println!(
        "criterion 5: rates={:?} non_decreasing={} ({:?})",
        rates,
        rates.windows(2).all(|w| w[0] <= w[1]),
        t.elapsed()
    );

    // Criterion 6: held-out sequence AU-PRC by gap + mean-pool baseline.
    let t = Instant::now();
    let seq = SequenceConfig {
        frames: 16,
        ..SequenceConfig::default()
    };
    let frames = gen_sequence(&synth, &seq, 777_001).unwrap();
    let au1 = gap_auprc(&with.params, &frames, 1);
    let au5 = gap_auprc(&with.params, &frames, 5);
    let au10 = gap_auprc(&with.params, &frames, 10);
    let base10 = mean_pool_gap_auprc(&frames, 10);
    println!(
        "criterion 6: au1={:.4} au5={:.4} au10={:.4} base10={:.4} | au1>=0.90:{} mono:{} margin:{} ({:?})",
        au1,
        au5,
        au10,
        base10,
        au1 >= 0.90,
        au1 >= au5 && au5 >= au10 - 0.02,
        au10 - base10 >= 0.05,
        t.elapsed()
    );
    // Also evaluate the ablated model for context.
    println!(
        "  (without-losses model: au1={:.4} au10={:.4})",
        gap_auprc(&without.params, &frames, 1),
        gap_auprc(&without.params, &frames, 10)
    );

    // Criterion 7: descriptor stability under 20% key-point dropout.
    let t = Instant::now();
    let objs = heldout_objects(&synth, 20_000, 100);
    let full = encode_objects(&with.params, &objs).unwrap();
    let mut neg_sims = Vec::new();
    for i in 0..objs.len() {
        for j in i + 1..objs.len() {
            neg_sims.push(cosine_similarity(&full[i], &full[j]));
        }
    }
    neg_sims.sort_by(f64::total_cmp);
    let p95 = neg_sims[(neg_sims.len() as f64 * 0.95) as usize];
    let dropped: Vec<ObjectInstance> = objs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let k = o.keypoints().len();
            let n_drop = ((k as f64) * 0.2).floor().max(1.0) as usize;
            let mut idx: Vec<usize> = (0..k).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(30_000 + i as u64);
            idx.shuffle(&mut rng);
            let keep: std::collections::BTreeSet<usize> =
                idx[n_drop..].iter().copied().collect();
            let kps = o
                .keypoints()
                .iter()
                .enumerate()
                .filter(|(j, _)| keep.contains(j))
                .map(|(_, kp)| kp.clone())
                .collect();
            ObjectInstance::new(o.object_id(), o.frame_id(), *o.bbox(), kps).unwrap()
        })
        .collect();
    let dropped_desc = encode_objects(&with.params, &dropped).unwrap();
    let self_sims: Vec<f64> = full
        .iter()
        .zip(&dropped_desc)
        .map(|(a, b)| cosine_similarity(a, b))
        .collect();
    let min_self = self_sims.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst_margin = min_self - p95;
    println!(
        "criterion 7: min_self={:.4} p95_neg={:.4} all_above={} worst_margin={:.4} ({:?})",
        min_self,
        p95,
        self_sims.iter().all(|&s| s > p95),
        worst_margin,
        t.elapsed()
    );

    // Criterion 8: relocalization recall on a 50-frame database.
    let t = Instant::now();
    let seq50 = SequenceConfig {
        frames: 50,
        ..SequenceConfig::default()
    };
    let db_frames = gen_sequence(&synth, &seq50, 888_001).unwrap();
    let mut db = DescriptorDatabase::new();
    for frame in &db_frames {
        for rec in records_for(&with.params, frame) {
            db.insert(rec).unwrap();
        }
    }
    let mut queries = Vec::new();
    for (qi, t_src) in (2..50).step_by(5).take(10).enumerate() {
        let revisit: Vec<ObjectInstance> = db_frames[t_src]
            .iter()
            .enumerate()
            .map(|(oi, o)| {
                augment(&aug, o, 900_000 + (qi * 100 + oi) as u64)
                    .unwrap()
                    .with_frame_id(1000 + qi as i64)
            })
            .collect();
        queries.push((
            records_for(&with.params, &revisit),
            db_frames[t_src][0].frame_id(),
        ));
    }
    let recalls = recall_at_n(&queries, &db, 0.5, &[1, 5]).unwrap();
    println!(
        "criterion 8: recall@1={:.2} recall@5={:.2} ({:?})",
        recalls[0].recall,
        recalls[1].recall,
        t.elapsed()
    );

    println!("total wall time {:?}", t0.elapsed());
}
