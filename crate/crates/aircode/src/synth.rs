//! Synthetic desk-scene data: seeded object identities, homography-based
//! view augmentation, labeled pair batches for training, and drifting
//! multi-frame sequences for evaluation.
//!
//! An identity is a pool of key-points: canonical positions plus latent unit
//! prototype descriptors. A fraction of prototypes is drawn from a shared
//! atom dictionary, so different identities share some appearance and naive
//! descriptor averaging confuses them. Observations perturb the pool with
//! fresh noise; sequences additionally accumulate geometric and appearance
//! drift per frame, so matching difficulty grows with frame gap.

use crate::error::{Error, Result};
use crate::loss::PairLabel;
use crate::model::{BoundingBox, KeyPoint, ObjectInstance};
use crate::seed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const SALT_SPEC: u64 = 0x5350;
const SALT_INSTANCE: u64 = 0x494e;
const SALT_BATCH_ID: u64 = 0x4249;
const SALT_BATCH_AUG: u64 = 0x4241;
const SALT_BATCH_NEG: u64 = 0x424e;
const SALT_SEQ_ID: u64 = 0x5349;
const SALT_SEQ_DRIFT: u64 = 0x5344;
const SALT_SEQ_OBS: u64 = 0x534f;
const SALT_FRAME_ID: u64 = 0x4649;
const SALT_REOBS: u64 = 0x524f;

/// Padding added around the tight key-point box so extents stay positive
/// even for a single key-point.
const BBOX_PAD: f64 = 1.0;

/// Identity generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Key-point descriptor width (matches the model's `n_p`).
    pub descriptor_width: usize,
    pub min_keypoints: usize,
    pub max_keypoints: usize,
    /// Canonical positions are drawn in a square of this size, in pixels.
    pub canonical_scale: f64,
    /// Size of the shared appearance-atom dictionary.
    pub common_atoms: usize,
    /// Probability that a prototype is a dictionary atom instead of a
    /// fresh identity-specific vector.
    pub common_fraction: f64,
    /// Seed of the dictionary stream; shared by every identity.
    pub dictionary_seed: u64,
    /// Descriptor noise applied when an identity is first observed.
    pub instance_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            descriptor_width: 256,
            min_keypoints: 5,
            max_keypoints: 40,
            canonical_scale: 256.0,
            common_atoms: 12,
            common_fraction: 0.55,
            dictionary_seed: 7,
            instance_noise: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.descriptor_width == 0 {
            return Err(Error::contract("descriptor_width must be positive"));
        }
        if self.min_keypoints == 0 || self.max_keypoints < self.min_keypoints {
            return Err(Error::contract(format!(
                "key-point range [{}, {}] is invalid",
                self.min_keypoints, self.max_keypoints
            )));
        }
        if !(self.canonical_scale.is_finite() && self.canonical_scale > 0.0) {
            return Err(Error::contract("canonical_scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.common_fraction) {
            return Err(Error::contract("common_fraction must lie in [0, 1]"));
        }
        if self.common_fraction > 0.0 && self.common_atoms == 0 {
            return Err(Error::contract(
                "common_atoms must be positive when common_fraction > 0",
            ));
        }
        if !(self.instance_noise.is_finite() && self.instance_noise >= 0.0) {
            return Err(Error::contract("instance_noise must be non-negative"));
        }
        Ok(())
    }
}

/// View augmentation magnitudes. Geometry is perturbed by a random
/// homography (rotation, scale, perspective, translation about the box
/// center), appearance by Gaussian descriptor noise, and key-points are
/// independently dropped, never below one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationParams {
    pub rotation_degrees: f64,
    pub scale_low: f64,
    pub scale_high: f64,
    /// Corner displacement as a fraction of the box extent.
    pub perspective: f64,
    /// Translation as a fraction of the box extent.
    pub translation: f64,
    /// Gaussian noise added per descriptor entry (then re-normalized).
    pub descriptor_noise: f64,
    /// Probability of dropping each key-point.
    pub dropout: f64,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        AugmentationParams {
            rotation_degrees: 30.0,
            scale_low: 0.7,
            scale_high: 1.4,
            perspective: 0.10,
            translation: 0.2,
            descriptor_noise: 0.05,
            dropout: 0.2,
        }
    }
}

impl AugmentationParams {
    /// No-op augmentation.
    pub fn identity() -> Self {
        AugmentationParams {
            rotation_degrees: 0.0,
            scale_low: 1.0,
            scale_high: 1.0,
            perspective: 0.0,
            translation: 0.0,
            descriptor_noise: 0.0,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_degrees.is_finite() && self.rotation_degrees >= 0.0) {
            return Err(Error::contract("rotation_degrees must be non-negative"));
        }
        if !(self.scale_low.is_finite() && self.scale_low > 0.0 && self.scale_high >= self.scale_low)
        {
            return Err(Error::contract(format!(
                "scale range [{}, {}] is invalid",
                self.scale_low, self.scale_high
            )));
        }
        if !(0.0..0.5).contains(&self.perspective) {
            return Err(Error::contract("perspective must lie in [0, 0.5)"));
        }
        if !(self.translation.is_finite() && self.translation >= 0.0) {
            return Err(Error::contract("translation must be non-negative"));
        }
        if !(self.descriptor_noise.is_finite() && self.descriptor_noise >= 0.0) {
            return Err(Error::contract("descriptor_noise must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Row-major 3x3 projective transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub [f64; 9]);

impl Homography {
    pub fn identity() -> Self {
        Homography([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }

    /// `self` after `other` (matrix product `self . other`).
    pub fn compose(&self, other: &Homography) -> Homography {
        let a = &self.0;
        let b = &other.0;
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
            }
        }
        Homography(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// Projects a point; `None` when it lands too close to the horizon.
    pub fn apply(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let m = &self.0;
        let w = m[6] * p[0] + m[7] * p[1] + m[8];
        if w.abs() < 1e-6 {
            return None;
        }
        Some([
            (m[0] * p[0] + m[1] * p[1] + m[2]) / w,
            (m[3] * p[0] + m[4] * p[1] + m[5]) / w,
        ])
    }

    fn translation(t: [f64; 2]) -> Homography {
        Homography([1.0, 0.0, t[0], 0.0, 1.0, t[1], 0.0, 0.0, 1.0])
    }
}

/// One identity: the latent pool every observation of the object samples
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthObjectSpec {
    pub identity_seed: u64,
    pub object_id: String,
    /// Unit prototype descriptors, one per pool key-point.
    pub prototypes: Vec<Vec<f64>>,
    /// Canonical pixel positions, one per pool key-point.
    pub positions: Vec<[f64; 2]>,
}

fn unit_vector(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    loop {
        let v: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// The shared atom dictionary, determined by the config alone.
fn dictionary(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.dictionary_seed);
    (0..cfg.common_atoms)
        .map(|_| unit_vector(&mut rng, cfg.descriptor_width))
        .collect()
}

/// Deterministically expands an identity seed into its key-point pool.
pub fn object_spec(cfg: &SynthConfig, identity_seed: u64) -> Result<SynthObjectSpec> {
    cfg.validate()?;
    let atoms = dictionary(cfg);
    let mut rng = ChaCha12Rng::seed_from_u64(seed::derive(identity_seed, SALT_SPEC));
    let m = rng.random_range(cfg.min_keypoints..=cfg.max_keypoints);
    let positions: Vec<[f64; 2]> = (0..m)
        .map(|_| {
            [
                rng.random_range(0.0..cfg.canonical_scale),
                rng.random_range(0.0..cfg.canonical_scale),
            ]
        })
        .collect();
    let prototypes: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            if rng.random_range(0.0..1.0) < cfg.common_fraction {
                atoms[rng.random_range(0..atoms.len())].clone()
            } else {
                unit_vector(&mut rng, cfg.descriptor_width)
            }
        })
        .collect();
    Ok(SynthObjectSpec {
        identity_seed,
        object_id: format!("obj-{identity_seed:016x}"),
        prototypes,
        positions,
    })
}

fn tight_bbox(positions: &[[f64; 2]]) -> Result<BoundingBox> {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in positions {
        min_x = min_x.min(p[0]);
        min_y = min_y.min(p[1]);
        max_x = max_x.max(p[0]);
        max_y = max_y.max(p[1]);
    }
    BoundingBox::new(
        min_x - BBOX_PAD,
        min_y - BBOX_PAD,
        (max_x - min_x) + 2.0 * BBOX_PAD,
        (max_y - min_y) + 2.0 * BBOX_PAD,
    )
}

fn observe(
    spec: &SynthObjectSpec,
    positions: &[[f64; 2]],
    prototypes: &[Vec<f64>],
    frame_id: i64,
    noise: f64,
    rng: &mut ChaCha12Rng,
) -> Result<ObjectInstance> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let keypoints: Vec<KeyPoint> = positions
        .iter()
        .zip(prototypes)
        .map(|(p, proto)| {
            let mut descriptor = proto.clone();
            if noise > 0.0 {
                for d in descriptor.iter_mut() {
                    *d += noise * normal.sample(rng);
                }
                normalize_in_place(&mut descriptor);
            }
            KeyPoint {
                position: *p,
                descriptor,
            }
        })
        .collect();
    ObjectInstance::new(
        spec.object_id.clone(),
        frame_id,
        tight_bbox(positions)?,
        keypoints,
    )
}

/// Base observation of an identity: canonical positions, prototypes plus
/// instance noise, frame id zero.
pub fn generate_object(cfg: &SynthConfig, identity_seed: u64) -> Result<ObjectInstance> {
    let spec = object_spec(cfg, identity_seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed::derive(identity_seed, SALT_INSTANCE));
    observe(
        &spec,
        &spec.positions,
        &spec.prototypes,
        0,
        cfg.instance_noise,
        &mut rng,
    )
}

/// Draws a random homography about `center`. `extent` scales the
/// perspective and translation fractions into pixels.
fn sample_homography(
    aug: &AugmentationParams,
    center: [f64; 2],
    extent: f64,
    rng: &mut ChaCha12Rng,
) -> Homography {
    let theta = if aug.rotation_degrees > 0.0 {
        rng.random_range(-aug.rotation_degrees..=aug.rotation_degrees)
            .to_radians()
    } else {
        0.0
    };
    let s = if aug.scale_high > aug.scale_low {
        rng.random_range(aug.scale_low..=aug.scale_high)
    } else {
        aug.scale_low
    };
    let (gx, gy) = if aug.perspective > 0.0 {
        (
            rng.random_range(-aug.perspective..=aug.perspective) / extent,
            rng.random_range(-aug.perspective..=aug.perspective) / extent,
        )
    } else {
        (0.0, 0.0)
    };
    let (tx, ty) = if aug.translation > 0.0 {
        (
            rng.random_range(-aug.translation..=aug.translation) * extent,
            rng.random_range(-aug.translation..=aug.translation) * extent,
        )
    } else {
        (0.0, 0.0)
    };
    let (sin, cos) = theta.sin_cos();
    let rot_scale = Homography([s * cos, -s * sin, 0.0, s * sin, s * cos, 0.0, 0.0, 0.0, 1.0]);
    let perspective = Homography([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, gx, gy, 1.0]);
    let centered = perspective.compose(&rot_scale);
    Homography::translation([center[0] + tx, center[1] + ty])
        .compose(&centered)
        .compose(&Homography::translation([-center[0], -center[1]]))
}

/// Applies a sampled homography to every position; resamples internally on
/// the (measure-zero) degenerate draws.
fn transform_positions(
    aug: &AugmentationParams,
    positions: &[[f64; 2]],
    center: [f64; 2],
    extent: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<[f64; 2]>> {
    const ATTEMPTS: usize = 32;
    for _ in 0..ATTEMPTS {
        let h = sample_homography(aug, center, extent, rng);
        if h.determinant().abs() < 1e-9 {
            continue;
        }
        let mapped: Option<Vec<[f64; 2]>> = positions.iter().map(|p| h.apply(*p)).collect();
        if let Some(mapped) = mapped {
            if mapped.iter().all(|p| p.iter().all(|v| v.is_finite())) {
                return Ok(mapped);
            }
        }
    }
    Err(Error::contract(
        "could not sample a non-degenerate homography; augmentation magnitudes are extreme",
    ))
}

/// Re-observes an object under a random viewpoint change.
///
/// Order of effects: homography on positions, key-point dropout (floored at
/// one survivor), descriptor noise with re-normalization. Object and frame
/// ids are preserved; the bounding box is recomputed tight around the
/// surviving key-points, so a pure translation leaves normalized positions
/// unchanged.
pub fn augment(aug: &AugmentationParams, obj: &ObjectInstance, seed_value: u64) -> Result<ObjectInstance> {
    aug.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed_value);
    let bbox = obj.bbox();
    let extent = bbox.width.max(bbox.height);
    let positions: Vec<[f64; 2]> = obj.keypoints().iter().map(|kp| kp.position).collect();
    let mapped = transform_positions(aug, &positions, bbox.center(), extent, &mut rng)?;
    // Dropout decisions are drawn for every key-point to keep the stream
    // aligned, then floored to one survivor.
    let keep: Vec<bool> = (0..mapped.len())
        .map(|_| rng.random_range(0.0..1.0) >= aug.dropout)
        .collect();
    let survivors: Vec<usize> = if keep.iter().any(|k| *k) {
        keep.iter()
            .enumerate()
            .filter_map(|(i, k)| k.then_some(i))
            .collect()
    } else {
        vec![0]
    };
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let keypoints: Vec<KeyPoint> = survivors
        .iter()
        .map(|&i| {
            let mut descriptor = obj.keypoints()[i].descriptor.clone();
            if aug.descriptor_noise > 0.0 {
                for d in descriptor.iter_mut() {
                    *d += aug.descriptor_noise * normal.sample(&mut rng);
                }
                normalize_in_place(&mut descriptor);
            }
            KeyPoint {
                position: mapped[i],
                descriptor,
            }
        })
        .collect();
    let new_positions: Vec<[f64; 2]> = survivors.iter().map(|&i| mapped[i]).collect();
    ObjectInstance::new(
        obj.object_id().to_string(),
        obj.frame_id(),
        tight_bbox(&new_positions)?,
        keypoints,
    )
}

/// A training batch: distinct object observations plus labeled pairs over
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub objects: Vec<ObjectInstance>,
    pub pairs: Vec<PairLabel>,
}

/// Builds a batch with `n_pos` positive and `n_neg` negative pairs.
///
/// The first `n_pos` identities contribute two views each (base observation
/// at frame 0 and an augmented view at frame 1), forming the positives.
/// Negatives are drawn from cross-identity view pairs; extra single-view
/// identities are generated when the positive views cannot supply enough.
pub fn make_pair_batch(
    cfg: &SynthConfig,
    aug: &AugmentationParams,
    n_pos: usize,
    n_neg: usize,
    batch_seed: u64,
) -> Result<PairBatch> {
    cfg.validate()?;
    aug.validate()?;
    if n_pos + n_neg == 0 {
        return Err(Error::contract("a batch needs at least one pair"));
    }
    // Grow the identity count until cross-identity pairs can cover n_neg.
    let views = |id: usize| if id < n_pos { 2usize } else { 1 };
    let mut n_id = n_pos.max(if n_neg > 0 { 2 } else { 1 });
    loop {
        let total_views: usize = (0..n_id).map(views).sum();
        let same_id_pairs: usize = (0..n_id).map(|i| views(i) * (views(i) - 1) / 2).sum();
        let cross = total_views * (total_views - 1) / 2 - same_id_pairs;
        if cross >= n_neg {
            break;
        }
        n_id += 1;
    }
    let mut objects = Vec::new();
    let mut identity_of = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..n_id {
        let identity_seed = seed::derive2(batch_seed, SALT_BATCH_ID, i as u64);
        let base = generate_object(cfg, identity_seed)?;
        if i < n_pos {
            let view = augment(aug, &base, seed::derive2(batch_seed, SALT_BATCH_AUG, i as u64))?
                .with_frame_id(1);
            let a = objects.len();
            objects.push(base);
            identity_of.push(i);
            objects.push(view);
            identity_of.push(i);
            pairs.push(PairLabel::positive(a, a + 1));
        } else {
            objects.push(base);
            identity_of.push(i);
        }
    }
    let mut cross: Vec<(usize, usize)> = Vec::new();
    for a in 0..objects.len() {
        for b in (a + 1)..objects.len() {
            if identity_of[a] != identity_of[b] {
                cross.push((a, b));
            }
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed::derive(batch_seed, SALT_BATCH_NEG));
    cross.shuffle(&mut rng);
    pairs.extend(
        cross
            .into_iter()
            .take(n_neg)
            .map(|(a, b)| PairLabel::negative(a, b)),
    );
    Ok(PairBatch { objects, pairs })
}

/// Drift and observation settings for multi-frame sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub frames: usize,
    /// Objects present in every frame.
    pub objects: usize,
    /// Probability that a pool key-point is visible in a frame.
    pub visibility: f64,
    /// Fresh descriptor noise per observation.
    pub observation_noise: f64,
    /// Cumulative per-step geometric drift.
    pub drift_rotation_degrees: f64,
    pub drift_scale: f64,
    pub drift_perspective: f64,
    pub drift_translation: f64,
    /// Cumulative per-step prototype random walk (per descriptor entry).
    pub drift_descriptor: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            frames: 60,
            objects: 8,
            visibility: 0.85,
            observation_noise: 0.03,
            drift_rotation_degrees: 2.0,
            drift_scale: 0.02,
            drift_perspective: 0.01,
            drift_translation: 0.05,
            drift_descriptor: 0.012,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.objects == 0 {
            return Err(Error::contract("sequence needs frames >= 1 and objects >= 1"));
        }
        if !(0.0 < self.visibility && self.visibility <= 1.0) {
            return Err(Error::contract("visibility must lie in (0, 1]"));
        }
        for (name, v) in [
            ("observation_noise", self.observation_noise),
            ("drift_rotation_degrees", self.drift_rotation_degrees),
            ("drift_scale", self.drift_scale),
            ("drift_perspective", self.drift_perspective),
            ("drift_translation", self.drift_translation),
            ("drift_descriptor", self.drift_descriptor),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::contract(format!("{name} must be non-negative")));
            }
        }
        if self.drift_scale >= 1.0 {
            return Err(Error::contract("drift_scale must be below 1"));
        }
        if self.drift_perspective >= 0.5 {
            return Err(Error::contract("drift_perspective must be below 0.5"));
        }
        Ok(())
    }

    fn step_params(&self) -> AugmentationParams {
        AugmentationParams {
            rotation_degrees: self.drift_rotation_degrees,
            scale_low: 1.0 - self.drift_scale,
            scale_high: 1.0 + self.drift_scale,
            perspective: self.drift_perspective,
            translation: self.drift_translation,
            descriptor_noise: 0.0,
            dropout: 0.0,
        }
    }
}

/// Generates a sequence as `frames x objects` observations. Objects persist
/// across the whole sequence; their pose and appearance drift step by step,
/// and each frame sees a fresh visible subset of the pool.
pub fn gen_sequence(
    cfg: &SynthConfig,
    seq: &SequenceConfig,
    sequence_seed: u64,
) -> Result<Vec<Vec<ObjectInstance>>> {
    cfg.validate()?;
    seq.validate()?;
    let step = seq.step_params();
    let mut frames: Vec<Vec<ObjectInstance>> = vec![Vec::new(); seq.frames];
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    for o in 0..seq.objects {
        let identity_seed = seed::derive2(sequence_seed, SALT_SEQ_ID, o as u64);
        let spec = object_spec(cfg, identity_seed)?;
        let mut positions = spec.positions.clone();
        let mut prototypes = spec.prototypes.clone();
        for t in 0..seq.frames {
            if t > 0 {
                let mut drift_rng = ChaCha12Rng::seed_from_u64(seed::derive2(
                    seed::derive(sequence_seed, SALT_SEQ_DRIFT),
                    o as u64,
                    t as u64,
                ));
                let bbox = tight_bbox(&positions)?;
                positions = transform_positions(
                    &step,
                    &positions,
                    bbox.center(),
                    bbox.width.max(bbox.height),
                    &mut drift_rng,
                )?;
                if seq.drift_descriptor > 0.0 {
                    for proto in prototypes.iter_mut() {
                        for v in proto.iter_mut() {
                            *v += seq.drift_descriptor * normal.sample(&mut drift_rng);
                        }
                        normalize_in_place(proto);
                    }
                }
            }
            let mut obs_rng = ChaCha12Rng::seed_from_u64(seed::derive2(
                seed::derive(sequence_seed, SALT_SEQ_OBS),
                o as u64,
                t as u64,
            ));
            let visible: Vec<usize> = {
                let mask: Vec<bool> = (0..positions.len())
                    .map(|_| obs_rng.random_range(0.0..1.0) < seq.visibility)
                    .collect();
                if mask.iter().any(|v| *v) {
                    mask.iter()
                        .enumerate()
                        .filter_map(|(i, v)| v.then_some(i))
                        .collect()
                } else {
                    vec![0]
                }
            };
            let vis_positions: Vec<[f64; 2]> = visible.iter().map(|&i| positions[i]).collect();
            let vis_prototypes: Vec<Vec<f64>> =
                visible.iter().map(|&i| prototypes[i].clone()).collect();
            frames[t].push(observe(
                &spec,
                &vis_positions,
                &vis_prototypes,
                t as i64,
                seq.observation_noise,
                &mut obs_rng,
            )?);
        }
    }
    Ok(frames)
}

/// One standalone frame of fresh identities (used to build databases of
/// mutually unrelated frames).
pub fn gen_frame(
    cfg: &SynthConfig,
    n_objects: usize,
    frame_id: i64,
    frame_seed: u64,
) -> Result<Vec<ObjectInstance>> {
    if n_objects == 0 {
        return Err(Error::contract("a frame needs at least one object"));
    }
    (0..n_objects)
        .map(|j| {
            let identity_seed = seed::derive2(frame_seed, SALT_FRAME_ID, j as u64);
            Ok(generate_object(cfg, identity_seed)?.with_frame_id(frame_id))
        })
        .collect()
}

/// Revisit of an existing frame: every object re-observed under a fresh
/// augmentation, with a new frame id.
pub fn reobserve_frame(
    aug: &AugmentationParams,
    frame: &[ObjectInstance],
    new_frame_id: i64,
    revisit_seed: u64,
) -> Result<Vec<ObjectInstance>> {
    frame
        .iter()
        .enumerate()
        .map(|(j, obj)| {
            let s = seed::derive2(revisit_seed, SALT_REOBS, j as u64);
            Ok(augment(aug, obj, s)?.with_frame_id(new_frame_id))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::Polarity;
    use crate::model::normalize_position;

    #[test]
    fn generate_object_is_seed_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_object(&cfg, 42).unwrap();
        let b = generate_object(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_object(&cfg, 43).unwrap();
        assert_ne!(a.object_id(), c.object_id());
    }

    #[test]
    fn keypoint_counts_respect_configured_range() {
        let cfg = SynthConfig {
            min_keypoints: 5,
            max_keypoints: 9,
            ..SynthConfig::default()
        };
        for s in 0..30 {
            let m = generate_object(&cfg, s).unwrap().keypoints().len();
            assert!((5..=9).contains(&m), "{m}");
        }
    }

    #[test]
    fn descriptors_are_unit_norm() {
        let obj = generate_object(&SynthConfig::default(), 3).unwrap();
        for kp in obj.keypoints() {
            let n: f64 = kp.descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_identity_descriptor_cosine_is_small_on_average() {
        let cfg = SynthConfig::default();
        let a = generate_object(&cfg, 100).unwrap();
        let b = generate_object(&cfg, 200).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for ka in a.keypoints() {
            for kb in b.keypoints() {
                total += ka
                    .descriptor
                    .iter()
                    .zip(&kb.descriptor)
                    .map(|(x, y)| x * y)
                    .sum::<f64>();
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!(mean.abs() < 0.1, "mean cross cosine {mean}");
    }

    #[test]
    fn identity_augmentation_is_a_no_op() {
        let obj = generate_object(&SynthConfig::default(), 9).unwrap();
        let same = augment(&AugmentationParams::identity(), &obj, 1).unwrap();
        assert_eq!(obj.keypoints().len(), same.keypoints().len());
        for (a, b) in obj.keypoints().iter().zip(same.keypoints()) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.descriptor, b.descriptor);
        }
    }

    #[test]
    fn pure_translation_preserves_normalized_positions() {
        let obj = generate_object(&SynthConfig::default(), 11).unwrap();
        let aug = AugmentationParams {
            translation: 0.5,
            ..AugmentationParams::identity()
        };
        let moved = augment(&aug, &obj, 77).unwrap();
        assert_eq!(obj.keypoints().len(), moved.keypoints().len());
        for (a, b) in obj.keypoints().iter().zip(moved.keypoints()) {
            let na = normalize_position(a.position, obj.bbox());
            let nb = normalize_position(b.position, moved.bbox());
            assert!((na[0] - nb[0]).abs() < 1e-9 && (na[1] - nb[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn augmentation_is_seed_deterministic() {
        let obj = generate_object(&SynthConfig::default(), 5).unwrap();
        let aug = AugmentationParams::default();
        assert_eq!(augment(&aug, &obj, 3).unwrap(), augment(&aug, &obj, 3).unwrap());
        assert_ne!(augment(&aug, &obj, 3).unwrap(), augment(&aug, &obj, 4).unwrap());
    }

    #[test]
    fn heavy_dropout_keeps_at_least_one_keypoint() {
        let obj = generate_object(&SynthConfig::default(), 6).unwrap();
        let aug = AugmentationParams {
            dropout: 0.99,
            ..AugmentationParams::identity()
        };
        for s in 0..50 {
            let v = augment(&aug, &obj, s).unwrap();
            assert!(!v.keypoints().is_empty());
        }
    }

    #[test]
    fn augmented_descriptors_stay_unit_norm() {
        let obj = generate_object(&SynthConfig::default(), 8).unwrap();
        let v = augment(&AugmentationParams::default(), &obj, 12).unwrap();
        for kp in v.keypoints() {
            let n: f64 = kp.descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pair_batch_single_positive_shares_object_id() {
        let batch = make_pair_batch(
            &SynthConfig::default(),
            &AugmentationParams::default(),
            1,
            0,
            50,
        )
        .unwrap();
        assert_eq!(batch.objects.len(), 2);
        assert_eq!(batch.pairs.len(), 1);
        let p = batch.pairs[0];
        assert_eq!(p.polarity, Polarity::Positive);
        assert_eq!(
            batch.objects[p.a].object_id(),
            batch.objects[p.b].object_id()
        );
        assert_ne!(
            batch.objects[p.a].frame_id(),
            batch.objects[p.b].frame_id()
        );
    }

    #[test]
    fn pair_batch_single_negative_uses_distinct_identities() {
        let batch = make_pair_batch(
            &SynthConfig::default(),
            &AugmentationParams::default(),
            0,
            1,
            51,
        )
        .unwrap();
        assert_eq!(batch.pairs.len(), 1);
        let p = batch.pairs[0];
        assert_eq!(p.polarity, Polarity::Negative);
        assert_ne!(
            batch.objects[p.a].object_id(),
            batch.objects[p.b].object_id()
        );
    }

    #[test]
    fn pair_batch_default_split_reuses_positive_views() {
        let batch = make_pair_batch(
            &SynthConfig::default(),
            &AugmentationParams::default(),
            4,
            12,
            52,
        )
        .unwrap();
        // Four identities with two views each cover twelve negatives.
        assert_eq!(batch.objects.len(), 8);
        assert_eq!(batch.pairs.len(), 16);
        for p in &batch.pairs {
            let same = batch.objects[p.a].object_id() == batch.objects[p.b].object_id();
            match p.polarity {
                Polarity::Positive => assert!(same),
                Polarity::Negative => assert!(!same),
            }
        }
    }

    #[test]
    fn pair_batch_is_seed_deterministic() {
        let cfg = SynthConfig::default();
        let aug = AugmentationParams::default();
        let a = make_pair_batch(&cfg, &aug, 2, 3, 9).unwrap();
        let b = make_pair_batch(&cfg, &aug, 2, 3, 9).unwrap();
        assert_eq!(a, b);
        let c = make_pair_batch(&cfg, &aug, 2, 3, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(make_pair_batch(
            &SynthConfig::default(),
            &AugmentationParams::default(),
            0,
            0,
            1
        )
        .is_err());
    }

    #[test]
    fn sequence_has_stable_ids_and_frame_numbers() {
        let cfg = SynthConfig::default();
        let seq = SequenceConfig {
            frames: 5,
            objects: 3,
            ..SequenceConfig::default()
        };
        let frames = gen_sequence(&cfg, &seq, 60).unwrap();
        assert_eq!(frames.len(), 5);
        let ids: Vec<&str> = frames[0].iter().map(|o| o.object_id()).collect();
        for (t, frame) in frames.iter().enumerate() {
            assert_eq!(frame.len(), 3);
            for (o, obj) in frame.iter().enumerate() {
                assert_eq!(obj.frame_id(), t as i64);
                assert_eq!(obj.object_id(), ids[o]);
            }
        }
    }

    #[test]
    fn sequence_is_seed_deterministic() {
        let cfg = SynthConfig::default();
        let seq = SequenceConfig {
            frames: 3,
            objects: 2,
            ..SequenceConfig::default()
        };
        assert_eq!(
            gen_sequence(&cfg, &seq, 1).unwrap(),
            gen_sequence(&cfg, &seq, 1).unwrap()
        );
    }

    #[test]
    fn sequence_drift_grows_with_frame_gap() {
        // Same-object descriptor similarity should decay monotonically (on
        // average) as the gap grows; summarize by pooled prototypes.
        let cfg = SynthConfig::default();
        let seq = SequenceConfig {
            frames: 21,
            objects: 4,
            visibility: 1.0,
            observation_noise: 0.0,
            ..SequenceConfig::default()
        };
        let frames = gen_sequence(&cfg, &seq, 33).unwrap();
        let pooled = |obj: &ObjectInstance| -> Vec<f64> {
            let w = obj.descriptor_width();
            let mut mean = vec![0.0; w];
            for kp in obj.keypoints() {
                for (m, d) in mean.iter_mut().zip(&kp.descriptor) {
                    *m += d;
                }
            }
            normalize_in_place(&mut mean);
            mean
        };
        let sim_at_gap = |d: usize| -> f64 {
            let mut total = 0.0;
            let mut count = 0;
            for o in 0..4 {
                let a = pooled(&frames[0][o]);
                let b = pooled(&frames[d][o]);
                total += a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
                count += 1;
            }
            total / count as f64
        };
        let (s1, s10, s20) = (sim_at_gap(1), sim_at_gap(10), sim_at_gap(20));
        assert!(s1 > s10 && s10 > s20, "{s1} {s10} {s20}");
    }

    #[test]
    fn reobserve_keeps_ids_and_changes_frame() {
        let cfg = SynthConfig::default();
        let frame = gen_frame(&cfg, 4, 7, 90).unwrap();
        assert_eq!(frame.len(), 4);
        for obj in &frame {
            assert_eq!(obj.frame_id(), 7);
        }
        let revisit = reobserve_frame(&AugmentationParams::default(), &frame, 99, 5).unwrap();
        for (a, b) in frame.iter().zip(&revisit) {
            assert_eq!(a.object_id(), b.object_id());
            assert_eq!(b.frame_id(), 99);
        }
    }

    #[test]
    fn homography_identity_round_trip() {
        let h = Homography::identity();
        assert_eq!(h.apply([3.0, 4.0]), Some([3.0, 4.0]));
        assert_eq!(h.determinant(), 1.0);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = SynthConfig::default();
        cfg.common_fraction = 1.5;
        assert!(cfg.validate().is_err());
        let mut aug = AugmentationParams::default();
        aug.dropout = 1.0;
        assert!(aug.validate().is_err());
        let mut seq = SequenceConfig::default();
        seq.visibility = 0.0;
        assert!(seq.validate().is_err());
    }
}
