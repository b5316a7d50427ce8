//! Model structure: key-point observations, parameter containers, and the
//! encoder that turns an observation into one fixed-width descriptor.

mod encoder;

pub use encoder::{
    attention_scores, bind_params, encode_batch, encode_object, encode_object_timed,
    encode_objects, normalize_position, sparsity_forward, AttentionVars, EncodeTimings,
    EncodedBatch, HeadVars, LinearVars, ParamVars,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Widths of every stage of the encoder.
///
/// `n_p` is the key-point descriptor width, `n_m` the positional embedding
/// width, so node embeddings have width `n_n() = n_p + n_m`. Both sparsity
/// branches go `n_n -> branch_hidden -> n_o`, and the object descriptor has
/// width `n_o`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub n_p: usize,
    pub n_m: usize,
    pub n_o: usize,
    pub attention_layers: usize,
    pub branch_hidden: usize,
    pub pos_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            n_p: 256,
            n_m: 16,
            n_o: 2048,
            attention_layers: 3,
            branch_hidden: 1024,
            pos_hidden: 32,
        }
    }
}

impl ModelDims {
    /// Node embedding width: descriptor plus positional part.
    pub fn n_n(&self) -> usize {
        self.n_p + self.n_m
    }

    /// Reduced widths for tests that exercise structure rather than capacity.
    pub fn compact() -> Self {
        ModelDims {
            n_p: 6,
            n_m: 4,
            n_o: 12,
            attention_layers: 2,
            branch_hidden: 8,
            pos_hidden: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_p", self.n_p),
            ("n_m", self.n_m),
            ("n_o", self.n_o),
            ("attention_layers", self.attention_layers),
            ("branch_hidden", self.branch_hidden),
            ("pos_hidden", self.pos_hidden),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("model dimension {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Axis-aligned box in pixel coordinates with strictly positive extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        if ![x, y, width, height].iter().all(|v| v.is_finite()) {
            return Err(Error::contract("bounding box fields must be finite"));
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::contract(format!(
                "bounding box extents must be strictly positive, got {width} x {height}"
            )));
        }
        Ok(BoundingBox { x, y, width, height })
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x + self.width / 2.0, self.y + self.height / 2.0]
    }

    /// True when `p` lies inside the box inflated by `tol` on every side.
    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] >= self.x - tol
            && p[0] <= self.x + self.width + tol
            && p[1] >= self.y - tol
            && p[1] <= self.y + self.height + tol
    }
}

/// One detected key-point: pixel position plus appearance descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPoint {
    pub position: [f64; 2],
    pub descriptor: Vec<f64>,
}

/// Tolerance (in pixels) for key-points sitting on the bounding box edge.
pub const BBOX_SLACK: f64 = 0.5;

/// One observation of an object in one frame.
///
/// Invariants, checked at construction: at least one key-point, uniform
/// descriptor width, all positions finite and inside the (slightly inflated)
/// bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    object_id: String,
    frame_id: i64,
    bbox: BoundingBox,
    keypoints: Vec<KeyPoint>,
}

impl ObjectInstance {
    pub fn new(
        object_id: impl Into<String>,
        frame_id: i64,
        bbox: BoundingBox,
        keypoints: Vec<KeyPoint>,
    ) -> Result<Self> {
        let object_id = object_id.into();
        if object_id.is_empty() {
            return Err(Error::contract("object_id must be non-empty"));
        }
        if keypoints.is_empty() {
            return Err(Error::contract(format!(
                "object {object_id}: needs at least one key-point"
            )));
        }
        let width = keypoints[0].descriptor.len();
        if width == 0 {
            return Err(Error::contract(format!(
                "object {object_id}: key-point descriptors must be non-empty"
            )));
        }
        for (i, kp) in keypoints.iter().enumerate() {
            if kp.descriptor.len() != width {
                return Err(Error::contract(format!(
                    "object {object_id}: key-point {i} descriptor width {} differs from {width}",
                    kp.descriptor.len()
                )));
            }
            if !kp.position.iter().all(|v| v.is_finite())
                || !kp.descriptor.iter().all(|v| v.is_finite())
            {
                return Err(Error::contract(format!(
                    "object {object_id}: key-point {i} has non-finite values"
                )));
            }
            if !bbox.contains(kp.position, BBOX_SLACK) {
                return Err(Error::contract(format!(
                    "object {object_id}: key-point {i} at ({}, {}) lies outside the bounding box",
                    kp.position[0], kp.position[1]
                )));
            }
        }
        Ok(ObjectInstance {
            object_id,
            frame_id,
            bbox,
            keypoints,
        })
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn frame_id(&self) -> i64 {
        self.frame_id
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn keypoints(&self) -> &[KeyPoint] {
        &self.keypoints
    }

    pub fn descriptor_width(&self) -> usize {
        self.keypoints[0].descriptor.len()
    }

    /// Same observation with a different frame id.
    pub fn with_frame_id(mut self, frame_id: i64) -> Self {
        self.frame_id = frame_id;
        self
    }
}

/// Norm tolerance accepted when ingesting descriptors (covers the f32
/// round-trip of the on-disk store).
pub const DESCRIPTOR_NORM_TOL: f64 = 1e-6;

/// Fixed-width object descriptor; unit L2 norm, or exactly zero when the
/// encoder aggregate collapsed to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDescriptor {
    data: Vec<f64>,
}

impl ObjectDescriptor {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::contract("object descriptor must be non-empty"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("object descriptor has non-finite values"));
        }
        let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm != 0.0 && (norm - 1.0).abs() > DESCRIPTOR_NORM_TOL {
            return Err(Error::contract(format!(
                "object descriptor norm {norm} is neither unit nor zero"
            )));
        }
        Ok(ObjectDescriptor { data })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// One affine map stored as `[out x in]` plus optional `[1 x out]` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// One attention layer: score/value projections and the residual update MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub update_hidden: LinearParams,
    pub update_out: LinearParams,
}

/// Final per-node stage before aggregation.
///
/// `Sparse` is the dual-branch layer: location and content branches, each two
/// bias-free linear+ReLU layers over the same input. `Dense` replaces it with
/// one affine layer (the non-sparse ablation).
#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Sparse {
        location: [LinearParams; 2],
        content: [LinearParams; 2],
    },
    Dense { fc: LinearParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Sparse,
    Dense,
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    pub pos_mlp: [LinearParams; 3],
    pub attention: Vec<AttentionParams>,
    pub head: HeadParams,
    pub output: LinearParams,
}

impl ModelParams {
    /// Xavier-uniform weights (`limit = sqrt(6 / (fan_in + fan_out))`), zero
    /// biases. The fill order is the order of [`ModelParams::named`], so a
    /// seed pins every parameter.
    pub fn init(dims: ModelDims, head: HeadKind, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut linear = |inp: usize, out: usize, bias: bool| -> LinearParams {
            let limit = (6.0 / (inp + out) as f64).sqrt();
            let data: Vec<f64> = (0..out * inp).map(|_| rng.random_range(-limit..=limit)).collect();
            LinearParams {
                weight: Tensor::matrix(out, inp, data).expect("sized buffer"),
                bias: bias.then(|| Tensor::zeros(1, out)),
            }
        };
        let n_n = dims.n_n();
        let pos_mlp = [
            linear(2, dims.pos_hidden, true),
            linear(dims.pos_hidden, dims.pos_hidden, true),
            linear(dims.pos_hidden, dims.n_m, true),
        ];
        let attention = (0..dims.attention_layers)
            .map(|_| AttentionParams {
                query: linear(n_n, n_n, true),
                key: linear(n_n, n_n, true),
                value: linear(n_n, n_n, true),
                update_hidden: linear(2 * n_n, 2 * n_n, true),
                update_out: linear(2 * n_n, n_n, true),
            })
            .collect();
        let head = match head {
            HeadKind::Sparse => HeadParams::Sparse {
                location: [
                    linear(n_n, dims.branch_hidden, false),
                    linear(dims.branch_hidden, dims.n_o, false),
                ],
                content: [
                    linear(n_n, dims.branch_hidden, false),
                    linear(dims.branch_hidden, dims.n_o, false),
                ],
            },
            HeadKind::Dense => HeadParams::Dense {
                fc: linear(n_n, dims.n_o, true),
            },
        };
        let output = linear(dims.n_o, dims.n_o, true);
        Ok(ModelParams {
            dims,
            pos_mlp,
            attention,
            head,
            output,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.head {
            HeadParams::Sparse { .. } => HeadKind::Sparse,
            HeadParams::Dense { .. } => HeadKind::Dense,
        }
    }

    /// Rebuilds a parameter set from dims, head kind, and a name/tensor list
    /// (the checkpoint loader path). Every expected tensor must be present
    /// with the right shape.
    pub fn from_named(
        dims: ModelDims,
        head: HeadKind,
        mut tensors: std::collections::BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut template = ModelParams::init(dims, head, 0)?;
        for (name, slot) in template.named_mut() {
            let tensor = tensors.remove(&name).ok_or_else(|| {
                Error::contract(format!("checkpoint is missing parameter `{name}`"))
            })?;
            if tensor.shape() != slot.shape() {
                return Err(Error::contract(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::contract(format!(
                "checkpoint has unexpected parameter `{extra}`"
            )));
        }
        Ok(template)
    }

    /// Every parameter tensor with its stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        fn push_linear<'a>(
            out: &mut Vec<(String, &'a Tensor)>,
            prefix: String,
            lin: &'a LinearParams,
        ) {
            out.push((format!("{prefix}.weight"), &lin.weight));
            if let Some(b) = &lin.bias {
                out.push((format!("{prefix}.bias"), b));
            }
        }
        for (i, lin) in self.pos_mlp.iter().enumerate() {
            push_linear(&mut out, format!("pos_mlp.{i}"), lin);
        }
        for (i, att) in self.attention.iter().enumerate() {
            push_linear(&mut out, format!("attention.{i}.query"), &att.query);
            push_linear(&mut out, format!("attention.{i}.key"), &att.key);
            push_linear(&mut out, format!("attention.{i}.value"), &att.value);
            push_linear(&mut out, format!("attention.{i}.update_hidden"), &att.update_hidden);
            push_linear(&mut out, format!("attention.{i}.update_out"), &att.update_out);
        }
        match &self.head {
            HeadParams::Sparse { location, content } => {
                for (i, lin) in location.iter().enumerate() {
                    push_linear(&mut out, format!("head.location.{i}"), lin);
                }
                for (i, lin) in content.iter().enumerate() {
                    push_linear(&mut out, format!("head.content.{i}"), lin);
                }
            }
            HeadParams::Dense { fc } => push_linear(&mut out, "head.fc".into(), fc),
        }
        push_linear(&mut out, "output".into(), &self.output);
        out
    }

    /// Mutable counterpart of [`ModelParams::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        fn push_linear<'a>(
            out: &mut Vec<(String, &'a mut Tensor)>,
            prefix: String,
            lin: &'a mut LinearParams,
        ) {
            out.push((format!("{prefix}.weight"), &mut lin.weight));
            if let Some(b) = &mut lin.bias {
                out.push((format!("{prefix}.bias"), b));
            }
        }
        for (i, lin) in self.pos_mlp.iter_mut().enumerate() {
            push_linear(&mut out, format!("pos_mlp.{i}"), lin);
        }
        for (i, att) in self.attention.iter_mut().enumerate() {
            push_linear(&mut out, format!("attention.{i}.query"), &mut att.query);
            push_linear(&mut out, format!("attention.{i}.key"), &mut att.key);
            push_linear(&mut out, format!("attention.{i}.value"), &mut att.value);
            push_linear(&mut out, format!("attention.{i}.update_hidden"), &mut att.update_hidden);
            push_linear(&mut out, format!("attention.{i}.update_out"), &mut att.update_out);
        }
        match &mut self.head {
            HeadParams::Sparse { location, content } => {
                for (i, lin) in location.iter_mut().enumerate() {
                    push_linear(&mut out, format!("head.location.{i}"), lin);
                }
                for (i, lin) in content.iter_mut().enumerate() {
                    push_linear(&mut out, format!("head.content.{i}"), lin);
                }
            }
            HeadParams::Dense { fc } => push_linear(&mut out, "head.fc".into(), fc),
        }
        push_linear(&mut out, "output".into(), &mut self.output);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}
