//! Graph encoder: node embedding, attention propagation, dual-branch
//! sparsity, and symmetric aggregation into one descriptor per object.
//!
//! Batches stack the key-points of several objects into one row block so the
//! heavy projections run as large matrix products; attention and aggregation
//! stay per-object through row ranges.

use super::{HeadParams, LinearParams, ModelParams, ObjectDescriptor, ObjectInstance};
use crate::error::{Error, Result};
use crate::model::BoundingBox;
use crate::tensor::{Tape, Tensor, Var};
use std::ops::Range;

/// Objects encoded per tape when bulk-encoding; bounds peak memory.
const ENCODE_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub query: LinearVars,
    pub key: LinearVars,
    pub value: LinearVars,
    pub update_hidden: LinearVars,
    pub update_out: LinearVars,
}

#[derive(Debug, Clone)]
pub enum HeadVars {
    Sparse {
        location: [LinearVars; 2],
        content: [LinearVars; 2],
    },
    Dense { fc: LinearVars },
}

/// Model parameters bound onto a tape as leaf variables.
#[derive(Debug, Clone)]
pub struct ParamVars {
    dims: super::ModelDims,
    pub pos_mlp: [LinearVars; 3],
    pub attention: Vec<AttentionVars>,
    pub head: HeadVars,
    pub output: LinearVars,
}

impl ParamVars {
    pub fn dims(&self) -> &super::ModelDims {
        &self.dims
    }

    /// Leaf variables with their parameter names, in [`ModelParams::named`]
    /// order.
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        let push = |out: &mut Vec<(String, Var)>, prefix: String, lin: &LinearVars| {
            out.push((format!("{prefix}.weight"), lin.weight));
            if let Some(b) = lin.bias {
                out.push((format!("{prefix}.bias"), b));
            }
        };
        for (i, lin) in self.pos_mlp.iter().enumerate() {
            push(&mut out, format!("pos_mlp.{i}"), lin);
        }
        for (i, att) in self.attention.iter().enumerate() {
            push(&mut out, format!("attention.{i}.query"), &att.query);
            push(&mut out, format!("attention.{i}.key"), &att.key);
            push(&mut out, format!("attention.{i}.value"), &att.value);
            push(&mut out, format!("attention.{i}.update_hidden"), &att.update_hidden);
            push(&mut out, format!("attention.{i}.update_out"), &att.update_out);
        }
        match &self.head {
            HeadVars::Sparse { location, content } => {
                for (i, lin) in location.iter().enumerate() {
                    push(&mut out, format!("head.location.{i}"), lin);
                }
                for (i, lin) in content.iter().enumerate() {
                    push(&mut out, format!("head.content.{i}"), lin);
                }
            }
            HeadVars::Dense { fc } => push(&mut out, "head.fc".into(), fc),
        }
        push(&mut out, "output".into(), &self.output);
        out
    }
}

fn bind_linear(tape: &mut Tape, lin: &LinearParams) -> LinearVars {
    LinearVars {
        weight: tape.leaf(lin.weight.clone()),
        bias: lin.bias.as_ref().map(|b| tape.leaf(b.clone())),
    }
}

/// Copies every parameter tensor onto the tape as a leaf.
pub fn bind_params(tape: &mut Tape, params: &ModelParams) -> ParamVars {
    let pos_mlp = [
        bind_linear(tape, &params.pos_mlp[0]),
        bind_linear(tape, &params.pos_mlp[1]),
        bind_linear(tape, &params.pos_mlp[2]),
    ];
    let attention = params
        .attention
        .iter()
        .map(|att| AttentionVars {
            query: bind_linear(tape, &att.query),
            key: bind_linear(tape, &att.key),
            value: bind_linear(tape, &att.value),
            update_hidden: bind_linear(tape, &att.update_hidden),
            update_out: bind_linear(tape, &att.update_out),
        })
        .collect();
    let head = match &params.head {
        HeadParams::Sparse { location, content } => HeadVars::Sparse {
            location: [
                bind_linear(tape, &location[0]),
                bind_linear(tape, &location[1]),
            ],
            content: [
                bind_linear(tape, &content[0]),
                bind_linear(tape, &content[1]),
            ],
        },
        HeadParams::Dense { fc } => HeadVars::Dense {
            fc: bind_linear(tape, fc),
        },
    };
    let output = bind_linear(tape, &params.output);
    ParamVars {
        dims: *params.dims(),
        pos_mlp,
        attention,
        head,
        output,
    }
}

/// `x . W^T (+ bias)` for `[out x in]` weights.
fn linear(tape: &mut Tape, x: Var, lin: &LinearVars) -> Result<Var> {
    let y = tape.matmul_nt(x, lin.weight)?;
    match lin.bias {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

/// Maps a pixel position into the box-centered frame: the box center goes to
/// the origin and each edge to plus or minus one along its axis.
pub fn normalize_position(p: [f64; 2], bbox: &BoundingBox) -> [f64; 2] {
    let c = bbox.center();
    [
        (p[0] - c[0]) * 2.0 / bbox.width,
        (p[1] - c[1]) * 2.0 / bbox.height,
    ]
}

/// Everything produced by one encoder pass over a batch of objects.
///
/// `ranges` gives each object's row span inside the stacked per-key-point
/// tensors. `location`/`content` are the sparsity branch outputs (absent for
/// the dense-head ablation). `pre_projection` holds one aggregated row per
/// object before the output projection; `descriptors` the final unit rows.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub ranges: Vec<Range<usize>>,
    pub nodes: Var,
    pub location: Option<Var>,
    pub content: Option<Var>,
    pub pre_projection: Var,
    pub descriptors: Var,
}

impl EncodedBatch {
    /// Copies the final descriptors out of the tape, one per object.
    pub fn descriptor_vecs(&self, tape: &Tape) -> Result<Vec<ObjectDescriptor>> {
        let t = tape.value(self.descriptors);
        let (rows, cols) = t.dims2()?;
        (0..rows)
            .map(|r| ObjectDescriptor::new(t.data()[r * cols..(r + 1) * cols].to_vec()))
            .collect()
    }
}

/// Stacks every object's key-points into `[total x n_n]` node embeddings:
/// the raw descriptor concatenated with the positional MLP output.
fn encode_nodes(
    tape: &mut Tape,
    pv: &ParamVars,
    objects: &[&ObjectInstance],
) -> Result<(Var, Vec<Range<usize>>)> {
    let n_p = pv.dims.n_p;
    let mut ranges = Vec::with_capacity(objects.len());
    let mut total = 0usize;
    for obj in objects {
        if obj.descriptor_width() != n_p {
            return Err(Error::contract(format!(
                "object {}: key-point descriptor width {} does not match model n_p {}",
                obj.object_id(),
                obj.descriptor_width(),
                n_p
            )));
        }
        let m = obj.keypoints().len();
        ranges.push(total..total + m);
        total += m;
    }
    if total == 0 {
        return Err(Error::contract("encode needs at least one object"));
    }
    let mut pos = Vec::with_capacity(total * 2);
    let mut desc = Vec::with_capacity(total * n_p);
    for obj in objects {
        for kp in obj.keypoints() {
            pos.extend_from_slice(&normalize_position(kp.position, obj.bbox()));
            desc.extend_from_slice(&kp.descriptor);
        }
    }
    let pos = tape.leaf(Tensor::matrix(total, 2, pos)?);
    let desc = tape.leaf(Tensor::matrix(total, n_p, desc)?);
    let h = linear(tape, pos, &pv.pos_mlp[0])?;
    let h = tape.relu(h)?;
    let h = linear(tape, h, &pv.pos_mlp[1])?;
    let h = tape.relu(h)?;
    let pos_feat = linear(tape, h, &pv.pos_mlp[2])?;
    let nodes = tape.concat_cols(desc, pos_feat)?;
    Ok((nodes, ranges))
}

/// Raw attention score matrix for one object's nodes: entry `(i, j)` is the
/// dot product of query projection of node `i` with key projection of node
/// `j`. Scaling and softmax happen in the propagation step.
pub fn attention_scores(tape: &mut Tape, layer: &AttentionVars, nodes: Var) -> Result<Var> {
    let q = linear(tape, nodes, &layer.query)?;
    let k = linear(tape, nodes, &layer.key)?;
    tape.matmul_nt(q, k)
}

/// One attention layer over every object: messages are value projections
/// mixed by row-softmaxed scaled scores, folded back through a residual MLP.
fn propagate_layer(
    tape: &mut Tape,
    layer: &AttentionVars,
    x: Var,
    ranges: &[Range<usize>],
    n_n: usize,
) -> Result<Var> {
    // Project the whole row block once; scores stay per-object on slices.
    let q_all = linear(tape, x, &layer.query)?;
    let k_all = linear(tape, x, &layer.key)?;
    let v_all = linear(tape, x, &layer.value)?;
    let scale = 1.0 / (n_n as f64).sqrt();
    let mut messages = Vec::with_capacity(ranges.len());
    for r in ranges {
        let qs = tape.slice_rows(q_all, r.start, r.len())?;
        let ks = tape.slice_rows(k_all, r.start, r.len())?;
        let scores = tape.matmul_nt(qs, ks)?;
        let scaled = tape.scale(scores, scale)?;
        let attn = tape.softmax_rows(scaled)?;
        let vs = tape.slice_rows(v_all, r.start, r.len())?;
        messages.push(tape.matmul(attn, vs)?);
    }
    let msg = tape.concat_rows(&messages)?;
    let cat = tape.concat_cols(x, msg)?;
    let h = linear(tape, cat, &layer.update_hidden)?;
    let h = tape.relu(h)?;
    let upd = linear(tape, h, &layer.update_out)?;
    tape.add(x, upd)
}

/// Dual-branch sparsity layer: location and content branches, each two
/// bias-free linear+ReLU stages over the same node embeddings.
pub fn sparsity_forward(tape: &mut Tape, head: &HeadVars, nodes: Var) -> Result<(Var, Var)> {
    let branch = |tape: &mut Tape, stages: &[LinearVars; 2]| -> Result<Var> {
        let h = linear(tape, nodes, &stages[0])?;
        let h = tape.relu(h)?;
        let y = linear(tape, h, &stages[1])?;
        tape.relu(y)
    };
    match head {
        HeadVars::Sparse { location, content } => {
            Ok((branch(tape, location)?, branch(tape, content)?))
        }
        HeadVars::Dense { .. } => Err(Error::contract(
            "sparsity_forward needs the dual-branch head, model has the dense ablation head",
        )),
    }
}

/// Sums rows per object and stacks the results into `[batch x width]`.
fn aggregate_rows(tape: &mut Tape, rows: Var, ranges: &[Range<usize>]) -> Result<Var> {
    let mut per_object = Vec::with_capacity(ranges.len());
    for r in ranges {
        let slice = tape.slice_rows(rows, r.start, r.len())?;
        per_object.push(tape.sum_rows(slice)?);
    }
    tape.concat_rows(&per_object)
}

/// Head, aggregation, projection, and normalization over propagated nodes.
/// Returns `(location, content, pre_projection, descriptors)`.
fn head_and_project(
    tape: &mut Tape,
    pv: &ParamVars,
    nodes: Var,
    ranges: &[Range<usize>],
) -> Result<(Option<Var>, Option<Var>, Var, Var)> {
    let (location, content, pre) = match &pv.head {
        HeadVars::Sparse { .. } => {
            let (loc, con) = sparsity_forward(tape, &pv.head, nodes)?;
            let prod = tape.mul(loc, con)?;
            let pre = aggregate_rows(tape, prod, ranges)?;
            (Some(loc), Some(con), pre)
        }
        HeadVars::Dense { fc } => {
            let y = linear(tape, nodes, fc)?;
            let pre = aggregate_rows(tape, y, ranges)?;
            (None, None, pre)
        }
    };
    let proj = linear(tape, pre, &pv.output)?;
    let descriptors = tape.l2_normalize_rows(proj)?;
    Ok((location, content, pre, descriptors))
}

/// Full encoder pass. The descriptor of each object is
/// `normalize(W_o . sum_i(location_i * content_i) + b_o)`, which is invariant
/// to key-point order because only the unordered sum crosses nodes.
pub fn encode_batch(
    tape: &mut Tape,
    pv: &ParamVars,
    objects: &[&ObjectInstance],
) -> Result<EncodedBatch> {
    let (mut nodes, ranges) = encode_nodes(tape, pv, objects)?;
    let n_n = pv.dims.n_n();
    let layers = pv.attention.clone();
    for layer in &layers {
        nodes = propagate_layer(tape, layer, nodes, &ranges, n_n)?;
    }
    let (location, content, pre, descriptors) = head_and_project(tape, pv, nodes, &ranges)?;
    Ok(EncodedBatch {
        ranges,
        nodes,
        location,
        content,
        pre_projection: pre,
        descriptors,
    })
}

/// Wall-clock split of one single-object encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncodeTimings {
    /// Node embedding: positional MLP plus concatenation.
    pub node: std::time::Duration,
    /// All attention propagation layers.
    pub graph: std::time::Duration,
    /// Head branches, aggregation, projection, normalization.
    pub head: std::time::Duration,
    /// Whole call including tape setup and parameter binding.
    pub total: std::time::Duration,
}

/// [`encode_object`] with per-stage wall-clock timings.
pub fn encode_object_timed(
    params: &ModelParams,
    object: &ObjectInstance,
) -> Result<(ObjectDescriptor, EncodeTimings)> {
    use std::time::Instant;
    let started = Instant::now();
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, params);
    let objects = [object];
    let mark = Instant::now();
    let (mut nodes, ranges) = encode_nodes(&mut tape, &pv, &objects)?;
    let node = mark.elapsed();
    let mark = Instant::now();
    let n_n = pv.dims.n_n();
    let layers = pv.attention.clone();
    for layer in &layers {
        nodes = propagate_layer(&mut tape, layer, nodes, &ranges, n_n)?;
    }
    let graph = mark.elapsed();
    let mark = Instant::now();
    let (_, _, _, descriptors) = head_and_project(&mut tape, &pv, nodes, &ranges)?;
    let head = mark.elapsed();
    let value = tape.value(descriptors);
    let (_, cols) = value.dims2()?;
    let descriptor = ObjectDescriptor::new(value.data()[..cols].to_vec())?;
    let total = started.elapsed();
    Ok((
        descriptor,
        EncodeTimings {
            node,
            graph,
            head,
            total,
        },
    ))
}

/// Encodes one object on a private tape.
pub fn encode_object(params: &ModelParams, object: &ObjectInstance) -> Result<ObjectDescriptor> {
    let mut out = encode_objects(params, std::slice::from_ref(object))?;
    Ok(out.remove(0))
}

/// Encodes many objects, chunked to bound tape memory.
pub fn encode_objects(
    params: &ModelParams,
    objects: &[ObjectInstance],
) -> Result<Vec<ObjectDescriptor>> {
    let mut out = Vec::with_capacity(objects.len());
    for chunk in objects.chunks(ENCODE_CHUNK) {
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, params);
        let refs: Vec<&ObjectInstance> = chunk.iter().collect();
        let batch = encode_batch(&mut tape, &pv, &refs)?;
        out.extend(batch.descriptor_vecs(&tape)?);
    }
    Ok(out)
}
