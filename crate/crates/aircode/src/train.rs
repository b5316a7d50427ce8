//! RMSprop training loop over labeled pair batches.
//!
//! Each step draws a fresh synthetic batch from the step-derived seed,
//! builds the loss graph, runs one backward sweep, and applies RMSprop per
//! parameter tensor. The run is a pure function of its configuration.

use crate::error::{Error, Result};
use crate::loss::{total_loss_on_tape, LossBreakdown, LossMargins, LossWeights, PairLabel};
use crate::model::{bind_params, HeadKind, ModelDims, ModelParams, ObjectInstance};
use crate::seed;
use crate::synth::{make_pair_batch, AugmentationParams, PairBatch, SynthConfig};
use crate::tensor::Tape;
use serde::{Deserialize, Serialize};

const SALT_STEP: u64 = 0x7374;

/// Everything that determines a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    /// Labeled pairs per batch; encoded objects number `2 * positive_pairs`
    /// plus any extra negatives-only identities.
    pub batch_pairs: usize,
    pub positive_pairs: usize,
    pub learning_rate: f64,
    /// RMSprop moving-average factor for squared gradients.
    pub rho: f64,
    pub epsilon: f64,
    pub weights: LossWeights,
    pub margins: LossMargins,
    /// `Dense` swaps the dual-branch sparsity layer for one affine layer.
    pub head: HeadKind,
    /// Removes the sparse and dense loss terms while keeping the head.
    pub disable_sparse_dense_losses: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 2000,
            batch_pairs: 16,
            positive_pairs: 4,
            learning_rate: 1e-5,
            rho: 0.99,
            epsilon: 1e-8,
            weights: LossWeights::default(),
            margins: LossMargins::default(),
            head: HeadKind::Sparse,
            disable_sparse_dense_losses: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_pairs == 0 || self.positive_pairs > self.batch_pairs {
            return Err(Error::contract(format!(
                "pair split {}/{} is invalid",
                self.positive_pairs, self.batch_pairs
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::contract("rho must lie in [0, 1)"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::contract("epsilon must be positive"));
        }
        self.weights.validate()?;
        self.margins.validate()
    }

    pub fn negative_pairs(&self) -> usize {
        self.batch_pairs - self.positive_pairs
    }

    /// Weights actually applied, after the ablation flag.
    pub fn effective_weights(&self) -> LossWeights {
        if self.disable_sparse_dense_losses {
            self.weights.without_sparse_dense()
        } else {
            self.weights
        }
    }
}

/// Per-tensor squared-gradient accumulators, aligned by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    entries: Vec<(String, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            entries: params
                .named()
                .into_iter()
                .map(|(name, t)| (name, vec![0.0; t.len()]))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(String, Vec<f64>)] {
        &self.entries
    }
}

/// One RMSprop update:
/// `state = rho * state + (1 - rho) * g^2`,
/// `param = param - lr * g / (sqrt(state) + eps)`.
pub fn rmsprop_update(
    param: &mut [f64],
    grad: &[f64],
    state: &mut [f64],
    lr: f64,
    rho: f64,
    eps: f64,
) {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), state.len());
    for ((p, g), s) in param.iter_mut().zip(grad).zip(state.iter_mut()) {
        *s = rho * *s + (1.0 - rho) * g * g;
        *p -= lr * g / (s.sqrt() + eps);
    }
}

/// Applies RMSprop across every parameter tensor. `grads` is aligned with
/// [`ModelParams::named`] order; `None` entries mean a zero gradient (the
/// accumulator still decays).
pub fn rmsprop_step(
    params: &mut ModelParams,
    grads: &[Option<crate::tensor::Tensor>],
    state: &mut OptimizerState,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    let named = params.named_mut();
    if named.len() != grads.len() || named.len() != state.entries.len() {
        return Err(Error::contract(format!(
            "optimizer state or gradient count mismatch: {} parameters, {} gradients, {} states",
            named.len(),
            grads.len(),
            state.entries.len()
        )));
    }
    for ((name, tensor), (grad, (state_name, slot))) in named
        .into_iter()
        .zip(grads.iter().zip(state.entries.iter_mut()))
    {
        if &name != state_name {
            return Err(Error::contract(format!(
                "optimizer state out of order: `{state_name}` vs parameter `{name}`"
            )));
        }
        match grad {
            Some(g) => {
                if g.shape() != tensor.shape() {
                    return Err(Error::contract(format!(
                        "gradient shape {:?} does not match parameter `{name}` {:?}",
                        g.shape(),
                        tensor.shape()
                    )));
                }
                rmsprop_update(tensor.data_mut(), g.data(), slot, lr, rho, eps);
            }
            None => {
                for s in slot.iter_mut() {
                    *s *= rho;
                }
            }
        }
    }
    Ok(())
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub positive: f64,
    pub negative: f64,
    pub sparse: f64,
    pub dense: f64,
    pub total: f64,
}

impl TraceRow {
    fn from_breakdown(step: usize, b: &LossBreakdown) -> Self {
        TraceRow {
            step,
            positive: b.positive,
            negative: b.negative,
            sparse: b.sparse,
            dense: b.dense,
            total: b.total,
        }
    }
}

/// A finished run: final parameters plus the per-step loss trace.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
}

/// Trains on synthetic pair batches drawn from `synth`/`augment`.
pub fn train(
    config: &TrainConfig,
    dims: &ModelDims,
    synth: &SynthConfig,
    augment: &AugmentationParams,
) -> Result<TrainOutcome> {
    train_with(config, dims, synth, augment, |_, _, _| Ok(()))
}

/// [`train`] with a per-step observer (called after the update with the new
/// parameters; errors abort the run).
pub fn train_with(
    config: &TrainConfig,
    dims: &ModelDims,
    synth: &SynthConfig,
    augment: &AugmentationParams,
    on_step: impl FnMut(usize, &ModelParams, &TraceRow) -> Result<()>,
) -> Result<TrainOutcome> {
    synth.validate()?;
    augment.validate()?;
    if synth.descriptor_width != dims.n_p {
        return Err(Error::contract(format!(
            "synthetic descriptor width {} does not match model n_p {}",
            synth.descriptor_width, dims.n_p
        )));
    }
    let n_pos = config.positive_pairs;
    let n_neg = config.negative_pairs();
    let root = config.seed;
    let synth = *synth;
    let augment = *augment;
    train_with_batches(
        config,
        dims,
        move |step| {
            make_pair_batch(
                &synth,
                &augment,
                n_pos,
                n_neg,
                seed::derive2(root, SALT_STEP, step as u64),
            )
        },
        on_step,
    )
}

/// Core loop over caller-supplied batches (one call per step).
pub fn train_with_batches(
    config: &TrainConfig,
    dims: &ModelDims,
    mut next_batch: impl FnMut(usize) -> Result<PairBatch>,
    mut on_step: impl FnMut(usize, &ModelParams, &TraceRow) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    dims.validate()?;
    let weights = config.effective_weights();
    let mut params = ModelParams::init(*dims, config.head, config.seed)?;
    let mut state = OptimizerState::new(&params);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = next_batch(step)?;
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, &params);
        let refs: Vec<&ObjectInstance> = batch.objects.iter().collect();
        let graph = total_loss_on_tape(&mut tape, &pv, &refs, &batch.pairs, &weights, &config.margins)?;
        let breakdown = graph.breakdown(&tape)?;
        for (component, value) in [
            ("positive", breakdown.positive),
            ("negative", breakdown.negative),
            ("sparse", breakdown.sparse),
            ("dense", breakdown.dense),
            ("total", breakdown.total),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    component: component.to_string(),
                });
            }
        }
        let mut grads = tape.backward(graph.total)?;
        let per_param: Vec<Option<crate::tensor::Tensor>> = pv
            .named()
            .into_iter()
            .map(|(_, var)| grads.take(var))
            .collect();
        // Release the tape's shared handles on the parameter buffers so the
        // optimizer writes in place instead of copying on write.
        drop(tape);
        rmsprop_step(
            &mut params,
            &per_param,
            &mut state,
            config.learning_rate,
            config.rho,
            config.epsilon,
        )?;
        let row = TraceRow::from_breakdown(step, &breakdown);
        on_step(step, &params, &row)?;
        trace.push(row);
    }
    Ok(TrainOutcome { params, trace })
}

/// Draws pair batches from a fixed pool of observations, for training from a
/// key-point file instead of the synthetic generator.
///
/// Positives pair two observations sharing an object id; negatives pair
/// observations of distinct ids. Sampling is a pure function of the seed and
/// step, so a pool plus a seed defines the whole batch stream.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pool: Vec<ObjectInstance>,
    groups: Vec<Vec<usize>>,
    multi: Vec<usize>,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
}

const SALT_POOL: u64 = 0x706f;

impl PairSampler {
    pub fn new(objects: &[ObjectInstance], n_pos: usize, n_neg: usize, seed: u64) -> Result<Self> {
        if n_pos + n_neg == 0 {
            return Err(Error::contract("a batch needs at least one pair"));
        }
        let mut by_id: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
        for (i, obj) in objects.iter().enumerate() {
            by_id.entry(obj.object_id()).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = by_id.into_values().collect();
        let multi: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.len() >= 2)
            .map(|(i, _)| i)
            .collect();
        if n_pos > 0 && multi.is_empty() {
            return Err(Error::contract(
                "positive pairs need an object observed in at least two frames",
            ));
        }
        if n_neg > 0 && groups.len() < 2 {
            return Err(Error::contract(
                "negative pairs need at least two distinct object ids",
            ));
        }
        Ok(PairSampler {
            pool: objects.to_vec(),
            groups,
            multi,
            n_pos,
            n_neg,
            seed,
        })
    }

    /// The batch for one training step.
    pub fn batch(&self, step: usize) -> Result<PairBatch> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed::derive2(
            self.seed,
            SALT_POOL,
            step as u64,
        ));
        let mut objects: Vec<ObjectInstance> = Vec::new();
        let mut position: std::collections::BTreeMap<usize, usize> = Default::default();
        let mut place = |pool_index: usize, objects: &mut Vec<ObjectInstance>| -> usize {
            *position.entry(pool_index).or_insert_with(|| {
                objects.push(self.pool[pool_index].clone());
                objects.len() - 1
            })
        };
        let mut pairs = Vec::with_capacity(self.n_pos + self.n_neg);
        for _ in 0..self.n_pos {
            let group = &self.groups[self.multi[rng.random_range(0..self.multi.len())]];
            let a = rng.random_range(0..group.len());
            let mut b = rng.random_range(0..group.len() - 1);
            if b >= a {
                b += 1;
            }
            let a = place(group[a], &mut objects);
            let b = place(group[b], &mut objects);
            pairs.push(PairLabel::positive(a, b));
        }
        for _ in 0..self.n_neg {
            let ga = rng.random_range(0..self.groups.len());
            let mut gb = rng.random_range(0..self.groups.len() - 1);
            if gb >= ga {
                gb += 1;
            }
            let a = self.groups[ga][rng.random_range(0..self.groups[ga].len())];
            let b = self.groups[gb][rng.random_range(0..self.groups[gb].len())];
            let a = place(a, &mut objects);
            let b = place(b, &mut objects);
            pairs.push(PairLabel::negative(a, b));
        }
        Ok(PairBatch { objects, pairs })
    }
}
