//! Training: Adam, the mini-batch loop, and a synthetic dataset generator.
//!
//! Each iteration samples `batch_size` videos uniformly with replacement,
//! runs forward and backward per video (videos have different lengths, so
//! there is no padding), averages the gradients in batch order and takes
//! one Adam step. Per-video work may run on several threads; the reduction
//! order is fixed, so results do not depend on the thread count.

mod adam;
mod synth;

pub use adam::{adam_step, adam_step_model, AdamConfig, AdamState};
pub use synth::{synth_generate, SyntheticDataset, SyntheticSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{total_loss_var, LabelVector, LossBreakdown, LossHyper, OrderMargin};
use crate::model::{self, ClipFeatureSequence, ModelDims, ModelParams};
use crate::tensor::{grad_check_many, GradCheckReport, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub s: usize,
    pub p: f64,
    pub q: f64,
    pub lambda_weight: f64,
    pub activation_threshold: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Use the `l/q` ordering margin instead of `1/q`.
    pub literal_eq5: bool,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            iterations: 10_000,
            s: 3,
            p: 1000.0,
            q: 10.0,
            lambda_weight: 0.8,
            activation_threshold: 0.5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden_size: 256,
            num_layers: 3,
            literal_eq5: false,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn loss_hyper(&self) -> LossHyper {
        LossHyper {
            s: self.s,
            p: self.p,
            q: self.q,
            activation_threshold: self.activation_threshold,
            lambda_weight: self.lambda_weight,
            order_margin: if self.literal_eq5 {
                OrderMargin::Literal
            } else {
                OrderMargin::Normalized
            },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn dims(&self, input_dim: usize, n_ia: usize, n_ua: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
            n_ia,
            n_ua,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train config", msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return bad("batch_size and iterations must be positive".into());
        }
        if self.hidden_size == 0 || self.num_layers == 0 {
            return bad("hidden_size and num_layers must be positive".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        self.loss_hyper().validate()
    }
}

/// One training video.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: ClipFeatureSequence,
    pub label: LabelVector,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub l_cls_ia: f64,
    pub l_cls_ua: f64,
    pub l_overlap: f64,
    pub l_order: f64,
    pub total: f64,
}

impl LogRecord {
    pub fn new(iter: usize, b: LossBreakdown) -> Self {
        Self {
            iter,
            l_cls_ia: b.l_cls_ia,
            l_cls_ua: b.l_cls_ua,
            l_overlap: b.l_overlap,
            l_order: b.l_order,
            total: b.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<LogRecord>,
}

/// Loss breakdown and per-tensor gradients of one video.
pub fn video_gradient(
    params: &ModelParams,
    sample: &Sample,
    hyper: &LossHyper,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(sample.features.features().clone());
    let out = model::forward(&mut tape, x, &bound)?;
    let loss = total_loss_var(&mut tape, &out, sample.label, hyper)?;
    let breakdown = loss.values(&tape)?;
    tape.backward(loss.total)?;
    let grads = bound
        .entries()
        .into_iter()
        .zip(params.entries())
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], Tensor::into_data))
        .collect();
    Ok((breakdown, grads))
}

/// Central-difference check of the total loss gradient with respect to
/// every model parameter and the input features of one video.
pub fn check_loss_gradients(
    params: &ModelParams,
    sample: &Sample,
    hyper: &LossHyper,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut inputs = vec![sample.features.features().clone()];
    inputs.extend(params.entries().into_iter().cloned());
    let objective = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let mut rest = vars[1..].iter();
        let bound = params.map(|_, _| *rest.next().expect("one var per tensor"));
        let out = model::forward(tape, vars[0], &bound)?;
        Ok(total_loss_var(tape, &out, sample.label, hyper)?.total)
    };
    grad_check_many(objective, &inputs, eps)
}

/// Runs `config.iterations` Adam steps. `on_iteration` sees every log
/// record together with the parameters after that step.
pub fn train(
    samples: &[Sample],
    mut params: ModelParams,
    config: &TrainConfig,
    mut on_iteration: impl FnMut(&LogRecord, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("train", "dataset is empty"));
    }
    let dims = params.dims()?;
    for s in samples {
        s.label
            .validate(dims.n_ia, dims.n_ua)
            .map_err(|e| Error::invalid(&s.features.video_id, e.to_string()))?;
        if s.features.feature_dim() != dims.input_dim {
            return Err(Error::Dimension {
                layer: format!("input of {}", s.features.video_id),
                expected: dims.input_dim,
                actual: s.features.feature_dim(),
            });
        }
    }
    let hyper = config.loss_hyper();
    let adam = config.adam();
    let mut state = AdamState::new(params.entries());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut history = Vec::with_capacity(config.iterations);
    let scale = 1.0 / config.batch_size as f64;

    for iter in 1..=config.iterations {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..samples.len()))
            .collect();
        let results: Vec<(LossBreakdown, Vec<Vec<f64>>)> = batch
            .par_iter()
            .map(|&i| video_gradient(&params, &samples[i], &hyper))
            .collect::<Result<_>>()?;

        let mean = LossBreakdown::mean(results.iter().map(|(b, _)| b));
        if !mean.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                value: mean.total,
            });
        }
        let mut grads = params.zeros_like();
        for (_, g) in &results {
            for (acc, gi) in grads.entries_mut().into_iter().zip(g) {
                for (a, v) in acc.data_mut().iter_mut().zip(gi) {
                    *a += v;
                }
            }
        }
        for acc in grads.entries_mut() {
            acc.data_mut().iter_mut().for_each(|a| *a *= scale);
        }
        adam_step_model(&mut params, &grads, &mut state, &adam)?;

        let record = LogRecord::new(iter, mean);
        on_iteration(&record, &params)?;
        history.push(record);
    }
    Ok(TrainOutcome { params, history })
}
