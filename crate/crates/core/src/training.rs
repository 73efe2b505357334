//! Generative training of single RBMs and greedy layer-wise DBN stacks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::math::{log, sigmoid};
use crate::matrix::Matrix;
use crate::rbm::{
    hidden_conditional, mean_log_likelihood, visible_conditional, RbmParams, VisibleKind,
    DEFAULT_ENUMERATION_CAP,
};
use crate::sampler::{clamped_expectations, AnnealConfig, ExpectationEstimate, ModelSampler};
use crate::seed::derive_seed;

/// Per-epoch loss used to track training progress.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMetric {
    /// Cross-entropy between inputs and one-step reconstructions (inputs in [0,1]).
    CrossEntropy,
    /// Mean squared reconstruction error; used for Gaussian layers.
    MeanSquare,
    /// Negative mean log-likelihood by exact enumeration (small models only).
    NegLogLikelihood,
}

impl LossMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMetric::CrossEntropy => "cross-entropy",
            LossMetric::MeanSquare => "mean-square",
            LossMetric::NegLogLikelihood => "neg-log-likelihood",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Multiplies the previous parameter value in the update rule.
    pub momentum: f64,
    pub epochs: usize,
    /// Mini-batch size; 0 trains on the full dataset at once.
    pub batch_size: usize,
    pub sampler: ModelSampler,
    pub rng_seed: u64,
    pub loss_metric: LossMetric,
    /// Feed the next DBN layer with binomial samples instead of probabilities.
    pub stochastic_forward: bool,
}

impl TrainingConfig {
    /// First-layer settings: CD-1, learning rate 0.001, mean-square loss.
    pub fn gaussian_default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 1.0,
            epochs: 20,
            batch_size: 64,
            sampler: ModelSampler::ContrastiveDivergence { k: 1 },
            rng_seed: 0,
            loss_metric: LossMetric::MeanSquare,
            stochastic_forward: false,
        }
    }

    /// Binary-layer settings: annealing sampler, learning rate 0.01, cross-entropy.
    pub fn bernoulli_default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 1.0,
            epochs: 20,
            batch_size: 64,
            sampler: ModelSampler::Anneal(AnnealConfig::default()),
            rng_seed: 0,
            loss_metric: LossMetric::CrossEntropy,
            stochastic_forward: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "momentum must lie in (0, 1], got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if let ModelSampler::Anneal(c) = &self.sampler {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: f64,
    pub sampler: String,
}

/// Loss per epoch, epochs strictly increasing from 1.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LossCurve {
    pub records: Vec<LossRecord>,
}

impl LossCurve {
    pub fn push(&mut self, epoch: usize, loss: f64, sampler: &str) {
        debug_assert!(self.records.last().map_or(true, |r| r.epoch < epoch));
        self.records.push(LossRecord {
            epoch,
            loss,
            sampler: sampler.into(),
        });
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn loss_at(&self, epoch: usize) -> Option<f64> {
        self.records.iter().find(|r| r.epoch == epoch).map(|r| r.loss)
    }

    /// First epoch whose loss is at or below `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.loss <= target).map(|r| r.epoch)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Applies `θ' = α·θ + ε·(⟨·⟩_data − ⟨·⟩_model)` to weights and both biases.
pub fn update_params(
    params: &RbmParams,
    data_exp: &ExpectationEstimate,
    model_exp: &ExpectationEstimate,
    config: &TrainingConfig,
) -> Result<RbmParams> {
    data_exp.check_shape(params)?;
    model_exp.check_shape(params)?;
    let alpha = config.momentum;
    let eps = config.learning_rate;
    let mut out = params.clone();
    for ((w, d), m) in out
        .weights
        .as_mut_slice()
        .iter_mut()
        .zip(data_exp.pair.as_slice())
        .zip(model_exp.pair.as_slice())
    {
        *w = alpha * *w + eps * (d - m);
    }
    for ((b, d), m) in out.visible_bias.iter_mut().zip(&data_exp.visible).zip(&model_exp.visible) {
        *b = alpha * *b + eps * (d - m);
    }
    for ((c, d), m) in out.hidden_bias.iter_mut().zip(&data_exp.hidden).zip(&model_exp.hidden) {
        *c = alpha * *c + eps * (d - m);
    }
    Ok(out)
}

/// One-step deterministic reconstruction `v → P(h|v) → E[v|h]`.
pub fn reconstruct(params: &RbmParams, data: &Matrix) -> Result<Matrix> {
    check_dim("data columns", params.visible_count(), data.cols())?;
    let mut out = Matrix::zeros(data.rows(), data.cols());
    for (i, row) in data.iter_rows().enumerate() {
        let h = hidden_conditional(params, row)?;
        out.row_mut(i).copy_from_slice(&visible_conditional(params, &h)?);
    }
    Ok(out)
}

const CE_CLAMP: f64 = 1e-7;

/// Cross-entropy or mean-square distance between equally shaped matrices.
pub fn reconstruction_loss(original: &Matrix, reconstructed: &Matrix, metric: LossMetric) -> Result<f64> {
    check_dim("reconstruction rows", original.rows(), reconstructed.rows())?;
    check_dim("reconstruction columns", original.cols(), reconstructed.cols())?;
    let count = original.as_slice().len();
    if count == 0 {
        return Err(Error::Empty("reconstruction"));
    }
    let pairs = original.as_slice().iter().zip(reconstructed.as_slice());
    let total: f64 = match metric {
        LossMetric::MeanSquare => pairs.map(|(x, y)| (x - y) * (x - y)).sum(),
        LossMetric::CrossEntropy => {
            let mut total = 0.0;
            for (&x, &y) in pairs {
                if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                    return Err(Error::InvalidParameter(
                        "cross-entropy needs values in [0, 1]".into(),
                    ));
                }
                let y = y.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                total -= x * log(y) + (1.0 - x) * log(1.0 - y);
            }
            total
        }
        LossMetric::NegLogLikelihood => {
            return Err(Error::InvalidParameter(
                "log-likelihood is not a reconstruction metric".into(),
            ))
        }
    };
    Ok(total / count as f64)
}

/// Loss of `params` on `data` under `metric`.
pub fn epoch_loss(params: &RbmParams, data: &Matrix, metric: LossMetric) -> Result<f64> {
    match metric {
        LossMetric::NegLogLikelihood => Ok(-mean_log_likelihood(params, data, DEFAULT_ENUMERATION_CAP)?),
        _ => reconstruction_loss(data, &reconstruct(params, data)?, metric),
    }
}

/// Mini-batch generative training. Each batch computes clamped data
/// expectations and the configured model expectations, then applies
/// [`update_params`]. Seeded and bit-reproducible.
pub fn train_rbm(
    params_init: &RbmParams,
    data: &Matrix,
    config: &TrainingConfig,
) -> Result<(RbmParams, LossCurve)> {
    config.validate()?;
    params_init.validate()?;
    check_dim("data columns", params_init.visible_count(), data.cols())?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let rows = data.rows();
    let batch_size = if config.batch_size == 0 || config.batch_size >= rows {
        rows
    } else {
        config.batch_size
    };
    let label = config.sampler.label();
    let mut order: Vec<usize> = (0..rows).collect();
    let mut params = params_init.clone();
    let mut curve = LossCurve::default();
    for epoch in 1..=config.epochs {
        if batch_size < rows {
            order.shuffle(&mut rng);
        }
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch = if batch_size == rows {
                data.clone()
            } else {
                data.select_rows(chunk)
            };
            let data_exp = clamped_expectations(&params, &batch)?;
            let model_exp = config.sampler.model_expectations(&params, &batch, &mut rng)?;
            params = update_params(&params, &data_exp, &model_exp, config)?;
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    stage: "generative training",
                    epoch,
                    batch: b,
                });
            }
        }
        let loss = epoch_loss(&params, data, config.loss_metric)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                stage: "generative training loss",
                epoch,
                batch: 0,
            });
        }
        curve.push(epoch, loss, &label);
    }
    Ok((params, curve))
}

/// Deterministic layer output `σ(x/σ_v · W + c)`.
pub fn forward_layer(params: &RbmParams, input: &Matrix) -> Result<Matrix> {
    check_dim("input columns", params.visible_count(), input.cols())?;
    let mut out = Matrix::zeros(input.rows(), params.hidden_count());
    for (i, row) in input.iter_rows().enumerate() {
        let o = out.row_mut(i);
        params.hidden_activation(row, o);
        o.iter_mut().for_each(|a| *a = sigmoid(*a));
    }
    Ok(out)
}

/// Binomial samples with the layer output as means.
pub fn forward_layer_sampled<R: Rng + ?Sized>(
    params: &RbmParams,
    input: &Matrix,
    rng: &mut R,
) -> Result<Matrix> {
    let mut out = forward_layer(params, input)?;
    for p in out.as_mut_slice() {
        *p = if rng.random::<f64>() < *p { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Stack of RBMs; layer `L`'s hidden units are layer `L+1`'s visible units.
#[derive(Clone, Debug, PartialEq)]
pub struct DbnModel {
    pub layers: Vec<RbmParams>,
}

impl DbnModel {
    pub fn new(layers: Vec<RbmParams>) -> Result<Self> {
        let model = Self { layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Empty("DBN layers"));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if k > 0 && layer.visible_kind == VisibleKind::Gaussian {
                return Err(Error::InvalidParameter(format!(
                    "only the first DBN layer may have Gaussian visible units (layer {})",
                    k + 1
                )));
            }
        }
        for pair in self.layers.windows(2) {
            check_dim("stacked layer width", pair[0].hidden_count(), pair[1].visible_count())?;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].visible_count()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_count())
    }

    /// Hidden widths of all layers.
    pub fn shape(&self) -> Vec<usize> {
        core::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.hidden_count()))
            .collect()
    }
}

/// Sequential deterministic forward pass through every layer.
pub fn dbn_forward(model: &DbnModel, input: &Matrix) -> Result<Matrix> {
    let mut x = forward_layer(&model.layers[0], input)?;
    for layer in &model.layers[1..] {
        x = forward_layer(layer, &x)?;
    }
    Ok(x)
}

/// Result of greedy layer-wise training.
#[derive(Clone, Debug)]
pub struct DbnTraining {
    pub model: DbnModel,
    pub curves: Vec<LossCurve>,
}

/// Greedy layer-wise training: layer 1 sees `data`, every later layer sees the
/// forward output of the finished layer below it. `hidden_sizes[k]` and
/// `configs[k]` describe layer `k`; only the first layer uses `input_kind`.
pub fn train_dbn(
    input_kind: VisibleKind,
    hidden_sizes: &[usize],
    data: &Matrix,
    configs: &[TrainingConfig],
) -> Result<DbnTraining> {
    if hidden_sizes.is_empty() {
        return Err(Error::Empty("layer sizes"));
    }
    check_dim("per-layer training configs", hidden_sizes.len(), configs.len())?;
    let mut layers = Vec::with_capacity(hidden_sizes.len());
    let mut curves = Vec::with_capacity(hidden_sizes.len());
    let mut input = data.clone();
    for (k, (&hidden, config)) in hidden_sizes.iter().zip(configs).enumerate() {
        let kind = if k == 0 { input_kind } else { VisibleKind::Bernoulli };
        let init = initial_layer(kind, input.cols(), hidden, config.rng_seed);
        let (params, curve) = train_rbm(&init, &input, config)?;
        if k + 1 < hidden_sizes.len() {
            input = if config.stochastic_forward {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, 0xF0));
                forward_layer_sampled(&params, &input, &mut rng)?
            } else {
                forward_layer(&params, &input)?
            };
        }
        layers.push(params);
        curves.push(curve);
    }
    Ok(DbnTraining {
        model: DbnModel::new(layers)?,
        curves,
    })
}

/// Seeded `Normal(0, 0.01²)` initialization used by [`train_dbn`].
pub fn initial_layer(kind: VisibleKind, visible: usize, hidden: usize, seed: u64) -> RbmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x1A17));
    RbmParams::random_init(kind, visible, hidden, &mut rng)
}
