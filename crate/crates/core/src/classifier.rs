//! Discriminative part of the diagnosis model: the ReLU + softmax head over
//! concatenated DBN abstractions, backpropagation through the DBN branches,
//! the adaptive-moment optimizer, and the multi-class global identifier.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::math::{argmax, log, relu, sigmoid, softmax_in_place, sqrt};
use crate::matrix::Matrix;
use crate::rbm::{RbmParams, VisibleKind};
use crate::training::{dbn_forward, DbnModel, LossCurve};

/// Fully connected ReLU layer followed by a softmax output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `input_dim × input_dim`.
    pub hidden_weights: Matrix,
    pub hidden_bias: Vec<f64>,
    /// `input_dim × class_count`.
    pub output_weights: Matrix,
    pub output_bias: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(input_dim: usize, class_count: usize) -> Self {
        Self {
            hidden_weights: Matrix::zeros(input_dim, input_dim),
            hidden_bias: vec![0.0; input_dim],
            output_weights: Matrix::zeros(input_dim, class_count),
            output_bias: vec![0.0; class_count],
        }
    }

    /// He-scaled normal weights for the ReLU layer, Glorot-scaled for the
    /// output layer, zero biases.
    pub fn random_init<R: Rng + ?Sized>(input_dim: usize, class_count: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, class_count);
        let he = Normal::new(0.0, sqrt(2.0 / input_dim as f64)).expect("valid normal");
        let glorot =
            Normal::new(0.0, sqrt(2.0 / (input_dim + class_count) as f64)).expect("valid normal");
        p.hidden_weights.as_mut_slice().iter_mut().for_each(|w| *w = he.sample(rng));
        p.output_weights.as_mut_slice().iter_mut().for_each(|w| *w = glorot.sample(rng));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_weights.rows()
    }

    pub fn class_count(&self) -> usize {
        self.output_weights.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        check_dim("fully connected columns", d, self.hidden_weights.cols())?;
        check_dim("fully connected bias", d, self.hidden_bias.len())?;
        check_dim("softmax rows", d, self.output_weights.rows())?;
        check_dim("softmax bias", self.class_count(), self.output_bias.len())?;
        if self.class_count() < 2 {
            return Err(Error::InvalidParameter("classifier needs at least two classes".into()));
        }
        let finite = self.hidden_weights.is_finite()
            && self.output_weights.is_finite()
            && self.hidden_bias.iter().chain(&self.output_bias).all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite classifier parameter".into()));
        }
        Ok(())
    }

    fn slices(&self) -> [&[f64]; 4] {
        [
            self.hidden_weights.as_slice(),
            &self.hidden_bias,
            self.output_weights.as_slice(),
            &self.output_bias,
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.hidden_weights.as_mut_slice(),
            &mut self.hidden_bias,
            self.output_weights.as_mut_slice(),
            &mut self.output_bias,
        ]
    }
}

/// Intermediate values of [`head_forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub pre_activation: Matrix,
    /// ReLU output of the fully connected layer.
    pub hidden: Matrix,
    pub probs: Matrix,
}

pub fn head_forward(head: &ClassifierParams, features: &Matrix) -> Result<HeadOutput> {
    check_dim("feature columns", head.input_dim(), features.cols())?;
    let mut pre_activation = features.matmul(&head.hidden_weights)?;
    pre_activation.add_row_vector(&head.hidden_bias)?;
    let hidden = pre_activation.map(relu);
    let mut probs = hidden.matmul(&head.output_weights)?;
    probs.add_row_vector(&head.output_bias)?;
    for i in 0..probs.rows() {
        softmax_in_place(probs.row_mut(i));
    }
    Ok(HeadOutput {
        pre_activation,
        hidden,
        probs,
    })
}

const PROB_FLOOR: f64 = 1e-12;

/// Mean categorical cross-entropy against one-hot labels.
pub fn cross_entropy_loss(probs: &Matrix, labels: &Matrix) -> Result<f64> {
    check_dim("label rows", probs.rows(), labels.rows())?;
    check_dim("label columns", probs.cols(), labels.cols())?;
    if probs.is_empty() {
        return Err(Error::Empty("probabilities"));
    }
    let mut total = 0.0;
    for (r, (p, y)) in probs.iter_rows().zip(labels.iter_rows()).enumerate() {
        let ones = y.iter().filter(|&&x| x == 1.0).count();
        if ones != 1 || y.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidLabel(format!("label row {r} is not one-hot")));
        }
        for (&pi, &yi) in p.iter().zip(y) {
            if yi == 1.0 {
                total -= log(pi.max(PROB_FLOOR));
            }
        }
    }
    Ok(total / probs.rows() as f64)
}

pub fn one_hot(labels: &[usize], class_count: usize) -> Result<Matrix> {
    let mut out = Matrix::zeros(labels.len(), class_count);
    for (i, &l) in labels.iter().enumerate() {
        if l >= class_count {
            return Err(Error::InvalidLabel(format!(
                "class {l} out of range for {class_count} classes"
            )));
        }
        out.set(i, l, 1.0);
    }
    Ok(out)
}

/// Paired DBN-N / DBN-F feature extractors and the local normal-vs-faulty head.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosisModel {
    pub dbn_normal: DbnModel,
    pub dbn_fault: DbnModel,
    pub head: ClassifierParams,
    pub threshold: f64,
}

impl DiagnosisModel {
    pub fn new(dbn_normal: DbnModel, dbn_fault: DbnModel, head: ClassifierParams, threshold: f64) -> Result<Self> {
        let m = Self {
            dbn_normal,
            dbn_fault,
            head,
            threshold,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.dbn_normal.validate()?;
        self.dbn_fault.validate()?;
        self.head.validate()?;
        check_dim("DBN-F input width", self.dbn_normal.input_dim(), self.dbn_fault.input_dim())?;
        check_dim("DBN-F output width", self.dbn_normal.output_dim(), self.dbn_fault.output_dim())?;
        check_dim(
            "classifier input width",
            self.dbn_normal.output_dim() + self.dbn_fault.output_dim(),
            self.head.input_dim(),
        )?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dbn_normal.input_dim()
    }

    /// `[DBN-N(x) | DBN-F(x)]`.
    pub fn features(&self, samples: &Matrix) -> Result<Matrix> {
        dbn_forward(&self.dbn_normal, samples)?.hcat(&dbn_forward(&self.dbn_fault, samples)?)
    }

    fn dbn_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in self.dbn_normal.layers.iter().chain(&self.dbn_fault.layers) {
            out.push(layer.weights.as_slice());
            out.push(&layer.hidden_bias[..]);
        }
        out
    }

    fn dbn_slices_mut<'a>(normal: &'a mut DbnModel, fault: &'a mut DbnModel) -> Vec<&'a mut [f64]> {
        let mut out = Vec::new();
        for layer in normal.layers.iter_mut().chain(fault.layers.iter_mut()) {
            out.push(layer.weights.as_mut_slice());
            out.push(&mut layer.hidden_bias[..]);
        }
        out
    }

    /// Trainable parameter blocks in a fixed order: DBN weights and hidden
    /// biases (normal branch first), then the head.
    pub fn trainable_slices(&self, include_dbn: bool) -> Vec<&[f64]> {
        let mut out = if include_dbn { self.dbn_slices() } else { Vec::new() };
        out.extend(self.head.slices());
        out
    }

    pub fn trainable_slices_mut(&mut self, include_dbn: bool) -> Vec<&mut [f64]> {
        let mut out = if include_dbn {
            Self::dbn_slices_mut(&mut self.dbn_normal, &mut self.dbn_fault)
        } else {
            Vec::new()
        };
        out.extend(self.head.slices_mut());
        out
    }

    /// A model of identical shape with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let zero_dbn = |d: &DbnModel| DbnModel {
            layers: d
                .layers
                .iter()
                .map(|l| RbmParams {
                    weights: Matrix::zeros(l.visible_count(), l.hidden_count()),
                    visible_bias: vec![0.0; l.visible_count()],
                    hidden_bias: vec![0.0; l.hidden_count()],
                    ..l.clone()
                })
                .collect(),
        };
        Self {
            dbn_normal: zero_dbn(&self.dbn_normal),
            dbn_fault: zero_dbn(&self.dbn_fault),
            head: ClassifierParams::zeros(self.head.input_dim(), self.head.class_count()),
            threshold: self.threshold,
        }
    }
}

/// Class probabilities and thresholded states of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnosis {
    /// Columns: `p_normal`, `p_faulty`.
    pub probs: Matrix,
    pub faulty: Vec<bool>,
}

/// A sample is faulty iff its faulty-class probability is strictly above the
/// threshold.
pub fn diagnose(model: &DiagnosisModel, samples: &Matrix) -> Result<Diagnosis> {
    check_dim("sample columns", model.input_dim(), samples.cols())?;
    let probs = head_forward(&model.head, &model.features(samples)?)?.probs;
    let faulty = probs.iter_rows().map(|p| p[1] > model.threshold).collect();
    Ok(Diagnosis { probs, faulty })
}

struct BranchCache {
    /// Input of each layer, already divided by the visible std.
    inputs: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

fn scaled_input(layer: &RbmParams, x: &Matrix) -> Matrix {
    match layer.visible_kind {
        VisibleKind::Bernoulli => x.clone(),
        VisibleKind::Gaussian => {
            Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) / layer.visible_std[j])
        }
    }
}

fn branch_forward(dbn: &DbnModel, x: &Matrix) -> Result<BranchCache> {
    let mut inputs = Vec::with_capacity(dbn.layers.len());
    let mut outputs: Vec<Matrix> = Vec::with_capacity(dbn.layers.len());
    for layer in &dbn.layers {
        let input = scaled_input(layer, outputs.last().unwrap_or(x));
        let mut z = input.matmul(&layer.weights)?;
        z.add_row_vector(&layer.hidden_bias)?;
        outputs.push(z.map(sigmoid));
        inputs.push(input);
    }
    Ok(BranchCache { inputs, outputs })
}

fn branch_backward(dbn: &DbnModel, cache: &BranchCache, mut d_out: Matrix, grads: &mut DbnModel) -> Result<()> {
    for l in (0..dbn.layers.len()).rev() {
        let a = &cache.outputs[l];
        for (d, &y) in d_out.as_mut_slice().iter_mut().zip(a.as_slice()) {
            *d *= y * (1.0 - y);
        }
        grads.layers[l].weights = cache.inputs[l].t_matmul(&d_out)?;
        grads.layers[l].hidden_bias = d_out.column_sums();
        if l > 0 {
            let layer = &dbn.layers[l];
            let mut d_in = d_out.matmul_t(&layer.weights)?;
            if layer.visible_kind == VisibleKind::Gaussian {
                for i in 0..d_in.rows() {
                    for (d, s) in d_in.row_mut(i).iter_mut().zip(&layer.visible_std) {
                        *d /= s;
                    }
                }
            }
            d_out = d_in;
        }
    }
    Ok(())
}

/// Loss, parameter gradients of the head, and the gradient with respect to
/// the input features.
pub fn head_loss_and_gradients(
    head: &ClassifierParams,
    features: &Matrix,
    labels: &Matrix,
) -> Result<(f64, ClassifierParams, Matrix)> {
    let out = head_forward(head, features)?;
    let loss = cross_entropy_loss(&out.probs, labels)?;
    let n = features.rows() as f64;
    let mut d_logits = out.probs.clone();
    for (d, y) in d_logits.as_mut_slice().iter_mut().zip(labels.as_slice()) {
        *d = (*d - y) / n;
    }
    let mut grads = ClassifierParams::zeros(head.input_dim(), head.class_count());
    grads.output_weights = out.hidden.t_matmul(&d_logits)?;
    grads.output_bias = d_logits.column_sums();
    let mut d_pre = d_logits.matmul_t(&head.output_weights)?;
    for (d, &z) in d_pre.as_mut_slice().iter_mut().zip(out.pre_activation.as_slice()) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
    grads.hidden_weights = features.t_matmul(&d_pre)?;
    grads.hidden_bias = d_pre.column_sums();
    let d_features = d_pre.matmul_t(&head.hidden_weights)?;
    Ok((loss, grads, d_features))
}

/// Cross-entropy of the full model and its gradient with respect to every
/// DBN weight, DBN hidden bias and head parameter. The gradient is returned
/// as a model of the same shape; visible biases carry zero gradient.
pub fn loss_and_gradients(
    model: &DiagnosisModel,
    samples: &Matrix,
    labels: &Matrix,
) -> Result<(f64, DiagnosisModel)> {
    let normal = branch_forward(&model.dbn_normal, samples)?;
    let fault = branch_forward(&model.dbn_fault, samples)?;
    let n_out = normal.outputs.last().expect("non-empty DBN");
    let f_out = fault.outputs.last().expect("non-empty DBN");
    let features = n_out.hcat(f_out)?;
    let (loss, head_grads, d_features) = head_loss_and_gradients(&model.head, &features, labels)?;
    let k = n_out.cols();
    let d_normal = Matrix::from_fn(samples.rows(), k, |i, j| d_features.get(i, j));
    let d_fault = Matrix::from_fn(samples.rows(), f_out.cols(), |i, j| d_features.get(i, k + j));
    let mut grads = model.zeros_like();
    grads.head = head_grads;
    branch_backward(&model.dbn_normal, &normal, d_normal, &mut grads.dbn_normal)?;
    branch_backward(&model.dbn_fault, &fault, d_fault, &mut grads.dbn_fault)?;
    Ok((loss, grads))
}

/// Adaptive-moment optimizer state over a fixed list of parameter blocks.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        debug_assert_eq!(params.len(), grads.len());
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (b, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first[b];
            let v = &mut self.second[b];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (sqrt(v_hat) + self.epsilon);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminativeConfig {
    pub epochs: usize,
    /// 0 trains on the full dataset at once.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rng_seed: u64,
    /// Train only the head and keep both DBN branches fixed.
    pub freeze_dbn: bool,
}

impl Default for DiscriminativeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rng_seed: 0,
            freeze_dbn: false,
        }
    }
}

impl DiscriminativeConfig {
    fn optimizer(&self) -> Adam {
        Adam::new(self.learning_rate, self.beta1, self.beta2, self.epsilon)
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidParameter("learning rate must be >= 0".into()));
        }
        Ok(())
    }
}

fn batches(rows: usize, batch_size: usize, order: &mut [usize], rng: &mut ChaCha8Rng) -> usize {
    if batch_size == 0 || batch_size >= rows {
        rows
    } else {
        order.shuffle(rng);
        batch_size
    }
}

/// Backpropagation fine-tuning of the whole diagnosis model (or only its head
/// with `freeze_dbn`). `labels` are 0 = normal, 1 = faulty.
pub fn train_discriminative(
    model: &DiagnosisModel,
    samples: &Matrix,
    labels: &[usize],
    config: &DiscriminativeConfig,
) -> Result<(DiagnosisModel, LossCurve)> {
    config.validate()?;
    model.validate()?;
    check_dim("sample columns", model.input_dim(), samples.cols())?;
    check_dim("label count", samples.rows(), labels.len())?;
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    let targets = one_hot(labels, model.head.class_count())?;
    let include_dbn = !config.freeze_dbn;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut adam = config.optimizer();
    let mut model = model.clone();
    let mut order: Vec<usize> = (0..samples.rows()).collect();
    let mut curve = LossCurve::default();
    for epoch in 1..=config.epochs {
        let bs = batches(samples.rows(), config.batch_size, &mut order, &mut rng);
        for (b, chunk) in order.chunks(bs).enumerate() {
            let (x, y) = (samples.select_rows(chunk), targets.select_rows(chunk));
            let (loss, grads) = loss_and_gradients(&model, &x, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    stage: "discriminative training",
                    epoch,
                    batch: b,
                });
            }
            adam.update(model.trainable_slices_mut(include_dbn), grads.trainable_slices(include_dbn));
        }
        let probs = head_forward(&model.head, &model.features(samples)?)?.probs;
        let loss = cross_entropy_loss(&probs, &targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                stage: "discriminative training loss",
                epoch,
                batch: 0,
            });
        }
        curve.push(epoch, loss, "adam");
    }
    Ok((model, curve))
}

/// Trains a stand-alone head on fixed features.
pub fn train_head(
    head: &ClassifierParams,
    features: &Matrix,
    labels: &[usize],
    config: &DiscriminativeConfig,
) -> Result<(ClassifierParams, LossCurve)> {
    config.validate()?;
    head.validate()?;
    check_dim("label count", features.rows(), labels.len())?;
    if features.is_empty() {
        return Err(Error::Empty("training features"));
    }
    let targets = one_hot(labels, head.class_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut adam = config.optimizer();
    let mut head = head.clone();
    let mut order: Vec<usize> = (0..features.rows()).collect();
    let mut curve = LossCurve::default();
    for epoch in 1..=config.epochs {
        let bs = batches(features.rows(), config.batch_size, &mut order, &mut rng);
        for (b, chunk) in order.chunks(bs).enumerate() {
            let (loss, grads, _) =
                head_loss_and_gradients(&head, &features.select_rows(chunk), &targets.select_rows(chunk))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    stage: "head training",
                    epoch,
                    batch: b,
                });
            }
            adam.update(head.slices_mut().into(), grads.slices().into());
        }
        let loss = cross_entropy_loss(&head_forward(&head, features)?.probs, &targets)?;
        curve.push(epoch, loss, "adam");
    }
    Ok((head, curve))
}

/// Global identification: `per_fault_probs` holds the two-column output of
/// each per-fault diagnosis model side by side (`2F` columns); the head maps
/// it to `F + 1` classes and the argmax (lowest index on ties) is returned.
pub fn global_identify(per_fault_probs: &Matrix, head: &ClassifierParams) -> Result<Vec<usize>> {
    let cols = per_fault_probs.cols();
    if cols == 0 || cols % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "expected two columns per fault model, got {cols} columns"
        )));
    }
    check_dim("global classifier input width", head.input_dim(), cols)?;
    check_dim("global classifier classes", cols / 2 + 1, head.class_count())?;
    let probs = head_forward(head, per_fault_probs)?.probs;
    Ok(probs.iter_rows().map(argmax).collect())
}
