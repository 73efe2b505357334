//! Estimators of the model-side expectations `⟨v_i h_j⟩`, `⟨v_i⟩`, `⟨h_j⟩`.
//!
//! Four interchangeable backends are provided through [`ModelSampler`]:
//! exhaustive enumeration (the oracle), k-step contrastive divergence, an
//! annealing sampler that emulates drawing reads from a quantum annealer at
//! effective inverse temperature `beta_eff`, and a fixed list of externally
//! produced samples.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::math::{exp, log, sigmoid, softplus};
use crate::matrix::Matrix;
use crate::rbm::{
    for_each_binary, free_energy, log_partition_function, JointState, RbmParams, VisibleKind,
    DEFAULT_ENUMERATION_CAP,
};
use crate::seed::derive_seed;

/// The three expectation blocks entering the RBM update rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationEstimate {
    /// `visible_count × hidden_count`.
    pub pair: Matrix,
    pub visible: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Number of samples behind the estimate; 0 means exact.
    pub sample_count: usize,
}

impl ExpectationEstimate {
    pub fn zeros(visible_count: usize, hidden_count: usize) -> Self {
        Self {
            pair: Matrix::zeros(visible_count, hidden_count),
            visible: vec![0.0; visible_count],
            hidden: vec![0.0; hidden_count],
            sample_count: 0,
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visible.len()
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden.len()
    }

    /// Largest absolute difference over all three blocks.
    pub fn max_abs_diff(&self, other: &ExpectationEstimate) -> f64 {
        let v = self
            .visible
            .iter()
            .zip(&other.visible)
            .chain(self.hidden.iter().zip(&other.hidden))
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max);
        v.max(self.pair.max_abs_diff(&other.pair))
    }

    pub fn check_shape(&self, params: &RbmParams) -> Result<()> {
        check_dim("expectation visible units", params.visible_count(), self.visible.len())?;
        check_dim("expectation hidden units", params.hidden_count(), self.hidden.len())?;
        check_dim("expectation pair rows", params.visible_count(), self.pair.rows())?;
        check_dim("expectation pair columns", params.hidden_count(), self.pair.cols())
    }

    fn scale(&mut self, factor: f64) {
        self.pair.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        self.visible.iter_mut().for_each(|x| *x *= factor);
        self.hidden.iter_mut().for_each(|x| *x *= factor);
    }

    fn accumulate_outer(&mut self, v: &[f64], h: &[f64]) {
        for (i, &vi) in v.iter().enumerate() {
            self.visible[i] += vi;
            if vi == 0.0 {
                continue;
            }
            for (p, &hj) in self.pair.row_mut(i).iter_mut().zip(h) {
                *p += vi * hj;
            }
        }
        for (a, &hj) in self.hidden.iter_mut().zip(h) {
            *a += hj;
        }
    }
}

/// Exact model expectations by enumeration of the smaller layer.
pub fn exact_expectations(params: &RbmParams, cap: usize) -> Result<ExpectationEstimate> {
    let log_z = log_partition_function(params, cap)?;
    let m = params.visible_count();
    let n = params.hidden_count();
    let mut est = ExpectationEstimate::zeros(m, n);
    if m <= n {
        let mut act = vec![0.0; n];
        for_each_binary(m, |v| {
            let weight = exp(-free_energy(params, v).expect("shape checked") - log_z);
            params.hidden_activation(v, &mut act);
            act.iter_mut().for_each(|a| *a = sigmoid(*a) * weight);
            for (i, &vi) in v.iter().enumerate() {
                if vi != 0.0 {
                    est.visible[i] += weight;
                    for (p, &hj) in est.pair.row_mut(i).iter_mut().zip(&act) {
                        *p += hj;
                    }
                }
            }
            for (e, &hj) in est.hidden.iter_mut().zip(&act) {
                *e += hj;
            }
        });
    } else {
        let mut act = vec![0.0; m];
        for_each_binary(n, |h| {
            params.visible_activation(h, &mut act);
            let hb: f64 = params.hidden_bias.iter().zip(h).map(|(c, x)| c * x).sum();
            let log_w = hb + act.iter().map(|&a| softplus(a)).sum::<f64>();
            let weight = exp(log_w - log_z);
            for (i, &a) in act.iter().enumerate() {
                let pv = sigmoid(a) * weight;
                est.visible[i] += pv;
                for (p, &hj) in est.pair.row_mut(i).iter_mut().zip(h) {
                    *p += pv * hj;
                }
            }
            for (e, &hj) in est.hidden.iter_mut().zip(h) {
                *e += hj * weight;
            }
        });
    }
    est.sample_count = 0;
    Ok(est)
}

#[inline]
fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// One block-Gibbs transition `v → h → v'`.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsStep {
    pub hidden_sample: Vec<f64>,
    pub visible_next: Vec<f64>,
    pub hidden_probs: Vec<f64>,
    /// `P(v'=1|h)` for Bernoulli layers, the conditional mean for Gaussian ones.
    pub visible_next_probs: Vec<f64>,
}

/// Samples `h ~ P(h|v)`, then `v' ~ P(v|h)`. Gaussian visible units take the
/// conditional mean instead of a noisy draw.
pub fn gibbs_step<R: Rng + ?Sized>(params: &RbmParams, v: &[f64], rng: &mut R) -> Result<GibbsStep> {
    check_dim("visible units", params.visible_count(), v.len())?;
    let mut hidden_probs = vec![0.0; params.hidden_count()];
    params.hidden_activation(v, &mut hidden_probs);
    hidden_probs.iter_mut().for_each(|a| *a = sigmoid(*a));
    let hidden_sample: Vec<f64> = hidden_probs.iter().map(|&p| bernoulli(p, rng)).collect();
    let mut visible_next_probs = vec![0.0; params.visible_count()];
    params.visible_activation(&hidden_sample, &mut visible_next_probs);
    let visible_next = match params.visible_kind {
        VisibleKind::Bernoulli => {
            visible_next_probs.iter_mut().for_each(|a| *a = sigmoid(*a));
            visible_next_probs.iter().map(|&p| bernoulli(p, rng)).collect()
        }
        VisibleKind::Gaussian => visible_next_probs.clone(),
    };
    Ok(GibbsStep {
        hidden_sample,
        visible_next,
        hidden_probs,
        visible_next_probs,
    })
}

/// CD-k model expectations: a k-step Gibbs chain is started from every batch
/// row and the statistics of its final reconstruction are averaged.
///
/// Intermediate states are sampled. At the last step the hidden sample `h_k`
/// is kept and the statistics are conditioned on it: `⟨v_i⟩` uses
/// `P(v_i=1|h_k)`, `⟨h_j⟩` uses `P(h_j=1|v_k)` for a drawn `v_k`, and
/// `⟨v_i h_j⟩` uses `P(v_i=1|h_k)·P(h_j=1|v_k with v_i=1)`, which is the exact
/// conditional product because visible units are independent given `h_k`.
/// Gaussian layers use the conditional mean throughout.
pub fn cd_expectations<R: Rng + ?Sized>(
    params: &RbmParams,
    batch: &Matrix,
    k: usize,
    rng: &mut R,
) -> Result<ExpectationEstimate> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("CD needs k >= 1".into()));
    }
    let m = params.visible_count();
    let n = params.hidden_count();
    check_dim("batch columns", m, batch.cols())?;
    let gaussian = params.visible_kind == VisibleKind::Gaussian;
    let mut est = ExpectationEstimate::zeros(m, n);
    let mut v = vec![0.0; m];
    let mut vp = vec![0.0; m];
    let mut h = vec![0.0; n];
    let mut act = vec![0.0; n];
    for row in batch.iter_rows() {
        v.copy_from_slice(row);
        for step in 0..k {
            params.hidden_activation(&v, &mut act);
            for (hj, &a) in h.iter_mut().zip(&act) {
                *hj = bernoulli(sigmoid(a), rng);
            }
            params.visible_activation(&h, &mut vp);
            if gaussian {
                v.copy_from_slice(&vp);
            } else {
                vp.iter_mut().for_each(|a| *a = sigmoid(*a));
                if step + 1 < k {
                    for (vi, &p) in v.iter_mut().zip(&vp) {
                        *vi = bernoulli(p, rng);
                    }
                }
            }
        }
        if gaussian {
            params.hidden_activation(&v, &mut act);
            act.iter_mut().for_each(|a| *a = sigmoid(*a));
            est.accumulate_outer(&v, &act);
            continue;
        }
        for (vi, &p) in v.iter_mut().zip(&vp) {
            *vi = bernoulli(p, rng);
        }
        params.hidden_activation(&v, &mut act);
        for (i, &pi) in vp.iter().enumerate() {
            est.visible[i] += pi;
            let shift = 1.0 - v[i];
            for ((p, &a), &w) in est
                .pair
                .row_mut(i)
                .iter_mut()
                .zip(&act)
                .zip(params.weights.row(i))
            {
                *p += pi * sigmoid(a + w * shift);
            }
        }
        for (e, &a) in est.hidden.iter_mut().zip(&act) {
            *e += sigmoid(a);
        }
    }
    let rows = batch.rows();
    est.scale(1.0 / rows as f64);
    est.sample_count = rows;
    Ok(est)
}

/// Data-side expectations with the visible layer clamped to the batch rows.
pub fn clamped_expectations(params: &RbmParams, batch: &Matrix) -> Result<ExpectationEstimate> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_dim("batch columns", params.visible_count(), batch.cols())?;
    let mut est = ExpectationEstimate::zeros(params.visible_count(), params.hidden_count());
    let mut act = vec![0.0; params.hidden_count()];
    for row in batch.iter_rows() {
        params.hidden_activation(row, &mut act);
        act.iter_mut().for_each(|a| *a = sigmoid(*a));
        est.accumulate_outer(row, &act);
    }
    est.scale(1.0 / batch.rows() as f64);
    est.sample_count = batch.rows();
    Ok(est)
}

/// Plain sample averages over joint states.
pub fn expectations_from_samples(samples: &[JointState]) -> Result<ExpectationEstimate> {
    let first = samples.first().ok_or(Error::Empty("samples"))?;
    let m = first.visible.len();
    let n = first.hidden.len();
    let mut est = ExpectationEstimate::zeros(m, n);
    for s in samples {
        check_dim("sample visible units", m, s.visible.len())?;
        check_dim("sample hidden units", n, s.hidden.len())?;
        est.accumulate_outer(&s.visible, &s.hidden);
    }
    est.scale(1.0 / samples.len() as f64);
    est.sample_count = samples.len();
    Ok(est)
}

/// Settings of the annealing sampler.
///
/// Each read starts from a uniformly random joint state and performs
/// `sweeps_per_read` block-Gibbs sweeps while the inverse temperature rises
/// geometrically from `beta_start` to `beta_eff`, followed by `hold_sweeps`
/// sweeps at `beta_eff`. All parameters are multiplied by `scaling_factor`
/// before annealing.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealConfig {
    pub reads: usize,
    pub sweeps_per_read: usize,
    pub beta_start: f64,
    pub beta_eff: f64,
    pub hold_sweeps: usize,
    pub scaling_factor: f64,
    pub rng_seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            reads: 1000,
            sweeps_per_read: 1000,
            beta_start: 0.1,
            beta_eff: 1.0,
            hold_sweeps: 200,
            scaling_factor: 1.0,
            rng_seed: 0,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.reads == 0 {
            return bad("anneal reads must be >= 1".into());
        }
        if self.sweeps_per_read == 0 {
            return bad("sweeps_per_read must be >= 1".into());
        }
        if !(self.beta_start > 0.0 && self.beta_eff.is_finite()) || self.beta_start >= self.beta_eff
        {
            return bad(format!(
                "need 0 < beta_start < beta_eff, got {} and {}",
                self.beta_start, self.beta_eff
            ));
        }
        if !(self.scaling_factor > 0.0 && self.scaling_factor.is_finite()) {
            return bad(format!("scaling_factor must be > 0, got {}", self.scaling_factor));
        }
        Ok(())
    }

    /// Inverse temperature used in annealing sweep `t`.
    pub fn beta_at(&self, t: usize) -> f64 {
        if self.sweeps_per_read <= 1 {
            return self.beta_eff;
        }
        let frac = t as f64 / (self.sweeps_per_read - 1) as f64;
        self.beta_start * exp(frac * log(self.beta_eff / self.beta_start))
    }
}

/// One anneal read on already-scaled parameters, seeded by
/// `derive_seed(config.rng_seed, read_index)` so reads can run in any order.
pub fn anneal_read(scaled: &RbmParams, config: &AnnealConfig, read_index: usize) -> JointState {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, read_index as u64));
    let m = scaled.visible_count();
    let n = scaled.hidden_count();
    let mut v: Vec<f64> = (0..m).map(|_| bernoulli(0.5, &mut rng)).collect();
    let mut h = vec![0.0; n];
    let mut hact = vec![0.0; n];
    let mut vact = vec![0.0; m];
    let total = config.sweeps_per_read + config.hold_sweeps;
    for t in 0..total {
        let beta = if t < config.sweeps_per_read {
            config.beta_at(t)
        } else {
            config.beta_eff
        };
        scaled.hidden_activation(&v, &mut hact);
        for (hj, &a) in h.iter_mut().zip(&hact) {
            *hj = bernoulli(sigmoid(beta * a), &mut rng);
        }
        scaled.visible_activation(&h, &mut vact);
        for (vi, &a) in v.iter_mut().zip(&vact) {
            *vi = bernoulli(sigmoid(beta * a), &mut rng);
        }
    }
    JointState::new(v, h)
}

/// Draws `config.reads` independent anneal reads. With the `parallel`
/// feature the reads run on the rayon pool; the result does not change.
pub fn anneal_sample(params: &RbmParams, config: &AnnealConfig) -> Result<Vec<JointState>> {
    if params.visible_kind == VisibleKind::Gaussian {
        return Err(Error::GaussianUnsupported("annealing sampler"));
    }
    config.validate()?;
    let scaled = params.scaled(config.scaling_factor);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok((0..config.reads)
            .into_par_iter()
            .map(|r| anneal_read(&scaled, config, r))
            .collect())
    }
    #[cfg(not(feature = "parallel"))]
    Ok((0..config.reads).map(|r| anneal_read(&scaled, config, r)).collect())
}

/// Backend used wherever model expectations are needed.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSampler {
    Exact { cap: usize },
    ContrastiveDivergence { k: usize },
    /// A fresh `rng_seed` is drawn from the caller's generator on every call.
    Anneal(AnnealConfig),
    /// Externally produced reads, reused on every call.
    Samples(Vec<JointState>),
}

impl ModelSampler {
    pub fn exact() -> Self {
        ModelSampler::Exact {
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelSampler::Exact { .. } => "exact".into(),
            ModelSampler::ContrastiveDivergence { k } => format!("cd{k}"),
            ModelSampler::Anneal(_) => "anneal".into(),
            ModelSampler::Samples(_) => "file".into(),
        }
    }

    pub fn model_expectations<R: Rng + ?Sized>(
        &self,
        params: &RbmParams,
        batch: &Matrix,
        rng: &mut R,
    ) -> Result<ExpectationEstimate> {
        match self {
            ModelSampler::Exact { cap } => exact_expectations(params, *cap),
            ModelSampler::ContrastiveDivergence { k } => cd_expectations(params, batch, *k, rng),
            ModelSampler::Anneal(config) => {
                let config = AnnealConfig {
                    rng_seed: rng.next_u64(),
                    ..config.clone()
                };
                let est = expectations_from_samples(&anneal_sample(params, &config)?)?;
                est.check_shape(params)?;
                Ok(est)
            }
            ModelSampler::Samples(samples) => {
                let est = expectations_from_samples(samples)?;
                est.check_shape(params)?;
                Ok(est)
            }
        }
    }
}
