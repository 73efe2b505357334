//! Energy function, Boltzmann probabilities and conditionals of a single RBM
//! layer, plus its QUBO form.
//!
//! Bernoulli layers use `E(v,h) = −b·v − c·h − vᵀWh` over `{0,1}` units.
//! Gaussian-visible layers use
//! `E(v,h) = Σ (v_i − b_i)²/(2σ_i²) − c·h − Σ (v_i/σ_i) w_ij h_j`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::math::{exp, sigmoid, softplus, LogSumExp};
use crate::matrix::Matrix;

/// Exact enumeration refuses models with more visible + hidden units than this.
pub const DEFAULT_ENUMERATION_CAP: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VisibleKind {
    Bernoulli,
    Gaussian,
}

impl VisibleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VisibleKind::Bernoulli => "bernoulli",
            VisibleKind::Gaussian => "gaussian",
        }
    }
}

/// Weights and biases of one RBM layer. Hidden units are always Bernoulli.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmParams {
    pub visible_kind: VisibleKind,
    /// `visible_count × hidden_count`.
    pub weights: Matrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// Per-unit noise level of Gaussian visible units; all ones for Bernoulli.
    pub visible_std: Vec<f64>,
}

impl RbmParams {
    pub fn zeros(kind: VisibleKind, visible_count: usize, hidden_count: usize) -> Self {
        Self {
            visible_kind: kind,
            weights: Matrix::zeros(visible_count, hidden_count),
            visible_bias: vec![0.0; visible_count],
            hidden_bias: vec![0.0; hidden_count],
            visible_std: vec![1.0; visible_count],
        }
    }

    /// Validated constructor. `visible_std = None` means unit noise.
    pub fn new(
        kind: VisibleKind,
        weights: Matrix,
        visible_bias: Vec<f64>,
        hidden_bias: Vec<f64>,
        visible_std: Option<Vec<f64>>,
    ) -> Result<Self> {
        let m = weights.rows();
        let params = Self {
            visible_kind: kind,
            weights,
            visible_bias,
            hidden_bias,
            visible_std: visible_std.unwrap_or_else(|| vec![1.0; m]),
        };
        params.validate()?;
        Ok(params)
    }

    /// Weights drawn from `Normal(0, 0.01²)`, zero biases.
    pub fn random_init<R: Rng + ?Sized>(
        kind: VisibleKind,
        visible_count: usize,
        hidden_count: usize,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let mut p = Self::zeros(kind, visible_count, hidden_count);
        for w in p.weights.as_mut_slice() {
            *w = normal.sample(rng);
        }
        p
    }

    pub fn visible_count(&self) -> usize {
        self.weights.rows()
    }

    pub fn hidden_count(&self) -> usize {
        self.weights.cols()
    }

    pub fn unit_count(&self) -> usize {
        self.visible_count() + self.hidden_count()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.visible_count();
        let n = self.hidden_count();
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "RBM needs at least one visible and one hidden unit, got {m}×{n}"
            )));
        }
        check_dim("visible bias", m, self.visible_bias.len())?;
        check_dim("hidden bias", n, self.hidden_bias.len())?;
        check_dim("visible std", m, self.visible_std.len())?;
        if self.visible_std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(
                "visible std entries must be finite and > 0".into(),
            ));
        }
        if self.visible_kind == VisibleKind::Bernoulli && self.visible_std.iter().any(|&s| s != 1.0)
        {
            return Err(Error::InvalidParameter(
                "Bernoulli layers carry unit visible std".into(),
            ));
        }
        if !self.is_finite() {
            return Err(Error::InvalidParameter("non-finite RBM parameter".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite()
            && self.visible_bias.iter().all(|x| x.is_finite())
            && self.hidden_bias.iter().all(|x| x.is_finite())
    }

    /// Every weight and bias multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.weights = p.weights.map(|w| w * factor);
        p.visible_bias.iter_mut().for_each(|b| *b *= factor);
        p.hidden_bias.iter_mut().for_each(|c| *c *= factor);
        p
    }

    fn require_bernoulli(&self, what: &'static str) -> Result<()> {
        match self.visible_kind {
            VisibleKind::Bernoulli => Ok(()),
            VisibleKind::Gaussian => Err(Error::GaussianUnsupported(what)),
        }
    }

    /// `c_j + Σ_i w_ij v_i / σ_i` for every hidden unit.
    pub(crate) fn hidden_activation(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.hidden_bias);
        let gaussian = self.visible_kind == VisibleKind::Gaussian;
        for (i, &vi) in v.iter().enumerate() {
            let x = if gaussian { vi / self.visible_std[i] } else { vi };
            if x == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.weights.row(i)) {
                *o += w * x;
            }
        }
    }

    /// `b_i + Σ_j w_ij h_j` for every visible unit (before σ scaling).
    pub(crate) fn visible_activation(&self, h: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let dot: f64 = self.weights.row(i).iter().zip(h).map(|(w, x)| w * x).sum();
            *o = match self.visible_kind {
                VisibleKind::Bernoulli => self.visible_bias[i] + dot,
                VisibleKind::Gaussian => self.visible_bias[i] + self.visible_std[i] * dot,
            };
        }
    }
}

/// A joint configuration `(v, h)`. Values are stored as `f64` so that
/// Gaussian visible states fit the same type; Bernoulli entries are 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub visible: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl JointState {
    pub fn new(visible: Vec<f64>, hidden: Vec<f64>) -> Self {
        Self { visible, hidden }
    }

    /// Packs a binary state into an integer: visible bits first, then hidden.
    pub fn binary_index(&self) -> usize {
        self.visible
            .iter()
            .chain(&self.hidden)
            .enumerate()
            .fold(0, |acc, (k, &x)| if x != 0.0 { acc | (1 << k) } else { acc })
    }

    pub fn from_binary_index(index: usize, visible_count: usize, hidden_count: usize) -> Self {
        let bit = |k: usize| ((index >> k) & 1) as f64;
        Self {
            visible: (0..visible_count).map(bit).collect(),
            hidden: (visible_count..visible_count + hidden_count).map(bit).collect(),
        }
    }
}

fn check_binary(values: &[f64]) -> Result<()> {
    if values.iter().all(|&x| x == 0.0 || x == 1.0) {
        Ok(())
    } else {
        Err(Error::InvalidParameter("binary unit holds a value other than 0 or 1".into()))
    }
}

fn check_state(params: &RbmParams, state: &JointState) -> Result<()> {
    check_dim("visible units", params.visible_count(), state.visible.len())?;
    check_dim("hidden units", params.hidden_count(), state.hidden.len())?;
    check_binary(&state.hidden)?;
    if params.visible_kind == VisibleKind::Bernoulli {
        check_binary(&state.visible)?;
    }
    Ok(())
}

fn check_cap(params: &RbmParams, cap: usize) -> Result<()> {
    params.require_bernoulli("exact enumeration")?;
    let units = params.unit_count();
    if units > cap {
        Err(Error::AboveEnumerationCap { units, cap })
    } else {
        Ok(())
    }
}

/// Energy of a joint configuration.
pub fn energy(params: &RbmParams, state: &JointState) -> Result<f64> {
    check_state(params, state)?;
    let mut act = vec![0.0; params.hidden_count()];
    params.hidden_activation(&state.visible, &mut act);
    let coupling_and_hidden: f64 = act.iter().zip(&state.hidden).map(|(a, h)| a * h).sum();
    let visible_term: f64 = match params.visible_kind {
        VisibleKind::Bernoulli => -params
            .visible_bias
            .iter()
            .zip(&state.visible)
            .map(|(b, v)| b * v)
            .sum::<f64>(),
        VisibleKind::Gaussian => params
            .visible_bias
            .iter()
            .zip(&state.visible)
            .zip(&params.visible_std)
            .map(|((b, v), s)| (v - b) * (v - b) / (2.0 * s * s))
            .sum(),
    };
    Ok(visible_term - coupling_and_hidden)
}

/// Free energy `F(v) = −ln Σ_h exp(−E(v,h))`.
pub fn free_energy(params: &RbmParams, v: &[f64]) -> Result<f64> {
    check_dim("visible units", params.visible_count(), v.len())?;
    let mut act = vec![0.0; params.hidden_count()];
    params.hidden_activation(v, &mut act);
    let hidden: f64 = act.iter().map(|&a| softplus(a)).sum();
    let visible = match params.visible_kind {
        VisibleKind::Bernoulli => -params.visible_bias.iter().zip(v).map(|(b, x)| b * x).sum::<f64>(),
        VisibleKind::Gaussian => params
            .visible_bias
            .iter()
            .zip(v)
            .zip(&params.visible_std)
            .map(|((b, x), s)| (x - b) * (x - b) / (2.0 * s * s))
            .sum(),
    };
    Ok(visible - hidden)
}

/// Calls `f` with every binary vector of length `len`, in binary-counting
/// order (bit `k` of the counter is entry `k`).
pub fn for_each_binary(len: usize, mut f: impl FnMut(&[f64])) {
    let mut x = vec![0.0; len];
    for k in 0..(1usize << len) {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = ((k >> i) & 1) as f64;
        }
        f(&x);
    }
}

/// `ln Z` by exhaustive enumeration of the smaller layer, with the other layer
/// summed out analytically.
pub fn log_partition_function(params: &RbmParams, cap: usize) -> Result<f64> {
    check_cap(params, cap)?;
    let mut acc = LogSumExp::new();
    if params.visible_count() <= params.hidden_count() {
        for_each_binary(params.visible_count(), |v| {
            acc.add(-free_energy(params, v).expect("shape checked"));
        });
    } else {
        let mut act = vec![0.0; params.visible_count()];
        for_each_binary(params.hidden_count(), |h| {
            params.visible_activation(h, &mut act);
            let hb: f64 = params.hidden_bias.iter().zip(h).map(|(c, x)| c * x).sum();
            acc.add(hb + act.iter().map(|&a| softplus(a)).sum::<f64>());
        });
    }
    Ok(acc.value())
}

/// Partition function `Z = Σ exp(−E)` over all joint binary states.
pub fn partition_function(params: &RbmParams) -> Result<f64> {
    Ok(exp(log_partition_function(params, DEFAULT_ENUMERATION_CAP)?))
}

/// Boltzmann probability of a joint state.
pub fn joint_probability(params: &RbmParams, state: &JointState) -> Result<f64> {
    let log_z = log_partition_function(params, DEFAULT_ENUMERATION_CAP)?;
    Ok(exp(-energy(params, state)? - log_z))
}

/// `p(v)` with the hidden layer summed out.
pub fn marginal_visible(params: &RbmParams, v: &[f64]) -> Result<f64> {
    let log_z = log_partition_function(params, DEFAULT_ENUMERATION_CAP)?;
    check_binary(v)?;
    Ok(exp(-free_energy(params, v)? - log_z))
}

/// Mean of `ln p(v)` over the rows of `data`.
pub fn mean_log_likelihood(params: &RbmParams, data: &Matrix, cap: usize) -> Result<f64> {
    let log_z = log_partition_function(params, cap)?;
    if data.is_empty() {
        return Err(Error::Empty("data"));
    }
    let mut total = 0.0;
    for row in data.iter_rows() {
        total += -free_energy(params, row)? - log_z;
    }
    Ok(total / data.rows() as f64)
}

/// `P(h_j = 1 | v)` for every hidden unit.
pub fn hidden_conditional(params: &RbmParams, v: &[f64]) -> Result<Vec<f64>> {
    check_dim("visible units", params.visible_count(), v.len())?;
    let mut out = vec![0.0; params.hidden_count()];
    params.hidden_activation(v, &mut out);
    out.iter_mut().for_each(|a| *a = sigmoid(*a));
    Ok(out)
}

/// `P(v_i = 1 | h)` for Bernoulli layers; the conditional mean
/// `b_i + σ_i Σ_j w_ij h_j` for Gaussian layers.
pub fn visible_conditional(params: &RbmParams, h: &[f64]) -> Result<Vec<f64>> {
    check_dim("hidden units", params.hidden_count(), h.len())?;
    let mut out = vec![0.0; params.visible_count()];
    params.visible_activation(h, &mut out);
    if params.visible_kind == VisibleKind::Bernoulli {
        out.iter_mut().for_each(|a| *a = sigmoid(*a));
    }
    Ok(out)
}

/// Which RBM unit a QUBO variable stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitRef {
    Visible(usize),
    Hidden(usize),
}

/// Quadratic unconstrained binary optimization problem `min xᵀQx`, with the
/// diagonal held in `linear` and upper-triangle couplers in `quadratic`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuboProblem {
    pub size: usize,
    pub linear: Vec<f64>,
    pub quadratic: BTreeMap<(usize, usize), f64>,
    pub variable_names: Vec<UnitRef>,
}

impl QuboProblem {
    pub fn objective(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(a, b)| a * b).sum();
        let quad: f64 = self.quadratic.iter().map(|(&(i, j), &q)| q * x[i] * x[j]).sum();
        lin + quad
    }

    /// Objective of an RBM state laid out as `[v…, h…]`.
    pub fn objective_of(&self, state: &JointState) -> f64 {
        let mut x = state.visible.clone();
        x.extend_from_slice(&state.hidden);
        self.objective(&x)
    }

    /// Splits a QUBO assignment back into an RBM joint state.
    pub fn to_state(&self, x: &[f64]) -> Result<JointState> {
        check_dim("QUBO variables", self.size, x.len())?;
        let mut state = JointState::new(Vec::new(), Vec::new());
        for (name, &value) in self.variable_names.iter().zip(x) {
            match name {
                UnitRef::Visible(_) => state.visible.push(value),
                UnitRef::Hidden(_) => state.hidden.push(value),
            }
        }
        Ok(state)
    }
}

/// QUBO whose objective equals the RBM energy on every joint state. Visible
/// units take indices `0..m`, hidden units `m..m+n`; zero couplers are omitted.
pub fn to_qubo(params: &RbmParams) -> Result<QuboProblem> {
    params.require_bernoulli("QUBO export")?;
    let m = params.visible_count();
    let n = params.hidden_count();
    let mut linear: Vec<f64> = params.visible_bias.iter().map(|b| -b).collect();
    linear.extend(params.hidden_bias.iter().map(|c| -c));
    let mut quadratic = BTreeMap::new();
    for i in 0..m {
        for j in 0..n {
            let w = params.weights.get(i, j);
            if w != 0.0 {
                quadratic.insert((i, m + j), -w);
            }
        }
    }
    let variable_names = (0..m)
        .map(UnitRef::Visible)
        .chain((0..n).map(UnitRef::Hidden))
        .collect();
    Ok(QuboProblem {
        size: m + n,
        linear,
        quadratic,
        variable_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log;

    fn rbm(b: &[f64], c: &[f64], w: &[&[f64]]) -> RbmParams {
        RbmParams::new(
            VisibleKind::Bernoulli,
            Matrix::from_rows(w).unwrap(),
            b.to_vec(),
            c.to_vec(),
            None,
        )
        .unwrap()
    }

    fn gaussian(b: &[f64], s: &[f64], c: &[f64], w: &[&[f64]]) -> RbmParams {
        RbmParams::new(
            VisibleKind::Gaussian,
            Matrix::from_rows(w).unwrap(),
            b.to_vec(),
            c.to_vec(),
            Some(s.to_vec()),
        )
        .unwrap()
    }

    #[test]
    fn energy_examples() {
        let zero = RbmParams::zeros(VisibleKind::Bernoulli, 2, 2);
        let s = JointState::new(vec![1.0, 0.0], vec![1.0, 1.0]);
        assert_eq!(energy(&zero, &s).unwrap(), 0.0);

        let p = rbm(&[1.0], &[-1.0], &[&[2.0]]);
        let s = JointState::new(vec![1.0], vec![1.0]);
        assert!((energy(&p, &s).unwrap() - -2.0).abs() < 1e-15);

        let g = gaussian(&[0.5], &[1.0], &[0.0], &[&[1.0]]);
        let s = JointState::new(vec![1.5], vec![1.0]);
        assert!((energy(&g, &s).unwrap() - -1.0).abs() < 1e-15);

        // Zero couplings: only the quadratic visible term remains.
        let g0 = RbmParams::zeros(VisibleKind::Gaussian, 1, 1);
        let s = JointState::new(vec![2.0], vec![0.0]);
        assert_eq!(energy(&g0, &s).unwrap(), 2.0);
    }

    #[test]
    fn energy_rejects_wrong_dimensions() {
        let p = RbmParams::zeros(VisibleKind::Bernoulli, 2, 1);
        let err = energy(&p, &JointState::new(vec![1.0], vec![0.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { axis: "visible units", .. }));
        let err = energy(&p, &JointState::new(vec![1.0, 0.0], vec![0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { axis: "hidden units", .. }));
    }

    #[test]
    fn partition_function_examples() {
        let z = partition_function(&RbmParams::zeros(VisibleKind::Bernoulli, 1, 1)).unwrap();
        assert!((z - 4.0).abs() < 1e-12);
        let z = partition_function(&RbmParams::zeros(VisibleKind::Bernoulli, 2, 1)).unwrap();
        assert!((z - 8.0).abs() < 1e-12);
        let p = rbm(&[1.0], &[0.0], &[&[0.0]]);
        let expected = 2.0 * (1.0 + core::f64::consts::E);
        assert!((partition_function(&p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn partition_function_refusals() {
        let g = RbmParams::zeros(VisibleKind::Gaussian, 1, 1);
        assert_eq!(
            partition_function(&g).unwrap_err(),
            Error::GaussianUnsupported("exact enumeration")
        );
        let big = RbmParams::zeros(VisibleKind::Bernoulli, 13, 12);
        let err = partition_function(&big).unwrap_err();
        assert_eq!(err, Error::AboveEnumerationCap { units: 25, cap: 24 });
        assert!(alloc::format!("{err}").contains("24"));
        assert!(log_partition_function(&big, 25).is_ok());
    }

    #[test]
    fn probability_examples() {
        let zero = RbmParams::zeros(VisibleKind::Bernoulli, 1, 1);
        let s = JointState::new(vec![1.0], vec![0.0]);
        assert!((joint_probability(&zero, &s).unwrap() - 0.25).abs() < 1e-15);
        assert!((marginal_visible(&zero, &[0.0]).unwrap() - 0.5).abs() < 1e-15);

        let p = rbm(&[1.0], &[0.0], &[&[0.0]]);
        let e = core::f64::consts::E;
        let jp = joint_probability(&p, &s).unwrap();
        assert!((jp - e / (2.0 * (1.0 + e))).abs() < 1e-12);
        assert!((jp - 0.36552).abs() < 1e-5);
        let mv = marginal_visible(&p, &[1.0]).unwrap();
        assert!((mv - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn conditional_examples() {
        let zero = RbmParams::zeros(VisibleKind::Bernoulli, 3, 2);
        assert_eq!(hidden_conditional(&zero, &[1.0, 0.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(visible_conditional(&zero, &[1.0, 0.0]).unwrap(), vec![0.5; 3]);

        let l3 = log(3.0);
        let p = rbm(&[0.0], &[0.0], &[&[l3]]);
        assert!((hidden_conditional(&p, &[1.0]).unwrap()[0] - 0.75).abs() < 1e-15);
        let p = rbm(&[0.0], &[-l3], &[&[l3]]);
        assert!((hidden_conditional(&p, &[0.0]).unwrap()[0] - 0.25).abs() < 1e-15);
        let p = rbm(&[l3], &[0.0], &[&[0.0]]);
        assert!((visible_conditional(&p, &[1.0]).unwrap()[0] - 0.75).abs() < 1e-15);

        let g = gaussian(&[1.0], &[2.0], &[0.0], &[&[0.5]]);
        assert_eq!(visible_conditional(&g, &[1.0]).unwrap(), vec![2.0]);
        // Gaussian visibles enter the hidden activation as v/σ.
        let g = gaussian(&[0.0], &[2.0], &[0.0], &[&[l3]]);
        assert!((hidden_conditional(&g, &[2.0]).unwrap()[0] - 0.75).abs() < 1e-15);

        assert!(hidden_conditional(&zero, &[1.0]).is_err());
        assert!(visible_conditional(&zero, &[1.0]).is_err());
    }

    #[test]
    fn qubo_examples() {
        let q = to_qubo(&RbmParams::zeros(VisibleKind::Bernoulli, 2, 3)).unwrap();
        assert_eq!(q.size, 5);
        assert!(q.linear.iter().all(|&x| x == 0.0));
        assert!(q.quadratic.is_empty());
        assert_eq!(q.variable_names[2], UnitRef::Hidden(0));

        let p = rbm(&[1.0], &[-1.0], &[&[2.0]]);
        let q = to_qubo(&p).unwrap();
        let s = JointState::new(vec![1.0], vec![1.0]);
        assert_eq!(q.objective_of(&s), -2.0);
        assert_eq!(q.objective_of(&s), energy(&p, &s).unwrap());
        assert_eq!(q.to_state(&[1.0, 1.0]).unwrap(), s);

        assert!(to_qubo(&RbmParams::zeros(VisibleKind::Gaussian, 1, 1)).is_err());
    }

    #[test]
    fn binary_index_round_trip() {
        for k in 0..32 {
            let s = JointState::from_binary_index(k, 3, 2);
            assert_eq!(s.binary_index(), k);
        }
    }

    #[test]
    fn validation_catches_bad_params() {
        let mut p = RbmParams::zeros(VisibleKind::Gaussian, 2, 1);
        p.visible_std[0] = 0.0;
        assert!(p.validate().is_err());
        let mut p = RbmParams::zeros(VisibleKind::Bernoulli, 2, 1);
        p.hidden_bias[0] = f64::NAN;
        assert!(p.validate().is_err());
        assert!(RbmParams::new(
            VisibleKind::Bernoulli,
            Matrix::zeros(2, 2),
            vec![0.0; 3],
            vec![0.0; 2],
            None
        )
        .is_err());
    }
}
