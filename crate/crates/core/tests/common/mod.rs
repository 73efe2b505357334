//! Brute-force reference implementations written straight from the energy
//! definitions, with no log-space tricks and no code shared with the crate.
#![allow(dead_code)]

use proptest::prelude::*;
use qdiag_core::{Matrix, RbmParams, VisibleKind};

pub fn energy(p: &RbmParams, v: &[f64], h: &[f64]) -> f64 {
    let (m, n) = (v.len(), h.len());
    let mut e = 0.0;
    for i in 0..m {
        let s = p.visible_std[i];
        e += match p.visible_kind {
            VisibleKind::Bernoulli => -p.visible_bias[i] * v[i],
            VisibleKind::Gaussian => (v[i] - p.visible_bias[i]).powi(2) / (2.0 * s * s),
        };
    }
    for j in 0..n {
        e -= p.hidden_bias[j] * h[j];
    }
    for i in 0..m {
        let vi = match p.visible_kind {
            VisibleKind::Bernoulli => v[i],
            VisibleKind::Gaussian => v[i] / p.visible_std[i],
        };
        for j in 0..n {
            e -= vi * p.weights.get(i, j) * h[j];
        }
    }
    e
}

/// All binary vectors of length `len`, unit 0 as the least significant bit.
pub fn binary_vectors(len: usize) -> Vec<Vec<f64>> {
    (0..1usize << len)
        .map(|k| (0..len).map(|i| ((k >> i) & 1) as f64).collect())
        .collect()
}

/// Every joint state with its probability, in `(v, h)` enumeration order.
pub fn joint_table(p: &RbmParams) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let (m, n) = (p.visible_count(), p.hidden_count());
    let mut rows = Vec::new();
    for v in binary_vectors(m) {
        for h in binary_vectors(n) {
            let w = (-energy(p, &v, &h)).exp();
            rows.push((v.clone(), h, w));
        }
    }
    let z: f64 = rows.iter().map(|r| r.2).sum();
    for r in &mut rows {
        r.2 /= z;
    }
    rows
}

pub fn partition(p: &RbmParams) -> f64 {
    let mut z = 0.0;
    for v in binary_vectors(p.visible_count()) {
        for h in binary_vectors(p.hidden_count()) {
            z += (-energy(p, &v, &h)).exp();
        }
    }
    z
}

pub fn marginal(p: &RbmParams, v: &[f64]) -> f64 {
    let z = partition(p);
    binary_vectors(p.hidden_count())
        .iter()
        .map(|h| (-energy(p, v, h)).exp())
        .sum::<f64>()
        / z
}

pub struct Moments {
    pub pair: Vec<Vec<f64>>,
    pub visible: Vec<f64>,
    pub hidden: Vec<f64>,
}

pub fn moments(p: &RbmParams) -> Moments {
    let (m, n) = (p.visible_count(), p.hidden_count());
    let mut out = Moments {
        pair: vec![vec![0.0; n]; m],
        visible: vec![0.0; m],
        hidden: vec![0.0; n],
    };
    for (v, h, pr) in joint_table(p) {
        for i in 0..m {
            out.visible[i] += pr * v[i];
            for j in 0..n {
                out.pair[i][j] += pr * v[i] * h[j];
            }
        }
        for j in 0..n {
            out.hidden[j] += pr * h[j];
        }
    }
    out
}

pub fn linf(est: &qdiag_core::ExpectationEstimate, o: &Moments) -> f64 {
    let mut d: f64 = 0.0;
    for (i, row) in o.pair.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            d = d.max((est.pair.get(i, j) - x).abs());
        }
    }
    for (a, b) in est.visible.iter().zip(&o.visible) {
        d = d.max((a - b).abs());
    }
    for (a, b) in est.hidden.iter().zip(&o.hidden) {
        d = d.max((a - b).abs());
    }
    d
}

pub fn bernoulli_rbm(m: usize, n: usize, w: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> RbmParams {
    RbmParams::new(VisibleKind::Bernoulli, Matrix::from_vec(m, n, w).unwrap(), b, c, None).unwrap()
}

/// Bernoulli RBMs with `1..=max_m` visible and `1..=max_n` hidden units and
/// parameters in `[-scale, scale]`.
pub fn arb_rbm(max_m: usize, max_n: usize, scale: f64) -> impl Strategy<Value = RbmParams> {
    (1..=max_m, 1..=max_n).prop_flat_map(move |(m, n)| {
        (
            prop::collection::vec(-scale..scale, m * n),
            prop::collection::vec(-scale..scale, m),
            prop::collection::vec(-scale..scale, n),
        )
            .prop_map(move |(w, b, c)| bernoulli_rbm(m, n, w, b, c))
    })
}

/// Seeded uniform `[-scale, scale]` parameters, independent of proptest.
pub fn seeded_rbm(m: usize, n: usize, scale: f64, seed: u64) -> RbmParams {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |k: usize| (0..k).map(|_| rng.random_range(-scale..scale)).collect::<Vec<f64>>();
    let w = draw(m * n);
    let b = draw(m);
    let c = draw(n);
    bernoulli_rbm(m, n, w, b, c)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}
