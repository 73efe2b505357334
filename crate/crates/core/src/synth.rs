//! Seeded synthetic process data: AR(1) fluctuations around a steady state
//! with faults injected after an onset time.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::RawSeries;
use crate::error::{check_dim, Error, Result};
use crate::math::sqrt;
use crate::matrix::Matrix;
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    /// Adds `magnitude·σ` scaled linearly from 0 at onset to 1 at the end.
    SensorDrift,
    /// Multiplies the value by a gain falling linearly to `1 − magnitude`.
    SlowDecay,
    /// Adds `magnitude·σ` from onset on.
    StepShift,
    /// Adds a Gaussian random walk whose spread reaches about `magnitude·σ`.
    RandomWalk,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::SensorDrift => "drift",
            FaultKind::SlowDecay => "decay",
            FaultKind::StepShift => "step",
            FaultKind::RandomWalk => "random-walk",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultSpec {
    pub fault_id: usize,
    pub kind: FaultKind,
    pub affected_variables: Vec<usize>,
    /// In units of the variable's noise σ (a fraction for `SlowDecay`).
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessSpec {
    pub variable_names: Vec<String>,
    pub steady_state: Vec<f64>,
    pub noise_std: Vec<f64>,
    pub ar_coefficient: f64,
    pub fault_specs: Vec<FaultSpec>,
    pub duration: usize,
    pub fault_onset: usize,
    pub rng_seed: u64,
    /// Minutes between samples.
    pub sampling_interval: f64,
}

impl ProcessSpec {
    pub fn dims(&self) -> usize {
        self.steady_state.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        check_dim("noise std", d, self.noise_std.len())?;
        check_dim("variable names", d, self.variable_names.len())?;
        if d == 0 {
            return Err(Error::Empty("process variables"));
        }
        if self.fault_onset >= self.duration {
            return Err(Error::InvalidParameter(format!(
                "fault onset {} must precede duration {}",
                self.fault_onset, self.duration
            )));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return Err(Error::InvalidParameter("AR coefficient must lie in [0, 1)".into()));
        }
        if self.noise_std.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidParameter("noise std must be >= 0".into()));
        }
        for f in &self.fault_specs {
            if f.fault_id == 0 {
                return Err(Error::InvalidParameter("fault ids start at 1".into()));
            }
            if let Some(&bad) = f.affected_variables.iter().find(|&&i| i >= d) {
                return Err(Error::InvalidParameter(format!(
                    "fault {} affects variable {bad}, but only {d} exist",
                    f.fault_id
                )));
            }
        }
        Ok(())
    }

    /// Same process with a single fault (or none) and another seed.
    pub fn with_fault(&self, fault: Option<FaultSpec>, seed: u64) -> Self {
        Self {
            fault_specs: fault.into_iter().collect(),
            rng_seed: seed,
            ..self.clone()
        }
    }
}

/// Generates one series. The fluctuation stream does not depend on the
/// faults, so a zero-magnitude fault reproduces the fault-free series.
pub fn generate(spec: &ProcessSpec) -> Result<RawSeries> {
    spec.validate()?;
    let d = spec.dims();
    let t_len = spec.duration;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, 0));
    let mut fault_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, 1));
    let a = spec.ar_coefficient;
    let innovation = sqrt(1.0 - a * a);
    let mut e: Vec<f64> = spec
        .noise_std
        .iter()
        .map(|s| {
            let xi: f64 = StandardNormal.sample(&mut noise_rng);
            s * xi
        })
        .collect();
    let mut walks: Vec<Vec<f64>> = spec
        .fault_specs
        .iter()
        .map(|f| vec![0.0; f.affected_variables.len()])
        .collect();
    let span = (t_len - spec.fault_onset) as f64;
    let fault_label = spec.fault_specs.first().map_or(0, |f| f.fault_id);
    let mut values = Matrix::zeros(t_len, d);
    let mut labels = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if t > 0 {
            for (ei, s) in e.iter_mut().zip(&spec.noise_std) {
                let xi: f64 = StandardNormal.sample(&mut noise_rng);
                *ei = a * *ei + innovation * s * xi;
            }
        }
        let row = values.row_mut(t);
        for ((x, ss), ei) in row.iter_mut().zip(&spec.steady_state).zip(&e) {
            *x = ss + ei;
        }
        let faulty = t >= spec.fault_onset;
        if faulty {
            let frac = (t - spec.fault_onset) as f64 / span;
            for (f, walk) in spec.fault_specs.iter().zip(walks.iter_mut()) {
                for (k, &i) in f.affected_variables.iter().enumerate() {
                    let sigma = spec.noise_std[i];
                    match f.kind {
                        FaultKind::SensorDrift => row[i] += f.magnitude * frac * sigma,
                        FaultKind::SlowDecay => row[i] *= 1.0 - f.magnitude * frac,
                        FaultKind::StepShift => row[i] += f.magnitude * sigma,
                        FaultKind::RandomWalk => {
                            let xi: f64 = StandardNormal.sample(&mut fault_rng);
                            walk[k] += xi * f.magnitude * sigma / sqrt(span);
                            row[i] += walk[k];
                        }
                    }
                }
            }
        }
        labels.push(if faulty { fault_label } else { 0 });
    }
    let mut series = RawSeries::new(values, labels, spec.variable_names.clone())?;
    series.sampling_interval = spec.sampling_interval;
    Ok(series)
}

/// One member of a generated suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteMember {
    pub name: String,
    /// 0 for the normal member.
    pub fault_id: usize,
    pub onset: Option<usize>,
    pub series: RawSeries,
}

/// A normal series plus one series per fault, each with its own derived seed.
pub fn generate_suite(base: &ProcessSpec, faults: &[FaultSpec]) -> Result<Vec<SuiteMember>> {
    let mut ids: Vec<usize> = faults.iter().map(|f| f.fault_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter("duplicate fault ids in suite".into()));
    }
    let mut out = Vec::with_capacity(faults.len() + 1);
    let normal = base.with_fault(None, derive_seed(base.rng_seed, 0));
    out.push(SuiteMember {
        name: "normal".into(),
        fault_id: 0,
        onset: None,
        series: generate(&normal)?,
    });
    for f in faults {
        let spec = base.with_fault(Some(f.clone()), derive_seed(base.rng_seed, f.fault_id as u64));
        out.push(SuiteMember {
            name: format!("fault_{:02}", f.fault_id),
            fault_id: f.fault_id,
            onset: Some(base.fault_onset),
            series: generate(&spec)?,
        });
    }
    Ok(out)
}

/// Built-in process layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 7-variable reactor with three faults (drift, decay, step).
    Cstr,
    /// 52-variable plant with twenty faults.
    Te,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Cstr => "cstr",
            Preset::Te => "te",
        }
    }

    pub fn spec(self, seed: u64) -> ProcessSpec {
        match self {
            Preset::Cstr => {
                let names = ["Ci", "Ti", "Tci", "C", "T", "Tc", "Qc"];
                ProcessSpec {
                    variable_names: names.iter().map(|s| String::from(*s)).collect(),
                    steady_state: vec![1.0, 350.0, 300.0, 0.5, 390.0, 310.0, 100.0],
                    noise_std: vec![0.02, 1.0, 1.0, 0.01, 1.0, 1.0, 2.0],
                    ar_coefficient: 0.3,
                    fault_specs: Vec::new(),
                    duration: 1200,
                    fault_onset: 200,
                    rng_seed: seed,
                    sampling_interval: 1.0,
                }
            }
            Preset::Te => {
                let d = 52;
                ProcessSpec {
                    variable_names: (1..=d)
                        .map(|i| if i <= 41 { format!("XMEAS{i}") } else { format!("XMV{}", i - 41) })
                        .collect(),
                    steady_state: (0..d).map(|i| 10.0 + 5.0 * (i % 9) as f64).collect(),
                    noise_std: (0..d).map(|i| 0.5 + 0.25 * (i % 4) as f64).collect(),
                    ar_coefficient: 0.5,
                    fault_specs: Vec::new(),
                    duration: 1200,
                    fault_onset: 200,
                    rng_seed: seed,
                    sampling_interval: 3.0,
                }
            }
        }
    }

    /// Fault catalogue at `magnitude` σ.
    pub fn faults(self, magnitude: f64) -> Vec<FaultSpec> {
        match self {
            Preset::Cstr => {
                let spec = self.spec(0);
                // C and Qc share σ/steady-state = 0.02, so one gain moves both by `magnitude` σ.
                let decay = magnitude * spec.noise_std[3] / spec.steady_state[3];
                vec![
                    FaultSpec {
                        fault_id: 1,
                        kind: FaultKind::SensorDrift,
                        affected_variables: vec![4, 5],
                        magnitude,
                    },
                    FaultSpec {
                        fault_id: 2,
                        kind: FaultKind::SlowDecay,
                        affected_variables: vec![3, 6],
                        magnitude: decay,
                    },
                    FaultSpec {
                        fault_id: 3,
                        kind: FaultKind::StepShift,
                        affected_variables: vec![5, 6],
                        magnitude,
                    },
                ]
            }
            Preset::Te => {
                let spec = self.spec(0);
                let kinds = [
                    FaultKind::StepShift,
                    FaultKind::SensorDrift,
                    FaultKind::RandomWalk,
                    FaultKind::SlowDecay,
                ];
                (1..=20usize)
                    .map(|id| {
                        let vars: Vec<usize> = (0..3).map(|k| (id * 7 + k * 13) % 52).collect();
                        let kind = kinds[(id - 1) % 4];
                        let magnitude = match kind {
                            FaultKind::SlowDecay => {
                                let i = vars[0];
                                magnitude * spec.noise_std[i] / spec.steady_state[i]
                            }
                            _ => magnitude,
                        };
                        FaultSpec {
                            fault_id: id,
                            kind,
                            affected_variables: vars,
                            magnitude,
                        }
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_fault_free_series_is_constant() {
        let mut spec = Preset::Cstr.spec(1);
        spec.noise_std = vec![0.0; 7];
        let s = generate(&spec).unwrap();
        for r in s.values.iter_rows() {
            assert_eq!(r, &spec.steady_state[..]);
        }
        assert!(s.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn labels_switch_at_onset() {
        let base = Preset::Cstr.spec(3);
        let spec = base.with_fault(Some(Preset::Cstr.faults(3.0)[2].clone()), 3);
        let s = generate(&spec).unwrap();
        assert!(s.labels[..200].iter().all(|&l| l == 0));
        assert!(s.labels[200..].iter().all(|&l| l == 3));
        assert_eq!(generate(&spec).unwrap(), s);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = Preset::Cstr.spec(0);
        spec.fault_specs = vec![FaultSpec {
            fault_id: 1,
            kind: FaultKind::StepShift,
            affected_variables: vec![7],
            magnitude: 1.0,
        }];
        assert!(generate(&spec).is_err());
        let mut spec = Preset::Cstr.spec(0);
        spec.fault_onset = 1200;
        assert!(generate(&spec).is_err());
        let dup = vec![Preset::Cstr.faults(1.0)[0].clone(), Preset::Cstr.faults(1.0)[0].clone()];
        assert!(generate_suite(&Preset::Cstr.spec(0), &dup).is_err());
    }

    #[test]
    fn suite_sizes() {
        let cstr = generate_suite(&Preset::Cstr.spec(7), &Preset::Cstr.faults(3.0)).unwrap();
        assert_eq!(cstr.len(), 4);
        let mut te_spec = Preset::Te.spec(7);
        te_spec.duration = 300;
        let te = generate_suite(&te_spec, &Preset::Te.faults(3.0)).unwrap();
        assert_eq!(te.len(), 21);
        assert!(te.iter().all(|m| m.series.dims() == 52));
    }
}
