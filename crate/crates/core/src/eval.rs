//! Detection and identification metrics, energy histograms and sampler
//! comparisons.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::rbm::{energy, RbmParams, VisibleKind};
use crate::sampler::{anneal_sample, exact_expectations, AnnealConfig, ModelSampler};
use crate::seed::derive_seed;
use crate::training::{train_rbm, LossCurve, TrainingConfig};

/// `100·num/den`, absent when `den` is zero. The division is the only rounding step.
pub fn percent(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(100.0 * num as f64 / den as f64)
    }
}

/// Raw counts behind FDR and FAR.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    /// Faulty samples flagged faulty (`p`).
    pub detected: usize,
    pub faulty_total: usize,
    /// Normal samples flagged faulty (`q`).
    pub false_alarms: usize,
    pub normal_total: usize,
}

impl DetectionCounts {
    pub fn fdr(&self) -> Option<f64> {
        percent(self.detected, self.faulty_total)
    }

    pub fn far(&self) -> Option<f64> {
        percent(self.false_alarms, self.normal_total)
    }

    pub fn missed_rate(&self) -> Option<f64> {
        percent(self.faulty_total - self.detected, self.faulty_total)
    }

    pub fn merge(&self, other: &DetectionCounts) -> DetectionCounts {
        DetectionCounts {
            detected: self.detected + other.detected,
            faulty_total: self.faulty_total + other.faulty_total,
            false_alarms: self.false_alarms + other.false_alarms,
            normal_total: self.normal_total + other.normal_total,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionMetrics {
    pub counts: DetectionCounts,
    pub fdr: Option<f64>,
    pub far: Option<f64>,
}

impl From<DetectionCounts> for DetectionMetrics {
    fn from(counts: DetectionCounts) -> Self {
        Self {
            counts,
            fdr: counts.fdr(),
            far: counts.far(),
        }
    }
}

/// FDR over truly faulty samples and FAR over truly normal ones.
pub fn detection_metrics(predicted_faulty: &[bool], truly_faulty: &[bool]) -> Result<DetectionMetrics> {
    check_dim("prediction count", truly_faulty.len(), predicted_faulty.len())?;
    let mut c = DetectionCounts::default();
    for (&p, &t) in predicted_faulty.iter().zip(truly_faulty) {
        if t {
            c.faulty_total += 1;
            c.detected += p as usize;
        } else {
            c.normal_total += 1;
            c.false_alarms += p as usize;
        }
    }
    Ok(c.into())
}

/// Detection metrics at each threshold (faulty iff `p > t`).
pub fn threshold_sweep(
    p_faulty: &[f64],
    truly_faulty: &[bool],
    thresholds: &[f64],
) -> Result<Vec<(f64, DetectionMetrics)>> {
    thresholds
        .iter()
        .map(|&t| {
            let pred: Vec<bool> = p_faulty.iter().map(|&p| p > t).collect();
            Ok((t, detection_metrics(&pred, truly_faulty)?))
        })
        .collect()
}

/// Multi-class results. Class 0 is normal.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationMetrics {
    /// `confusion[i][j]`: samples of true class `i` predicted as `j`.
    pub confusion: Vec<Vec<usize>>,
    pub class_counts: Vec<usize>,
    /// Per-class percentage of correctly classified samples.
    pub fdr: Vec<Option<f64>>,
    /// Percentage of normal samples predicted as class `j` (entry 0 is absent).
    pub far: Vec<Option<f64>>,
}

impl IdentificationMetrics {
    pub fn class_count(&self) -> usize {
        self.confusion.len()
    }
}

pub fn identification_metrics(
    predicted: &[usize],
    truth: &[usize],
    class_count: usize,
) -> Result<IdentificationMetrics> {
    check_dim("prediction count", truth.len(), predicted.len())?;
    if class_count == 0 {
        return Err(Error::Empty("classes"));
    }
    let mut confusion = vec![vec![0usize; class_count]; class_count];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= class_count || t >= class_count {
            return Err(Error::InvalidLabel(format!(
                "class {} outside [0, {class_count})",
                p.max(t)
            )));
        }
        confusion[t][p] += 1;
    }
    let class_counts: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let fdr = (0..class_count)
        .map(|i| percent(confusion[i][i], class_counts[i]))
        .collect();
    let far = (0..class_count)
        .map(|j| if j == 0 { None } else { percent(confusion[0][j], class_counts[0]) })
        .collect();
    Ok(IdentificationMetrics {
        confusion,
        class_counts,
        fdr,
        far,
    })
}

/// Unweighted mean of the defined entries; absent when none is defined.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// One evaluated test series.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// 0 for a fault-free series.
    pub fault_id: usize,
    pub name: String,
    pub metrics: DetectionMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub model_hash: String,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    /// Present for identification runs.
    pub identification: Option<IdentificationMetrics>,
}

impl EvalReport {
    /// Unweighted mean FDR over fault series.
    pub fn average_fdr(&self) -> Option<f64> {
        let v: Vec<Option<f64>> = self.rows.iter().filter(|r| r.fault_id != 0).map(|r| r.metrics.fdr).collect();
        mean_defined(&v)
    }

    /// Unweighted mean FAR over all series with normal samples.
    pub fn average_far(&self) -> Option<f64> {
        let v: Vec<Option<f64>> = self.rows.iter().map(|r| r.metrics.far).collect();
        mean_defined(&v)
    }

    pub fn fdr_of(&self, fault_id: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.fault_id == fault_id).and_then(|r| r.metrics.fdr)
    }

    /// Multi-line text summary.
    pub fn summary(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or(String::from("n/a"), |v| format!("{v:.2}"));
        let mut s = format!(
            "dataset {}  model {}  seed {}\n{:<12} {:>8} {:>8} {:>8} {:>8}\n",
            self.dataset, self.model_hash, self.seed, "series", "fault", "FDR%", "FAR%", "samples"
        );
        for r in &self.rows {
            let c = r.metrics.counts;
            s += &format!(
                "{:<12} {:>8} {:>8} {:>8} {:>8}\n",
                r.name,
                r.fault_id,
                fmt(r.metrics.fdr),
                fmt(r.metrics.far),
                c.faulty_total + c.normal_total
            );
        }
        s += &format!(
            "average FDR {}%  average FAR {}%\n",
            fmt(self.average_fdr()),
            fmt(self.average_far())
        );
        if let Some(id) = &self.identification {
            let faults: Vec<Option<f64>> = id.fdr.iter().skip(1).copied().collect();
            s += &format!("identification: mean per-fault FDR {}%\n", fmt(mean_defined(&faults)));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub h1: usize,
    pub h2: usize,
    pub fault_id: usize,
    /// Absent when undefined or when the cell failed under keep-going.
    pub fdr: Option<f64>,
}

/// FDR per fault over a grid of two-layer architectures.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    pub axis1: Vec<usize>,
    pub axis2: Vec<usize>,
    pub fault_ids: Vec<usize>,
    /// Ordered by `h1`, then `h2`, then fault id.
    pub cells: Vec<GridCell>,
}

impl HeatmapGrid {
    pub fn is_complete(&self) -> bool {
        self.cells.len() == self.axis1.len() * self.axis2.len() * self.fault_ids.len()
    }

    pub fn get(&self, h1: usize, h2: usize, fault_id: usize) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.h1 == h1 && c.h2 == h2 && c.fault_id == fault_id)
    }
}

/// Energies of one configuration's reads binned on shared edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyHistogram {
    pub scaling_factor: f64,
    pub energies: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean_energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyHistogramSet {
    /// `bins + 1` increasing edges shared by all histograms.
    pub edges: Vec<f64>,
    pub histograms: Vec<EnergyHistogram>,
}

/// Samples each configuration with the annealer and bins the energies under
/// the unscaled parameters.
pub fn energy_histogram(
    params: &RbmParams,
    configs: &[AnnealConfig],
    bins: usize,
) -> Result<EnergyHistogramSet> {
    if params.visible_kind != VisibleKind::Bernoulli {
        return Err(Error::GaussianUnsupported("energy histograms"));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    let mut all = Vec::with_capacity(configs.len());
    for c in configs {
        let reads = anneal_sample(params, c)?;
        let energies = reads.iter().map(|s| energy(params, s)).collect::<Result<Vec<f64>>>()?;
        all.push((c.scaling_factor, energies));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in all.iter().flat_map(|(_, e)| e) {
        lo = lo.min(*e);
        hi = hi.max(*e);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 0.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let histograms = all
        .into_iter()
        .map(|(scaling_factor, energies)| {
            let mut counts = vec![0usize; bins];
            for &e in &energies {
                let k = (((e - lo) / width) as usize).min(bins - 1);
                counts[k] += 1;
            }
            let mean_energy = if energies.is_empty() {
                0.0
            } else {
                energies.iter().sum::<f64>() / energies.len() as f64
            };
            EnergyHistogram {
                scaling_factor,
                energies,
                counts,
                mean_energy,
            }
        })
        .collect();
    Ok(EnergyHistogramSet { edges, histograms })
}

/// One sampler's run within a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerRun {
    pub label: String,
    pub curve: LossCurve,
    pub epochs_to_target: Option<usize>,
    /// L∞ distance of the sampler's model expectations at the initial
    /// parameters from the exact ones; absent above the enumeration cap.
    pub bias: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerComparison {
    pub target_loss: Option<f64>,
    pub runs: Vec<SamplerRun>,
}

/// Trains the same initial RBM once per sampler with identical data, seed and
/// hyperparameters. When `target_loss` is `None`, the target is the loss of
/// the first exact-sampler run at its final epoch.
pub fn sampler_comparison(
    init: &RbmParams,
    data: &Matrix,
    samplers: &[ModelSampler],
    base: &TrainingConfig,
    target_loss: Option<f64>,
    cap: usize,
) -> Result<SamplerComparison> {
    if samplers.is_empty() {
        return Err(Error::Empty("sampler list"));
    }
    let exact = if init.visible_kind == VisibleKind::Bernoulli && init.unit_count() <= cap {
        Some(exact_expectations(init, cap)?)
    } else {
        None
    };
    let mut curves = Vec::with_capacity(samplers.len());
    for s in samplers {
        let config = TrainingConfig {
            sampler: s.clone(),
            ..base.clone()
        };
        let (_, curve) = train_rbm(init, data, &config)?;
        let bias = match &exact {
            Some(reference) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base.rng_seed, 0xB1A5));
                Some(s.model_expectations(init, data, &mut rng)?.max_abs_diff(reference))
            }
            None => None,
        };
        curves.push((s.label(), curve, bias));
    }
    let target = target_loss.or_else(|| {
        samplers
            .iter()
            .zip(&curves)
            .find(|(s, _)| matches!(s, ModelSampler::Exact { .. }))
            .and_then(|(_, (_, c, _))| c.records.last().map(|r| r.loss))
    });
    let runs = curves
        .into_iter()
        .map(|(label, curve, bias)| SamplerRun {
            epochs_to_target: target.and_then(|t| curve.first_epoch_reaching(t)),
            label,
            curve,
            bias,
        })
        .collect();
    Ok(SamplerComparison {
        target_loss: target,
        runs,
    })
}
