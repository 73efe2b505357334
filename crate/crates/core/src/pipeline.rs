//! End-to-end detection and identification: normalize, window, pretrain the
//! two DBN branches, fine-tune, evaluate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{
    diagnose, global_identify, train_discriminative, train_head, ClassifierParams, Diagnosis, DiagnosisModel,
    DiscriminativeConfig,
};
use crate::data::{window, LabelRule, Normalizer, RawSeries, WindowedDataset};
use crate::error::{Error, Result};
use crate::eval::{detection_metrics, identification_metrics, GridCell, HeatmapGrid, IdentificationMetrics, ReportRow};
use crate::matrix::Matrix;
use crate::rbm::VisibleKind;
use crate::seed::{derive_seed, derive_seed_multi};
use crate::training::{train_dbn, DbnModel, DbnTraining, LossCurve, TrainingConfig};

const BRANCH_NORMAL: u64 = 1;
const BRANCH_FAULT: u64 = 2;
const STAGE_HEAD_INIT: u64 = 10;
const STAGE_FINETUNE: u64 = 11;
const STAGE_GLOBAL: u64 = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub window_length: usize,
    pub label_rule: LabelRule,
    /// Hidden widths of the DBN layers; the input width follows from the window.
    pub hidden_sizes: Vec<usize>,
    /// Settings of the Gaussian first layer.
    pub gaussian_layer: TrainingConfig,
    /// Settings shared by all binary layers.
    pub binary_layer: TrainingConfig,
    pub discriminative: DiscriminativeConfig,
    pub threshold: f64,
    pub rng_seed: u64,
}

impl PipelineConfig {
    /// Window 4 and a 15-8 DBN.
    pub fn cstr_default() -> Self {
        Self {
            window_length: 4,
            label_rule: LabelRule::Last,
            hidden_sizes: vec![15, 8],
            gaussian_layer: TrainingConfig::gaussian_default(),
            binary_layer: TrainingConfig::bernoulli_default(),
            discriminative: DiscriminativeConfig::default(),
            threshold: 0.5,
            rng_seed: 0,
        }
    }

    /// Window 1 and a 26-20 DBN.
    pub fn te_default() -> Self {
        Self {
            window_length: 1,
            hidden_sizes: vec![26, 20],
            ..Self::cstr_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 {
            return Err(Error::InvalidParameter("window length must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidParameter("hidden sizes must be non-empty and positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        self.gaussian_layer.validate()?;
        self.binary_layer.validate()
    }

    /// Per-layer configs of one branch with seeds derived from the run seed.
    pub fn layer_configs(&self, branch: u64) -> Vec<TrainingConfig> {
        (0..self.hidden_sizes.len())
            .map(|k| {
                let base = if k == 0 { &self.gaussian_layer } else { &self.binary_layer };
                TrainingConfig {
                    rng_seed: derive_seed_multi(self.rng_seed, &[branch, k as u64]),
                    ..base.clone()
                }
            })
            .collect()
    }
}

/// Fits the normalizer on the normal-labelled rows of the training series.
pub fn fit_normalizer(train: &[RawSeries]) -> Result<Normalizer> {
    let dims = train.first().ok_or(Error::Empty("training series"))?.dims();
    let mut rows = Vec::new();
    let mut n = 0;
    for s in train {
        if s.dims() != dims {
            return Err(Error::DimensionMismatch {
                axis: "training series variables",
                expected: dims,
                actual: s.dims(),
            });
        }
        for (r, &l) in s.values.iter_rows().zip(&s.labels) {
            if l == 0 {
                rows.extend_from_slice(r);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Empty("normal training rows"));
    }
    let normal = RawSeries::new(Matrix::from_vec(n, dims, rows)?, vec![0; n], train[0].variable_names.clone())?;
    Normalizer::fit(&[&normal])
}

/// Normalizes and windows each series separately, then stacks the windows.
pub fn windowed(
    series: &[RawSeries],
    normalizer: &Normalizer,
    window_length: usize,
    rule: LabelRule,
) -> Result<WindowedDataset> {
    let parts = series
        .iter()
        .map(|s| window(&normalizer.apply(s)?, window_length, rule))
        .collect::<Result<Vec<_>>>()?;
    WindowedDataset::concat(&parts)
}

fn rows_where(data: &WindowedDataset, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    (0..data.len()).filter(|&i| keep(data.labels[i])).collect()
}

fn pretrain_branch(data: &WindowedDataset, rows: &[usize], config: &PipelineConfig, branch: u64) -> Result<DbnTraining> {
    if rows.is_empty() {
        return Err(Error::Empty(if branch == BRANCH_NORMAL {
            "normal training windows"
        } else {
            "faulty training windows"
        }));
    }
    let samples = data.samples.select_rows(rows);
    train_dbn(
        VisibleKind::Gaussian,
        &config.hidden_sizes,
        &samples,
        &config.layer_configs(branch),
    )
}

/// Generative stage: DBN-N on normal windows, DBN-F on faulty windows
/// (all faults, or only `fault` when given).
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub normal: DbnTraining,
    pub fault: DbnTraining,
}

pub fn pretrain(data: &WindowedDataset, config: &PipelineConfig, fault: Option<usize>) -> Result<Pretrained> {
    config.validate()?;
    let normal = pretrain_branch(data, &rows_where(data, |l| l == 0), config, BRANCH_NORMAL)?;
    let fault = pretrain_fault(data, config, fault)?;
    Ok(Pretrained { normal, fault })
}

fn pretrain_fault(data: &WindowedDataset, config: &PipelineConfig, fault: Option<usize>) -> Result<DbnTraining> {
    let rows = rows_where(data, |l| match fault {
        Some(f) => l == f,
        None => l != 0,
    });
    let branch = derive_seed(BRANCH_FAULT, fault.unwrap_or(0) as u64);
    pretrain_branch(data, &rows, config, branch)
}

/// Discriminative stage over normal windows plus faulty ones (all faults, or
/// only `fault`). Labels are collapsed to normal/faulty.
pub fn finetune(
    dbn_normal: DbnModel,
    dbn_fault: DbnModel,
    data: &WindowedDataset,
    config: &PipelineConfig,
    fault: Option<usize>,
) -> Result<(DiagnosisModel, LossCurve)> {
    let rows = rows_where(data, |l| match fault {
        Some(f) => l == 0 || l == f,
        None => true,
    });
    let samples = data.samples.select_rows(&rows);
    let labels: Vec<usize> = rows.iter().map(|&i| (data.labels[i] != 0) as usize).collect();
    let tag = fault.unwrap_or(0) as u64;
    let width = dbn_normal.output_dim() + dbn_fault.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_multi(config.rng_seed, &[STAGE_HEAD_INIT, tag]));
    let head = ClassifierParams::random_init(width, 2, &mut rng);
    let model = DiagnosisModel::new(dbn_normal, dbn_fault, head, config.threshold)?;
    let dconfig = DiscriminativeConfig {
        rng_seed: derive_seed_multi(config.rng_seed, &[STAGE_FINETUNE, tag]),
        ..config.discriminative.clone()
    };
    train_discriminative(&model, &samples, &labels, &dconfig)
}

/// A fitted detector with its preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionPipeline {
    pub normalizer: Normalizer,
    pub window_length: usize,
    pub label_rule: LabelRule,
    pub model: DiagnosisModel,
}

#[derive(Clone, Debug)]
pub struct FittedDetection {
    pub pipeline: DetectionPipeline,
    /// DBN-N layer curves followed by DBN-F layer curves.
    pub pretrain_curves: Vec<LossCurve>,
    pub finetune_curve: LossCurve,
}

pub fn fit_detection(train: &[RawSeries], config: &PipelineConfig) -> Result<FittedDetection> {
    config.validate()?;
    let normalizer = fit_normalizer(train)?;
    let data = windowed(train, &normalizer, config.window_length, config.label_rule)?;
    let pre = pretrain(&data, config, None)?;
    let (model, finetune_curve) = finetune(pre.normal.model, pre.fault.model, &data, config, None)?;
    let mut pretrain_curves = pre.normal.curves;
    pretrain_curves.extend(pre.fault.curves);
    Ok(FittedDetection {
        pipeline: DetectionPipeline {
            normalizer,
            window_length: config.window_length,
            label_rule: config.label_rule,
            model,
        },
        pretrain_curves,
        finetune_curve,
    })
}

impl DetectionPipeline {
    pub fn predict(&self, series: &RawSeries) -> Result<(WindowedDataset, Diagnosis)> {
        let data = windowed(core::slice::from_ref(series), &self.normalizer, self.window_length, self.label_rule)?;
        let diagnosis = diagnose(&self.model, &data.samples)?;
        Ok((data, diagnosis))
    }

    /// One report row per named test series.
    pub fn evaluate(&self, tests: &[(String, RawSeries)]) -> Result<Vec<ReportRow>> {
        tests
            .iter()
            .map(|(name, series)| {
                let (data, diagnosis) = self.predict(series)?;
                let truth: Vec<bool> = data.labels.iter().map(|&l| l != 0).collect();
                Ok(ReportRow {
                    fault_id: series.labels.iter().copied().find(|&l| l != 0).unwrap_or(0),
                    name: name.clone(),
                    metrics: detection_metrics(&diagnosis.faulty, &truth)?,
                })
            })
            .collect()
    }
}

/// Per-fault diagnosis models plus the global classifier over their outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationPipeline {
    pub normalizer: Normalizer,
    pub window_length: usize,
    pub label_rule: LabelRule,
    /// Class `k ≥ 1` is `fault_ids[k − 1]`; class 0 is normal.
    pub fault_ids: Vec<usize>,
    pub models: Vec<DiagnosisModel>,
    pub global_head: ClassifierParams,
}

#[derive(Clone, Debug)]
pub struct FittedIdentification {
    pub pipeline: IdentificationPipeline,
    pub finetune_curves: Vec<LossCurve>,
    pub global_curve: LossCurve,
}

/// Side-by-side `(p_normal, p_faulty)` columns of every model.
pub fn per_fault_probabilities(models: &[DiagnosisModel], samples: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(samples.rows(), 0);
    for m in models {
        out = out.hcat(&diagnose(m, samples)?.probs)?;
    }
    Ok(out)
}

pub fn fit_identification(train: &[RawSeries], config: &PipelineConfig) -> Result<FittedIdentification> {
    config.validate()?;
    let normalizer = fit_normalizer(train)?;
    let data = windowed(train, &normalizer, config.window_length, config.label_rule)?;
    let mut fault_ids: Vec<usize> = data.labels.iter().copied().filter(|&l| l != 0).collect();
    fault_ids.sort_unstable();
    fault_ids.dedup();
    if fault_ids.is_empty() {
        return Err(Error::Empty("faulty training windows"));
    }
    let normal = pretrain_branch(&data, &rows_where(&data, |l| l == 0), config, BRANCH_NORMAL)?;
    let mut models = Vec::with_capacity(fault_ids.len());
    let mut finetune_curves = Vec::with_capacity(fault_ids.len());
    for &f in &fault_ids {
        let fault = pretrain_fault(&data, config, Some(f))?;
        let (model, curve) = finetune(normal.model.clone(), fault.model, &data, config, Some(f))?;
        models.push(model);
        finetune_curves.push(curve);
    }
    let features = per_fault_probabilities(&models, &data.samples)?;
    let classes = class_indices(&data.labels, &fault_ids)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_multi(config.rng_seed, &[STAGE_HEAD_INIT, STAGE_GLOBAL]));
    let head = ClassifierParams::random_init(2 * fault_ids.len(), fault_ids.len() + 1, &mut rng);
    let gconfig = DiscriminativeConfig {
        rng_seed: derive_seed(config.rng_seed, STAGE_GLOBAL),
        ..config.discriminative.clone()
    };
    let (global_head, global_curve) = train_head(&head, &features, &classes, &gconfig)?;
    Ok(FittedIdentification {
        pipeline: IdentificationPipeline {
            normalizer,
            window_length: config.window_length,
            label_rule: config.label_rule,
            fault_ids,
            models,
            global_head,
        },
        finetune_curves,
        global_curve,
    })
}

/// Maps fault-id labels to class indices (0 = normal).
pub fn class_indices(labels: &[usize], fault_ids: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if l == 0 {
                Ok(0)
            } else {
                fault_ids
                    .iter()
                    .position(|&f| f == l)
                    .map(|k| k + 1)
                    .ok_or_else(|| Error::InvalidLabel(format!("fault id {l} has no trained model")))
            }
        })
        .collect()
}

impl IdentificationPipeline {
    /// Windows of `series` and the predicted class index per window.
    pub fn identify(&self, series: &RawSeries) -> Result<(WindowedDataset, Vec<usize>)> {
        let data = windowed(core::slice::from_ref(series), &self.normalizer, self.window_length, self.label_rule)?;
        let probs = per_fault_probabilities(&self.models, &data.samples)?;
        let classes = global_identify(&probs, &self.global_head)?;
        Ok((data, classes))
    }

    pub fn class_fault_id(&self, class: usize) -> usize {
        if class == 0 {
            0
        } else {
            self.fault_ids[class - 1]
        }
    }

    /// Confusion matrix and rates over all windows of all test series.
    pub fn evaluate(&self, tests: &[RawSeries]) -> Result<IdentificationMetrics> {
        let mut predicted = Vec::new();
        let mut truth = Vec::new();
        for s in tests {
            let (data, classes) = self.identify(s)?;
            truth.extend(class_indices(&data.labels, &self.fault_ids)?);
            predicted.extend(classes);
        }
        identification_metrics(&predicted, &truth, self.fault_ids.len() + 1)
    }
}

/// Trains and evaluates a two-layer detector for every `(h1, h2)` pair. Each
/// cell's seed depends only on the run seed and its architecture. With
/// `keep_going`, failed cells are recorded as absent instead of aborting.
pub fn grid_search(
    train: &[RawSeries],
    tests: &[(String, RawSeries)],
    axis1: &[usize],
    axis2: &[usize],
    config: &PipelineConfig,
    keep_going: bool,
) -> Result<HeatmapGrid> {
    if axis1.is_empty() || axis2.is_empty() {
        return Err(Error::Empty("grid axes"));
    }
    let mut fault_ids: Vec<usize> = tests
        .iter()
        .filter_map(|(_, s)| s.labels.iter().copied().find(|&l| l != 0))
        .collect();
    fault_ids.sort_unstable();
    fault_ids.dedup();
    let mut cells = Vec::with_capacity(axis1.len() * axis2.len() * fault_ids.len());
    for &h1 in axis1 {
        for &h2 in axis2 {
            let cell_config = grid_cell_config(config, h1, h2);
            let rows = fit_detection(train, &cell_config).and_then(|f| f.pipeline.evaluate(tests));
            let rows = match rows {
                Ok(rows) => Some(rows),
                Err(_) if keep_going => None,
                Err(e) => return Err(e),
            };
            for &f in &fault_ids {
                let fdr = rows.as_ref().and_then(|rows| {
                    let defined: Vec<Option<f64>> =
                        rows.iter().filter(|r| r.fault_id == f).map(|r| r.metrics.fdr).collect();
                    crate::eval::mean_defined(&defined)
                });
                cells.push(GridCell { h1, h2, fault_id: f, fdr });
            }
        }
    }
    Ok(HeatmapGrid {
        axis1: axis1.to_vec(),
        axis2: axis2.to_vec(),
        fault_ids,
        cells,
    })
}

/// The configuration a grid cell trains with.
pub fn grid_cell_config(config: &PipelineConfig, h1: usize, h2: usize) -> PipelineConfig {
    PipelineConfig {
        hidden_sizes: vec![h1, h2],
        rng_seed: derive_seed_multi(config.rng_seed, &[h1 as u64, h2 as u64]),
        ..config.clone()
    }
}

/// Short label of the fault-set a pipeline was trained for, for reports.
pub fn describe_faults(fault_ids: &[usize]) -> String {
    let ids: Vec<String> = fault_ids.iter().map(|f| format!("{f}")).collect();
    ids.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_suite, Preset};
    use crate::sampler::ModelSampler;

    fn tiny_config() -> PipelineConfig {
        let mut c = PipelineConfig::cstr_default();
        c.hidden_sizes = vec![6, 4];
        c.gaussian_layer.epochs = 2;
        c.binary_layer.epochs = 2;
        c.binary_layer.sampler = ModelSampler::ContrastiveDivergence { k: 1 };
        c.discriminative.epochs = 3;
        c
    }

    fn tiny_suite(seed: u64) -> Vec<RawSeries> {
        let mut spec = Preset::Cstr.spec(seed);
        spec.duration = 120;
        spec.fault_onset = 40;
        generate_suite(&spec, &Preset::Cstr.faults(3.0))
            .unwrap()
            .into_iter()
            .map(|m| m.series)
            .collect()
    }

    #[test]
    fn normalizer_uses_only_normal_rows() {
        let suite = tiny_suite(1);
        let norm = fit_normalizer(&suite).unwrap();
        let normal_rows: usize = suite.iter().map(|s| s.labels.iter().filter(|&&l| l == 0).count()).sum();
        assert_eq!(normal_rows, 120 + 3 * 40);
        assert_eq!(norm.dims(), 7);
    }

    #[test]
    fn detection_fit_is_deterministic() {
        let suite = tiny_suite(2);
        let a = fit_detection(&suite, &tiny_config()).unwrap();
        let b = fit_detection(&suite, &tiny_config()).unwrap();
        assert_eq!(a.pipeline, b.pipeline);
        assert_eq!(a.pipeline.model.dbn_normal.shape(), vec![28, 6, 4]);
        let tests: Vec<(String, RawSeries)> = suite.iter().map(|s| (String::from("s"), s.clone())).collect();
        let rows = a.pipeline.evaluate(&tests).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].metrics.fdr, None);
    }

    #[test]
    fn grid_cells_do_not_depend_on_axis_order() {
        let suite = tiny_suite(3);
        let tests: Vec<(String, RawSeries)> = suite.iter().map(|s| (String::from("s"), s.clone())).collect();
        let c = tiny_config();
        let g1 = grid_search(&suite, &tests, &[3, 4], &[2], &c, false).unwrap();
        let g2 = grid_search(&suite, &tests, &[4, 3], &[2], &c, false).unwrap();
        assert!(g1.is_complete());
        assert_eq!(g1.cells.len(), 2 * 3);
        for cell in &g1.cells {
            assert_eq!(g2.get(cell.h1, cell.h2, cell.fault_id), Some(cell));
        }
    }

    #[test]
    fn identification_runs() {
        let suite = tiny_suite(4);
        let fitted = fit_identification(&suite, &tiny_config()).unwrap();
        assert_eq!(fitted.pipeline.fault_ids, vec![1, 2, 3]);
        assert_eq!(fitted.pipeline.global_head.input_dim(), 6);
        let m = fitted.pipeline.evaluate(&suite).unwrap();
        let total: usize = m.class_counts.iter().sum();
        assert_eq!(total, 4 * (120 - 3));
    }
}
