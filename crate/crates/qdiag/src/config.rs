//! Run configuration: TOML sections, every key optional, unknown keys
//! rejected. The resolved configuration is echoed next to the artifacts.

use std::marker::PhantomData;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qdiag_core::classifier::DiscriminativeConfig;
use qdiag_core::pipeline::PipelineConfig;
use qdiag_core::sampler::{AnnealConfig, ModelSampler};
use qdiag_core::training::{LossMetric, TrainingConfig};
use qdiag_core::rbm::DEFAULT_ENUMERATION_CAP;

use crate::csvio::read_text;
use crate::error::{AppError, AppResult};
use crate::formats::{parse_label_rule, parse_samples};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; below `--out` and `QDIAG_OUT`. Never echoed, so a
    /// rerun from the echo can target another directory.
    #[serde(skip_serializing)]
    pub out: Option<String>,
    pub inputs: InputSection,
    pub data: DataSection,
    pub dbn: DbnSection,
    pub gaussian_layer: LayerSection<GaussianLayer>,
    pub binary_layer: LayerSection<BinaryLayer>,
    pub anneal: AnnealSection,
    pub finetune: FinetuneSection,
    pub detect: DetectSection,
    pub synth: SynthSection,
    pub grid: GridSection,
    pub compare: CompareSection,
    pub energy: EnergySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            inputs: InputSection::default(),
            data: DataSection::default(),
            dbn: DbnSection::default(),
            gaussian_layer: LayerSection::default(),
            binary_layer: LayerSection::default(),
            anneal: AnnealSection::default(),
            finetune: FinetuneSection::default(),
            detect: DetectSection::default(),
            synth: SynthSection::default(),
            grid: GridSection::default(),
            compare: CompareSection::default(),
            energy: EnergySection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSection {
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub window: usize,
    pub label_rule: String,
    /// Chronological train fraction; absent means separate test files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<f64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            window: 4,
            label_rule: "last".into(),
            split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbnSection {
    pub hidden: Vec<usize>,
}

impl Default for DbnSection {
    fn default() -> Self {
        Self { hidden: vec![15, 8] }
    }
}

/// Marker selecting the defaults of a layer section.
pub trait LayerKind: Clone + core::fmt::Debug + PartialEq {
    fn defaults() -> LayerSection<Self>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLayer;

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryLayer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound = "")]
pub struct LayerSection<K: LayerKind> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `exact`, `cd`, `anneal` or `file:<path>`.
    pub sampler: String,
    pub cd_k: usize,
    /// `auto`, `cross-entropy`, `mean-square` or `nll`.
    pub loss: String,
    pub stochastic_forward: bool,
    #[serde(skip)]
    kind: PhantomData<K>,
}

impl<K: LayerKind> Default for LayerSection<K> {
    fn default() -> Self {
        K::defaults()
    }
}

impl LayerKind for GaussianLayer {
    fn defaults() -> LayerSection<Self> {
        let t = TrainingConfig::gaussian_default();
        LayerSection {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            sampler: "cd".into(),
            cd_k: 1,
            loss: "auto".into(),
            stochastic_forward: false,
            kind: PhantomData,
        }
    }
}

impl LayerKind for BinaryLayer {
    fn defaults() -> LayerSection<Self> {
        let t = TrainingConfig::bernoulli_default();
        let g = GaussianLayer::defaults();
        LayerSection {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            sampler: "anneal".into(),
            cd_k: g.cd_k,
            loss: g.loss,
            stochastic_forward: g.stochastic_forward,
            kind: PhantomData,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealSection {
    pub reads: usize,
    pub sweeps_per_read: usize,
    pub beta_start: f64,
    pub beta_eff: f64,
    pub hold_sweeps: usize,
    pub scaling_factor: f64,
}

impl Default for AnnealSection {
    fn default() -> Self {
        let a = AnnealConfig::default();
        Self {
            reads: a.reads,
            sweeps_per_read: a.sweeps_per_read,
            beta_start: a.beta_start,
            beta_eff: a.beta_eff,
            hold_sweeps: a.hold_sweeps,
            scaling_factor: a.scaling_factor,
        }
    }
}

impl AnnealSection {
    pub fn to_config(&self, seed: u64) -> AnnealConfig {
        AnnealConfig {
            reads: self.reads,
            sweeps_per_read: self.sweeps_per_read,
            beta_start: self.beta_start,
            beta_eff: self.beta_eff,
            hold_sweeps: self.hold_sweeps,
            scaling_factor: self.scaling_factor,
            rng_seed: seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub freeze_dbn: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let d = DiscriminativeConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            freeze_dbn: d.freeze_dbn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assert_min_fdr: Option<f64>,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            assert_min_fdr: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub preset: String,
    /// Fault size in units of the noise σ.
    pub magnitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub onset: Option<usize>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            preset: "cstr".into(),
            magnitude: 3.0,
            duration: None,
            onset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub axis1: Vec<usize>,
    pub axis2: Vec<usize>,
    pub keep_going: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            axis1: vec![5, 10, 15, 20],
            axis2: vec![4, 8, 12],
            keep_going: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub samplers: Vec<String>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Used when no training CSV is given: a seeded random binary dataset.
    pub visible: usize,
    pub hidden: usize,
    pub rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_loss: Option<f64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            samplers: vec!["exact".into(), "cd".into(), "anneal".into()],
            epochs: 50,
            learning_rate: 0.1,
            visible: 6,
            hidden: 4,
            rows: 64,
            target_loss: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    pub scaling_factors: Vec<f64>,
    pub bins: usize,
    /// 1-based layer index; 0 selects the last layer.
    pub layer: usize,
    pub branch: String,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            scaling_factors: vec![1.0, 2.0],
            bins: 20,
            layer: 0,
            branch: "normal".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        Self::parse(&read_text(path)?).map_err(|e| match e {
            AppError::Usage(m) => AppError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> AppResult<Self> {
        toml::from_str(text).map_err(|e| AppError::Usage(format!("config: {}", e.message())))
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn label_rule(&self) -> AppResult<qdiag_core::data::LabelRule> {
        parse_label_rule(&self.data.label_rule)
            .ok_or_else(|| AppError::Usage(format!("label rule must be `last` or `any`, got `{}`", self.data.label_rule)))
    }

    pub fn discriminative(&self) -> DiscriminativeConfig {
        let f = &self.finetune;
        DiscriminativeConfig {
            epochs: f.epochs,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            beta1: f.beta1,
            beta2: f.beta2,
            epsilon: f.epsilon,
            rng_seed: self.seed,
            freeze_dbn: f.freeze_dbn,
        }
    }

    pub fn sampler(&self, spec: &str, cd_k: usize) -> AppResult<ModelSampler> {
        match spec {
            "exact" => Ok(ModelSampler::Exact {
                cap: DEFAULT_ENUMERATION_CAP,
            }),
            "cd" => Ok(ModelSampler::ContrastiveDivergence { k: cd_k.max(1) }),
            "anneal" => Ok(ModelSampler::Anneal(self.anneal.to_config(self.seed))),
            s => match s.strip_prefix("file:") {
                Some(path) => {
                    let path = Path::new(path);
                    let (_, _, samples) = parse_samples(&read_text(path)?).map_err(|e| e.in_file(path))?;
                    Ok(ModelSampler::Samples(samples))
                }
                None => Err(AppError::Usage(format!(
                    "sampler must be exact, cd, anneal or file:<path>, got `{s}`"
                ))),
            },
        }
    }

    fn layer<K: LayerKind>(&self, section: &LayerSection<K>, gaussian: bool) -> AppResult<TrainingConfig> {
        let sampler = self.sampler(&section.sampler, section.cd_k)?;
        if gaussian && !matches!(sampler, ModelSampler::ContrastiveDivergence { .. }) {
            return Err(AppError::Usage(
                "the Gaussian first layer only supports the `cd` sampler".into(),
            ));
        }
        let loss_metric = match section.loss.as_str() {
            "auto" if gaussian => LossMetric::MeanSquare,
            "auto" if matches!(sampler, ModelSampler::Exact { .. }) => LossMetric::NegLogLikelihood,
            "auto" | "cross-entropy" => LossMetric::CrossEntropy,
            "mean-square" => LossMetric::MeanSquare,
            "nll" => LossMetric::NegLogLikelihood,
            other => return Err(AppError::Usage(format!("unknown loss `{other}`"))),
        };
        Ok(TrainingConfig {
            learning_rate: section.learning_rate,
            momentum: section.momentum,
            epochs: section.epochs,
            batch_size: section.batch_size,
            sampler,
            rng_seed: self.seed,
            loss_metric,
            stochastic_forward: section.stochastic_forward,
        })
    }

    pub fn binary_training(&self) -> AppResult<TrainingConfig> {
        self.layer(&self.binary_layer, false)
    }

    pub fn pipeline(&self) -> AppResult<PipelineConfig> {
        let config = PipelineConfig {
            window_length: self.data.window,
            label_rule: self.label_rule()?,
            hidden_sizes: self.dbn.hidden.clone(),
            gaussian_layer: self.layer(&self.gaussian_layer, true)?,
            binary_layer: self.binary_training()?,
            discriminative: self.discriminative(),
            threshold: self.detect.threshold,
            rng_seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}
