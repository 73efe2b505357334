//! Command-line front end. Every command resolves a [`RunConfig`] from the
//! optional config file and flags, writes its artifacts plus the resolved
//! `config.toml` into the output directory, and returns a text summary.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use qdiag_core::data::{split_series, RawSeries};
use qdiag_core::eval::{energy_histogram, mean_defined, sampler_comparison, EvalReport};
use qdiag_core::pipeline::{
    fit_identification, fit_normalizer, finetune, grid_search, pretrain, windowed, DetectionPipeline,
    IdentificationPipeline,
};
use qdiag_core::rbm::{to_qubo, DEFAULT_ENUMERATION_CAP};
use qdiag_core::synth::{generate_suite, Preset};
use qdiag_core::training::LossMetric;
use qdiag_core::{Matrix, ModelSampler, RbmParams, VisibleKind};

use crate::config::RunConfig;
use crate::csvio::{
    confusion_csv, grid_csv, histogram_csv, identification_report_csv, load_csv, load_manifest, loss_csv,
    predictions_csv, read_text, report_csv, write_csv, write_manifest, write_text, ManifestEntry,
};
use crate::error::{AppError, AppResult};
use crate::formats::{
    load_layers, parse_identification, parse_model, write_identification, write_model, write_qubo, ModelFile,
    Preprocessing,
};

pub const ENV_OUT: &str = "QDIAG_OUT";
pub const ENV_THREADS: &str = "QDIAG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "qdiag", version, about = "RBM/DBN process fault detection and identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic normal series plus one series per fault.
    Synth(Flags),
    /// Train the normal and fault DBN branches layer by layer.
    Pretrain(Flags),
    /// Train the classifier head (and DBN weights) on a pretrained model.
    Finetune(Flags),
    /// Run a fine-tuned detector over test series and report FDR/FAR.
    Detect(Flags),
    /// Train (or load) per-fault models plus the global classifier and
    /// report the confusion matrix.
    Identify(Flags),
    /// Detection FDR per fault over a grid of two-layer architectures.
    Grid(Flags),
    /// Train one RBM with each sampler and compare loss curves.
    CompareSamplers(Flags),
    /// Write one binary RBM layer of a model as a QUBO.
    ExportQubo(Flags),
    /// Anneal one binary RBM layer at several scaling factors and bin the
    /// energies.
    EnergyHist(Flags),
}

/// Flags shared by all commands; each command reads the ones it needs.
/// Flags override the config file.
#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides QDIAG_OUT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rayon worker threads (overrides QDIAG_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,

    /// Training CSV; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pub train: Vec<String>,
    /// Manifest listing training CSVs.
    #[arg(long)]
    pub manifest: Option<String>,
    /// Test CSV; repeat or comma-separate.
    #[arg(long = "test-file", alias = "test", value_delimiter = ',')]
    pub test_file: Vec<String>,
    #[arg(long)]
    pub test_manifest: Option<String>,
    /// Model file read by finetune, detect, identify, export-qubo, energy-hist.
    #[arg(long)]
    pub model: Option<String>,

    #[arg(long)]
    pub window: Option<usize>,
    /// `last` or `any`.
    #[arg(long)]
    pub label_rule: Option<String>,
    /// Chronological train fraction of every input series; the tail is the
    /// test part.
    #[arg(long)]
    pub split: Option<f64>,

    /// Hidden layer sizes, e.g. `15,8`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// Sampler of the binary layers: exact, cd, anneal or file:<path>.
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub cd_k: Option<usize>,
    /// Generative epochs of every layer.
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub reads: Option<usize>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub hold_sweeps: Option<usize>,
    #[arg(long)]
    pub beta_eff: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Exit with status 4 when any fault's FDR (percent) is below this.
    #[arg(long)]
    pub assert_min_fdr: Option<f64>,

    /// `cstr` or `te`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub magnitude: Option<f64>,
    #[arg(long)]
    pub duration: Option<usize>,
    #[arg(long)]
    pub onset: Option<usize>,

    #[arg(long, value_delimiter = ',')]
    pub axis1: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub axis2: Vec<usize>,
    /// Record failed grid cells as absent instead of aborting.
    #[arg(long)]
    pub keep_going: bool,

    /// Samplers compared by compare-samplers.
    #[arg(long, value_delimiter = ',')]
    pub samplers: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub scaling: Vec<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// 1-based layer index (default: last layer).
    #[arg(long)]
    pub layer: Option<usize>,
    /// `normal` or `fault`.
    #[arg(long)]
    pub branch: Option<String>,
}

impl Flags {
    pub fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_vec<T: Clone>(slot: &mut Vec<T>, v: &[T]) {
            if !v.is_empty() {
                *slot = v.to_vec();
            }
        }
        set(&mut c.seed, &self.seed);
        set_vec(&mut c.inputs.train, &self.train);
        set_vec(&mut c.inputs.test, &self.test_file);
        if self.manifest.is_some() {
            c.inputs.manifest = self.manifest.clone();
        }
        if self.test_manifest.is_some() {
            c.inputs.test_manifest = self.test_manifest.clone();
        }
        if self.model.is_some() {
            c.inputs.model = self.model.clone();
        }
        set(&mut c.data.window, &self.window);
        set(&mut c.data.label_rule, &self.label_rule);
        if self.split.is_some() {
            c.data.split = self.split;
        }
        set_vec(&mut c.dbn.hidden, &self.hidden);
        set(&mut c.binary_layer.sampler, &self.sampler);
        set(&mut c.binary_layer.cd_k, &self.cd_k);
        set(&mut c.gaussian_layer.epochs, &self.pretrain_epochs);
        set(&mut c.binary_layer.epochs, &self.pretrain_epochs);
        set(&mut c.finetune.epochs, &self.finetune_epochs);
        set(&mut c.anneal.reads, &self.reads);
        set(&mut c.anneal.sweeps_per_read, &self.sweeps);
        set(&mut c.anneal.hold_sweeps, &self.hold_sweeps);
        set(&mut c.anneal.beta_eff, &self.beta_eff);
        set(&mut c.detect.threshold, &self.threshold);
        if self.assert_min_fdr.is_some() {
            c.detect.assert_min_fdr = self.assert_min_fdr;
        }
        set(&mut c.synth.preset, &self.preset);
        set(&mut c.synth.magnitude, &self.magnitude);
        if self.duration.is_some() {
            c.synth.duration = self.duration;
        }
        if self.onset.is_some() {
            c.synth.onset = self.onset;
        }
        set_vec(&mut c.grid.axis1, &self.axis1);
        set_vec(&mut c.grid.axis2, &self.axis2);
        c.grid.keep_going |= self.keep_going;
        set_vec(&mut c.compare.samplers, &self.samplers);
        set_vec(&mut c.energy.scaling_factors, &self.scaling);
        set(&mut c.energy.bins, &self.bins);
        set(&mut c.energy.layer, &self.layer);
        set(&mut c.energy.branch, &self.branch);
    }
}

/// Result of a successful command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summary: String,
}

/// Parses `args` (program name first) and runs the command. Parse failures
/// map to usage errors.
pub fn run_args<I, T>(args: I) -> AppResult<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| AppError::Usage(e.to_string()))?;
    run(&cli.command)
}

pub fn resolve(flags: &Flags) -> AppResult<(RunConfig, PathBuf)> {
    let mut config = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    flags.apply(&mut config);
    let out = flags
        .out
        .clone()
        .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((config, out))
}

fn init_threads(flags: &Flags) -> AppResult<()> {
    let threads = match flags.threads {
        Some(t) => Some(t),
        None => match std::env::var(ENV_THREADS) {
            Ok(s) => Some(
                s.trim()
                    .parse()
                    .map_err(|_| AppError::Usage(format!("{ENV_THREADS} must be a positive integer, got `{s}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(AppError::Usage("thread count must be >= 1".into()));
        }
        // The global pool can only be set once per process; later calls keep
        // the first setting.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

pub fn run(command: &Command) -> AppResult<Outcome> {
    let flags = match command {
        Command::Synth(f)
        | Command::Pretrain(f)
        | Command::Finetune(f)
        | Command::Detect(f)
        | Command::Identify(f)
        | Command::Grid(f)
        | Command::CompareSamplers(f)
        | Command::ExportQubo(f)
        | Command::EnergyHist(f) => f,
    };
    init_threads(flags)?;
    let (config, out_dir) = resolve(flags)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| AppError::io(&out_dir, e))?;
    write_text(&out_dir.join("config.toml"), &config.echo())?;
    let ctx = Ctx {
        config: &config,
        out: &out_dir,
    };
    let summary = match command {
        Command::Synth(_) => ctx.synth(),
        Command::Pretrain(_) => ctx.pretrain(),
        Command::Finetune(_) => ctx.finetune(),
        Command::Detect(_) => ctx.detect(),
        Command::Identify(_) => ctx.identify(),
        Command::Grid(_) => ctx.grid(),
        Command::CompareSamplers(_) => ctx.compare_samplers(),
        Command::ExportQubo(_) => ctx.export_qubo(),
        Command::EnergyHist(_) => ctx.energy_hist(),
    }?;
    Ok(Outcome { out_dir, summary })
}

/// First 16 hex digits of the SHA-256 of a model file.
pub fn model_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::from("n/a"), |v| format!("{v:.2}"))
}

fn series_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

struct Ctx<'a> {
    config: &'a RunConfig,
    out: &'a Path,
}

impl Ctx<'_> {
    fn write(&self, name: &str, text: &str) -> AppResult<()> {
        write_text(&self.out.join(name), text)
    }

    fn load_named(&self, files: &[String], manifest: &Option<String>) -> AppResult<Vec<(String, RawSeries)>> {
        let mut out = Vec::new();
        if let Some(m) = manifest {
            for ManifestEntry { name, path, .. } in load_manifest(Path::new(m))? {
                out.push((name, load_csv(&path)?));
            }
        }
        for f in files {
            let path = Path::new(f);
            out.push((series_name(path), load_csv(path)?));
        }
        Ok(out)
    }

    /// Training series (head part when splitting).
    fn train_series(&self) -> AppResult<Vec<RawSeries>> {
        let named = self.load_named(&self.config.inputs.train, &self.config.inputs.manifest)?;
        if named.is_empty() {
            return Err(AppError::Usage("no training data: pass --train or --manifest".into()));
        }
        named
            .into_iter()
            .map(|(_, s)| match self.config.data.split {
                Some(r) => Ok(split_series(&s, r)?.0),
                None => Ok(s),
            })
            .collect()
    }

    /// Explicit test files, else the tails of the training inputs under a
    /// split.
    fn test_series(&self) -> AppResult<Vec<(String, RawSeries)>> {
        let explicit = self.load_named(&self.config.inputs.test, &self.config.inputs.test_manifest)?;
        if !explicit.is_empty() {
            return Ok(explicit);
        }
        let Some(r) = self.config.data.split else {
            return Err(AppError::Usage(
                "no test data: pass --test-file, --test-manifest or --split".into(),
            ));
        };
        self.load_named(&self.config.inputs.train, &self.config.inputs.manifest)?
            .into_iter()
            .map(|(name, s)| Ok((name, split_series(&s, r)?.1)))
            .collect()
    }

    fn model_text(&self) -> AppResult<(PathBuf, String)> {
        let path = self
            .config
            .inputs
            .model
            .as_ref()
            .map(PathBuf::from)
            .ok_or_else(|| AppError::Usage("this command needs --model".into()))?;
        let text = read_text(&path)?;
        Ok((path, text))
    }

    fn check_min_fdr(&self, fdrs: &[(usize, Option<f64>)]) -> AppResult<()> {
        let Some(min) = self.config.detect.assert_min_fdr else {
            return Ok(());
        };
        let failed: Vec<String> = fdrs
            .iter()
            .filter(|(_, f)| f.map_or(true, |v| v < min))
            .map(|(id, f)| format!("fault {id} FDR {}", fmt_opt(*f)))
            .collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(AppError::Assertion(format!("below {min}%: {}", failed.join(", "))))
        }
    }

    fn synth(&self) -> AppResult<String> {
        let s = &self.config.synth;
        let preset = match s.preset.as_str() {
            "cstr" => Preset::Cstr,
            "te" => Preset::Te,
            other => return Err(AppError::Usage(format!("preset must be `cstr` or `te`, got `{other}`"))),
        };
        let mut spec = preset.spec(self.config.seed);
        if let Some(d) = s.duration {
            spec.duration = d;
        }
        if let Some(o) = s.onset {
            spec.fault_onset = o;
        }
        let suite = generate_suite(&spec, &preset.faults(s.magnitude))?;
        let mut entries = Vec::with_capacity(suite.len());
        let mut summary = format!(
            "synth {} seed {}: {} series, {} variables, {} samples each\n",
            preset.as_str(),
            self.config.seed,
            suite.len(),
            spec.dims(),
            spec.duration
        );
        for m in &suite {
            let file = format!("{}.csv", m.name);
            self.write(&file, &write_csv(&m.series))?;
            let _ = writeln!(summary, "  {file}  fault {}", m.fault_id);
            entries.push(ManifestEntry {
                name: m.name.clone(),
                path: PathBuf::from(file),
                fault_id: m.fault_id,
                onset: m.onset,
            });
        }
        self.write("manifest.csv", &write_manifest(&entries))?;
        Ok(summary)
    }

    fn pretrain(&self) -> AppResult<String> {
        let pc = self.config.pipeline()?;
        let train = self.train_series()?;
        let normalizer = fit_normalizer(&train)?;
        let data = windowed(&train, &normalizer, pc.window_length, pc.label_rule)?;
        let pre = pretrain(&data, &pc, None)?;
        let file = ModelFile {
            preprocessing: Preprocessing {
                window_length: pc.window_length,
                label_rule: pc.label_rule,
                normalizer,
            },
            threshold: pc.threshold,
            dbn_normal: pre.normal.model,
            dbn_fault: pre.fault.model,
            head: None,
        };
        let text = write_model(&file);
        self.write("pretrained.model", &text)?;
        let mut summary = format!(
            "pretrain: {} windows of width {}, DBN {}-{}, model {}\n",
            data.len(),
            data.samples.cols(),
            data.samples.cols(),
            pc.hidden_sizes.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-"),
            model_hash(&text)
        );
        for (branch, curves) in [("normal", &pre.normal.curves), ("fault", &pre.fault.curves)] {
            for (k, curve) in curves.iter().enumerate() {
                self.write(&format!("loss_{branch}_l{}.csv", k + 1), &loss_csv(&[curve]))?;
                let first = curve.records.first().map(|r| r.loss);
                let last = curve.records.last().map(|r| r.loss);
                let sampler = curve.records.first().map_or("", |r| r.sampler.as_str());
                let _ = writeln!(
                    summary,
                    "  {branch} layer {}: {sampler} loss {} -> {}",
                    k + 1,
                    fmt_loss(first),
                    fmt_loss(last)
                );
            }
        }
        Ok(summary)
    }

    fn finetune(&self) -> AppResult<String> {
        let pc = self.config.pipeline()?;
        let (path, text) = self.model_text()?;
        let base = parse_model(&text).map_err(|e| e.in_file(&path))?;
        let train = self.train_series()?;
        let pre = &base.preprocessing;
        let data = windowed(&train, &pre.normalizer, pre.window_length, pre.label_rule)?;
        let (model, curve) = finetune(base.dbn_normal, base.dbn_fault, &data, &pc, None)?;
        let pipeline = DetectionPipeline {
            normalizer: pre.normalizer.clone(),
            window_length: pre.window_length,
            label_rule: pre.label_rule,
            model,
        };
        let text = write_model(&ModelFile::from_pipeline(&pipeline));
        self.write("diagnosis.model", &text)?;
        self.write("finetune_loss.csv", &loss_csv(&[&curve]))?;
        Ok(format!(
            "finetune: {} windows, {} epochs, cross-entropy {} -> {}, model {}\n",
            data.len(),
            curve.len(),
            fmt_loss(curve.records.first().map(|r| r.loss)),
            fmt_loss(curve.records.last().map(|r| r.loss)),
            model_hash(&text)
        ))
    }

    fn detect(&self) -> AppResult<String> {
        let (path, text) = self.model_text()?;
        let file = parse_model(&text).map_err(|e| e.in_file(&path))?;
        let mut pipeline = file.detection_pipeline()?.ok_or_else(|| {
            AppError::Data(format!("{}: model has no classifier head; run finetune first", path.display()))
        })?;
        let threshold = self.config.detect.threshold;
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(AppError::Usage(format!("threshold must lie in (0, 1), got {threshold}")));
        }
        pipeline.model.threshold = threshold;
        let tests = self.test_series()?;
        for (name, series) in &tests {
            let (_, diagnosis) = pipeline.predict(series)?;
            self.write(&format!("predictions_{name}.csv"), &predictions_csv(&diagnosis))?;
        }
        let report = EvalReport {
            dataset: tests.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(","),
            model_hash: model_hash(&text),
            seed: self.config.seed,
            rows: pipeline.evaluate(&tests)?,
            identification: None,
        };
        self.write("report.csv", &report_csv(&report))?;
        let summary = report.summary();
        self.write("summary.txt", &summary)?;
        let fdrs: Vec<(usize, Option<f64>)> = report
            .rows
            .iter()
            .filter(|r| r.fault_id != 0)
            .map(|r| (r.fault_id, r.metrics.fdr))
            .collect();
        self.check_min_fdr(&fdrs).map_err(|e| with_summary(e, &summary))?;
        Ok(summary)
    }

    fn identify(&self) -> AppResult<String> {
        let (pipeline, hash) = self.identification_pipeline()?;
        let tests: Vec<RawSeries> = self.test_series()?.into_iter().map(|(_, s)| s).collect();
        let metrics = pipeline.evaluate(&tests)?;
        let mut class_ids = vec![0];
        class_ids.extend(&pipeline.fault_ids);
        self.write("confusion.csv", &confusion_csv(&metrics, &class_ids))?;
        self.write("report.csv", &identification_report_csv(&metrics, &class_ids))?;
        let mut summary = format!(
            "identify: {} classes, model {hash}, seed {}\n{:>8} {:>8} {:>8}\n",
            class_ids.len(),
            self.config.seed,
            "class",
            "FDR%",
            "FAR%"
        );
        for (k, id) in class_ids.iter().enumerate() {
            let _ = writeln!(summary, "{id:>8} {:>8} {:>8}", fmt_opt(metrics.fdr[k]), fmt_opt(metrics.far[k]));
        }
        let faults: Vec<Option<f64>> = metrics.fdr.iter().skip(1).copied().collect();
        let fars: Vec<Option<f64>> = metrics.far.iter().skip(1).copied().collect();
        let _ = writeln!(
            summary,
            "average FDR {}%  average FAR {}%",
            fmt_opt(mean_defined(&faults)),
            fmt_opt(mean_defined(&fars))
        );
        self.write("summary.txt", &summary)?;
        let fdrs: Vec<(usize, Option<f64>)> = pipeline.fault_ids.iter().copied().zip(faults).collect();
        self.check_min_fdr(&fdrs).map_err(|e| with_summary(e, &summary))?;
        Ok(summary)
    }

    fn identification_pipeline(&self) -> AppResult<(IdentificationPipeline, String)> {
        if self.config.inputs.model.is_some() {
            let (path, text) = self.model_text()?;
            let p = parse_identification(&text).map_err(|e| e.in_file(&path))?;
            return Ok((p, model_hash(&text)));
        }
        let pc = self.config.pipeline()?;
        let fitted = fit_identification(&self.train_series()?, &pc)?;
        let text = write_identification(&fitted.pipeline);
        self.write("identification.model", &text)?;
        let mut curves: Vec<_> = fitted.finetune_curves.iter().collect();
        curves.push(&fitted.global_curve);
        self.write("finetune_loss.csv", &loss_csv(&curves))?;
        Ok((fitted.pipeline, model_hash(&text)))
    }

    fn grid(&self) -> AppResult<String> {
        let pc = self.config.pipeline()?;
        let train = self.train_series()?;
        let tests = self.test_series()?;
        let g = &self.config.grid;
        let grid = grid_search(&train, &tests, &g.axis1, &g.axis2, &pc, g.keep_going)?;
        self.write("grid.csv", &grid_csv(&grid))?;
        let mut summary = format!(
            "grid: {} x {} architectures, {} faults, seed {}\n",
            g.axis1.len(),
            g.axis2.len(),
            grid.fault_ids.len(),
            self.config.seed
        );
        let mut best = Vec::new();
        for &f in &grid.fault_ids {
            let _ = writeln!(summary, "fault {f} FDR% (rows h1, columns h2)");
            let _ = writeln!(
                summary,
                "{:>6}{}",
                "",
                g.axis2.iter().map(|h| format!("{h:>8}")).collect::<String>()
            );
            let mut top: Option<f64> = None;
            for &h1 in &g.axis1 {
                let mut line = format!("{h1:>6}");
                for &h2 in &g.axis2 {
                    let v = grid.get(h1, h2, f).and_then(|c| c.fdr);
                    if let Some(v) = v {
                        top = Some(top.map_or(v, |t: f64| t.max(v)));
                    }
                    let _ = write!(line, "{:>8}", fmt_opt(v));
                }
                let _ = writeln!(summary, "{line}");
            }
            best.push((f, top));
        }
        self.write("summary.txt", &summary)?;
        self.check_min_fdr(&best).map_err(|e| with_summary(e, &summary))?;
        Ok(summary)
    }

    fn compare_samplers(&self) -> AppResult<String> {
        let c = &self.config.compare;
        let data = if self.config.inputs.train.is_empty() && self.config.inputs.manifest.is_none() {
            toy_binary_data(c.rows, c.visible, self.config.seed)
        } else {
            binary_matrix(&self.train_series()?)?
        };
        let mut init_rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let init = RbmParams::random_init(VisibleKind::Bernoulli, data.cols(), c.hidden, &mut init_rng);
        let samplers = c
            .samplers
            .iter()
            .map(|s| self.config.sampler(s, self.config.binary_layer.cd_k))
            .collect::<AppResult<Vec<ModelSampler>>>()?;
        let mut base = self.config.binary_training()?;
        base.epochs = c.epochs;
        base.learning_rate = c.learning_rate;
        if self.config.binary_layer.loss == "auto" {
            base.loss_metric = if init.unit_count() <= DEFAULT_ENUMERATION_CAP {
                LossMetric::NegLogLikelihood
            } else {
                LossMetric::CrossEntropy
            };
        }
        let cmp = sampler_comparison(&init, &data, &samplers, &base, c.target_loss, DEFAULT_ENUMERATION_CAP)?;
        let curves: Vec<_> = cmp.runs.iter().map(|r| &r.curve).collect();
        self.write("loss_curves.csv", &loss_csv(&curves))?;
        let mut table = String::from("sampler,epochs_to_target,final_loss,bias\n");
        let mut summary = format!(
            "compare-samplers: {}x{} RBM, {} rows, {} epochs, {} loss, target {}\n{:<24} {:>8} {:>12} {:>10}\n",
            data.cols(),
            c.hidden,
            data.rows(),
            c.epochs,
            base.loss_metric.as_str(),
            fmt_loss(cmp.target_loss),
            "sampler",
            "epochs",
            "final loss",
            "bias"
        );
        for r in &cmp.runs {
            let last = r.curve.records.last().map(|x| x.loss);
            let epochs = r.epochs_to_target.map_or(String::new(), |e| e.to_string());
            let _ = writeln!(
                table,
                "{},{epochs},{},{}",
                r.label,
                last.map_or(String::new(), |v| v.to_string()),
                r.bias.map_or(String::new(), |v| v.to_string())
            );
            let _ = writeln!(
                summary,
                "{:<24} {:>8} {:>12} {:>10}",
                r.label,
                if epochs.is_empty() { "-".into() } else { epochs },
                fmt_loss(last),
                r.bias.map_or(String::from("n/a"), |v| format!("{v:.4}"))
            );
        }
        self.write("sampler_summary.csv", &table)?;
        Ok(summary)
    }

    /// The selected binary RBM layer of the model file.
    fn layer(&self) -> AppResult<(RbmParams, usize)> {
        let (path, text) = self.model_text()?;
        let dbn = load_layers(&text, &self.config.energy.branch).map_err(|e| e.in_file(&path))?;
        let count = dbn.layers.len();
        let k = match self.config.energy.layer {
            0 => count,
            k => k,
        };
        let layer = dbn
            .layers
            .get(k.wrapping_sub(1))
            .cloned()
            .ok_or_else(|| AppError::Usage(format!("layer {k} out of range 1..={count}")))?;
        if layer.visible_kind != VisibleKind::Bernoulli {
            return Err(AppError::Usage(format!(
                "layer {k} has Gaussian visible units; pick a binary layer (2..={count})"
            )));
        }
        Ok((layer, k))
    }

    fn export_qubo(&self) -> AppResult<String> {
        let (layer, k) = self.layer()?;
        let q = to_qubo(&layer)?;
        self.write("model.qubo", &write_qubo(&q))?;
        Ok(format!(
            "export-qubo: {} layer {k}, {} variables ({} visible + {} hidden), {} couplers\n",
            self.config.energy.branch,
            q.size,
            layer.visible_count(),
            layer.hidden_count(),
            q.quadratic.len()
        ))
    }

    fn energy_hist(&self) -> AppResult<String> {
        let (layer, k) = self.layer()?;
        let e = &self.config.energy;
        let configs: Vec<_> = e
            .scaling_factors
            .iter()
            .map(|&s| {
                let mut c = self.config.anneal.to_config(self.config.seed);
                c.scaling_factor = s;
                c
            })
            .collect();
        let set = energy_histogram(&layer, &configs, e.bins)?;
        self.write("energy_hist.csv", &histogram_csv(&set))?;
        let mut summary = format!(
            "energy-hist: {} layer {k}, {} reads per scaling factor\n",
            e.branch, self.config.anneal.reads
        );
        for h in &set.histograms {
            let _ = writeln!(
                summary,
                "  scaling {:>6}: mean energy {:.4}",
                h.scaling_factor, h.mean_energy
            );
        }
        Ok(summary)
    }
}

fn fmt_loss(x: Option<f64>) -> String {
    x.map_or(String::from("n/a"), |v| format!("{v:.6}"))
}

fn with_summary(e: AppError, summary: &str) -> AppError {
    match e {
        AppError::Assertion(m) => AppError::Assertion(format!("{m}\n{summary}")),
        other => other,
    }
}

/// Rows of every series stacked; values must be 0 or 1.
fn binary_matrix(series: &[RawSeries]) -> AppResult<Matrix> {
    let cols = series[0].dims();
    let mut values = Vec::new();
    for s in series {
        if s.dims() != cols {
            return Err(AppError::Data(format!("expected {cols} columns, found {}", s.dims())));
        }
        for (r, row) in s.values.iter_rows().enumerate() {
            if let Some(v) = row.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(AppError::Data(format!("row {}: value {v} is not binary", r + 1)));
            }
            values.extend_from_slice(row);
        }
    }
    Ok(Matrix::from_vec(values.len() / cols, cols, values)?)
}

/// Noisy copies of three random prototype patterns.
pub fn toy_binary_data(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(qdiag_core::seed::derive_seed(seed, 0xDA7A));
    let protos: Vec<Vec<bool>> = (0..3).map(|_| (0..cols).map(|_| rng.random()).collect()).collect();
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for &bit in &protos[r % protos.len()] {
            let flip = rng.random::<f64>() < 0.1;
            values.push((bit ^ flip) as u8 as f64);
        }
    }
    Matrix::from_vec(rows, cols, values).expect("consistent toy shape")
}
