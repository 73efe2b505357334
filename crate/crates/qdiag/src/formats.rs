//! Line-oriented text formats: QUBO export, anneal sample files and model
//! files. Floats are written with 17 significant digits so every `f64`
//! survives a write/read round trip unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use qdiag_core::classifier::{ClassifierParams, DiagnosisModel};
use qdiag_core::data::{LabelRule, Normalizer};
use qdiag_core::pipeline::{DetectionPipeline, IdentificationPipeline};
use qdiag_core::training::DbnModel;
use qdiag_core::{JointState, Matrix, QuboProblem, RbmParams, UnitRef, VisibleKind};

use crate::error::{AppError, AppResult};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, row: &[f64]) {
    let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
    out.push_str(&cells.join(" "));
    out.push('\n');
}

/// Tokenizing reader that skips blank lines and `#` comments and reports
/// 1-based line numbers in errors.
pub struct LineReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> LineReader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
        }
    }

    fn skip_blank(&mut self) {
        while let Some((_, l)) = self.lines.peek() {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                self.lines.next();
            } else {
                break;
            }
        }
    }

    pub fn peek_keyword(&mut self) -> Option<&'a str> {
        self.skip_blank();
        self.lines.peek().and_then(|(_, l)| l.split_whitespace().next())
    }

    pub fn next_line(&mut self) -> Option<(usize, &'a str)> {
        self.skip_blank();
        self.lines.next().map(|(i, l)| (i + 1, l.trim()))
    }

    pub fn at_end(&mut self) -> bool {
        self.peek_keyword().is_none()
    }

    /// Reads a line starting with `keyword` and returns the remaining tokens.
    pub fn header(&mut self, keyword: &str) -> AppResult<(usize, Vec<&'a str>)> {
        let (n, line) = self
            .next_line()
            .ok_or_else(|| AppError::Data(format!("unexpected end of file, expected `{keyword}`")))?;
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(keyword) {
            return Err(AppError::Data(format!("line {n}: expected `{keyword}`, found `{line}`")));
        }
        Ok((n, tokens.collect()))
    }

    pub fn floats(&mut self, count: usize) -> AppResult<Vec<f64>> {
        let (n, line) = self
            .next_line()
            .ok_or_else(|| AppError::Data(format!("unexpected end of file, expected {count} numbers")))?;
        let values = line
            .split_whitespace()
            .map(|t| parse_f64(t, n))
            .collect::<AppResult<Vec<f64>>>()?;
        if values.len() != count {
            return Err(AppError::Data(format!(
                "line {n}: expected {count} numbers, found {}",
                values.len()
            )));
        }
        Ok(values)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> AppResult<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.floats(cols)?);
        }
        Ok(Matrix::from_vec(rows, cols, data)?)
    }
}

fn parse_f64(token: &str, line: usize) -> AppResult<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| AppError::Data(format!("line {line}: `{token}` is not a number")))?;
    if !v.is_finite() {
        return Err(AppError::Data(format!("line {line}: non-finite value `{token}`")));
    }
    Ok(v)
}

fn parse_usize(token: Option<&&str>, line: usize, what: &str) -> AppResult<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| AppError::Data(format!("line {line}: missing or invalid {what}")))
}

// ---------------------------------------------------------------- QUBO

pub fn write_qubo(q: &QuboProblem) -> String {
    let mut out = format!("qubo {}\n", q.size);
    for (i, c) in q.linear.iter().enumerate() {
        let _ = writeln!(out, "l {i} {}", fmt_f64(*c));
    }
    for (&(i, j), c) in &q.quadratic {
        let _ = writeln!(out, "q {i} {j} {}", fmt_f64(*c));
    }
    out
}

/// Parses a QUBO file. The file does not record which variables are
/// visible, so the caller supplies the visible count.
pub fn parse_qubo(text: &str, visible_count: usize) -> AppResult<QuboProblem> {
    let mut r = LineReader::new(text);
    let (n, t) = r.header("qubo")?;
    let size = parse_usize(t.first(), n, "QUBO size")?;
    if visible_count > size {
        return Err(AppError::Data(format!(
            "visible count {visible_count} exceeds QUBO size {size}"
        )));
    }
    let mut linear = vec![0.0; size];
    let mut quadratic = BTreeMap::new();
    while let Some((n, line)) = r.next_line() {
        let t: Vec<&str> = line.split_whitespace().collect();
        let index = |k: usize| -> AppResult<usize> {
            let i = parse_usize(t.get(k), n, "variable index")?;
            if i >= size {
                return Err(AppError::Data(format!("line {n}: index {i} outside 0..{size}")));
            }
            Ok(i)
        };
        match t.first().copied() {
            Some("l") if t.len() == 3 => linear[index(1)?] = parse_f64(t[2], n)?,
            Some("q") if t.len() == 4 => {
                let (i, j) = (index(1)?, index(2)?);
                quadratic.insert((i.min(j), i.max(j)), parse_f64(t[3], n)?);
            }
            _ => return Err(AppError::Data(format!("line {n}: malformed QUBO line `{line}`"))),
        }
    }
    let variable_names = (0..visible_count)
        .map(UnitRef::Visible)
        .chain((0..size - visible_count).map(UnitRef::Hidden))
        .collect();
    Ok(QuboProblem {
        size,
        linear,
        quadratic,
        variable_names,
    })
}

// ---------------------------------------------------------------- samples

fn bit(x: f64) -> char {
    if x >= 0.5 {
        '1'
    } else {
        '0'
    }
}

pub fn write_samples(visible_count: usize, hidden_count: usize, samples: &[JointState]) -> String {
    let mut out = format!("samples {visible_count} {hidden_count}\n");
    for s in samples {
        let v: Vec<String> = s.visible.iter().map(|&x| bit(x).to_string()).collect();
        let h: Vec<String> = s.hidden.iter().map(|&x| bit(x).to_string()).collect();
        let _ = writeln!(out, "{} | {}", v.join(" "), h.join(" "));
    }
    out
}

/// Parses a sample file into `(visible_count, hidden_count, reads)`.
pub fn parse_samples(text: &str) -> AppResult<(usize, usize, Vec<JointState>)> {
    let mut r = LineReader::new(text);
    let (n, t) = r.header("samples")?;
    let m = parse_usize(t.first(), n, "visible count")?;
    let h = parse_usize(t.get(1), n, "hidden count")?;
    let bits = |part: &str, expected: usize, n: usize| -> AppResult<Vec<f64>> {
        let out = part
            .split_whitespace()
            .map(|b| match b {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                _ => Err(AppError::Data(format!("line {n}: `{b}` is not a bit"))),
            })
            .collect::<AppResult<Vec<f64>>>()?;
        if out.len() != expected {
            return Err(AppError::Data(format!(
                "line {n}: expected {expected} bits, found {}",
                out.len()
            )));
        }
        Ok(out)
    };
    let mut samples = Vec::new();
    while let Some((n, line)) = r.next_line() {
        let (v, hid) = line
            .split_once('|')
            .ok_or_else(|| AppError::Data(format!("line {n}: missing `|` separator")))?;
        samples.push(JointState::new(bits(v, m, n)?, bits(hid, h, n)?));
    }
    if samples.is_empty() {
        return Err(AppError::Data("no samples".into()));
    }
    Ok((m, h, samples))
}

// ---------------------------------------------------------------- RBM / DBN

fn kind_str(kind: VisibleKind) -> &'static str {
    match kind {
        VisibleKind::Bernoulli => "bernoulli",
        VisibleKind::Gaussian => "gaussian",
    }
}

pub fn write_rbm(out: &mut String, p: &RbmParams) {
    let _ = writeln!(
        out,
        "rbm {} {} {}",
        p.visible_count(),
        p.hidden_count(),
        kind_str(p.visible_kind)
    );
    for row in p.weights.iter_rows() {
        push_row(out, row);
    }
    push_row(out, &p.visible_bias);
    push_row(out, &p.hidden_bias);
    push_row(out, &p.visible_std);
}

pub fn read_rbm(r: &mut LineReader) -> AppResult<RbmParams> {
    let (n, t) = r.header("rbm")?;
    let m = parse_usize(t.first(), n, "visible count")?;
    let h = parse_usize(t.get(1), n, "hidden count")?;
    let kind = match t.get(2).copied() {
        Some("bernoulli") => VisibleKind::Bernoulli,
        Some("gaussian") => VisibleKind::Gaussian,
        other => {
            return Err(AppError::Data(format!(
                "line {n}: unknown visible kind {other:?}"
            )))
        }
    };
    let weights = r.matrix(m, h)?;
    let b = r.floats(m)?;
    let c = r.floats(h)?;
    let std = r.floats(m)?;
    Ok(RbmParams::new(kind, weights, b, c, Some(std))?)
}

/// A DBN file is its layer blocks back to back.
pub fn write_dbn(out: &mut String, dbn: &DbnModel) {
    for layer in &dbn.layers {
        write_rbm(out, layer);
    }
}

/// Reads `rbm` blocks until the next line is something else.
pub fn read_dbn(r: &mut LineReader) -> AppResult<DbnModel> {
    let mut layers = Vec::new();
    while r.peek_keyword() == Some("rbm") {
        layers.push(read_rbm(r)?);
    }
    Ok(DbnModel::new(layers)?)
}

pub fn parse_dbn(text: &str) -> AppResult<DbnModel> {
    let mut r = LineReader::new(text);
    let dbn = read_dbn(&mut r)?;
    if !r.at_end() {
        let (n, line) = r.next_line().unwrap_or((0, ""));
        return Err(AppError::Data(format!("line {n}: unexpected `{line}` after DBN layers")));
    }
    Ok(dbn)
}

// ---------------------------------------------------------------- classifier

pub fn write_head(out: &mut String, head: &ClassifierParams) {
    let _ = writeln!(out, "fc {} {}", head.hidden_weights.rows(), head.hidden_weights.cols());
    for row in head.hidden_weights.iter_rows() {
        push_row(out, row);
    }
    push_row(out, &head.hidden_bias);
    let _ = writeln!(out, "softmax {} {}", head.output_weights.rows(), head.output_weights.cols());
    for row in head.output_weights.iter_rows() {
        push_row(out, row);
    }
    push_row(out, &head.output_bias);
}

pub fn read_head(r: &mut LineReader) -> AppResult<ClassifierParams> {
    let (n, t) = r.header("fc")?;
    let (rows, cols) = (parse_usize(t.first(), n, "rows")?, parse_usize(t.get(1), n, "cols")?);
    let hidden_weights = r.matrix(rows, cols)?;
    let hidden_bias = r.floats(cols)?;
    let (n, t) = r.header("softmax")?;
    let (rows, cols) = (parse_usize(t.first(), n, "rows")?, parse_usize(t.get(1), n, "cols")?);
    let output_weights = r.matrix(rows, cols)?;
    let output_bias = r.floats(cols)?;
    let head = ClassifierParams {
        hidden_weights,
        hidden_bias,
        output_weights,
        output_bias,
    };
    head.validate()?;
    Ok(head)
}

// ---------------------------------------------------------------- model files

/// Preprocessing shared by every model file that consumes raw series.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessing {
    pub window_length: usize,
    pub label_rule: LabelRule,
    pub normalizer: Normalizer,
}

fn write_preprocessing(out: &mut String, p: &Preprocessing) {
    let _ = writeln!(out, "window {} {}", p.window_length, p.label_rule.as_str());
    let _ = writeln!(out, "normalizer {}", p.normalizer.dims());
    push_row(out, &p.normalizer.mean);
    push_row(out, &p.normalizer.std);
}

pub fn parse_label_rule(s: &str) -> Option<LabelRule> {
    match s {
        "last" => Some(LabelRule::Last),
        "any" => Some(LabelRule::Any),
        _ => None,
    }
}

fn read_preprocessing(r: &mut LineReader) -> AppResult<Preprocessing> {
    let (n, t) = r.header("window")?;
    let window_length = parse_usize(t.first(), n, "window length")?;
    let label_rule = t
        .get(1)
        .and_then(|s| parse_label_rule(s))
        .ok_or_else(|| AppError::Data(format!("line {n}: label rule must be `last` or `any`")))?;
    let (n, t) = r.header("normalizer")?;
    let d = parse_usize(t.first(), n, "normalizer width")?;
    let mean = r.floats(d)?;
    let std = r.floats(d)?;
    if std.iter().any(|&s| s <= 0.0) {
        return Err(AppError::Data("normalizer std entries must be > 0".into()));
    }
    Ok(Preprocessing {
        window_length,
        label_rule,
        normalizer: Normalizer { mean, std },
    })
}

/// Two DBN branches with an optional head. `pretrain` writes it without a
/// head, `finetune` with one.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub preprocessing: Preprocessing,
    pub threshold: f64,
    pub dbn_normal: DbnModel,
    pub dbn_fault: DbnModel,
    pub head: Option<ClassifierParams>,
}

fn write_branches(out: &mut String, threshold: f64, normal: &DbnModel, fault: &DbnModel, head: Option<&ClassifierParams>) {
    let _ = writeln!(out, "threshold {}", fmt_f64(threshold));
    let _ = writeln!(out, "branch normal {}", normal.layers.len());
    write_dbn(out, normal);
    let _ = writeln!(out, "branch fault {}", fault.layers.len());
    write_dbn(out, fault);
    if let Some(h) = head {
        write_head(out, h);
    }
}

fn read_branches(r: &mut LineReader) -> AppResult<(f64, DbnModel, DbnModel, Option<ClassifierParams>)> {
    let (n, t) = r.header("threshold")?;
    let threshold = parse_f64(t.first().copied().unwrap_or(""), n)?;
    let mut branch = |name: &str| -> AppResult<DbnModel> {
        let (n, t) = r.header("branch")?;
        if t.first().copied() != Some(name) {
            return Err(AppError::Data(format!("line {n}: expected branch `{name}`")));
        }
        let layers = parse_usize(t.get(1), n, "layer count")?;
        let dbn = read_dbn(r)?;
        if dbn.layers.len() != layers {
            return Err(AppError::Data(format!(
                "line {n}: branch `{name}` declares {layers} layers, found {}",
                dbn.layers.len()
            )));
        }
        Ok(dbn)
    };
    let normal = branch("normal")?;
    let fault = branch("fault")?;
    let head = if r.peek_keyword() == Some("fc") {
        Some(read_head(r)?)
    } else {
        None
    };
    Ok((threshold, normal, fault, head))
}

pub fn write_model(m: &ModelFile) -> String {
    let mut out = String::from("diagnosis\n");
    write_preprocessing(&mut out, &m.preprocessing);
    write_branches(&mut out, m.threshold, &m.dbn_normal, &m.dbn_fault, m.head.as_ref());
    out
}

pub fn parse_model(text: &str) -> AppResult<ModelFile> {
    let mut r = LineReader::new(text);
    r.header("diagnosis")?;
    let preprocessing = read_preprocessing(&mut r)?;
    let (threshold, dbn_normal, dbn_fault, head) = read_branches(&mut r)?;
    expect_end(&mut r)?;
    let m = ModelFile {
        preprocessing,
        threshold,
        dbn_normal,
        dbn_fault,
        head,
    };
    if let Some(p) = m.detection_pipeline()? {
        p.model.validate()?;
    }
    Ok(m)
}

fn expect_end(r: &mut LineReader) -> AppResult<()> {
    match r.next_line() {
        None => Ok(()),
        Some((n, line)) => Err(AppError::Data(format!("line {n}: unexpected `{line}`"))),
    }
}

impl ModelFile {
    pub fn from_pipeline(p: &DetectionPipeline) -> Self {
        Self {
            preprocessing: Preprocessing {
                window_length: p.window_length,
                label_rule: p.label_rule,
                normalizer: p.normalizer.clone(),
            },
            threshold: p.model.threshold,
            dbn_normal: p.model.dbn_normal.clone(),
            dbn_fault: p.model.dbn_fault.clone(),
            head: Some(p.model.head.clone()),
        }
    }

    /// The runnable detector, when the file carries a head.
    pub fn detection_pipeline(&self) -> AppResult<Option<DetectionPipeline>> {
        let Some(head) = &self.head else {
            return Ok(None);
        };
        let model = DiagnosisModel::new(self.dbn_normal.clone(), self.dbn_fault.clone(), head.clone(), self.threshold)?;
        Ok(Some(DetectionPipeline {
            normalizer: self.preprocessing.normalizer.clone(),
            window_length: self.preprocessing.window_length,
            label_rule: self.preprocessing.label_rule,
            model,
        }))
    }
}

pub fn write_identification(p: &IdentificationPipeline) -> String {
    let mut out = format!("identification {}\n", p.fault_ids.len());
    write_preprocessing(
        &mut out,
        &Preprocessing {
            window_length: p.window_length,
            label_rule: p.label_rule,
            normalizer: p.normalizer.clone(),
        },
    );
    for (f, m) in p.fault_ids.iter().zip(&p.models) {
        let _ = writeln!(out, "model {f}");
        write_branches(&mut out, m.threshold, &m.dbn_normal, &m.dbn_fault, Some(&m.head));
    }
    out.push_str("global\n");
    write_head(&mut out, &p.global_head);
    out
}

pub fn parse_identification(text: &str) -> AppResult<IdentificationPipeline> {
    let mut r = LineReader::new(text);
    let (n, t) = r.header("identification")?;
    let count = parse_usize(t.first(), n, "fault count")?;
    let pre = read_preprocessing(&mut r)?;
    let mut fault_ids = Vec::with_capacity(count);
    let mut models = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, t) = r.header("model")?;
        fault_ids.push(parse_usize(t.first(), n, "fault id")?);
        let (threshold, normal, fault, head) = read_branches(&mut r)?;
        let head = head.ok_or_else(|| AppError::Data(format!("line {n}: per-fault model without a head")))?;
        models.push(DiagnosisModel::new(normal, fault, head, threshold)?);
    }
    r.header("global")?;
    let global_head = read_head(&mut r)?;
    expect_end(&mut r)?;
    Ok(IdentificationPipeline {
        normalizer: pre.normalizer,
        window_length: pre.window_length,
        label_rule: pre.label_rule,
        fault_ids,
        models,
        global_head,
    })
}

/// Reads any file holding RBM layers: a bare DBN file or a model file
/// (`branch` selects `normal` or `fault`).
pub fn load_layers(text: &str, branch: &str) -> AppResult<DbnModel> {
    let mut r = LineReader::new(text);
    match r.peek_keyword() {
        Some("rbm") => parse_dbn(text),
        Some("diagnosis") => {
            let m = parse_model(text)?;
            match branch {
                "normal" => Ok(m.dbn_normal),
                "fault" => Ok(m.dbn_fault),
                _ => Err(AppError::Usage(format!("unknown branch `{branch}`"))),
            }
        }
        _ => Err(AppError::Data("expected an `rbm` or `diagnosis` file".into())),
    }
}
