//! Subcommand implementations. Every stage error carries the stage name.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use latte_core::data::{
    build_tensor, generate_shifted_population, ingest, leave_last_out, temporal_split, transform_scale, Dataset,
    Format, RatingScale, SplitBundle, Stage,
};
use latte_core::evaluation::{evaluate, MetricsReport};
use latte_core::io::{self, ArtifactKind, ModelArtifact};
use latte_core::linalg::hooi::HooiOptions;
use latte_core::models::{train, ContextAggregation, ContextName, ModelConfig, ModelKind};
use latte_core::similarity::{build_similarity, DependencyLaw, LawKind};
use latte_core::tuning::{tune, GridSpec, Target, TuneResult};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::args::{Command, CommonOpts, DataOpts, EvalOpts, FormatArg, ModelOpts, PipelineOpts};
use crate::config::{usage, FileConfig};

const DEFAULT_TEST_FRAC: f64 = 0.2;
const DEFAULT_RANKS: (usize, usize, usize) = (32, 32, 3);
const DEFAULT_NORM_FACTOR: f64 = 1.0;
const DEFAULT_L2: f64 = 500.0;
const DEFAULT_TOPN: usize = 10;
const DEFAULT_THRESHOLD: u32 = 3;
const MIN_NATIVE_K: u32 = 5;
const DEFAULT_OUT_DIR: &str = "latte-out";

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { common, mut data } => {
            let file = FileConfig::load(common.config.as_deref())?;
            file.merge_data(&mut data)?;
            let out = out_path(&file, &common, "dataset.bin")?;
            let d = in_stage("ingest", || load_dataset(&data))?;
            in_stage("write", || Ok(io::save_dataset(&out, &d)?))?;
            println!("{}", describe_dataset(&d));
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Split { common, mut input, mut test_frac } => {
            let file = FileConfig::load(common.config.as_deref())?;
            file.merge_input(&mut input)?;
            file.merge_test_frac(&mut test_frac)?;
            let out = out_path(&file, &common, "split.bin")?;
            let input = required_input(input)?;
            let d = in_stage("load", || Ok(io::load_dataset(&input)?))?;
            let bundle = in_stage("split", || split(&d, test_frac.unwrap_or(DEFAULT_TEST_FRAC)))?;
            in_stage("write", || Ok(io::save_split(&out, &bundle)?))?;
            println!("{}", describe_split(&bundle, &split_hash(&bundle)?));
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Train { common, mut input, mut model } => {
            let file = FileConfig::load(common.config.as_deref())?;
            file.merge_input(&mut input)?;
            file.merge_model(&mut model)?;
            let out = out_path(&file, &common, "model.bin")?;
            let input = required_input(input)?;
            let settings = ModelSettings::resolve(&model, Some(ModelKind::Latte))?;
            let [kind] = settings.kinds[..] else {
                return Err(usage("train takes exactly one --model"));
            };
            let bundle = in_stage("load", || Ok(io::load_split(&input)?))?;
            let config = settings.config(kind, settings.norm_factor.unwrap_or(DEFAULT_NORM_FACTOR))?;
            let tensor = build_tensor(&bundle.train);
            let model = in_stage("train", || Ok(train(&config, &bundle.train, &tensor)?))?;
            in_stage("write", || Ok(io::save_model(&out, &ModelArtifact { config: config.clone(), model })?))?;
            println!("trained {}", config.describe());
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Evaluate { common, mut input, model_path, mut eval } => {
            let file = FileConfig::load(common.config.as_deref())?;
            file.merge_input(&mut input)?;
            file.merge_eval(&mut eval)?;
            let out = out_dir(&file, &common)?;
            let input = required_input(input)?;
            let eval = EvalSettings::resolve(&eval);
            let bundle = in_stage("load", || Ok(io::load_split(&input)?))?;
            let art = in_stage("load", || Ok(io::load_model(&model_path)?))?;
            let kind = art.config.kind();
            let ctx = eval.context(kind, art.model.n_ratings())?;
            let report = in_stage("evaluate", || Ok(evaluate(&art.model, &bundle, eval.stage, &ctx, eval.topn, eval.threshold)?))?;
            let column = Column { label: kind.name().to_string(), config: art.config.describe(), context: context_label(kind, &ctx), report };
            let header = format!("{}\nstage: {}", describe_split(&bundle, &split_hash(&bundle)?), stage_name(eval.stage));
            in_stage("report", || write_reports(&out, &header, &[column]))
        }
        Command::Tune { common, mut input, mut model, mut eval } => {
            let file = FileConfig::load(common.config.as_deref())?;
            file.merge_input(&mut input)?;
            file.merge_model(&mut model)?;
            file.merge_eval(&mut eval)?;
            let out = out_dir(&file, &common)?;
            let input = required_input(input)?;
            let settings = ModelSettings::resolve(&model, None)?;
            let eval = EvalSettings::resolve(&eval);
            let grid = grid(&file, &settings, &eval)?;
            let bundle = in_stage("load", || Ok(io::load_split(&input)?))?;
            let hash = split_hash(&bundle)?;
            fs::create_dir_all(&out).with_context(|| format!("report: creating {}", out.display()))?;
            let mut log = RunLog::create(&out.join("run.jsonl"))?;
            let mut tuner = Tuner::new(&bundle, grid, settings.norm_factor);
            let mut columns = Vec::new();
            let mut traces = Vec::new();
            for &kind in &settings.kinds {
                let result = tuner.tune(kind, &mut log, &hash)?;
                let tensor = build_tensor(&bundle.train);
                let model = in_stage("train", || Ok(train(&result.best_config, &bundle.train, &tensor)?))?;
                let path = out.join(format!("{}.model.bin", kind.name()));
                in_stage("write", || Ok(io::save_model(&path, &ModelArtifact { config: result.best_config.clone(), model })?))?;
                columns.push(Column::from_tuned(kind, &result));
                traces.push(result);
            }
            in_stage("report", || {
                write_trace(&out.join("trace.csv"), &traces)?;
                let header = format!("{}\nstage: validation (tuning)", describe_split(&bundle, &hash));
                write_reports(&out, &header, &columns)
            })
        }
        Command::Run(opts) => pipeline(opts, false),
        Command::Compare(opts) => pipeline(opts, true),
    }
}

/// ingest → scale grouping → temporal split → leave-last-out → train or tune
/// → evaluate → report, with one run-log record per stage.
fn pipeline(mut opts: PipelineOpts, compare: bool) -> Result<()> {
    let file = FileConfig::load(opts.common.config.as_deref())?;
    file.merge_data(&mut opts.data)?;
    file.merge_test_frac(&mut opts.test_frac)?;
    file.merge_model(&mut opts.model)?;
    file.merge_eval(&mut opts.eval)?;
    let out = out_dir(&file, &opts.common)?;
    let settings = ModelSettings::resolve(&opts.model, (!compare).then_some(ModelKind::Latte))?;
    if compare && settings.kinds.len() < 2 {
        return Err(usage("compare needs at least two --model values"));
    }
    let eval = EvalSettings::resolve(&opts.eval);
    let grid = if opts.tune { Some(grid(&file, &settings, &eval)?) } else { None };

    fs::create_dir_all(&out).with_context(|| format!("report: creating {}", out.display()))?;
    let mut log = RunLog::create(&out.join("run.jsonl"))?;

    let started = Instant::now();
    let d = in_stage("ingest", || load_dataset(&opts.data))?;
    log.record("ingest", started, json!({
        "input": opts.data.input, "interactions": d.len(), "users": d.n_users(), "items": d.n_items(), "k": d.scale().k(),
    }))?;

    let started = Instant::now();
    let test_frac = opts.test_frac.unwrap_or(DEFAULT_TEST_FRAC);
    let bundle = in_stage("split", || split(&d, test_frac))?;
    let hash = split_hash(&bundle)?;
    log.record("split", started, json!({
        "test_frac": test_frac, "split_hash": hash,
        "validation": bundle.validation_holdout.len(), "test": bundle.test_holdout.len(),
    }))?;

    let tensor = build_tensor(&bundle.train);
    let k = bundle.train.scale().k();
    let mut tuner = grid.map(|g| Tuner::new(&bundle, g, settings.norm_factor));
    let mut columns = Vec::new();
    let mut similarity_law = settings.law;
    for &kind in &settings.kinds {
        let (config, ctx) = match tuner.as_mut() {
            Some(t) => {
                let r = t.tune(kind, &mut log, &hash)?;
                let ctx = match r.best_context.clone() {
                    Some(c) => c,
                    None => eval.context(kind, k)?,
                };
                (r.best_config, ctx)
            }
            None => (settings.config(kind, settings.norm_factor.unwrap_or(DEFAULT_NORM_FACTOR))?, eval.context(kind, k)?),
        };
        if let ModelConfig::Latte { law, .. } = &config {
            similarity_law = *law;
        }

        let started = Instant::now();
        let model = in_stage("train", || Ok(train(&config, &bundle.train, &tensor)?))?;
        log.record("train", started, json!({ "model": kind.name(), "config": config.describe(), "split_hash": hash }))?;

        let started = Instant::now();
        let report = in_stage("evaluate", || Ok(evaluate(&model, &bundle, eval.stage, &ctx, eval.topn, eval.threshold)?))?;
        log.record("evaluate", started, json!({
            "model": kind.name(), "context": context_label(kind, &ctx), "holdout": stage_name(eval.stage),
            "split_hash": hash, "mcc": report.mcc,
        }))?;
        columns.push(Column { label: kind.name().to_string(), config: config.describe(), context: context_label(kind, &ctx), report });
    }

    let started = Instant::now();
    in_stage("report", || {
        let sim = build_similarity(similarity_law, k)?;
        fs::write(out.join("similarity.csv"), sim.to_csv())?;
        let header = format!(
            "{}\n{}\nstage: {}",
            describe_dataset(&d),
            describe_split(&bundle, &hash),
            stage_name(eval.stage)
        );
        write_reports(&out, &header, &columns)
    })?;
    log.record("report", started, json!({ "out": out.display().to_string() }))?;
    Ok(())
}

/// Runs `f`, prefixing any error with the stage name.
fn in_stage<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| stage.to_string())
}

fn required_input(input: Option<String>) -> Result<String> {
    input.ok_or_else(|| usage("--input is required"))
}

fn out_path(file: &FileConfig, common: &CommonOpts, default: &str) -> Result<PathBuf> {
    let mut out = common.out.clone();
    file.merge_out(&mut out)?;
    Ok(out.unwrap_or_else(|| PathBuf::from(default)))
}

fn out_dir(file: &FileConfig, common: &CommonOpts) -> Result<PathBuf> {
    out_path(file, common, DEFAULT_OUT_DIR)
}

fn load_dataset(data: &DataOpts) -> Result<Dataset> {
    let input = data.input.as_deref().ok_or_else(|| usage("--input is required"))?;
    let format = data.format.unwrap_or(if input.ends_with(".csv") { FormatArg::Csv } else { FormatArg::Dat });
    let d = match format.file_format() {
        Some(f) => read_ratings(input, f)?,
        None => {
            let parts: Vec<u64> = input
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| usage(format!("synthetic input must be USERS,ITEMS,SHIFT,SEED, got '{input}'")))?;
            let [users, items, shift, seed] = parts[..] else {
                return Err(usage(format!("synthetic input must be USERS,ITEMS,SHIFT,SEED, got '{input}'")));
            };
            generate_shifted_population(users as usize, items as usize, shift as u32, seed)?
        }
    };
    match data.scale_k {
        Some(k) if k != d.scale().k() => Ok(transform_scale(&d, k)?),
        _ => Ok(d),
    }
}

/// Reads a ratings file on the `1..=max` scale, where `max` is the largest
/// rating present (at least 5).
fn read_ratings(path: &str, format: Format) -> Result<Dataset> {
    let wide = RatingScale::one_to(u8::MAX as u32)?;
    let d = ingest(path, format, wide).with_context(|| format!("reading {path}"))?;
    let max = d.interactions().iter().map(|i| i.rating).max().unwrap_or(MIN_NATIVE_K).max(MIN_NATIVE_K);
    Ok(Dataset::new(d.interactions().to_vec(), RatingScale::one_to(max)?)?)
}

fn split(d: &Dataset, test_frac: f64) -> Result<SplitBundle> {
    let (train_part, test_part) = temporal_split(d, test_frac)?;
    Ok(leave_last_out(&test_part, &train_part)?)
}

/// SHA-256 of the serialized split artifact.
fn split_hash(bundle: &SplitBundle) -> Result<String> {
    let mut bytes = Vec::new();
    io::write_artifact(&mut bytes, ArtifactKind::Split, bundle)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn describe_dataset(d: &Dataset) -> String {
    format!(
        "dataset: {} interactions, {} users, {} items, {} rating values",
        d.len(),
        d.n_users(),
        d.n_items(),
        d.scale().k()
    )
}

fn describe_split(b: &SplitBundle, hash: &str) -> String {
    format!(
        "split: {} training interactions, {} validation and {} test holdouts, hash {}",
        b.train.len(),
        b.validation_holdout.len(),
        b.test_holdout.len(),
        &hash[..16]
    )
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Validation => "validation",
        Stage::Test => "test",
    }
}

fn context_label(kind: ModelKind, ctx: &ContextAggregation) -> String {
    if kind.is_tensor() {
        ctx.label()
    } else {
        "-".to_string()
    }
}

struct ModelSettings {
    kinds: Vec<ModelKind>,
    law: DependencyLaw,
    law_given: bool,
    ranks: (usize, usize, usize),
    norm_factor: Option<f64>,
    l2: f64,
    seed: u64,
    hooi: HooiOptions,
}

impl ModelSettings {
    fn resolve(m: &ModelOpts, default_kind: Option<ModelKind>) -> Result<Self> {
        let mut kinds: Vec<ModelKind> = m.model.iter().map(|&k| k.into()).collect();
        if kinds.is_empty() {
            kinds.extend(default_kind);
        }
        if kinds.is_empty() {
            return Err(usage("at least one --model is required"));
        }
        for (i, k) in kinds.iter().enumerate() {
            if kinds[..i].contains(k) {
                return Err(usage(format!("--model {k} given twice")));
            }
        }
        let seed = m.seed.unwrap_or(0);
        let defaults = HooiOptions::default();
        Ok(Self {
            kinds,
            law: m.law.map(LawKind::from).unwrap_or(LawKind::Linear).into(),
            law_given: m.law.is_some(),
            ranks: m.ranks.unwrap_or(DEFAULT_RANKS),
            norm_factor: m.norm_factor,
            l2: m.l2.unwrap_or(DEFAULT_L2),
            seed,
            hooi: HooiOptions {
                max_iters: m.max_iters.unwrap_or(defaults.max_iters),
                tol: m.tol.unwrap_or(defaults.tol),
                seed,
            },
        })
    }

    fn config(&self, kind: ModelKind, normalization_factor: f64) -> Result<ModelConfig> {
        let config = match kind {
            ModelKind::Random => ModelConfig::Random { seed: self.seed },
            ModelKind::MostPopular => ModelConfig::MostPopular,
            ModelKind::PureSvd => ModelConfig::PureSvd { rank: self.ranks.0, normalization_factor, seed: self.seed },
            ModelKind::Ease => ModelConfig::Ease { l2: self.l2 },
            ModelKind::Coffee => ModelConfig::Coffee { ranks: self.ranks, normalization_factor, hooi: self.hooi },
            ModelKind::Latte => ModelConfig::Latte { ranks: self.ranks, normalization_factor, law: self.law, hooi: self.hooi },
        };
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }
}

struct EvalSettings {
    context: Option<ContextName>,
    topn: usize,
    threshold: u32,
    stage: Stage,
}

impl EvalSettings {
    fn resolve(e: &EvalOpts) -> Self {
        Self {
            context: e.context.map(Into::into),
            topn: e.topn.unwrap_or(DEFAULT_TOPN),
            threshold: e.threshold.unwrap_or(DEFAULT_THRESHOLD),
            stage: e.stage.map(Into::into).unwrap_or(Stage::Test),
        }
    }

    /// The requested context, or weight on the top rating value alone.
    fn context(&self, kind: ModelKind, k: usize) -> Result<ContextAggregation> {
        if !kind.is_tensor() {
            return Ok(ContextAggregation::custom(Vec::new()));
        }
        match self.context {
            Some(name) => ContextAggregation::named(name, k).map_err(|e| usage(e.to_string())),
            None if k == 5 => Ok(ContextAggregation::named(ContextName::Only5, 5)?),
            None => Ok(ContextAggregation::custom((0..k).map(|i| if i + 1 == k { 1.0 } else { 0.0 }).collect())),
        }
    }
}

fn grid(file: &FileConfig, settings: &ModelSettings, eval: &EvalSettings) -> Result<GridSpec> {
    let mut grid = GridSpec { seed: settings.seed, hooi: settings.hooi, n: eval.topn, threshold: eval.threshold, ..GridSpec::default() };
    file.apply_grid(&mut grid)?;
    if settings.law_given {
        grid.laws = vec![settings.law];
    }
    if let Some(name) = eval.context {
        grid.contexts = vec![ContextAggregation::named(name, 5).map_err(|e| usage(e.to_string()))?];
    }
    Ok(grid)
}

/// Tunes models on one split. Tensor models inherit PureSVD's best
/// normalization factor unless one was given explicitly.
struct Tuner<'a> {
    bundle: &'a SplitBundle,
    grid: GridSpec,
    inherited: Option<f64>,
}

impl<'a> Tuner<'a> {
    fn new(bundle: &'a SplitBundle, mut grid: GridSpec, norm_factor: Option<f64>) -> Self {
        if let Some(f) = norm_factor {
            grid.tensor_normalization = f;
        }
        Self { bundle, grid, inherited: norm_factor }
    }

    fn tune(&mut self, kind: ModelKind, log: &mut RunLog, hash: &str) -> Result<TuneResult> {
        if kind.is_tensor() && self.inherited.is_none() {
            self.tune(ModelKind::PureSvd, log, hash)?;
        }
        let r = self.run(kind, log, hash)?;
        if let (None, ModelConfig::PureSvd { normalization_factor, .. }) = (self.inherited, &r.best_config) {
            self.grid.tensor_normalization = *normalization_factor;
            self.inherited = Some(*normalization_factor);
        }
        Ok(r)
    }

    fn run(&self, kind: ModelKind, log: &mut RunLog, hash: &str) -> Result<TuneResult> {
        let started = Instant::now();
        let r = in_stage("tune", || Ok(tune(kind, &self.grid, self.bundle, Target::Mcc)?))?;
        log.record("tune", started, json!({
            "model": kind.name(), "grid_points": r.trace.len(), "best": r.best_config.describe(),
            "context": r.best_context.as_ref().map(ContextAggregation::label), "validation_mcc": r.best_metric,
            "split_hash": hash,
        }))?;
        Ok(r)
    }
}

struct Column {
    label: String,
    config: String,
    context: String,
    report: MetricsReport,
}

impl Column {
    fn from_tuned(kind: ModelKind, r: &TuneResult) -> Self {
        Self {
            label: kind.name().to_string(),
            config: r.best_config.describe(),
            context: r.best_context.as_ref().map_or_else(|| "-".to_string(), ContextAggregation::label),
            report: r.best_report.clone(),
        }
    }
}

/// Writes `report.txt` and `metrics.csv` into `out` and prints the table.
fn write_reports(out: &Path, header: &str, columns: &[Column]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let table = format!("{header}\n\n{}", table(columns));
    fs::write(out.join("report.txt"), &table)?;
    fs::write(out.join("metrics.csv"), metrics_csv(columns))?;
    print!("{table}");
    Ok(())
}

fn metrics_csv(columns: &[Column]) -> String {
    let mut out = String::from("metric");
    for c in columns {
        let _ = write!(out, ",{}", c.label);
    }
    out.push('\n');
    let Some(first) = columns.first() else { return out };
    let mut rows: Vec<(String, Vec<String>)> = first.report.rows().iter().map(|(n, _)| (n.to_string(), Vec::new())).collect();
    rows.push(("n".into(), Vec::new()));
    rows.push(("threshold".into(), Vec::new()));
    for c in columns {
        let values = c
            .report
            .rows()
            .into_iter()
            .map(|(_, v)| v.to_string())
            .chain([c.report.n.to_string(), c.report.threshold.to_string()]);
        for (row, v) in rows.iter_mut().zip(values) {
            row.1.push(v);
        }
    }
    for (name, values) in rows {
        let _ = writeln!(out, "{name},{}", values.join(","));
    }
    out
}

fn table(columns: &[Column]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("model".into(), columns.iter().map(|c| c.label.clone()).collect()),
        ("config".into(), columns.iter().map(|c| c.config.clone()).collect()),
        ("context".into(), columns.iter().map(|c| c.context.clone()).collect()),
    ];
    if let Some(first) = columns.first() {
        for (i, (name, _)) in first.report.rows().into_iter().enumerate() {
            let cells = columns
                .iter()
                .map(|c| {
                    let v = c.report.rows()[i].1;
                    if v.fract() == 0.0 && v.abs() < 1e15 { format!("{v}") } else { format!("{v:.4}") }
                })
                .collect();
            rows.push((name.to_string(), cells));
        }
    }
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns.len())
        .map(|i| rows.iter().map(|r| r.1[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (name, cells) in &rows {
        let _ = write!(out, "{name:<label_w$}");
        for (cell, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {cell:>w$}");
        }
        out.push('\n');
    }
    out
}

fn write_trace(path: &Path, results: &[TuneResult]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "model,config,context,mcc,hr_pos,hr_neg,mrr_pos,mrr_neg,coverage,error")?;
    for r in results {
        for e in &r.trace {
            let ctx = e.context.as_ref().map_or_else(|| "-".to_string(), ContextAggregation::label);
            let (metrics, error) = match &e.outcome {
                Ok(m) => (format!("{},{},{},{},{},{}", m.mcc, m.hr_pos, m.hr_neg, m.mrr_pos, m.mrr_neg, m.coverage), String::new()),
                Err(msg) => (",,,,,".to_string(), msg.replace(['\n', ','], " ")),
            };
            writeln!(w, "{},\"{}\",\"{ctx}\",{metrics},{error}", e.config.kind().name(), e.config.describe())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// JSON-lines log with one record per stage.
struct RunLog {
    w: BufWriter<File>,
}

impl RunLog {
    fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { w: BufWriter::new(f) })
    }

    fn record(&mut self, stage: &str, started: Instant, detail: Value) -> Result<()> {
        let mut rec = json!({ "stage": stage, "elapsed_ms": started.elapsed().as_secs_f64() * 1e3 });
        if let (Value::Object(rec), Value::Object(detail)) = (&mut rec, detail) {
            rec.extend(detail);
        }
        writeln!(self.w, "{rec}")?;
        self.w.flush()?;
        Ok(())
    }
}
