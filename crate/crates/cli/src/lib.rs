//! The `doccheck` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Failures end with a
//! one-line JSON error record on stderr; stdout only ever carries results.

mod args;
mod error;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;

use doccheck_core::corpus::{self, build_jit_pair, pairs_from_records, split_dataset, Label, PairExample};
use doccheck_core::detect::{results_json, CheckResult, Detector};
use doccheck_core::eval::{
    classification_metrics, corpus_bleu, sentence_bleu, ExampleScore, MetricsReport, SimilarityBaseline, SvmBaseline,
    SvmConfig,
};
use doccheck_core::extract::{self, parse_file, scan_tree, FunctionRecord, ScanOptions, SourceFile};
use doccheck_core::model::{load_versioned_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig};
use doccheck_core::tokenize::Vocabulary;
use doccheck_core::train::{finetune_iccd, train_joint, write_loss_log, LossReport, TrainConfig, TrainObserver};
use doccheck_core::LanguageId;

pub use args::{Cli, Command, Evaluator, Format, InputKind};
pub use error::CliError;

/// Parse `argv` and run it, writing results to `stdout` and diagnostics
/// to `stderr`. Returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(stdout, "{}", err.render());
            return 0;
        }
        Err(err) => {
            let _ = write!(stderr, "{}", err.render());
            let summary = err.to_string();
            let first = summary.lines().next().unwrap_or("invalid arguments");
            let record = CliError::Usage(first.trim_start_matches("error: ").to_string()).record();
            let _ = writeln!(stderr, "{record}");
            return 1;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.record());
            err.exit_code()
        }
    }
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Extract { paths, lang, out, format } => extract_cmd(&paths, lang, out.as_deref(), format, stdout),
        Command::BuildDataset {
            inputs,
            kind,
            out,
            split,
            seed,
            format,
        } => build_dataset_cmd(&inputs, kind, &out, split, seed, format, stdout),
        Command::Train {
            data,
            out,
            config,
            model_config,
            vocab_size,
            seed,
            loss_log,
            format,
        } => train_cmd(
            &data,
            &out,
            config.as_deref(),
            model_config.as_deref(),
            vocab_size,
            seed,
            loss_log.as_deref(),
            format,
            stdout,
        ),
        Command::Finetune {
            checkpoint,
            data,
            out,
            config,
            seed,
            loss_log,
            format,
        } => finetune_cmd(
            &checkpoint.checkpoint,
            &data,
            &out,
            config.as_deref(),
            seed,
            loss_log.as_deref(),
            format,
            stdout,
        ),
        Command::Check {
            paths,
            lang,
            checkpoint,
            threshold,
            out,
            format,
        } => check_cmd(&paths, lang, &checkpoint.checkpoint, threshold, out.as_deref(), format, stdout),
        Command::Eval {
            data,
            evaluator,
            checkpoint,
            train,
            threshold,
            no_generation,
            scores,
            seed,
            out,
            format,
        } => {
            let setup = EvalSetup {
                evaluator,
                checkpoint,
                train,
                threshold,
                generation: !no_generation,
                seed,
            };
            eval_cmd(&data, &setup, scores.as_deref(), out.as_deref(), format, stdout)
        }
        Command::Serve {
            checkpoint,
            host,
            port,
            allowed_origin,
            threshold,
        } => serve_cmd(&checkpoint.checkpoint, SocketAddr::new(host, port), allowed_origin, threshold),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `content` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, stdout: &mut dyn Write, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            fs::write(path, content).map_err(io_err(path))
        }
        None => {
            stdout.write_all(content.as_bytes()).map_err(CliError::Output)?;
            stdout.flush().map_err(CliError::Output)
        }
    }
}

/// A summary value in the requested format.
fn render_value<T: Serialize>(value: &T, format: Format) -> String {
    let text = match format {
        Format::Pretty => serde_json::to_string_pretty(value),
        Format::Json | Format::Jsonl => serde_json::to_string(value),
    };
    text.expect("summaries always serialize") + "\n"
}

/// Source files named by `paths`, in argument order; directories expand to
/// their matching files in path order.
fn collect_sources(paths: &[PathBuf], lang: Option<LanguageId>) -> Result<Vec<SourceFile>, CliError> {
    let mut files = Vec::new();
    for path in paths {
        let meta = fs::metadata(path).map_err(io_err(path))?;
        if meta.is_dir() {
            let options = match lang {
                Some(l) => ScanOptions::new([l]),
                None => ScanOptions::all_languages(),
            };
            let scanned = scan_tree(path, &options)?;
            for err in &scanned.errors {
                tracing::warn!("skipped {err}");
            }
            files.extend(scanned.files);
        } else {
            let language = lang.or_else(|| LanguageId::from_path(path)).ok_or_else(|| {
                CliError::Usage(format!("cannot infer the language of {}; pass --lang", path.display()))
            })?;
            let bytes = fs::read(path).map_err(io_err(path))?;
            let text = String::from_utf8(bytes).map_err(|_| CliError::Io {
                path: path.clone(),
                source: io::Error::new(io::ErrorKind::InvalidData, "not valid UTF-8"),
            })?;
            files.push(SourceFile::new(path.clone(), language, text));
        }
    }
    Ok(files)
}

fn extract_cmd(
    paths: &[PathBuf],
    lang: Option<LanguageId>,
    out: Option<&Path>,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mut records: Vec<FunctionRecord> = Vec::new();
    for file in collect_sources(paths, lang)? {
        let parsed = parse_file(&file)?;
        for d in &parsed.diagnostics {
            tracing::warn!("{}: {d}", file.path.display());
        }
        records.extend(parsed.records);
    }
    let content = match format {
        Format::Jsonl => extract::to_jsonl(&records),
        Format::Json => serde_json::to_string(&records).expect("records always serialize") + "\n",
        Format::Pretty => {
            let mut s = String::new();
            for r in &records {
                s.push_str(&format!("{}:{} {}\n", r.file.display(), r.line_span.0, r.qualified_name));
                s.push_str(&format!("    {}\n", r.docstring.as_deref().unwrap_or("(no docstring)")));
            }
            s
        }
    };
    emit(out, stdout, &content)
}

#[derive(Serialize)]
struct DatasetSummary {
    pairs: usize,
    skipped: usize,
    train: usize,
    valid: usize,
    test: usize,
    seed: u64,
}

fn write_pairs(path: &Path, pairs: &[PairExample]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    corpus::write_jsonl(&mut buf, pairs).map_err(CliError::Output)?;
    fs::write(path, buf).map_err(io_err(path))
}

fn build_dataset_cmd(
    inputs: &[PathBuf],
    kind: InputKind,
    out: &Path,
    ratios: (f64, f64, f64),
    seed: u64,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for input in inputs {
        let file = fs::File::open(input).map_err(io_err(input))?;
        let reader = io::BufReader::new(file);
        match kind {
            InputKind::Records => {
                let records = extract::read_jsonl(reader)?;
                let found = pairs_from_records(&records);
                skipped += records.len() - found.len();
                pairs.extend(found);
            }
            InputKind::Jit => {
                for record in corpus::read_jsonl::<corpus::JitEditRecord, _>(reader)? {
                    match build_jit_pair(&record) {
                        Ok(p) => pairs.push(p),
                        Err(err) => {
                            tracing::warn!("skipped {err}");
                            skipped += 1;
                        }
                    }
                }
            }
        }
    }
    let split = split_dataset(&pairs, ratios, seed)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let pick = |ids: &[String]| {
        let set = ids.iter().cloned().collect();
        corpus::select_ids(&pairs, &set)
    };
    write_pairs(&out.join("train.jsonl"), &pick(&split.train))?;
    write_pairs(&out.join("valid.jsonl"), &pick(&split.valid))?;
    write_pairs(&out.join("test.jsonl"), &pick(&split.test))?;
    let summary = DatasetSummary {
        pairs: pairs.len(),
        skipped,
        train: split.train.len(),
        valid: split.valid.len(),
        test: split.test.len(),
        seed,
    };
    emit(None, stdout, &render_value(&summary, format))
}

/// Logs one line per epoch.
struct Progress {
    last: Option<LossReport>,
}

impl TrainObserver for Progress {
    fn on_step(&mut self, report: &LossReport) {
        self.last = Some(report.clone());
    }

    fn on_epoch_end(&mut self, epoch: usize, _model: &Model) -> bool {
        if let Some(r) = &self.last {
            tracing::info!(
                "epoch {epoch} step {} loss {:.4} (ctc {:.4} bc {:.4} tg {:.4})",
                r.step,
                r.total,
                r.ctc,
                r.bc,
                r.tg
            );
        }
        false
    }
}

#[derive(Serialize)]
struct TrainSummary {
    checkpoint: PathBuf,
    model_version: String,
    steps: usize,
    last: Option<LossReport>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string().replace('\n', " "),
    })
}

fn train_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let mut cfg: TrainConfig = match path {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_pairs(path: &Path) -> Result<Vec<PairExample>, CliError> {
    if !path.exists() {
        return Err(CliError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotFound, "no such file"),
        });
    }
    Ok(corpus::load_pairs(path)?)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String), CliError> {
    load_versioned_checkpoint(path).map_err(|source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

fn store_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<String, CliError> {
    save_checkpoint(path, checkpoint).map_err(|source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(load_checkpoint(path)?.1)
}

fn write_losses(path: Option<&Path>, reports: &[LossReport]) -> Result<(), CliError> {
    if let Some(path) = path {
        let mut buf = Vec::new();
        write_loss_log(&mut buf, reports).map_err(CliError::Output)?;
        fs::write(path, buf).map_err(io_err(path))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    model_config: Option<&Path>,
    vocab_size: usize,
    seed: Option<u64>,
    loss_log: Option<&Path>,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let pairs = load_pairs(data)?;
    let cfg = train_config(config, seed)?;
    let mut arch: ModelConfig = match model_config {
        Some(p) => read_toml(p)?,
        None => ModelConfig::desk(),
    };
    let vocab = Vocabulary::train(pairs.iter().flat_map(|p| [p.comment.as_str(), p.method.as_str()]), vocab_size)?;
    arch.vocab_size = vocab.len();
    if let Some(s) = seed {
        arch.seed = s;
    }
    let mut model = Model::new(arch)?;
    let reports = train_joint(&mut model, &vocab, &pairs, &cfg, &mut Progress { last: None })?;
    let checkpoint = Checkpoint { model, vocab };
    let model_version = store_checkpoint(out, &checkpoint)?;
    write_losses(loss_log, &reports)?;
    let summary = TrainSummary {
        checkpoint: out.to_path_buf(),
        model_version,
        steps: reports.len(),
        last: reports.last().cloned(),
    };
    emit(None, stdout, &render_value(&summary, format))
}

#[allow(clippy::too_many_arguments)]
fn finetune_cmd(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    loss_log: Option<&Path>,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let (Checkpoint { mut model, vocab }, _) = load_checkpoint(checkpoint)?;
    let pairs = load_pairs(data)?;
    let cfg = train_config(config, seed)?;
    let reports = finetune_iccd(&mut model, &vocab, &pairs, &cfg, &mut Progress { last: None })?;
    let model_version = store_checkpoint(out, &Checkpoint { model, vocab })?;
    write_losses(loss_log, &reports)?;
    let summary = TrainSummary {
        checkpoint: out.to_path_buf(),
        model_version,
        steps: reports.len(),
        last: reports.last().cloned(),
    };
    emit(None, stdout, &render_value(&summary, format))
}

fn detector(checkpoint: &Path, threshold: Option<f64>) -> Result<(Detector, String), CliError> {
    let (Checkpoint { model, vocab }, version) = load_checkpoint(checkpoint)?;
    let mut detector = Detector::new(model, vocab)?;
    if let Some(t) = threshold {
        detector = detector.with_threshold(t)?;
    }
    Ok((detector, version))
}

/// Results in the requested format. `Json` output is exactly the string the
/// API embeds as its `results` field, plus a newline.
pub fn render_results(results: &[CheckResult], format: Format) -> String {
    match format {
        Format::Json => results_json(results) + "\n",
        Format::Jsonl => results
            .iter()
            .map(|r| serde_json::to_string(r).expect("check results always serialize") + "\n")
            .collect(),
        Format::Pretty => {
            let mut s = String::new();
            for r in results {
                s.push_str(&format!("{}: {} ({:.3})\n", r.function_name, r.prediction.as_str(), r.confidence));
                if let Some(doc) = &r.docstring {
                    s.push_str(&format!("    current:     {doc}\n"));
                }
                s.push_str(&format!("    recommended: {}\n", r.recommended_docstring));
            }
            s
        }
    }
}

fn check_cmd(
    paths: &[PathBuf],
    lang: Option<LanguageId>,
    checkpoint: &Path,
    threshold: Option<f64>,
    out: Option<&Path>,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let sources = collect_sources(paths, lang)?;
    let (detector, _) = detector(checkpoint, threshold)?;
    let mut results = Vec::new();
    for file in &sources {
        let report = detector.check_source(file)?;
        for d in &report.diagnostics {
            tracing::warn!("{d}");
        }
        results.extend(report.results);
    }
    emit(out, stdout, &render_results(&results, format))
}

struct EvalSetup {
    evaluator: Evaluator,
    checkpoint: Option<PathBuf>,
    train: Option<PathBuf>,
    threshold: Option<f64>,
    generation: bool,
    seed: u64,
}

fn eval_cmd(
    data: &Path,
    setup: &EvalSetup,
    scores_out: Option<&Path>,
    out: Option<&Path>,
    format: Format,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let pairs = load_pairs(data)?;
    let labeled: Vec<&PairExample> = pairs.iter().filter(|p| p.label != Label::Unlabeled).collect();
    let mut scores: Vec<ExampleScore>;
    let score_all = |f: &dyn Fn(&PairExample) -> Result<(Label, f64), CliError>| -> Result<Vec<ExampleScore>, CliError> {
        labeled
            .iter()
            .map(|p| {
                let (prediction, confidence) = f(p)?;
                Ok(ExampleScore {
                    id: p.id.clone(),
                    label: p.label,
                    prediction,
                    confidence,
                    bleu4: None,
                })
            })
            .collect()
    };
    let mut generation_items = Vec::new();
    match setup.evaluator {
        Evaluator::Model => {
            let path = setup
                .checkpoint
                .as_deref()
                .ok_or_else(|| CliError::Usage("the model evaluator needs --checkpoint".into()))?;
            let (detector, _) = detector(path, setup.threshold)?;
            let threshold = detector.threshold;
            scores = score_all(&|p| {
                let (prob, _) = detector.inconsistency(&p.method, &p.comment)?;
                let label = if prob > threshold { Label::Inconsistent } else { Label::Consistent };
                Ok((label, prob))
            })?;
            if setup.generation {
                let by_id: std::collections::HashMap<String, usize> =
                    scores.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
                for p in pairs.iter().filter(|p| p.label != Label::Inconsistent) {
                    if p.comment.split_whitespace().next().is_none() {
                        continue;
                    }
                    let generated = detector.generate_docstring(&p.method)?.text;
                    if let Some(&i) = by_id.get(&p.id) {
                        scores[i].bleu4 = Some(sentence_bleu(&generated, &p.comment)?);
                    }
                    generation_items.push((generated, p.comment.clone(), p.language));
                }
            }
        }
        Evaluator::Tfidf | Evaluator::Svm => {
            let train_path = setup
                .train
                .as_deref()
                .ok_or_else(|| CliError::Usage("baseline evaluators need --train".into()))?;
            let train = load_pairs(train_path)?;
            if setup.evaluator == Evaluator::Tfidf {
                let model = SimilarityBaseline::fit(&train)?;
                tracing::info!("similarity threshold {}", model.threshold);
                scores = score_all(&|p| Ok((model.predict(p), model.score(p))))?;
            } else {
                let cfg = SvmConfig {
                    seed: setup.seed,
                    ..SvmConfig::default()
                };
                let model = SvmBaseline::fit(&train, &cfg)?;
                scores = score_all(&|p| Ok((model.predict(p), model.decision(p))))?;
            }
        }
    }
    let preds: Vec<Label> = scores.iter().map(|s| s.prediction).collect();
    let labels: Vec<Label> = scores.iter().map(|s| s.label).collect();
    let mut report: MetricsReport = classification_metrics(&preds, &labels, Label::Inconsistent)?;
    if !generation_items.is_empty() {
        let bleu = corpus_bleu(&generation_items)?;
        report.bleu4 = bleu.bleu4;
        report.per_language = bleu.per_language;
    }
    if let Some(path) = scores_out {
        let mut buf = Vec::new();
        corpus::write_jsonl(&mut buf, &scores).map_err(CliError::Output)?;
        fs::write(path, buf).map_err(io_err(path))?;
    }
    emit(out, stdout, &render_value(&report, format))
}

fn serve_cmd(checkpoint: &Path, addr: SocketAddr, allowed_origin: Option<String>, threshold: Option<f64>) -> Result<(), CliError> {
    let (detector, model_version) = detector(checkpoint, threshold)?;
    let state = Arc::new(doccheck_serve::AppState { detector, model_version });
    let options = doccheck_serve::ServeOptions { allowed_origin };
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::Output)?;
    runtime.block_on(doccheck_serve::serve(addr, state, &options))?;
    Ok(())
}
