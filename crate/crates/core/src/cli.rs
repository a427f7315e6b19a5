//! Subcommands behind the `hoptrace` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Overrides, RunConfig};
use crate::data::{
    build_vocabulary, generate_synthetic, graph_from_dir, load_questions, load_split, resolve_examples,
    SyntheticSpec,
};
use crate::error::Error;
use crate::graph::{GraphForm, RelationGraph};
use crate::reasoner::{answer, trace_dot, trace_json, Model};
use crate::training::{evaluate, train, Checkpoint, Metrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
/// `eval --require` threshold not met.
pub const EXIT_REQUIREMENT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hoptrace", version, about = "Differentiable multi-hop question answering over relation graphs")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic movie-domain dataset.
    Gen(GenArgs),
    /// Build a graph file from a dataset directory.
    BuildGraph(BuildGraphArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a question split.
    Eval(EvalArgs),
    /// Answer one question, optionally exporting its reasoning trace.
    Answer(AnswerArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings; defaults otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub form: GraphForm,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write into a non-empty directory, replacing generated files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub form: GraphForm,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of label triples added in mixed form.
    #[arg(long, default_value_t = 0.5)]
    pub mixed_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub mixed_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub form: Option<GraphForm>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on this fraction of the training questions.
    #[arg(long)]
    pub limit_train: Option<f64>,
    #[arg(long)]
    pub no_truncation: bool,
    #[arg(long)]
    pub no_mask: bool,
    #[arg(long)]
    pub no_aux: bool,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; defaults to the one the checkpoint was trained on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Prebuilt graph file, used instead of rebuilding from the dataset.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Split name (`<data>/<k>-hop/qa_<split>.txt`).
    #[arg(long, default_value = "test")]
    pub split: String,
    /// A single question file, used instead of `--split`.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Write metrics JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 4 when overall hits@1 falls below this.
    #[arg(long)]
    pub require: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnswerArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Question with the topic entity in brackets, e.g. "who directed [Heat]".
    pub question: String,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Number of ranked answers printed.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

/// Command failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NanLoss { .. } | Error::NonFinite(_) => EXIT_NUMERIC,
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: Cli, out: &mut dyn Write) -> CmdResult {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::BuildGraph(a) => cmd_build_graph(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Answer(a) => cmd_answer(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CmdResult {
    writeln!(out, "{text}").map_err(|e| Error::io("stdout", e).into())
}

fn write_file(path: &Path, body: &str) -> CmdResult {
    std::fs::write(path, body).map_err(|e| Error::io(path, e).into())
}

fn to_json<T: Serialize>(v: &T) -> CmdResult<String> {
    Ok(serde_json::to_string_pretty(v).map_err(Error::from)?)
}

/// Files and directories `gen` writes; `--force` removes exactly these.
const GENERATED: [&str; 5] = ["kb.tsv", "corpus.jsonl", "manifest.json", "ambiguous", "duplicates"];

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> CmdResult {
    let mut spec = match &a.spec {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SyntheticSpec>(&raw).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let non_empty = a.out.read_dir().is_ok_and(|mut d| d.next().is_some());
    if non_empty {
        if !a.force {
            return Err(usage(format!(
                "{} is not empty; pass --force to overwrite",
                a.out.display()
            )));
        }
        let hops = (1..=9).map(|h| format!("{h}-hop"));
        for name in GENERATED.iter().map(|s| s.to_string()).chain(hops) {
            let p = a.out.join(&name);
            let res = if p.is_dir() {
                std::fs::remove_dir_all(&p)
            } else if p.exists() {
                std::fs::remove_file(&p)
            } else {
                Ok(())
            };
            res.map_err(|e| Error::io(&p, e))?;
        }
    }
    let data = generate_synthetic(&spec)?;
    let manifest = data.write(&a.out, a.form)?;
    emit(out, &to_json(&manifest)?)
}

pub fn cmd_build_graph(a: &BuildGraphArgs, out: &mut dyn Write) -> CmdResult {
    if !(0.0..=1.0).contains(&a.mixed_fraction) {
        return Err(usage("--mixed-fraction must be in [0, 1]"));
    }
    let graph = graph_from_dir(&a.data, a.form, a.mixed_fraction, a.mixed_seed)?;
    graph.save(&a.out)?;
    let summary = json!({
        "form": graph.form(),
        "entities": graph.num_entities(),
        "predicates": graph.num_predicates(),
        "edges": graph.num_edges(),
        "texts": graph.texts().len(),
        "text_relations": graph.num_text_relations(),
    });
    emit(out, &to_json(&summary)?)
}

fn load_graph(graph: Option<&Path>, data: &Path, cfg: &RunConfig) -> CmdResult<RelationGraph> {
    let graph = match graph {
        Some(p) => RelationGraph::load(p)?,
        None => graph_from_dir(data, cfg.model.form, cfg.mixed_fraction, cfg.mixed_seed)?,
    };
    if graph.form() != cfg.model.form {
        return Err(usage(format!(
            "graph is in {} form but the model expects {}",
            graph.form(),
            cfg.model.form
        )));
    }
    Ok(graph)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    let overrides = Overrides {
        data_dir: a.data.clone(),
        graph: a.graph.clone(),
        checkpoint: a.checkpoint.clone(),
        log: a.log.clone(),
        form: a.form,
        steps: a.steps,
        dim: a.dim,
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        limit_train: a.limit_train,
        no_truncation: a.no_truncation,
        no_mask: a.no_mask,
        no_aux: a.no_aux,
    };
    let cfg = RunConfig::resolve(a.config.as_deref(), &overrides)?;
    let run_value = serde_json::to_value(&cfg).map_err(Error::from)?;
    let graph = load_graph(cfg.graph.as_deref(), &cfg.data_dir, &cfg)?;
    let train_q = load_split(&cfg.data_dir, "train")?;
    let dev_q = load_split(&cfg.data_dir, "dev")?;
    let vocab = build_vocabulary(&train_q, &graph);
    let mut model = Model::new(cfg.model.clone(), vocab, &graph, cfg.train.seed)?;
    let train_set = resolve_examples(&train_q, &graph, &model);
    let dev_set = resolve_examples(&dev_q, &graph, &model);
    info!(
        "{} graph: {} entities, {} predicates, {} text relations; {} train / {} dev questions",
        graph.form(),
        graph.num_entities(),
        graph.num_predicates(),
        graph.num_text_relations(),
        train_set.len(),
        dev_set.len()
    );

    let mut log_file = match &cfg.log {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{}", json!({ "run": run_value })).map_err(|e| Error::io(p, e))?;
            Some(w)
        }
        None => None,
    };
    let report = train(
        &mut model,
        &graph,
        &train_set,
        &dev_set,
        &cfg.train,
        log_file.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let (Some(w), Some(p)) = (log_file.as_mut(), &cfg.log) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }

    let mut ckpt = Checkpoint::from_model(&model, &graph);
    ckpt.meta.train = Some(cfg.train.clone());
    ckpt.meta.optimizer = Some(report.optimizer.clone());
    ckpt.meta.dev = Some(report.best_dev.clone());
    ckpt.meta.run = Some(run_value.clone());
    ckpt.save(&cfg.checkpoint)?;

    let summary = json!({
        "checkpoint": cfg.checkpoint,
        "best_epoch": report.best_epoch,
        "train_examples": report.train_examples,
        "dev": report.best_dev,
        "run": run_value,
    });
    emit(out, &to_json(&summary)?)
}

/// Loads a checkpoint and the graph it runs on. The run configuration echoed
/// in the checkpoint supplies the dataset path and mixed-graph settings
/// unless overridden.
fn load_model(src: &ModelSource) -> CmdResult<(Model, RelationGraph, RunConfig)> {
    let ckpt = Checkpoint::load(&src.checkpoint)?;
    let mut cfg = match &ckpt.meta.run {
        Some(v) => serde_json::from_value::<RunConfig>(v.clone()).map_err(Error::from)?,
        None => RunConfig::default(),
    };
    cfg.model = ckpt.meta.model.clone();
    if let Some(d) = &src.data {
        cfg.data_dir = d.clone();
    }
    let graph_path = src.graph.as_deref().or(if src.data.is_some() { None } else { cfg.graph.as_deref() });
    let graph = load_graph(graph_path, &cfg.data_dir, &cfg)?;
    let model = ckpt.into_model(&graph)?;
    Ok((model, graph, cfg))
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub questions: String,
    pub metrics: Metrics,
    pub skipped: usize,
    pub run: RunConfig,
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    if let Some(r) = a.require {
        if !(0.0..=1.0).contains(&r) {
            return Err(usage("--require must be in [0, 1]"));
        }
    }
    let (model, graph, cfg) = load_model(&a.source)?;
    let (questions, label) = match &a.questions {
        Some(p) => (load_questions(p)?, p.display().to_string()),
        None => (load_split(&cfg.data_dir, &a.split)?, a.split.clone()),
    };
    let examples = resolve_examples(&questions, &graph, &model);
    let metrics = evaluate(&model, &graph, &examples)?;
    let report = EvalReport {
        checkpoint: a.source.checkpoint.clone(),
        questions: label,
        skipped: questions.len() - examples.len(),
        metrics,
        run: cfg,
    };
    let body = to_json(&report)?;
    if let Some(p) = &a.out {
        write_file(p, &(body.clone() + "\n"))?;
    }
    emit(out, &body)?;
    if let Some(r) = a.require {
        if report.metrics.hits1 < r {
            return Err(Failure {
                code: EXIT_REQUIREMENT,
                message: format!("hits@1 {:.4} is below the required {r}", report.metrics.hits1),
            });
        }
    }
    Ok(())
}

pub fn cmd_answer(a: &AnswerArgs, out: &mut dyn Write) -> CmdResult {
    let (model, graph, cfg) = load_model(&a.source)?;
    let Some(mention) = crate::text::topic_mention(&a.question) else {
        return Err(usage("question needs a bracketed topic entity, e.g. \"who directed [Heat]\""));
    };
    let topics = graph.resolve_mention(mention);
    if topics.is_empty() {
        return Err(Error::UnknownEntity(mention.to_string()).into());
    }
    let tokens = model.question_tokens(&a.question);
    let cache = model.relation_cache();
    let trace = model.forward(&graph, cache.as_ref(), &tokens, &topics, None)?;
    let run_value = serde_json::to_value(&cfg).map_err(Error::from)?;

    if let Some(p) = &a.trace {
        let export = trace_json(&model, &graph, &a.question, &trace);
        let mut v = serde_json::to_value(&export).map_err(Error::from)?;
        if let Value::Object(m) = &mut v {
            m.insert("run".into(), run_value.clone());
        }
        write_file(p, &(to_json(&v)? + "\n"))?;
    }
    if let Some(p) = &a.dot {
        let body = format!("// run: {run_value}\n{}", trace_dot(&graph, &trace));
        write_file(p, &body)?;
    }
    let ranked = answer(&trace.output);
    if ranked.degenerate {
        emit(out, "no entity activated")?;
    }
    for (e, score) in ranked.ranked.iter().take(a.top) {
        emit(out, &format!("{score:.4}\t{}", graph.entity_name(*e)))?;
    }
    Ok(())
}
