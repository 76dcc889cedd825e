use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use traitlens::corpus::write_corpus;
use traitlens::fairness::DEFAULT_DISPARITY_THRESHOLD;
use traitlens::pipeline::{self, with_outputs, ExperimentConfig, Outputs};
use traitlens::synth::{generate_corpus, SynthSpec};
use traitlens::{Error, Result};

#[derive(Parser)]
#[command(name = "traitlens", version, about = "Bag-of-words trait prediction experiments")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, pool and split the corpus.
    Ingest(ExperimentArgs),
    /// Build the vocabulary from the training split.
    Vocab(ExperimentArgs),
    /// Compute tf-idf matrices for both splits.
    Featurize(ExperimentArgs),
    /// Fit the model for the configured task.
    Train(ExperimentArgs),
    /// Predict the test split and write metrics.
    Eval(ExperimentArgs),
    /// Write the top positive and negative words.
    TopWords(ExperimentArgs),
    /// Write the pairwise word matrix of a multiclass model.
    PairwiseWords(ExperimentArgs),
    /// Audit per-group errors of the saved predictions, or of a grouped
    /// confusion file given with --grouped.
    FairnessAudit(AuditArgs),
    /// Generate a synthetic corpus with planted signal.
    Synth(SynthArgs),
    /// All stages end to end.
    Run(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Regression,
    Binary,
    Multiclass,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protected {
    None,
    Audit,
    Debias,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    InverseClass,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum TfMode {
    AsPrinted,
    SublinearCount,
    Log1p,
}

#[derive(Args, Default)]
struct ExperimentArgs {
    /// JSON config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    eval_label: Option<String>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// JSON object mapping raw categories to pooled ones.
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    vocab_k: Option<usize>,
    #[arg(long)]
    min_users: Option<usize>,
    #[arg(long)]
    max_frac: Option<f64>,
    #[arg(long)]
    min_words: Option<usize>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long, value_enum)]
    tf_mode: Option<TfMode>,
    /// Fixed penalty; disables cross-validation.
    #[arg(long, conflicts_with_all = ["cv_policy", "lambda_grid"])]
    lambda: Option<f64>,
    /// `auto`, `loocv` or `kfold:K`.
    #[arg(long)]
    cv_policy: Option<String>,
    /// Comma-separated penalties to cross-validate.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    weighting: Option<Weighting>,
    #[arg(long, value_enum)]
    protected: Option<Protected>,
    #[arg(long)]
    positive_class: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    pairwise_top_n: Option<usize>,
    #[arg(long, env = pipeline::SEED_ENV)]
    seed: Option<u64>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Grouped confusion matrices (JSON) to audit instead of a pipeline run.
    #[arg(long, requires = "positive_class")]
    grouped: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DISPARITY_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Full generator spec (JSON); the flags below build a regression spec.
    #[arg(long, conflicts_with_all = ["n_users", "vocab_size", "effects", "noise_sd"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    n_users: usize,
    #[arg(long, default_value_t = 5000)]
    vocab_size: usize,
    /// Comma-separated effects of the planted tokens.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    effects: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    noise_sd: f64,
    #[arg(long, env = pipeline::SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Directory receiving corpus.jsonl and truth.json.
    #[arg(long)]
    out: PathBuf,
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_cv_policy(s: &str) -> Result<Value> {
    match s {
        "auto" | "loocv" => Ok(json!(s)),
        _ => match s.strip_prefix("kfold:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 2 => Ok(json!({ "kfold": k })),
            _ => Err(Error::Config(format!("cv policy {s:?}: expected auto, loocv or kfold:K with K >= 2"))),
        },
    }
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut doc = match &self.config {
            Some(p) => serde_json::from_str::<Value>(&read_text(p)?)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => Value::Object(Map::new()),
        };
        let Value::Object(map) = &mut doc else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut set = |k: &str, v: Value| {
            map.insert(k.to_string(), v);
        };
        if let Some(v) = &self.task {
            set("task", json!(v));
        }
        if let Some(v) = &self.label {
            set("label", json!(v));
        }
        if let Some(v) = &self.eval_label {
            set("eval_label", json!(v));
        }
        if let Some(v) = self.kind {
            set("kind", json!(value_name(v)));
        }
        if let Some(v) = &self.pooling {
            let parsed: Value =
                serde_json::from_str(v).map_err(|e| Error::Config(format!("--pooling: {e}")))?;
            set("pooling", parsed);
        }
        if let Some(v) = self.vocab_k {
            set("vocab_k", json!(v));
        }
        if let Some(v) = self.min_users {
            set("min_users", json!(v));
        }
        if let Some(v) = self.max_frac {
            set("max_frac", json!(v));
        }
        if let Some(v) = self.min_words {
            set("min_words", json!(v));
        }
        if let Some(v) = self.train_ratio {
            set("train_ratio", json!(v));
        }
        if let Some(v) = self.tf_mode {
            set("tf_mode", json!(value_name(v)));
        }
        if let Some(v) = &self.weighting {
            set("weighting", json!(value_name(*v)));
        }
        if let Some(v) = self.protected {
            set("protected", json!(value_name(v)));
        }
        if let Some(v) = &self.positive_class {
            set("positive_class", json!(v));
        }
        if let Some(v) = self.top_k {
            set("top_k", json!(v));
        }
        if let Some(v) = self.pairwise_top_n {
            set("pairwise_top_n", json!(v));
        }
        if let Some(v) = self.seed {
            set("seed", json!(v));
        }
        if let Some(v) = &self.input {
            set("input", json!(v));
        }
        if let Some(v) = &self.out {
            set("out", json!(v));
        }
        if let Some(l) = self.lambda {
            map.insert("lambda".into(), json!({ "fixed": l }));
        } else if self.cv_policy.is_some() || self.lambda_grid.is_some() {
            let mut cv = match map.get("lambda").and_then(|v| v.get("cv")) {
                Some(Value::Object(m)) => m.clone(),
                _ => Map::new(),
            };
            if let Some(p) = &self.cv_policy {
                cv.insert("policy".into(), parse_cv_policy(p)?);
            }
            if let Some(g) = &self.lambda_grid {
                cv.insert("grid".into(), json!(g));
            }
            map.insert("lambda".into(), json!({ "cv": cv }));
        }
        ExperimentConfig::from_value(doc)?.resolve()
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (`| head`) is not a failure
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn stage<T>(
    args: &ExperimentArgs,
    name: &'static str,
    f: impl FnOnce(&ExperimentConfig, &mut Outputs) -> Result<T>,
) -> Result<T> {
    let cfg = args.resolve()?;
    with_outputs(&cfg.out, |out| f(&cfg, out)).map_err(|e| e.in_stage(name))
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(p) => serde_json::from_str::<SynthSpec>(&read_text(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => SynthSpec::regression(args.n_users, args.vocab_size, &args.effects, args.noise_sd, args.seed),
    };
    let (records, truth) = generate_corpus(&spec)?;
    with_outputs(&args.out, |out| {
        let mut buf = Vec::new();
        write_corpus(&mut buf, &records)?;
        out.write("corpus.jsonl", &buf)?;
        out.write("truth.json", format!("{}\n", truth.to_json()?).as_bytes())
    })?;
    eprintln!("wrote {} users to {}", records.len(), args.out.join("corpus.jsonl").display());
    Ok(())
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Ingest(a) => print_json(&stage(a, "ingest", pipeline::stage_ingest)?),
        Command::Vocab(a) => {
            let v = stage(a, "vocab", pipeline::stage_vocab)?;
            eprintln!("{} tokens", v.len());
            Ok(())
        }
        Command::Featurize(a) => {
            let f = stage(a, "featurize", pipeline::stage_featurize)?;
            eprintln!("{} train rows, {} test rows", f.train.n_rows(), f.test.n_rows());
            Ok(())
        }
        Command::Train(a) => {
            stage(a, "train", pipeline::stage_train)?;
            Ok(())
        }
        Command::Eval(a) => print_json(&stage(a, "eval", pipeline::stage_eval)?.body),
        Command::TopWords(a) => {
            let list = stage(a, "top-words", pipeline::stage_top_words)?;
            if list.truncated {
                eprintln!("warning: fewer than {} nonzero weights in one direction", list.k);
            }
            Ok(())
        }
        Command::PairwiseWords(a) => print_json(&stage(a, "pairwise-words", pipeline::stage_pairwise_words)?),
        Command::FairnessAudit(a) => match &a.grouped {
            Some(path) => {
                let positive = a.experiment.positive_class.as_deref().expect("required by clap");
                let body = pipeline::audit_external(&read_text(path)?, positive, a.threshold)
                    .map_err(|e| e.in_stage("fairness-audit"))?;
                match &a.experiment.out {
                    Some(dir) => with_outputs(dir, |out| out.write_json(pipeline::FAIRNESS_FILE, &body)),
                    None => print_json(&body),
                }
            }
            None => print_json(&stage(&a.experiment, "fairness-audit", pipeline::stage_fairness)?),
        },
        Command::Synth(a) => synth(a),
        Command::Run(a) => {
            let cfg = a.resolve()?;
            print_json(&pipeline::run_pipeline(&cfg)?.body)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or(0);
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| dispatch(&cli.command)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
