//! `dare`: infer answers and abilities, generate synthetic data, run
//! experiments, build static tests and serve adaptive sessions.
//!
//! Exit status is 0 on success, 1 on invalid input or usage, 2 on runtime failure.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dare_core::adaptive::SessionBank;
use dare_core::baselines::{infer_variant, static_question_set};
use dare_core::eval::{self, DataSource, Experiment, ExperimentSpec};
use dare_core::io::{self, FileManifest, LoadedDataset, PosteriorDocument, RunConfig};
use dare_core::synth::{sample, SynthConfig};
use dare_core::{DareError, DiscriminationMode, ModelVariant};
use dare_service::types::BankDefinition;
use dare_service::SessionService;

#[derive(Parser)]
#[command(name = "dare", version, about = "Joint inference of answers, difficulty and ability from multiple-choice responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Infer posteriors for a response dataset.
    Infer(InferArgs),
    /// Sample a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Run a scripted experiment and print its summary table.
    Eval(EvalArgs),
    /// Choose a fixed test of the given size by solve rate.
    StaticSet(StaticArgs),
    /// Serve adaptive test sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// JSON file with `priors` and `ep` sections; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON file with every prior.
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long, env = "DARE_ABILITY_MEAN")]
    ability_mean: Option<f64>,
    #[arg(long, env = "DARE_ABILITY_VARIANCE")]
    ability_variance: Option<f64>,
    #[arg(long, env = "DARE_DIFFICULTY_MEAN")]
    difficulty_mean: Option<f64>,
    #[arg(long, env = "DARE_DIFFICULTY_VARIANCE")]
    difficulty_variance: Option<f64>,
    /// Shape of the Gamma prior on question precision.
    #[arg(long, env = "DARE_PRECISION_SHAPE")]
    precision_shape: Option<f64>,
    /// Scale of the Gamma prior on question precision.
    #[arg(long, env = "DARE_PRECISION_SCALE")]
    precision_scale: Option<f64>,
    /// `learned` or `fixed:<precision>`.
    #[arg(long, env = "DARE_DISCRIMINATION", value_parser = parse_discrimination)]
    discrimination: Option<DiscriminationMode>,
    #[arg(long)]
    ep_max_sweeps: Option<usize>,
    #[arg(long)]
    ep_eps: Option<f64>,
    /// Weight of each new message, in (0, 1].
    #[arg(long)]
    ep_damping: Option<f64>,
    /// Quadrature nodes for a learned precision.
    #[arg(long)]
    ep_tau_nodes: Option<usize>,
}

fn parse_discrimination(s: &str) -> Result<DiscriminationMode, String> {
    if s == "learned" {
        return Ok(DiscriminationMode::Learned);
    }
    let value = s.strip_prefix("fixed:").ok_or_else(|| format!("expected `learned` or `fixed:<v>`, got `{s}`"))?;
    value.parse().map(DiscriminationMode::Fixed).map_err(|_| format!("`{value}` is not a number"))
}

impl ModelArgs {
    fn resolve(&self) -> Result<RunConfig, DareError> {
        let mut config = match &self.config {
            Some(path) => io::load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.priors {
            let text = fs::read_to_string(path).map_err(|e| DareError::Io(format!("{}: {e}", path.display())))?;
            config.priors = serde_json::from_str(&text).map_err(|e| DareError::Parse {
                line: e.line(),
                column: e.column(),
                message: format!("{}: {e}", path.display()),
            })?;
        }
        let p = &mut config.priors;
        let set = |target: &mut f64, value: Option<f64>| {
            if let Some(v) = value {
                *target = v;
            }
        };
        set(&mut p.ability.mean, self.ability_mean);
        set(&mut p.ability.variance, self.ability_variance);
        set(&mut p.difficulty.mean, self.difficulty_mean);
        set(&mut p.difficulty.variance, self.difficulty_variance);
        set(&mut p.precision.shape, self.precision_shape);
        set(&mut p.precision.scale, self.precision_scale);
        if let Some(mode) = self.discrimination {
            p.discrimination = mode;
        }
        let ep = &mut config.ep;
        if let Some(v) = self.ep_max_sweeps {
            ep.max_sweeps = v;
        }
        set(&mut ep.convergence_eps, self.ep_eps);
        set(&mut ep.damping, self.ep_damping);
        if let Some(v) = self.ep_tau_nodes {
            ep.tau_quadrature_nodes = v;
        }
        config.priors.validate()?;
        config.ep.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct DataArgs {
    /// CSV with header `participant_id,question_id,response`.
    #[arg(long)]
    responses: PathBuf,
    /// CSV with header `question_id,num_options[,display_text,option_texts...]`.
    #[arg(long)]
    questions: PathBuf,
    /// CSV with header `question_id,correct_option`.
    #[arg(long)]
    gold: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<LoadedDataset, DareError> {
        io::load_dataset(&FileManifest {
            responses: self.responses.clone(),
            questions: self.questions.clone(),
            gold: self.gold.clone(),
            ..Default::default()
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    QuestionOnly,
    ParticipantOnly,
}

impl From<VariantArg> for ModelVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => ModelVariant::Full,
            VariantArg::QuestionOnly => ModelVariant::QuestionOnly,
            VariantArg::ParticipantOnly => ModelVariant::ParticipantOnly,
        }
    }
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Posteriors JSON to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    variant: VariantArg,
    /// Also write per-cell posteriors.
    #[arg(long)]
    cells: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SynthShape {
    #[arg(long, default_value_t = 120)]
    participants: usize,
    #[arg(long = "num-questions", default_value_t = 60)]
    num_questions: usize,
    #[arg(long, default_value_t = 8)]
    options: usize,
    /// Fraction of cells observed.
    #[arg(long, default_value_t = 1.0)]
    density: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for responses.csv, questions.csv, gold.csv and truth.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    shape: SynthShape,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    CrowdCurve,
    GoldCurve,
    ScatterSkill,
    AdaptiveVsStatic,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(value_enum)]
    experiment: ExperimentArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Crowd sizes for the crowd curve.
    #[arg(long, value_delimiter = ',')]
    crowd_sizes: Option<Vec<usize>>,
    /// Revealed gold counts for the gold curve.
    #[arg(long, value_delimiter = ',')]
    reveal_counts: Option<Vec<usize>>,
    /// Test lengths for adaptive against static testing.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
    /// Crowd size for the gold curve.
    #[arg(long)]
    crowd_size: Option<usize>,
    /// Scatter only: show the model every gold answer.
    #[arg(long)]
    reveal_gold: bool,
    /// Use these files instead of a synthetic population (gold required).
    #[arg(long, requires_all = ["questions", "gold"])]
    responses: Option<PathBuf>,
    #[arg(long, requires = "responses")]
    questions: Option<PathBuf>,
    #[arg(long, requires = "responses")]
    gold: Option<PathBuf>,
    #[command(flatten)]
    shape: SynthShape,
    /// Write `<prefix>.summary.csv` and `<prefix>.rows.csv`.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct StaticArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    budget: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value = "dare-data")]
    data_dir: PathBuf,
    /// Calibrate a bank from the given dataset and store it under this id.
    #[arg(long, requires_all = ["responses", "questions", "gold"])]
    bank_id: Option<String>,
    #[arg(long, requires = "bank_id")]
    responses: Option<PathBuf>,
    #[arg(long, requires = "bank_id")]
    questions: Option<PathBuf>,
    #[arg(long, requires = "bank_id")]
    gold: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<DareError> for Failure {
    fn from(err: DareError) -> Self {
        match err {
            DareError::Io(_)
            | DareError::NegligibleEvidence(_)
            | DareError::SessionExhausted
            | DareError::Session(_)
            | DareError::UndefinedStatistic(_) => Failure::Runtime(err.to_string()),
            _ => Failure::Invalid(err.to_string()),
        }
    }
}

fn log_config(command: &str, value: serde_json::Value) {
    log::info!("{command} configuration: {value}");
}

fn infer(args: InferArgs) -> Result<(), Failure> {
    let config = args.model.resolve()?;
    let variant: ModelVariant = args.variant.into();
    log_config(
        "infer",
        serde_json::json!({
            "responses": args.data.responses, "questions": args.data.questions, "gold": args.data.gold,
            "out": args.out, "variant": variant, "cells": args.cells, "priors": config.priors, "ep": config.ep,
        }),
    );
    let LoadedDataset { data, gold } = args.data.load()?;
    let posteriors = infer_variant(&data, &gold, &config.priors, variant, &config.ep)?;
    io::save_posteriors(&PosteriorDocument::new(&posteriors, &data.questions, args.cells), &args.out)?;
    log::info!("wrote posteriors for {} questions and {} participants", data.questions.len(), data.participants.len());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let config = args.model.resolve()?;
    let synth = SynthConfig {
        num_participants: args.shape.participants,
        num_questions: args.shape.num_questions,
        num_options: args.shape.options,
        priors: config.priors,
        seed: args.seed,
        response_density: args.shape.density,
    };
    log_config("synth", serde_json::json!({ "out_dir": args.out_dir, "synth": synth }));
    let sampled = sample(&synth)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", args.out_dir.display())))?;
    let manifest = FileManifest {
        responses: args.out_dir.join("responses.csv"),
        questions: args.out_dir.join("questions.csv"),
        gold: Some(args.out_dir.join("gold.csv")),
        ..Default::default()
    };
    io::save_dataset(&sampled.data, &sampled.gold, &manifest)?;
    let truth = serde_json::json!({
        "participants": sampled.data.participants,
        "abilities": sampled.abilities,
        "questions": sampled.data.questions.iter().map(|q| &q.id).collect::<Vec<_>>(),
        "difficulties": sampled.difficulties,
        "precisions": sampled.precisions,
    });
    write_file(&args.out_dir.join("truth.json"), &(serde_json::to_string_pretty(&truth).expect("plain values") + "\n"))?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let config = args.model.resolve()?;
    let experiment = match args.experiment {
        ExperimentArg::CrowdCurve => Experiment::CrowdCurve,
        ExperimentArg::GoldCurve => Experiment::GoldCurve,
        ExperimentArg::ScatterSkill => Experiment::ScatterSkill,
        ExperimentArg::AdaptiveVsStatic => Experiment::AdaptiveVsStatic,
    };
    let mut spec = ExperimentSpec::new(experiment, args.seed);
    spec.priors = config.priors;
    spec.ep = config.ep;
    spec.source = match (&args.responses, &args.questions, &args.gold) {
        (Some(responses), Some(questions), Some(gold)) => {
            let manifest = FileManifest { responses: responses.clone(), questions: questions.clone(), gold: Some(gold.clone()), ..Default::default() };
            let LoadedDataset { data, gold } = io::load_dataset(&manifest)?;
            DataSource::Dataset { label: responses.display().to_string(), data, gold }
        }
        _ => DataSource::Synthetic(SynthConfig {
            num_participants: args.shape.participants,
            num_questions: args.shape.num_questions,
            num_options: args.shape.options,
            priors: config.priors,
            seed: args.seed,
            response_density: args.shape.density,
        }),
    };
    if let Some(r) = args.repetitions {
        spec.repetitions = r;
    }
    if let Some(c) = args.crowd_size {
        spec.crowd_size = c;
    }
    spec.reveal_gold = args.reveal_gold;
    let chosen = match experiment {
        Experiment::CrowdCurve => args.crowd_sizes,
        Experiment::GoldCurve => args.reveal_counts,
        Experiment::AdaptiveVsStatic => args.budgets,
        Experiment::ScatterSkill => None,
    };
    if let Some(settings) = chosen {
        spec.settings = settings;
    }
    log_config("eval", serde_json::to_value(&spec).expect("plain values"));
    let report = eval::run(&spec)?;
    let summary = io::summary_csv(&report)?;
    for note in &report.notes {
        log::warn!("{note}");
    }
    if let Some(prefix) = &args.out_prefix {
        let with_suffix = |suffix: &str| PathBuf::from(format!("{}{suffix}", prefix.display()));
        io::write_report(&report, &with_suffix(".summary.csv"), &with_suffix(".rows.csv"))?;
    }
    print!("{summary}");
    Ok(())
}

fn static_set(args: StaticArgs) -> Result<(), Failure> {
    log_config("static-set", serde_json::json!({ "responses": args.data.responses, "questions": args.data.questions, "gold": args.data.gold, "budget": args.budget }));
    let LoadedDataset { data, gold } = args.data.load()?;
    for id in static_question_set(&data, &gold, args.budget)? {
        println!("{id}");
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let config = args.model.resolve()?;
    log_config("serve", serde_json::json!({ "addr": args.addr, "data_dir": args.data_dir, "bank_id": args.bank_id, "priors": config.priors, "ep": config.ep }));
    let service = SessionService::open(&args.data_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    if let (Some(id), Some(responses), Some(questions), Some(gold)) = (&args.bank_id, args.responses, args.questions, args.gold) {
        let LoadedDataset { data, gold } = DataArgs { responses, questions, gold: Some(gold) }.load()?;
        let bank = SessionBank::calibrate(&data, &gold, &config.priors, &config.ep, None)?;
        service.put_bank(id, &BankDefinition::from_bank(&bank)).map_err(|e| Failure::Invalid(e.to_string()))?;
        log::info!("calibrated bank `{id}` with {} questions", bank.len());
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(dare_service::serve(Arc::new(service), args.addr)).map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let result = match cli.command {
        Command::Infer(a) => infer(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::StaticSet(a) => static_set(a),
        Command::Serve(a) => serve(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
