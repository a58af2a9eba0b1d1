//! `inoc`: run the detection / inoculation / assessment pipeline from the
//! command line. Single-text commands (detect, defend, score) work on one
//! input; experiment commands (run, evaluate, assess-sem, assess-ate)
//! work on a config file and its output directory.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use inoc_core::gateway::mock::{MockScript, MockServer};
use inoc_core::gateway::{Gateway, ModelRoute, RouteTable};
use inoc_core::runner::{
    assess, build_causal_dataset, fit_structure, load_dataset, load_run_log, run_experiment,
    sweep_outcomes, write_assess_reports, ExperimentConfig, TreatmentAxis, RUNS_FILE_NAME,
};
use inoc_core::sec::ScorerRegistry;
use inoc_core::taxonomy::Taxonomy;
use inoc_core::{
    detection_score, export_dag_json, export_edges_csv, export_sweep_csv, export_sweep_json,
    format_detection, GoldLabel,
};

#[derive(Parser)]
#[command(name = "inoc", version, about = "Persuasion-attack detection, content inoculation, and causal effect assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label persuasion techniques in one text
    Detect(DetectArgs),
    /// Detect, then rewrite the text to neutralize what was found
    Defend(DefendArgs),
    /// Compute the stylistic-emotional signature of one text
    Score(ScoreArgs),
    /// Rebuild evaluation tables from a finished experiment
    Evaluate(ExperimentArgs),
    /// Fit the structural edge model over a finished experiment
    AssessSem(AssessArgs),
    /// Estimate per-treatment effects over a finished experiment
    AssessAte(AssessArgs),
    /// Execute the full grid from a config file
    Run(ExperimentArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// Experiment config file (TOML)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override the configured output directory
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Override the configured worker count
    #[arg(long)]
    parallelism: Option<usize>,
    /// Override the configured random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Serve every model from a local deterministic mock endpoint
    #[arg(long)]
    mock: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args)]
struct AssessArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Treatment axis, overriding the configured one
    #[arg(long, value_name = "llm|attack")]
    axis: Option<String>,
}

#[derive(Args)]
struct TextInput {
    /// Read the text from this file ("-" for stdin)
    #[arg(long, value_name = "FILE", conflicts_with = "text")]
    input: Option<PathBuf>,
    /// The text itself
    #[arg(long)]
    text: Option<String>,
    /// Document id used in outputs
    #[arg(long, default_value = "doc")]
    id: String,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[command(flatten)]
    text: TextInput,
    /// Model to query (default: first configured model)
    #[arg(long)]
    model: Option<String>,
    /// Prompt strategy code: 0, d0, s0, or d0s0
    #[arg(long, default_value = "0")]
    strategy: String,
    /// Sampling temperature
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Print the full parsed result as JSON instead of the label list
    #[arg(long)]
    json: bool,
    /// Gold attack-type names to score the detection against
    #[arg(long = "gold", value_name = "NAME")]
    gold: Vec<String>,
}

#[derive(Args)]
struct DefendArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[command(flatten)]
    text: TextInput,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "0")]
    strategy: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Print detection, rewrite, and both signatures as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    text: TextInput,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    if let Err(error) = run(Cli::parse()) {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect(args) => cmd_detect(args),
        Command::Defend(args) => cmd_defend(args),
        Command::Score(args) => cmd_score(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::AssessSem(args) => cmd_assess_sem(args),
        Command::AssessAte(args) => cmd_assess_ate(args),
        Command::Run(args) => cmd_run(args),
    }
}

/// Load the config, apply CLI overrides, and start the mock endpoint when
/// asked. The server must stay alive while the command runs.
fn prepare_config(common: &CommonConfig) -> Result<(ExperimentConfig, Option<MockServer>)> {
    let mut config = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(dir) = &common.out_dir {
        config.output_dir = dir.clone();
    }
    if let Some(parallelism) = common.parallelism {
        config.parallelism = parallelism;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let server = if common.mock {
        let server = MockServer::start(MockScript::default());
        let base_url = server.base_url();
        for model in &config.models {
            if !config.routes.iter().any(|r| &r.model_id == model) {
                config.routes.push(ModelRoute {
                    model_id: model.clone(),
                    base_url: base_url.clone(),
                    api_key_env: String::new(),
                    default_temperature: 0.0,
                });
            }
        }
        config.rebase_routes(&base_url);
        Some(server)
    } else {
        None
    };
    config.validate()?;
    Ok((config, server))
}

fn read_text(input: &TextInput) -> Result<String> {
    match (&input.input, &input.text) {
        (None, Some(text)) => Ok(text.clone()),
        (Some(path), None) if path.as_os_str() == "-" => {
            let mut buffer = String::new();
            std::io::stdin().read_to_string(&mut buffer)?;
            Ok(buffer)
        }
        (Some(path), None) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display())),
        (None, None) => bail!("provide the text with --text or --input"),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    }
}

fn gateway_for(config: &ExperimentConfig) -> Result<Gateway> {
    let routes = RouteTable::new(config.routes.clone())?;
    Ok(Gateway::new(routes, config.gateway.clone()))
}

fn pick_model(config: &ExperimentConfig, requested: &Option<String>) -> Result<String> {
    match requested {
        Some(model) => {
            if !config.models.contains(model) {
                bail!("model {model:?} is not in the config");
            }
            Ok(model.clone())
        }
        None => Ok(config.models[0].clone()),
    }
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let (config, _server) = prepare_config(&args.common)?;
    let taxonomy = Taxonomy::builtin();
    let text = read_text(&args.text)?;
    let model = pick_model(&config, &args.model)?;
    let strategy = inoc_core::prompt::PromptStrategy::from_code(&args.strategy)
        .with_context(|| format!("unknown strategy code {:?}", args.strategy))?;
    let gateway = gateway_for(&config)?;

    let detection = inoc_core::detect(
        &gateway,
        taxonomy,
        &args.text.id,
        &text,
        &model,
        strategy,
        args.temperature,
        config.max_tokens,
    )?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&detection)?);
    } else {
        println!("{}", format_detection(&detection.predicted));
        for fragment in &detection.unparsed_fragments {
            log::warn!("unparsed: {fragment}");
        }
    }
    if !args.gold.is_empty() {
        let gold = GoldLabel::new(taxonomy, args.text.id.clone(), &args.gold)?;
        println!("detection_score: {}", detection_score(&detection, &gold)?);
    }
    Ok(())
}

fn cmd_defend(args: DefendArgs) -> Result<()> {
    let (config, _server) = prepare_config(&args.common)?;
    let taxonomy = Taxonomy::builtin();
    let text = read_text(&args.text)?;
    let model = pick_model(&config, &args.model)?;
    let strategy = inoc_core::prompt::PromptStrategy::from_code(&args.strategy)
        .with_context(|| format!("unknown strategy code {:?}", args.strategy))?;
    let gateway = gateway_for(&config)?;

    let detection = inoc_core::detect(
        &gateway,
        taxonomy,
        &args.text.id,
        &text,
        &model,
        strategy,
        args.temperature,
        config.max_tokens,
    )?;
    let defense = inoc_core::defend(
        &gateway,
        taxonomy,
        &args.text.id,
        &text,
        &detection,
        &model,
        args.temperature,
        config.max_tokens,
    )?;
    if args.json {
        let registry = ScorerRegistry::with_builtin_lexicon();
        let report = serde_json::json!({
            "detection": detection,
            "inoculated_text": defense.inoculated_text,
            "attack_sec": registry.score_text(&format!("{}:attack", args.text.id), &text)?,
            "inoculated_sec": registry.score_text(
                &format!("{}:inoculated", args.text.id),
                &defense.inoculated_text,
            )?,
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{}", defense.inoculated_text);
    }
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let text = read_text(&args.text)?;
    let registry = ScorerRegistry::with_builtin_lexicon();
    let signature = registry.score_text(&args.text.id, &text)?;
    println!("{}", serde_json::to_string_pretty(&signature)?);
    Ok(())
}

fn cmd_run(args: ExperimentArgs) -> Result<()> {
    let (config, _server) = prepare_config(&args.common)?;
    let outcome = run_experiment(&config)?;
    println!(
        "grid: {} cells, {} executed now, {} failed",
        outcome.records.len(),
        outcome.new_runs,
        outcome.records.iter().filter(|r| r.error.is_some()).count()
    );
    for table in &outcome.tables {
        println!(
            "group {}: macro_f1 {:.4}, micro_f1 {:.4}",
            table.group, table.macro_f1, table.micro_f1
        );
    }

    let articles = load_dataset(&config.dataset)?;
    let build = build_causal_dataset(
        &outcome.records,
        &articles,
        config.assessor.treatment_axis,
    )?;
    for dropped in &build.dropped_columns {
        log::warn!("column {dropped:?} was constant and left out of the causal dataset");
    }
    let report = assess(&build.dataset, &config.assessor, config.seed)?;
    let assess_hashes = write_assess_reports(&config.output_dir, &report)?;

    let mut manifest: BTreeMap<String, String> = outcome.artifact_hashes.clone();
    manifest.extend(assess_hashes);
    std::fs::write(
        config.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    println!(
        "structural edges: {} ({})",
        report.dag.edges.len(),
        if report.dag.converged {
            "converged"
        } else {
            "best iterate"
        }
    );
    for pair in &report.summary {
        match pair.ate {
            Some(ate) => println!(
                "effect {} -> {}: sem {:.4}, ate {:.4} [{:.4}, {:.4}]",
                pair.treatment,
                pair.outcome,
                pair.sem_weight,
                ate,
                pair.ci_low.unwrap_or(f64::NAN),
                pair.ci_high.unwrap_or(f64::NAN),
            ),
            None => println!(
                "effect {} -> {}: sem {:.4}, estimate failed: {}",
                pair.treatment,
                pair.outcome,
                pair.sem_weight,
                pair.error.as_deref().unwrap_or("unknown"),
            ),
        }
    }
    println!("artifacts in {}", config.output_dir.display());
    Ok(())
}

/// Records and articles of a finished experiment, for the offline
/// commands.
fn load_finished(config: &ExperimentConfig) -> Result<(Vec<inoc_core::RunRecord>, Vec<inoc_core::ArticleRecord>)> {
    let runs_path = config.output_dir.join(RUNS_FILE_NAME);
    if !runs_path.exists() {
        bail!(
            "no run log at {}; run the experiment first",
            runs_path.display()
        );
    }
    let records = load_run_log(&runs_path)?;
    let articles = load_dataset(&config.dataset)?;
    Ok((records, articles))
}

fn cmd_evaluate(args: ExperimentArgs) -> Result<()> {
    let (config, _server) = prepare_config(&args.common)?;
    let (records, articles) = load_finished(&config)?;
    let taxonomy = Taxonomy::builtin();
    let gold = articles
        .iter()
        .map(|a| GoldLabel::new(taxonomy, a.id.clone(), &a.attack_types).map(|g| (a.id.as_str(), g)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let (tables, _comparisons) =
        inoc_core::runner::experiment::evaluate_records(taxonomy, &records, &gold)?;
    if tables.is_empty() {
        bail!("the run log holds no successful detections");
    }
    let mut csv = Vec::new();
    inoc_core::export_f1_csv(&tables, &mut csv)?;
    print!("{}", String::from_utf8(csv)?);
    for table in &tables {
        eprintln!(
            "group {}: macro_f1 {:.4}, micro_f1 {:.4}",
            table.group, table.macro_f1, table.micro_f1
        );
    }
    Ok(())
}

fn resolve_axis(config: &ExperimentConfig, flag: &Option<String>) -> Result<TreatmentAxis> {
    match flag.as_deref() {
        None => Ok(config.assessor.treatment_axis),
        Some("llm") => Ok(TreatmentAxis::Llm),
        Some("attack") => Ok(TreatmentAxis::Attack),
        Some(other) => bail!("unknown axis {other:?}; expected llm or attack"),
    }
}

fn built_dataset(args: &AssessArgs) -> Result<(ExperimentConfig, inoc_core::CausalDataset)> {
    let (config, _server) = prepare_config(&args.common)?;
    let (records, articles) = load_finished(&config)?;
    let axis = resolve_axis(&config, &args.axis)?;
    let build = build_causal_dataset(&records, &articles, axis)?;
    for dropped in &build.dropped_columns {
        log::warn!("column {dropped:?} was constant and left out of the causal dataset");
    }
    Ok((config, build.dataset))
}

fn cmd_assess_sem(args: AssessArgs) -> Result<()> {
    let (config, dataset) = built_dataset(&args)?;
    let dag = fit_structure(&dataset, &config.assessor)?;

    write_artifact(&config.output_dir, "sem_report.json", export_dag_json(&dag).as_bytes())?;
    let mut csv = Vec::new();
    export_edges_csv(&dag, &mut csv)?;
    write_artifact(&config.output_dir, "sem_edges.csv", &csv)?;

    print!("{}", String::from_utf8(csv)?);
    if !dag.converged {
        log::warn!("structure fit did not converge; edges come from its best iterate");
    }
    Ok(())
}

fn cmd_assess_ate(args: AssessArgs) -> Result<()> {
    let (config, dataset) = built_dataset(&args)?;
    let seed = config.seed;
    let (_outcomes, sweeps) = sweep_outcomes(&dataset, &config.assessor, seed)?;

    write_artifact(
        &config.output_dir,
        "ate_report.json",
        export_sweep_json(&sweeps).as_bytes(),
    )?;
    let mut csv = Vec::new();
    export_sweep_csv(&sweeps, &mut csv)?;
    write_artifact(&config.output_dir, "ate_sweep.csv", &csv)?;

    print!("{}", String::from_utf8(csv)?);
    Ok(())
}

fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), bytes)
        .with_context(|| format!("writing {}", dir.join(name).display()))?;
    Ok(())
}
