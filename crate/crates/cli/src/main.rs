use clap::{Parser, Subcommand, ValueEnum};
use dvfcast_cli::{ExperimentConfig, Pipeline, PipelineError, Result, RunSpec};
use dvfcast_core::model::Mode;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "dvfcast", version, about = "Forecast weekly deformation fields from a prefix of scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment configuration; defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overwrite an existing cohort.
    #[arg(long, global = true)]
    force: bool,

    /// Restrict to one input representation.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,

    /// Restrict to runs with or without skip connections.
    #[arg(long, global = true, value_enum)]
    skip: Option<Switch>,

    /// Number of observed timepoints to predict from.
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write the phantom cohort.
    Generate,
    /// Search registration hyper-parameters on disjoint case subsets.
    Tune,
    /// Build slice sequences for training and prediction.
    Build,
    /// Train the selected runs.
    Train,
    /// Predict the remaining weeks of every test case.
    Predict,
    /// Score predictions and write the summary tables.
    Evaluate,
    /// Every stage in order.
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Dvf,
    Image,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Switch {
    On,
    Off,
}

fn pipeline(cli: &Cli) -> Result<Pipeline> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mode = cli.mode.map(|m| match m {
        ModeArg::Dvf => Mode::Dvf,
        ModeArg::Image => Mode::Image,
    });
    let skip = cli.skip.map(|s| matches!(s, Switch::On));
    let mut runs: Vec<RunSpec> = cfg
        .experiment
        .runs
        .iter()
        .copied()
        .filter(|r| mode.is_none_or(|m| r.mode == m) && skip.is_none_or(|s| r.skip == s))
        .collect();
    if runs.is_empty() {
        if let (Some(m), Some(s)) = (mode, skip) {
            runs.push(RunSpec::new(m, s));
        } else {
            return Err(PipelineError::Config("no configured run matches --mode/--skip".into()));
        }
    }
    if let Some(k) = cli.k {
        cfg.check_k(k)?;
    }
    let mut p = Pipeline::new(cfg, &cli.out);
    p.force = cli.force;
    p.runs = runs;
    p.k = cli.k;
    Ok(p)
}

fn modes(runs: &[RunSpec]) -> Vec<Mode> {
    let mut out = Vec::new();
    for r in runs {
        if !out.contains(&r.mode) {
            out.push(r.mode);
        }
    }
    out
}

fn run(cli: &Cli) -> Result<()> {
    let p = pipeline(cli)?;
    match cli.command {
        Command::Generate => p.generate(),
        Command::Tune => p.tune().map(|_| ()),
        Command::Build => modes(&p.runs).into_iter().try_for_each(|m| p.build(m)),
        Command::Train => p.runs.iter().try_for_each(|&r| p.train(r).map(|_| ())),
        Command::Predict => p.runs.iter().try_for_each(|&r| p.predict(r)),
        Command::Evaluate => p.runs.iter().try_for_each(|&r| p.evaluate(r)),
        Command::All => p.all(),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
