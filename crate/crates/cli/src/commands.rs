use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use entangle_core::audit::{run_audit, Level};
use entangle_core::bei::{AuditConfig, TestMode, DEFAULT_REPLICATES};
use entangle_core::bias::bias_report;
use entangle_core::cig::write_events_jsonl;
use entangle_core::difficulty::FitConfig;
use entangle_core::ensemble::{
    competence, compare_strategies, grid_search, EnsembleInputs, HyperGrid, Hyperparams,
};
use entangle_core::ingest::{load_judgments, load_responses, validate_dataset, Format};
use entangle_core::pairs::Alternative;
use entangle_core::synthgen::{
    generate_judgments, generate_responses, split_by_task_parity, Preset, SynthConfig,
};

use crate::graph::DependencyGraph;
use crate::output;
use crate::report::{content_hash, AuditReport};

#[derive(Debug, Parser)]
#[command(name = "entangle", version, about = "Audit behavioral entanglement among models and verifiers")]
pub struct Cli {
    /// Worker threads for pair-parallel audits; results do not depend on it.
    #[arg(long, global = true, env = "ENTANGLE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every model pair with BEI and/or CIG and test significance.
    Audit(AuditArgs),
    /// Relate judges' precision gaps to audited entanglement.
    Bias(BiasArgs),
    /// Compare majority, accuracy and entanglement-aware verifier aggregation.
    Ensemble(EnsembleArgs),
    /// Generate synthetic responses and judgments with planted structure.
    Synth(SynthArgs),
    /// Check a response file and summarise its shape.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Bei,
    Cig,
    Both,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Bei => Level::Bei,
            LevelArg::Cig => Level::Cig,
            LevelArg::Both => Level::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Md,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphFormat {
    Dot,
    Json,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub responses: PathBuf,
    /// Input format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,
    #[arg(long, value_enum, default_value = "both")]
    pub level: LevelArg,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub replicates: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Benjamini–Hochberg adjustment across pairs (the default).
    #[arg(long, overrides_with = "no_bh")]
    pub bh: bool,
    #[arg(long, overrides_with = "bh")]
    pub no_bh: bool,
    #[arg(long)]
    pub two_sided: bool,
    /// BEI test mode; `auto` enumerates exactly for up to 20 tasks.
    #[arg(long, value_enum, default_value = "auto")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    pub graph: GraphFormat,
    /// Graph destination; defaults to `entanglement.dot` or `entanglement.graph.json`
    /// next to `--out`.
    #[arg(long)]
    pub graph_out: Option<PathBuf>,
    /// Write every CIG collision event as JSONL.
    #[arg(long)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Md,
    Json,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[arg(long)]
    pub judgments: PathBuf,
    /// JSON report from `audit`.
    #[arg(long)]
    pub report: PathBuf,
    /// Responses the report was computed from, checked against its hash.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Add one correlation over all judges.
    #[arg(long)]
    pub pooled: bool,
    #[arg(long, value_enum, default_value = "md")]
    pub format: TableFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricsFormat {
    Csv,
    Md,
    Json,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Judgments to aggregate and score.
    #[arg(long)]
    pub judgments: PathBuf,
    /// JSON report from `audit --level both`.
    #[arg(long)]
    pub report: PathBuf,
    /// Held-out judgments for verifier competence (and grid search).
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta2: f64,
    /// Significance level for admitting pair scores; defaults to the report's.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Use every pair score, significant or not.
    #[arg(long)]
    pub raw_scores: bool,
    /// Tune lambda1, kappa, eta1 and eta2 on the calibration judgments.
    #[arg(long)]
    pub grid_search: bool,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: MetricsFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-(target, verifier) weight table as CSV.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Null,
    BeiPair,
    CigPair,
    Level1Only,
    JudgePanel,
    VerifierClique,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Null => Preset::Null,
            PresetArg::BeiPair => Preset::BeiPair,
            PresetArg::CigPair => Preset::CigPair,
            PresetArg::Level1Only => Preset::Level1Only,
            PresetArg::JudgePanel => Preset::JudgePanel,
            PresetArg::VerifierClique => Preset::VerifierClique,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<PresetArg>,
    /// JSON generator config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the preset or config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the task count.
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building thread pool")?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Audit(a) => cmd_audit(&a),
        Command::Bias(a) => cmd_bias(&a),
        Command::Ensemble(a) => cmd_ensemble(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Validate(a) => cmd_validate(&a),
    }
}

fn response_format(path: &Path, explicit: Option<InputFormat>) -> Format {
    match explicit {
        Some(InputFormat::Jsonl) => Format::Jsonl,
        Some(InputFormat::Csv) => Format::Csv,
        None => Format::from_path(path),
    }
}

pub fn cmd_audit(args: &AuditArgs) -> Result<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        bail!("--alpha must lie in (0, 1), got {}", args.alpha);
    }
    let bytes = fs::read(&args.responses)
        .with_context(|| format!("reading {}", args.responses.display()))?;
    let ds = load_responses(&args.responses, response_format(&args.responses, args.input_format))
        .with_context(|| format!("loading {}", args.responses.display()))?;
    let level = Level::from(args.level);
    let cfg = AuditConfig {
        replicates: args.replicates,
        seed: args.seed,
        mode: match args.mode {
            ModeArg::Auto => TestMode::Auto,
            ModeArg::Exact => TestMode::Exact,
            ModeArg::MonteCarlo => TestMode::MonteCarlo,
        },
        alternative: if args.two_sided {
            Alternative::TwoSided
        } else {
            Alternative::Greater
        },
        bh: !args.no_bh,
    };
    let outcome = run_audit(&ds, level, &cfg, &FitConfig::default())?;
    let report = AuditReport::new(&ds, content_hash(&bytes), &outcome, &cfg, args.alpha, level);

    match args.format {
        ReportFormat::Json => output::emit(args.out.as_deref(), &report.to_json()?)?,
        ReportFormat::Md => output::emit(args.out.as_deref(), &report.to_markdown())?,
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            output::emit(args.out.as_deref(), &String::from_utf8(buf)?)?;
        }
    }

    if args.graph != GraphFormat::None {
        let graph = DependencyGraph::from_report(&report);
        let (body, default_name) = match args.graph {
            GraphFormat::Dot => (graph.to_dot(), "entanglement.dot"),
            _ => (graph.to_json()?, "entanglement.graph.json"),
        };
        let path = args.graph_out.clone().unwrap_or_else(|| {
            args.out
                .as_deref()
                .and_then(Path::parent)
                .unwrap_or(Path::new("."))
                .join(default_name)
        });
        output::emit(Some(&path), &body)?;
    }

    if let Some(path) = &args.events {
        let Some(rows) = &outcome.cig else {
            bail!("--events needs --level cig or both");
        };
        let mut buf = Vec::new();
        for (_, events) in rows {
            write_events_jsonl(events, &mut buf)?;
        }
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn cmd_bias(args: &BiasArgs) -> Result<()> {
    let report = AuditReport::read(&args.report)?;
    if let Some(path) = &args.responses {
        let hash = content_hash(&fs::read(path).with_context(|| format!("reading {}", path.display()))?);
        if hash != report.metadata.dataset_hash {
            bail!(
                "{} does not match the dataset the report was computed from",
                path.display()
            );
        }
    }
    let js = load_judgments(&args.judgments)
        .with_context(|| format!("loading {}", args.judgments.display()))?;
    let bei = report.bei_scores()?;
    let cig = report.cig.as_ref().map(|_| report.cig_scores()).transpose()?.unwrap_or_default();
    let result = bias_report(&js, &bei, &cig, args.pooled);
    let body = match args.format {
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(&result)?;
            s.push('\n');
            s
        }
        TableFormat::Md => output::bias_markdown(&result),
    };
    output::emit(args.out.as_deref(), &body)
}

pub fn cmd_ensemble(args: &EnsembleArgs) -> Result<()> {
    let report = AuditReport::read(&args.report)?;
    let (Some(bei), Some(cig)) = (&report.bei, &report.cig) else {
        bail!("ensemble weighting needs a report with both BEI and CIG tables (--level both)");
    };
    let js = load_judgments(&args.judgments)
        .with_context(|| format!("loading {}", args.judgments.display()))?;
    let cal = load_judgments(&args.calibration)
        .with_context(|| format!("loading {}", args.calibration.display()))?;
    let verifiers = js.judges();
    let q = competence(&cal, &verifiers)?;
    let targets = js.models();
    let inputs = EnsembleInputs {
        bei,
        cig,
        alpha: args.alpha.unwrap_or(report.metadata.alpha),
        significant_only: !args.raw_scores,
        verifiers: &verifiers,
        competence: &q,
        targets: &targets,
    };
    let hp = if args.grid_search {
        let cal_targets = cal.models();
        let cal_inputs = EnsembleInputs {
            targets: &cal_targets,
            ..inputs.clone()
        };
        grid_search(&cal, &cal_inputs, &HyperGrid::default())?.0
    } else {
        Hyperparams {
            lambda1: args.lambda1,
            kappa: args.kappa,
            eta1: args.eta1,
            eta2: args.eta2,
        }
    };
    let comparison = compare_strategies(&js, &inputs, &hp)?;

    let body = match args.format {
        MetricsFormat::Csv => output::metrics_csv(&comparison)?,
        MetricsFormat::Md => output::metrics_markdown(&comparison),
        MetricsFormat::Json => {
            let mut s = serde_json::to_string_pretty(&output::MetricsDocument::new(&comparison))?;
            s.push('\n');
            s
        }
    };
    output::emit(args.out.as_deref(), &body)?;
    if let Some(path) = &args.weights_out {
        output::emit(Some(path), &output::weights_csv(&comparison)?)?;
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match (&args.preset, &args.config) {
        (Some(p), None) => Preset::from(*p).config(args.seed.unwrap_or(0)),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        _ => bail!("pass exactly one of --preset or --config"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(tasks) = args.tasks {
        cfg.n_tasks = tasks;
    }
    let (ds, truth) = generate_responses(&cfg)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = args.out_dir.join(name);
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))
    };
    write("responses.jsonl", &|b| Ok(ds.write_jsonl(b)?))?;
    write("truth.json", &|b| {
        serde_json::to_writer_pretty(&mut *b, &truth)?;
        b.write_all(b"\n")?;
        Ok(())
    })?;
    if cfg.judges.is_some() {
        let js = generate_judgments(&cfg, &ds)?;
        let (cal, eval) = split_by_task_parity(&js, &ds);
        write("judgments.jsonl", &|b| Ok(js.write_jsonl(b)?))?;
        write("calibration.jsonl", &|b| Ok(cal.write_jsonl(b)?))?;
        write("evaluation.jsonl", &|b| Ok(eval.write_jsonl(b)?))?;
    }
    Ok(())
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let ds = load_responses(&args.responses, response_format(&args.responses, args.input_format))
        .with_context(|| format!("loading {}", args.responses.display()))?;
    let v = validate_dataset(&ds);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    output::emit(None, &s)?;
    if !v.is_clean() {
        bail!("{} task(s) failed validation", v.issues.len());
    }
    Ok(())
}
