//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or domain failure (over budget,
//! degenerate architecture, IO), 2 usage or configuration error.
//!
//! Architecture arguments accept a file path or `builtin:NAME` for the
//! reference backbones (`builtin:initial`, `builtin:searched-m`, ...).

use crate::config::{parse_alpha, parse_resolution, Budget, ConfigError, Profile, Settings};
use crate::format::{self, FormatError};
use crate::log::TsvLog;
use crate::manifest::{Outputs, RunManifest};
use crate::parallel::ThreadPoolEvaluator;
use clap::{Parser, Subcommand, ValueEnum};
use entropynas_core::cost::cost_unchecked;
use entropynas_core::evolution::{search_with, Evaluator, IterationRecord, Population, SearchObserver, Sequential};
use entropynas_core::{zoo, ArchitectureSpec, MsepScorer, MsepWeights, Resolution, SearchError};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "entropynas", version, about = "Training-free backbone search guided by multi-scale entropy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the coarse-to-fine evolutionary search.
    Search(SearchArgs),
    /// Print per-stage entropies and the weighted score of an architecture.
    Score(ScoreArgs),
    /// Print FLOPs, parameters and depth of an architecture.
    Analyze(AnalyzeArgs),
    /// Write an architecture in the versioned exchange format.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Default,
    Toy,
}

#[derive(Debug, clap::Args)]
pub struct SearchArgs {
    /// TOML configuration file.
    #[arg(long, env = "ENTROPYNAS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Preset used when no configuration file is given.
    #[arg(long, value_enum, env = "ENTROPYNAS_PROFILE", conflicts_with = "config")]
    pub profile: Option<ProfileArg>,
    /// Output directory (overrides the configuration's output.dir).
    #[arg(long, env = "ENTROPYNAS_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "ENTROPYNAS_SEED")]
    pub seed: Option<u64>,
    /// Side of the square scoring input.
    #[arg(long, env = "ENTROPYNAS_RESOLUTION")]
    pub resolution: Option<usize>,
    /// Stage weights a1,a2,a3,a4,a5.
    #[arg(long, env = "ENTROPYNAS_ALPHA", value_parser = parse_alpha)]
    pub alpha: Option<[f64; 5]>,
    /// Absolute FLOPs ceiling (multiply-accumulates).
    #[arg(long, env = "ENTROPYNAS_FLOPS_BUDGET")]
    pub flops_budget: Option<u64>,
    #[arg(long, env = "ENTROPYNAS_PARAMS_BUDGET")]
    pub params_budget: Option<u64>,
    #[arg(long, env = "ENTROPYNAS_MAX_DEPTH")]
    pub max_depth: Option<usize>,
    #[arg(long, env = "ENTROPYNAS_POPULATION")]
    pub population: Option<usize>,
    #[arg(long, env = "ENTROPYNAS_ITERATIONS")]
    pub iterations: Option<usize>,
    /// Scoring threads; also the batch size unless the configuration sets one.
    #[arg(long, env = "ENTROPYNAS_JOBS", default_value_t = 1)]
    pub jobs: usize,
    /// No progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, clap::Args)]
pub struct ScoreArgs {
    /// Architecture file or builtin:NAME.
    pub arch: String,
    #[arg(long, env = "ENTROPYNAS_ALPHA", value_parser = parse_alpha, default_value = "0,0,1,1,6")]
    pub alpha: [f64; 5],
    #[arg(long, env = "ENTROPYNAS_RESOLUTION", default_value_t = 384)]
    pub resolution: usize,
    #[arg(long, env = "ENTROPYNAS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Forward passes averaged.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    /// Architecture file or builtin:NAME.
    pub arch: String,
    /// Input size as WIDTHxHEIGHT or a single side.
    #[arg(long, value_parser = parse_resolution, default_value = "1333x800")]
    pub resolution: Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
}

#[derive(Debug, clap::Args)]
pub struct ExportArgs {
    /// Architecture file or builtin:NAME.
    pub arch: String,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ExportFormat,
    /// Write here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn io_failure(what: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", what.display()))
}

/// Parses `args` (program name first) and runs the subcommand; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Search(a) => cmd_search(&a, stdout, stderr),
        Command::Score(a) => cmd_score(&a, stdout),
        Command::Analyze(a) => cmd_analyze(&a, stdout),
        Command::Export(a) => cmd_export(&a, stdout),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}

fn load_arch(source: &str) -> Result<ArchitectureSpec, Failure> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return zoo::by_name(name)
            .ok_or_else(|| Failure::Usage(format!("unknown builtin {name:?} (known: {})", zoo::NAMES.join(", "))));
    }
    format::read(Path::new(source)).map_err(|e| match e {
        FormatError::Io { .. } => Failure::Usage(e.to_string()),
        e => Failure::Usage(format!("{source}: {e}")),
    })
}

fn out(stdout: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), Failure> {
    stdout.write_fmt(text).map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}

fn cmd_score(a: &ScoreArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let arch = load_arch(&a.arch)?;
    arch.validate().map_err(|e| Failure::Usage(format!("{}: {e}", a.arch)))?;
    if a.repeats == 0 {
        return Err(Failure::Usage("--repeats must be positive".into()));
    }
    let weights = MsepWeights::new(a.alpha).map_err(|e| Failure::Usage(e.to_string()))?;
    let scorer = MsepScorer { repeats: a.repeats, ..MsepScorer::new(weights, Resolution::square(a.resolution)) };
    // Same stream as the search uses, so logged scores can be reproduced here.
    let stream = arch.structural_hash();
    let report = scorer.report(&arch, a.seed, stream).map_err(|e| match e {
        entropynas_core::ScoreError::Resolution(_) => Failure::Usage(e.to_string()),
        e => Failure::Runtime(e.to_string()),
    })?;
    let alpha: Vec<String> = a.alpha.iter().map(f64::to_string).collect();
    let mut text = format!(
        "arch\t{}\nresolution\t{}\nseed\t{}\nstream\t{stream:016x}\nrepeats\t{}\nalpha\t{}\n",
        a.arch,
        scorer.resolution,
        a.seed,
        a.repeats,
        alpha.join(",")
    );
    for (i, h) in report.stage_entropy.iter().enumerate() {
        text += &format!("H(C{})\t{h}\n", i + 1);
    }
    text += &format!("score\t{}\n", report.score);
    out(stdout, format_args!("{text}"))
}

fn cmd_analyze(a: &AnalyzeArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let arch = load_arch(&a.arch)?;
    let cost = cost_unchecked(&arch, a.resolution);
    let stages = arch.blocks.iter().filter(|b| b.stride == 2).count();
    let valid = match arch.validate() {
        Ok(()) => "yes".to_string(),
        Err(e) => format!("no ({e})"),
    };
    out(
        stdout,
        format_args!(
            "arch\t{}\nresolution\t{}\nflops\t{}\nflops_g\t{:.2}\nparams\t{}\nparams_m\t{:.2}\ndepth\t{}\nstages\t{stages}\nvalid\t{valid}\n",
            a.arch,
            a.resolution,
            cost.flops,
            cost.flops as f64 / 1e9,
            cost.params,
            cost.params as f64 / 1e6,
            cost.depth,
        ),
    )
}

fn cmd_export(a: &ExportArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let arch = load_arch(&a.arch)?;
    let text = match a.format {
        ExportFormat::Json => format::serialize(&arch),
    };
    match &a.output {
        Some(path) => std::fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => out(stdout, format_args!("{text}")),
    }
}

/// Writes the TSV log and, every tenth of the run, a progress line.
struct RunObserver<'a, W: Write> {
    log: TsvLog<W>,
    progress: Option<&'a mut dyn Write>,
    total: usize,
}

impl<W: Write> SearchObserver for RunObserver<'_, W> {
    fn on_iteration(&mut self, record: &IterationRecord, population: &Population) {
        self.log.on_iteration(record, population);
        if let Some(p) = self.progress.as_mut() {
            let step = (self.total / 10).max(1);
            if record.iteration % step == 0 || record.iteration == self.total {
                let _ = writeln!(
                    p,
                    "[{}/{}] {} population {} best {}",
                    record.iteration,
                    self.total,
                    record.phase.name(),
                    record.population_size,
                    record.population_max
                );
            }
        }
    }

    fn on_phase_switch(&mut self, before: &Population, after: &Population) {
        if let Some(p) = self.progress.as_mut() {
            let _ = writeln!(p, "switching to fine mutation: kept {} of {}", after.len(), before.len());
        }
    }
}

fn settings_for(a: &SearchArgs) -> Result<Settings, Failure> {
    let mut s = match &a.config {
        Some(path) => Settings::load(path)?,
        None => Settings::profile(match a.profile {
            Some(ProfileArg::Toy) => Profile::Toy,
            _ => Profile::Default,
        }),
    };
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.resolution {
        s.score_resolution = v;
    }
    if let Some(v) = a.alpha {
        s.alpha = v;
    }
    if let Some(v) = a.flops_budget {
        s.flops = Budget::Absolute(v);
    }
    if let Some(v) = a.params_budget {
        s.params = Some(Budget::Absolute(v));
    }
    if let Some(v) = a.max_depth {
        s.max_depth = v;
    }
    if let Some(v) = a.population {
        s.population = v;
    }
    if let Some(v) = a.iterations {
        s.iterations = v;
    }
    if let Some(dir) = &a.out {
        s.output_dir = Some(dir.clone());
    }
    Ok(s)
}

fn cmd_search(a: &SearchArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    if a.jobs == 0 {
        return Err(Failure::Usage("--jobs must be positive".into()));
    }
    let settings = settings_for(a)?;
    let config = settings.to_search_config(a.jobs)?;
    let dir = settings.output_dir.clone().unwrap_or_else(|| PathBuf::from("entropynas-run"));
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let best_path = dir.join("best.json");
    let log_path = dir.join("search.tsv");
    let manifest_path = dir.join("manifest.json");

    let log_file = File::create(&log_path).map_err(|e| io_failure(&log_path, e))?;
    let log = TsvLog::new(BufWriter::new(log_file)).map_err(|e| io_failure(&log_path, e))?;
    let mut observer =
        RunObserver { log, progress: if a.quiet { None } else { Some(stderr) }, total: config.iterations };
    let evaluator: Box<dyn Evaluator> = if a.jobs > 1 {
        Box::new(ThreadPoolEvaluator::new(a.jobs).map_err(|e| Failure::Runtime(e.to_string()))?)
    } else {
        Box::new(Sequential)
    };

    let started = Instant::now();
    let result = search_with(&config, &config.scorer(), evaluator.as_ref(), &mut observer).map_err(|e| match e {
        SearchError::InvalidConfig(_) | SearchError::InitialInvalid(_) => Failure::Usage(e.to_string()),
        e => Failure::Runtime(e.to_string()),
    })?;
    let elapsed = started.elapsed().as_secs_f64();
    observer.log.finish().map_err(|e| io_failure(&log_path, e))?;

    std::fs::write(&best_path, format::serialize(&result.best_arch)).map_err(|e| io_failure(&best_path, e))?;
    let outputs = Outputs {
        best_arch: best_path.display().to_string(),
        log: log_path.display().to_string(),
        manifest: manifest_path.display().to_string(),
    };
    let mut manifest = RunManifest::new(&config, result.best_score, result.best_cost, result.initial_score, outputs);
    manifest.wall_clock_seconds = elapsed;
    std::fs::write(&manifest_path, manifest.to_json()).map_err(|e| io_failure(&manifest_path, e))?;

    out(
        stdout,
        format_args!(
            "initial_score\t{}\nbest_score\t{}\nflops\t{}\nparams\t{}\ndepth\t{}\nbest_arch\t{}\nlog\t{}\nmanifest\t{}\n",
            result.initial_score,
            result.best_score,
            result.best_cost.flops,
            result.best_cost.params,
            result.best_cost.depth,
            best_path.display(),
            log_path.display(),
            manifest_path.display()
        ),
    )
}
