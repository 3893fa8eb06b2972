use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use skill_audit::audit::render_manifest;
use skill_audit::config::{ConfigError, RunConfig, VerifierKind};
use skill_audit::consolidation::PromotionMode;
use skill_audit::corpus_gen::{generate, sanitize_check, GenSpec};
use skill_audit::metrics::{compare_reports, compute_metrics, render_delta, table_header, table_row, MetricsReport};
use skill_audit::package::{load_corpus, load_package, validate_corpus, write_corpus, Label, PackageError};
use skill_audit::verification::{CachingVerifier, TranscriptLog};
use skill_audit::{Auditor, PipelineStage};

const EXIT_IO: u8 = 10;
const EXIT_CONFIG: u8 = 11;
const EXIT_INPUT: u8 = 12;
const EXIT_INTERNAL: u8 = 13;

#[derive(Parser)]
#[command(name = "skill-audit", version, about = "Static risk auditing for agent skill packages")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured verifier.
    #[arg(long, global = true, value_enum)]
    verifier: Option<VerifierArg>,
    /// Override the configured promotion mode.
    #[arg(long, global = true, value_enum)]
    promotion: Option<PromotionArg>,
    /// Worker threads for corpus runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifierArg {
    Stub,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum PromotionArg {
    Strict,
    Relaxed,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    ExtractOnly,
    Verify,
    Calibrate,
    Robust,
}

impl From<StageArg> for PipelineStage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::ExtractOnly => PipelineStage::ExtractOnly,
            StageArg::Verify => PipelineStage::Verify,
            StageArg::Calibrate => PipelineStage::Calibrate,
            StageArg::Robust => PipelineStage::Robust,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Audit one package directory. Exit status 0 benign, 1 suspicious, 2 malicious.
    Audit {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "robust")]
        stage: StageArg,
        /// Print the decision record as JSON instead of the text manifest.
        #[arg(long)]
        json: bool,
    },
    /// Run a labeled corpus and write decisions, metrics, and the verifier transcript.
    Eval {
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "robust")]
        stage: StageArg,
        /// Output directory (defaults to the configured output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus from a JSON spec, or the default fixture.
    Generate {
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two metrics.json files.
    Report {
        #[arg(long, num_args = 2, value_names = ["BEFORE", "AFTER"], required = true)]
        compare: Vec<PathBuf>,
    },
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn err(code: u8, message: impl fmt::Display) -> CliError {
    CliError {
        code,
        message: message.to_string(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| err(EXIT_IO, format!("{}: {e}", path.display()))
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = if matches!(e, ConfigError::Io { .. }) { EXIT_IO } else { EXIT_CONFIG };
        err(code, e)
    }
}

impl From<PackageError> for CliError {
    fn from(e: PackageError) -> Self {
        let code = if matches!(e, PackageError::Io { .. }) { EXIT_IO } else { EXIT_INPUT };
        err(code, e)
    }
}

fn run_config(g: &GlobalOpts) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.verifier {
        cfg.verifier.kind = match v {
            VerifierArg::Stub => VerifierKind::Stub,
            VerifierArg::Remote => VerifierKind::Remote,
        };
    }
    if let Some(p) = g.promotion {
        cfg.promotion_mode = match p {
            PromotionArg::Strict => PromotionMode::Strict,
            PromotionArg::Relaxed => PromotionMode::Relaxed,
        };
    }
    if let Some(j) = g.jobs {
        cfg.verifier.parallelism = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn label_exit(label: Label) -> u8 {
    match label {
        Label::Benign => 0,
        Label::Suspicious => 1,
        Label::Malicious => 2,
    }
}

fn cmd_audit(g: &GlobalOpts, dir: &Path, stage: PipelineStage, json: bool) -> Result<u8, CliError> {
    let cfg = run_config(g)?;
    let loaded = load_package(dir, &cfg.load_options()?)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let pack = cfg.role_pack()?;
    let verifier = cfg.build_verifier()?;
    let auditor = Auditor {
        pack: &pack,
        cfg: &cfg.thresholds,
        verifier: verifier.as_ref(),
        transcript: None,
    };
    let decision = auditor.audit_package(&loaded.package, stage);
    if json {
        let text = serde_json::to_string_pretty(&decision).map_err(|e| err(EXIT_INTERNAL, e))?;
        println!("{text}");
    } else {
        print!("{}", render_manifest(&decision));
    }
    Ok(label_exit(decision.label))
}

fn cmd_eval(g: &GlobalOpts, manifest: &Path, stage: PipelineStage, out: Option<PathBuf>) -> Result<u8, CliError> {
    let cfg = run_config(g)?;
    let out_dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let corpus = load_corpus(manifest, &cfg.load_options()?)?;
    validate_corpus(&corpus)?;
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let pack = cfg.role_pack()?;
    let verifier = CachingVerifier::new(cfg.build_verifier()?);
    let transcript_path = out_dir.join("transcript.jsonl");
    let transcript = TranscriptLog::create(&transcript_path).map_err(io_err(&transcript_path))?;
    let auditor = Auditor {
        pack: &pack,
        cfg: &cfg.thresholds,
        verifier: &verifier,
        transcript: Some(&transcript),
    };
    let run = auditor
        .audit_corpus(&corpus, stage, cfg.promotion_mode, cfg.verifier.parallelism)
        .map_err(|e| err(EXIT_INTERNAL, e))?;
    transcript.flush().map_err(io_err(&transcript_path))?;

    let decisions_path = out_dir.join("decisions.jsonl");
    let file = fs::File::create(&decisions_path).map_err(io_err(&decisions_path))?;
    let mut w = BufWriter::new(file);
    for d in &run.decisions {
        let line = serde_json::to_string(d).map_err(|e| err(EXIT_INTERNAL, e))?;
        writeln!(w, "{line}").map_err(io_err(&decisions_path))?;
    }
    w.flush().map_err(io_err(&decisions_path))?;

    let report = compute_metrics(&corpus, &run.labels()).map_err(|e| err(EXIT_INTERNAL, e))?;
    let metrics_path = out_dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| err(EXIT_INTERNAL, e))?;
    fs::write(&metrics_path, text + "\n").map_err(io_err(&metrics_path))?;

    let incidents = run.decisions.iter().filter(|d| d.incident.is_some()).count();
    eprintln!(
        "{} packages, {} promotions, {} verifier calls ({} cached), {} incidents",
        run.decisions.len(),
        run.promotions.len(),
        verifier.misses(),
        verifier.hits(),
        incidents
    );
    println!("{}", table_header());
    println!("{}", table_row(stage.as_str(), &report));
    Ok(0)
}

fn cmd_generate(spec: Option<&Path>, out: &Path) -> Result<u8, CliError> {
    let spec = match spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str::<GenSpec>(&text).map_err(|e| err(EXIT_INPUT, format!("{}: {e}", path.display())))?
        }
        None => GenSpec::default_fixture(),
    };
    let corpus = generate(&spec).map_err(|e| err(EXIT_INPUT, e))?;
    let violations = sanitize_check(&corpus);
    if let Some(v) = violations.first() {
        return Err(err(
            EXIT_INPUT,
            format!("{} sanitization violations, first: {}:{}:{} {}", violations.len(), v.package_id, v.path, v.line, v.detail),
        ));
    }
    let manifest = write_corpus(&corpus, out)?;
    eprintln!("wrote {} packages to {}", corpus.len(), manifest.display());
    Ok(0)
}

fn read_report(path: &Path) -> Result<MetricsReport, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| err(EXIT_INPUT, format!("{}: {e}", path.display())))
}

fn cmd_report(paths: &[PathBuf]) -> Result<u8, CliError> {
    let a = read_report(&paths[0])?;
    let b = read_report(&paths[1])?;
    let delta = compare_reports(&a, &b).map_err(|e| err(EXIT_INPUT, e))?;
    print!("{}", render_delta(&delta));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Audit { dir, stage, json } => cmd_audit(&cli.global, dir, (*stage).into(), *json),
        Command::Eval { manifest, stage, out } => cmd_eval(&cli.global, manifest, (*stage).into(), out.clone()),
        Command::Generate { spec, out } => cmd_generate(spec.as_deref(), out),
        Command::Report { compare } => cmd_report(compare),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
