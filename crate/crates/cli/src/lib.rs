//! Command-line runner: identity verification, tail estimation, bound
//! evaluation and full experiments driven by a TOML config.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use steinmd_core::config::{BuiltModel, ExperimentConfig, Format, MethodSpec, ModelSpec, VerifyMode, FunctionSet};
use steinmd_core::report::{self, BoundRow, VerifyBody};
use steinmd_core::tailmc::{self, TailRow};
use steinmd_core::{Error, McPlan, Mode, TestFunction, Theorem};

/// Comb models are estimated by plain Monte Carlo only, up to this `z`.
pub const COMB_Z_CAP: f64 = 3.5;

#[derive(Debug, Parser)]
#[command(name = "steinmd", version, about = "Stein-kernel checks and moderate-deviation experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true, env = "STEINMD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides `estimation.seed`.
    #[arg(long, global = true, env = "STEINMD_SEED")]
    pub seed: Option<u64>,
    /// Overrides `estimation.workers`.
    #[arg(long, global = true, env = "STEINMD_WORKERS")]
    pub workers: Option<usize>,
    /// Overrides `output.directory`.
    #[arg(long, global = true, env = "STEINMD_OUT")]
    pub out: Option<PathBuf>,
    /// Overrides `output.formats` with a single format.
    #[arg(long, global = true, value_enum, env = "STEINMD_FORMAT")]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Checks the Stein identity over the test-function library.
    VerifyIdentity,
    /// Estimates P(W > z) and the normal-tail ratio on the z grid.
    Tail,
    /// Evaluates the theorem envelope on the z grid.
    Bound,
    /// Runs verify, certify, tail, bound and envelope-fit stages.
    Experiment {
        /// Stop after the named stage, leaving a partial manifest.
        #[arg(long, value_enum)]
        stop_after: Option<Stage>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Verify,
    Certify,
    Tail,
    Bound,
    EnvelopeFit,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Verify, Stage::Certify, Stage::Tail, Stage::Bound, Stage::EnvelopeFit];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Verify => "verify",
            Stage::Certify => "certify",
            Stage::Tail => "tail",
            Stage::Bound => "bound",
            Stage::EnvelopeFit => "envelope_fit",
        }
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1.
    Usage(anyhow::Error),
    /// Exit 2.
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

pub type CmdResult = std::result::Result<String, Failure>;

/// Parses `args` and runs the command; never panics on bad input.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
    }
}

pub fn load_config(global: &GlobalArgs) -> std::result::Result<ExperimentConfig, Failure> {
    let path = global.config.as_ref().ok_or_else(|| Failure::Usage(anyhow!("--config is required")))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = global.seed {
        cfg.estimation.seed = s;
    }
    if let Some(w) = global.workers {
        cfg.estimation.workers = w;
    }
    if let Some(o) = &global.out {
        cfg.output.directory = o.clone();
    }
    if let Some(f) = global.format {
        cfg.output.formats = vec![match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }];
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> CmdResult {
    let cfg = load_config(&cli.global)?;
    match &cli.command {
        Command::VerifyIdentity => cmd_verify_identity(&cfg),
        Command::Tail => cmd_tail(&cfg),
        Command::Bound => cmd_bound(&cfg),
        Command::Experiment { stop_after } => cmd_experiment(&cfg, *stop_after),
    }
}

fn functions(cfg: &ExperimentConfig) -> Vec<TestFunction> {
    match cfg.verify.functions {
        FunctionSet::Stock => TestFunction::stock(),
        FunctionSet::Library => TestFunction::library(),
    }
}

fn verify_plan(cfg: &ExperimentConfig) -> McPlan {
    McPlan::new(cfg.verify.samples, cfg.estimation.seed).with_workers(cfg.estimation.workers).derived(1)
}

fn verify_body(cfg: &ExperimentConfig, spec: &ModelSpec, model: &BuiltModel, mode: Mode) -> steinmd_core::Result<VerifyBody> {
    let checks = steinmd_core::stein::verify_identity(model.as_model(), &functions(cfg), &mode)?;
    let pass = checks.iter().all(|c| c.pass);
    let mc = matches!(mode, Mode::MonteCarlo(_));
    Ok(VerifyBody {
        model_id: spec.id(),
        mode: mode.name().into(),
        samples: mc.then_some(cfg.verify.samples),
        seed: mc.then_some(cfg.estimation.seed),
        workers: mc.then_some(cfg.estimation.workers),
        checks,
        pass,
    })
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> std::result::Result<PathBuf, Failure> {
    let path = dir.join(name);
    report::write_atomic(&path, bytes)?;
    Ok(path)
}

/// Writes `verify.json`; exit 0 iff every check passes.
pub fn cmd_verify_identity(cfg: &ExperimentConfig) -> CmdResult {
    let model = cfg.model.build()?;
    let mode = match cfg.verify.mode {
        VerifyMode::Enumerate => Mode::Enumerate,
        VerifyMode::Mc => Mode::MonteCarlo(verify_plan(cfg)),
    };
    let body = verify_body(cfg, &cfg.model, &model, mode)?;
    let failed: Vec<String> = body.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    let path = write_out(&cfg.output.directory, "verify.json", &report::to_json(&report::verify_report(body))?)?;
    if failed.is_empty() {
        Ok(format!("all identity checks passed; report {}", path.display()))
    } else {
        Err(Failure::Verification(format!("{} (report {})", failed.join(", "), path.display())))
    }
}

/// Tail rows for one model on its grid, with envelope columns from the
/// configured theorem.
pub fn tail_rows(cfg: &ExperimentConfig, spec: &ModelSpec) -> std::result::Result<Vec<TailRow>, Failure> {
    let model = spec.build()?;
    let bound = cfg.bound.resolve(&model)?;
    let grid = cfg.estimation.grid(model.n());
    let comb = matches!(model, BuiltModel::Comb(_));
    if comb && grid.iter().any(|&z| z > COMB_Z_CAP) {
        return Err(Failure::Usage(anyhow!("comb models are estimated for z <= {COMB_Z_CAP} only")));
    }
    let plan = cfg.plan(2);
    let m = model.as_model();
    let method = match cfg.estimation.method {
        MethodSpec::Auto if m.linear_form().is_some() => MethodSpec::Tilt,
        MethodSpec::Auto => MethodSpec::Plain,
        other => other,
    };
    let estimates = match method {
        MethodSpec::Plain => tailmc::estimate_tail_plain_grid(m, &grid, &plan)?,
        MethodSpec::Tilt => grid.iter().map(|&z| tailmc::estimate_tail_tilt(m, z, &plan)).collect::<Result<_, _>>()?,
        MethodSpec::Exact => grid.iter().map(|&z| tailmc::exact_tail(m, z)).collect::<Result<_, _>>()?,
        MethodSpec::Auto => unreachable!("resolved above"),
    };
    let id = spec.id();
    estimates
        .iter()
        .map(|e| Ok(TailRow::new(&id, model.n(), e, &bound.envelope(e.z)?, cfg.estimation.seed)))
        .collect()
}

fn write_rows(
    cfg: &ExperimentConfig,
    stem: &str,
    csv: impl Fn() -> steinmd_core::Result<Vec<u8>>,
    json: impl Fn() -> steinmd_core::Result<Vec<u8>>,
) -> std::result::Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for f in &cfg.output.formats {
        out.push(match f {
            Format::Csv => write_out(&cfg.output.directory, &format!("{stem}.csv"), &csv()?)?,
            Format::Json => write_out(&cfg.output.directory, &format!("{stem}.json"), &json()?)?,
        });
    }
    Ok(out)
}

fn model_specs(cfg: &ExperimentConfig) -> Vec<ModelSpec> {
    match &cfg.experiment.sizes {
        Some(sizes) => sizes.iter().map(|&s| cfg.model.with_size(s)).collect(),
        None => vec![cfg.model.clone()],
    }
}

pub fn cmd_tail(cfg: &ExperimentConfig) -> CmdResult {
    let rows = tail_rows(cfg, &cfg.model)?;
    let flagged = rows.iter().filter(|r| !r.in_range).count();
    let paths = write_rows(cfg, "tail", || report::tail_csv(&rows), || report::tail_json(&rows))?;
    Ok(format!("{} tail rows ({flagged} out of range) written to {}", rows.len(), join_paths(&paths)))
}

/// Bound rows; a Heinrich request also emits the locally dependent theorem
/// at the same `z` for comparison.
pub fn bound_rows(cfg: &ExperimentConfig, spec: &ModelSpec) -> std::result::Result<Vec<BoundRow>, Failure> {
    let model = spec.build()?;
    let rb = cfg.bound.resolve(&model)?;
    let grid = cfg.estimation.grid(model.n());
    let mut companions = vec![rb.clone()];
    if rb.theorem == Theorem::Heinrich {
        let mut local = rb.clone();
        local.theorem = Theorem::Local;
        companions.push(local);
    }
    let mut rows = Vec::new();
    for &z in &grid {
        for r in &companions {
            rows.push(BoundRow::evaluate(r, z)?);
        }
    }
    Ok(rows)
}

pub fn cmd_bound(cfg: &ExperimentConfig) -> CmdResult {
    let rows = bound_rows(cfg, &cfg.model)?;
    let paths = write_rows(cfg, "bound", || report::bound_csv(&rows), || report::bound_json(&rows))?;
    Ok(format!("{} bound rows written to {}", rows.len(), join_paths(&paths)))
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub runtime_s: Option<f64>,
    pub outputs: Vec<OutputFile>,
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestBody {
    pub tool_version: String,
    pub core_version: String,
    pub seed: u64,
    pub workers: usize,
    /// The effective config after command-line overrides; also written to
    /// `config.toml` beside the manifest for replay.
    pub config: String,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
}

pub type Manifest = report::Versioned<ManifestBody>;

fn hashed(dir: &Path, path: &Path) -> std::result::Result<OutputFile, Failure> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let rel = path.strip_prefix(dir).unwrap_or(path);
    Ok(OutputFile { path: rel.display().to_string(), sha256: format!("{:x}", Sha256::digest(&bytes)) })
}

#[derive(Clone, Debug, Serialize)]
struct CertifyEntry {
    model_id: String,
    n: usize,
    bound: steinmd_core::ResolvedBound,
}

/// Runs every stage in order, rewriting `manifest.json` atomically after
/// each. Any failed stage makes the exit code 2; later stages still run
/// unless they depend on the failed one.
pub fn cmd_experiment(cfg: &ExperimentConfig, stop_after: Option<Stage>) -> CmdResult {
    let dir = cfg.output.directory.clone();
    let mut replay = cfg.clone();
    replay.output.directory = PathBuf::from(".");
    let config_text = replay.to_toml_string();
    write_out(&dir, "config.toml", config_text.as_bytes())?;
    let mut manifest = report::Versioned::new(
        report::MANIFEST_SCHEMA,
        report::MANIFEST_SCHEMA_VERSION,
        ManifestBody {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            core_version: steinmd_core::VERSION.into(),
            seed: cfg.estimation.seed,
            workers: cfg.estimation.workers,
            config: config_text,
            stages: Stage::ALL
                .iter()
                .map(|&stage| StageRecord { stage, status: StageStatus::Pending, runtime_s: None, outputs: vec![], message: None })
                .collect(),
            complete: false,
        },
    );
    let save = |m: &Manifest| write_out(&dir, "manifest.json", &report::to_json(m)?);
    save(&manifest)?;
    let specs = model_specs(cfg);
    let mut tail: Option<Vec<TailRow>> = None;
    for (k, &stage) in Stage::ALL.iter().enumerate() {
        if stop_after.is_some_and(|s| stage > s) {
            break;
        }
        let start = Instant::now();
        let result = run_stage(cfg, stage, &specs, &mut tail);
        let rec = &mut manifest.body.stages[k];
        rec.runtime_s = Some(start.elapsed().as_secs_f64());
        match result {
            Ok(paths) => {
                rec.status = StageStatus::Ok;
                rec.outputs = paths.iter().map(|p| hashed(&dir, p)).collect::<Result<_, _>>()?;
            }
            Err(Failure::Usage(e)) => {
                rec.status = StageStatus::Failed;
                rec.message = Some(format!("{e:#}"));
            }
            Err(Failure::Verification(msg)) => {
                rec.status = StageStatus::Failed;
                rec.message = Some(msg);
            }
        }
        save(&manifest)?;
    }
    let failed: Vec<&str> =
        manifest.body.stages.iter().filter(|s| s.status == StageStatus::Failed).map(|s| s.stage.name()).collect();
    let pending = manifest.body.stages.iter().any(|s| s.status == StageStatus::Pending);
    manifest.body.complete = !pending;
    save(&manifest)?;
    if failed.is_empty() {
        Ok(format!("experiment {} in {}", if pending { "stopped early" } else { "complete" }, dir.display()))
    } else {
        Err(Failure::Verification(format!("stages failed: {} (manifest {})", failed.join(", "), dir.join("manifest.json").display())))
    }
}

fn run_stage(
    cfg: &ExperimentConfig,
    stage: Stage,
    specs: &[ModelSpec],
    tail: &mut Option<Vec<TailRow>>,
) -> std::result::Result<Vec<PathBuf>, Failure> {
    let dir = &cfg.output.directory;
    match stage {
        Stage::Verify => {
            let mut reports = Vec::new();
            for spec in specs {
                let model = spec.build()?;
                // Models too large to enumerate are checked by Monte Carlo.
                let mode = match cfg.verify.mode {
                    VerifyMode::Enumerate if model.as_model().is_enumerable() => Mode::Enumerate,
                    _ => Mode::MonteCarlo(verify_plan(cfg)),
                };
                reports.push(report::verify_report(verify_body(cfg, spec, &model, mode)?));
            }
            let path = write_out(dir, "verify.json", &report::to_json(&reports)?)?;
            let failed: Vec<String> = reports
                .iter()
                .flat_map(|r| r.body.checks.iter().filter(|c| !c.pass).map(move |c| format!("{} {}", r.body.model_id, c.name)))
                .collect();
            if failed.is_empty() {
                Ok(vec![path])
            } else {
                Err(Failure::Verification(failed.join(", ")))
            }
        }
        Stage::Certify => {
            let entries = specs
                .iter()
                .map(|spec| {
                    let model = spec.build()?;
                    Ok(CertifyEntry { model_id: spec.id(), n: model.n(), bound: cfg.bound.resolve(&model)? })
                })
                .collect::<std::result::Result<Vec<_>, Failure>>()?;
            Ok(vec![write_out(dir, "certificate.json", &report::to_json(&entries)?)?])
        }
        Stage::Tail => {
            let mut rows = Vec::new();
            for spec in specs {
                rows.extend(tail_rows(cfg, spec)?);
            }
            let paths = write_rows(cfg, "tail", || report::tail_csv(&rows), || report::tail_json(&rows))?;
            *tail = Some(rows);
            Ok(paths)
        }
        Stage::Bound => {
            let mut rows = Vec::new();
            for spec in specs {
                rows.extend(bound_rows(cfg, spec)?);
            }
            write_rows(cfg, "bound", || report::bound_csv(&rows), || report::bound_json(&rows))
        }
        Stage::EnvelopeFit => {
            let rows = tail.as_ref().ok_or_else(|| Failure::Usage(anyhow!("tail stage did not produce rows")))?;
            let fit = tailmc::ratio_envelope_fit(rows)?;
            let doc = report::Versioned::new(report::FIT_SCHEMA, report::FIT_SCHEMA_VERSION, fit);
            Ok(vec![write_out(dir, "envelope_fit.json", &report::to_json(&doc)?)?])
        }
    }
}

/// Reads a manifest back.
pub fn read_manifest(path: &Path) -> anyhow::Result<Manifest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}
