//! Command line front end: one subcommand per pipeline stage plus `pipeline`
//! for the whole run. Every command reads the same TOML configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use rocbf::config::PipelineConfig;
use rocbf::datasets::DatasetBundle;
use rocbf::io;
use rocbf::pipeline::{self, GateFailure, LaneSetup};
use rocbf::sim::{rollout, Controller};
use rocbf::Error;

#[derive(Parser)]
#[command(name = "rocbf", version, about = "Learn, verify and deploy robust output control barrier functions")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set train.max_iters=500`.
    /// The value is read as TOML and falls back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record expert demonstrations.
    Collect {
        #[arg(long, default_value = "demos.txt")]
        out: PathBuf,
    },
    /// Boundary detection, unsafe layer, buffered safe set and radii.
    Datasets {
        #[arg(long, default_value = "demos.txt")]
        demos: PathBuf,
        #[arg(long, default_value = "bundle.json")]
        out: PathBuf,
    },
    /// Fit the barrier weights.
    Train {
        #[arg(long, default_value = "bundle.json")]
        bundle: PathBuf,
        #[arg(long, default_value = "barrier.txt")]
        out: PathBuf,
        #[arg(long, default_value = "train_report.json")]
        report: PathBuf,
    },
    /// Check the validity conditions of a trained barrier.
    Verify {
        #[arg(long, default_value = "bundle.json")]
        bundle: PathBuf,
        #[arg(long, default_value = "barrier.txt")]
        barrier: PathBuf,
        #[arg(long, default_value = "verification.json")]
        out: PathBuf,
    },
    /// Simulate one closed-loop run and write its trace.
    Rollout(RolloutArgs),
    /// Barrier controller against the expert over a grid of initial errors.
    Compare(CompareArgs),
    /// Everything above in one run, with closed-loop evaluation.
    Pipeline {
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
        /// Reuse a demonstration file instead of collecting.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Evaluation traces to keep.
        #[arg(long, default_value_t = 3)]
        traces: usize,
        /// Skip the closed-loop evaluation.
        #[arg(long)]
        no_eval: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerKind {
    Expert,
    Rocbf,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long, value_enum, default_value = "rocbf")]
    controller: ControllerKind,
    #[arg(long, default_value = "barrier.txt")]
    barrier: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ce0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    theta0: f64,
    #[arg(long, default_value = "trace.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value = "barrier.txt")]
    barrier: PathBuf,
    #[arg(long)]
    n_ce: Option<usize>,
    #[arg(long)]
    n_theta: Option<usize>,
    #[arg(long)]
    ce_max: Option<f64>,
    #[arg(long)]
    theta_max: Option<f64>,
    #[arg(long, default_value = "grid.txt")]
    out: PathBuf,
}

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Generic = 1,
    Config = 2,
    Data = 3,
    TrainingDiverged = 4,
    Verification = 5,
    SimulationDiverged = 6,
}

struct CliError {
    stage: &'static str,
    kind: Failure,
    message: String,
}

impl CliError {
    fn new(stage: &'static str, kind: Failure, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind,
            message: message.into(),
        }
    }

    fn from_lib(stage: &'static str, e: Error) -> Self {
        let kind = match &e {
            Error::TrainingDiverged { .. } => Failure::TrainingDiverged,
            Error::SimulationDiverged { .. } => Failure::SimulationDiverged,
            Error::Io(_) | Error::Parse(_) | Error::Json(_) | Error::CollectionFailed(_) => Failure::Data,
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => Failure::Data,
            Error::Numerical(_) | Error::PowerIteration { .. } | Error::Unsupported(_) => Failure::Generic,
        };
        Self::new(stage, kind, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn lib<T>(stage: &'static str, r: rocbf::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::from_lib(stage, e))
}

/// Provenance record written next to every command's outputs.
#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_sha256: String,
    seeds: BTreeMap<String, u64>,
    artifacts: BTreeMap<String, PathBuf>,
}

struct Loaded {
    cfg: PipelineConfig,
    hash: String,
}

fn parse_value(raw: &str) -> toml::Value {
    // a bare TOML value parses as the right-hand side of an assignment
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::new("config", Failure::Config, format!("override `{spec}` is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::new("config", Failure::Config, format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::new("config", Failure::Config, format!("override key `{key}` crosses a non-table value"))
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Recursively overlays `over` on `base`; non-table values replace.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// First key path present in `given` but absent from `known`.
fn unknown_key(given: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    given.iter().find_map(|(k, v)| {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => Some(path),
            (toml::Value::Table(g), Some(toml::Value::Table(kn))) => unknown_key(g, kn, &path),
            _ => None,
        }
    })
}

fn load_config(cli: &Cli) -> CliResult<Loaded> {
    // Partial sections fall back to the pipeline defaults, not to the
    // section type's own defaults, so start from the full default document.
    let mut base = toml::Table::try_from(PipelineConfig::default())
        .map_err(|e| CliError::new("config", Failure::Generic, e.to_string()))?;
    let user = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::new("config", Failure::Config, format!("cannot read {}: {e}", p.display()))
            })?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::new("config", Failure::Config, format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    merge(&mut base, user);
    for o in &cli.overrides {
        apply_override(&mut base, o)?;
    }
    let cfg: PipelineConfig = toml::Value::Table(base.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::new("config", Failure::Config, e.to_string()))?;
    let known = toml::Table::try_from(&cfg)
        .map_err(|e| CliError::new("config", Failure::Generic, e.to_string()))?;
    if let Some(k) = unknown_key(&base, &known, "") {
        return Err(CliError::new("config", Failure::Config, format!("unknown configuration key `{k}`")));
    }
    cfg.validate()
        .map_err(|e| CliError::new("config", Failure::Config, e.to_string()))?;
    let canonical = serde_json::to_string(&cfg)
        .map_err(|e| CliError::new("config", Failure::Generic, e.to_string()))?;
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(Loaded { cfg, hash })
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(
    path: &Path,
    command: &str,
    loaded: &Loaded,
    artifacts: BTreeMap<String, PathBuf>,
) -> CliResult<()> {
    let m = RunManifest {
        tool: "rocbf",
        version: env!("CARGO_PKG_VERSION"),
        command: command.into(),
        config_sha256: loaded.hash.clone(),
        seeds: loaded.cfg.seeds().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        artifacts,
    };
    lib("manifest", io::write_json(path, &m))
}

fn one(name: &str, path: &Path) -> BTreeMap<String, PathBuf> {
    BTreeMap::from([(name.to_string(), path.to_path_buf())])
}

fn read_bundle(path: &Path) -> CliResult<DatasetBundle> {
    lib("datasets", io::read_json(path))
}

fn run(cli: &Cli) -> CliResult<()> {
    let loaded = load_config(cli)?;
    let setup = lib("config", LaneSetup::new(&loaded.cfg))?;
    let cfg = &loaded.cfg;
    match &cli.command {
        Command::Collect { out } => {
            let demos = lib("collect", setup.collect())?;
            lib("collect", io::write_demos(out, &demos))?;
            write_manifest(&manifest_path_for(out), "collect", &loaded, one("demos", out))?;
            eprintln!("collect: {} records written to {}", demos.len(), out.display());
        }
        Command::Datasets { demos, out } => {
            let d = lib("datasets", io::read_demos(demos))?;
            let bundle = lib("datasets", setup.datasets(&d))?;
            lib("datasets", io::write_json(out, &bundle))?;
            write_manifest(&manifest_path_for(out), "datasets", &loaded, one("bundle", out))?;
            eprintln!(
                "datasets: {} safe ({} after buffer), {} unsafe, eps {:.4e}, eps_n {:.4e}, eps_bar {:.4e}",
                bundle.z_safe.len(),
                bundle.z_safe_buffered.len(),
                bundle.z_unsafe.len(),
                bundle.eps,
                bundle.eps_n,
                bundle.eps_bar
            );
        }
        Command::Train { bundle, out, report } => {
            let b = read_bundle(bundle)?;
            let (bar, rep) = lib("train", setup.train(&b))?;
            lib("train", io::write_barrier(out, &bar, &cfg.consts))?;
            lib("train", io::write_json(report, &rep))?;
            let mut arts = one("barrier", out);
            arts.insert("train_report".into(), report.clone());
            write_manifest(&manifest_path_for(out), "train", &loaded, arts)?;
            let c = &rep.constraints;
            eprintln!(
                "train: loss {:.6e} after {} iterations; violated safe {}/{}, unsafe {}/{}, dynamics {}/{}",
                rep.final_loss,
                rep.iterations,
                c.safe.violated,
                c.safe.total,
                c.unsafe_.violated,
                c.unsafe_.total,
                c.dynamics.violated,
                c.dynamics.total
            );
            if c.overall_fraction() > cfg.gates.max_violation_fraction {
                return Err(constraint_failure(c, cfg));
            }
        }
        Command::Verify { bundle, barrier, out } => {
            let b = read_bundle(bundle)?;
            let (bar, _) = lib("verify", io::read_barrier(barrier))?;
            let rep = lib("verify", setup.verify(&bar, &b))?;
            lib("verify", io::write_json(out, &rep))?;
            write_manifest(&manifest_path_for(out), "verify", &loaded, one("verification", out))?;
            println!("{}", rep.table());
            if !rep.overall {
                return Err(CliError::new("verify", Failure::Verification, "validity conditions do not hold"));
            }
        }
        Command::Rollout(a) => {
            let bar_consts = match a.controller {
                ControllerKind::Rocbf => Some(lib("rollout", io::read_barrier(&a.barrier))?),
                ControllerKind::Expert => None,
            };
            let mut rc = cfg.rollout.clone();
            rc.initial.c_e = a.ce0;
            rc.initial.theta_e = a.theta0;
            let ctl = match &bar_consts {
                Some((bar, consts)) => Controller::Rocbf {
                    bar,
                    consts,
                    uset: &cfg.controller.input_set,
                },
                None => Controller::Expert {
                    gains: cfg.vehicle.expert,
                    excursion: None,
                },
            };
            let trace = match rollout(&setup.scenario(), &rc, ctl) {
                Err(Error::SimulationDiverged { t, steps, partial }) => {
                    // keep what was simulated for inspection
                    lib("rollout", io::write_text(&a.out, &io::trace_to_text(&partial)))?;
                    return Err(CliError::new(
                        "rollout",
                        Failure::SimulationDiverged,
                        format!("state became non-finite at t = {t:.3} s after {steps} steps; partial trace written"),
                    ));
                }
                r => lib("rollout", r)?,
            };
            lib("rollout", io::write_text(&a.out, &io::trace_to_text(&trace)))?;
            write_manifest(&manifest_path_for(&a.out), "rollout", &loaded, one("trace", &a.out))?;
            println!("{}", serde_json::to_string_pretty(&trace.summary).unwrap_or_default());
        }
        Command::Compare(a) => {
            let (bar, consts) = lib("compare", io::read_barrier(&a.barrier))?;
            let mut c = cfg.clone();
            c.compare.n_ce = a.n_ce.unwrap_or(c.compare.n_ce);
            c.compare.n_theta = a.n_theta.unwrap_or(c.compare.n_theta);
            c.compare.ce_max = a.ce_max.unwrap_or(c.compare.ce_max);
            c.compare.theta_max = a.theta_max.unwrap_or(c.compare.theta_max);
            c.consts = consts;
            let s = lib("compare", LaneSetup::new(&c))?;
            let rows = lib("compare", s.compare(&bar))?;
            lib("compare", io::write_text(&a.out, &io::compare_to_text(&rows)))?;
            write_manifest(&manifest_path_for(&a.out), "compare", &loaded, one("grid", &a.out))?;
            eprintln!("compare: {} rows written to {}", rows.len(), a.out.display());
        }
        Command::Pipeline {
            out_dir,
            demos,
            traces,
            no_eval,
        } => {
            let pre = match demos {
                Some(p) => Some(lib("collect", io::read_demos(p))?),
                None => None,
            };
            let out = lib("pipeline", pipeline::run(cfg, pre, !no_eval))?;
            let paths = lib("pipeline", pipeline::write_artifacts(&out, cfg, out_dir, *traces))?;
            let mut arts = BTreeMap::from([
                ("demos".to_string(), paths.demos.clone()),
                ("bundle".to_string(), paths.bundle.clone()),
                ("barrier".to_string(), paths.barrier.clone()),
                ("train_report".to_string(), paths.train_report.clone()),
                ("verification".to_string(), paths.verification.clone()),
                ("summary".to_string(), paths.summary.clone()),
            ]);
            if out.summary.evaluation.is_some() {
                arts.insert("evaluation".into(), paths.evaluation.clone());
            }
            for (i, p) in paths.traces.iter().enumerate() {
                arts.insert(format!("trace_{i:03}"), p.clone());
            }
            write_manifest(&out_dir.join("manifest.json"), "pipeline", &loaded, arts)?;
            print_pipeline_summary(&out.summary);
            match out.summary.gates.first_failure(cfg) {
                None => {}
                Some(GateFailure::Constraints) => {
                    return Err(constraint_failure(&out.summary.train.constraints, cfg));
                }
                Some(GateFailure::Certificate) => {
                    return Err(CliError::new("verify", Failure::Verification, "validity conditions do not hold"));
                }
                Some(GateFailure::Evaluation) => {
                    return Err(CliError::new(
                        "evaluate",
                        Failure::Verification,
                        "closed-loop evaluation below the required pass fraction",
                    ));
                }
            }
        }
    }
    Ok(())
}

fn constraint_failure(c: &rocbf::learning::ConstraintReport, cfg: &PipelineConfig) -> CliError {
    let fam = [("safe", &c.safe), ("unsafe", &c.unsafe_), ("dynamics", &c.dynamics)]
        .iter()
        .filter(|(_, f)| f.violated > 0)
        .map(|(n, f)| format!("{n} {}/{}", f.violated, f.total))
        .collect::<Vec<_>>()
        .join(", ");
    CliError::new(
        "train",
        Failure::Verification,
        format!(
            "violated fraction {:.4} exceeds {} ({fam})",
            c.overall_fraction(),
            cfg.gates.max_violation_fraction
        ),
    )
}

fn print_pipeline_summary(s: &pipeline::PipelineSummary) {
    let c = &s.train.constraints;
    eprintln!(
        "pipeline: {} demonstrations; training violated fraction {:.4} (safe {:.4}, unsafe {:.4}, dynamics {:.4})",
        s.demos,
        c.overall_fraction(),
        c.safe.fraction(),
        c.unsafe_.fraction(),
        c.dynamics.fraction()
    );
    println!("{}", s.verification.table());
    if let Some(e) = &s.evaluation {
        eprintln!("evaluation: {}/{} closed-loop runs passed", e.passed, e.total);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {}", e.stage, e.message);
            ExitCode::from(e.kind as u8)
        }
    }
}
