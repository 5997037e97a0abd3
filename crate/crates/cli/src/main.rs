use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::warn;
use wfsim_core::io::{
    import_dax, parse_config, parse_topology, parse_workflows, run_scenario, scenarios, serialize_workflows, IoError,
    ScenarioBundle, DEFAULT_REFERENCE_MIPS,
};
use wfsim_core::trace::write_csv;
use wfsim_core::workflow::Application;

#[derive(Parser)]
#[command(name = "wfsim", version, about = "Discrete-event simulator for workflows on fog/edge/cloud topologies")]
struct Cli {
    /// Overrides the seed from the config document.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace and report.
    Run {
        #[arg(long, required_unless_present = "scenario")]
        topology: Option<PathBuf>,
        #[arg(long, required_unless_present = "scenario")]
        workflows: Option<PathBuf>,
        #[arg(long, required_unless_present = "scenario")]
        config: Option<PathBuf>,
        /// Use a bundled scenario instead of the three documents.
        #[arg(long, conflicts_with_all = ["topology", "workflows", "config"])]
        scenario: Option<String>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Parse and check input documents; the kind is detected from the root keys.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Warn on unknown fields instead of rejecting them.
        #[arg(long)]
        lenient: bool,
    },
    /// Convert a DAX workflow to a workflow document on stdout.
    ImportDax {
        path: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REFERENCE_MIPS)]
        ref_mips: f64,
    },
    /// List the bundled scenarios.
    Scenarios,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<IoError>() {
                Some(io) => eprintln!("error[{}]: {e:#}", io.kind()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            topology,
            workflows,
            config,
            scenario,
            trace,
            report,
            format,
        } => {
            let mut bundle = match scenario {
                Some(name) => match scenarios::find(&name) {
                    Some(b) => b.parse()?,
                    None => bail!("unknown scenario {name:?}; see `wfsim scenarios`"),
                },
                None => ScenarioBundle::load(
                    &topology.expect("required by clap"),
                    &workflows.expect("required by clap"),
                    &config.expect("required by clap"),
                )?,
            };
            if let Some(seed) = cli.seed {
                bundle.config.run.seed = seed;
            }
            run(&bundle, trace.as_deref(), report.as_deref(), format)
        }
        Command::Validate { paths, lenient } => validate(&paths, !lenient),
        Command::ImportDax { path, ref_mips } => {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let imported = import_dax(&text, ref_mips)?;
            for w in &imported.warnings {
                warn!("{w}");
            }
            let app = Application::new(vec![imported.workflow], Vec::new())?;
            println!("{}", serialize_workflows(&app));
            Ok(())
        }
        Command::Scenarios => {
            for b in scenarios::ALL {
                println!("{}", b.name);
            }
            Ok(())
        }
    }
}

fn run(bundle: &ScenarioBundle, trace: Option<&Path>, report: Option<&Path>, format: Format) -> Result<()> {
    let result = run_scenario(bundle)?;
    for w in &result.output.warnings {
        warn!("{w}");
    }
    if let Some(path) = trace {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv(&result.output.trace, io::BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut out: Box<dyn Write> = match report {
        Some(path) => Box::new(io::BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    match format {
        Format::Json => writeln!(out, "{}", result.report.to_json())?,
        Format::Csv => result.report.write_tasks_csv(&mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn validate(paths: &[PathBuf], strict: bool) -> Result<()> {
    let mut failed = 0;
    for path in paths {
        match check(path, strict) {
            Ok((kind, warnings)) => {
                for w in warnings {
                    warn!("{}: {w}", path.display());
                }
                println!("ok {} ({kind})", path.display());
            }
            Err(e) => {
                failed += 1;
                match e.downcast_ref::<IoError>() {
                    Some(io) => eprintln!("{}: error[{}]: {e:#}", path.display(), io.kind()),
                    None => eprintln!("{}: error: {e:#}", path.display()),
                }
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} documents failed validation", paths.len());
    }
    Ok(())
}

fn check(path: &Path, strict: bool) -> Result<(&'static str, Vec<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('<') {
        let imported = import_dax(&text, DEFAULT_REFERENCE_MIPS)?;
        return Ok(("dax", imported.warnings));
    }
    let root: serde_json::Value = serde_json::from_str(&text).with_context(|| "not a JSON document")?;
    if root.get("workflows").is_some() {
        let (_, warnings) = parse_workflows(&text, strict)?;
        Ok(("workflows", warnings))
    } else if root.get("fog_devices").is_some() {
        let (topology, warnings) = parse_topology(&text, strict)?;
        topology.infrastructure().map_err(IoError::from)?;
        Ok(("topology", warnings))
    } else {
        let (_, warnings) = parse_config(&text)?;
        Ok(("config", warnings))
    }
}
