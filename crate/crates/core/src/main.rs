use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dualfuse::config::parse_config;
use dualfuse::metrics::summarize;
use dualfuse::oracle::{fusion_equivalence, score_consistency};
use dualfuse::pipeline::PipelineConfig;
use dualfuse::render::{render_outputs, RunManifest, SOFTWARE_VERSION};
use dualfuse::sweep::{column, run_sweep, CellResult, Ratio, SweepSpec};

#[derive(Parser)]
#[command(
    name = "dualfuse",
    version,
    about = "Dual-line diffusion sampling on an analytic toy world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of noise seeds, counted up from `seed_noise`.
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample with the configured settings.
    Sample(Common),
    /// Sweep the fusion temperature ratio.
    AblateLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1:1,1:3,1:5,1:7")]
        ratios: Vec<Ratio>,
    },
    /// Sweep the fusion gate (aggregation gate follows 5 steps later).
    AblateM {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
        m_values: Vec<usize>,
    },
    /// Turn fusion and token aggregation on and off.
    AblateModules(Common),
    /// Run the built-in numerical self-checks.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Regenerate every output recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::new("io", format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| Failure::new("config", format!("{}: {e}", p.display())))
        }
    }
}

fn execute(
    cfg: &PipelineConfig,
    spec: &SweepSpec,
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<CellResult>, Failure> {
    let results = run_sweep(cfg, spec, seeds).map_err(|e| Failure::new("pipeline", e))?;
    render_outputs(out, cfg, spec, seeds, &results).map_err(|e| Failure::new("io", e))?;
    Ok(results)
}

fn params(results: &[CellResult]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for r in results {
        if !seen.contains(&r.row.param) {
            seen.push(r.row.param.clone());
        }
    }
    seen
}

fn report(results: &[CellResult]) {
    for p in params(results) {
        let id = summarize(&column(results, &p, |r| r.identity_score));
        let sem = summarize(&column(results, &p, |r| r.semantic_score));
        let frac = summarize(&column(results, &p, |r| r.identity_fraction));
        println!(
            "{}",
            json!({
                "param": p,
                "n": id.n,
                "identity_score": {"mean": id.mean, "se": id.std_err},
                "semantic_score": {"mean": sem.mean, "se": sem.std_err},
                "identity_fraction": {"mean": frac.mean, "se": frac.std_err},
            })
        );
    }
}

fn sweep_command(
    common: &Common,
    spec: SweepSpec,
    default_seeds: u64,
    name: &str,
) -> Result<(), Failure> {
    let cfg = load_config(common.config.as_deref())?;
    let n = common.seeds.unwrap_or(default_seeds);
    if n == 0 {
        return Err(Failure::new("usage", "--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (0..n).map(|i| cfg.seeds.noise.wrapping_add(i)).collect();
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(name));
    let results = execute(&cfg, &spec, &seeds, &out)?;
    report(&results);
    eprintln!("wrote {} runs to {}", results.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sample(common) => sweep_command(&common, SweepSpec::Sample, 1, "sample"),
        Command::AblateLambda { common, ratios } => {
            sweep_command(&common, SweepSpec::Lambda { ratios }, 20, "ablate-lambda")
        }
        Command::AblateM { common, m_values } => {
            sweep_command(&common, SweepSpec::Timestep { m_values }, 20, "ablate-m")
        }
        Command::AblateModules(common) => {
            sweep_command(&common, SweepSpec::Modules, 100, "ablate-modules")
        }
        Command::OracleCheck {
            instances,
            points,
            seed,
        } => {
            let reports = [
                fusion_equivalence(instances, seed),
                score_consistency(points, seed),
            ];
            for r in &reports {
                println!("{}", serde_json::to_string(r).expect("plain data"));
            }
            match reports.iter().find(|r| !r.passed()) {
                Some(r) => Err(Failure::new(
                    "oracle",
                    format!("{} failed on {} instances", r.name, r.failures),
                )),
                None => Ok(()),
            }
        }
        Command::Replay { manifest, out } => {
            let text = fs::read_to_string(&manifest).map_err(|e| {
                Failure::new("io", format!("cannot read {}: {e}", manifest.display()))
            })?;
            let m: RunManifest = serde_json::from_str(&text)
                .map_err(|e| Failure::new("manifest", format!("{}: {e}", manifest.display())))?;
            if m.software != SOFTWARE_VERSION {
                eprintln!(
                    "note: manifest written by {}, replaying with {SOFTWARE_VERSION}",
                    m.software
                );
            }
            m.config
                .validate()
                .map_err(|e| Failure::new("manifest", e))?;
            let results = execute(&m.config, &m.sweep, &m.seeds, &out)?;
            eprintln!("replayed {} runs into {}", results.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!(
                "{}",
                json!({"error": {"kind": f.kind, "message": f.message}})
            );
            ExitCode::FAILURE
        }
    }
}
