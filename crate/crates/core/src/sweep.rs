//! Ablation sweeps. Cells run in parallel; results always come back ordered
//! by sweep coordinate, then seed.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{identity_score, semantic_score, MetricsRow};
use crate::pipeline::{
    build_world, run_dual_line, PipelineConfig, PipelineError, Result, RunOutput, ToyWorld,
};

/// Fusion temperature ratio `semantic:identity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub semantic: f64,
    pub identity: f64,
}

impl Ratio {
    pub fn new(semantic: f64, identity: f64) -> Self {
        Self { semantic, identity }
    }

    /// The four ratios studied by default: 1:1, 1:3, 1:5, 1:7.
    pub fn defaults() -> Vec<Ratio> {
        [1.0, 3.0, 5.0, 7.0]
            .into_iter()
            .map(|i| Ratio::new(1.0, i))
            .collect()
    }

    fn value(&self) -> f64 {
        self.identity / self.semantic
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.semantic, self.identity)
    }
}

impl FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("ratio `{s}` is not of the form a:b"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0 && x.is_finite())
                .ok_or_else(|| format!("ratio `{s}` needs two positive numbers"))
        };
        Ok(Ratio::new(parse(a)?, parse(b)?))
    }
}

/// Module on/off arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Full,
    NoIdaf,
    NoIdap,
    Neither,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Full, Arm::NoIdaf, Arm::NoIdap, Arm::Neither];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoIdaf => "no-idaf",
            Arm::NoIdap => "no-idap",
            Arm::Neither => "neither",
        }
    }

    /// Disabling a module closes its gate for the whole run.
    pub fn apply(self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = *base;
        if matches!(self, Arm::NoIdaf | Arm::Neither) {
            cfg.m1 = cfg.steps;
        }
        if matches!(self, Arm::NoIdap | Arm::Neither) {
            cfg.m2 = cfg.steps;
        }
        cfg
    }
}

/// What a sweep varied; enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepSpec {
    Sample,
    Lambda { ratios: Vec<Ratio> },
    Timestep { m_values: Vec<usize> },
    Modules,
}

impl SweepSpec {
    fn prefix(&self) -> &'static str {
        match self {
            SweepSpec::Sample => "sample",
            SweepSpec::Lambda { .. } => "lambda",
            SweepSpec::Timestep { .. } => "m",
            SweepSpec::Modules => "arm",
        }
    }
}

/// One sweep cell: a labelled configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub param: String,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub row: MetricsRow,
    pub output: RunOutput,
    pub config: PipelineConfig,
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs one configuration and scores it against its own targets.
pub fn evaluate(world: &ToyWorld, prefix: &str, cell: &Cell) -> Result<CellResult> {
    let cfg = &cell.config;
    let output = run_dual_line(world, cfg)?;
    let row = MetricsRow {
        run_id: format!(
            "{prefix}-{}-seed{}",
            file_safe(&cell.param),
            cfg.seeds.noise
        ),
        param: cell.param.clone(),
        seed: cfg.seeds.noise,
        identity_score: identity_score(&output.sample, world, cfg.target_identity)?,
        semantic_score: semantic_score(&output.sample, world, cfg.target_scene)?,
        identity_fraction: output.mean_identity_fraction(),
        lambda_semantic: cfg.fusion.lambda_semantic,
        lambda_identity: cfg.fusion.lambda_identity,
        m1: cfg.m1,
        m2: cfg.m2,
        k: cfg.tokens.k,
    };
    Ok(CellResult {
        row,
        output,
        config: *cfg,
    })
}

/// Expands a sweep into its cells, ordered by coordinate then seed.
pub fn cells(base: &PipelineConfig, spec: &SweepSpec, seeds: &[u64]) -> Result<Vec<Cell>> {
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let coords: Vec<(String, PipelineConfig)> = match spec {
        SweepSpec::Sample => vec![(String::from("default"), *base)],
        SweepSpec::Lambda { ratios } => {
            let mut ratios = ratios.clone();
            if let Some(r) = ratios
                .iter()
                .find(|r| !(r.semantic > 0.0 && r.identity > 0.0))
            {
                return Err(PipelineError::Config(format!("ratio {r} must be positive")));
            }
            ratios.sort_by(|a, b| a.value().total_cmp(&b.value()));
            ratios
                .into_iter()
                .map(|r| {
                    let mut cfg = *base;
                    cfg.fusion.lambda_semantic = r.semantic;
                    cfg.fusion.lambda_identity = r.identity;
                    (r.to_string(), cfg)
                })
                .collect()
        }
        SweepSpec::Timestep { m_values } => {
            let mut ms = m_values.clone();
            ms.sort_unstable();
            ms.dedup();
            ms.into_iter()
                .map(|m| {
                    // keep the default 5-step lag of aggregation behind fusion
                    let cfg = PipelineConfig {
                        m1: m,
                        m2: (m + 5).min(base.steps),
                        ..*base
                    };
                    (m.to_string(), cfg)
                })
                .collect()
        }
        SweepSpec::Modules => Arm::ALL
            .iter()
            .map(|arm| (arm.name().to_string(), arm.apply(base)))
            .collect(),
    };
    let mut out = Vec::with_capacity(coords.len() * seeds.len());
    for (param, cfg) in coords {
        cfg.validate()?;
        for &seed in &seeds {
            out.push(Cell {
                param: param.clone(),
                config: cfg.with_noise_seed(seed),
            });
        }
    }
    Ok(out)
}

/// Builds the world once from `base` and evaluates every cell in parallel.
/// The result order matches [`cells`].
pub fn run_sweep(
    base: &PipelineConfig,
    spec: &SweepSpec,
    seeds: &[u64],
) -> Result<Vec<CellResult>> {
    let world = build_world(base)?;
    let cells = cells(base, spec, seeds)?;
    let prefix = spec.prefix();
    cells
        .par_iter()
        .map(|c| evaluate(&world, prefix, c))
        .collect()
}

pub fn ablate_lambda(
    base: &PipelineConfig,
    ratios: &[Ratio],
    seeds: &[u64],
) -> Result<Vec<CellResult>> {
    run_sweep(
        base,
        &SweepSpec::Lambda {
            ratios: ratios.to_vec(),
        },
        seeds,
    )
}

pub fn ablate_timestep(
    base: &PipelineConfig,
    m_values: &[usize],
    seeds: &[u64],
) -> Result<Vec<CellResult>> {
    run_sweep(
        base,
        &SweepSpec::Timestep {
            m_values: m_values.to_vec(),
        },
        seeds,
    )
}

pub fn ablate_modules(base: &PipelineConfig, seeds: &[u64]) -> Result<Vec<CellResult>> {
    run_sweep(base, &SweepSpec::Modules, seeds)
}

/// Values of one metric for every row whose coordinate is `param`.
pub fn column(
    results: &[CellResult],
    param: &str,
    metric: impl Fn(&MetricsRow) -> f64,
) -> Vec<f64> {
    results
        .iter()
        .filter(|r| r.row.param == param)
        .map(|r| metric(&r.row))
        .collect()
}
