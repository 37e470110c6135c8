//! Configuration files, run orchestration and result files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn, LevelFilter};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::{self, EvolveConfig, EvolveError, RunTrace};
use crate::lmi::{self, LmiSpec};
use crate::oracle::{self, NormReport};
use crate::plant::{self, GainMatrix, PolytopicPlant};
use crate::sdp::{self, SdpSettings, SdpStatus};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl From<EvolveError> for CliError {
    fn from(e: EvolveError) -> Self {
        match e {
            EvolveError::Config(_) => CliError::Config(e.to_string()),
            EvolveError::Initialization { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

fn default_summary() -> String {
    "summary.json".into()
}

fn default_prefix() -> String {
    "trace".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for traces and the summary; `--out` overrides it.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_summary")]
    pub summary: String,
    /// Trace files are named `<prefix>_seed<seed>.csv`.
    #[serde(default = "default_prefix")]
    pub trace_prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            summary: default_summary(),
            trace_prefix: default_prefix(),
        }
    }
}

fn default_reps() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Free text carried along with the configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub plant: PolytopicPlant,
    #[serde(default)]
    pub lmi: LmiSpec,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
}

impl RunConfig {
    pub fn gain_dims(&self) -> (usize, usize) {
        let d = self.plant.dims();
        (d.m, d.p)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        lmi::LmiSpec::validate(&self.lmi).map_err(|e| CliError::Config(e.to_string()))?;
        let (m, p) = self.gain_dims();
        self.evolve.validate(m * p)?;
        if self.repetitions == 0 {
            return Err(CliError::Config("repetitions must be positive".into()));
        }
        Ok(())
    }
}

/// Parse and validate a configuration from JSON text.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
    cfg.validate()?;
    for w in plant::validate_plant(&cfg.plant).map_err(|e| CliError::Config(e.to_string()))? {
        warn!("{w}");
    }
    if let Some(hint) = cfg.evolve.np_hint(cfg.gain_dims().0 * cfg.gain_dims().1) {
        info!("{hint}");
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Trace as CSV text: `generation,best_fitness,k_0,...,k_{D-1}`, LF endings.
pub fn trace_csv(trace: &RunTrace) -> String {
    let d = trace.best_gain.len();
    let mut out = String::from("generation,best_fitness");
    for j in 0..d {
        write!(out, ",k_{j}").unwrap();
    }
    out.push('\n');
    for r in &trace.records {
        write!(out, "{},{}", r.generation, r.best_fitness).unwrap();
        for k in &r.best_gain {
            write!(out, ",{k}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_gain: Vec<f64>,
    pub best_delta: f64,
    pub wall_time_s: f64,
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_gain: Vec<f64>,
    pub best_delta: f64,
    pub seeds: Vec<u64>,
    pub per_run: Vec<RunSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthesizeOptions {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Independent runs for consecutive seeds, in parallel threads. Results are
/// in seed order and do not depend on scheduling.
pub fn run_repetitions(cfg: &RunConfig, seeds: &[u64]) -> Vec<Result<RunTrace, EvolveError>> {
    let settings = SdpSettings::default();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len().max(1));
    let mut results: Vec<Option<Result<RunTrace, EvolveError>>> = vec![None; seeds.len()];
    std::thread::scope(|scope| {
        for (w, chunk) in results.chunks_mut(seeds.len().div_ceil(workers)).enumerate() {
            let base = w * seeds.len().div_ceil(workers);
            let settings = &settings;
            scope.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    let evo = EvolveConfig {
                        seed: seeds[base + j],
                        ..cfg.evolve.clone()
                    };
                    *slot = Some(evolve::run(&cfg.plant, &cfg.lmi, &evo, settings, &mut ()));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every slot is filled")).collect()
}

pub fn cmd_synthesize(cfg: &RunConfig, opts: &SynthesizeOptions) -> Result<Summary, CliError> {
    let base = opts.seed.unwrap_or(cfg.evolve.seed);
    let reps = opts.reps.unwrap_or(cfg.repetitions);
    if reps == 0 {
        return Err(CliError::Config("--reps must be positive".into()));
    }
    let dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;

    let seeds: Vec<u64> = (0..reps as u64).map(|r| base.wrapping_add(r)).collect();
    let mut per_run = Vec::with_capacity(reps);
    for (seed, result) in seeds.iter().zip(run_repetitions(cfg, &seeds)) {
        let trace = result?;
        let name = format!("{}_seed{seed}.csv", cfg.output.trace_prefix);
        let path = dir.join(&name);
        fs::write(&path, trace_csv(&trace)).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        info!("seed {seed}: best {} in {:.2}s", trace.best_delta, trace.wall_time_s);
        per_run.push(RunSummary {
            seed: *seed,
            best_gain: trace.best_gain,
            best_delta: trace.best_delta,
            wall_time_s: trace.wall_time_s,
            trace: name,
        });
    }
    let best = per_run
        .iter()
        .fold(&per_run[0], |b, r| if r.best_delta < b.best_delta { r } else { b });
    let summary = Summary {
        best_gain: best.best_gain.clone(),
        best_delta: best.best_delta,
        seeds,
        per_run: per_run.clone(),
    };
    let path = dir.join(&cfg.output.summary);
    let text = serde_json::to_string_pretty(&summary).expect("summary is plain data");
    fs::write(&path, text + "\n").map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexAnalysis {
    pub vertex: usize,
    pub spectral_abscissa: f64,
    pub norms: NormReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub gain: Vec<f64>,
    pub vertices: Vec<VertexAnalysis>,
    /// Minimized `δ`, when the LMI conditions are feasible.
    pub delta: Option<f64>,
    pub lmi_status: String,
}

impl Analysis {
    pub fn render(&self) -> String {
        let mut out = format!("gain: {:?}\n", self.gain);
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.6}"));
        for v in &self.vertices {
            if v.norms.stable {
                writeln!(
                    out,
                    "vertex {}: stable (abscissa {:.6}), H2^2 = {}, Hinf = {}",
                    v.vertex,
                    v.spectral_abscissa,
                    opt(v.norms.h2_squared),
                    opt(v.norms.hinf)
                )
                .unwrap();
            } else {
                writeln!(out, "vertex {}: unstable at vertex {} (abscissa {:.6})", v.vertex, v.vertex, v.spectral_abscissa).unwrap();
            }
        }
        match self.delta {
            Some(d) => writeln!(out, "LMI delta: {d:.6}").unwrap(),
            None => writeln!(out, "LMI: infeasible ({})", self.lmi_status).unwrap(),
        }
        out
    }
}

pub fn parse_gain(text: &str, dims: (usize, usize)) -> Result<GainMatrix, CliError> {
    let vals = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("gain {text:?}: {e}")))?;
    if vals.len() != dims.0 * dims.1 {
        return Err(CliError::Config(format!(
            "gain has {} entries, plant needs {}x{} = {}",
            vals.len(),
            dims.0,
            dims.1,
            dims.0 * dims.1
        )));
    }
    GainMatrix::from_flat(dims.0, dims.1, &vals).map_err(|e| CliError::Config(e.to_string()))
}

pub fn cmd_analyze(cfg: &RunConfig, k: &GainMatrix) -> Result<Analysis, CliError> {
    let loops = cfg.plant.closed_loops(k).map_err(|e| CliError::Config(e.to_string()))?;
    let mut vertices = Vec::with_capacity(loops.len());
    for (i, cl) in loops.iter().enumerate() {
        let abscissa = plant::spectral_abscissa(&cl.acl).map_err(|e| CliError::Numeric(e.to_string()))?;
        vertices.push(VertexAnalysis {
            vertex: i + 1,
            spectral_abscissa: abscissa,
            norms: oracle::report(cl),
        });
    }
    let (delta, lmi_status) = if let Some(v) = vertices.iter().find(|v| !v.norms.stable) {
        (None, format!("unstable at vertex {}", v.vertex))
    } else {
        let problem = lmi::assemble_closed_loops(&loops, &cfg.lmi);
        let sol = sdp::solve(&problem, &SdpSettings::default());
        match sol.status {
            SdpStatus::Optimal => (Some(sol.objective_value), "optimal".to_string()),
            SdpStatus::NumericalFailure => {
                return Err(CliError::Numeric(sol.diagnostic.unwrap_or_else(|| "SDP solver failed".into())))
            }
            s => (None, format!("{s:?}: {}", sol.diagnostic.unwrap_or_default())),
        }
    };
    Ok(Analysis {
        gain: k.as_flat().to_vec(),
        vertices,
        delta,
        lmi_status,
    })
}

#[derive(Debug, Parser)]
#[command(name = "sofsyn", version, about = "Robust static output feedback synthesis by PSO-DE over LMI conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for a gain minimizing the guaranteed H2 cost.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        /// Seed of the first repetition; later ones use seed+1, seed+2, ...
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report stability, norms and the LMI bound at a given gain.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Row-major gain entries, e.g. `-0.8165` or `2.24,2.61`.
        #[arg(long, allow_hyphen_values = true)]
        gain: String,
    },
}

/// Log level from the `SOFSYN_LOG` value (unset means off).
pub fn log_level(value: Option<&str>) -> Result<LevelFilter, CliError> {
    match value.map(str::trim) {
        None | Some("") | Some("off") => Ok(LevelFilter::Off),
        Some("info") => Ok(LevelFilter::Info),
        Some("debug") => Ok(LevelFilter::Debug),
        Some(other) => Err(CliError::Config(format!("SOFSYN_LOG must be off, info or debug, got {other:?}"))),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synthesize { config, seed, reps, out } => {
            let cfg = load_config(&config)?;
            let s = cmd_synthesize(&cfg, &SynthesizeOptions { seed, reps, out })?;
            println!("best K = {:?}", s.best_gain);
            println!("best delta = {}", s.best_delta);
            Ok(())
        }
        Command::Analyze { config, gain } => {
            let cfg = load_config(&config)?;
            let k = parse_gain(&gain, cfg.gain_dims())?;
            print!("{}", cmd_analyze(&cfg, &k)?.render());
            Ok(())
        }
    }
}

/// Entry point of the `sofsyn` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let level = match log_level(std::env::var("SOFSYN_LOG").ok().as_deref()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::TraceRecord;

    #[test]
    fn csv_layout() {
        let t = RunTrace {
            records: vec![
                TraceRecord {
                    generation: 0,
                    best_fitness: 3.5,
                    best_gain: vec![-1.0, 0.25],
                },
                TraceRecord {
                    generation: 1,
                    best_fitness: 2.5,
                    best_gain: vec![-0.5, 0.125],
                },
            ],
            best_gain: vec![-0.5, 0.125],
            best_delta: 2.5,
            seed: 0,
            wall_time_s: 0.0,
        };
        assert_eq!(trace_csv(&t), "generation,best_fitness,k_0,k_1\n0,3.5,-1,0.25\n1,2.5,-0.5,0.125\n");
    }

    #[test]
    fn log_levels() {
        assert_eq!(log_level(None).unwrap(), LevelFilter::Off);
        assert_eq!(log_level(Some("debug")).unwrap(), LevelFilter::Debug);
        assert_eq!(log_level(Some("info")).unwrap(), LevelFilter::Info);
        assert!(log_level(Some("trace")).is_err());
    }

    #[test]
    fn gain_parsing() {
        assert_eq!(parse_gain("-0.5", (1, 1)).unwrap().as_flat(), &[-0.5]);
        assert_eq!(parse_gain("1, 2", (1, 2)).unwrap().as_flat(), &[1.0, 2.0]);
        assert!(parse_gain("1", (1, 2)).is_err());
        assert!(parse_gain("a", (1, 1)).is_err());
    }
}
