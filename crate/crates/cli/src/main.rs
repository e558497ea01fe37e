use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tacgraph_core::diagnostics;
use tacgraph_core::inference::{run_icp_baseline, run_tacgraph};
use tacgraph_core::mesh::obj::write_obj;
use tacgraph_core::metrics::{aggregate, evaluate, to_csv, Method, ResultsFile, ScenarioRecord};
use tacgraph_core::scenario::{build_meshes, generate_scenario, read_scenario, CloudMode, GenConfig, Scenario};
use tacgraph_core::TriangleMesh;

#[derive(Parser)]
#[command(name = "tacgraph", version, about = "In-hand pose and extrinsic contact estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate simulated scenarios and their meshes.
    Gen {
        /// JSON generation config; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Turns every noise source off.
        #[arg(long)]
        noiseless: bool,
    },
    /// Run an estimator over every scenario in a directory.
    Run {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "tactile")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        /// Record wall-clock runtime per scenario (makes output non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Aggregate result files into a CSV table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default generation config.
    Config,
    /// Run the built-in numerical checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Tacgraph,
    Icp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Tactile,
    #[value(name = "vision+tactile")]
    VisionTactile,
}

/// Machine-readable failure, printed as one JSON line on stderr.
#[derive(Debug, Serialize)]
struct Failure {
    kind: String,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<String>,
}

impl Failure {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            file: None,
            path: None,
            scenario: None,
        }
    }

    fn file(mut self, f: &Path) -> Self {
        self.file = Some(f.display().to_string());
        self
    }

    fn scenario(mut self, id: &str) -> Self {
        self.scenario = Some(id.into());
        self
    }
}

impl From<tacgraph_core::Error> for Failure {
    fn from(e: tacgraph_core::Error) -> Self {
        Failure::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new("io", e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::from(e).file(path))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut f = Failure::new("config", e.inner().to_string()).file(path);
        f.path = Some(e.path().to_string());
        f
    })
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(contents))
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| Failure::from(e).file(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::new("json", e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("TACGRAPH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::new("config", format!("TACGRAPH_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new("config", e.to_string()))
}

fn gen(config: Option<PathBuf>, out: &Path, seed: Option<u64>, noiseless: bool) -> CliResult<()> {
    let (mut cfg, base_dir) = match &config {
        Some(p) => (
            read_json::<GenConfig>(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (GenConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if noiseless {
        cfg = cfg.noiseless();
    }
    cfg.validate().map_err(|e| {
        let f = Failure::from(e);
        match &config {
            Some(p) => f.file(p),
            None => f,
        }
    })?;

    let (objects, env) = build_meshes(&cfg, &base_dir)?;
    let mesh_dir = out.join("meshes");
    fs::create_dir_all(&mesh_dir).map_err(|e| Failure::from(e).file(&mesh_dir))?;
    let env_rel = PathBuf::from("meshes/environment.obj");
    write_obj(&env, out.join(&env_rel))?;
    let mut rels = Vec::new();
    for (spec, mesh) in cfg.objects.iter().zip(&objects) {
        let rel = PathBuf::from(format!("meshes/{}.obj", spec.name));
        write_obj(mesh, out.join(&rel))?;
        rels.push(rel);
    }

    let jobs: Vec<(usize, usize)> = (0..objects.len())
        .flat_map(|j| (0..cfg.scenarios_per_object).map(move |i| (j, i)))
        .collect();
    let scenarios = jobs
        .par_iter()
        .map(|&(j, i)| {
            generate_scenario(&cfg, j, i, &objects[j], &env, rels[j].clone(), env_rel.clone())
                .map_err(|e| Failure::from(e).scenario(&format!("{}-{i:03}", cfg.objects[j].name)))
        })
        .collect::<CliResult<Vec<Scenario>>>()?;
    for s in &scenarios {
        write_json(&out.join(format!("{}.json", s.id)), s)?;
    }
    log::info!("wrote {} scenarios to {}", scenarios.len(), out.display());
    Ok(())
}

fn scenario_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::from(e).file(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::new("invalid_input", "no scenario files found").file(dir));
    }
    Ok(files)
}

fn run(dir: &Path, method: Method, mode: CloudMode, out: &Path, timing: bool) -> CliResult<()> {
    let files = scenario_files(dir)?;
    let scenarios = files
        .iter()
        .map(|p| {
            // Structural errors carry a JSON path; semantic ones come from validation.
            read_json::<Scenario>(p)?;
            read_scenario(p).map_err(|e| Failure::from(e).file(p))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut meshes: BTreeMap<PathBuf, Arc<TriangleMesh>> = BTreeMap::new();
    for s in &scenarios {
        for rel in [&s.object_mesh, &s.environment_mesh] {
            if !meshes.contains_key(rel) {
                let path = dir.join(rel);
                let m = tacgraph_core::load_mesh(&path).map_err(|e| Failure::from(e).file(&path))?;
                meshes.insert(rel.clone(), Arc::new(m));
            }
        }
    }

    let records = scenarios
        .par_iter()
        .map(|s| {
            let object = meshes[&s.object_mesh].clone();
            let env = meshes[&s.environment_mesh].clone();
            let problem = s.problem(object.clone(), env, mode);
            let start = Instant::now();
            let estimate = match method {
                Method::Tacgraph => run_tacgraph(&problem, &s.estimator),
                Method::Icp => run_icp_baseline(&problem, &s.estimator),
            }
            .map_err(|e| Failure::from(e).scenario(&s.id))?;
            let runtime = start.elapsed().as_secs_f64();
            let metrics = match s.ground_truth {
                Some(_) => Some(evaluate(&estimate, s, &object).map_err(|e| Failure::from(e).scenario(&s.id))?),
                None => None,
            };
            log::info!("{} {} done in {runtime:.2}s", s.id, method.as_str());
            Ok(ScenarioRecord {
                id: s.id.clone(),
                object: s.object.clone(),
                metrics,
                estimate,
                runtime_s: timing.then_some(runtime),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_json(out, &ResultsFile::new(method, mode, records))
}

fn report(results: &[PathBuf], out: &Path) -> CliResult<()> {
    let files = results
        .iter()
        .map(|p| {
            let f: ResultsFile = read_json(p)?;
            f.validate().map_err(|e| Failure::from(e).file(p))?;
            Ok(f)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let rows = aggregate(&files)?;
    let csv = to_csv(&rows);
    write_atomic(out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn selftest() -> CliResult<()> {
    let checks = diagnostics::run_all();
    for c in &checks {
        println!("{} {:<36} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new("selftest", format!("failed checks: {}", failed.join(", "))))
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Gen { config, out, seed, noiseless } => gen(config, &out, seed, noiseless),
        Command::Run { scenarios, method, mode, out, timing } => {
            let method = match method {
                MethodArg::Tacgraph => Method::Tacgraph,
                MethodArg::Icp => Method::Icp,
            };
            let mode = match mode {
                ModeArg::Tactile => CloudMode::Tactile,
                ModeArg::VisionTactile => CloudMode::VisionTactile,
            };
            run(&scenarios, method, mode, &out, timing)
        }
        Command::Report { results, out } => report(&results, &out),
        Command::Config => {
            let text = serde_json::to_string_pretty(&GenConfig::default()).map_err(|e| Failure::new("json", e.to_string()))?;
            println!("{text}");
            Ok(())
        }
        Command::Selftest => selftest(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let record = serde_json::json!({ "error": f });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
