use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use noisyor::em::{em_best_of, EmOptions};
use noisyor::experiment::{depth_report_csv, recovery_csv, run_depth_report, run_recovery_experiment, RecoveryConfig};
use noisyor::identifiability::{
    check_identifiability, cleanup_grid_search, cleanup_request, find_anchor, identifiability_table, table_csv, AdjustedSource,
    IdentifiabilityOptions,
};
use noisyor::learner::{execute_schedule, l1_summary, Known, LearnerOptions, ReportFile};
use noisyor::model::presets::{fig1, fig2};
use noisyor::model::{read_network, write_network, NetworkFile, NoisyOrParameters};
use noisyor::moments::{collect, ExactMoments, MomentSource, StatStore};
use noisyor::sampler::{draw_samples, random_parameters, random_structure, read_samples, GeneratorConfig, ParentCount, PriorLaw};
use noisyor::scheduler::{certificate, find_schedule, Schedule, SchedulerOptions};
use noisyor::{NetworkStructure, Parameters};

/// Method-of-moments learning for noisy-or networks.
///
/// Set NOISYOR_THREADS to fix the worker thread count.
#[derive(Parser)]
#[command(name = "noisyor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random parameters (and optionally a random structure).
    Generate(GenerateArgs),
    /// Draw samples from a parameterized network.
    Sample(SampleArgs),
    /// Count the statistics a schedule needs.
    Collect(CollectArgs),
    /// Find a learning schedule for a structure.
    Schedule(ScheduleArgs),
    /// Learn parameters from statistics or samples.
    Learn(LearnArgs),
    /// L1 error of an estimate against the true parameters.
    Eval(EvalArgs),
    /// Exact EM from random starts.
    Em(EmArgs),
    /// Minimal identifying moment order for fully connected networks.
    IdentifiabilityTable(TableArgs),
    /// Grid search for two parents that no schedule can separate.
    Cleanup(CleanupArgs),
    /// Recovery error against sample size, as CSV.
    Recovery(RecoveryArgs),
    /// Parameters left to learn after each depth, as CSV.
    DepthReport(DepthArgs),
}

#[derive(Args)]
struct StructureArg {
    /// Network file, or `fig1` / `fig2`.
    #[arg(long)]
    structure: String,
}

#[derive(Args)]
struct GenerateArgs {
    /// Network file or preset; omit to draw a random structure.
    #[arg(long)]
    structure: Option<String>,
    #[arg(long, default_value_t = 10)]
    diseases: usize,
    #[arg(long, default_value_t = 30)]
    symptoms: usize,
    /// Mean number of parents per symptom of a random structure.
    #[arg(long, default_value_t = 3.0)]
    in_degree: f64,
    #[arg(long, default_value_t = 0.2)]
    lo: f64,
    #[arg(long, default_value_t = 0.8)]
    hi: f64,
    #[arg(long, default_value_t = 0.01)]
    leak: f64,
    /// Power-law priors instead of uniform ones.
    #[arg(long)]
    zipf: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `.bin` writes packed rows, anything else CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScheduleOpts {
    /// Schedule file; computed from the structure when absent.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    use_pairs: bool,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    structure: StructureArg,
    #[command(flatten)]
    schedule: ScheduleOpts,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    structure: StructureArg,
    #[arg(long)]
    use_pairs: bool,
    /// Fallback sets to record per step.
    #[arg(long, default_value_t = 0)]
    alternates: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    structure: StructureArg,
    #[command(flatten)]
    schedule: ScheduleOpts,
    #[arg(long, conflicts_with = "samples", required_unless_present_any = ["samples", "params"])]
    stats: Option<PathBuf>,
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Read the analytic moments of this parameter file instead of data.
    #[arg(long, conflicts_with_all = ["stats", "samples"])]
    params: Option<PathBuf>,
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// True parameters.
    #[arg(long)]
    params: PathBuf,
    /// Network or report file holding the estimate.
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmArgs {
    /// Network file; only its structure is used.
    #[arg(long)]
    structure: String,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value_t = 4)]
    em_inits: usize,
    #[arg(long, default_value_t = 1000)]
    em_max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, default_value_t = 7)]
    max_n: usize,
    #[arg(long, default_value_t = 7)]
    max_m: usize,
    #[arg(long)]
    max_order: Option<usize>,
    /// Leave leaks out of the parameter count.
    #[arg(long)]
    no_leaks: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check a single network file instead of the table.
    #[arg(long)]
    structure: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CleanupArgs {
    #[command(flatten)]
    structure: StructureArg,
    /// Use the analytic moments of this parameter file.
    #[arg(long, required_unless_present = "samples")]
    params: Option<PathBuf>,
    #[arg(long, conflicts_with = "params")]
    samples: Option<PathBuf>,
    /// Report whose parameters are divided out before the search.
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// The two parents, as `a,b`; defaults to the schedule's residual.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    parents: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.005)]
    grid_step: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoveryArgs {
    #[command(flatten)]
    structure: StructureArg,
    /// Number of random networks.
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "100,10000,1000000")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    use_pairs: bool,
    /// Random starts for exact EM; 0 skips EM.
    #[arg(long, default_value_t = 0)]
    em_inits: usize,
    #[arg(long, default_value_t = 1000)]
    em_max_iters: usize,
    #[arg(long, default_value_t = 0.2)]
    lo: f64,
    #[arg(long, default_value_t = 0.8)]
    hi: f64,
    #[arg(long, default_value_t = 0.01)]
    leak: f64,
    /// Leave the seconds column empty.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DepthArgs {
    #[command(flatten)]
    structure: StructureArg,
    #[arg(long)]
    out: PathBuf,
}

fn load_structure(spec: &str) -> Result<NetworkStructure> {
    match spec {
        "fig1" => Ok(fig1()),
        "fig2" => Ok(fig2()),
        path => Ok(read_network::<f64>(path).with_context(|| format!("reading {path}"))?.0),
    }
}

fn load_params(path: &Path) -> Result<(NetworkStructure, Parameters)> {
    let (s, p) = read_network::<f64>(path).with_context(|| format!("reading {}", path.display()))?;
    match p {
        Some(p) => Ok((s, p)),
        None => bail!("{} has no parameters", path.display()),
    }
}

/// Checks inputs exist and output directories are writable before any work.
fn check_paths<'a>(inputs: impl IntoIterator<Item = &'a Path>, outputs: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in inputs {
        if !p.is_file() {
            bail!("input {} does not exist", p.display());
        }
    }
    for p in outputs {
        let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !dir.is_dir() {
            bail!("output directory {} does not exist", dir.display());
        }
    }
    Ok(())
}

fn structure_inputs(spec: &str) -> Option<&Path> {
    (spec != "fig1" && spec != "fig2").then(|| Path::new(spec))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("writing {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn timing(phase: &str, start: Instant) {
    eprintln!("{}", serde_json::json!({ "phase": phase, "seconds": start.elapsed().as_secs_f64() }));
}

fn get_schedule(structure: &NetworkStructure, opts: &ScheduleOpts) -> Result<Schedule> {
    match &opts.schedule {
        Some(path) => {
            let s = Schedule::read(path).with_context(|| format!("reading {}", path.display()))?;
            s.validate(structure)?;
            Ok(s)
        }
        None => Ok(find_schedule(structure, &SchedulerOptions { use_pairs: opts.use_pairs, alternates: 0 })),
    }
}

fn params_json(known: &Known<f64>) -> serde_json::Value {
    known.iter().map(|(id, v)| serde_json::json!({ "param": id.to_string(), "value": v })).collect()
}

fn generate(a: GenerateArgs) -> Result<()> {
    check_paths(a.structure.as_deref().and_then(structure_inputs), [a.out.as_path()])?;
    let structure = match &a.structure {
        Some(spec) => load_structure(spec)?,
        None => random_structure(a.diseases, a.symptoms, ParentCount::Poisson { mean: a.in_degree }, a.seed)?,
    };
    let cfg = GeneratorConfig {
        seed: a.seed,
        lo: a.lo,
        hi: a.hi,
        leak: a.leak,
        prior_law: if a.zipf { PriorLaw::Zipf } else { PriorLaw::Uniform },
        ..Default::default()
    };
    let params: Parameters = random_parameters(&structure, &cfg)?;
    write_network(&a.out, &structure, Some(&params))?;
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    check_paths([a.params.as_path()], [a.out.as_path()])?;
    let (s, p) = load_params(&a.params)?;
    let batch = draw_samples(&s, &p, a.n_samples, a.seed);
    let file = BufWriter::new(fs::File::create(&a.out)?);
    if a.out.extension().is_some_and(|e| e == "bin") {
        batch.write_packed(file)?;
    } else {
        batch.write_csv(file)?;
    }
    Ok(())
}

fn collect_cmd(a: CollectArgs) -> Result<()> {
    let inputs = structure_inputs(&a.structure.structure).into_iter().chain([a.samples.as_path()]).chain(a.schedule.schedule.as_deref());
    check_paths(inputs, [a.out.as_path()])?;
    let structure = load_structure(&a.structure.structure)?;
    let schedule = get_schedule(&structure, &a.schedule)?;
    let batch = read_samples(&a.samples)?;
    collect(&batch, &schedule.stat_request())?.write(&a.out)?;
    Ok(())
}

fn schedule_cmd(a: ScheduleArgs) -> Result<()> {
    check_paths(structure_inputs(&a.structure.structure), [a.out.as_path()])?;
    let structure = load_structure(&a.structure.structure)?;
    let start = Instant::now();
    let schedule = find_schedule(&structure, &SchedulerOptions { use_pairs: a.use_pairs, alternates: a.alternates });
    timing("schedule", start);
    schedule.write(&a.out)?;
    eprintln!("{}", serde_json::to_string(&certificate(&schedule))?);
    Ok(())
}

fn learn(a: LearnArgs) -> Result<()> {
    let data = a.stats.as_deref().or(a.samples.as_deref()).or(a.params.as_deref());
    let inputs = structure_inputs(&a.structure.structure).into_iter().chain(data).chain(a.schedule.schedule.as_deref());
    check_paths(inputs, [a.out.as_path()])?;
    let structure = load_structure(&a.structure.structure)?;
    let report = |phase: &str, start: Instant| {
        if !a.no_timing {
            timing(phase, start)
        }
    };
    let start = Instant::now();
    let schedule = get_schedule(&structure, &a.schedule)?;
    report("schedule", start);
    let est = if let Some(path) = &a.params {
        let (_, truth) = load_params(path)?;
        let start = Instant::now();
        let r = execute_schedule(&schedule, &structure, &ExactMoments::new(&structure, &truth), &LearnerOptions::exact())?;
        report("solve", start);
        r
    } else {
        let start = Instant::now();
        let stats = match (&a.stats, &a.samples) {
            (Some(p), _) => StatStore::read(p)?,
            (None, Some(p)) => collect(&read_samples(p)?, &schedule.stat_request())?,
            _ => unreachable!("clap requires a data source"),
        };
        report("collect", start);
        let start = Instant::now();
        let r = execute_schedule(&schedule, &structure, &stats, &LearnerOptions::default())?;
        report("solve", start);
        r
    };
    est.write(&structure, &a.out)?;
    Ok(())
}

fn read_estimate(path: &Path) -> Result<Parameters> {
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let file: NetworkFile = match value.get("parameters") {
        Some(inner) => serde_json::from_value::<ReportFile>(value.clone()).map(|r| r.parameters).or_else(|_| serde_json::from_value(inner.clone()))?,
        None => serde_json::from_value(value)?,
    };
    file.parameters()?.with_context(|| format!("{} has no parameters", path.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    check_paths([a.params.as_path(), a.estimate.as_path()], a.out.as_deref())?;
    let (s, truth) = load_params(&a.params)?;
    let est: NoisyOrParameters<f64> = read_estimate(&a.estimate)?;
    let summary = l1_summary(&s, &est, &truth)?;
    let value = serde_json::json!({ "l1": summary.estimate, "baseline": summary.baseline });
    match &a.out {
        Some(p) => write_json(p, &value),
        None => {
            println!("{value}");
            Ok(())
        }
    }
}

fn em(a: EmArgs) -> Result<()> {
    check_paths(structure_inputs(&a.structure).into_iter().chain([a.samples.as_path()]), [a.out.as_path()])?;
    let structure = load_structure(&a.structure)?;
    let batch = read_samples(&a.samples)?;
    let opts = EmOptions { max_iters: a.em_max_iters, tol: a.tol };
    let (best, traces) = em_best_of::<f64>(&structure, &batch, a.em_inits, a.seed, &opts)?;
    let value = serde_json::json!({
        "parameters": NetworkFile::new(&structure, Some(&best.params)),
        "loglik": best.loglik,
        "iterations": best.iterations,
        "converged": best.converged,
        "final_loglik_per_init": traces.iter().map(|t| t.final_loglik()).collect::<Vec<_>>(),
    });
    write_json(&a.out, &value)
}

fn table(a: TableArgs) -> Result<()> {
    check_paths(a.structure.as_deref().and_then(structure_inputs), [a.out.as_path()])?;
    let opts = IdentifiabilityOptions {
        max_order: a.max_order.unwrap_or(usize::MAX),
        seed: a.seed,
        include_leaks: !a.no_leaks,
        ..Default::default()
    };
    match &a.structure {
        Some(spec) => {
            let verdict = check_identifiability(&load_structure(spec)?, &opts);
            let mut csv = String::from("order,rank,n_params,n_constraints,full_rank\n");
            for o in &verdict.orders {
                csv.push_str(&format!("{},{},{},{},{}\n", o.order, o.rank, o.n_params, o.n_constraints, o.full_rank));
            }
            eprintln!("{}", serde_json::json!({ "minimal_order": verdict.minimal_order }));
            write_text(&a.out, &csv)
        }
        None => write_text(&a.out, &table_csv(&identifiability_table(a.max_n, a.max_m, &opts))),
    }
}

fn cleanup(a: CleanupArgs) -> Result<()> {
    let data = a.params.as_deref().or(a.samples.as_deref());
    let inputs = structure_inputs(&a.structure.structure).into_iter().chain(data).chain(a.estimate.as_deref());
    check_paths(inputs, [a.out.as_path()])?;
    let structure = load_structure(&a.structure.structure)?;
    let (pa, pb) = match a.parents.as_deref() {
        Some(&[x, y]) => (x, y),
        _ => match certificate(&find_schedule(&structure, &SchedulerOptions::default())) {
            noisyor::scheduler::Verdict::Residual { parents, .. } if parents.len() == 2 => (parents[0], parents[1]),
            _ => bail!("pass --parents: the residual is not exactly two parents"),
        },
    };
    let anchor = find_anchor(&structure, pa, pb)?;
    let known: Known<f64> = match &a.estimate {
        Some(p) => read_estimate(p).map(|est| noisyor::learner::known_from_params(&structure, &est))?,
        None => Known::new(),
    };
    let remove: Vec<usize> = (0..structure.n_diseases()).filter(|&k| k != pa && k != pb && known.contains_key(&noisyor::ParamId::Prior(k))).collect();
    let run = |inner: &dyn MomentSource<f64>| {
        let src = AdjustedSource { inner, structure: &structure, known: known.clone(), remove: remove.clone() };
        cleanup_grid_search(&structure, &src, &anchor, a.grid_step)
    };
    let res = match (&a.params, &a.samples) {
        (Some(p), _) => {
            let (_, truth) = load_params(p)?;
            run(&ExactMoments::new(&structure, &truth))?
        }
        (None, Some(p)) => run(&collect(&read_samples(p)?, &cleanup_request(&structure, pa, pb))?)?,
        _ => unreachable!("clap requires a data source"),
    };
    let value = serde_json::json!({
        "parents": [pa, pb],
        "anchor_symptom": anchor.symptom,
        "parameters": params_json(&res.params),
        "objective": res.objective,
        "grid_point": res.grid_point,
        "refined_point": res.refined_point,
        "evaluated": res.evaluated,
    });
    write_json(&a.out, &value)
}

fn recovery(a: RecoveryArgs) -> Result<()> {
    check_paths(structure_inputs(&a.structure.structure), [a.out.as_path()])?;
    let structure = load_structure(&a.structure.structure)?;
    let cfg = RecoveryConfig {
        networks: a.reps,
        n_grid: a.n_grid,
        seed: a.seed,
        generator: GeneratorConfig { lo: a.lo, hi: a.hi, leak: a.leak, ..Default::default() },
        scheduler: SchedulerOptions { use_pairs: a.use_pairs, alternates: 0 },
        em_inits: (a.em_inits > 0).then_some(a.em_inits),
        em: EmOptions { max_iters: a.em_max_iters, ..Default::default() },
        ..RecoveryConfig::new(structure)
    };
    cfg.generator.validate()?;
    let rows = run_recovery_experiment(&cfg)?;
    write_text(&a.out, &recovery_csv(&rows, !a.no_timing))
}

fn depth_report(a: DepthArgs) -> Result<()> {
    check_paths(structure_inputs(&a.structure.structure), [a.out.as_path()])?;
    let structure = load_structure(&a.structure.structure)?;
    write_text(&a.out, &depth_report_csv(&run_depth_report(&structure)))
}

fn run(cli: Cli) -> Result<()> {
    if let Ok(v) = std::env::var("NOISYOR_THREADS") {
        let n: usize = v.parse().with_context(|| format!("NOISYOR_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Sample(a) => sample(a),
        Command::Collect(a) => collect_cmd(a),
        Command::Schedule(a) => schedule_cmd(a),
        Command::Learn(a) => learn(a),
        Command::Eval(a) => eval(a),
        Command::Em(a) => em(a),
        Command::IdentifiabilityTable(a) => table(a),
        Command::Cleanup(a) => cleanup(a),
        Command::Recovery(a) => recovery(a),
        Command::DepthReport(a) => depth_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<noisyor::Error>().map_or("error", |e| e.kind());
            eprintln!("{}", serde_json::json!({ "error": kind, "message": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
