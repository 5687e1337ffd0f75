//! Reproducible experiments: recovery error against sample size, the
//! remaining-parameter curve of a schedule, and a timing run on a large
//! random network.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::em::{em_best_of, EmOptions};
use crate::error::Result;
use crate::learner::{execute_schedule, l1_error, uniform_baseline, EstimationReport, LearnerOptions};
use crate::model::{NetworkStructure, NoisyOrParameters};
use crate::moments::collect;
use crate::sampler::{derive_seed, draw_samples, random_parameters, random_structure, GeneratorConfig, ParentCount, PriorLaw, SampleBatch};
use crate::scheduler::{find_schedule, Schedule, SchedulerOptions};

/// Seed of the parameters of network `k`.
pub fn network_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, k as u64)
}

/// Seed of the `n`-row sample drawn from a network with parameter seed
/// `network_seed`.
pub fn sample_seed(network_seed: u64, n: usize) -> u64 {
    derive_seed(network_seed ^ 0x5a5a_5a5a_5a5a_5a5a, n as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Mom,
    Em,
    Uniform,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mom => "mom",
            Method::Em => "em",
            Method::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub structure: NetworkStructure,
    pub networks: usize,
    pub n_grid: Vec<usize>,
    pub seed: u64,
    /// Parameter law; its seed is replaced per network.
    pub generator: GeneratorConfig,
    pub scheduler: SchedulerOptions,
    pub learner: LearnerOptions,
    /// Random starts for EM; `None` skips EM.
    pub em_inits: Option<usize>,
    pub em: EmOptions,
}

impl RecoveryConfig {
    pub fn new(structure: NetworkStructure) -> Self {
        RecoveryConfig {
            structure,
            networks: 10,
            n_grid: vec![100, 10_000, 1_000_000],
            seed: 0,
            generator: GeneratorConfig::default(),
            scheduler: SchedulerOptions::default(),
            learner: LearnerOptions::default(),
            em_inits: None,
            em: EmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub network: usize,
    pub n_samples: usize,
    pub method: Method,
    pub l1: f64,
    /// Wall-clock seconds of the method itself (sampling excluded).
    pub seconds: f64,
    /// EM only: whether every log-likelihood trace was non-decreasing.
    pub monotone: Option<bool>,
}

/// Method of moments on a sample: collect the scheduled statistics and run
/// the schedule.
pub fn learn_from_samples(
    structure: &NetworkStructure,
    schedule: &Schedule,
    batch: &SampleBatch,
    opts: &LearnerOptions,
) -> Result<EstimationReport<f64>> {
    let stats = collect(batch, &schedule.stat_request())?;
    execute_schedule(schedule, structure, &stats, opts)
}

/// One row per (network, sample size, method), sorted in that order.
pub fn run_recovery_experiment(config: &RecoveryConfig) -> Result<Vec<RecoveryRow>> {
    let structure = &config.structure;
    let schedule = find_schedule(structure, &config.scheduler);
    let jobs: Vec<(usize, usize)> =
        (0..config.networks).flat_map(|k| config.n_grid.iter().map(move |&n| (k, n))).collect();
    let per_job: Vec<Vec<RecoveryRow>> = jobs
        .par_iter()
        .map(|&(k, n)| -> Result<Vec<RecoveryRow>> {
            let pseed = network_seed(config.seed, k);
            let truth: NoisyOrParameters<f64> =
                random_parameters(structure, &GeneratorConfig { seed: pseed, ..config.generator.clone() })?;
            let sseed = sample_seed(pseed, n);
            let batch = draw_samples(structure, &truth, n, sseed);
            let row = |method, l1, seconds, monotone| RecoveryRow { network: k, n_samples: n, method, l1, seconds, monotone };

            let start = Instant::now();
            let report = learn_from_samples(structure, &schedule, &batch, &config.learner)?;
            let mut rows = vec![row(Method::Mom, l1_error(structure, &report.params, &truth)?, start.elapsed().as_secs_f64(), None)];

            if let Some(inits) = config.em_inits {
                let start = Instant::now();
                let (best, traces) = em_best_of::<f64>(structure, &batch, inits, derive_seed(sseed, 1), &config.em)?;
                let monotone = traces.iter().all(|t| t.is_monotone(1e-12));
                rows.push(row(Method::Em, l1_error(structure, &best.params, &truth)?, start.elapsed().as_secs_f64(), Some(monotone)));
            }

            let baseline = uniform_baseline::<f64>(structure);
            rows.push(row(Method::Uniform, l1_error(structure, &baseline, &truth)?, 0.0, None));
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<RecoveryRow> = per_job.into_iter().flatten().collect();
    rows.sort_by(|a, b| (a.network, a.n_samples, a.method).cmp(&(b.network, b.n_samples, b.method)));
    Ok(rows)
}

pub const RECOVERY_HEADER: &str = "network,n_samples,method,l1,seconds";

/// CSV text; `timing = false` leaves the seconds column empty so reruns are
/// byte-identical.
pub fn recovery_csv(rows: &[RecoveryRow], timing: bool) -> String {
    let mut out = format!("{RECOVERY_HEADER}\n");
    for r in rows {
        let secs = if timing { format!("{:.6}", r.seconds) } else { String::new() };
        writeln!(out, "{},{},{},{:.12e},{}", r.network, r.n_samples, r.method.name(), r.l1, secs).unwrap();
    }
    out
}

/// Median of the `method` error at each sample size.
pub fn median_by_n(rows: &[RecoveryRow], method: Method) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n_samples).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let v: Vec<f64> = rows.iter().filter(|r| r.n_samples == n && r.method == method).map(|r| r.l1).collect();
            (n, median(v))
        })
        .collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        (v[k - 1] + v[k]) / 2.0
    }
}

/// Remaining non-leak parameters after each depth, for the triplet-only
/// schedule and the schedule with pairs.
pub fn run_depth_report(structure: &NetworkStructure) -> Vec<(&'static str, i64, usize)> {
    let mut out = Vec::new();
    for (name, use_pairs) in [("triplets", false), ("pairs", true)] {
        let schedule = find_schedule(structure, &SchedulerOptions { use_pairs, alternates: 0 });
        out.extend(schedule.remaining_curve(structure, false).into_iter().map(|(d, left)| (name, d, left)));
    }
    out
}

pub fn depth_report_csv(rows: &[(&str, i64, usize)]) -> String {
    let mut out = String::from("schedule,depth,remaining\n");
    for (name, d, left) in rows {
        writeln!(out, "{name},{d},{left}").unwrap();
    }
    out
}

/// A sparse random network with power-law priors and Poisson in-degree.
pub fn qmr_like(n: usize, m: usize, mean_in_degree: f64, seed: u64) -> Result<(NetworkStructure, NoisyOrParameters<f64>)> {
    let structure = random_structure(n, m, ParentCount::Poisson { mean: mean_in_degree }, seed)?;
    let cfg = GeneratorConfig { seed, prior_law: PriorLaw::Zipf, ..Default::default() };
    let params = random_parameters(&structure, &cfg)?;
    Ok((structure, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub schedule_seconds: f64,
    pub sample_seconds: f64,
    pub collect_seconds: f64,
    pub solve_seconds: f64,
    pub n_steps: usize,
    pub n_sets: usize,
    pub learned: usize,
    pub unlearnable: usize,
    pub max_depth: Option<usize>,
    pub l1: f64,
    pub baseline_l1: f64,
}

/// Schedule search, one pass of collection, and solving on a QMR-like
/// network, timing each phase.
pub fn run_scaling(
    structure: &NetworkStructure,
    truth: &NoisyOrParameters<f64>,
    n_samples: usize,
    seed: u64,
    scheduler: &SchedulerOptions,
) -> Result<ScalingReport> {
    let t = Instant::now();
    let schedule = find_schedule(structure, scheduler);
    let schedule_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let batch = draw_samples(structure, truth, n_samples, seed);
    let sample_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let request = schedule.stat_request();
    let stats = collect(&batch, &request)?;
    let collect_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let report = execute_schedule(&schedule, structure, &stats, &LearnerOptions::default())?;
    let solve_seconds = t.elapsed().as_secs_f64();

    Ok(ScalingReport {
        schedule_seconds,
        sample_seconds,
        collect_seconds,
        solve_seconds,
        n_steps: schedule.n_steps(),
        n_sets: request.len(),
        learned: report.learned.len(),
        unlearnable: schedule.unlearnable().len(),
        max_depth: schedule.max_depth(false),
        l1: l1_error(structure, &report.params, truth)?,
        baseline_l1: l1_error(structure, &uniform_baseline(structure), truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::{fig1, fig2};

    fn small() -> RecoveryConfig {
        RecoveryConfig { networks: 3, n_grid: vec![100, 10_000], ..RecoveryConfig::new(fig1()) }
    }

    #[test]
    fn rows_sorted_and_complete() {
        let rows = run_recovery_experiment(&small()).unwrap();
        assert_eq!(rows.len(), 3 * 2 * 2);
        assert_eq!(rows[0].method, Method::Mom);
        assert_eq!(rows[1].method, Method::Uniform);
        assert!(rows.windows(2).all(|w| (w[0].network, w[0].n_samples) <= (w[1].network, w[1].n_samples)));
    }

    #[test]
    fn deterministic_without_timing() {
        let a = recovery_csv(&run_recovery_experiment(&small()).unwrap(), false);
        let b = recovery_csv(&run_recovery_experiment(&small()).unwrap(), false);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_networks_gives_header() {
        let cfg = RecoveryConfig { networks: 0, ..small() };
        assert_eq!(recovery_csv(&run_recovery_experiment(&cfg).unwrap(), true), format!("{RECOVERY_HEADER}\n"));
    }

    #[test]
    fn em_rows_present() {
        let cfg = RecoveryConfig { networks: 1, n_grid: vec![1000], em_inits: Some(2), ..small() };
        let rows = run_recovery_experiment(&cfg).unwrap();
        let methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
        assert_eq!(methods, [Method::Mom, Method::Em, Method::Uniform]);
        assert_eq!(rows[1].monotone, Some(true));
    }

    #[test]
    fn depth_reports() {
        let csv = depth_report_csv(&run_depth_report(&fig1()));
        assert_eq!(csv, "schedule,depth,remaining\ntriplets,-1,9\ntriplets,0,4\ntriplets,1,0\npairs,-1,9\npairs,0,4\npairs,1,0\n");
        let rows = run_depth_report(&fig2());
        assert!(rows.iter().all(|r| r.2 == 10));
        let empty = NetworkStructure::new(0, 0, []).unwrap();
        assert_eq!(run_depth_report(&empty), vec![("triplets", -1, 0), ("pairs", -1, 0)]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn small_scaling_run() {
        let (s, p) = qmr_like(20, 60, 3.0, 1).unwrap();
        let r = run_scaling(&s, &p, 5000, 2, &SchedulerOptions::default()).unwrap();
        assert_eq!(r.n_sets, run_scaling(&s, &p, 10, 2, &SchedulerOptions::default()).unwrap().n_sets);
        assert!(r.learned > 0);
    }
}
