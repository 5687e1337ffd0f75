//! Executes a schedule against moment data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposer::{decompose_222_with, noisyor_from_mixture, DecomposeOptions};
use crate::error::{Error, Result};
use crate::model::{all_param_ids, observable_param_ids, NegativeMoments, NetworkFile, NetworkStructure, NoisyOrParameters, ParamId};
use crate::moments::MomentSource;
use crate::scalar::{clip_leak, clip_probability, Scalar};
use crate::scheduler::{Schedule, ScheduleStep, StepKind};

/// Influences below this are treated as underflow.
pub const INFLUENCE_FLOOR: f64 = 1e-6;
/// Smallest accepted `|p (L − f_ij)|` in the pair solve.
pub const PAIR_EPS: f64 = 1e-8;

/// Parameter values known so far.
pub type Known<T> = BTreeMap<ParamId, T>;

/// Every parameter of a network as a lookup table.
pub fn known_from_params<T: Scalar>(structure: &NetworkStructure, params: &NoisyOrParameters<T>) -> Known<T> {
    all_param_ids(structure, true).into_iter().filter_map(|id| params.get(id).map(|v| (id, v))).collect()
}

fn lookup<T: Scalar>(known: &Known<T>, id: ParamId) -> Result<T> {
    known.get(&id).copied().ok_or(Error::MissingParameter(id))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerOptions {
    /// Joint cells down to `-negative_tol` are passed on to the decomposer.
    pub negative_tol: f64,
    pub decompose: DecomposeOptions,
    /// Retry failed steps on the schedule's alternate sets.
    pub retry_alternates: bool,
}

impl Default for LearnerOptions {
    /// Settings for empirical moments. With too few samples a triplet can
    /// yield conditionals or a mixture weight outside `[0, 1]`; these are
    /// clipped to `[1e-6, 1 − 1e-6]` instead of failing the step, and
    /// negative joint cells are passed through.
    fn default() -> Self {
        LearnerOptions {
            negative_tol: f64::INFINITY,
            decompose: DecomposeOptions { range_tol: f64::INFINITY, ..DecomposeOptions::default() },
            retry_alternates: false,
        }
    }
}

impl LearnerOptions {
    /// Tight settings for analytic moments.
    pub fn exact() -> Self {
        LearnerOptions {
            negative_tol: crate::model::DEFAULT_NEGATIVE_TOL,
            decompose: DecomposeOptions::default(),
            retry_alternates: false,
        }
    }
}

/// Divides disease `i`'s influence out of every subset's moment.
pub fn remove_influence<T: Scalar>(
    nm: &NegativeMoments<T>,
    structure: &NetworkStructure,
    i: usize,
    known: &Known<T>,
) -> Result<NegativeMoments<T>> {
    let touched: Vec<(usize, T)> = nm
        .ids()
        .iter()
        .enumerate()
        .filter(|(_, &j)| structure.has_edge(i, j))
        .map(|(b, &j)| lookup(known, ParamId::Failure(i, j)).map(|f| (b, f)))
        .collect::<Result<_>>()?;
    if touched.is_empty() {
        return Ok(nm.clone());
    }
    let p = lookup(known, ParamId::Prior(i))?;
    let mut out = nm.clone();
    for (mask, v) in out.values_mut().iter_mut().enumerate() {
        let prod: T = touched.iter().filter(|(b, _)| mask >> b & 1 == 1).map(|&(_, f)| f).product();
        let inf = T::one() - p + p * prod;
        if inf.as_f64() < INFLUENCE_FLOOR {
            return Err(Error::InfluenceUnderflow(inf.as_f64()));
        }
        *v = *v / inf;
    }
    Ok(out)
}

fn query<T: Scalar, S: MomentSource<T> + ?Sized>(
    source: &S,
    structure: &NetworkStructure,
    step: &ScheduleStep,
    known: &Known<T>,
) -> Result<NegativeMoments<T>> {
    let mut nm = source.negative_moments(&step.symptoms)?;
    if let Some(mask) = nm.values().iter().position(|&v| v <= T::zero()) {
        let subset = nm.ids().iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &j)| j).collect();
        return Err(Error::ZeroMoment(subset));
    }
    for &k in &step.adjust {
        nm = remove_influence(&nm, structure, k, known)?;
    }
    Ok(nm)
}

/// Prior and the three failures of a triplet step's coupling disease.
pub fn learn_triplet<T: Scalar, S: MomentSource<T> + ?Sized>(
    source: &S,
    structure: &NetworkStructure,
    step: &ScheduleStep,
    known: &Known<T>,
    opts: &LearnerOptions,
) -> Result<Vec<(ParamId, T)>> {
    let i = step.disease.filter(|_| step.kind == StepKind::Triplet && step.symptoms.len() == 3).ok_or_else(|| {
        Error::InvalidSchedule(format!("not a triplet step: {:?}", step.symptoms))
    })?;
    let nm = query(source, structure, step, known)?;
    let joint = nm.to_joint_with_tolerance(T::lit(opts.negative_tol))?;
    let mix = decompose_222_with(&joint, &opts.decompose)?;
    let t = noisyor_from_mixture(&mix)?;
    let mut out = vec![(ParamId::Prior(i), t.prior)];
    out.extend(mix.ids.iter().zip(t.failures).map(|(&j, f)| (ParamId::Failure(i, j), f)));
    Ok(out)
}

/// Failure into `k` from the pair ratio, given the prior and the known
/// failure into `j`: `f_k = (1 − p)(1 − L) / (p (L − f_j))` with
/// `L = M̄_jk / (M̄_j M̄_k) · (1 − p + p f_j)`. Clipped.
pub fn pair_failure<T: Scalar>(p: T, f_j: T, m_j: T, m_k: T, m_jk: T) -> Result<T> {
    let l = m_jk / (m_j * m_k) * (T::one() - p + p * f_j);
    let denom = p * (l - f_j);
    if !(denom.abs().as_f64() >= PAIR_EPS) {
        return Err(Error::DegeneratePair(denom.as_f64()));
    }
    Ok(clip_probability((T::one() - p) * (T::one() - l) / denom))
}

pub fn learn_pair<T: Scalar, S: MomentSource<T> + ?Sized>(
    source: &S,
    structure: &NetworkStructure,
    step: &ScheduleStep,
    known: &Known<T>,
) -> Result<(ParamId, T)> {
    let (Some(i), Some(anchor)) = (step.disease, step.pair_anchor()) else {
        return Err(Error::InvalidSchedule(format!("not a pair step: {:?}", step.symptoms)));
    };
    let &target = step.symptoms.iter().find(|&&j| j != anchor).ok_or_else(|| Error::InvalidSchedule("pair without target".into()))?;
    let p = lookup(known, ParamId::Prior(i))?;
    let f_j = lookup(known, ParamId::Failure(i, anchor))?;
    let nm = query(source, structure, step, known)?;
    let m = |set: &[usize]| nm.get(set).expect("subset of the pair");
    let f = pair_failure(p, f_j, m(&[anchor]), m(&[target]), nm.by_mask(3))?;
    Ok((ParamId::Failure(i, target), f))
}

/// `ν_j = 1 − M̄_j / ∏ I_{i,j}` over the parents of `j`, clipped to
/// `[0, 1 − 1e-6]`.
pub fn learn_noise<T: Scalar, S: MomentSource<T> + ?Sized>(
    source: &S,
    structure: &NetworkStructure,
    j: usize,
    known: &Known<T>,
) -> Result<(ParamId, T)> {
    structure.check_symptoms(&[j])?;
    let m_j = source.negative_moments(&[j])?.by_mask(1);
    if m_j <= T::zero() {
        return Err(Error::ZeroMoment(vec![j]));
    }
    let mut prod = T::one();
    for &k in structure.parents(j) {
        let p = lookup(known, ParamId::Prior(k))?;
        let f = lookup(known, ParamId::Failure(k, j))?;
        prod = prod * (T::one() - p + p * f);
    }
    if prod.as_f64() < INFLUENCE_FLOOR {
        return Err(Error::InfluenceUnderflow(prod.as_f64()));
    }
    Ok((ParamId::Leak(j), clip_leak(T::one() - m_j / prod)))
}

fn run_step<T: Scalar, S: MomentSource<T> + ?Sized>(
    source: &S,
    structure: &NetworkStructure,
    step: &ScheduleStep,
    known: &Known<T>,
    opts: &LearnerOptions,
) -> Result<Vec<(ParamId, T)>> {
    match step.kind {
        StepKind::Triplet => learn_triplet(source, structure, step, known, opts),
        StepKind::Pair => learn_pair(source, structure, step, known).map(|x| vec![x]),
        StepKind::Noise => learn_noise(source, structure, step.symptoms[0], known).map(|x| vec![x]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Learned<T> {
    pub value: T,
    pub depth: usize,
    /// Index of the producing step within its round.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedStep {
    pub round: usize,
    pub step: usize,
    pub kind: StepKind,
    pub symptoms: Vec<usize>,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport<T> {
    /// Learned values; anything unlearned holds the uniform-baseline value.
    pub params: NoisyOrParameters<T>,
    pub learned: BTreeMap<ParamId, Learned<T>>,
    /// Estimates of already-learned parameters produced by later steps.
    pub secondary: Vec<(ParamId, Learned<T>)>,
    pub failed_steps: Vec<FailedStep>,
    pub unlearned: Vec<ParamId>,
}

#[derive(Serialize, Deserialize)]
pub struct ReportFile {
    pub parameters: NetworkFile,
    pub depths: Vec<(ParamId, usize)>,
    pub failed_steps: Vec<FailedStep>,
    pub unlearned: Vec<ParamId>,
}

impl<T: Scalar> EstimationReport<T> {
    pub fn depth(&self, id: ParamId) -> Option<usize> {
        self.learned.get(&id).map(|l| l.depth)
    }

    pub fn value(&self, id: ParamId) -> Option<T> {
        self.learned.get(&id).map(|l| l.value)
    }

    pub fn known(&self) -> Known<T> {
        self.learned.iter().map(|(&id, l)| (id, l.value)).collect()
    }

    pub fn to_file(&self, structure: &NetworkStructure) -> ReportFile {
        ReportFile {
            parameters: NetworkFile::new(structure, Some(&self.params)),
            depths: self.learned.iter().map(|(&id, l)| (id, l.depth)).collect(),
            failed_steps: self.failed_steps.clone(),
            unlearned: self.unlearned.clone(),
        }
    }

    pub fn write(&self, structure: &NetworkStructure, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &self.to_file(structure))?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Parameters used when nothing is learned: every prior and failure 0.5, no
/// leak.
pub fn uniform_baseline<T: Scalar>(structure: &NetworkStructure) -> NoisyOrParameters<T> {
    NoisyOrParameters::uniform(structure, T::lit(0.5), T::lit(0.5), T::zero())
}

/// Runs every step in round order. Steps of one round see only parameters
/// from earlier rounds and are evaluated in parallel; their results are
/// committed in schedule order, and the first estimate of a parameter wins.
pub fn execute_schedule<T: Scalar, S: MomentSource<T> + ?Sized>(
    schedule: &Schedule,
    structure: &NetworkStructure,
    source: &S,
    opts: &LearnerOptions,
) -> Result<EstimationReport<T>> {
    for set in schedule.stat_request().sets() {
        if !source.covers(set) {
            return Err(Error::UnknownSet(set.clone()));
        }
    }
    let mut learned: BTreeMap<ParamId, Learned<T>> = BTreeMap::new();
    let mut secondary = Vec::new();
    let mut failed_steps = Vec::new();
    for (r, round) in schedule.rounds().iter().enumerate() {
        let known: Known<T> = learned.iter().map(|(&id, l)| (id, l.value)).collect();
        let results: Vec<Result<Vec<(ParamId, T)>>> = round
            .par_iter()
            .map(|step| {
                let first = run_step(source, structure, step, &known, opts);
                if first.is_ok() || !opts.retry_alternates {
                    return first;
                }
                step.alternates
                    .iter()
                    .map(|alt| run_step(source, structure, &step.with_alternate(alt), &known, opts))
                    .find(Result::is_ok)
                    .unwrap_or(first)
            })
            .collect();
        for (s, (step, result)) in round.iter().zip(results).enumerate() {
            match result {
                Ok(values) => {
                    for (id, value) in values {
                        let entry = Learned { value, depth: r, step: s };
                        if learned.contains_key(&id) {
                            secondary.push((id, entry));
                        } else {
                            learned.insert(id, entry);
                        }
                    }
                }
                Err(e) => failed_steps.push(FailedStep {
                    round: r,
                    step: s,
                    kind: step.kind,
                    symptoms: step.symptoms.clone(),
                    error: e.kind().to_string(),
                    message: e.to_string(),
                }),
            }
        }
    }
    let mut params = uniform_baseline::<T>(structure);
    for (&id, l) in &learned {
        params.set(id, l.value)?;
    }
    let unlearned = observable_param_ids(structure).into_iter().filter(|id| !learned.contains_key(id)).collect();
    Ok(EstimationReport { params, learned, secondary, failed_steps, unlearned })
}

/// Total absolute error over every prior, edge failure and leak.
pub fn l1_error<T: Scalar>(
    structure: &NetworkStructure,
    estimate: &NoisyOrParameters<T>,
    truth: &NoisyOrParameters<T>,
) -> Result<T> {
    if !estimate.matches(structure) || !truth.matches(structure) {
        return Err(Error::StructureMismatch);
    }
    Ok(all_param_ids(structure, true)
        .into_iter()
        .map(|id| (estimate.get(id).unwrap() - truth.get(id).unwrap()).abs())
        .sum())
}

/// Error of the model learned from `source` and of the uniform baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Summary<T> {
    pub estimate: T,
    pub baseline: T,
}

pub fn l1_summary<T: Scalar>(
    structure: &NetworkStructure,
    estimate: &NoisyOrParameters<T>,
    truth: &NoisyOrParameters<T>,
) -> Result<L1Summary<T>> {
    Ok(L1Summary {
        estimate: l1_error(structure, estimate, truth)?,
        baseline: l1_error(structure, &uniform_baseline(structure), truth)?,
    })
}
