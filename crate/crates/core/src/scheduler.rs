//! Structure-only planning: which triplets, pairs and leak steps learn which
//! parameters, in dependency rounds.
//!
//! A round may only use parameters committed in earlier rounds, so the round
//! index of a learning step is its depth. Each unknown failure `f(i, a)` binds
//! to the first usable triplet `{a, b, c}` of siblings under `i` (pairs in
//! lexicographic id order). Diseases other than `i` that touch two or more
//! symptoms of the set must already be known so their influence can be
//! divided out.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{observable_param_ids, NetworkStructure, ParamId};
use crate::moments::StatRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Triplet,
    Pair,
    Noise,
}

/// A fallback symptom set for the same targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alternate {
    pub symptoms: Vec<usize>,
    pub adjust: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub kind: StepKind,
    /// Coupling disease; `None` for leak steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disease: Option<usize>,
    /// Sorted symptom ids.
    pub symptoms: Vec<usize>,
    /// Diseases whose influence is divided out first.
    pub adjust: Vec<usize>,
    pub targets: Vec<ParamId>,
    pub round: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternates: Vec<Alternate>,
}

impl ScheduleStep {
    /// This step run on an alternate set, keeping the targets it covers.
    pub fn with_alternate(&self, alt: &Alternate) -> ScheduleStep {
        let targets = self
            .targets
            .iter()
            .copied()
            .filter(|t| match *t {
                ParamId::Failure(_, j) => alt.symptoms.contains(&j),
                _ => true,
            })
            .collect();
        ScheduleStep { symptoms: alt.symptoms.clone(), adjust: alt.adjust.clone(), targets, alternates: Vec::new(), ..self.clone() }
    }

    /// For a pair step, the symptom whose failure is already known.
    pub fn pair_anchor(&self) -> Option<usize> {
        let d = self.disease.filter(|_| self.kind == StepKind::Pair)?;
        self.symptoms.iter().copied().find(|&j| !self.targets.contains(&ParamId::Failure(d, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SchedulerOptions {
    /// Allow pair steps once a disease's prior and one failure are known.
    pub use_pairs: bool,
    /// Number of fallback sets recorded per step (0 disables).
    pub alternates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScheduleFile", into = "ScheduleFile")]
pub struct Schedule {
    rounds: Vec<Vec<ScheduleStep>>,
    unlearnable: Vec<ParamId>,
    depths: BTreeMap<ParamId, usize>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    rounds: Vec<Vec<ScheduleStep>>,
    unlearnable: Vec<ParamId>,
}

impl From<ScheduleFile> for Schedule {
    fn from(f: ScheduleFile) -> Self {
        Schedule::from_rounds(f.rounds, f.unlearnable)
    }
}

impl From<Schedule> for ScheduleFile {
    fn from(s: Schedule) -> Self {
        ScheduleFile { rounds: s.rounds, unlearnable: s.unlearnable }
    }
}

impl Schedule {
    fn from_rounds(rounds: Vec<Vec<ScheduleStep>>, unlearnable: Vec<ParamId>) -> Self {
        let mut depths = BTreeMap::new();
        for step in rounds.iter().flatten() {
            for &t in &step.targets {
                let depth = match (step.kind, t) {
                    (StepKind::Noise, ParamId::Leak(j)) => step
                        .adjust
                        .iter()
                        .flat_map(|&k| [ParamId::Prior(k), ParamId::Failure(k, j)])
                        .filter_map(|id| depths.get(&id).copied())
                        .map(|d| d + 1)
                        .max()
                        .unwrap_or(0),
                    _ => step.round,
                };
                depths.entry(t).or_insert(depth);
            }
        }
        Schedule { rounds, unlearnable, depths }
    }

    pub fn rounds(&self) -> &[Vec<ScheduleStep>] {
        &self.rounds
    }

    pub fn steps(&self) -> impl Iterator<Item = &ScheduleStep> + '_ {
        self.rounds.iter().flatten()
    }

    pub fn n_steps(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }

    pub fn unlearnable(&self) -> &[ParamId] {
        &self.unlearnable
    }

    /// Depth of every scheduled parameter. A leak's depth is one more than
    /// the deepest parameter of its parents (0 without parents).
    pub fn depths(&self) -> &BTreeMap<ParamId, usize> {
        &self.depths
    }

    pub fn depth(&self, id: ParamId) -> Option<usize> {
        self.depths.get(&id).copied()
    }

    pub fn learnable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.depths.keys().copied()
    }

    pub fn max_depth(&self, include_leaks: bool) -> Option<usize> {
        self.depths.iter().filter(|(id, _)| include_leaks || !id.is_leak()).map(|(_, &d)| d).max()
    }

    pub fn is_complete(&self) -> bool {
        self.unlearnable.is_empty()
    }

    /// Every symptom set the schedule will query, alternates included.
    pub fn stat_request(&self) -> StatRequest {
        let sets = self.steps().flat_map(|s| {
            std::iter::once(s.symptoms.clone()).chain(s.alternates.iter().map(|a| a.symptoms.clone()))
        });
        StatRequest::new(sets).expect("schedule sets are valid")
    }

    /// Number of parameters still unknown after each depth, starting with
    /// the total at depth −1.
    pub fn remaining_curve(&self, structure: &NetworkStructure, include_leaks: bool) -> Vec<(i64, usize)> {
        let all: Vec<ParamId> =
            observable_param_ids(structure).into_iter().filter(|id| include_leaks || !id.is_leak()).collect();
        let mut curve = vec![(-1, all.len())];
        if all.is_empty() {
            return curve;
        }
        let max = self.max_depth(include_leaks).unwrap_or(0);
        for d in 0..=max {
            let left = all.iter().filter(|id| self.depth(**id).map_or(true, |x| x > d)).count();
            curve.push((d as i64, left));
        }
        curve
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Schedule> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    /// Replays the schedule symbolically and checks every step's
    /// preconditions against parameters committed in earlier rounds.
    pub fn validate(&self, structure: &NetworkStructure) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSchedule(msg));
        let mut known = Knowledge::new(structure);
        for (r, round) in self.rounds.iter().enumerate() {
            let mut learned = Vec::new();
            for step in round {
                if step.round != r {
                    return bad(format!("step {:?} sits in round {r} but claims {}", step.symptoms, step.round));
                }
                structure.check_symptoms(&step.symptoms)?;
                if let Err(msg) = check_step(structure, &known, step) {
                    return bad(msg);
                }
                for alt in &step.alternates {
                    let probe = step.with_alternate(alt);
                    if let Err(msg) = check_step(structure, &known, &probe) {
                        return bad(format!("alternate: {msg}"));
                    }
                }
                learned.extend(step.targets.iter().copied());
            }
            for id in learned {
                known.learn(structure, id);
            }
        }
        Ok(())
    }
}

fn check_step(structure: &NetworkStructure, known: &Knowledge, step: &ScheduleStep) -> std::result::Result<(), String> {
    let s = &step.symptoms;
    if !s.windows(2).all(|w| w[0] < w[1]) {
        return Err(format!("symptoms {s:?} not sorted"));
    }
    match step.kind {
        StepKind::Triplet | StepKind::Pair => {
            let Some(i) = step.disease else { return Err("learning step without disease".into()) };
            let want = if step.kind == StepKind::Triplet { 3 } else { 2 };
            if s.len() != want {
                return Err(format!("{:?} step over {} symptoms", step.kind, s.len()));
            }
            if !s.iter().all(|&j| structure.has_edge(i, j)) {
                return Err(format!("{s:?} not all children of {i}"));
            }
            match coupling_adjustments(structure, i, s, |k, set| known.removable(structure, k, set)) {
                Some(adj) if adj.iter().all(|k| step.adjust.contains(k)) => {}
                _ => return Err(format!("{s:?} is not singly coupled by {i} after adjustment")),
            }
            if !step.adjust.iter().all(|&k| known.removable(structure, k, s)) {
                return Err(format!("adjustment {:?} uses unknown parameters", step.adjust));
            }
            if step.kind == StepKind::Pair {
                if !known.prior[i] {
                    return Err(format!("pair step for {i} before its prior is known"));
                }
                if !s.iter().any(|&j| known.failure(structure, i, j)) {
                    return Err(format!("pair {s:?} has no known anchor failure"));
                }
            }
            for t in &step.targets {
                let ok = match *t {
                    ParamId::Prior(d) => d == i && step.kind == StepKind::Triplet,
                    ParamId::Failure(d, j) => d == i && s.contains(&j),
                    ParamId::Leak(_) => false,
                };
                if !ok {
                    return Err(format!("step cannot learn {t}"));
                }
            }
        }
        StepKind::Noise => {
            let &[j] = s.as_slice() else { return Err("noise step needs one symptom".into()) };
            if step.targets != [ParamId::Leak(j)] {
                return Err(format!("noise step for {j} has targets {:?}", step.targets));
            }
            for &k in structure.parents(j) {
                if !step.adjust.contains(&k) || !known.removable(structure, k, s) {
                    return Err(format!("leak of {j} before parent {k} is known"));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Knowledge {
    prior: Vec<bool>,
    /// indexed by child slot of each disease
    failure: Vec<Vec<bool>>,
}

impl Knowledge {
    fn new(structure: &NetworkStructure) -> Self {
        Knowledge {
            prior: vec![false; structure.n_diseases()],
            failure: (0..structure.n_diseases()).map(|i| vec![false; structure.children(i).len()]).collect(),
        }
    }

    fn failure(&self, structure: &NetworkStructure, i: usize, j: usize) -> bool {
        structure.child_slot(i, j).is_some_and(|slot| self.failure[i][slot])
    }

    fn knows(&self, structure: &NetworkStructure, id: ParamId) -> bool {
        match id {
            ParamId::Prior(i) => self.prior[i],
            ParamId::Failure(i, j) => self.failure(structure, i, j),
            ParamId::Leak(_) => false,
        }
    }

    fn learn(&mut self, structure: &NetworkStructure, id: ParamId) {
        match id {
            ParamId::Prior(i) => self.prior[i] = true,
            ParamId::Failure(i, j) => {
                if let Some(slot) = structure.child_slot(i, j) {
                    self.failure[i][slot] = true;
                }
            }
            ParamId::Leak(_) => {}
        }
    }

    /// Disease `k` can be divided out of moments over `symptoms`.
    fn removable(&self, structure: &NetworkStructure, k: usize, symptoms: &[usize]) -> bool {
        self.prior[k]
            && symptoms.iter().all(|&j| match structure.child_slot(k, j) {
                Some(slot) => self.failure[k][slot],
                None => true,
            })
    }
}

/// Parents shared by symptoms `a` and `b`, excluding `skip`.
fn shared_parents(structure: &NetworkStructure, a: usize, b: usize, skip: usize) -> impl Iterator<Item = usize> + '_ {
    let (pa, pb) = (structure.parents(a), structure.parents(b));
    let mut y = 0;
    pa.iter().copied().filter(move |&k| {
        while y < pb.len() && pb[y] < k {
            y += 1;
        }
        k != skip && y < pb.len() && pb[y] == k
    })
}

/// Diseases other than `i` touching two or more symptoms of `set`, or `None`
/// if one of them cannot be removed.
fn coupling_adjustments(
    structure: &NetworkStructure,
    i: usize,
    set: &[usize],
    removable: impl Fn(usize, &[usize]) -> bool,
) -> Option<Vec<usize>> {
    let mut adj = BTreeSet::new();
    for x in 0..set.len() {
        for y in x + 1..set.len() {
            for k in shared_parents(structure, set[x], set[y], i) {
                if adj.insert(k) && !removable(k, set) {
                    return None;
                }
            }
        }
    }
    Some(adj.into_iter().collect())
}

/// True iff `i` is a parent of every symptom in `symptoms` and, once the
/// diseases in `known` are deleted, no other disease is a parent of two or
/// more of them. The noise parent is ignored.
pub fn singly_coupled(structure: &NetworkStructure, symptoms: &[usize], i: usize, known: &[usize]) -> bool {
    if i >= structure.n_diseases() || symptoms.is_empty() || !symptoms.iter().all(|&j| structure.has_edge(i, j)) {
        return false;
    }
    let mut set = symptoms.to_vec();
    set.sort_unstable();
    coupling_adjustments(structure, i, &set, |k, _| known.contains(&k)).is_some()
}

#[derive(Debug, Clone)]
struct Candidate {
    kind: StepKind,
    symptoms: Vec<usize>,
    adjust: Vec<usize>,
}

fn sorted3(a: usize, b: usize, c: usize) -> Vec<usize> {
    let mut v = vec![a, b, c];
    v.sort_unstable();
    v
}

/// Usable sets for target `f(i, a)` in search order: triplets first, then
/// pairs. Stops after `limit` hits.
fn candidates(
    structure: &NetworkStructure,
    known: &Knowledge,
    i: usize,
    a: usize,
    opts: &SchedulerOptions,
    limit: usize,
) -> Vec<Candidate> {
    let children = structure.children(i);
    let removable = |k: usize, set: &[usize]| known.removable(structure, k, set);
    let mut out = Vec::new();
    // siblings whose coupling with `a` alone is already resolvable
    let usable: Vec<bool> = children
        .iter()
        .map(|&b| b != a && shared_parents(structure, a, b, i).all(|k| removable(k, &[a, b])))
        .collect();
    'outer: for (x, &b) in children.iter().enumerate() {
        if !usable[x] {
            continue;
        }
        for (y, &c) in children.iter().enumerate().skip(x + 1) {
            if !usable[y] {
                continue;
            }
            let set = sorted3(a, b, c);
            if let Some(adjust) = coupling_adjustments(structure, i, &set, removable) {
                out.push(Candidate { kind: StepKind::Triplet, symptoms: set, adjust });
                if out.len() >= limit {
                    break 'outer;
                }
            }
        }
    }
    if opts.use_pairs && known.prior[i] && out.len() < limit {
        for &x in children {
            if x == a || !known.failure(structure, i, x) {
                continue;
            }
            let set = if x < a { vec![x, a] } else { vec![a, x] };
            if let Some(adjust) = coupling_adjustments(structure, i, &set, removable) {
                out.push(Candidate { kind: StepKind::Pair, symptoms: set, adjust });
                if out.len() >= limit {
                    break;
                }
            }
        }
    }
    out
}

/// Builds the schedule round by round until a round learns nothing, then
/// appends one leak step for every symptom whose parents are all known.
pub fn find_schedule(structure: &NetworkStructure, opts: &SchedulerOptions) -> Schedule {
    let mut known = Knowledge::new(structure);
    let mut rounds: Vec<Vec<ScheduleStep>> = Vec::new();
    let limit = 1 + opts.alternates;
    loop {
        let r = rounds.len();
        let targets: Vec<(usize, usize)> = structure
            .edges()
            .iter()
            .copied()
            .filter(|&(i, a)| !known.failure(structure, i, a))
            .collect();
        let found: Vec<Vec<Candidate>> =
            targets.par_iter().map(|&(i, a)| candidates(structure, &known, i, a, opts, limit)).collect();
        let mut claimed: HashSet<ParamId> = HashSet::new();
        let mut steps = Vec::new();
        for (&(i, a), cands) in targets.iter().zip(found) {
            if claimed.contains(&ParamId::Failure(i, a)) {
                continue;
            }
            let mut cands = cands.into_iter();
            let Some(first) = cands.next() else { continue };
            let mut step_targets = Vec::new();
            if first.kind == StepKind::Triplet && !known.prior[i] && claimed.insert(ParamId::Prior(i)) {
                step_targets.push(ParamId::Prior(i));
            }
            for &j in &first.symptoms {
                let id = ParamId::Failure(i, j);
                if !known.knows(structure, id) && claimed.insert(id) {
                    step_targets.push(id);
                }
            }
            steps.push(ScheduleStep {
                kind: first.kind,
                disease: Some(i),
                symptoms: first.symptoms,
                adjust: first.adjust,
                targets: step_targets,
                round: r,
                alternates: cands
                    .filter(|c| c.kind == first.kind)
                    .map(|c| Alternate { symptoms: c.symptoms, adjust: c.adjust })
                    .collect(),
            });
        }
        if steps.is_empty() {
            break;
        }
        for step in &steps {
            for &t in &step.targets {
                known.learn(structure, t);
            }
        }
        rounds.push(steps);
    }

    let r = rounds.len();
    let noise: Vec<ScheduleStep> = (0..structure.n_symptoms())
        .filter(|&j| structure.parents(j).iter().all(|&k| known.removable(structure, k, &[j])))
        .map(|j| ScheduleStep {
            kind: StepKind::Noise,
            disease: None,
            symptoms: vec![j],
            adjust: structure.parents(j).to_vec(),
            targets: vec![ParamId::Leak(j)],
            round: r,
            alternates: Vec::new(),
        })
        .collect();
    if !noise.is_empty() {
        rounds.push(noise);
    }

    let scheduled: HashSet<ParamId> = rounds.iter().flatten().flat_map(|s| s.targets.iter().copied()).collect();
    let unlearnable = observable_param_ids(structure).into_iter().filter(|id| !scheduled.contains(id)).collect();
    Schedule::from_rounds(rounds, unlearnable)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Identifiable,
    /// Parameters the schedule cannot reach and the diseases they belong to.
    Residual { parameters: Vec<ParamId>, parents: Vec<usize> },
}

/// A complete schedule certifies identifiability from moments of order at
/// most three.
pub fn certificate(schedule: &Schedule) -> Verdict {
    if schedule.is_complete() {
        return Verdict::Identifiable;
    }
    let parents: BTreeSet<usize> = schedule.unlearnable().iter().filter_map(|id| id.disease()).collect();
    Verdict::Residual { parameters: schedule.unlearnable().to_vec(), parents: parents.into_iter().collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::{fig1, fig2};
    use crate::sampler::{random_structure, ParentCount};
    use proptest::prelude::*;

    const A: usize = 0;
    const B: usize = 1;

    #[test]
    fn singly_coupled_examples() {
        let s = fig1();
        assert!(singly_coupled(&s, &[1, 3, 4], B, &[]));
        assert!(!singly_coupled(&s, &[0, 1, 2], A, &[]));
        assert!(singly_coupled(&s, &[0, 1, 2], A, &[B]));
        let full = NetworkStructure::fully_connected(2, 3);
        assert!(!singly_coupled(&full, &[0, 1, 2], 0, &[]));
        assert!(!singly_coupled(&full, &[0, 1, 2], 1, &[]));
        // not a child
        assert!(!singly_coupled(&s, &[0, 1, 3], A, &[B]));
    }

    #[test]
    fn fig1_schedule() {
        let s = fig1();
        let sched = find_schedule(&s, &SchedulerOptions::default());
        sched.validate(&s).unwrap();
        assert_eq!(sched.rounds().len(), 3);
        let r0 = &sched.rounds()[0];
        assert_eq!(r0.len(), 2);
        assert_eq!(r0[0].symptoms, vec![1, 3, 4]);
        assert_eq!(
            r0[0].targets,
            vec![ParamId::Prior(B), ParamId::Failure(B, 1), ParamId::Failure(B, 3), ParamId::Failure(B, 4)]
        );
        assert_eq!(r0[1].symptoms, vec![2, 3, 4]);
        assert_eq!(r0[1].targets, vec![ParamId::Failure(B, 2)]);
        let r1 = &sched.rounds()[1];
        assert_eq!(r1.len(), 1);
        assert_eq!((r1[0].disease, r1[0].symptoms.clone(), r1[0].adjust.clone()), (Some(A), vec![0, 1, 2], vec![B]));
        for id in observable_param_ids(&s) {
            let want = match id {
                ParamId::Prior(B) | ParamId::Failure(B, _) => 0,
                ParamId::Prior(_) | ParamId::Failure(..) => 1,
                ParamId::Leak(0) => 2,
                ParamId::Leak(1) | ParamId::Leak(2) => 2,
                ParamId::Leak(_) => 1,
            };
            assert_eq!(sched.depth(id), Some(want), "{id}");
        }
        assert_eq!(certificate(&sched), Verdict::Identifiable);
        assert_eq!(sched.remaining_curve(&s, false), vec![(-1, 9), (0, 4), (1, 0)]);
    }

    #[test]
    fn fig2_is_unlearnable() {
        let s = fig2();
        for use_pairs in [false, true] {
            let sched = find_schedule(&s, &SchedulerOptions { use_pairs, alternates: 0 });
            assert_eq!(sched.n_steps(), 0);
            assert_eq!(sched.unlearnable(), observable_param_ids(&s).as_slice());
            match certificate(&sched) {
                Verdict::Residual { parents, .. } => assert_eq!(parents, vec![A, B]),
                v => panic!("{v:?}"),
            }
            assert_eq!(sched.remaining_curve(&s, false), vec![(-1, 10), (0, 10)]);
        }
    }

    #[test]
    fn small_cases() {
        let one = NetworkStructure::new(1, 3, [(0, 0), (0, 1), (0, 2)]).unwrap();
        let sched = find_schedule(&one, &SchedulerOptions::default());
        assert_eq!(sched.rounds()[0].len(), 1);
        assert!(sched.depths().iter().filter(|(id, _)| !id.is_leak()).all(|(_, &d)| d == 0));
        let empty = NetworkStructure::new(2, 3, []).unwrap();
        let sched = find_schedule(&empty, &SchedulerOptions::default());
        assert_eq!(certificate(&sched), Verdict::Identifiable);
        assert_eq!(sched.remaining_curve(&empty, false), vec![(-1, 0)]);
        assert!(sched.rounds().iter().flatten().all(|s| s.kind == StepKind::Noise));
        let full = NetworkStructure::fully_connected(2, 3);
        assert_eq!(find_schedule(&full, &SchedulerOptions::default()).n_steps(), 0);
    }

    #[test]
    fn pairs_extend_reach() {
        // symptom 0 shares a second parent with every sibling but 1
        let s = NetworkStructure::new(
            3,
            5,
            [(0, 0), (0, 1), (0, 2), (0, 3), (0, 4), (1, 0), (1, 2), (1, 3), (2, 0), (2, 4)],
        )
        .unwrap();
        let tri = find_schedule(&s, &SchedulerOptions::default());
        assert!(tri.unlearnable().contains(&ParamId::Failure(0, 0)));
        assert!(tri.unlearnable().contains(&ParamId::Prior(1)));
        let pairs = find_schedule(&s, &SchedulerOptions { use_pairs: true, alternates: 0 });
        pairs.validate(&s).unwrap();
        let pair = &pairs.rounds()[1][0];
        assert_eq!((pair.kind, pair.symptoms.clone(), pair.targets.clone()), (StepKind::Pair, vec![0, 1], vec![ParamId::Failure(0, 0)]));
        assert_eq!(pair.pair_anchor(), Some(1));
        assert_eq!(pairs.depth(ParamId::Prior(1)), Some(2));
        assert_eq!(pairs.unlearnable(), &[ParamId::Prior(2), ParamId::Failure(2, 0), ParamId::Failure(2, 4), ParamId::Leak(0), ParamId::Leak(4)]);
    }

    #[test]
    fn file_roundtrip() {
        let s = fig1();
        let sched = find_schedule(&s, &SchedulerOptions { use_pairs: false, alternates: 2 });
        let json = serde_json::to_string(&sched).unwrap();
        assert!(json.starts_with(r#"{"rounds":[[{"kind":"triplet","disease":1,"symptoms":[1,3,4],"adjust":[]"#));
        let back: Schedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sched);
        back.validate(&s).unwrap();
        assert_eq!(
            sched.stat_request().sets().len(),
            sched.steps().map(|st| 1 + st.alternates.len()).sum::<usize>()
        );
    }

    #[test]
    fn validate_rejects_bad_steps() {
        let s = fig1();
        let sched = find_schedule(&s, &SchedulerOptions::default());
        let mut rounds = sched.rounds().to_vec();
        rounds[1][0].adjust.clear();
        assert!(Schedule::from_rounds(rounds, vec![]).validate(&s).is_err());
        let mut rounds = sched.rounds().to_vec();
        rounds.swap(0, 1);
        assert!(Schedule::from_rounds(rounds, vec![]).validate(&s).is_err());
    }

    fn arb_structure() -> impl Strategy<Value = NetworkStructure> {
        (1usize..6, 3usize..12, 1usize..4, any::<u64>()).prop_map(|(n, m, k, seed)| {
            random_structure(n, m, ParentCount::Uniform { lo: 0, hi: k.min(n) }, seed).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn schedules_are_valid_and_minimal(s in arb_structure(), use_pairs in any::<bool>()) {
            let sched = find_schedule(&s, &SchedulerOptions { use_pairs, alternates: 1 });
            let valid = sched.validate(&s);
            prop_assert!(valid.is_ok(), "{:?}", valid);
            // a step in round k cannot run with the knowledge of round k - 2
            for (r, round) in sched.rounds().iter().enumerate() {
                for step in round.iter().filter(|st| st.kind != StepKind::Noise) {
                    let deps = step.adjust.iter().flat_map(|&k| {
                        let mut v = vec![ParamId::Prior(k)];
                        v.extend(step.symptoms.iter().filter(|&&j| s.has_edge(k, j)).map(|&j| ParamId::Failure(k, j)));
                        v
                    }).chain(step.pair_anchor().into_iter().flat_map(|x| {
                        let i = step.disease.unwrap();
                        [ParamId::Prior(i), ParamId::Failure(i, x)]
                    }));
                    let deepest = deps.map(|id| sched.depth(id).unwrap() as i64).max().unwrap_or(-1);
                    prop_assert_eq!(deepest + 1, r as i64);
                }
            }
            let again = find_schedule(&s, &SchedulerOptions { use_pairs, alternates: 1 });
            prop_assert_eq!(again, sched);
        }

        #[test]
        fn pairs_are_monotone(s in arb_structure()) {
            let tri = find_schedule(&s, &SchedulerOptions::default());
            let pairs = find_schedule(&s, &SchedulerOptions { use_pairs: true, alternates: 0 });
            for id in tri.learnable() {
                let (d_tri, d_pairs) = (tri.depth(id).unwrap(), pairs.depth(id));
                prop_assert!(d_pairs.is_some_and(|d| d <= d_tri), "{} at {} vs {:?}", id, d_tri, d_pairs);
            }
        }
    }
}
