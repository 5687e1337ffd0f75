//! One-pass counting of the joint tables named by a schedule.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{joint_to_negmoments, negative_moments_exact, JointTensor, NegativeMoments, NetworkStructure, NoisyOrParameters, MAX_TENSOR_ORDER};
use crate::sampler::SampleBatch;
use crate::scalar::Scalar;

/// Deduplicated symptom sets of size 1 to 3, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StatRequest {
    sets: Vec<Vec<usize>>,
}

impl StatRequest {
    pub fn new(sets: impl IntoIterator<Item = Vec<usize>>) -> Result<Self> {
        let mut out = Vec::new();
        for mut set in sets {
            set.sort_unstable();
            if set.is_empty() {
                return Err(Error::EmptySymptomSet);
            }
            if set.len() > MAX_TENSOR_ORDER {
                return Err(Error::TensorOrder(set.len()));
            }
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidSymptomSet(set));
            }
            out.push(set);
        }
        out.sort_unstable();
        out.dedup();
        Ok(StatRequest { sets: out })
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Union of two requests.
    pub fn union(&self, other: &StatRequest) -> StatRequest {
        StatRequest::new(self.sets.iter().chain(&other.sets).cloned()).expect("both requests valid")
    }
}

/// Count tables for every requested set. Each table sums to `n_samples`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatStore {
    n_samples: u64,
    request: StatRequest,
    /// Flat tables, `1 << |set|` entries per set.
    counts: Vec<Vec<u64>>,
    index: HashMap<Vec<usize>, usize>,
}

impl StatStore {
    /// Store with zero samples.
    pub fn empty(request: StatRequest) -> Self {
        let counts = request.sets.iter().map(|s| vec![0; 1 << s.len()]).collect();
        let index = request.sets.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
        StatStore { n_samples: 0, request, counts, index }
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    pub fn request(&self) -> &StatRequest {
        &self.request
    }

    /// Count table of a requested set (ids in any order are normalized).
    pub fn counts(&self, set: &[usize]) -> Option<&[u64]> {
        let mut key = set.to_vec();
        key.sort_unstable();
        self.index.get(&key).map(|&k| self.counts[k].as_slice())
    }

    /// Elementwise sum of two stores built for the same request.
    pub fn merge(&self, other: &StatStore) -> Result<StatStore> {
        if self.request != other.request {
            return Err(Error::RequestMismatch);
        }
        let mut out = self.clone();
        out.n_samples += other.n_samples;
        for (a, b) in out.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(out)
    }

    /// Empirical joint table and negative moments of a requested set, with
    /// ids sorted ascending.
    pub fn query<T: Scalar>(&self, set: &[usize]) -> Result<(JointTensor<T>, NegativeMoments<T>)> {
        let mut key = set.to_vec();
        key.sort_unstable();
        let k = *self.index.get(&key).ok_or_else(|| Error::UnknownSet(key.clone()))?;
        if self.n_samples == 0 {
            return Err(Error::NoSamples);
        }
        let tensor = JointTensor::from_counts(key, &self.counts[k])?;
        let nm = joint_to_negmoments(&tensor);
        Ok((tensor, nm))
    }

    pub fn to_file(&self) -> StatFile {
        StatFile {
            n: self.n_samples,
            sets: self
                .request
                .sets
                .iter()
                .zip(&self.counts)
                .map(|(ids, counts)| StatFileSet { ids: ids.clone(), counts: counts.clone() })
                .collect(),
        }
    }

    pub fn from_file(file: StatFile) -> Result<StatStore> {
        let request = StatRequest::new(file.sets.iter().map(|s| s.ids.clone()))?;
        if request.len() != file.sets.len() {
            return Err(Error::Format("duplicate sets in statistics file".into()));
        }
        let mut store = StatStore::empty(request);
        store.n_samples = file.n;
        for set in file.sets {
            let mut sorted = set.ids.clone();
            sorted.sort_unstable();
            if sorted != set.ids {
                return Err(Error::Format(format!("set ids {:?} not ascending", set.ids)));
            }
            if set.counts.len() != 1 << set.ids.len() || set.counts.iter().sum::<u64>() != file.n {
                return Err(Error::Format(format!("count table for {:?} is inconsistent", set.ids)));
            }
            let k = store.index[&set.ids];
            store.counts[k] = set.counts;
        }
        Ok(store)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.to_file())?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<StatStore> {
        let file: StatFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        StatStore::from_file(file)
    }
}

/// Serialized [`StatStore`]. Outcome index `x` has bit `b` set when
/// `ids[b]` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatFile {
    #[serde(rename = "N")]
    pub n: u64,
    pub sets: Vec<StatFileSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatFileSet {
    pub ids: Vec<usize>,
    pub counts: Vec<u64>,
}

/// Streaming counter. Each row costs time proportional to the number of
/// requested sets touching a present symptom; all-absent cells are filled
/// in from the row total at the end.
pub struct StatCounter {
    m: usize,
    store: StatStore,
    /// symptom → (set index, bit position)
    by_symptom: Vec<Vec<(u32, u8)>>,
    scratch: Vec<u8>,
    touched: Vec<u32>,
}

impl StatCounter {
    pub fn new(m: usize, request: StatRequest) -> Result<Self> {
        let mut by_symptom = vec![Vec::new(); m];
        for (k, set) in request.sets.iter().enumerate() {
            if let Some(&bad) = set.iter().find(|&&j| j >= m) {
                return Err(Error::InvalidSymptomSet(vec![bad]));
            }
            for (b, &j) in set.iter().enumerate() {
                by_symptom[j].push((k as u32, b as u8));
            }
        }
        let n_sets = request.len();
        Ok(StatCounter {
            m,
            store: StatStore::empty(request),
            by_symptom,
            scratch: vec![0; n_sets],
            touched: Vec::new(),
        })
    }

    /// Counts one bit-packed row (layout of [`SampleBatch::row`]).
    pub fn observe_packed(&mut self, words: &[u64]) -> Result<()> {
        if words.len() != self.m.div_ceil(64) {
            return Err(Error::RowWidth { expected: self.m, got: words.len() * 64 });
        }
        self.store.n_samples += 1;
        for (w, &word) in words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let j = w * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                for &(k, b) in &self.by_symptom[j] {
                    let slot = &mut self.scratch[k as usize];
                    if *slot == 0 {
                        self.touched.push(k);
                    }
                    *slot |= 1 << b;
                }
            }
        }
        for k in self.touched.drain(..) {
            let slot = &mut self.scratch[k as usize];
            self.store.counts[k as usize][*slot as usize] += 1;
            *slot = 0;
        }
        Ok(())
    }

    /// Counts one dense 0/1 row.
    pub fn observe(&mut self, row: &[u8]) -> Result<()> {
        if row.len() != self.m {
            return Err(Error::RowWidth { expected: self.m, got: row.len() });
        }
        let mut words = vec![0u64; self.m.div_ceil(64)];
        for (j, &x) in row.iter().enumerate() {
            if x != 0 {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        self.observe_packed(&words)
    }

    pub fn finish(mut self) -> StatStore {
        let n = self.store.n_samples;
        for table in &mut self.store.counts {
            let others: u64 = table[1..].iter().sum();
            table[0] = n - others;
        }
        self.store
    }
}

/// Counts every requested table in a single pass over `batch`.
pub fn collect(batch: &SampleBatch, request: &StatRequest) -> Result<StatStore> {
    let mut counter = StatCounter::new(batch.n_symptoms(), request.clone())?;
    for row in batch.rows() {
        counter.observe_packed(row)?;
    }
    Ok(counter.finish())
}

/// Counts contiguous row shards concurrently and merges them in shard order.
pub fn collect_sharded(batch: &SampleBatch, request: &StatRequest, shards: usize) -> Result<StatStore> {
    let shards = shards.max(1);
    let n = batch.len();
    let parts: Vec<StatStore> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let range = (s * n / shards)..((s + 1) * n / shards);
            let mut counter = StatCounter::new(batch.n_symptoms(), request.clone())?;
            for r in range {
                counter.observe_packed(batch.row(r))?;
            }
            Ok(counter.finish())
        })
        .collect::<Result<_>>()?;
    let mut acc = StatStore::empty(request.clone());
    for part in &parts {
        acc = acc.merge(part)?;
    }
    Ok(acc)
}

/// Anything that can report negative moments over small symptom sets.
pub trait MomentSource<T: Scalar>: Sync {
    /// Negative moments of every subset of `ids`; returned ids are sorted.
    fn negative_moments(&self, ids: &[usize]) -> Result<NegativeMoments<T>>;

    /// Whether `ids` (sorted) can be queried.
    fn covers(&self, _ids: &[usize]) -> bool {
        true
    }
}

impl<T: Scalar> MomentSource<T> for StatStore {
    fn negative_moments(&self, ids: &[usize]) -> Result<NegativeMoments<T>> {
        self.query::<T>(ids).map(|(_, nm)| nm)
    }

    fn covers(&self, ids: &[usize]) -> bool {
        self.counts(ids).is_some()
    }
}

/// Analytic moments of a known network.
#[derive(Debug, Clone, Copy)]
pub struct ExactMoments<'a, T> {
    pub structure: &'a NetworkStructure,
    pub params: &'a NoisyOrParameters<T>,
}

impl<'a, T: Scalar> ExactMoments<'a, T> {
    pub fn new(structure: &'a NetworkStructure, params: &'a NoisyOrParameters<T>) -> Self {
        ExactMoments { structure, params }
    }
}

impl<T: Scalar> MomentSource<T> for ExactMoments<'_, T> {
    fn negative_moments(&self, ids: &[usize]) -> Result<NegativeMoments<T>> {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        negative_moments_exact(self.structure, self.params, &sorted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::joint_exact;
    use crate::model::presets::{fig1, fig1_params};
    use crate::sampler::draw_samples;

    #[test]
    fn hand_counted_triplet() {
        let rows = [[0u8, 0, 0], [0, 1, 1], [0, 1, 1], [1, 1, 1]];
        let batch = SampleBatch::from_rows(3, rows).unwrap();
        let req = StatRequest::new([vec![2, 0, 1]]).unwrap();
        let store = collect(&batch, &req).unwrap();
        let c = store.counts(&[0, 1, 2]).unwrap();
        // outcome "011" over (a,b,c) means b,c present: bits 1 and 2 → index 6
        let mut want = [0u64; 8];
        want[0] = 1;
        want[0b110] = 2;
        want[0b111] = 1;
        assert_eq!(c, &want);
        assert_eq!(store.n_samples(), 4);
    }

    #[test]
    fn empty_request_records_n() {
        let batch = SampleBatch::from_rows(2, [[1u8, 0], [0, 0]]).unwrap();
        let store = collect(&batch, &StatRequest::default()).unwrap();
        assert_eq!(store.n_samples(), 2);
        assert!(store.request().is_empty());
    }

    #[test]
    fn all_zero_batch() {
        let batch = SampleBatch::from_rows(3, vec![[0u8; 3]; 50]).unwrap();
        let req = StatRequest::new([vec![1], vec![0, 2]]).unwrap();
        let store = collect(&batch, &req).unwrap();
        assert_eq!(store.counts(&[1]).unwrap(), &[50, 0]);
        let (_, nm) = store.query::<f64>(&[0, 2]).unwrap();
        assert!(nm.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn query_divides_counts() {
        let mut rows = vec![[0u8]; 70];
        rows.extend(vec![[1u8]; 30]);
        let batch = SampleBatch::from_rows(1, rows).unwrap();
        let store = collect(&batch, &StatRequest::new([vec![0]]).unwrap()).unwrap();
        let (t, nm) = store.query::<f64>(&[0]).unwrap();
        assert_eq!(t.values(), &[0.7, 0.3]);
        assert_eq!(nm.get(&[0]), Some(0.7));
        assert_eq!(t.total(), 1.0);
    }

    #[test]
    fn request_validation_and_errors() {
        assert!(StatRequest::new([vec![0, 1, 2, 3]]).is_err());
        assert!(StatRequest::new([vec![1, 1]]).is_err());
        assert!(StatRequest::new([vec![]]).is_err());
        assert_eq!(StatRequest::new([vec![2, 1], vec![1, 2]]).unwrap().len(), 1);
        let batch = SampleBatch::from_rows(2, [[1u8, 0]]).unwrap();
        assert!(collect(&batch, &StatRequest::new([vec![5]]).unwrap()).is_err());
        let store = StatStore::empty(StatRequest::new([vec![0]]).unwrap());
        assert!(matches!(store.query::<f64>(&[0]), Err(Error::NoSamples)));
        assert!(matches!(store.query::<f64>(&[1]), Err(Error::UnknownSet(_))));
        let mut counter = StatCounter::new(3, StatRequest::default()).unwrap();
        assert!(matches!(counter.observe(&[0, 1]), Err(Error::RowWidth { .. })));
    }

    #[test]
    fn merge_identity_and_mismatch() {
        let (s, p) = (fig1(), fig1_params::<f64>(0.01));
        let batch = draw_samples(&s, &p, 3000, 1);
        let req = StatRequest::new([vec![0, 1, 2], vec![3], vec![1, 4]]).unwrap();
        let x = collect(&batch, &req).unwrap();
        assert_eq!(x.merge(&StatStore::empty(req.clone())).unwrap(), x);
        let other = StatStore::empty(StatRequest::new([vec![0]]).unwrap());
        assert!(matches!(x.merge(&other), Err(Error::RequestMismatch)));
        let k = 1234;
        let a = collect(&batch.slice(0..k), &req).unwrap();
        let b = collect(&batch.slice(k..3000), &req).unwrap();
        assert_eq!(a.merge(&b).unwrap(), x);
        assert_eq!(b.merge(&a).unwrap(), x);
        let z = collect(&batch.slice(0..500), &req).unwrap();
        let y = collect(&batch.slice(500..k), &req).unwrap();
        let abc = z.merge(&y).unwrap().merge(&b).unwrap();
        let cba = b.merge(&y).unwrap().merge(&z).unwrap();
        assert_eq!(abc, x);
        assert_eq!(cba, x);
        assert_eq!(collect_sharded(&batch, &req, 7).unwrap(), x);
    }

    #[test]
    fn dense_and_packed_observation_agree() {
        let rows = [[1u8, 0, 1], [0, 1, 1], [1, 1, 1]];
        let req = StatRequest::new([vec![0, 1, 2], vec![0], vec![1, 2]]).unwrap();
        let mut counter = StatCounter::new(3, req.clone()).unwrap();
        for r in &rows {
            counter.observe(r).unwrap();
        }
        let dense = counter.finish();
        let packed = collect(&SampleBatch::from_rows(3, rows).unwrap(), &req).unwrap();
        assert_eq!(dense, packed);
    }

    #[test]
    fn file_roundtrip() {
        let batch = SampleBatch::from_rows(3, [[1u8, 0, 1], [0, 0, 1]]).unwrap();
        let store = collect(&batch, &StatRequest::new([vec![0, 2], vec![1]]).unwrap()).unwrap();
        let text = serde_json::to_string(&store.to_file()).unwrap();
        assert_eq!(text, r#"{"N":2,"sets":[{"ids":[0,2],"counts":[0,0,1,1]},{"ids":[1],"counts":[2,0]}]}"#);
        let back = StatStore::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, store);
        let bad = r#"{"N":3,"sets":[{"ids":[1],"counts":[2,0]}]}"#;
        assert!(StatStore::from_file(serde_json::from_str(bad).unwrap()).is_err());
    }

    #[test]
    fn converges_to_exact_joint() {
        let (s, p) = (fig1(), fig1_params::<f64>(0.01));
        let sets = [vec![0, 1, 2], vec![1, 3, 4], vec![2, 3, 4]];
        let req = StatRequest::new(sets.clone()).unwrap();
        let n = 1_000_000u64;
        let (mut within, mut total) = (0, 0);
        for seed in 0..20 {
            let store = collect(&draw_samples(&s, &p, n as usize, 100 + seed), &req).unwrap();
            for set in &sets {
                let exact = joint_exact(&s, &p, set).unwrap();
                let (emp, _) = store.query::<f64>(set).unwrap();
                for (e, q) in emp.values().iter().zip(exact.values()) {
                    total += 1;
                    if (e - q).abs() <= 4.0 * (q * (1.0 - q) / n as f64).sqrt() {
                        within += 1;
                    }
                }
            }
        }
        assert!(within as f64 >= 0.95 * total as f64, "{within}/{total}");
    }
}
