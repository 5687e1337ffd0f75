use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bipartite disease → symptom graph. The noise parent is implicit on every
/// symptom and never appears as an edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawStructure", into = "RawStructure")]
pub struct NetworkStructure {
    n: usize,
    m: usize,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawStructure {
    n: usize,
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<RawStructure> for NetworkStructure {
    type Error = Error;
    fn try_from(raw: RawStructure) -> Result<Self> {
        NetworkStructure::new(raw.n, raw.m, raw.edges)
    }
}

impl From<NetworkStructure> for RawStructure {
    fn from(s: NetworkStructure) -> Self {
        RawStructure { n: s.n, m: s.m, edges: s.edges }
    }
}

impl NetworkStructure {
    /// Builds a structure from `(disease, symptom)` edges. Edges are stored
    /// sorted; duplicates and out-of-range indices are rejected.
    pub fn new(n: usize, m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidStructure(format!("duplicate edge {:?}", w[0])));
            }
        }
        let mut parents = vec![Vec::new(); m];
        let mut children = vec![Vec::new(); n];
        for &(i, j) in &edges {
            if i >= n || j >= m {
                return Err(Error::InvalidStructure(format!(
                    "edge ({i}, {j}) outside {n} diseases x {m} symptoms"
                )));
            }
            children[i].push(j);
            parents[j].push(i);
        }
        Ok(NetworkStructure { n, m, edges, parents, children })
    }

    /// Every disease connected to every symptom.
    pub fn fully_connected(n: usize, m: usize) -> Self {
        let edges = (0..n).flat_map(|i| (0..m).map(move |j| (i, j)));
        Self::new(n, m, edges).expect("fully connected structure is valid")
    }

    pub fn n_diseases(&self) -> usize {
        self.n
    }

    pub fn n_symptoms(&self) -> usize {
        self.m
    }

    /// Edges sorted by `(disease, symptom)`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Parents of symptom `j`, ascending.
    pub fn parents(&self, j: usize) -> &[usize] {
        &self.parents[j]
    }

    /// Children of disease `i`, ascending.
    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.children[i].binary_search(&j).is_ok()
    }

    /// Position of `j` within `children(i)`.
    pub fn child_slot(&self, i: usize, j: usize) -> Option<usize> {
        self.children.get(i)?.binary_search(&j).ok()
    }

    /// Largest symptom in-degree, not counting the noise parent.
    pub fn max_in_degree(&self) -> usize {
        self.parents.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Sorted union of the parents of every symptom in `symptoms`.
    pub fn parents_of_set(&self, symptoms: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = symptoms.iter().flat_map(|&j| self.parents[j].iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// The structure with the listed diseases' edges removed. Disease indices
    /// are preserved so parameters stay aligned.
    pub fn without_diseases(&self, removed: &[usize]) -> Self {
        let edges = self.edges.iter().copied().filter(|(i, _)| !removed.contains(i));
        Self::new(self.n, self.m, edges).expect("subgraph of a valid structure is valid")
    }

    pub(crate) fn check_symptoms(&self, symptoms: &[usize]) -> Result<()> {
        if symptoms.is_empty() {
            return Err(Error::EmptySymptomSet);
        }
        for (k, &j) in symptoms.iter().enumerate() {
            if j >= self.m || symptoms[..k].contains(&j) {
                return Err(Error::InvalidSymptomSet(symptoms.to_vec()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_matches_edges() {
        let s = NetworkStructure::new(2, 3, [(1, 2), (0, 0), (0, 2)]).unwrap();
        assert_eq!(s.edges(), &[(0, 0), (0, 2), (1, 2)]);
        assert_eq!(s.children(0), &[0, 2]);
        assert_eq!(s.parents(2), &[0, 1]);
        assert!(s.parents(1).is_empty());
        assert_eq!(s.max_in_degree(), 2);
        assert!(s.has_edge(1, 2) && !s.has_edge(1, 0));
        assert_eq!(s.parents_of_set(&[0, 2]), vec![0, 1]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(NetworkStructure::new(1, 1, [(0, 0), (0, 0)]).is_err());
        assert!(NetworkStructure::new(1, 1, [(1, 0)]).is_err());
        assert!(NetworkStructure::new(1, 1, [(0, 3)]).is_err());
    }

    #[test]
    fn serde_roundtrip_validates() {
        let s = NetworkStructure::fully_connected(2, 2);
        let text = serde_json::to_string(&s).unwrap();
        let back: NetworkStructure = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        assert!(serde_json::from_str::<NetworkStructure>(r#"{"n":1,"m":1,"edges":[[0,0],[0,0]]}"#).is_err());
    }
}
