use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkStructure, NoisyOrParameters};
use crate::scalar::Scalar;

/// On-disk network description. Structure-only files omit the three
/// parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub n: usize,
    pub m: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failures: Option<Vec<(usize, usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaks: Option<Vec<f64>>,
}

impl NetworkFile {
    pub fn new<T: Scalar>(structure: &NetworkStructure, params: Option<&NoisyOrParameters<T>>) -> Self {
        NetworkFile {
            n: structure.n_diseases(),
            m: structure.n_symptoms(),
            edges: structure.edges().to_vec(),
            priors: params.map(|p| p.priors().iter().map(|x| x.as_f64()).collect()),
            failures: params.map(|p| p.edge_failures().map(|(i, j, f)| (i, j, f.as_f64())).collect()),
            leaks: params.map(|p| p.leaks().iter().map(|x| x.as_f64()).collect()),
        }
    }

    pub fn structure(&self) -> Result<NetworkStructure> {
        NetworkStructure::new(self.n, self.m, self.edges.iter().copied())
    }

    /// Parameters, if the file carries them. Missing leaks default to zero.
    pub fn parameters<T: Scalar>(&self) -> Result<Option<NoisyOrParameters<T>>> {
        let structure = self.structure()?;
        match (&self.priors, &self.failures) {
            (None, None) => Ok(None),
            (Some(priors), Some(failures)) => {
                let leaks = self.leaks.clone().unwrap_or_else(|| vec![0.0; self.m]);
                NoisyOrParameters::new(
                    &structure,
                    priors.iter().map(|&x| T::lit(x)).collect(),
                    failures.iter().map(|&(i, j, f)| (i, j, T::lit(f))),
                    leaks.into_iter().map(T::lit).collect(),
                )
                .map(Some)
            }
            _ => Err(Error::Format("network file has priors or failures but not both".into())),
        }
    }
}

/// Reads a network file, returning its structure and optional parameters.
pub fn read_network<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(NetworkStructure, Option<NoisyOrParameters<T>>)> {
    let file: NetworkFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    Ok((file.structure()?, file.parameters()?))
}

pub fn write_network<T: Scalar>(
    path: impl AsRef<Path>,
    structure: &NetworkStructure,
    params: Option<&NoisyOrParameters<T>>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &NetworkFile::new(structure, params))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
