use std::fmt;

use crate::diffcore::Tensor;
use crate::error::{shape_err, Result};

/// Supervision attached to each sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Class indices.
    Classes(Vec<usize>),
    /// Real-valued target vectors `[N, O]`.
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Result<Targets> {
        Ok(match self {
            Targets::Classes(c) => Targets::Classes(
                indices
                    .iter()
                    .map(|&i| c.get(i).copied().ok_or_else(|| shape_err!("label index {i} out of range")))
                    .collect::<Result<_>>()?,
            ),
            Targets::Values(t) => Targets::Values(t.select_rows(indices)?),
        })
    }
}

/// Where a dataset came from and how it was reduced.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub source: String,
    /// Fraction of the source retained, in (0, 1].
    pub fraction: f64,
    /// Seed of the reduction, when one was applied.
    pub seed: Option<u64>,
    /// Free-form `key=value` facts (generator settings, intrinsic dimension).
    pub notes: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            fraction: 1.0,
            seed: None,
            notes: Vec::new(),
        }
    }

    pub fn note(&self, key: &str) -> Option<&str> {
        self.notes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "source={}", self.source)?;
        writeln!(f, "fraction={}", self.fraction)?;
        if let Some(seed) = self.seed {
            writeln!(f, "seed={seed}")?;
        }
        for (k, v) in &self.notes {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Paired inputs `[N, ...]` and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets, provenance: Provenance) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(shape_err!("{} inputs but {} targets", inputs.rows(), targets.len()));
        }
        Ok(Self {
            inputs,
            targets,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Samples at `indices`, in that order, with provenance carried over.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            inputs: self.inputs.select_rows(indices)?,
            targets: self.targets.select(indices)?,
            provenance: self.provenance.clone(),
        })
    }
}
