use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{norm, MetricKind};

/// `n` samples of `d` finite features, stored row-major, with optional class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    features: Vec<f64>,
    labels: Option<Vec<u32>>,
    n: usize,
    d: usize,
}

impl SampleSet {
    pub fn new(features: Vec<f64>, d: usize, labels: Option<Vec<u32>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSample("dimension must be at least 1".into()));
        }
        if !features.len().is_multiple_of(d) {
            return Err(Error::DimensionError {
                expected: d,
                got: features.len() % d,
            });
        }
        let n = features.len() / d;
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "non-finite feature in row {}",
                pos / d
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionError {
                    expected: n,
                    got: l.len(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            n,
            d,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<u32>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionError {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(rows.concat(), d, labels)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u32]> {
        self.labels.as_deref().ok_or(Error::MissingLabels)
    }

    /// Number of classes `C`, i.e. one more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |&m| m as usize + 1)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SampleSet {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        SampleSet {
            features,
            labels,
            n: indices.len(),
            d: self.d,
        }
    }

    /// Checks the preconditions `metric` places on every sample.
    pub fn validate_for(&self, metric: MetricKind) -> Result<()> {
        if metric == MetricKind::TraceAmplitude {
            if let Some(index) = self.rows().position(|r| norm(r) == 0.0) {
                return Err(Error::ZeroNormSample { index });
            }
        }
        Ok(())
    }

    /// Copy with every row scaled to unit l2 norm.
    pub fn normalized(&self) -> Result<SampleSet> {
        self.validate_for(MetricKind::TraceAmplitude)?;
        let mut features = self.features.clone();
        for row in features.chunks_exact_mut(self.d) {
            let n = norm(row);
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(SampleSet {
            features,
            labels: self.labels.clone(),
            n: self.n,
            d: self.d,
        })
    }

    pub fn scaled(&self, factor: f64) -> SampleSet {
        SampleSet {
            features: self.features.iter().map(|v| v * factor).collect(),
            labels: self.labels.clone(),
            n: self.n,
            d: self.d,
        }
    }
}
