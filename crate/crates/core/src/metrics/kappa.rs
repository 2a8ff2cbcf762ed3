//! Quadratic-weighted Cohen's kappa over ordinal labels 1..=k.

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Square count matrix; rows are the first rater, columns the second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, MetricError> {
        let k = counts.len();
        if k == 0 {
            return Err(MetricError::EmptyInput("confusion matrix"));
        }
        if let Some(row) = counts.iter().find(|r| r.len() != k) {
            return Err(MetricError::LengthMismatch {
                left: k,
                right: row.len(),
            });
        }
        Ok(Self { k, counts })
    }

    /// Builds from label pairs in 1..=k.
    pub fn from_pairs(k: usize, a: &[u8], b: &[u8]) -> Result<Self, MetricError> {
        if a.len() != b.len() {
            return Err(MetricError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let mut m = Self::new(k);
        for (&x, &y) in a.iter().zip(b) {
            m.add(x, y)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, a: u8, b: u8) -> Result<(), MetricError> {
        let idx = |l: u8| {
            if l == 0 || usize::from(l) > self.k {
                Err(MetricError::LabelOutOfRange { label: l, k: self.k })
            } else {
                Ok(usize::from(l) - 1)
            }
        };
        let (i, j) = (idx(a)?, idx(b)?);
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn get(&self, a: u8, b: u8) -> u64 {
        self.counts[usize::from(a) - 1][usize::from(b) - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// (row sums, column sums).
    pub fn marginals(&self) -> (Vec<u64>, Vec<u64>) {
        let rows = self.counts.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..self.k).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect();
        (rows, cols)
    }

    pub fn transpose(&self) -> Self {
        let counts = (0..self.k)
            .map(|i| (0..self.k).map(|j| self.counts[j][i]).collect())
            .collect();
        Self { k: self.k, counts }
    }
}

/// 1 - sum(w O) / sum(w E) with w = (i - j)^2 and E from the marginals.
///
/// Computed as 1 - n*Sd / (n*Saa + n*Sbb - 2*Sa*Sb) over integer moments,
/// so the result is exact up to one final division.
pub fn quadratic_weighted_kappa(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    let n = i128::from(m.total());
    if n == 0 {
        return Err(MetricError::EmptyInput("confusion matrix"));
    }
    let (mut sd, mut sa, mut sb, mut saa, mut sbb) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (i, row) in m.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let c = i128::from(c);
            let (x, y) = (i as i128, j as i128);
            sd += c * (x - y) * (x - y);
            sa += c * x;
            sb += c * y;
            saa += c * x * x;
            sbb += c * y * y;
        }
    }
    let expected = n * saa + n * sbb - 2 * sa * sb;
    if expected == 0 {
        return Err(MetricError::KappaUndefined);
    }
    Ok(1.0 - (n * sd) as f64 / expected as f64)
}
