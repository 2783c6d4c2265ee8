use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-6;

/// Three-component style code. Codes produced by the classifier or the
/// basis presets lie on the probability simplex; codes under optimization may
/// leave it and are flagged `relaxed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleVector {
    values: [f64; 3],
    #[serde(default)]
    relaxed: bool,
}

impl StyleVector {
    /// Basis vector selecting style `k` (0-based).
    pub fn basis(k: usize) -> Self {
        let mut values = [0.0; 3];
        values[k] = 1.0;
        Self {
            values,
            relaxed: false,
        }
    }

    pub fn new(values: [f64; 3]) -> Result<Self> {
        if !on_simplex(&values) {
            return Err(Error::Validation(format!(
                "style vector {values:?} is not on the probability simplex"
            )));
        }
        Ok(Self {
            values,
            relaxed: false,
        })
    }

    pub fn relaxed(values: [f64; 3]) -> Self {
        Self {
            values,
            relaxed: true,
        }
    }

    pub fn values(&self) -> [f64; 3] {
        self.values
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    pub fn is_on_simplex(&self) -> bool {
        on_simplex(&self.values)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..3 {
            if self.values[i] > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Euclidean projection onto the probability simplex.
    pub fn project_simplex(&self) -> Self {
        let mut sorted = self.values;
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut cumsum = 0.0;
        let mut theta = 0.0;
        for (i, &u) in sorted.iter().enumerate() {
            cumsum += u;
            let t = (cumsum - 1.0) / (i as f64 + 1.0);
            if u - t > 0.0 {
                theta = t;
            }
        }
        Self {
            values: self.values.map(|v| (v - theta).max(0.0)),
            relaxed: false,
        }
    }
}

fn on_simplex(v: &[f64; 3]) -> bool {
    v.iter().all(|&x| x.is_finite() && x >= -SIMPLEX_TOL)
        && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

impl fmt::Display for StyleVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.values[0], self.values[1], self.values[2])
    }
}

impl FromStr for StyleVector {
    type Err = Error;

    /// Parses `a,b,c`. Off-simplex input is accepted as a relaxed code.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Validation(format!("bad style vector `{s}`: {e}")))?;
        let values: [f64; 3] = parts.try_into().map_err(|p: Vec<f64>| {
            Error::Validation(format!("style vector needs 3 components, got {}", p.len()))
        })?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite style vector `{s}`")));
        }
        Ok(StyleVector::new(values).unwrap_or(StyleVector::relaxed(values)))
    }
}
