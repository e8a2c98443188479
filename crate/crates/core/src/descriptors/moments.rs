use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel order of a [`MomentVector`].
pub const MOMENT_NAMES: [&str; 6] = ["mean", "var", "skew", "kurt", "min", "max"];

/// Population moments of a sample set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Excess kurtosis.
    pub kurtosis: f64,
    pub min: f64,
    pub max: f64,
}

impl MomentVector {
    pub fn to_array(&self) -> [f64; 6] {
        [self.mean, self.variance, self.skewness, self.kurtosis, self.min, self.max]
    }
}

const DEGENERATE_VAR: f64 = 1e-24;

pub fn moments(values: &[f64]) -> Result<MomentVector> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("moments of an empty sample".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        min = min.min(v);
        max = max.max(v);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 < DEGENERATE_VAR {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Ok(MomentVector {
        // Rounding can push the mean a hair outside [min, max].
        mean: mean.clamp(min, max),
        variance: m2,
        skewness,
        kurtosis,
        min,
        max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(moments(&[1.0, 1.0, 1.0]).unwrap().to_array(), [1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let m = moments(&[0.0, 1.0]).unwrap();
        assert_eq!(m.to_array(), [0.5, 0.25, 0.0, -2.0, 0.0, 1.0]);
        let m = moments(&[0.0, 0.0, 3.0]).unwrap();
        assert!((m.mean - 1.0).abs() < 1e-15);
        assert!((m.variance - 2.0).abs() < 1e-15);
        assert!((m.skewness - 2.0 / 2f64.powf(1.5)).abs() < 1e-12);
        assert!(moments(&[]).is_err());
    }
}
