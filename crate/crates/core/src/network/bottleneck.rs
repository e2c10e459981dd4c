use serde::{Deserialize, Serialize};

use super::Architecture;
use crate::error::{Error, Result};

/// Bottleneck layers `i_1 > i_2 > ⋯ > i_m = 0`: each is the narrowest layer
/// at or below the previous one, so widths strictly increase along the
/// sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottleneckDecomposition {
    pub indices: Vec<usize>,
    pub widths: Vec<usize>,
}

impl BottleneckDecomposition {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Consecutive pairs `(i_j, i_{j+1})`, upper index first.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.indices.windows(2).map(|w| (w[0], w[1]))
    }
}

/// `i_1 = argmin_{0 ≤ i ≤ ℓ} d_i`, then `i_{j+1} = argmin_{i < i_j} d_i`
/// until index 0 is reached. Ties go to the smallest index.
pub fn bottleneck_decomposition(arch: &Architecture) -> BottleneckDecomposition {
    let widths = arch.widths();
    let argmin = |end: usize| -> usize {
        // min_by_key keeps the first minimum
        (0..end).min_by_key(|&i| widths[i]).expect("nonempty range")
    };
    let mut indices = vec![argmin(widths.len())];
    while let Some(&last) = indices.last() {
        if last == 0 {
            break;
        }
        indices.push(argmin(last));
    }
    let bottleneck_widths = indices.iter().map(|&i| widths[i]).collect();
    BottleneckDecomposition {
        indices,
        widths: bottleneck_widths,
    }
}

/// Reference radius `√d_min / (ℓ ln d_max)^{80ℓ}` for an architecture.
pub fn paper_radius(arch: &Architecture) -> Result<f64> {
    radius_formula(arch.d_min() as f64, arch.depth(), arch.d_max() as f64)
}

/// `√d_min / (ℓ ln d_max)^{80ℓ}`, evaluated in log space since the value
/// underflows quickly.
pub fn radius_formula(d_min: f64, ell: usize, d_max: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::Domain("radius needs at least one hidden layer".into()));
    }
    let base = ell as f64 * d_max.ln();
    if !(base >= 1.0) {
        return Err(Error::Domain(format!(
            "ℓ·ln(d_max) = {base} is below 1; the radius formula is meaningless"
        )));
    }
    Ok((0.5 * d_min.ln() - 80.0 * ell as f64 * base.ln()).exp())
}
