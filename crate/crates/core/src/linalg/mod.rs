//! Dense real linear algebra and reproducible random sampling.
//!
//! Vectors are plain `[f64]` slices; [`Matrix`] is a row-major dense matrix.
//! Everything is 64-bit: the exactness checks on gradient decompositions
//! need around ten significant digits of headroom.

mod ks;
mod matrix;
mod rng;
mod spectral;

pub use ks::{ks_critical_value, ks_two_sample, KS_COEFFICIENT_001};
pub use matrix::{batch_matvec, gaussian_matrix, Matrix};
pub use rng::RngStream;
pub use spectral::{operator_norm, spectral_norm, LinearOperator};

/// Inner product. Four independent accumulators let the compiler vectorize.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean distance between two points.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "distance: length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "sub: length mismatch");
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

/// `a + t * dir`
pub fn axpy(a: &[f64], t: f64, dir: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), dir.len(), "axpy: length mismatch");
    a.iter().zip(dir).map(|(x, d)| x + t * d).collect()
}

/// Cosine of the angle between two nonzero vectors, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return 0.0;
    }
    (dot(a, b) / denom).clamp(-1.0, 1.0)
}

/// Angle in [0, π] between two nonzero vectors, via
/// `2·atan2(‖â − b̂‖, ‖â + b̂‖)`, which stays accurate near 0 and π.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let (mut minus, mut plus) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        minus += (u - v) * (u - v);
        plus += (u + v) * (u + v);
    }
    2.0 * minus.sqrt().atan2(plus.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (1..=7).map(f64::from).collect();
        let b = vec![1.0; 7];
        assert_eq!(dot(&a, &b), 28.0);
        assert_eq!(norm(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn angle_of_orthogonal_and_antipodal() {
        assert!((angle(&[1.0, 0.0], &[0.0, 2.0]) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(angle(&[1.0, 1.0], &[-1.0, -1.0]), std::f64::consts::PI);
        assert_eq!(angle(&[1.0, 1.0], &[2.0, 2.0]), 0.0);
        assert!((angle(&[1.0, 0.0], &[1.0, 1e-9]) - 1e-9).abs() < 1e-20);
    }
}
