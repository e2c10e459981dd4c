use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A reproducible random stream identified by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8, a counter-based generator: the master seed fixes the
/// key and the stream id selects one of 2⁶⁴ disjoint keystreams, so trial `i`
/// of a sweep can own stream `i` no matter which worker runs it.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], std: f64) {
        for v in out.iter_mut() {
            *v = std * self.rng.sample::<f64, _>(StandardNormal);
        }
    }

    pub fn normal_vec(&mut self, dim: usize, std: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        self.fill_normal(&mut v, std);
        v
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform on the sphere of the given radius centred at the origin.
    pub fn sphere_point(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        assert!(dim >= 1, "sphere_point: zero dimension");
        loop {
            let g = self.normal_vec(dim, 1.0);
            let n = super::norm(&g);
            if n > 0.0 {
                return g.into_iter().map(|v| radius * v / n).collect();
            }
        }
    }

    /// Uniform in the closed ball `B(center, radius)`: a uniform direction
    /// scaled by `radius · s^{1/d}` with `s` uniform on [0, 1].
    pub fn ball_point(&mut self, center: &[f64], radius: f64) -> Vec<f64> {
        let d = center.len();
        let u = self.sphere_point(d, 1.0);
        let r = radius * self.uniform().powf(1.0 / d as f64);
        super::axpy(center, r, &u)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{distance, norm};

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = RngStream::new(9, 4);
        let mut b = RngStream::new(9, 4);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(9, 4);
        let mut b = RngStream::new(9, 5);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let n = 200_000;
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        let c: f64 = (0..n)
            .map(|_| a.standard_normal() * b.standard_normal())
            .sum::<f64>()
            / n as f64;
        // sd of the sample correlation is 1/sqrt(n) ≈ 0.0022
        assert!(c.abs() < 0.012, "correlation {c}");
    }

    #[test]
    fn sphere_and_ball_points_have_the_right_radius() {
        let mut rng = RngStream::new(2, 0);
        let p = rng.sphere_point(50, 3.0);
        assert!((norm(&p) - 3.0).abs() < 1e-12);
        let c = vec![1.0; 50];
        for _ in 0..100 {
            let y = rng.ball_point(&c, 0.5);
            assert!(distance(&y, &c) <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn ball_radius_distribution_is_uniform_in_volume() {
        // P(|y - c| <= r/2) = 2^{-d}; in d = 2 that is 1/4
        let mut rng = RngStream::new(5, 0);
        let c = [0.0, 0.0];
        let n = 40_000;
        let inner = (0..n)
            .filter(|_| norm(&rng.ball_point(&c, 1.0)) <= 0.5)
            .count() as f64
            / n as f64;
        assert!((inner - 0.25).abs() < 0.0125, "inner fraction {inner}");
    }
}
