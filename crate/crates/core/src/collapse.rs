//! Very deep networks: the arc-cosine kernel recursion and simulation of
//! correlation collapse under the 2/fan-in initialization.
//!
//! A random ReLU layer maps inputs at angle θ to images whose normalized
//! expected inner product is `sin θ/π + (1 − θ/π) cos θ`. Iterating the map
//! drives every pair toward correlation 1, so deep networks become nearly
//! constant on the sphere. [`collapse_simulate`] checks the mechanism at
//! sizes that fit in memory; the asymptotic regime itself is out of reach.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{angle, batch_matvec, dot, gaussian_matrix, norm, RngStream};
use crate::network::InitMode;
use crate::stats::{mean, median};

/// Outputs below this are flagged when forming constancy ratios.
pub const SMALL_OUTPUT: f64 = 1e-6;
const RATIO_FLOOR: f64 = 1e-12;

fn check_angle(theta: f64) -> Result<()> {
    if (0.0..=PI).contains(&theta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("angle {theta} outside [0, π]")))
    }
}

/// `sin θ/π + (1 − θ/π)·cos θ`
pub fn kernel_map(theta: f64) -> Result<f64> {
    check_angle(theta)?;
    Ok(theta.sin() / PI + (1.0 - theta / PI) * theta.cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub theta: f64,
    pub n_draws: usize,
    /// `E[σ(g·x)σ(g·y)] / (1/2)` estimated from the draws.
    pub estimate: f64,
    /// Standard error of `estimate`.
    pub std_error: f64,
    /// Standard error of the unnormalized mean `E[σ(g·x)σ(g·y)]`.
    pub numerator_std_error: f64,
}

/// Monte Carlo estimate of the normalized kernel with `x = (1, 0)`,
/// `y = (cos θ, sin θ)` and `g ∼ N(0, I₂)`. The normalizer uses the exact
/// second moment `E σ(g·x)² = 1/2`.
pub fn kernel_mc_estimate(theta: f64, n_draws: usize, rng: &mut RngStream) -> Result<KernelEstimate> {
    check_angle(theta)?;
    if n_draws < 10_000 {
        return Err(Error::Domain(format!("kernel estimate needs ≥ 10⁴ draws, got {n_draws}")));
    }
    let (s, c) = theta.sin_cos();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_draws {
        let g0 = rng.standard_normal();
        let g1 = rng.standard_normal();
        let v = g0.max(0.0) * (c * g0 + s * g1).max(0.0);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_draws as f64;
    let m = sum / n;
    let var = ((sum_sq / n - m * m) * n / (n - 1.0)).max(0.0);
    let numerator_std_error = (var / n).sqrt();
    Ok(KernelEstimate {
        theta,
        n_draws,
        estimate: 2.0 * m,
        std_error: 2.0 * numerator_std_error,
        numerator_std_error,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelStep {
    pub theta: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelTrace {
    pub theta_0: f64,
    /// Steps `t = 1..=steps`.
    pub steps: Vec<KernelStep>,
}

/// `ρ_{t+1} = kernel_map(θ_t)`, `θ_{t+1} = arccos ρ_{t+1}`.
pub fn kernel_iterate(theta_0: f64, steps: usize) -> Result<KernelTrace> {
    check_angle(theta_0)?;
    if steps == 0 {
        return Err(Error::Domain("kernel iteration needs at least one step".into()));
    }
    let mut theta = theta_0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let rho = kernel_map(theta)?;
        theta = rho.clamp(-1.0, 1.0).acos();
        out.push(KernelStep { theta, rho });
    }
    Ok(KernelTrace { theta_0, steps: out })
}

/// `sin x − x cos x − (1 − cos x)^{3/2}/15`
pub fn sin_cos_margin(x: f64) -> f64 {
    let c = x.cos();
    x.sin() - x * c - (1.0 - c).powf(1.5) / 15.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinCosGap {
    pub n_grid: usize,
    pub min_margin: f64,
    pub argmin: f64,
}

/// Minimum of [`sin_cos_margin`] over `n_grid` evenly spaced points of
/// `[0, π]`, endpoints included.
pub fn sin_cos_gap(n_grid: usize) -> Result<SinCosGap> {
    if n_grid < 100 {
        return Err(Error::Domain(format!("grid needs ≥ 100 points, got {n_grid}")));
    }
    let step = PI / (n_grid - 1) as f64;
    let (argmin, min_margin) = (0..n_grid)
        .map(|k| {
            let x = if k == n_grid - 1 { PI } else { k as f64 * step };
            (x, sin_cos_margin(x))
        })
        .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    Ok(SinCosGap {
        n_grid,
        min_margin,
        argmin,
    })
}

/// Measurements after one hidden layer, indexed by pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseLayer {
    pub layer: usize,
    /// `cos(f_i(x), f_i(y))`
    pub cosines: Vec<f64>,
    /// Kernel recursion seeded at the pair's input angle.
    pub kernel_cosines: Vec<f64>,
    pub norms_x: Vec<f64>,
    pub norms_y: Vec<f64>,
    /// `‖f_i(x)‖ / (√(d_i/d_{i−1}) ‖f_{i−1}(x)‖)`; 1 in expectation.
    pub gains_x: Vec<f64>,
    pub gains_y: Vec<f64>,
    /// `|g(x) − g(y)| / (|g(x)| + 10⁻¹²)` for the readout `g` applied here.
    pub ratios: Vec<f64>,
    /// Pairs with `|g(x)| <` [`SMALL_OUTPUT`].
    pub small_outputs: usize,
}

impl CollapseLayer {
    pub fn mean_cosine(&self) -> f64 {
        mean(&self.cosines)
    }

    pub fn mean_kernel_cosine(&self) -> f64 {
        mean(&self.kernel_cosines)
    }

    pub fn median_ratio(&self) -> f64 {
        median(&self.ratios)
    }

    /// Median of `‖f_i‖` over both inputs of every pair.
    pub fn median_norm(&self) -> f64 {
        median(&[self.norms_x.as_slice(), &self.norms_y].concat())
    }

    pub fn median_gain(&self) -> f64 {
        median(&[self.gains_x.as_slice(), &self.gains_y].concat())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub d: usize,
    pub width: usize,
    pub depth: usize,
    pub n_pairs: usize,
    pub master_seed: u64,
    pub initial_angles: Vec<f64>,
    pub input_norms_x: Vec<f64>,
    pub input_norms_y: Vec<f64>,
    /// Layers `1..=depth`.
    pub layers: Vec<CollapseLayer>,
}

impl CollapseReport {
    /// Mean of `|cos_emp − cos_kernel|` over all pairs and the first
    /// `layers` layers.
    pub fn cosine_track_deviation(&self, layers: usize) -> f64 {
        let dev: Vec<f64> = self.layers[..layers.min(self.depth)]
            .iter()
            .flat_map(|l| l.cosines.iter().zip(&l.kernel_cosines).map(|(a, b)| (a - b).abs()))
            .collect();
        mean(&dev)
    }

    /// `1 ≤ i ≤ depth`
    pub fn layer(&self, i: usize) -> &CollapseLayer {
        &self.layers[i - 1]
    }

    /// Median over all inputs of `‖f_i‖ / (√(d_i/d) ‖x‖)`, the layer norm
    /// relative to what exact length preservation from the input predicts.
    pub fn median_normalized_norm(&self, i: usize) -> f64 {
        let scale = (self.width as f64 / self.d as f64).sqrt();
        let l = self.layer(i);
        let v: Vec<f64> = l
            .norms_x
            .iter()
            .zip(&self.input_norms_x)
            .chain(l.norms_y.iter().zip(&self.input_norms_y))
            .map(|(n, x)| n / (scale * x))
            .collect();
        median(&v)
    }
}

/// Simulates `n_pairs` pairs uniform on the unit sphere through a
/// DepthCollapse network of `depth` hidden layers of width `width`.
///
/// Streams: pairs come from stream 0, `W_i` from stream `i`, and a scalar
/// readout (variance `2/width`) from stream `depth + 1`. The readout is
/// applied after every layer so each prefix of the network yields a
/// constancy ratio. Layers are generated and discarded one at a time.
pub fn collapse_simulate(d: usize, width: usize, depth: usize, n_pairs: usize, master_seed: u64) -> Result<CollapseReport> {
    if n_pairs < 2 {
        return Err(Error::Domain(format!("need ≥ 2 pairs, got {n_pairs}")));
    }
    let mut rng = RngStream::new(master_seed, 0);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_pairs)
        .map(|_| (rng.sphere_point(d, 1.0), rng.sphere_point(d, 1.0)))
        .collect();
    collapse_simulate_pairs(d, width, depth, &pairs, master_seed)
}

/// [`collapse_simulate`] on caller-supplied pairs.
pub fn collapse_simulate_pairs(
    d: usize,
    width: usize,
    depth: usize,
    pairs: &[(Vec<f64>, Vec<f64>)],
    master_seed: u64,
) -> Result<CollapseReport> {
    if d < 2 || width < 8 || depth < 1 {
        return Err(Error::Domain(format!(
            "need d ≥ 2, width ≥ 8, depth ≥ 1; got d = {d}, width = {width}, depth = {depth}"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Domain("no input pairs".into()));
    }
    for (x, y) in pairs {
        if x.len() != d || y.len() != d {
            return Err(Error::Shape(format!("pair inputs must have dimension {d}")));
        }
        if norm(x) == 0.0 || norm(y) == 0.0 {
            return Err(Error::DegenerateInput("pair contains a zero vector".into()));
        }
    }
    let n = pairs.len();
    let mode = InitMode::DepthCollapse;
    let initial_angles: Vec<f64> = pairs.iter().map(|(x, y)| angle(x, y)).collect();
    let tracks = initial_angles
        .iter()
        .map(|&t| kernel_iterate(t.clamp(0.0, PI), depth))
        .collect::<Result<Vec<_>>>()?;
    let readout = RngStream::new(master_seed, depth as u64 + 1).normal_vec(width, mode.weight_std(width));

    // rows 0..n hold the x's, rows n..2n the y's
    let mut batch: Vec<f64> = Vec::with_capacity(2 * n * d);
    batch.extend(pairs.iter().flat_map(|(x, _)| x.iter().copied()));
    batch.extend(pairs.iter().flat_map(|(_, y)| y.iter().copied()));
    let mut prev_norms: Vec<f64> = batch.chunks(d).map(norm).collect();
    let input_norms = prev_norms.clone();
    let mut fan_in = d;

    let mut layers = Vec::with_capacity(depth);
    for i in 1..=depth {
        let mut layer_rng = RngStream::new(master_seed, i as u64);
        let w = gaussian_matrix(width, fan_in, mode.weight_std(fan_in), &mut layer_rng);
        batch = batch_matvec(&w, &batch, 2 * n);
        batch.iter_mut().for_each(|v| *v = v.max(0.0));

        let rows: Vec<&[f64]> = batch.chunks(width).collect();
        let norms: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
        let expansion = (width as f64 / fan_in as f64).sqrt();
        let gains: Vec<f64> = norms
            .iter()
            .zip(&prev_norms)
            .map(|(now, before)| if *before == 0.0 { 0.0 } else { now / (expansion * before) })
            .collect();
        let cosines = (0..n).map(|p| crate::linalg::cosine(rows[p], rows[n + p])).collect();
        let outputs: Vec<f64> = rows.iter().map(|r| dot(&readout, r)).collect();
        let ratios = (0..n)
            .map(|p| (outputs[p] - outputs[n + p]).abs() / (outputs[p].abs() + RATIO_FLOOR))
            .collect();
        let small_outputs = outputs[..n].iter().filter(|v| v.abs() < SMALL_OUTPUT).count();
        layers.push(CollapseLayer {
            layer: i,
            cosines,
            kernel_cosines: tracks.iter().map(|t| t.steps[i - 1].rho).collect(),
            norms_x: norms[..n].to_vec(),
            norms_y: norms[n..].to_vec(),
            gains_x: gains[..n].to_vec(),
            gains_y: gains[n..].to_vec(),
            ratios,
            small_outputs,
        });
        prev_norms = norms;
        fan_in = width;
    }

    Ok(CollapseReport {
        d,
        width,
        depth,
        n_pairs: n,
        master_seed,
        initial_angles,
        input_norms_x: input_norms[..n].to_vec(),
        input_norms_y: input_norms[n..].to_vec(),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_map_special_values() {
        assert_eq!(kernel_map(0.0).unwrap(), 1.0);
        assert!(kernel_map(PI).unwrap().abs() < 1e-16);
        assert!((kernel_map(PI / 2.0).unwrap() - 1.0 / PI).abs() < 1e-16);
        assert!(matches!(kernel_map(-1e-9), Err(Error::Domain(_))));
        assert!(matches!(kernel_map(PI + 1e-9), Err(Error::Domain(_))));
        assert!(kernel_map(f64::NAN).is_err());
    }

    #[test]
    fn kernel_dominates_cosine_on_a_grid() {
        for k in 0..=10_000 {
            let t = PI * k as f64 / 10_000.0;
            assert!(kernel_map(t).unwrap() >= t.cos() - 1e-15, "θ = {t}");
        }
    }

    #[test]
    fn iterates_rise_monotonically_from_every_start() {
        for k in 0..=200 {
            let trace = kernel_iterate(PI * k as f64 / 200.0, 300).unwrap();
            let mut prev = trace.steps[0].rho;
            assert!((0.0..=1.0).contains(&prev));
            for s in &trace.steps[1..] {
                assert!(s.rho >= prev - 1e-15);
                assert!(s.rho <= 1.0);
                prev = s.rho;
            }
        }
    }

    #[test]
    fn kernel_iterate_examples() {
        let fixed = kernel_iterate(0.0, 20).unwrap();
        assert!(fixed.steps.iter().all(|s| s.rho == 1.0 && s.theta == 0.0));

        let half = kernel_iterate(PI / 2.0, 500).unwrap();
        assert_eq!(half.steps.len(), 500);
        assert!(half.steps[499].rho > 0.99);

        let anti = kernel_iterate(PI, 1).unwrap();
        assert!(anti.steps[0].rho.abs() < 1e-16);
        assert!((anti.steps[0].theta - PI / 2.0).abs() < 1e-15);

        assert!(kernel_iterate(1.0, 0).is_err());
    }

    #[test]
    fn monte_carlo_kernel_matches_closed_form() {
        let mut rng = RngStream::new(17, 0);
        let aligned = kernel_mc_estimate(0.0, 100_000, &mut rng).unwrap();
        assert!((aligned.estimate - 1.0).abs() <= 3.0 * aligned.std_error);
        for theta in [PI / 2.0, 2.0 * PI / 3.0] {
            let est = kernel_mc_estimate(theta, 1_000_000, &mut rng).unwrap();
            let exact = kernel_map(theta).unwrap();
            assert!((est.estimate - exact).abs() <= 3.0 * est.std_error, "{est:?} vs {exact}");
            assert!((est.std_error - 2.0 * est.numerator_std_error).abs() < 1e-18);
        }
        assert!(kernel_mc_estimate(1.0, 9_999, &mut rng).is_err());
    }

    #[test]
    fn sin_cos_gap_examples() {
        assert_eq!(sin_cos_margin(0.0), 0.0);
        let at_pi = PI - 2f64.powf(1.5) / 15.0;
        assert!((sin_cos_margin(PI) - at_pi).abs() < 1e-12);
        assert!(sin_cos_margin(PI) > 2.9);
        let gap = sin_cos_gap(10_000).unwrap();
        assert!(gap.min_margin >= 0.0);
        assert_eq!(gap.argmin, 0.0);
        assert!(sin_cos_gap(99).is_err());
    }

    #[test]
    fn identical_pair_stays_identical() {
        let mut rng = RngStream::new(0, 0);
        let x = rng.sphere_point(6, 1.0);
        let r = collapse_simulate_pairs(6, 16, 1, &[(x.clone(), x)], 3).unwrap();
        let l = r.layer(1);
        assert!((l.cosines[0] - 1.0).abs() < 1e-15);
        assert_eq!(l.kernel_cosines[0], 1.0);
        assert_eq!(l.ratios[0], 0.0);
    }

    #[test]
    fn shallow_simulation_shapes_and_determinism() {
        let a = collapse_simulate(5, 64, 4, 3, 11).unwrap();
        assert_eq!(a, collapse_simulate(5, 64, 4, 3, 11).unwrap());
        assert_eq!(a.layers.len(), 4);
        for l in &a.layers {
            assert_eq!(l.cosines.len(), 3);
            assert!(l.cosines.iter().all(|c| (-1.0..=1.0).contains(c)));
            assert!(l.norms_x.iter().chain(&l.norms_y).all(|&v| v >= 0.0));
        }
        assert!(a.input_norms_x.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(collapse_simulate(5, 64, 4, 1, 11).is_err());
        assert!(collapse_simulate(1, 64, 4, 2, 11).is_err());
        assert!(collapse_simulate(5, 7, 4, 2, 11).is_err());
    }

    #[test]
    fn wide_layers_preserve_length_and_follow_the_kernel() {
        let r = collapse_simulate(10, 1024, 20, 20, 5).unwrap();
        for i in 1..=20 {
            let g = r.layer(i).median_gain();
            assert!((0.9..1.1).contains(&g), "layer {i}: gain {g}");
        }
        assert!((0.8..1.25).contains(&r.median_normalized_norm(1)));
        assert!(r.cosine_track_deviation(20) < 0.05);
    }

    proptest! {
        #[test]
        fn kernel_map_lies_in_unit_interval(t in 0.0..=PI) {
            let v = kernel_map(t).unwrap();
            prop_assert!((-1e-16..=1.0).contains(&v));
        }
    }
}
