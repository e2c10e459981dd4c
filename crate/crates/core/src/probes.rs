//! Monte Carlo probes of the concentration facts behind the attack.
//!
//! Each probe measures one quantity on random networks and compares it to a
//! bound. Bounds are probabilistic, so probes report how often they failed
//! instead of erroring. Where a bound carries an unnamed constant the probe
//! takes it as a parameter and reports a fitted value alongside.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    angle, distance, dot, gaussian_matrix, ks_critical_value, ks_two_sample, norm, operator_norm,
    spectral_norm, sub, RngStream, KS_COEFFICIENT_001,
};
use crate::network::{
    bottleneck_decomposition, build_network, Architecture, InitMode, MaskedSegment, Network,
    TiePolicy,
};
use crate::stats::{median, Quantiles};

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 100_000;

/// A table of measurements with the bounds they were checked against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub name: String,
    pub params: IndexMap<String, f64>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Quantiles of each column over all rows.
    pub summary: IndexMap<String, Quantiles>,
    pub bounds: IndexMap<String, f64>,
    /// Derived scalars, e.g. fitted constants.
    pub extra: IndexMap<String, f64>,
    pub checks: usize,
    pub violations: usize,
    pub violation_frequency: f64,
}

impl ProbeReport {
    fn new(name: &str, columns: Vec<String>) -> Self {
        ProbeReport {
            name: name.to_string(),
            params: IndexMap::new(),
            columns,
            rows: Vec::new(),
            summary: IndexMap::new(),
            bounds: IndexMap::new(),
            extra: IndexMap::new(),
            checks: 0,
            violations: 0,
            violation_frequency: 0.0,
        }
    }

    fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    fn finish(mut self, checks: usize, violations: usize) -> Self {
        self.summary.clear();
        for (k, name) in self.columns.iter().enumerate() {
            let values: Vec<f64> = self.rows.iter().map(|r| r[k]).collect();
            if let Some(q) = Quantiles::of(&values) {
                self.summary.insert(name.clone(), q);
            }
        }
        self.checks = checks;
        self.violations = violations;
        self.violation_frequency = if checks == 0 {
            0.0
        } else {
            violations as f64 / checks as f64
        };
        self
    }

    /// All values of the named column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn columns(fixed: &[&str]) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).collect()
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Input with `‖x‖ = √d` used by the value/gradient probe.
pub fn ones(d: usize) -> Vec<f64> {
    vec![1.0; d]
}

/// Runs `probe` on `nets` independent Standard networks. Net `t` and its
/// input (uniform on the sphere of radius `√d`) come from stream
/// `(master_seed, t)`, which the probe keeps drawing from. Rows are stacked
/// in net order behind a leading `net` column; each extra scalar is
/// summarized by its median and max over nets.
pub fn ensemble<F>(arch: &Architecture, nets: usize, master_seed: u64, probe: F) -> Result<ProbeReport>
where
    F: Fn(&Network, &[f64], &mut RngStream) -> Result<ProbeReport> + Sync,
{
    if nets == 0 {
        return Err(Error::Domain("ensemble needs at least one network".into()));
    }
    let d = arch.input_dim();
    let reports = (0..nets)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(master_seed, t as u64);
            let net = build_network(arch, InitMode::Standard, &mut rng);
            let x = rng.sphere_point(d, (d as f64).sqrt());
            probe(&net, &x, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let first = &reports[0];
    let mut cols = vec!["net".to_string()];
    cols.extend(first.columns.iter().cloned());
    let mut merged = ProbeReport::new(&first.name, cols);
    merged.params = first.params.clone();
    merged.params.insert("nets".into(), nets as f64);
    merged.params.insert("master_seed".into(), master_seed as f64);
    merged.bounds = first.bounds.clone();
    let (mut checks, mut violations) = (0, 0);
    for (t, r) in reports.iter().enumerate() {
        for row in &r.rows {
            let mut full = Vec::with_capacity(row.len() + 1);
            full.push(t as f64);
            full.extend_from_slice(row);
            merged.push(full);
        }
        checks += r.checks;
        violations += r.violations;
    }
    for key in first.extra.keys() {
        let values: Vec<f64> = reports.iter().filter_map(|r| r.extra.get(key).copied()).collect();
        merged.extra.insert(format!("{key}_median"), median(&values));
        merged
            .extra
            .insert(format!("{key}_max"), values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(merged.finish(checks, violations))
}

/// `|f(x)|` and `‖∇f(x)‖` at `x = (1,…,1)` over `trials` independent
/// Standard networks (net `t` from stream `t`).
///
/// The violation count is for `‖∇f(x)‖ ≥ 2^{−(ℓ+1)}`. The value bound
/// `|f(x)| ≤ c·2^ℓ·√ln(1/δ)` has an uncalibrated `c`, so its hit rate goes to
/// `extra` only.
pub fn probe_value_gradient(
    arch: &Architecture,
    trials: usize,
    delta: f64,
    c: f64,
    master_seed: u64,
) -> Result<ProbeReport> {
    if trials < 100 {
        return Err(Error::Domain(format!("value/gradient probe needs ≥ 100 trials, got {trials}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let ell = arch.depth() as i32;
    let grad_bound = 0.5f64.powi(ell + 1);
    let value_bound = c * 2f64.powi(ell) * (1.0 / delta).ln().sqrt();
    let x = ones(arch.input_dim());

    let rows: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(master_seed, t as u64);
            let net = build_network(arch, InitMode::Standard, &mut rng);
            let trace = net.forward(&x, TiePolicy::RandomizedTies, &mut rng);
            let g = net.gradient(&trace);
            let gn = norm(&g);
            let f = trace.output;
            vec![
                t as f64,
                f.abs(),
                gn,
                (f - dot(&g, &x)).abs(),
                flag(gn >= grad_bound),
                flag(f.abs() <= value_bound),
            ]
        })
        .collect();

    let mut report = ProbeReport::new(
        "value_gradient",
        columns(&["trial", "abs_value", "grad_norm", "euler_residual", "grad_bound_ok", "value_bound_ok"]),
    )
    .param("trials", trials as f64)
    .param("delta", delta)
    .param("c", c)
    .param("master_seed", master_seed as f64);
    report.bounds.insert("grad_norm_lower".into(), grad_bound);
    report.bounds.insert("abs_value_upper".into(), value_bound);
    let grad_ok = rows.iter().filter(|r| r[4] == 1.0).count();
    let value_ok = rows.iter().filter(|r| r[5] == 1.0).count();
    report.extra.insert("grad_bound_frequency".into(), grad_ok as f64 / trials as f64);
    report.extra.insert("value_bound_frequency".into(), value_ok as f64 / trials as f64);
    for row in rows {
        report.push(row);
    }
    Ok(report.finish(trials, trials - grad_ok))
}

fn check_ball(radius: f64, n_samples: usize) -> Result<()> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!("radius must be finite and ≥ 0, got {radius}")));
    }
    if n_samples < 10 {
        return Err(Error::Domain(format!("need ≥ 10 ball samples, got {n_samples}")));
    }
    Ok(())
}

/// Layer norms `‖f_i(x)‖` against `√d_i / 2^i`, and for `y` uniform in
/// `B(x, radius)` the largest pre- and post-activation image distances per
/// layer, raw and divided by the radius. One row per hidden layer.
pub fn probe_scale_preservation(
    net: &Network,
    x: &[f64],
    radius: f64,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<ProbeReport> {
    check_ball(radius, n_samples)?;
    let depth = net.depth();
    let tx = net.forward(x, TiePolicy::RandomizedTies, rng);
    let mut max_pre = vec![0.0f64; depth];
    let mut max_post = vec![0.0f64; depth];
    for _ in 0..n_samples {
        let y = rng.ball_point(x, radius);
        let ty = net.forward(&y, TiePolicy::RandomizedTies, rng);
        for i in 0..depth {
            max_pre[i] = max_pre[i].max(distance(&tx.preactivations[i], &ty.preactivations[i]));
            max_post[i] = max_post[i].max(distance(&tx.postactivations[i], &ty.postactivations[i]));
        }
    }

    let mut report = ProbeReport::new(
        "scale_preservation",
        columns(&[
            "layer",
            "norm",
            "bound",
            "max_pre_distance",
            "max_post_distance",
            "max_pre_distance_per_radius",
            "max_post_distance_per_radius",
        ]),
    )
    .param("radius", radius)
    .param("n_samples", n_samples as f64);
    let per_radius = |v: f64| if radius > 0.0 { v / radius } else { 0.0 };
    let mut violations = 0;
    for i in 1..=depth {
        let n = norm(&tx.postactivations[i - 1]);
        let bound = (net.arch().width(i) as f64).sqrt() / 2f64.powi(i as i32);
        if n < bound {
            violations += 1;
        }
        report.bounds.insert(format!("norm_lower_{i}"), bound);
        report.push(vec![
            i as f64,
            n,
            bound,
            max_pre[i - 1],
            max_post[i - 1],
            per_radius(max_pre[i - 1]),
            per_radius(max_post[i - 1]),
        ]);
    }
    Ok(report.finish(depth, violations))
}

/// Largest `alpha` for which `1 − 2√(2/π)·alpha` is positive.
pub fn max_margin_alpha() -> f64 {
    (std::f64::consts::PI / 8.0).sqrt()
}

/// For each layer `i < ℓ`, the number of units `j` of layer `i+1` with
/// `|⟨(W_{i+1})_j, f_i(x)⟩| ≥ alpha·‖f_i(x)‖/√d_i`, against
/// `(1 − 2√(2/π)·alpha)·d_{i+1}`. The scalar output layer is not checked: a
/// single unit cannot meet a fractional count with high probability.
pub fn probe_activation_margin(net: &Network, x: &[f64], alpha: f64) -> Result<ProbeReport> {
    if !(0.0..max_margin_alpha()).contains(&alpha) {
        return Err(Error::Domain(format!(
            "alpha must lie in [0, √(π/8)) for a positive bound, got {alpha}"
        )));
    }
    // masks are irrelevant here, so no ties are ever drawn
    let mut unused = RngStream::new(0, 0);
    let trace = net.forward(x, TiePolicy::TiesToZero, &mut unused);
    let fraction = 1.0 - 2.0 * (2.0 / std::f64::consts::PI).sqrt() * alpha;

    let mut report = ProbeReport::new(
        "activation_margin",
        columns(&["layer", "count", "bound", "target_width", "violated"]),
    )
    .param("alpha", alpha);
    let mut violations = 0;
    for i in 0..net.depth() {
        let fi = trace.layer_output(i);
        let fi_norm = norm(fi);
        if fi_norm == 0.0 {
            return Err(Error::DegenerateInput(format!("layer {i} output is zero")));
        }
        let threshold = alpha * fi_norm / (net.arch().width(i) as f64).sqrt();
        let pre = &trace.preactivations[i];
        let count = pre.iter().filter(|v| v.abs() >= threshold).count();
        let bound = fraction * pre.len() as f64;
        let violated = (count as f64) < bound;
        violations += usize::from(violated);
        report.bounds.insert(format!("count_lower_{i}"), bound);
        report.push(vec![i as f64, count as f64, bound, pre.len() as f64, flag(violated)]);
    }
    Ok(report.finish(net.depth(), violations))
}

/// Gradient change over `y` uniform in `B(x, radius)`: `‖∇f(x) − ∇f(y)‖`,
/// the per-layer decomposition terms `‖Δ_j‖`, and mask flip counts
/// `Tr|D_j(x) − D_j(y)|`. A violation is a sample where `Σ_j ‖Δ_j‖` falls
/// short of the total (it never should). `extra` holds
/// `max_y ‖∇f(x)−∇f(y)‖/‖∇f(x)‖` and the fitted `C` in `C^ℓ/ln^ℓ d_max`.
pub fn probe_gradient_smoothness(
    net: &Network,
    x: &[f64],
    radius: f64,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<ProbeReport> {
    check_ball(radius, n_samples)?;
    let depth = net.depth();
    let mut cols = columns(&["sample", "distance", "grad_diff", "relative_diff", "term_norm_sum"]);
    cols.extend((1..=depth).map(|j| format!("term_norm_{j}")));
    cols.extend((1..=depth).map(|j| format!("mask_flips_{j}")));
    cols.push("triangle_ok".into());
    let mut report = ProbeReport::new("gradient_smoothness", cols)
        .param("radius", radius)
        .param("n_samples", n_samples as f64);

    let tx = net.forward(x, TiePolicy::RandomizedTies, rng);
    let grad_norm = norm(&net.gradient(&tx));
    let mut violations = 0;
    let mut max_diff = 0.0f64;
    for s in 0..n_samples {
        let y = rng.ball_point(x, radius);
        let ty = net.forward(&y, TiePolicy::RandomizedTies, rng);
        let dec = net.grad_difference_decomposition(&tx, &ty);
        let diff = distance(&dec.grad_x, &dec.grad_y);
        let terms: Vec<f64> = dec.terms.iter().map(|t| norm(t)).collect();
        let sum: f64 = terms.iter().sum();
        let slack = 1e-12 * (norm(&dec.grad_x) + norm(&dec.grad_y));
        let ok = sum + slack >= diff;
        violations += usize::from(!ok);
        max_diff = max_diff.max(diff);
        let relative = if diff == 0.0 { 0.0 } else { diff / grad_norm };
        let mut row = vec![s as f64, distance(x, &y), diff, relative, sum];
        row.extend(terms);
        row.extend(
            tx.masks
                .iter()
                .zip(&ty.masks)
                .map(|(a, b)| a.iter().zip(b).filter(|(p, q)| p != q).count() as f64),
        );
        row.push(flag(ok));
        report.push(row);
    }

    report.extra.insert("grad_norm".into(), grad_norm);
    let max_relative = if max_diff == 0.0 { 0.0 } else { max_diff / grad_norm };
    report.extra.insert("max_relative_diff".into(), max_relative);
    if depth > 0 {
        let log_d = (net.arch().d_max() as f64).ln();
        report
            .extra
            .insert("fitted_c".into(), max_diff.powf(1.0 / depth as f64) * log_d);
    }
    Ok(report.finish(n_samples, violations))
}

/// Spectral norms of the masked products between consecutive bottleneck
/// layers, with masks taken at `y` uniform in `B(x, radius)`, against
/// `(c·ℓ·ln d_max)^{(i_j − i_{j+1})/2}`. `extra.fitted_c` is the smallest `c`
/// that would cover every measured segment.
pub fn probe_segment_spectral(
    net: &Network,
    x: &[f64],
    radius: f64,
    n_samples: usize,
    c: f64,
    rng: &mut RngStream,
) -> Result<ProbeReport> {
    check_ball(radius, n_samples)?;
    let decomposition = bottleneck_decomposition(net.arch());
    if decomposition.len() < 2 {
        return Err(Error::Domain(format!(
            "segment probe needs at least two bottleneck layers, found {:?}",
            decomposition.indices
        )));
    }
    let scale = net.depth() as f64 * (net.arch().d_max() as f64).ln();
    let mut report = ProbeReport::new(
        "segment_spectral",
        columns(&["sample", "upper", "lower", "norm", "bound", "violated"]),
    )
    .param("radius", radius)
    .param("n_samples", n_samples as f64)
    .param("c", c);
    for (upper, lower) in decomposition.segments() {
        let bound = (c * scale).powf((upper - lower) as f64 / 2.0);
        report.bounds.insert(format!("norm_upper_{upper}_{lower}"), bound);
    }

    let mut checks = 0;
    let mut violations = 0;
    let mut fitted = 0.0f64;
    for s in 0..n_samples {
        let y = rng.ball_point(x, radius);
        let ty = net.forward(&y, TiePolicy::RandomizedTies, rng);
        for (upper, lower) in decomposition.segments() {
            let op = MaskedSegment::new(net, &ty.masks, lower, upper);
            let m = operator_norm(&op, POWER_TOL, POWER_MAX_ITERS)?;
            let len = (upper - lower) as f64;
            let bound = report.bounds[&format!("norm_upper_{upper}_{lower}")];
            let violated = m > bound;
            checks += 1;
            violations += usize::from(violated);
            fitted = fitted.max(m.powf(2.0 / len) / scale);
            report.push(vec![s as f64, upper as f64, lower as f64, m, bound, flag(violated)]);
        }
    }
    report.extra.insert("fitted_c".into(), fitted);
    Ok(report.finish(checks, violations))
}

/// Outcome of the sign-disagreement probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignFlipRecord {
    pub n_draws: usize,
    pub empirical: f64,
    /// `θ/π`, the exact disagreement probability.
    pub oracle: f64,
    /// Binomial standard error at the oracle probability.
    pub std_error: f64,
    /// `|empirical − oracle| ≤ 3·std_error`
    pub within_band: bool,
    /// `3r/R·√ln(R/r)`; absent when `r > R`.
    pub bound: Option<f64>,
    pub r: f64,
    pub big_r: f64,
}

/// Fraction of `w ∼ N(0, I)` with `sign(w·x) ≠ sign(w·y)`, with
/// `R = ‖x‖` and `r = ‖x − y‖`.
pub fn probe_sign_flip(x: &[f64], y: &[f64], n_draws: usize, rng: &mut RngStream) -> Result<SignFlipRecord> {
    assert_eq!(x.len(), y.len(), "sign flip: dimension mismatch");
    if norm(x) == 0.0 || norm(y) == 0.0 {
        return Err(Error::DegenerateInput("sign flip probe needs nonzero x and y".into()));
    }
    if n_draws == 0 {
        return Err(Error::Domain("sign flip probe needs at least one draw".into()));
    }
    let big_r = norm(x);
    let r = distance(x, y);
    let bound = if r == 0.0 {
        Some(0.0)
    } else if r <= big_r {
        Some(3.0 * r / big_r * (big_r / r).ln().sqrt())
    } else {
        None
    };
    let oracle = angle(x, y) / std::f64::consts::PI;

    let mut w = vec![0.0; x.len()];
    let mut disagree = 0usize;
    for _ in 0..n_draws {
        rng.fill_normal(&mut w, 1.0);
        if (dot(&w, x) > 0.0) != (dot(&w, y) > 0.0) {
            disagree += 1;
        }
    }
    let empirical = disagree as f64 / n_draws as f64;
    let std_error = (oracle * (1.0 - oracle) / n_draws as f64).sqrt();
    Ok(SignFlipRecord {
        n_draws,
        empirical,
        oracle,
        std_error,
        within_band: (empirical - oracle).abs() <= 3.0 * std_error,
        bound,
        r,
        big_r,
    })
}

/// Outcome of the two-sample comparison of gradient norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistEquivRecord {
    pub trials: usize,
    pub mask_probability: f64,
    pub ks_statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// KS test between `‖∇f(x)‖` over Standard networks and
/// `‖W_{ℓ+1} ∏ D_i W_i‖` with independent Bernoulli(1/2) masks.
pub fn probe_dist_equiv(arch: &Architecture, x: &[f64], trials: usize, master_seed: u64) -> Result<DistEquivRecord> {
    probe_dist_equiv_with_masks(arch, x, trials, master_seed, 0.5)
}

/// As [`probe_dist_equiv`] with the mask probability of sample B set to
/// `mask_probability`. Sample A draws from streams `2t`, sample B from
/// `2t + 1`.
pub fn probe_dist_equiv_with_masks(
    arch: &Architecture,
    x: &[f64],
    trials: usize,
    master_seed: u64,
    mask_probability: f64,
) -> Result<DistEquivRecord> {
    if trials < 1000 {
        return Err(Error::Domain(format!("distribution test needs ≥ 1000 trials, got {trials}")));
    }
    if !(0.0..=1.0).contains(&mask_probability) {
        return Err(Error::Domain(format!("mask probability {mask_probability} outside [0, 1]")));
    }
    assert_eq!(x.len(), arch.input_dim(), "dist equiv: input dimension");
    let pairs: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(master_seed, 2 * t as u64);
            let net = build_network(arch, InitMode::Standard, &mut rng);
            let trace = net.forward(x, TiePolicy::RandomizedTies, &mut rng);
            let a = norm(&net.gradient(&trace));

            let mut rng = RngStream::new(master_seed, 2 * t as u64 + 1);
            let net = build_network(arch, InitMode::Standard, &mut rng);
            let depth = net.depth();
            let mut row = net.layer(depth + 1).row(0).to_vec();
            for i in (1..=depth).rev() {
                for v in row.iter_mut() {
                    if !rng.bernoulli(mask_probability) {
                        *v = 0.0;
                    }
                }
                row = net.layer(i).vecmat(&row);
            }
            (a, norm(&row))
        })
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let ks_statistic = ks_two_sample(&a, &b);
    let threshold = ks_critical_value(KS_COEFFICIENT_001, a.len(), b.len());
    Ok(DistEquivRecord {
        trials,
        mask_probability,
        ks_statistic,
        threshold,
        pass: ks_statistic < threshold,
        mean_a: crate::stats::mean(&a),
        mean_b: crate::stats::mean(&b),
    })
}

/// Outcome of the Gaussian matrix norm probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpectralRecord {
    pub samples: usize,
    pub violations: usize,
    /// `3(√m + √n + √ln(1/δ))`
    pub bound: f64,
    /// Mean of `‖A‖/(√m + √n)`.
    pub mean_edge_ratio: f64,
    pub norms: Vec<f64>,
}

/// Spectral norms of `samples` independent `m × n` standard Gaussian
/// matrices (sample `s` from stream `s`) against `3(√m + √n + √ln(1/δ))`.
pub fn probe_gaussian_spectral(
    m: usize,
    n: usize,
    delta: f64,
    samples: usize,
    master_seed: u64,
) -> Result<GaussianSpectralRecord> {
    if samples < 100 {
        return Err(Error::Domain(format!("gaussian spectral probe needs ≥ 100 samples, got {samples}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::Domain("matrix dimensions must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let edge = (m as f64).sqrt() + (n as f64).sqrt();
    let bound = 3.0 * (edge + (1.0 / delta).ln().sqrt());
    let norms = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = RngStream::new(master_seed, s as u64);
            let a = gaussian_matrix(m, n, 1.0, &mut rng);
            spectral_norm(&a, POWER_TOL, POWER_MAX_ITERS)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GaussianSpectralRecord {
        samples,
        violations: norms.iter().filter(|&&v| v > bound).count(),
        bound,
        mean_edge_ratio: crate::stats::mean(&norms) / edge,
        norms,
    })
}

/// `y` on the sphere of radius `‖x‖` at distance exactly `r` from `x`,
/// rotated toward a random direction orthogonal to `x`.
pub fn point_at_distance(x: &[f64], r: f64, rng: &mut RngStream) -> Vec<f64> {
    let big_r = norm(x);
    let mut u = rng.normal_vec(x.len(), 1.0);
    let proj = dot(&u, x) / (big_r * big_r);
    u = sub(&u, &crate::linalg::scaled(x, proj));
    let un = norm(&u);
    // chord r subtends angle θ with r = 2R sin(θ/2)
    let theta = 2.0 * (r / (2.0 * big_r)).clamp(0.0, 1.0).asin();
    x.iter()
        .zip(&u)
        .map(|(&xi, &ui)| xi * theta.cos() + big_r * ui / un * theta.sin())
        .collect()
}
