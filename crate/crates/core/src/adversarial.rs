//! Sign-flip perturbations along the gradient direction.
//!
//! For `f(x) ≠ 0` the attack moves along `u = −sign(f(x)) ∇f(x)/‖∇f(x)‖`
//! and looks for the smallest step `t` at which `f(x + t u)` takes the
//! opposite sign: a geometric scan brackets the crossing, bisection narrows
//! it to the requested tolerance. For a linear map the answer is exactly
//! `|f(x)|/‖∇f(x)‖`; for a wide shallow random ReLU network it is close to
//! that, which is what makes such networks easy to fool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, norm, RngStream};
use crate::network::{build_network, Architecture, InitMode, Network, TiePolicy};
use crate::stats::{least_squares_slope, quantile_sorted, sorted};

/// Budget and tolerance of a flip search, in absolute units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub t_max: f64,
    pub tol: f64,
    /// Failure probability used for the reference step `paper_eta`.
    pub delta: f64,
}

impl SearchParams {
    /// `t_max = 10‖x‖`, `tol = 10⁻⁶‖x‖`, `δ = 0.01`.
    pub fn for_input(x: &[f64]) -> Self {
        let n = norm(x);
        SearchParams {
            t_max: 10.0 * n,
            tol: 1e-6 * n,
            delta: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub f_x: f64,
    pub grad_norm: f64,
    /// `−sign(f(x)) ∇f(x)/‖∇f(x)‖`
    pub direction: Vec<f64>,
    /// Smallest flipping step found, `None` if nothing flips up to `t_max`.
    pub t_star: Option<f64>,
    /// `t_star / ‖x‖`
    pub ratio: Option<f64>,
    /// Reference step `−2^ℓ ln d √(ln 1/δ)/‖∇f(x)‖²`, when defined.
    pub paper_eta: Option<f64>,
    pub flipped: bool,
    /// Whether `|f(x + t_star u)| ≥ |f(x)|` already holds at the crossing.
    pub magnitude_at_flip: Option<bool>,
    pub evaluations: usize,
}

/// Reference step size `η = −2^ℓ ln d √(ln 1/δ) / ‖∇f(x)‖²`.
pub fn paper_eta(ell: usize, d: f64, delta: f64, grad_norm: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta = {delta} is not in (0, 1)")));
    }
    if !(d >= 2.0) {
        return Err(Error::Domain(format!("dimension {d} is below 2")));
    }
    if !(grad_norm > 0.0) {
        return Err(Error::Domain(format!("gradient norm {grad_norm} is not positive")));
    }
    let pow = 2f64.powi(ell as i32);
    Ok(-(pow * d.ln() * (1.0 / delta).ln().sqrt()) / (grad_norm * grad_norm))
}

/// Smallest `t` in `(lo, t_max]` with `pred(t)`, assuming `pred` is false at
/// `lo`. Scans `start, 2·start, …` (clamped to `t_max`) and bisects the first
/// bracket down to width `tol`. Returns the predicate-true end of the bracket.
fn first_crossing(mut pred: impl FnMut(f64) -> bool, lo: f64, start: f64, t_max: f64, tol: f64) -> Option<f64> {
    let mut lo = lo;
    let mut t = start.max(f64::MIN_POSITIVE);
    let mut hi = loop {
        let probe = t.min(t_max);
        if pred(probe) {
            break probe;
        }
        if probe >= t_max {
            return None;
        }
        lo = probe;
        t *= 2.0;
    };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

fn check_params(params: &SearchParams) -> Result<()> {
    if !(params.t_max > 0.0) || !(params.tol > 0.0) {
        return Err(Error::Domain(format!(
            "t_max = {} and tol = {} must both be positive",
            params.t_max, params.tol
        )));
    }
    Ok(())
}

/// Searches for the minimal sign-flipping step along the gradient direction.
pub fn flip_search(net: &Network, x: &[f64], params: &SearchParams) -> Result<AttackResult> {
    check_params(params)?;
    // Zero preactivations have measure zero here; resolve them to inactive so
    // the search needs no random stream.
    let mut unused = RngStream::new(0, 0);
    let trace = net.forward(x, TiePolicy::TiesToZero, &mut unused);
    let f_x = trace.output;
    if f_x == 0.0 {
        return Err(Error::DegenerateInput("f(x) is exactly zero".into()));
    }
    let grad = net.gradient(&trace);
    let grad_norm = norm(&grad);
    if grad_norm == 0.0 {
        return Err(Error::DegenerateInput("the gradient at x vanishes".into()));
    }
    let sign = f_x.signum();
    let direction: Vec<f64> = grad.iter().map(|g| -sign * g / grad_norm).collect();

    let mut evaluations = 0usize;
    let t_star = first_crossing(
        |t| {
            evaluations += 1;
            sign * net.output(&axpy(x, t, &direction)) < 0.0
        },
        0.0,
        params.t_max * 1e-6,
        params.t_max,
        params.tol,
    );
    let magnitude_at_flip = t_star.map(|t| {
        evaluations += 1;
        net.output(&axpy(x, t, &direction)).abs() >= f_x.abs()
    });
    let x_norm = norm(x);
    Ok(AttackResult {
        f_x,
        grad_norm,
        direction,
        t_star,
        ratio: t_star.map(|t| t / x_norm),
        paper_eta: paper_eta(net.depth(), x.len() as f64, params.delta, grad_norm).ok(),
        flipped: t_star.is_some(),
        magnitude_at_flip,
        evaluations,
    })
}

/// Outcome of checking both flip conditions along the attack direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub flipped: bool,
    /// `f` just past the crossing, at `t_star + tol`.
    pub f_past_crossing: Option<f64>,
    /// Whether some `t ≤ t_max` gives the opposite sign with `|f| ≥ |f(x)|`.
    pub magnitude_ok: Option<bool>,
    /// Smallest such `t`.
    pub t_both: Option<f64>,
    /// `t_both / ‖x‖`
    pub ratio: Option<f64>,
    pub attack: AttackResult,
}

/// Runs [`flip_search`], then continues along the same direction to the
/// first step where the sign is flipped *and* `|f| ≥ |f(x)|`.
pub fn verify_theorem1(net: &Network, x: &[f64], params: &SearchParams) -> Result<TheoremCheck> {
    let attack = flip_search(net, x, params)?;
    let Some(t_star) = attack.t_star else {
        return Ok(TheoremCheck {
            flipped: false,
            f_past_crossing: None,
            magnitude_ok: None,
            t_both: None,
            ratio: None,
            attack,
        });
    };
    let dir = &attack.direction;
    let sign = attack.f_x.signum();
    let target = attack.f_x.abs();
    let f_past = net.output(&axpy(x, t_star + params.tol, dir));
    let t_both = first_crossing(
        |t| sign * net.output(&axpy(x, t, dir)) <= -target,
        t_star,
        t_star,
        params.t_max,
        params.tol,
    );
    let x_norm = norm(x);
    Ok(TheoremCheck {
        flipped: true,
        f_past_crossing: Some(f_past),
        magnitude_ok: Some(t_both.is_some()),
        t_both,
        ratio: t_both.map(|t| t / x_norm),
        attack,
    })
}

/// Hidden widths as a function of the input dimension in a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthRule {
    /// Every hidden layer has width `d`.
    EqualToInput,
    /// Every hidden layer has width `round(factor · d)`, at least 1.
    Scaled(f64),
    /// The same explicit widths for every `d`.
    Fixed(Vec<usize>),
}

impl WidthRule {
    pub fn widths(&self, d: usize, ell: usize) -> Vec<usize> {
        match self {
            WidthRule::EqualToInput => vec![d; ell],
            WidthRule::Scaled(f) => vec![((f * d as f64).round() as usize).max(1); ell],
            WidthRule::Fixed(w) => w.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Flipped,
    NotFlipped,
    Skipped(String),
}

/// One `(network, input)` draw of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackTrial {
    pub d: usize,
    pub trial: usize,
    pub stream_id: u64,
    pub outcome: TrialOutcome,
    pub f_x: Option<f64>,
    pub grad_norm: Option<f64>,
    pub t_star: Option<f64>,
    pub ratio: Option<f64>,
    pub paper_eta: Option<f64>,
    pub evaluations: usize,
}

/// Samples a Standard network and an input uniform on the sphere of radius
/// `√d` from stream `(master_seed, stream_id)` and attacks it with the
/// default search parameters.
pub fn attack_trial(arch: &Architecture, master_seed: u64, stream_id: u64, trial: usize) -> AttackTrial {
    let mut rng = RngStream::new(master_seed, stream_id);
    let net = build_network(arch, InitMode::Standard, &mut rng);
    let d = arch.input_dim();
    let x = rng.sphere_point(d, (d as f64).sqrt());
    let base = AttackTrial {
        d,
        trial,
        stream_id,
        outcome: TrialOutcome::NotFlipped,
        f_x: None,
        grad_norm: None,
        t_star: None,
        ratio: None,
        paper_eta: None,
        evaluations: 0,
    };
    match flip_search(&net, &x, &SearchParams::for_input(&x)) {
        Ok(r) => AttackTrial {
            outcome: if r.flipped {
                TrialOutcome::Flipped
            } else {
                TrialOutcome::NotFlipped
            },
            f_x: Some(r.f_x),
            grad_norm: Some(r.grad_norm),
            t_star: r.t_star,
            ratio: r.ratio,
            paper_eta: r.paper_eta,
            evaluations: r.evaluations,
            ..base
        },
        Err(e) => AttackTrial {
            outcome: TrialOutcome::Skipped(e.to_string()),
            ..base
        },
    }
}

/// Per-dimension summary of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub trials: usize,
    pub flipped: usize,
    pub skipped: usize,
    pub flip_rate: f64,
    pub median_ratio: Option<f64>,
    pub q05_ratio: Option<f64>,
    pub q25_ratio: Option<f64>,
    pub q75_ratio: Option<f64>,
    pub q95_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `ln(median ratio)` against `ln d`.
    pub slope: Option<f64>,
    pub trials: Vec<AttackTrial>,
}

/// Stream id of trial `trial` at the `dim_index`-th dimension of a sweep.
pub fn sweep_stream_id(dim_index: usize, trial: usize) -> u64 {
    ((dim_index as u64) << 32) | trial as u64
}

/// Attacks `trials` independent `(network, input)` pairs for each input
/// dimension and fits the log-log slope of the median perturbation ratio.
pub fn dimension_sweep(
    dims: &[usize],
    ell: usize,
    width_rule: &WidthRule,
    trials: usize,
    master_seed: u64,
) -> Result<SweepTable> {
    if dims.is_empty() {
        return Err(Error::config("dims", "at least one dimension is required"));
    }
    if trials == 0 {
        return Err(Error::config("trials", "must be positive"));
    }
    let mut rows = Vec::with_capacity(dims.len());
    let mut all = Vec::with_capacity(dims.len() * trials);
    for (k, &d) in dims.iter().enumerate() {
        let arch = Architecture::new(d, width_rule.widths(d, ell))?;
        let results: Vec<AttackTrial> = (0..trials)
            .into_par_iter()
            .map(|i| attack_trial(&arch, master_seed, sweep_stream_id(k, i), i))
            .collect();
        rows.push(summarize(d, &results));
        all.extend(results);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.median_ratio.filter(|&m| m > 0.0).map(|m| ((r.d as f64).ln(), m.ln())))
        .unzip();
    Ok(SweepTable {
        slope: least_squares_slope(&xs, &ys),
        rows,
        trials: all,
    })
}

fn summarize(d: usize, results: &[AttackTrial]) -> SweepRow {
    let ratios = sorted(&results.iter().filter_map(|r| r.ratio).collect::<Vec<_>>());
    let skipped = results
        .iter()
        .filter(|r| matches!(r.outcome, TrialOutcome::Skipped(_)))
        .count();
    let q = |p| (!ratios.is_empty()).then(|| quantile_sorted(&ratios, p));
    SweepRow {
        d,
        trials: results.len(),
        flipped: ratios.len(),
        skipped,
        flip_rate: ratios.len() as f64 / results.len() as f64,
        median_ratio: q(0.5),
        q05_ratio: q(0.05),
        q25_ratio: q(0.25),
        q75_ratio: q(0.75),
        q95_ratio: q(0.95),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, Matrix};

    fn linear(w: &[f64]) -> Network {
        Network::from_weights(InitMode::Standard, vec![Matrix::from_rows(&[w.to_vec()]).unwrap()]).unwrap()
    }

    #[test]
    fn linear_network_matches_closed_form() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let x = [1.0, 0.5, 1.5, -2.0];
        let net = linear(&w);
        let params = SearchParams::for_input(&x);
        let r = flip_search(&net, &x, &params).unwrap();
        let f = dot(&w, &x);
        assert!(f > 0.0);
        let closed = f / norm(&w);
        let t = r.t_star.unwrap();
        assert!(t >= closed && t - closed <= params.tol, "{t} vs {closed}");
        let ratio = f / (norm(&w) * norm(&x));
        assert!((r.ratio.unwrap() - ratio).abs() <= params.tol / norm(&x));
        assert!(r.flipped);
        assert_eq!(r.magnitude_at_flip, Some(false));
        // direction points against the gradient
        assert!(dot(&r.direction, &w) < 0.0);
        assert!((norm(&r.direction) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn negative_output_flips_upward() {
        let w = [1.0, 1.0];
        let x = [-1.0, -2.0];
        let r = flip_search(&linear(&w), &x, &SearchParams::for_input(&x)).unwrap();
        assert!((r.t_star.unwrap() - 3.0 / 2f64.sqrt()).abs() < 1e-5);
        assert!(r.direction.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn saturating_relu_never_flips() {
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let net = Network::from_weights(InitMode::Standard, vec![one.clone(), one]).unwrap();
        let r = flip_search(&net, &[2.0], &SearchParams::for_input(&[2.0])).unwrap();
        assert!(!r.flipped);
        assert_eq!(r.t_star, None);
        assert_eq!(r.ratio, None);
        assert_eq!(r.magnitude_at_flip, None);
        // d = 1 is outside the reference step's domain
        assert_eq!(r.paper_eta, None);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let net = linear(&[1.0, 0.0]);
        assert!(matches!(
            flip_search(&net, &[0.0, 1.0], &SearchParams::for_input(&[0.0, 1.0])),
            Err(Error::DegenerateInput(_))
        ));
        let zero = Matrix::from_rows(&[vec![-1.0]]).unwrap();
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let dead = Network::from_weights(InitMode::Standard, vec![zero, one]).unwrap();
        assert!(matches!(
            flip_search(&dead, &[1.0], &SearchParams::for_input(&[1.0])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn paper_eta_examples() {
        let e = std::f64::consts::E;
        assert!((paper_eta(0, e, 1.0 / e, 1.0).unwrap() + 1.0).abs() < 1e-15);
        let v = paper_eta(2, 100.0, 0.1, 1.0).unwrap();
        let expect = -4.0 * 100f64.ln() * 10f64.ln().sqrt();
        assert!((v - expect).abs() < 1e-12 * expect.abs());
        let a = paper_eta(2, 100.0, 0.1, 1.0).unwrap();
        let b = paper_eta(2, 100.0, 0.1, 2.0).unwrap();
        assert!((a / b - 4.0).abs() < 1e-15);
        assert!(paper_eta(1, 10.0, 0.0, 1.0).is_err());
        assert!(paper_eta(1, 10.0, 1.0, 1.0).is_err());
        assert!(paper_eta(1, 10.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn linear_reflection_satisfies_both_conditions() {
        let w = [3.0, 4.0];
        let x = [1.0, 1.0];
        let params = SearchParams::for_input(&x);
        let check = verify_theorem1(&linear(&w), &x, &params).unwrap();
        let expect = 2.0 * 7.0 / 5.0;
        assert_eq!(check.magnitude_ok, Some(true));
        assert!((check.t_both.unwrap() - expect).abs() <= 2.0 * params.tol);
        assert!(check.f_past_crossing.unwrap() < 0.0);
    }

    #[test]
    fn not_flipped_propagates() {
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let net = Network::from_weights(InitMode::Standard, vec![one.clone(), one]).unwrap();
        let check = verify_theorem1(&net, &[2.0], &SearchParams::for_input(&[2.0])).unwrap();
        assert!(!check.flipped);
        assert_eq!(check.magnitude_ok, None);
        assert_eq!(check.f_past_crossing, None);
    }

    #[test]
    fn flipped_results_are_minimal_on_random_networks() {
        let arch = Architecture::new(64, vec![64, 64]).unwrap();
        let mut flipped = 0;
        for s in 0..20 {
            let mut rng = RngStream::new(21, s);
            let net = build_network(&arch, InitMode::Standard, &mut rng);
            let x = rng.sphere_point(64, 8.0);
            let params = SearchParams::for_input(&x);
            let r = flip_search(&net, &x, &params).unwrap();
            // a few narrow nets saturate at zero along the ray and never flip
            let Some(t) = r.t_star else { continue };
            flipped += 1;
            let before = net.output(&axpy(&x, t - 2.0 * params.tol, &r.direction));
            let after = net.output(&axpy(&x, t, &r.direction));
            assert!(before * r.f_x > 0.0);
            assert!(after * r.f_x < 0.0);
            assert_eq!(r.ratio.unwrap(), t / norm(&x));
        }
        assert!(flipped >= 15, "only {flipped} of 20 flipped");
    }

    #[test]
    fn sweep_rejects_empty_dims_and_handles_one_row() {
        match dimension_sweep(&[], 2, &WidthRule::EqualToInput, 30, 0) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "dims"),
            other => panic!("{other:?}"),
        }
        let t = dimension_sweep(&[16], 1, &WidthRule::EqualToInput, 30, 5).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.slope, None);
        assert_eq!(t.trials.len(), 30);
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = dimension_sweep(&[8, 16], 1, &WidthRule::Scaled(2.0), 30, 9).unwrap();
        let b = dimension_sweep(&[8, 16], 1, &WidthRule::Scaled(2.0), 30, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
