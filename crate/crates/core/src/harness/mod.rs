//! Experiment configuration, deterministic dispatch and result files.
//!
//! A run is a pure function of its [`ExperimentConfig`]: every trial draws
//! from its own stream and rows are emitted in trial order, so the worker
//! count never changes the output bytes.

mod config;
mod output;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde_json::{json, Value};

pub use config::{ExperimentConfig, Kind, OutputFormat, ProbeKind};
pub use output::{
    csv_bytes, format_real, summary_bytes, write_csv, write_summary_json, Status, Summary, TrialRecord,
    VERSION,
};

use crate::adversarial::{dimension_sweep, verify_theorem1, SearchParams, TrialOutcome, WidthRule};
use crate::collapse::{collapse_simulate, kernel_iterate, kernel_mc_estimate};
use crate::error::{Error, Result};
use crate::linalg::{norm, RngStream};
use crate::network::{build_network, encode_network, load_network, InitMode, Network};
use crate::probes::{self, ProbeReport};
use crate::stats::{median, Quantiles};

/// A file produced by the run besides the CSV and JSON, e.g. a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub file_name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub columns: Vec<String>,
    pub rows: Vec<TrialRecord>,
    pub summary: Summary,
    /// A probe's violation frequency exceeded `alert_level`.
    pub alert: bool,
    pub artifacts: Vec<Artifact>,
}

struct Table {
    columns: Vec<String>,
    rows: Vec<TrialRecord>,
    stats: IndexMap<String, Value>,
    artifacts: Vec<Artifact>,
    violation_frequency: Option<f64>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            stats: IndexMap::new(),
            artifacts: Vec::new(),
            violation_frequency: None,
        }
    }

    fn stat(&mut self, key: &str, value: impl serde::Serialize) {
        let v = serde_json::to_value(value).expect("stats serialize");
        self.stats.insert(key.to_string(), v);
    }
}

/// Runs the configured experiment on `workers` threads (default: all).
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let kind = config.kind()?;
    let table = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(|| dispatch(kind, config))?,
        None => dispatch(kind, config)?,
    };
    let mut stats = table.stats;
    let mut alert = false;
    if let (Some(freq), Some(level)) = (table.violation_frequency, config.alert_level) {
        alert = freq > level;
        stats.insert("alert_level".into(), json!(level));
        stats.insert("alert".into(), json!(alert));
    }
    Ok(RunOutput {
        columns: table.columns,
        rows: table.rows,
        summary: Summary {
            version: VERSION.to_string(),
            kind: config.kind.clone(),
            config: config.clone(),
            stats,
        },
        alert,
        artifacts: table.artifacts,
    })
}

/// Paths written by [`execute`].
#[derive(Clone, Debug, PartialEq)]
pub struct Execution {
    pub output: RunOutput,
    pub written: Vec<PathBuf>,
}

/// File stem for a kind, e.g. `probe_sign_flip`.
pub fn file_stem(kind: &str) -> String {
    kind.replace(':', "_")
}

/// Runs the experiment and writes `<stem>.csv`, `<stem>.json` and any
/// artifacts into `out_dir` (default `results`).
pub fn execute(config: &ExperimentConfig) -> Result<Execution> {
    let output = run_experiment(config)?;
    let dir = Path::new(config.out_dir.as_deref().unwrap_or("results"));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = file_stem(&config.kind);
    let format = config.output_format();
    let mut written = Vec::new();
    if format.csv() {
        let p = dir.join(format!("{stem}.csv"));
        write_csv(&output.columns, &output.rows, &p)?;
        written.push(p);
    }
    if format.json() {
        let p = dir.join(format!("{stem}.json"));
        write_summary_json(&output.summary, &p)?;
        written.push(p);
    }
    for a in &output.artifacts {
        let p = dir.join(&a.file_name);
        output::write_artifact(&p, &a.bytes)?;
        written.push(p);
    }
    Ok(Execution { output, written })
}

fn dispatch(kind: Kind, config: &ExperimentConfig) -> Result<Table> {
    match kind {
        Kind::Sample => sample(config),
        Kind::Attack => attack(config),
        Kind::Sweep => sweep(config),
        Kind::Probe(p) => probe(p, config),
        Kind::Collapse => collapse(config),
        Kind::Kernel => kernel(config),
    }
}

fn quantiles_value(values: &[f64]) -> Value {
    serde_json::to_value(Quantiles::of(values)).expect("quantiles serialize")
}

fn sample(config: &ExperimentConfig) -> Result<Table> {
    let arch = config.architecture(None, 2)?;
    let mode = config.init.unwrap_or(InitMode::Standard);
    let mut rng = RngStream::new(config.seed, 0);
    let net = build_network(&arch, mode, &mut rng);
    let mut t = Table::new(&["layer", "rows", "cols", "frobenius_norm"]);
    for (i, w) in net.weights().iter().enumerate() {
        let values = vec![(i + 1) as f64, w.rows() as f64, w.cols() as f64, w.frobenius_sq().sqrt()];
        t.rows.push(TrialRecord::ok(i, 0, values));
    }
    t.stat("widths", arch.widths());
    t.stat("init", mode);
    t.stat("network_file", "network.rrnn");
    t.artifacts.push(Artifact {
        file_name: "network.rrnn".into(),
        bytes: encode_network(&net),
    });
    Ok(t)
}

fn attack(config: &ExperimentConfig) -> Result<Table> {
    let loaded: Option<Network> = config.network.as_deref().map(load_network).transpose()?;
    let arch = match &loaded {
        Some(net) => net.arch().clone(),
        None => config.architecture(None, 2)?,
    };
    let d = arch.input_dim();
    let trials = config.trials.unwrap_or(1);
    let mut t = Table::new(&[
        "f_x",
        "grad_norm",
        "t_star",
        "ratio",
        "paper_eta",
        "t_both",
        "ratio_both",
        "evaluations",
    ]);
    t.rows = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = RngStream::new(config.seed, trial as u64);
            let sampled;
            let net = match &loaded {
                Some(n) => n,
                None => {
                    sampled = build_network(&arch, InitMode::Standard, &mut rng);
                    &sampled
                }
            };
            let x = rng.sphere_point(d, (d as f64).sqrt());
            let mut params = SearchParams::for_input(&x);
            params.t_max = config.t_max.unwrap_or(params.t_max);
            params.tol = config.tol.unwrap_or(params.tol);
            params.delta = config.delta.unwrap_or(params.delta);
            match verify_theorem1(net, &x, &params) {
                Ok(c) => TrialRecord {
                    trial,
                    stream_id: trial as u64,
                    values: vec![
                        Some(c.attack.f_x),
                        Some(c.attack.grad_norm),
                        c.attack.t_star,
                        c.attack.ratio,
                        c.attack.paper_eta,
                        c.t_both,
                        c.ratio,
                        Some(c.attack.evaluations as f64),
                    ],
                    status: if c.flipped { Status::Ok } else { Status::NotFlipped },
                },
                Err(e) => TrialRecord {
                    trial,
                    stream_id: trial as u64,
                    values: vec![None; 8],
                    status: Status::Skipped(e.to_string()),
                },
            }
        })
        .collect();
    let ratios: Vec<f64> = t.rows.iter().filter_map(|r| r.values[3]).collect();
    let flipped = t.rows.iter().filter(|r| r.status == Status::Ok).count();
    let skipped = t.rows.iter().filter(|r| matches!(r.status, Status::Skipped(_))).count();
    t.stat("trials", trials);
    t.stat("flipped", flipped);
    t.stat("skipped", skipped);
    t.stat("flip_rate", flipped as f64 / trials as f64);
    t.stat("ratio", quantiles_value(&ratios));
    Ok(t)
}

fn sweep(config: &ExperimentConfig) -> Result<Table> {
    let dims = config
        .dims
        .as_ref()
        .ok_or_else(|| Error::config("dims", "required for a sweep"))?;
    let ell = config.depth.unwrap_or(2);
    let rule = match (&config.widths, config.width_scale) {
        (Some(w), _) => WidthRule::Fixed(w.clone()),
        (None, Some(f)) => WidthRule::Scaled(f),
        (None, None) => WidthRule::EqualToInput,
    };
    let trials = config.trials.unwrap_or(50);
    let table = dimension_sweep(dims, ell, &rule, trials, config.seed)?;
    let mut t = Table::new(&["d", "f_x", "grad_norm", "t_star", "ratio", "paper_eta", "evaluations"]);
    t.rows = table
        .trials
        .iter()
        .enumerate()
        .map(|(k, a)| TrialRecord {
            trial: k,
            stream_id: a.stream_id,
            values: vec![
                Some(a.d as f64),
                a.f_x,
                a.grad_norm,
                a.t_star,
                a.ratio,
                a.paper_eta,
                Some(a.evaluations as f64),
            ],
            status: match &a.outcome {
                TrialOutcome::Flipped => Status::Ok,
                TrialOutcome::NotFlipped => Status::NotFlipped,
                TrialOutcome::Skipped(r) => Status::Skipped(r.clone()),
            },
        })
        .collect();
    t.stat("dims", &table.rows);
    t.stat("slope", table.slope);
    Ok(t)
}

/// Rows of a probe report; `stream_column` names the column holding each
/// row's stream id.
fn report_table(report: ProbeReport, stream_column: Option<&str>) -> Table {
    let k = stream_column.and_then(|c| report.columns.iter().position(|x| x == c));
    let mut t = Table {
        columns: report.columns.clone(),
        rows: report
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| TrialRecord::ok(i, k.map_or(0, |k| row[k] as u64), row.clone()))
            .collect(),
        stats: IndexMap::new(),
        artifacts: Vec::new(),
        violation_frequency: Some(report.violation_frequency),
    };
    t.stat("probe", &report.name);
    t.stat("params", &report.params);
    t.stat("bounds", &report.bounds);
    t.stat("extra", &report.extra);
    t.stat("checks", report.checks);
    t.stat("violations", report.violations);
    t.stat("violation_frequency", report.violation_frequency);
    t.stat("quantiles", &report.summary);
    t
}

fn at_least(key: &str, value: usize, min: usize) -> Result<usize> {
    if value < min {
        Err(Error::config(key, format!("must be at least {min}, got {value}")))
    } else {
        Ok(value)
    }
}

fn probe(p: ProbeKind, config: &ExperimentConfig) -> Result<Table> {
    let seed = config.seed;
    match p {
        ProbeKind::ValueGradient => {
            let arch = config.architecture(None, 2)?;
            let trials = at_least("trials", config.trials.unwrap_or(1000), 100)?;
            let delta = config.delta.unwrap_or(0.01);
            let report = probes::probe_value_gradient(&arch, trials, delta, config.c.unwrap_or(8.0), seed)?;
            Ok(report_table(report, Some("trial")))
        }
        ProbeKind::ScalePreservation
        | ProbeKind::ActivationMargin
        | ProbeKind::GradientSmoothness
        | ProbeKind::SegmentSpectral => {
            let arch = config.architecture(None, 2)?;
            let nets = config.trials.unwrap_or(100);
            let radius = config.radius.unwrap_or(0.05 * (arch.input_dim() as f64).sqrt());
            let n_samples = at_least("n_samples", config.n_samples.unwrap_or(20), 10)?;
            let alpha = config.alpha.unwrap_or(0.1);
            let c = config.c.unwrap_or(8.0);
            if p == ProbeKind::SegmentSpectral && crate::network::bottleneck_decomposition(&arch).len() < 2 {
                return Err(Error::config("widths", "segment probe needs a layer narrower than the input"));
            }
            let report = probes::ensemble(&arch, nets, seed, |net, x, rng| match p {
                ProbeKind::ScalePreservation => probes::probe_scale_preservation(net, x, radius, n_samples, rng),
                ProbeKind::ActivationMargin => probes::probe_activation_margin(net, x, alpha),
                ProbeKind::GradientSmoothness => probes::probe_gradient_smoothness(net, x, radius, n_samples, rng),
                _ => probes::probe_segment_spectral(net, x, radius, n_samples, c, rng),
            })?;
            Ok(report_table(report, Some("net")))
        }
        ProbeKind::SignFlip => sign_flip(config),
        ProbeKind::DistEquiv => {
            let arch = config.architecture(None, 2)?;
            let trials = at_least("trials", config.trials.unwrap_or(2000), 1000)?;
            let x = probes::ones(arch.input_dim());
            let p = config.mask_probability.unwrap_or(0.5);
            let rec = probes::probe_dist_equiv_with_masks(&arch, &x, trials, seed, p)?;
            let mut t = Table::new(&["ks_statistic", "threshold", "pass", "mean_a", "mean_b"]);
            let pass = if rec.pass { 1.0 } else { 0.0 };
            t.rows
                .push(TrialRecord::ok(0, 0, vec![rec.ks_statistic, rec.threshold, pass, rec.mean_a, rec.mean_b]));
            t.violation_frequency = Some(1.0 - pass);
            t.stat("record", &rec);
            t.stat("violation_frequency", 1.0 - pass);
            Ok(t)
        }
        ProbeKind::GaussianSpectral => {
            let m = config.m.unwrap_or(200);
            let n = config.n.unwrap_or(300);
            let samples = at_least("trials", config.trials.unwrap_or(100), 100)?;
            let delta = config.delta.unwrap_or(0.01);
            let rec = probes::probe_gaussian_spectral(m, n, delta, samples, seed)?;
            let edge = (m as f64).sqrt() + (n as f64).sqrt();
            let mut t = Table::new(&["norm", "edge_ratio", "violated"]);
            for (s, &v) in rec.norms.iter().enumerate() {
                let violated = if v > rec.bound { 1.0 } else { 0.0 };
                t.rows.push(TrialRecord::ok(s, s as u64, vec![v, v / edge, violated]));
            }
            let freq = rec.violations as f64 / samples as f64;
            t.violation_frequency = Some(freq);
            t.stat("bound", rec.bound);
            t.stat("violations", rec.violations);
            t.stat("violation_frequency", freq);
            t.stat("mean_edge_ratio", rec.mean_edge_ratio);
            t.stat("norm", quantiles_value(&rec.norms));
            Ok(t)
        }
    }
}

fn sign_flip(config: &ExperimentConfig) -> Result<Table> {
    let d = config
        .input_dim
        .ok_or_else(|| Error::config("input_dim", "required for this experiment"))?;
    let pairs = config.trials.unwrap_or(20);
    let ratios = config.ratios.clone().unwrap_or_else(|| vec![0.01, 0.05, 0.1]);
    let n_draws = config.n_draws.unwrap_or(100_000);
    let records = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(config.seed, k as u64);
            let x = rng.sphere_point(d, (d as f64).sqrt());
            let rr = ratios[k % ratios.len()];
            let y = probes::point_at_distance(&x, rr * norm(&x), &mut rng);
            probes::probe_sign_flip(&x, &y, n_draws, &mut rng).map(|rec| (rr, rec))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(&[
        "r_over_big_r",
        "empirical",
        "oracle",
        "std_error",
        "bound",
        "within_band",
        "bound_ok",
    ]);
    let (mut checks, mut violations, mut band_misses) = (0, 0, 0);
    for (k, (rr, rec)) in records.iter().enumerate() {
        let bound_ok = rec.bound.map(|b| rec.empirical <= b);
        if let Some(ok) = bound_ok {
            checks += 1;
            violations += usize::from(!ok);
        }
        band_misses += usize::from(!rec.within_band);
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        t.rows.push(TrialRecord {
            trial: k,
            stream_id: k as u64,
            values: vec![
                Some(*rr),
                Some(rec.empirical),
                Some(rec.oracle),
                Some(rec.std_error),
                rec.bound,
                Some(flag(rec.within_band)),
                bound_ok.map(flag),
            ],
            status: Status::Ok,
        });
    }
    let freq = if checks == 0 { 0.0 } else { violations as f64 / checks as f64 };
    t.violation_frequency = Some(freq);
    t.stat("pairs", pairs);
    t.stat("n_draws", n_draws);
    t.stat("checks", checks);
    t.stat("violations", violations);
    t.stat("violation_frequency", freq);
    t.stat("band_misses", band_misses);
    Ok(t)
}

fn collapse(config: &ExperimentConfig) -> Result<Table> {
    let d = at_least("input_dim", config.input_dim.unwrap_or(10), 2)?;
    let width = at_least("width", config.width.unwrap_or(2000), 8)?;
    let depth = at_least("depth", config.depth.unwrap_or(200), 1)?;
    let n_pairs = at_least("n_pairs", config.n_pairs.unwrap_or(50), 2)?;
    let r = collapse_simulate(d, width, depth, n_pairs, config.seed)?;
    let mut t = Table::new(&[
        "layer",
        "mean_cosine",
        "mean_kernel_cosine",
        "mean_abs_deviation",
        "median_norm",
        "median_normalized_norm",
        "median_gain",
        "median_ratio",
        "small_outputs",
    ]);
    for l in &r.layers {
        let dev: Vec<f64> = l.cosines.iter().zip(&l.kernel_cosines).map(|(a, b)| (a - b).abs()).collect();
        t.rows.push(TrialRecord::ok(
            l.layer - 1,
            l.layer as u64,
            vec![
                l.layer as f64,
                l.mean_cosine(),
                l.mean_kernel_cosine(),
                crate::stats::mean(&dev),
                l.median_norm(),
                r.median_normalized_norm(l.layer),
                l.median_gain(),
                l.median_ratio(),
                l.small_outputs as f64,
            ],
        ));
    }
    let track_layers = depth.min(50);
    let early = depth.min(5);
    let gains: Vec<f64> = r.layers.iter().map(|l| l.median_gain()).collect();
    t.stat("track_layers", track_layers);
    t.stat("cosine_track_deviation", r.cosine_track_deviation(track_layers));
    t.stat("early_layer", early);
    t.stat("median_ratio_early", r.layer(early).median_ratio());
    t.stat("median_ratio_final", r.layer(depth).median_ratio());
    t.stat("median_gain", quantiles_value(&gains));
    t.stat("initial_angle_median", median(&r.initial_angles));
    t.stat("small_outputs", r.layers.iter().map(|l| l.small_outputs).sum::<usize>());
    Ok(t)
}

fn kernel(config: &ExperimentConfig) -> Result<Table> {
    let theta_0 = config.theta_0.unwrap_or(PI / 2.0);
    let steps = config.steps.unwrap_or(50);
    let trace = kernel_iterate(theta_0, steps)?;
    let mut t = Table::new(&["t", "theta", "rho"]);
    for (k, s) in trace.steps.iter().enumerate() {
        t.rows.push(TrialRecord::ok(k, 0, vec![(k + 1) as f64, s.theta, s.rho]));
    }
    t.stat("theta_0", theta_0);
    t.stat("final_rho", trace.steps[steps - 1].rho);
    if let Some(n) = config.n_draws {
        let n = at_least("n_draws", n, 10_000)?;
        let est = kernel_mc_estimate(theta_0, n, &mut RngStream::new(config.seed, 0))?;
        t.stat("monte_carlo", est);
        t.stat("closed_form", crate::collapse::kernel_map(theta_0)?);
    }
    Ok(t)
}
