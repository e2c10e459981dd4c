use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use randrelu::harness::{execute, ExperimentConfig, ProbeKind};
use randrelu::Error;

#[derive(Parser)]
#[command(name = "randrelu", version, about = "Experiments on random ReLU networks")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `results`).
    #[arg(long, global = true)]
    out_dir: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(flatten)]
    params: Params,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a network and save it.
    Sample,
    /// Flip search on sampled (or loaded) networks.
    Attack,
    /// Perturbation ratio across input dimensions.
    Sweep,
    /// Run a Monte Carlo probe.
    Probe {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(ProbeKind::ALL.map(|p| p.name())))]
        name: String,
    },
    /// Correlation collapse in a deep network.
    Collapse,
    /// Iterate the arc-cosine kernel map.
    Kernel,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Standard,
    DepthCollapse,
}

/// Experiment parameters, one flag per configuration key.
#[derive(Args)]
struct Params {
    #[arg(long, global = true)]
    input_dim: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, global = true)]
    width: Option<usize>,
    #[arg(long, global = true)]
    depth: Option<usize>,
    #[arg(long, global = true, value_enum)]
    init: Option<Init>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    radius: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    c: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long, global = true)]
    width_scale: Option<f64>,
    #[arg(long, global = true)]
    theta_0: Option<f64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    n_pairs: Option<usize>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    #[arg(long, global = true)]
    n_draws: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    mask_probability: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long, global = true)]
    network: Option<String>,
    #[arg(long, global = true)]
    alert_level: Option<f64>,
}

fn set<T: serde::Serialize>(map: &mut Map<String, Value>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        map.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
    }
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, Error> {
    let mut map = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(config_error(".", "configuration must be a JSON object")),
                Err(e) => return Err(config_error(".", &format!("invalid JSON: {e}"))),
            }
        }
        None => Map::new(),
    };
    let kind = match &cli.command {
        Command::Sample => "sample".to_string(),
        Command::Attack => "attack".to_string(),
        Command::Sweep => "sweep".to_string(),
        Command::Probe { name } => format!("probe:{name}"),
        Command::Collapse => "collapse".to_string(),
        Command::Kernel => "kernel".to_string(),
    };
    map.insert("kind".into(), Value::String(kind));
    set(&mut map, "seed", cli.seed);
    set(&mut map, "out_dir", cli.out_dir);
    set(&mut map, "workers", cli.workers);
    set(
        &mut map,
        "format",
        cli.format.map(|f| match f {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Both => "both",
        }),
    );
    let p = cli.params;
    set(&mut map, "input_dim", p.input_dim);
    set(&mut map, "widths", p.widths);
    set(&mut map, "width", p.width);
    set(&mut map, "depth", p.depth);
    set(
        &mut map,
        "init",
        p.init.map(|i| match i {
            Init::Standard => "standard",
            Init::DepthCollapse => "depth_collapse",
        }),
    );
    set(&mut map, "trials", p.trials);
    set(&mut map, "radius", p.radius);
    set(&mut map, "alpha", p.alpha);
    set(&mut map, "delta", p.delta);
    set(&mut map, "c", p.c);
    set(&mut map, "t_max", p.t_max);
    set(&mut map, "tol", p.tol);
    set(&mut map, "dims", p.dims);
    set(&mut map, "width_scale", p.width_scale);
    set(&mut map, "theta_0", p.theta_0);
    set(&mut map, "steps", p.steps);
    set(&mut map, "n_pairs", p.n_pairs);
    set(&mut map, "n_samples", p.n_samples);
    set(&mut map, "n_draws", p.n_draws);
    set(&mut map, "m", p.m);
    set(&mut map, "n", p.n);
    set(&mut map, "mask_probability", p.mask_probability);
    set(&mut map, "ratios", p.ratios);
    set(&mut map, "network", p.network);
    set(&mut map, "alert_level", p.alert_level);
    ExperimentConfig::from_json_value(Value::Object(map))
}

fn config_error(key: &str, message: &str) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = build_config(cli).and_then(|config| execute(&config));
    match result {
        Ok(run) => {
            for path in &run.written {
                println!("{}", path.display());
            }
            if run.output.alert {
                eprintln!("alert: violation frequency above the configured level");
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
