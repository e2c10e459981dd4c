use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Architecture, InitMode};

/// Which files an experiment writes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    ValueGradient,
    ScalePreservation,
    ActivationMargin,
    GradientSmoothness,
    SegmentSpectral,
    SignFlip,
    DistEquiv,
    GaussianSpectral,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 8] = [
        ProbeKind::ValueGradient,
        ProbeKind::ScalePreservation,
        ProbeKind::ActivationMargin,
        ProbeKind::GradientSmoothness,
        ProbeKind::SegmentSpectral,
        ProbeKind::SignFlip,
        ProbeKind::DistEquiv,
        ProbeKind::GaussianSpectral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::ValueGradient => "value_gradient",
            ProbeKind::ScalePreservation => "scale_preservation",
            ProbeKind::ActivationMargin => "activation_margin",
            ProbeKind::GradientSmoothness => "gradient_smoothness",
            ProbeKind::SegmentSpectral => "segment_spectral",
            ProbeKind::SignFlip => "sign_flip",
            ProbeKind::DistEquiv => "dist_equiv",
            ProbeKind::GaussianSpectral => "gaussian_spectral",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Sample,
    Attack,
    Sweep,
    Probe(ProbeKind),
    Collapse,
    Kernel,
}

impl Kind {
    pub fn parse(s: &str) -> Result<Self> {
        let kind = match s {
            "sample" => Kind::Sample,
            "attack" => Kind::Attack,
            "sweep" => Kind::Sweep,
            "collapse" => Kind::Collapse,
            "kernel" => Kind::Kernel,
            _ => {
                let probe = s.strip_prefix("probe:").and_then(ProbeKind::from_name);
                match probe {
                    Some(p) => Kind::Probe(p),
                    None => return Err(Error::config("kind", format!("unknown experiment kind {s:?}"))),
                }
            }
        };
        Ok(kind)
    }

    /// Kind-specific keys this experiment reads.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Kind::Sample => &["input_dim", "widths", "width", "depth", "init"],
            Kind::Attack => &["input_dim", "widths", "width", "depth", "trials", "t_max", "tol", "delta", "network"],
            Kind::Sweep => &["dims", "depth", "widths", "width_scale", "trials"],
            Kind::Probe(p) => match p {
                ProbeKind::ValueGradient => &["input_dim", "widths", "width", "depth", "trials", "delta", "c"],
                ProbeKind::ScalePreservation | ProbeKind::GradientSmoothness => {
                    &["input_dim", "widths", "width", "depth", "trials", "radius", "n_samples"]
                }
                ProbeKind::ActivationMargin => &["input_dim", "widths", "width", "depth", "trials", "alpha"],
                ProbeKind::SegmentSpectral => {
                    &["input_dim", "widths", "width", "depth", "trials", "radius", "n_samples", "c"]
                }
                ProbeKind::SignFlip => &["input_dim", "trials", "ratios", "n_draws"],
                ProbeKind::DistEquiv => &["input_dim", "widths", "width", "depth", "trials", "mask_probability"],
                ProbeKind::GaussianSpectral => &["m", "n", "delta", "trials"],
            },
            Kind::Collapse => &["input_dim", "width", "depth", "n_pairs"],
            Kind::Kernel => &["theta_0", "steps", "n_draws"],
        }
    }

    fn is_probe(self) -> bool {
        matches!(self, Kind::Probe(_))
    }
}

/// Flat experiment description. Unknown keys are rejected, as are keys
/// that the selected kind does not read.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    /// Network file to attack instead of sampling one per trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<String>,
    /// Probe violation frequency above which the run is flagged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_level: Option<f64>,
    // Execution settings; they never change results, so they are not echoed.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<String>,
    #[serde(default, skip_serializing)]
    pub format: Option<OutputFormat>,
}

const COMMON_KEYS: [&str; 6] = ["kind", "seed", "workers", "out_dir", "format", "alert_level"];

fn decode(value: serde_json::Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner().to_string();
        // deny_unknown_fields reports the offending field only in the message
        let key = match inner.split('`').nth(1) {
            Some(field) if inner.starts_with("unknown field") => field.to_string(),
            _ => key,
        };
        Error::config(key, inner)
    })
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config(".", format!("invalid JSON: {e}")))?;
        Self::from_json_value(value)
    }

    /// Parses and validates a JSON object.
    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        if !value.is_object() {
            return Err(Error::config(".", "configuration must be a JSON object"));
        }
        let config = decode(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn kind(&self) -> Result<Kind> {
        Kind::parse(&self.kind)
    }

    /// Keys present in the serialized config, excluding execution settings.
    fn set_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
            _ => Vec::new(),
        };
        for (key, set) in [
            ("workers", self.workers.is_some()),
            ("out_dir", self.out_dir.is_some()),
            ("format", self.format.is_some()),
        ] {
            if set {
                keys.push(key.to_string());
            }
        }
        keys
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        for key in self.set_keys() {
            if !COMMON_KEYS.contains(&key.as_str()) && !kind.keys().contains(&key.as_str()) {
                return Err(Error::config(key, format!("not used by experiment kind {:?}", self.kind)));
            }
        }
        if self.alert_level.is_some() && !kind.is_probe() {
            return Err(Error::config("alert_level", "only probes have an alert level"));
        }

        let positive = [
            ("input_dim", self.input_dim),
            ("width", self.width),
            ("trials", self.trials),
            ("steps", self.steps),
            ("n_pairs", self.n_pairs),
            ("n_samples", self.n_samples),
            ("n_draws", self.n_draws),
            ("m", self.m),
            ("n", self.n),
            ("workers", self.workers),
        ];
        for (key, value) in positive {
            if value == Some(0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        for (key, list) in [("widths", &self.widths), ("dims", &self.dims)] {
            if list.as_ref().is_some_and(|v| v.contains(&0)) {
                return Err(Error::config(key, "entries must be positive"));
            }
        }
        if self.widths.is_some() && self.width.is_some() {
            return Err(Error::config("width", "give either `widths` or `width`, not both"));
        }
        if let (Some(w), Some(depth)) = (&self.widths, self.depth) {
            if w.len() != depth {
                return Err(Error::config("depth", format!("{} widths given for depth {depth}", w.len())));
            }
        }
        if kind == Kind::Sweep && self.widths.is_some() && self.width_scale.is_some() {
            return Err(Error::config("width_scale", "give either `widths` or `width_scale`, not both"));
        }

        let open_unit = |key: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x < 1.0) => Err(Error::config(key, format!("must lie in (0, 1), got {x}"))),
            _ => Ok(()),
        };
        open_unit("delta", self.delta)?;
        let check = |key: &str, v: Option<f64>, ok: &dyn Fn(f64) -> bool, what: &str| match v {
            Some(x) if !ok(x) => Err(Error::config(key, format!("{what}, got {x}"))),
            _ => Ok(()),
        };
        check("radius", self.radius, &|x| x >= 0.0 && x.is_finite(), "must be finite and ≥ 0")?;
        check(
            "alpha",
            self.alpha,
            &|x| (0.0..crate::probes::max_margin_alpha()).contains(&x),
            "must lie in [0, √(π/8))",
        )?;
        check("c", self.c, &|x| x > 0.0 && x.is_finite(), "must be positive")?;
        check("t_max", self.t_max, &|x| x > 0.0 && x.is_finite(), "must be positive")?;
        check("tol", self.tol, &|x| x > 0.0 && x.is_finite(), "must be positive")?;
        check("width_scale", self.width_scale, &|x| x > 0.0 && x.is_finite(), "must be positive")?;
        check("theta_0", self.theta_0, &|x| (0.0..=PI).contains(&x), "must lie in [0, π]")?;
        check(
            "mask_probability",
            self.mask_probability,
            &|x| (0.0..=1.0).contains(&x),
            "must lie in [0, 1]",
        )?;
        check("alert_level", self.alert_level, &|x| (0.0..=1.0).contains(&x), "must lie in [0, 1]")?;
        if let Some(r) = &self.ratios {
            if r.is_empty() || r.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
                return Err(Error::config("ratios", "need at least one ratio, each in (0, 1]"));
            }
        }
        if self.network.is_some() {
            for (key, set) in [
                ("input_dim", self.input_dim.is_some()),
                ("widths", self.widths.is_some()),
                ("width", self.width.is_some()),
                ("depth", self.depth.is_some()),
            ] {
                if set {
                    return Err(Error::config(key, "the architecture comes from `network`"));
                }
            }
        }
        Ok(())
    }

    /// Architecture from `input_dim` plus either `widths` or
    /// `width` × `depth`; `width` defaults to `input_dim`.
    pub fn architecture(&self, default_dim: Option<usize>, default_depth: usize) -> Result<Architecture> {
        let d = self
            .input_dim
            .or(default_dim)
            .ok_or_else(|| Error::config("input_dim", "required for this experiment"))?;
        let widths = match &self.widths {
            Some(w) => w.clone(),
            None => vec![self.width.unwrap_or(d); self.depth.unwrap_or(default_depth)],
        };
        Architecture::new(d, widths).map_err(|e| Error::config("widths", e.to_string()))
    }

    pub fn output_format(&self) -> OutputFormat {
        self.format.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn key_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn parses_kinds() {
        assert_eq!(Kind::parse("sweep").unwrap(), Kind::Sweep);
        assert_eq!(
            Kind::parse("probe:sign_flip").unwrap(),
            Kind::Probe(ProbeKind::SignFlip)
        );
        for p in ProbeKind::ALL {
            assert_eq!(Kind::parse(&format!("probe:{}", p.name())).unwrap(), Kind::Probe(p));
        }
        assert!(Kind::parse("probe:nothing").is_err());
        assert!(Kind::parse("train").is_err());
    }

    #[test]
    fn errors_name_the_offending_key() {
        assert_eq!(key_of(ExperimentConfig::from_json_value(json!({"kind": "fly"}))), "kind");
        assert_eq!(
            key_of(ExperimentConfig::from_json_value(json!({"kind": "kernel", "bogus": 1}))),
            "bogus"
        );
        assert_eq!(
            key_of(ExperimentConfig::from_json_value(json!({"kind": "kernel", "steps": "many"}))),
            "steps"
        );
        assert_eq!(
            key_of(ExperimentConfig::from_json_value(json!({"kind": "kernel", "radius": 1.0}))),
            "radius"
        );
        assert_eq!(
            key_of(ExperimentConfig::from_json_value(json!({"kind": "probe:value_gradient", "delta": 1.0}))),
            "delta"
        );
        assert_eq!(
            key_of(ExperimentConfig::from_json_value(json!({"kind": "collapse", "n_pairs": 0}))),
            "n_pairs"
        );
        assert_eq!(
            key_of(ExperimentConfig::from_json_value(json!({"kind": "sweep", "dims": [0, 4]}))),
            "dims"
        );
        assert_eq!(
            key_of(ExperimentConfig::from_json_value(json!({"kind": "kernel", "alert_level": 0.1}))),
            "alert_level"
        );
        assert_eq!(key_of(ExperimentConfig::from_json_str("[1]")), ".");
    }

    #[test]
    fn execution_settings_are_not_echoed() {
        let c = ExperimentConfig::from_json_value(json!({
            "kind": "kernel", "theta_0": 1.0, "workers": 3, "out_dir": "x", "format": "csv"
        }))
        .unwrap();
        let echo = serde_json::to_value(&c).unwrap();
        assert_eq!(echo, json!({"kind": "kernel", "seed": 0, "theta_0": 1.0}));
        assert_eq!(c.output_format(), OutputFormat::Csv);
    }

    #[test]
    fn architecture_defaults() {
        let c = ExperimentConfig::from_json_value(json!({"kind": "attack", "input_dim": 8})).unwrap();
        assert_eq!(c.architecture(None, 2).unwrap().widths(), vec![8, 8, 8]);
        let c = ExperimentConfig::from_json_value(json!({"kind": "attack", "input_dim": 8, "widths": [4, 6]}))
            .unwrap();
        assert_eq!(c.architecture(None, 2).unwrap().widths(), vec![8, 4, 6]);
        let c = ExperimentConfig::from_json_value(json!({"kind": "attack"})).unwrap();
        assert_eq!(key_of(c.architecture(None, 2).map(|_| c.clone())), "input_dim");
    }
}
