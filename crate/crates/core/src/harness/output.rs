use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Serialize, Serializer};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Version string written into every summary.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotFlipped,
    Skipped(String),
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Ok => f.write_str("ok"),
            Status::NotFlipped => f.write_str("not_flipped"),
            Status::Skipped(reason) => write!(f, "skipped:{reason}"),
        }
    }
}

impl Serialize for Status {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// One output row; `values` line up with the run's column names.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub stream_id: u64,
    pub values: Vec<Option<f64>>,
    pub status: Status,
}

impl TrialRecord {
    pub fn ok(trial: usize, stream_id: u64, values: Vec<f64>) -> Self {
        TrialRecord {
            trial,
            stream_id,
            values: values.into_iter().map(Some).collect(),
            status: Status::Ok,
        }
    }
}

/// The JSON summary: exactly the keys `version`, `kind`, `config`, `stats`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub version: String,
    pub kind: String,
    pub config: ExperimentConfig,
    pub stats: IndexMap<String, serde_json::Value>,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header `trial,stream_id,<columns>,status`, then one line per record.
/// Absent values are empty fields.
pub fn csv_bytes(columns: &[String], rows: &[TrialRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["trial".to_string(), "stream_id".to_string()];
    header.extend(columns.iter().cloned());
    header.push("status".into());
    // writing into a Vec cannot fail
    w.write_record(&header).expect("in-memory csv");
    for r in rows {
        let mut fields = vec![r.trial.to_string(), r.stream_id.to_string()];
        fields.extend(r.values.iter().map(|v| v.map(format_real).unwrap_or_default()));
        fields.push(r.status.to_string());
        w.write_record(&fields).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_csv(columns: &[String], rows: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &csv_bytes(columns, rows))
}

pub fn summary_bytes(summary: &Summary) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(summary).expect("summary serializes");
    bytes.push(b'\n');
    bytes
}

pub fn write_summary_json(summary: &Summary, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &summary_bytes(summary))
}

pub(crate) fn write_artifact(path: &Path, bytes: &[u8]) -> Result<()> {
    write_bytes(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_rows_give_a_header_only() {
        let cols = vec!["ratio".to_string()];
        assert_eq!(String::from_utf8(csv_bytes(&cols, &[])).unwrap(), "trial,stream_id,ratio,status\n");
    }

    #[test]
    fn records_render_statuses_and_gaps() {
        let cols = vec!["a".to_string(), "b".to_string()];
        let rows = vec![
            TrialRecord::ok(0, 7, vec![0.1, 2.0]),
            TrialRecord {
                trial: 1,
                stream_id: 8,
                values: vec![None, Some(-1.5)],
                status: Status::Skipped("zero gradient, x".into()),
            },
            TrialRecord {
                trial: 2,
                stream_id: 9,
                values: vec![None, None],
                status: Status::NotFlipped,
            },
        ];
        let text = String::from_utf8(csv_bytes(&cols, &rows)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "0,7,1.0000000000000001e-1,2.0000000000000000e0,ok");
        assert_eq!(lines[2], "1,8,,-1.5000000000000000e0,\"skipped:zero gradient, x\"");
        assert_eq!(lines[3], "2,9,,,not_flipped");
    }

    #[test]
    fn a_tenth_round_trips() {
        assert_eq!(format_real(0.1).parse::<f64>().unwrap(), 0.1);
    }

    proptest! {
        #[test]
        fn reals_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            prop_assert_eq!(format_real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
