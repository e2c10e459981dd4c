//! Binary network files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "RRNN"
//! version      u8       1
//! init mode    u8       0 = standard, 1 = depth-collapse
//! provenance   u8       0 = none, 1 = present
//! master seed  u64
//! stream id    u64
//! input dim    u64
//! ℓ            u64
//! widths       ℓ × u64
//! weights      f64 bit patterns, W_1..W_{ℓ+1}, row-major
//! ```

use std::path::Path;

use super::{Architecture, InitMode, Network, Provenance};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 4] = b"RRNN";
const VERSION: u8 = 1;

pub fn encode_network(net: &Network) -> Vec<u8> {
    let arch = net.arch();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(match net.mode() {
        InitMode::Standard => 0,
        InitMode::DepthCollapse => 1,
    });
    let prov = net.provenance();
    out.push(u8::from(prov.is_some()));
    let prov = prov.unwrap_or(Provenance {
        master_seed: 0,
        stream_id: 0,
    });
    out.extend_from_slice(&prov.master_seed.to_le_bytes());
    out.extend_from_slice(&prov.stream_id.to_le_bytes());
    out.extend_from_slice(&(arch.input_dim() as u64).to_le_bytes());
    out.extend_from_slice(&(arch.depth() as u64).to_le_bytes());
    for &w in arch.hidden_widths() {
        out.extend_from_slice(&(w as u64).to_le_bytes());
    }
    for m in net.weights() {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!("truncated while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&c| c <= 1 << 32)
            .ok_or_else(|| Error::Format(format!("{what} {v} is out of range")))
    }
}

pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a network file".into()));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let mode = match r.u8("init mode")? {
        0 => InitMode::Standard,
        1 => InitMode::DepthCollapse,
        other => return Err(Error::Format(format!("unknown init mode {other}"))),
    };
    let has_prov = match r.u8("provenance flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad provenance flag {other}"))),
    };
    let master_seed = r.u64("master seed")?;
    let stream_id = r.u64("stream id")?;
    let input_dim = r.count("input dimension")?;
    let depth = r.count("depth")?;
    let hidden = (0..depth)
        .map(|_| r.count("hidden width"))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture::new(input_dim, hidden).map_err(|e| Error::Format(e.to_string()))?;
    let widths = arch.widths();
    let mut weights = Vec::with_capacity(depth + 1);
    for i in 1..=widths.len() {
        let rows = widths.get(i).copied().unwrap_or(1);
        let cols = widths[i - 1];
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("layer size overflows".into()))?;
        let raw = r.take(n, "weights")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        weights.push(Matrix::from_vec(rows, cols, data).map_err(|e| Error::Format(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - r.pos
        )));
    }
    let provenance = has_prov.then_some(Provenance {
        master_seed,
        stream_id,
    });
    Ok(Network::from_weights(mode, weights)?.with_provenance(provenance))
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_network(net)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_network(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngStream;
    use crate::network::build_network;
    use proptest::prelude::*;

    fn sample() -> Network {
        let arch = Architecture::new(4, vec![3, 5]).unwrap();
        build_network(&arch, InitMode::DepthCollapse, &mut RngStream::new(17, 3))
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = sample();
        save_network(&net, &path).unwrap();
        assert_eq!(load_network(&path).unwrap(), net);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_network(dir.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_network(&sample());
        for cut in [0, 3, 5, 20, 40, bytes.len() - 1] {
            assert!(
                matches!(decode_network(&bytes[..cut]), Err(Error::Format(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn version_bump_is_named() {
        let mut bytes = encode_network(&sample());
        bytes[4] = 2;
        let err = decode_network(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 2, .. }));
        assert!(err.to_string().contains("version 2"));
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let good = encode_network(&sample());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_network(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode_network(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[5] = 9;
        assert!(matches!(decode_network(&bad), Err(Error::Format(_))));
        // a NaN weight
        let mut bad = good;
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&f64::NAN.to_bits().to_le_bytes());
        assert!(matches!(decode_network(&bad), Err(Error::Format(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), d in 1usize..6, hidden in proptest::collection::vec(1usize..6, 0..4)) {
            let arch = Architecture::new(d, hidden).unwrap();
            let net = build_network(&arch, InitMode::Standard, &mut RngStream::new(seed, 0));
            let back = decode_network(&encode_network(&net)).unwrap();
            prop_assert_eq!(back.provenance(), net.provenance());
            for (a, b) in back.weights().iter().zip(net.weights()) {
                let ab: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
