//! `TODLAB-CKPT v1` checkpoints.
//!
//! ```text
//! TODLAB-CKPT v1\n
//! <layer sizes separated by single spaces>\n
//! <n_params little-endian f64 values>
//! ```

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::model::{MlpSpec, ParamVector};

pub const CHECKPOINT_MAGIC: &str = "TODLAB-CKPT";
const VERSION: &str = "v1";

pub fn write_checkpoint(spec: &MlpSpec, params: &ParamVector) -> Result<Vec<u8>> {
    if params.len() != spec.n_params() {
        return Err(Error::invalid("parameter vector does not match spec"));
    }
    let sizes: Vec<String> = spec.layer_sizes().iter().map(|s| s.to_string()).collect();
    let mut out = format!("{CHECKPOINT_MAGIC} {VERSION}\n{}\n", sizes.join(" ")).into_bytes();
    out.reserve(params.len() * 8);
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take_line<'a>(bytes: &'a [u8], what: &str) -> Result<(&'a str, &'a [u8])> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format(format!("truncated checkpoint: missing {what} line")))?;
    let line = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format(format!("{what} line is not UTF-8")))?;
    Ok((line, &bytes[end + 1..]))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(MlpSpec, ParamVector)> {
    let (header, rest) = take_line(bytes, "header")?;
    let mut parts = header.split(' ');
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::Format("not a TODLAB checkpoint (bad magic)".into()));
    }
    match parts.next() {
        Some(VERSION) if parts.next().is_none() => {}
        other => {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let (sizes, payload) = take_line(rest, "layer sizes")?;
    let sizes = sizes
        .split(' ')
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Format(format!("bad layer sizes `{sizes}`")))?;
    let spec = MlpSpec::new(sizes).map_err(|e| Error::Format(e.to_string()))?;
    let expected = spec.n_params() * 8;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ParamVector::from_vec(&spec, values).map_err(|e| Error::Format(e.to_string()))?;
    Ok((spec, params))
}

pub fn save_checkpoint(path: &Path, spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    write_atomic(path, &write_checkpoint(spec, params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpSpec, ParamVector)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;

    #[test]
    fn round_trip_is_bitwise() {
        let spec = MlpSpec::new(vec![3, 7, 2]).unwrap();
        let params = spec.init_params(42);
        let bytes = write_checkpoint(&spec, &params).unwrap();
        assert!(bytes.starts_with(b"TODLAB-CKPT v1\n3 7 2\n"));
        let (s2, p2) = read_checkpoint(&bytes).unwrap();
        assert_eq!(s2, spec);
        assert!(params.as_slice().iter().zip(p2.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn malformed_inputs_are_format_errors() {
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let bytes = write_checkpoint(&spec, &spec.init_params(1)).unwrap();
        for cut in [0, 5, 15, 20, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(&extra), Err(Error::Format(_))));
        let v2 = [b"TODLAB-CKPT v2".as_slice(), &bytes[14..]].concat();
        let err = read_checkpoint(&v2).unwrap_err();
        assert!(err.to_string().contains("version"));
        let bad = [b"XODLAB-CKPT v1".as_slice(), &bytes[14..]].concat();
        assert!(read_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn loaded_model_gives_identical_outputs() {
        let spec = MlpSpec::new(vec![2, 8, 3]).unwrap();
        let params = spec.init_params(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &spec, &params).unwrap();
        let (s2, p2) = load_checkpoint(&path).unwrap();
        let x = [0.25, -1.5];
        assert_eq!(forward(&spec, &params, &x).unwrap(), forward(&s2, &p2, &x).unwrap());
    }
}
