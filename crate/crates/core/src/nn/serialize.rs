//! Binary checkpoint format for a [`ParamVector`].
//!
//! ```text
//! "FEDP" | version: u8 | layer-dim count: u32 LE | dims: u32 LE ... | values: f64 LE ...
//! ```

use std::path::Path;
use std::sync::Arc;

use super::{NetworkSpec, ParamVector};
use crate::error::{Error, Result};

pub const HEADER_MAGIC: &[u8; 4] = b"FEDP";
const VERSION: u8 = 1;

fn header_len(n_dims: usize) -> usize {
    HEADER_MAGIC.len() + 1 + 4 + 4 * n_dims
}

pub fn serialize_params(params: &ParamVector) -> Vec<u8> {
    let dims = params.spec().layer_dims();
    let mut out = Vec::with_capacity(header_len(dims.len()) + 8 * params.len());
    out.extend_from_slice(HEADER_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_err(message: impl Into<String>) -> Error {
    Error::Parse { line: 0, message: message.into() }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| parse_err("truncated header"))
}

/// Parses a checkpoint, checking its recorded dims against `spec`.
pub fn deserialize_params(bytes: &[u8], spec: Arc<NetworkSpec>) -> Result<ParamVector> {
    if bytes.len() < header_len(0) || &bytes[..4] != HEADER_MAGIC {
        return Err(parse_err("missing FEDP magic"));
    }
    if bytes[4] != VERSION {
        return Err(parse_err(format!("unsupported version {}", bytes[4])));
    }
    let n_dims = read_u32(bytes, 5)? as usize;
    let mut dims = Vec::with_capacity(n_dims.min(64));
    for i in 0..n_dims {
        dims.push(read_u32(bytes, 9 + 4 * i)? as usize);
    }
    if dims != spec.layer_dims() {
        return Err(parse_err(format!("payload dims {dims:?} do not match expected {:?}", spec.layer_dims())));
    }
    let body = &bytes[header_len(n_dims)..];
    let count = spec.param_count();
    if body.len() != 8 * count {
        return Err(parse_err(format!("expected {} value bytes, found {}", 8 * count, body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ParamVector::new(spec, values)
}

pub fn write_params(params: &ParamVector, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_params(params)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path, spec: Arc<NetworkSpec>) -> Result<ParamVector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize_params(&bytes, spec)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::nn::OutputActivation;
    use crate::rng::rng_from_seed;

    fn spec() -> Arc<NetworkSpec> {
        Arc::new(NetworkSpec::new(3, vec![5, 4], 2, OutputActivation::Linear).unwrap())
    }

    #[test]
    fn payload_length_is_header_plus_values() {
        let p = ParamVector::init_uniform(spec(), &mut rng_from_seed(0));
        let bytes = serialize_params(&p);
        assert_eq!(bytes.len(), 4 + 1 + 4 + 4 * 4 + 8 * p.len());
    }

    #[test]
    fn golden_fixture_decodes() {
        // Written by an independent script: value i = 0.5 * sin(1.3 i + 0.7).
        let bytes = include_bytes!("../../tests/fixtures/params_3_5_4_2.fedp");
        let p = deserialize_params(bytes, spec()).unwrap();
        assert_eq!(p.values()[0], 0.5 * 0.7_f64.sin());
        assert_eq!(p.len(), 54);
        assert_eq!(*p.values().last().unwrap(), 0.233_087_203_093_592_32);
    }

    #[test]
    fn truncated_and_mismatched_payloads_fail() {
        let p = ParamVector::init_uniform(spec(), &mut rng_from_seed(1));
        let bytes = serialize_params(&p);
        assert!(deserialize_params(&bytes[..bytes.len() - 1], spec()).is_err());
        assert!(deserialize_params(&bytes[..7], spec()).is_err());
        let other = Arc::new(NetworkSpec::new(3, vec![5, 4], 3, OutputActivation::Linear).unwrap());
        assert!(deserialize_params(&bytes, other).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(deserialize_params(&bad, spec()).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(values in proptest::collection::vec(-1e300f64..1e300, 54)) {
            let p = ParamVector::new(spec(), values).unwrap();
            let back = deserialize_params(&serialize_params(&p), spec()).unwrap();
            prop_assert!(p.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
