//! Parameter checkpoints.
//!
//! Layout: the 8-byte magic `FTACKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` parameter count, then that many
//! little-endian IEEE-754 doubles.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 8] = *b"FTACKPT\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

pub fn encode<T: Scalar>(params: &ParamVector<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.dim());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    for v in params.iter() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamVector<T>> {
    let format = |field, detail: String| Error::Format { field, detail };
    if bytes.len() < HEADER_LEN {
        return Err(format("header", format!("expected at least {HEADER_LEN} bytes, got {}", bytes.len())));
    }
    if bytes[..8] != MAGIC {
        return Err(format("magic", format!("expected {MAGIC:?}, got {:?}", &bytes[..8])));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("slice of 4"));
    if version != VERSION {
        return Err(format("version", format!("unsupported version {version}, expected {VERSION}")));
    }
    let dim = u64::from_le_bytes(bytes[12..20].try_into().expect("slice of 8"));
    let payload = &bytes[HEADER_LEN..];
    let expected = usize::try_from(dim).ok().and_then(|d| d.checked_mul(8));
    if expected != Some(payload.len()) {
        return Err(format("payload", format!("dimension {dim} needs {} bytes, got {}", dim.saturating_mul(8), payload.len())));
    }
    let values = payload.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8")))).collect();
    Ok(ParamVector::from_vec(values))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, params: &ParamVector<T>) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamVector<T>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = ParamVector::from_vec(vec![0.1, -2.5e-300, f64::MAX, 0.0, -0.0, 1.0 / 3.0]);
        let back: ParamVector<f64> = decode(&encode(&p)).unwrap();
        let bits = |v: &ParamVector<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&back));
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&ParamVector::from_vec(vec![1.0f64]));
        assert_eq!(&bytes[..8], b"FTACKPT\0");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[20..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn corrupt_inputs_name_the_field() {
        let good = encode(&ParamVector::from_vec(vec![1.0f64, 2.0]));
        let field = |b: &[u8]| match decode::<f64>(b) {
            Err(Error::Format { field, .. }) => field,
            other => panic!("expected a format error, got {other:?}"),
        };
        assert_eq!(field(&good[..10]), "header");
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(field(&bad), "magic");
        let mut bad = good.clone();
        bad[8] = 2;
        assert_eq!(field(&bad), "version");
        assert_eq!(field(&good[..good.len() - 1]), "payload");
        let mut bad = good.clone();
        bad[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert_eq!(field(&bad), "payload");
    }

    #[test]
    fn empty_vector() {
        let back: ParamVector<f64> = decode(&encode(&ParamVector::<f64>::zeros(0))).unwrap();
        assert_eq!(back.dim(), 0);
    }
}
