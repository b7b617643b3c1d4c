//! Binary feature-map stacks.
//!
//! Layout: `PLFM`, a `u16` version, then `K`, `m`, `c` as `u32`, then
//! `K * m * m * c` `f32` values in (view, row, col, channel) order. All
//! integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::FeatureMap;

const MAGIC: &[u8; 4] = b"PLFM";
pub const PLFM_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 12;

pub fn encode_plfm(maps: &[FeatureMap]) -> Result<Vec<u8>> {
    let (m, c) = maps.first().map_or((1, 1), |f| (f.m(), f.channels()));
    if maps.iter().any(|f| f.m() != m || f.channels() != c) {
        return Err(Error::Mismatch("feature maps differ in size".into()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + maps.len() * m * m * c * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&PLFM_VERSION.to_le_bytes());
    for v in [maps.len(), m, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in maps {
        for v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_plfm(path: &Path, bytes: &[u8]) -> Result<Vec<FeatureMap>> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a PLFM file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PLFM_VERSION {
        return Err(bad(format!("unsupported PLFM version {version}")));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (k, m, c) = (word(0), word(1), word(2));
    let per_map = m
        .checked_mul(m)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| bad("feature map size overflows".into()))?;
    let expected = k
        .checked_mul(per_map)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| bad("feature map size overflows".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {k} maps of {m}x{m}x{c}, found {}",
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    values
        .chunks(per_map.max(1))
        .take(k)
        .map(|chunk| FeatureMap::new(m, c, chunk.to_vec()).map_err(|e| bad(e.to_string())))
        .collect()
}

pub fn read_plfm(path: impl AsRef<Path>) -> Result<Vec<FeatureMap>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_plfm(path, &bytes)
}

pub fn write_plfm(path: impl AsRef<Path>, maps: &[FeatureMap]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_plfm(maps)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_round_trip() {
        let maps = vec![
            FeatureMap::new(2, 3, (0..12).map(|v| v as f32 * 0.5).collect()).unwrap(),
            FeatureMap::filled(2, 3, -1.25),
        ];
        let bytes = encode_plfm(&maps).unwrap();
        assert_eq!(&bytes[..4], b"PLFM");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..18], &[2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[18..22], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[22..26], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 18 + 24 * 4);
        assert_eq!(decode_plfm(Path::new("x"), &bytes).unwrap(), maps);
    }

    #[test]
    fn truncated_or_foreign_files_fail() {
        let bytes = encode_plfm(&[FeatureMap::filled(2, 1, 0.0)]).unwrap();
        assert!(decode_plfm(Path::new("x"), &bytes[..bytes.len() - 1]).is_err());
        assert!(decode_plfm(Path::new("x"), b"PLY?").is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_plfm(Path::new("x"), &v2).is_err());
    }
}
