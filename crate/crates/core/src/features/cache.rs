//! Feature cache: 16-byte header (`"LMEL"`, version, frames, bins as little-endian u32)
//! followed by `frames × bins` little-endian f32 values.

use std::fs;
use std::path::Path;

use super::{FeatureError, LogMelConfig, MelSpectrogram};
use crate::tensor::Tensor;

pub const CACHE_MAGIC: &[u8; 4] = b"LMEL";
pub const CACHE_VERSION: u32 = 1;

pub fn write_cache(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 4 * mel.values.numel());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(mel.frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(mel.bins() as u32).to_le_bytes());
    for v in mel.values.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a cached map. Front-end metadata not stored in the file is taken from `cfg`.
pub fn read_cache(path: impl AsRef<Path>, cfg: &LogMelConfig) -> Result<MelSpectrogram, FeatureError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| FeatureError::Io {
        path: shown.clone(),
        source,
    })?;
    let bad = |msg: &str| FeatureError::Cache {
        path: shown.clone(),
        msg: msg.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("missing LMEL header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {}", word(4))));
    }
    let (frames, bins) = (word(8) as usize, word(12) as usize);
    if frames == 0 || bins == 0 || bytes.len() != 16 + 4 * frames * bins {
        return Err(bad("payload length does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Tensor::from_vec([1, frames, bins], data).expect("checked length");
    Ok(MelSpectrogram::from_values(values, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.lmel");
        let cfg = LogMelConfig::default();
        let data: Vec<f32> = (0..12).map(|i| i as f32 * -0.5).collect();
        let mel = MelSpectrogram::from_values(Tensor::from_vec([1, 3, 4], data).unwrap(), &cfg);
        write_cache(&p, &mel).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..4], b"LMEL");
        assert_eq!(raw.len(), 16 + 48);
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 3);
        assert_eq!(read_cache(&p, &cfg).unwrap(), mel);

        std::fs::write(&p, &raw[..20]).unwrap();
        assert!(matches!(read_cache(&p, &cfg), Err(FeatureError::Cache { .. })));
    }
}
