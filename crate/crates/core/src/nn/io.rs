//! Model file layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MGRD"
//! 4       1     format version (1)
//! 5       16    channels[0..4] as u32
//! 21      4     last_channel as u32
//! 25      1     flags: bit 0 = double bottleneck
//! 26      4·P   parameters as f32, layer by layer, weight then bias
//! ```
//!
//! Conv weights are `[cout, cin, k, k]`; transposed-conv weights are `[cin, cout, k, k]`.

use std::fs;
use std::path::Path;

use super::model::{layer_specs, ChannelConfig, Model, ModelError};

pub const MAGIC: &[u8; 4] = b"MGRD";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 26;

pub fn to_bytes(model: &Model<f32>) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for c in cfg.channels {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend_from_slice(&(cfg.last_channel as u32).to_le_bytes());
    out.push(u8::from(cfg.double_bottleneck));
    for v in model.params().iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model<f32>, ModelError> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(ModelError::Version(bytes[4]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::Length { expected: HEADER_LEN, found: bytes.len() });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let channels = [u32_at(5), u32_at(9), u32_at(13), u32_at(17)];
    let config = ChannelConfig { channels, last_channel: u32_at(21), double_bottleneck: bytes[25] & 1 == 1 };
    config.validate()?;
    let layers = layer_specs(&config);
    let total: usize = layers.iter().map(|l| l.param_count()).sum();
    let expected = HEADER_LEN + 4 * total;
    if bytes.len() != expected {
        return Err(ModelError::Length { expected, found: bytes.len() });
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
    let mut params = Vec::with_capacity(layers.len() * 2);
    for layer in &layers {
        params.push(values.by_ref().take(layer.weight_len()).collect());
        params.push(values.by_ref().take(layer.cout).collect());
    }
    Model::from_params(config, params)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, to_bytes(model)).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load(path: &Path) -> Result<Model<f32>, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::<f32>::build(ChannelConfig { double_bottleneck: true, ..ChannelConfig::TINY }, 4).unwrap();
        let back = from_bytes(&to_bytes(&model)).unwrap();
        assert_eq!(back.config(), model.config());
        let bits = |m: &Model<f32>| m.params().iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
    }

    #[test]
    fn header_layout() {
        let model = Model::<f32>::build(ChannelConfig::TINY, 0).unwrap();
        let bytes = to_bytes(&model);
        assert_eq!(&bytes[..5], b"MGRD\x01");
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[17..21], &8u32.to_le_bytes());
        assert_eq!(bytes.len(), 26 + 4 * model.param_count());
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = to_bytes(&Model::<f32>::build(ChannelConfig::TINY, 0).unwrap());
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(ModelError::Length { .. })));
        assert!(matches!(from_bytes(&bytes[..10]), Err(ModelError::Length { .. })));
        let mut foreign = bytes.clone();
        foreign[..4].copy_from_slice(b"PK\x03\x04");
        assert!(matches!(from_bytes(&foreign), Err(ModelError::BadMagic)));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(from_bytes(&version), Err(ModelError::Version(9))));
        // header says 16 channels, body sized for 2
        let mut shape = bytes;
        shape[5..9].copy_from_slice(&16u32.to_le_bytes());
        assert!(matches!(from_bytes(&shape), Err(ModelError::Length { .. })));
    }
}
