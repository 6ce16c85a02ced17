//! Weight-file serialization.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"EDYN"
//! version u32 (currently 1)
//! ----- checksummed region -----
//! variant u32            0 = relu_bn, 1 = selu
//! stages  u32
//! filters u32
//! classes u32
//! input_h u32, input_w u32
//! dropout_rate f64
//! activation_before_bn u8
//! layer_count u32
//! per layer:
//!   name_len u32, name (UTF-8)
//!   kind u32               1 conv3x3, 2 conv1x1, 3 transposed, 4 batchnorm
//!   ndims u32, dims u32 * ndims
//!   payload f32 * :
//!     conv        prod(dims) weights, then dims[0] biases
//!     transposed  prod(dims) weights, then dims[1] biases
//!     batchnorm   dims = [c]: gamma, beta, moving_mean, moving_var, then
//!                 one f32 holding batches_tracked
//! ----- end checksummed region -----
//! crc32 u32 of the checksummed region
//! ```
//!
//! Raw f32 bit patterns are preserved, so save -> load -> save reproduces the
//! file byte for byte.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_model, EddyNetConfig, NetworkWeights, Variant};
use crate::bytes::{put_f32, put_f32_slice, put_f64, put_u32, put_u8, Cursor};
use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerParams};
use crate::tensor::Tensor4;

const MAGIC: [u8; 4] = *b"EDYN";
const VERSION: u32 = 1;

/// Serialize the full network (weights, biases, batch-norm state) to `path`.
pub fn save_weights(weights: &NetworkWeights<f32>, path: &Path) -> Result<()> {
    let bytes = encode(weights);
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn encode(weights: &NetworkWeights<f32>) -> Vec<u8> {
    let config = weights.config();
    let mut body = Vec::new();
    put_u32(&mut body, config.variant.tag());
    put_u32(&mut body, config.stages as u32);
    put_u32(&mut body, config.filters as u32);
    put_u32(&mut body, config.classes as u32);
    put_u32(&mut body, config.input_size.0 as u32);
    put_u32(&mut body, config.input_size.1 as u32);
    put_f64(&mut body, config.dropout_rate);
    put_u8(&mut body, config.activation_before_bn as u8);
    put_u32(&mut body, weights.layer_count() as u32);

    for (name, params) in weights.layers() {
        put_u32(&mut body, name.len() as u32);
        body.extend_from_slice(name.as_bytes());
        put_u32(&mut body, params.kind().tag());
        match params {
            LayerParams::Conv(p) => {
                let (o, i, kh, kw) = p.weights.shape();
                put_u32(&mut body, 4);
                for d in [o, i, kh, kw] {
                    put_u32(&mut body, d as u32);
                }
                put_f32_slice(&mut body, p.weights.as_slice());
                put_f32_slice(&mut body, &p.bias);
            }
            LayerParams::TransposedConv(p) => {
                let (i, o, kh, kw) = p.weights.shape();
                put_u32(&mut body, 4);
                for d in [i, o, kh, kw] {
                    put_u32(&mut body, d as u32);
                }
                put_f32_slice(&mut body, p.weights.as_slice());
                put_f32_slice(&mut body, &p.bias);
            }
            LayerParams::BatchNorm(p) => {
                put_u32(&mut body, 1);
                put_u32(&mut body, p.channels() as u32);
                put_f32_slice(&mut body, &p.gamma);
                put_f32_slice(&mut body, &p.beta);
                put_f32_slice(&mut body, &p.moving_mean);
                put_f32_slice(&mut body, &p.moving_var);
                put_f32(&mut body, p.batches_tracked as f32);
            }
        }
    }

    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    out.extend_from_slice(&body);
    put_u32(&mut out, crc);
    out
}

/// Load a self-describing weight file.
pub fn load_weights(path: &Path) -> Result<NetworkWeights<f32>> {
    decode(&std::fs::read(path)?)
}

/// Load and require an architecture matching `expected` (variant first, then
/// structure). Training knobs like the dropout rate are not compared.
pub fn load_weights_for(path: &Path, expected: &EddyNetConfig) -> Result<NetworkWeights<f32>> {
    let weights = load_weights(path)?;
    let found = weights.config();
    if found.variant != expected.variant {
        return Err(Error::VariantMismatch {
            expected: expected.variant.name().into(),
            found: found.variant.name().into(),
        });
    }
    if found.stages != expected.stages || found.filters != expected.filters || found.classes != expected.classes {
        return Err(Error::LayerMismatch(format!(
            "architecture mismatch: file has stages={} filters={} classes={}, expected stages={} filters={} classes={}",
            found.stages, found.filters, found.classes, expected.stages, expected.filters, expected.classes
        )));
    }
    Ok(weights)
}

pub fn decode(bytes: &[u8]) -> Result<NetworkWeights<f32>> {
    if bytes.len() < 12 {
        return Err(Error::Truncated(format!("{} bytes is too short for a weight file", bytes.len())));
    }
    let found: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("length checked"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("length checked"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }

    let mut cur = Cursor::new(body);
    let variant = Variant::from_tag(cur.u32("variant")?)
        .ok_or_else(|| Error::InvalidConfig("unknown variant tag".into()))?;
    let stages = cur.u32("stages")? as usize;
    let filters = cur.u32("filters")? as usize;
    let classes = cur.u32("classes")? as usize;
    let input_h = cur.u32("input_h")? as usize;
    let input_w = cur.u32("input_w")? as usize;
    let dropout_rate = cur.f64("dropout_rate")?;
    let activation_before_bn = cur.u8("activation_before_bn")? != 0;
    let config = EddyNetConfig {
        variant,
        stages,
        filters,
        dropout_rate,
        input_size: (input_h, input_w),
        classes,
        activation_before_bn,
    };
    config.validate()?;

    // rebuild the architecture, then overwrite every parameter from the file
    let mut weights = build_model::<f32>(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let layer_count = cur.u32("layer_count")? as usize;
    if layer_count != weights.layer_count() {
        return Err(Error::LayerMismatch(format!(
            "file holds {layer_count} layers, architecture has {}",
            weights.layer_count()
        )));
    }

    for (expected_name, params) in weights.layers_mut().iter_mut() {
        let name_len = cur.u32("layer name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "layer name")?)
            .map_err(|_| Error::LayerMismatch("layer name is not UTF-8".into()))?;
        if name != expected_name {
            return Err(Error::LayerMismatch(format!(
                "layer name {name:?} does not match architecture layer {expected_name:?}"
            )));
        }
        let kind = LayerKind::from_tag(cur.u32("layer kind")?)
            .ok_or_else(|| Error::LayerMismatch(format!("unknown kind tag in layer {name}")))?;
        if kind != params.kind() {
            return Err(Error::LayerMismatch(format!(
                "layer {name} kind {kind:?} does not match architecture {:?}",
                params.kind()
            )));
        }
        let ndims = cur.u32("ndims")? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(cur.u32("dim")? as usize);
        }
        match params {
            LayerParams::Conv(p) => {
                let (o, i, kh, kw) = p.weights.shape();
                if dims != [o, i, kh, kw] {
                    return Err(Error::LayerMismatch(format!(
                        "layer {name} dims {dims:?} do not match {:?}",
                        [o, i, kh, kw]
                    )));
                }
                let data = cur.f32_slice(o * i * kh * kw, "conv weights")?;
                p.weights = Tensor4::from_vec(o, i, kh, kw, data)?;
                p.bias = cur.f32_slice(o, "conv bias")?;
            }
            LayerParams::TransposedConv(p) => {
                let (i, o, kh, kw) = p.weights.shape();
                if dims != [i, o, kh, kw] {
                    return Err(Error::LayerMismatch(format!(
                        "layer {name} dims {dims:?} do not match {:?}",
                        [i, o, kh, kw]
                    )));
                }
                let data = cur.f32_slice(i * o * kh * kw, "transposed conv weights")?;
                p.weights = Tensor4::from_vec(i, o, kh, kw, data)?;
                p.bias = cur.f32_slice(o, "transposed conv bias")?;
            }
            LayerParams::BatchNorm(p) => {
                let c = p.channels();
                if dims != [c] {
                    return Err(Error::LayerMismatch(format!(
                        "layer {name} dims {dims:?} do not match [{c}]"
                    )));
                }
                p.gamma = cur.f32_slice(c, "bn gamma")?;
                p.beta = cur.f32_slice(c, "bn beta")?;
                p.moving_mean = cur.f32_slice(c, "bn moving mean")?;
                p.moving_var = cur.f32_slice(c, "bn moving var")?;
                p.batches_tracked = cur.f32("bn batches tracked")? as u64;
            }
        }
    }
    if cur.remaining() != 0 {
        return Err(Error::LayerMismatch(format!(
            "{} unexpected trailing bytes",
            cur.remaining()
        )));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4;
    use rand::SeedableRng;

    fn small_config(variant: Variant) -> EddyNetConfig {
        EddyNetConfig {
            variant,
            stages: 2,
            filters: 4,
            input_size: (16, 16),
            ..EddyNetConfig::default()
        }
    }

    fn trained_weights(variant: Variant, seed: u64) -> NetworkWeights<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = build_model::<f32>(&small_config(variant), &mut rng).unwrap();
        // fold one batch into the BN statistics so the file carries real state
        let input = Tensor4::filled(2, 1, 16, 16, 0.25f32);
        weights.forward_train(&input, &mut rng).unwrap();
        weights
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let weights = trained_weights(Variant::Selu, 1);
        let p1 = dir.path().join("a.edyn");
        let p2 = dir.path().join("b.edyn");
        save_weights(&weights, &p1).unwrap();
        let reloaded = load_weights(&p1).unwrap();
        save_weights(&reloaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn reloaded_weights_infer_identically() {
        let dir = tempfile::tempdir().unwrap();
        let weights = trained_weights(Variant::ReluBn, 2);
        let path = dir.path().join("w.edyn");
        save_weights(&weights, &path).unwrap();
        let reloaded = load_weights(&path).unwrap();
        let input = Tensor4::filled(1, 1, 16, 16, -0.5f32);
        assert_eq!(
            weights.forward_infer(&input).unwrap(),
            reloaded.forward_infer(&input).unwrap()
        );
    }

    #[test]
    fn truncated_file_is_rejected_cleanly() {
        let few = [b'E', b'D', b'Y'];
        assert!(matches!(decode(&few), Err(Error::Truncated(_))));
    }

    #[test]
    fn corrupted_payload_fails_the_checksum() {
        let weights = trained_weights(Variant::Selu, 3);
        let mut bytes = encode(&weights);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        assert!(matches!(decode(&bytes), Err(Error::CrcMismatch { .. })));
    }

    #[test]
    fn cut_payload_fails_the_checksum() {
        let weights = trained_weights(Variant::Selu, 4);
        let mut bytes = encode(&weights);
        bytes.truncate(bytes.len() - 100);
        assert!(matches!(
            decode(&bytes),
            Err(Error::CrcMismatch { .. }) | Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn wrong_magic_and_version_have_distinct_errors() {
        let weights = trained_weights(Variant::Selu, 5);
        let mut bytes = encode(&weights);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic { .. })));

        let mut bytes = encode(&weights);
        bytes[4] = 99;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(99))));
    }

    #[test]
    fn cross_variant_load_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let weights = trained_weights(Variant::Selu, 6);
        let path = dir.path().join("selu.edyn");
        save_weights(&weights, &path).unwrap();
        let err = load_weights_for(&path, &small_config(Variant::ReluBn)).unwrap_err();
        assert!(matches!(err, Error::VariantMismatch { .. }), "{err}");
    }
}
