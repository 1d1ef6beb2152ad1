//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "MDLSAECK"
//! version u32      1
//! d       u32      input dimension
//! D       u32      dictionary size
//! rule    u8       0 = relu_l1, 1 = topk, 2 = batch_topk
//! k       u32      TopK budget (0 when unused)
//! seed    u64      training seed
//! payload f32 LE   W_enc (D*d), b_enc (D), W_dec (d*D), b_dec (d),
//!                  row-major
//! ```
//!
//! Parameters are stored as 32-bit floats, so save -> load -> save is
//! byte-identical. A checkpoint carries architecture and parameters
//! only; training hyperparameters are not persisted.

use std::fmt;

use crate::math::{MathError, Matrix};
use crate::sae::{ActivationRule, SaeConfig, SaeModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDLSAECK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Errors from checkpoint encoding and decoding.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointError {
    BadMagic { observed: [u8; 8] },
    UnsupportedVersion { version: u32 },
    UnknownRule { code: u8 },
    Truncated { expected: usize, actual: usize },
    TrailingBytes { expected: usize, actual: usize },
    /// Stored parameters failed model validation (non-finite values).
    InvalidPayload(MathError),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadMagic { observed } => {
                write!(f, "bad checkpoint magic {observed:?}")
            }
            Self::UnsupportedVersion { version } => {
                write!(f, "unsupported checkpoint version {version}")
            }
            Self::UnknownRule { code } => write!(f, "unknown activation rule code {code}"),
            Self::Truncated { expected, actual } => {
                write!(f, "truncated checkpoint: expected {expected} bytes, got {actual}")
            }
            Self::TrailingBytes { expected, actual } => {
                write!(f, "trailing bytes: expected {expected} bytes, got {actual}")
            }
            Self::InvalidPayload(e) => write!(f, "invalid checkpoint payload: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

fn rule_code(rule: ActivationRule) -> u8 {
    match rule {
        ActivationRule::ReluL1 => 0,
        ActivationRule::TopK => 1,
        ActivationRule::BatchTopK => 2,
    }
}

fn rule_from_code(code: u8) -> Result<ActivationRule, CheckpointError> {
    match code {
        0 => Ok(ActivationRule::ReluL1),
        1 => Ok(ActivationRule::TopK),
        2 => Ok(ActivationRule::BatchTopK),
        code => Err(CheckpointError::UnknownRule { code }),
    }
}

fn push_f32s(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes a model to checkpoint bytes.
pub fn encode(model: &SaeModel) -> Vec<u8> {
    let d = model.input_dim();
    let dict = model.dict_size();
    let mut out = Vec::with_capacity(33 + 4 * (2 * d * dict + d + dict));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(dict as u32).to_le_bytes());
    out.push(rule_code(model.config.activation_rule));
    out.extend_from_slice(&(model.config.k as u32).to_le_bytes());
    out.extend_from_slice(&model.config.seed.to_le_bytes());
    push_f32s(&mut out, model.encoder_weights.data().iter().copied());
    push_f32s(&mut out, model.encoder_bias.iter().copied());
    push_f32s(&mut out, model.decoder_weights.data().iter().copied());
    push_f32s(&mut out, model.decoder_bias.iter().copied());
    out
}

const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 1 + 4 + 8;

/// Deserializes a checkpoint. The returned model carries the stored
/// architecture fields; unstored hyperparameters take their defaults.
pub fn decode(bytes: &[u8]) -> Result<SaeModel, CheckpointError> {
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        let mut observed = [0u8; 8];
        observed.copy_from_slice(&bytes[..8]);
        return Err(CheckpointError::BadMagic { observed });
    }
    let u32_at = |offset: usize| {
        u32::from_le_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]])
    };
    let version = u32_at(8);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { version });
    }
    let d = u32_at(12) as usize;
    let dict = u32_at(16) as usize;
    let rule = rule_from_code(bytes[20])?;
    let k = u32_at(21) as usize;
    let seed = u64::from_le_bytes([
        bytes[25], bytes[26], bytes[27], bytes[28], bytes[29], bytes[30], bytes[31], bytes[32],
    ]);
    let payload_floats = 2 * d * dict + d + dict;
    let expected = HEADER_LEN + 4 * payload_floats;
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => {
            return Err(CheckpointError::Truncated {
                expected,
                actual: bytes.len(),
            })
        }
        std::cmp::Ordering::Greater => {
            return Err(CheckpointError::TrailingBytes {
                expected,
                actual: bytes.len(),
            })
        }
        std::cmp::Ordering::Equal => {}
    }
    let mut cursor = HEADER_LEN;
    let mut take = |count: usize| -> Vec<f64> {
        let out = bytes[cursor..cursor + 4 * count]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        cursor += 4 * count;
        out
    };
    let encoder_weights =
        Matrix::new(dict, d, take(dict * d)).map_err(CheckpointError::InvalidPayload)?;
    let encoder_bias = take(dict);
    let decoder_weights =
        Matrix::new(d, dict, take(d * dict)).map_err(CheckpointError::InvalidPayload)?;
    let decoder_bias = take(d);
    let config = SaeConfig {
        input_dim: d,
        dict_size: dict,
        k,
        l1_coefficient: 0.0,
        learning_rate: 1e-3,
        epochs: 1,
        batch_size: 256,
        seed,
        activation_rule: rule,
        patience: 10,
        target_test_mse: None,
    };
    Ok(SaeModel {
        encoder_weights,
        encoder_bias,
        decoder_weights,
        decoder_bias,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;

    fn sample_model() -> SaeModel {
        let mut rng = Rng::new(88);
        let (d, dict) = (3, 5);
        let gauss = |rng: &mut Rng, len: usize| {
            (0..len).map(|_| rng.next_gaussian()).collect::<Vec<_>>()
        };
        SaeModel {
            encoder_weights: Matrix::new(dict, d, gauss(&mut rng, dict * d)).unwrap(),
            encoder_bias: gauss(&mut rng, dict),
            decoder_weights: Matrix::new(d, dict, gauss(&mut rng, d * dict)).unwrap(),
            decoder_bias: gauss(&mut rng, d),
            config: SaeConfig {
                input_dim: d,
                dict_size: dict,
                k: 2,
                l1_coefficient: 0.0,
                learning_rate: 1e-3,
                epochs: 1,
                batch_size: 4,
                seed: 1234,
                activation_rule: ActivationRule::BatchTopK,
                patience: 10,
                target_test_mse: None,
            },
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = sample_model();
        let bytes1 = encode(&model);
        let loaded = decode(&bytes1).unwrap();
        let bytes2 = encode(&loaded);
        assert_eq!(bytes1, bytes2);
        assert_eq!(loaded.config.k, 2);
        assert_eq!(loaded.config.seed, 1234);
        assert_eq!(loaded.config.activation_rule, ActivationRule::BatchTopK);
        assert_eq!(loaded.input_dim(), 3);
        assert_eq!(loaded.dict_size(), 5);
    }

    #[test]
    fn rejects_corruption() {
        let model = sample_model();
        let bytes = encode(&model);
        assert!(matches!(
            decode(&bytes[..10]),
            Err(CheckpointError::Truncated { .. })
        ));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode(&bad_magic),
            Err(CheckpointError::BadMagic { .. })
        ));
        let mut bad_version = bytes.clone();
        bad_version[8] = 99;
        assert!(matches!(
            decode(&bad_version),
            Err(CheckpointError::UnsupportedVersion { version: 99 })
        ));
        let mut bad_rule = bytes.clone();
        bad_rule[20] = 7;
        assert!(matches!(
            decode(&bad_rule),
            Err(CheckpointError::UnknownRule { code: 7 })
        ));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(
            decode(&trailing),
            Err(CheckpointError::TrailingBytes { .. })
        ));
        let mut short = bytes;
        short.pop();
        assert!(matches!(
            decode(&short),
            Err(CheckpointError::Truncated { .. })
        ));
    }
}
