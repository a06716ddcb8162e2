use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ioutil::write_atomic;

use super::mat::Mat;
use super::{EncoderConfig, EncoderParams, LayerParams, Tokenizer};

const FORMAT_TAG: &str = "embforge-checkpoint-v1";

/// On-disk encoder container: config header, vocabulary (with fingerprint),
/// and named tensors. JSON keeps it diff-able; serde_json round-trips f64
/// exactly, so save -> load reproduces forward outputs bit for bit.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: EncoderConfig,
    pub vocab_hash: u64,
    pub vocab: Vec<String>,
    pub tensors: BTreeMap<String, Mat>,
}

/// FNV-1a over the id-ordered token list. Stable across platforms.
pub fn vocab_fingerprint(tokens: &[String]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for token in tokens {
        for byte in token.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash ^= 0x1f; // record separator
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn save_checkpoint(path: &Path, params: &EncoderParams, tokenizer: &Tokenizer) -> Result<()> {
    if !params.is_finite() {
        return Err(Error::Numeric("checkpoint: non-finite parameters".into()));
    }
    if params.vocab_size() != tokenizer.vocab_size() {
        return Err(Error::Dimension(format!(
            "checkpoint: embedding rows {} vs vocab {}",
            params.vocab_size(),
            tokenizer.vocab_size()
        )));
    }
    let mut tensors = BTreeMap::new();
    tensors.insert("token_embeddings".to_string(), params.token_embeddings.clone());
    for (i, l) in params.layers.iter().enumerate() {
        tensors.insert(format!("layer{i}.w_q"), l.w_q.clone());
        tensors.insert(format!("layer{i}.w_k"), l.w_k.clone());
        tensors.insert(format!("layer{i}.w_v"), l.w_v.clone());
        tensors.insert(format!("layer{i}.w_o"), l.w_o.clone());
        tensors.insert(format!("layer{i}.w_ff1"), l.w_ff1.clone());
        tensors.insert(format!("layer{i}.w_ff2"), l.w_ff2.clone());
    }
    let ckpt = Checkpoint {
        format: FORMAT_TAG.to_string(),
        config: params.config.clone(),
        vocab_hash: vocab_fingerprint(tokenizer.tokens()),
        vocab: tokenizer.tokens().to_vec(),
        tensors,
    };
    write_atomic(path, &serde_json::to_vec(&ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams, Tokenizer)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Data(format!("invalid checkpoint {}: {e}", path.display())))?;
    if ckpt.format != FORMAT_TAG {
        return Err(Error::Data(format!(
            "unsupported checkpoint format '{}'",
            ckpt.format
        )));
    }
    ckpt.config.validate()?;
    if vocab_fingerprint(&ckpt.vocab) != ckpt.vocab_hash {
        return Err(Error::Data("checkpoint vocab hash mismatch".into()));
    }

    let take = |name: &str, rows: usize, cols: usize| -> Result<Mat> {
        let m = ckpt
            .tensors
            .get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint missing tensor '{name}'")))?;
        if m.rows != rows || m.cols != cols || m.data.len() != rows * cols {
            return Err(Error::Data(format!(
                "checkpoint tensor '{name}' has shape {}x{}, expected {rows}x{cols}",
                m.rows, m.cols
            )));
        }
        Ok(m.clone())
    };

    let d = ckpt.config.dim;
    let token_embeddings = take("token_embeddings", ckpt.vocab.len(), d)?;
    let mut layers = Vec::with_capacity(ckpt.config.layer_count);
    for i in 0..ckpt.config.layer_count {
        layers.push(LayerParams {
            w_q: take(&format!("layer{i}.w_q"), d, d)?,
            w_k: take(&format!("layer{i}.w_k"), d, d)?,
            w_v: take(&format!("layer{i}.w_v"), d, d)?,
            w_o: take(&format!("layer{i}.w_o"), d, d)?,
            w_ff1: take(&format!("layer{i}.w_ff1"), d, 4 * d)?,
            w_ff2: take(&format!("layer{i}.w_ff2"), 4 * d, d)?,
        });
    }
    let params = EncoderParams {
        config: ckpt.config,
        token_embeddings,
        layers,
    };
    if !params.is_finite() {
        return Err(Error::Numeric(
            "checkpoint contains non-finite parameters".into(),
        ));
    }
    let max_len = params.config.max_len;
    Ok((params, Tokenizer::from_tokens(ckpt.vocab, max_len)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode, MaskMode, TokenSequence};
    use crate::numerics::SeededRng;

    fn fixture() -> (EncoderParams, Tokenizer) {
        let tk = Tokenizer::from_corpus(["alpha beta gamma delta epsilon"], 512);
        let mut rng = SeededRng::new(21);
        let params = EncoderParams::init(
            EncoderConfig::new(8, 2, 2, MaskMode::Bidirectional),
            tk.vocab_size(),
            &mut rng,
        )
        .unwrap();
        (params, tk)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (params, tk) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        save_checkpoint(&path, &params, &tk).unwrap();
        let (loaded, ltk) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(ltk.tokens(), tk.tokens());

        let seq = TokenSequence { ids: vec![2, 3, 4] };
        assert_eq!(encode(&seq, &params).unwrap(), encode(&seq, &loaded).unwrap());
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let (params, tk) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        save_checkpoint(&path, &params, &tk).unwrap();

        let mut ckpt: Checkpoint =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        ckpt.config.dim = 16; // header no longer matches tensors
        std::fs::write(&path, serde_json::to_vec(&ckpt).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Data(_))));
    }

    #[test]
    fn tampered_vocab_is_rejected() {
        let (params, tk) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        save_checkpoint(&path, &params, &tk).unwrap();
        let mut ckpt: Checkpoint =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        ckpt.vocab[2] = "zznotthetoken".into();
        std::fs::write(&path, serde_json::to_vec(&ckpt).unwrap()).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }

    #[test]
    fn corrupted_tensor_data_is_rejected() {
        let (params, tk) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        save_checkpoint(&path, &params, &tk).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let patched = text.replacen("\"data\":[", "\"data\":[1e999,", 1);
        std::fs::write(&path, patched).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
