//! A small trainable text encoder: token embedding, sinusoidal positions,
//! stacked self-attention with a toggleable causal mask, and mean pooling
//! over non-pad positions. Gradients for every trainable tensor are computed
//! by hand-derived reverse mode and checked against finite differences.

mod backward;
mod checkpoint;
mod forward;
mod mat;

pub use backward::{backward_into, EncoderGrads};
pub use checkpoint::{load_checkpoint, save_checkpoint, vocab_fingerprint, Checkpoint};
pub use forward::{encode_with_cache, ForwardCache};
pub use mat::Mat;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::format_query;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const DEFAULT_MAX_LEN: usize = 512;

/// Attention mask mode. `Causal` reinstates the decoder-style mask and exists
/// for the bidirectional-vs-causal ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Bidirectional,
    Causal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hidden (= embedding) dimension.
    pub dim: usize,
    pub n_heads: usize,
    /// 0 is a valid bag-of-embeddings mode used by exact-value tests.
    pub layer_count: usize,
    pub max_len: usize,
    pub mask_mode: MaskMode,
    /// Sinusoidal position encodings can be disabled so that 0-layer mode is
    /// exactly permutation invariant.
    pub positional_encoding: bool,
}

impl EncoderConfig {
    pub fn new(dim: usize, n_heads: usize, layer_count: usize, mask_mode: MaskMode) -> Self {
        Self {
            dim,
            n_heads,
            layer_count,
            max_len: DEFAULT_MAX_LEN,
            mask_mode,
            positional_encoding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("encoder dim must be > 0".into()));
        }
        if self.n_heads == 0 || self.dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be divisible by n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    /// Smallest configuration that exercises the causal/bidirectional
    /// ablation meaningfully: d=64, 2 layers, 4 heads.
    fn default() -> Self {
        Self::new(64, 4, 2, MaskMode::Bidirectional)
    }
}

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercasing whitespace/punctuation tokenizer with a dense id space.
/// pad=0 and unk=1 are always present and distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub pad_id: usize,
    pub unk_id: usize,
    pub max_len: usize,
}

impl Tokenizer {
    /// Build a vocabulary from a corpus: special tokens first, then every
    /// distinct corpus token in lexicographic order.
    pub fn from_corpus<'a, I: IntoIterator<Item = &'a str>>(corpus: I, max_len: usize) -> Self {
        let mut seen: Vec<String> = Vec::new();
        let mut set = std::collections::BTreeSet::new();
        for text in corpus {
            for tok in split_tokens(text) {
                if set.insert(tok.clone()) {
                    seen.push(tok);
                }
            }
        }
        seen.sort_unstable();
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(seen);
        Self::from_tokens(tokens, max_len)
    }

    /// Rebuild from an id-ordered token list (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>, max_len: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            index,
            pad_id: 0,
            unk_id: 1,
            max_len,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Deterministic lowercased split on non-alphanumeric characters;
    /// unknown tokens map to unk, output truncates at max_len.
    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        if text.trim().is_empty() {
            return Err(Error::Input("tokenize: empty text".into()));
        }
        let mut ids: Vec<usize> = split_tokens(text)
            .map(|tok| self.index.get(&tok).copied().unwrap_or(self.unk_id))
            .collect();
        if ids.is_empty() {
            // Punctuation-only input still encodes as a single unknown.
            ids.push(self.unk_id);
        }
        ids.truncate(self.max_len);
        Ok(TokenSequence { ids })
    }
}

fn split_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
}

/// A tokenized input of length 1 ..= max_len.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Per-layer trainable tensors: attention projections and the FFN pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub w_o: Mat,
    pub w_ff1: Mat,
    pub w_ff2: Mat,
}

/// All trainable tensors of the encoder plus its architecture config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// |vocab| × dim
    pub token_embeddings: Mat,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Random initialization: uniform embeddings, Xavier-uniform projections.
    pub fn init(config: EncoderConfig, vocab_size: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut token_embeddings = Mat::zeros(vocab_size, d);
        for x in token_embeddings.data.iter_mut() {
            *x = rng.uniform_symmetric(0.1);
        }
        let mut layers = Vec::with_capacity(config.layer_count);
        for _ in 0..config.layer_count {
            layers.push(LayerParams {
                w_q: xavier(d, d, rng),
                w_k: xavier(d, d, rng),
                w_v: xavier(d, d, rng),
                w_o: xavier(d, d, rng),
                w_ff1: xavier(d, 4 * d, rng),
                w_ff2: xavier(4 * d, d, rng),
            });
        }
        Ok(Self {
            config,
            token_embeddings,
            layers,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embeddings.rows
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.token_embeddings.data.len()
            + self
                .layers
                .iter()
                .map(|l| {
                    l.w_q.data.len()
                        + l.w_k.data.len()
                        + l.w_v.data.len()
                        + l.w_o.data.len()
                        + l.w_ff1.data.len()
                        + l.w_ff2.data.len()
                })
                .sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flatten all tensors into one vector: embeddings first, then per layer
    /// w_q, w_k, w_v, w_o, w_ff1, w_ff2. The order is the optimizer contract.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.token_embeddings.data);
        for l in &self.layers {
            out.extend_from_slice(&l.w_q.data);
            out.extend_from_slice(&l.w_k.data);
            out.extend_from_slice(&l.w_v.data);
            out.extend_from_slice(&l.w_o.data);
            out.extend_from_slice(&l.w_ff1.data);
            out.extend_from_slice(&l.w_ff2.data);
        }
        out
    }

    /// Inverse of [`flatten`]; the flat slice must have exactly `len()` entries.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.len()
            )));
        }
        let mut pos = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let len = dst.len();
            dst.copy_from_slice(&flat[pos..pos + len]);
            pos += len;
        };
        take(&mut self.token_embeddings.data);
        for l in self.layers.iter_mut() {
            take(&mut l.w_q.data);
            take(&mut l.w_k.data);
            take(&mut l.w_v.data);
            take(&mut l.w_o.data);
            take(&mut l.w_ff1.data);
            take(&mut l.w_ff2.data);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.token_embeddings.is_finite()
            && self.layers.iter().all(|l| {
                l.w_q.is_finite()
                    && l.w_k.is_finite()
                    && l.w_v.is_finite()
                    && l.w_o.is_finite()
                    && l.w_ff1.is_finite()
                    && l.w_ff2.is_finite()
            })
    }
}

fn xavier(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut m = Mat::zeros(fan_in, fan_out);
    for x in m.data.iter_mut() {
        *x = rng.uniform_symmetric(limit);
    }
    m
}

/// Sinusoidal position encoding row for `pos` in dimension `d`.
pub(crate) fn position_encoding(pos: usize, d: usize) -> Vec<f64> {
    let mut row = vec![0.0; d];
    for i in 0..d / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        row[2 * i] = (pos as f64 * freq).sin();
        row[2 * i + 1] = (pos as f64 * freq).cos();
    }
    if d % 2 == 1 {
        let i = d / 2;
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        row[d - 1] = (pos as f64 * freq).sin();
    }
    row
}

/// Encode a token sequence to a single mean-pooled embedding.
pub fn encode(seq: &TokenSequence, params: &EncoderParams) -> Result<Vec<f64>> {
    Ok(encode_with_cache(seq, params)?.pooled)
}

/// Final-layer hidden states, one row per token. Used by the mask probes.
pub fn hidden_states(seq: &TokenSequence, params: &EncoderParams) -> Result<Mat> {
    Ok(encode_with_cache(seq, params)?.x_final)
}

/// Encode an instruction-formatted query: equivalent to tokenizing
/// `format_query(instruction, query)` and encoding the result. An empty
/// instruction encodes the bare query.
pub fn encode_instructed(
    instruction: &str,
    query: &str,
    tokenizer: &Tokenizer,
    params: &EncoderParams,
) -> Result<Vec<f64>> {
    let text = format_query(instruction, query)?;
    encode(&tokenizer.tokenize(&text)?, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_tokenizer() -> Tokenizer {
        Tokenizer::from_corpus(["the cat sat", "a dog ran"], 512)
    }

    #[test]
    fn tokenize_known_unknown_truncation() {
        let tk = tiny_tokenizer();
        let seq = tk.tokenize("the cat").unwrap();
        assert_eq!(
            seq.ids,
            vec![tk.id_of("the").unwrap(), tk.id_of("cat").unwrap()]
        );

        let seq = tk.tokenize("zzzunknownzzz").unwrap();
        assert_eq!(seq.ids, vec![tk.unk_id]);

        let long = vec!["cat"; 600].join(" ");
        let seq = tk.tokenize(&long).unwrap();
        assert_eq!(seq.len(), 512);

        assert!(matches!(tk.tokenize("   "), Err(Error::Input(_))));
    }

    #[test]
    fn tokenize_lowercases_and_splits_punctuation() {
        let tk = tiny_tokenizer();
        let a = tk.tokenize("The,CAT!sat").unwrap();
        let b = tk.tokenize("the cat sat").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vocab_ids_dense_and_specials_distinct() {
        let tk = tiny_tokenizer();
        assert_ne!(tk.pad_id, tk.unk_id);
        let mut ids: Vec<usize> = tk.tokens().iter().map(|t| tk.id_of(t).unwrap()).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..tk.vocab_size()).collect::<Vec<_>>());
    }

    #[test]
    fn position_encoding_shape() {
        let row = position_encoding(3, 8);
        assert_eq!(row.len(), 8);
        assert!((row[1] - (3.0f64 / 1.0).cos()).abs() < 1e-12);
    }

    #[test]
    fn params_flatten_round_trip() {
        let mut rng = SeededRng::new(5);
        let cfg = EncoderConfig::new(8, 2, 2, MaskMode::Bidirectional);
        let params = EncoderParams::init(cfg, 11, &mut rng).unwrap();
        let flat = params.flatten();
        assert_eq!(flat.len(), params.len());
        let mut other = params.clone();
        for x in other.token_embeddings.data.iter_mut() {
            *x = 0.0;
        }
        other.assign_from_flat(&flat).unwrap();
        assert_eq!(other, params);
    }
}
