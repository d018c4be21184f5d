//! A compact transformer whose single weight stack is run in three masking
//! modes: unimodal encoding, cross encoding of a (code, text) pair, and
//! prefix-causal decoding of text conditioned on code.

mod checkpoint;
pub mod linalg;
mod params;
pub mod transformer;

use serde::{Deserialize, Serialize};

pub use self::checkpoint::{checkpoint_version, load_checkpoint, load_versioned_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use self::linalg::Matrix;
pub use self::params::{InitKind, LayerParams, Parameters};
pub use self::transformer::{AttentionMask, Forward, Projection};
use crate::tokenize::{TokenId, BOS, CLS, DEFAULT_VOCAB_SIZE, SEP};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub proj_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Contrastive temperature; also used for hard-negative sampling.
    pub temperature: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Small configuration that trains in seconds on a CPU.
    pub fn desk() -> Self {
        ModelConfig {
            num_layers: 2,
            hidden: 64,
            heads: 4,
            intermediate: 256,
            proj_dim: 32,
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_len: 128,
            temperature: 0.07,
            seed: 0,
        }
    }

    /// The 12-layer, 768-wide backbone shape (about 124M parameters).
    pub fn full() -> Self {
        ModelConfig {
            num_layers: 12,
            hidden: 768,
            heads: 12,
            intermediate: 3072,
            proj_dim: 256,
            vocab_size: 51_416,
            max_len: 1026,
            temperature: 0.07,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.num_layers == 0 || self.hidden == 0 || self.heads == 0 || self.intermediate == 0 || self.proj_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return fail(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_len < 8 {
            return fail(format!("max_len must be at least 8, got {}", self.max_len));
        }
        if self.vocab_size < crate::tokenize::NUM_SPECIALS {
            return fail(format!("vocab_size {} cannot hold the special tokens", self.vocab_size));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (h, i, v) = (self.hidden, self.intermediate, self.vocab_size);
        let per_layer = 4 * h + 4 * (h * h + h) + (h * i + i) + (i * h + h);
        v * h + self.max_len * h + self.num_layers * per_layer + 2 * h + (h * self.proj_dim + self.proj_dim) + (h + 1) + v
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("token id {id} is outside the model vocabulary of {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },
    #[error("malformed {mode:?} input: {reason}")]
    MalformedInput { mode: EncodeMode, reason: &'static str },
}

/// Bidirectional encoding modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    /// `[CLS] x [SEP]`
    Unimodal,
    /// `[CLS] code [SEP] text [SEP]`
    Cross,
}

/// Result of a bidirectional encoding.
#[derive(Debug, Clone)]
pub struct EncodedOutput {
    pub states: Matrix,
    /// Final state at the `[CLS]` position.
    pub pooled: Vec<f64>,
    /// Unit-norm projection-head output of `pooled`.
    pub projected: Vec<f64>,
}

/// Wrap `body` as `[CLS] body [SEP]`, truncating the body to fit.
pub fn unimodal_input(body: &[TokenId], max_len: usize) -> (Vec<TokenId>, bool) {
    let keep = body.len().min(max_len.saturating_sub(2));
    let mut out = Vec::with_capacity(keep + 2);
    out.push(CLS);
    out.extend_from_slice(&body[..keep]);
    out.push(SEP);
    (out, keep < body.len())
}

/// Split a budget between two segments, giving the shorter one its full
/// length when possible and never more than half to `second` otherwise.
fn split_budget(first: usize, second: usize, budget: usize) -> (usize, usize) {
    if first + second <= budget {
        return (first, second);
    }
    let second_keep = second.min(budget / 2).max(budget.saturating_sub(first));
    let second_keep = second_keep.min(second);
    let first_keep = (budget - second_keep).min(first);
    (first_keep, second_keep)
}

/// `[CLS] code [SEP] text [SEP]`, truncating both segments to fit `max_len`.
pub fn cross_input(code: &[TokenId], text: &[TokenId], max_len: usize) -> (Vec<TokenId>, bool) {
    let (ck, tk) = split_budget(code.len(), text.len(), max_len.saturating_sub(3));
    let mut out = Vec::with_capacity(ck + tk + 3);
    out.push(CLS);
    out.extend_from_slice(&code[..ck]);
    out.push(SEP);
    out.extend_from_slice(&text[..tk]);
    out.push(SEP);
    (out, ck < code.len() || tk < text.len())
}

/// Decoder input `[CLS] code [SEP] [BOS] text...` and the length of the
/// code prefix. The code segment is truncated so the text fits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderInput {
    pub tokens: Vec<TokenId>,
    pub prefix_len: usize,
    pub truncated: bool,
}

pub fn decoder_input(code: &[TokenId], text: &[TokenId], max_len: usize) -> DecoderInput {
    let (ck, tk) = split_budget(code.len(), text.len(), max_len.saturating_sub(3));
    let mut tokens = Vec::with_capacity(ck + tk + 3);
    tokens.push(CLS);
    tokens.extend_from_slice(&code[..ck]);
    tokens.push(SEP);
    let prefix_len = tokens.len();
    tokens.push(BOS);
    tokens.extend_from_slice(&text[..tk]);
    DecoderInput {
        tokens,
        prefix_len,
        truncated: ck < code.len() || tk < text.len(),
    }
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Parameters::init(&config);
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Model { config, params })
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if tokens.len() > self.config.max_len {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                max_len: self.config.max_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Run the stack with an explicit mask.
    pub fn forward(&self, tokens: &[TokenId], mask: AttentionMask) -> Result<Forward, ModelError> {
        self.check_tokens(tokens)?;
        Ok(transformer::forward(&self.params, self.config.heads, tokens, mask))
    }

    /// Bidirectional encoding. `PAD` positions are masked out as keys.
    pub fn encode(&self, tokens: &[TokenId], mode: EncodeMode) -> Result<EncodedOutput, ModelError> {
        self.encode_masked(tokens, mode, AttentionMask::padded(tokens))
    }

    /// Bidirectional encoding with an explicit key mask.
    pub fn encode_masked(&self, tokens: &[TokenId], mode: EncodeMode, mask: AttentionMask) -> Result<EncodedOutput, ModelError> {
        if tokens.first() != Some(&CLS) {
            return Err(ModelError::MalformedInput {
                mode,
                reason: "input must start with CLS",
            });
        }
        let seps = tokens.iter().filter(|&&t| t == SEP).count();
        let expected = match mode {
            EncodeMode::Unimodal => 1,
            EncodeMode::Cross => 2,
        };
        if seps < expected {
            return Err(ModelError::MalformedInput {
                mode,
                reason: "missing SEP separator",
            });
        }
        let fwd = self.forward(tokens, mask)?;
        let pooled = fwd.output.row(0).to_vec();
        let projected = transformer::project(&self.params, &pooled).unit;
        Ok(EncodedOutput {
            states: fwd.output,
            pooled,
            projected,
        })
    }

    /// Probability-space logit of the pair being inconsistent.
    pub fn bc_logit(&self, code: &[TokenId], text: &[TokenId]) -> Result<(f64, bool), ModelError> {
        let (tokens, truncated) = cross_input(code, text, self.config.max_len);
        let encoded = self.encode(&tokens, EncodeMode::Cross)?;
        Ok((transformer::bc_logit(&self.params, &encoded.pooled), truncated))
    }

    /// Next-token logits after `text_prefix`, conditioned on `code`.
    ///
    /// Text positions attend to all code positions and causally to earlier
    /// text; the stack is the same one used by [`Model::encode`].
    pub fn decode_step(&self, code: &[TokenId], text_prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        let len = code.len() + text_prefix.len() + 3;
        if len > self.config.max_len {
            return Err(ModelError::SequenceTooLong {
                len,
                max_len: self.config.max_len,
            });
        }
        self.next_token_logits(&decoder_input(code, text_prefix, self.config.max_len))
    }

    /// Vocabulary logits at the last position of a decoder input.
    pub fn next_token_logits(&self, input: &DecoderInput) -> Result<Vec<f64>, ModelError> {
        let fwd = self.forward(
            &input.tokens,
            AttentionMask::PrefixCausal {
                prefix_len: input.prefix_len,
            },
        )?;
        let last = Matrix::from_vec(1, fwd.output.cols, fwd.output.row(fwd.output.rows - 1).to_vec());
        Ok(transformer::lm_logits(&self.params, &last).data)
    }

    /// Logits at every text position (from `BOS` on) of a decoder input.
    pub fn decode_all(&self, input: &DecoderInput) -> Result<Matrix, ModelError> {
        let fwd = self.forward(
            &input.tokens,
            AttentionMask::PrefixCausal {
                prefix_len: input.prefix_len,
            },
        )?;
        let text_rows = fwd.output.rows - input.prefix_len;
        let mut states = Matrix::zeros(text_rows, fwd.output.cols);
        for r in 0..text_rows {
            states.row_mut(r).copy_from_slice(fwd.output.row(input.prefix_len + r));
        }
        Ok(transformer::lm_logits(&self.params, &states))
    }
}
