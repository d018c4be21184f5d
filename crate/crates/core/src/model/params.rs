use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::linalg::Matrix;
use super::ModelConfig;

const INIT_STD: f64 = 0.02;

/// Weights of one pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w_q: Matrix,
    pub b_q: Matrix,
    pub w_k: Matrix,
    pub b_k: Matrix,
    pub w_v: Matrix,
    pub b_v: Matrix,
    pub w_o: Matrix,
    pub b_o: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
}

/// The full learned weight set.
///
/// One transformer stack serves every masking mode; the projection,
/// classification and language-model heads are separate. The language-model
/// head reuses `token_embedding` as its weight and only owns a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<LayerParams>,
    pub final_ln_gain: Matrix,
    pub final_ln_bias: Matrix,
    pub proj_w: Matrix,
    pub proj_b: Matrix,
    pub bc_w: Matrix,
    pub bc_b: Matrix,
    pub lm_bias: Matrix,
}

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Normal,
    Zeros,
    Ones,
}

impl LayerParams {
    fn shaped(hidden: usize, intermediate: usize) -> Self {
        let vec = |n| Matrix::zeros(1, n);
        LayerParams {
            ln1_gain: vec(hidden),
            ln1_bias: vec(hidden),
            w_q: Matrix::zeros(hidden, hidden),
            b_q: vec(hidden),
            w_k: Matrix::zeros(hidden, hidden),
            b_k: vec(hidden),
            w_v: Matrix::zeros(hidden, hidden),
            b_v: vec(hidden),
            w_o: Matrix::zeros(hidden, hidden),
            b_o: vec(hidden),
            ln2_gain: vec(hidden),
            ln2_bias: vec(hidden),
            w_ff1: Matrix::zeros(hidden, intermediate),
            b_ff1: vec(intermediate),
            w_ff2: Matrix::zeros(intermediate, hidden),
            b_ff2: vec(hidden),
        }
    }

    fn tensors(&self) -> [(&'static str, InitKind, &Matrix); 16] {
        use InitKind::*;
        [
            ("ln1.gain", Ones, &self.ln1_gain),
            ("ln1.bias", Zeros, &self.ln1_bias),
            ("attn.w_q", Normal, &self.w_q),
            ("attn.b_q", Zeros, &self.b_q),
            ("attn.w_k", Normal, &self.w_k),
            ("attn.b_k", Zeros, &self.b_k),
            ("attn.w_v", Normal, &self.w_v),
            ("attn.b_v", Zeros, &self.b_v),
            ("attn.w_o", Normal, &self.w_o),
            ("attn.b_o", Zeros, &self.b_o),
            ("ln2.gain", Ones, &self.ln2_gain),
            ("ln2.bias", Zeros, &self.ln2_bias),
            ("ff.w_in", Normal, &self.w_ff1),
            ("ff.b_in", Zeros, &self.b_ff1),
            ("ff.w_out", Normal, &self.w_ff2),
            ("ff.b_out", Zeros, &self.b_ff2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
        ]
    }
}

impl Parameters {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden;
        Parameters {
            token_embedding: Matrix::zeros(config.vocab_size, h),
            position_embedding: Matrix::zeros(config.max_len, h),
            layers: (0..config.num_layers)
                .map(|_| LayerParams::shaped(h, config.intermediate))
                .collect(),
            final_ln_gain: Matrix::zeros(1, h),
            final_ln_bias: Matrix::zeros(1, h),
            proj_w: Matrix::zeros(h, config.proj_dim),
            proj_b: Matrix::zeros(1, config.proj_dim),
            bc_w: Matrix::zeros(1, h),
            bc_b: Matrix::zeros(1, 1),
            lm_bias: Matrix::zeros(1, config.vocab_size),
        }
    }

    /// Normal(0, 0.02) weights, zero biases and offsets, unit norm gains;
    /// fully determined by `config.seed`.
    pub fn init(config: &ModelConfig) -> Self {
        let mut params = Parameters::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let kinds: Vec<InitKind> = params.named_tensors().iter().map(|(_, k, _)| *k).collect();
        for (kind, tensor) in kinds.into_iter().zip(params.tensors_mut()) {
            match kind {
                InitKind::Normal => tensor.data.iter_mut().for_each(|x| *x = normal.sample(&mut rng)),
                InitKind::Zeros => tensor.fill(0.0),
                InitKind::Ones => tensor.fill(1.0),
            }
        }
        params
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, InitKind, &Matrix)> {
        use InitKind::*;
        let mut out: Vec<(String, InitKind, &Matrix)> = vec![
            ("embed.token".into(), Normal, &self.token_embedding),
            ("embed.position".into(), Normal, &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, kind, t) in layer.tensors() {
                out.push((format!("layer{i}.{name}"), kind, t));
            }
        }
        out.extend([
            ("final_ln.gain".to_string(), Ones, &self.final_ln_gain),
            ("final_ln.bias".to_string(), Zeros, &self.final_ln_bias),
            ("head.proj.w".to_string(), Normal, &self.proj_w),
            ("head.proj.b".to_string(), Zeros, &self.proj_b),
            ("head.bc.w".to_string(), Normal, &self.bc_w),
            ("head.bc.b".to_string(), Zeros, &self.bc_b),
            ("head.lm.bias".to_string(), Zeros, &self.lm_bias),
        ]);
        out
    }

    /// Mutable tensors in the same order as [`Parameters::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.token_embedding, &mut self.position_embedding];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend([
            &mut self.final_ln_gain,
            &mut self.final_ln_bias,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.bc_w,
            &mut self.bc_b,
            &mut self.lm_bias,
        ]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, _, t)| t.is_finite())
    }

    pub fn zero_(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let others: Vec<&Matrix> = other.named_tensors().into_iter().map(|(_, _, t)| t).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(others) {
            for (a, b) in dst.data.iter_mut().zip(&src.data) {
                *a += scale * b;
            }
        }
    }

    /// Transformer blocks used by every masking mode.
    pub fn stack(&self) -> &[LayerParams] {
        &self.layers
    }
}
