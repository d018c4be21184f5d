//! Joint multi-task training (contrastive, classification, generation) and
//! classification-only fine-tuning.

pub mod gradcheck;
mod losses;
mod optim;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::losses::{bc_loss, bc_loss_grad, ctc_loss, ctc_loss_grad, sigmoid, softplus, tg_loss, tg_loss_grad};
pub use self::optim::{warmup_lr, AdamW};
use crate::corpus::{mine_hard_negatives, CorpusError, HardNegative, Label, NegativeSide, PairExample};
use crate::model::transformer::{self, AttentionMask};
use crate::model::{
    cross_input, decoder_input, save_checkpoint, unimodal_input, Checkpoint, CheckpointError, Matrix, Model, ModelError,
    Parameters,
};
use crate::tokenize::{TokenId, Vocabulary, Wrap, EOS};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("batch of {0} is too small; at least 2 pairs are required")]
    BatchTooSmall(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("every target position is masked")]
    AllPositionsMasked,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite loss at step {}: {report:?}", report.step)]
    NonFiniteLoss { report: Box<LossReport> },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("pair {0} has no label; fine-tuning needs labeled pairs")]
    UnlabeledPair(String),
    #[error("training needs at least 2 consistent pairs, found {0}")]
    NotEnoughPositives(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training config: {0}")]
    ConfigFile(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub ctc: f64,
    pub bc: f64,
    pub tg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ctc: 1.0,
            bc: 1.0,
            tg: 1.0,
        }
    }
}

impl LossWeights {
    pub fn only_ctc() -> Self {
        LossWeights { ctc: 1.0, bc: 0.0, tg: 0.0 }
    }
    pub fn only_bc() -> Self {
        LossWeights { ctc: 0.0, bc: 1.0, tg: 0.0 }
    }
    pub fn only_tg() -> Self {
        LossWeights { ctc: 0.0, bc: 0.0, tg: 1.0 }
    }
}

/// Optimization settings. Loaded from TOML; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of all steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Add the generation loss (weighted by `loss_weights.tg`) on the
    /// consistent pairs during fine-tuning.
    pub finetune_with_tg: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 10,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            loss_weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            finetune_with_tg: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        TrainConfig::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::InvalidConfig(m));
        let w = &self.loss_weights;
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1]".into());
        }
        if [w.ctc, w.bc, w.tg].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return fail("loss weights must be non-negative".into());
        }
        if w.ctc == 0.0 && w.bc == 0.0 && w.tg == 0.0 {
            return fail("at least one loss weight must be positive".into());
        }
        Ok(())
    }
}

/// Losses of one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub epoch: usize,
    pub ctc: f64,
    pub bc: f64,
    pub tg: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.ctc, self.bc, self.tg, self.total].iter().all(|x| x.is_finite())
    }
}

/// Hooks called by the training loops.
pub trait TrainObserver {
    fn on_step(&mut self, _report: &LossReport) {}
    /// Called after each epoch (0-based); return `true` to stop training.
    fn on_epoch_end(&mut self, _epoch: usize, _model: &Model) -> bool {
        false
    }
}

impl TrainObserver for () {}

/// Token ids of one (code, comment) pair, without specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub code: Vec<TokenId>,
    pub text: Vec<TokenId>,
}

impl EncodedPair {
    pub fn new(vocab: &Vocabulary, code: &str, comment: &str) -> Self {
        EncodedPair {
            code: vocab.encode(code, Wrap::None),
            text: vocab.encode(comment, Wrap::None),
        }
    }
}

/// One step's inputs: matched pairs for all objectives plus extra labeled
/// pairs (label `true` = inconsistent) that only enter the classifier loss.
#[derive(Debug, Clone, Default)]
pub struct JointBatch {
    pub pairs: Vec<EncodedPair>,
    pub bc_extra: Vec<(EncodedPair, bool)>,
}

/// Where classifier negatives come from.
#[derive(Debug, Clone, Copy)]
pub enum Negatives<'a> {
    /// Sample from the current contrastive similarities with this seed.
    Mine { seed: u64 },
    Fixed(&'a [HardNegative]),
}

/// Unweighted objective values of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub ctc: f64,
    pub bc: f64,
    pub tg: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.ctc * self.ctc + w.bc * self.bc + w.tg * self.tg
    }
}

fn backprop_pooled(model: &Model, fwd: &transformer::Forward, d_pooled: &[f64], grads: &mut Parameters) {
    let mut d_out = Matrix::zeros(fwd.output.rows, fwd.output.cols);
    d_out.row_mut(0).copy_from_slice(d_pooled);
    transformer::backward(&model.params, model.config.heads, fwd, &d_out, grads);
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Classifier examples of a batch: positives, negatives, then extras.
fn bc_examples(batch: &JointBatch, negatives: &[HardNegative]) -> Vec<(usize, usize, Option<usize>, bool)> {
    // (code source, text source, extra index, inconsistent)
    let mut out: Vec<(usize, usize, Option<usize>, bool)> = (0..batch.pairs.len()).map(|i| (i, i, None, false)).collect();
    for neg in negatives {
        match neg.side {
            NegativeSide::Text => out.push((neg.anchor, neg.negative, None, true)),
            NegativeSide::Code => out.push((neg.negative, neg.anchor, None, true)),
        }
    }
    for (k, (_, y)) in batch.bc_extra.iter().enumerate() {
        out.push((0, 0, Some(k), *y));
    }
    out
}

/// Evaluate the joint objective on one batch; with `grads`, accumulate the
/// gradient of the weighted total into it. Zero-weighted parts are still
/// evaluated but not differentiated.
///
/// Returns the parts and the negatives used.
pub fn joint_loss(
    model: &Model,
    batch: &JointBatch,
    negatives: Negatives<'_>,
    weights: &LossWeights,
    mut grads: Option<&mut Parameters>,
) -> Result<(LossParts, Vec<HardNegative>), TrainError> {
    let n = batch.pairs.len();
    if n < 2 {
        return Err(TrainError::BatchTooSmall(n));
    }
    let cfg = &model.config;
    let params = &model.params;

    // Unimodal encodings for the contrastive loss and for mining.
    let mut code_side = Vec::with_capacity(n);
    let mut text_side = Vec::with_capacity(n);
    for pair in &batch.pairs {
        for (body, side) in [(&pair.code, &mut code_side), (&pair.text, &mut text_side)] {
            let (tokens, _) = unimodal_input(body, cfg.max_len);
            let fwd = model.forward(&tokens, AttentionMask::padded(&tokens))?;
            let proj = transformer::project(params, fwd.output.row(0));
            side.push((fwd, proj));
        }
    }
    let u: Vec<Vec<f64>> = code_side.iter().map(|(_, p)| p.unit.clone()).collect();
    let v: Vec<Vec<f64>> = text_side.iter().map(|(_, p)| p.unit.clone()).collect();
    let (ctc, du, dv) = ctc_loss_grad(&u, &v, cfg.temperature)?;
    if let Some(g) = grads.as_deref_mut().filter(|_| weights.ctc != 0.0) {
        for (side, d) in [(&code_side, &du), (&text_side, &dv)] {
            for ((fwd, proj), d_unit) in side.iter().zip(d) {
                let pooled = fwd.output.row(0);
                let d_pooled = transformer::project_backward(params, pooled, proj, &scaled(d_unit, weights.ctc), g);
                backprop_pooled(model, fwd, &d_pooled, g);
            }
        }
    }
    drop(code_side);
    drop(text_side);

    let negatives = match negatives {
        Negatives::Mine { seed } => mine_hard_negatives(&u, &v, cfg.temperature, seed)?,
        Negatives::Fixed(list) => list.to_vec(),
    };

    // Cross-encoded classifier examples, each differentiated immediately.
    let examples = bc_examples(batch, &negatives);
    let m = examples.len() as f64;
    let mut bc = 0.0;
    for &(ci, ti, extra, y) in &examples {
        let (code, text) = match extra {
            Some(k) => (&batch.bc_extra[k].0.code, &batch.bc_extra[k].0.text),
            None => (&batch.pairs[ci].code, &batch.pairs[ti].text),
        };
        let (tokens, _) = cross_input(code, text, cfg.max_len);
        let fwd = model.forward(&tokens, AttentionMask::padded(&tokens))?;
        let pooled = fwd.output.row(0);
        let z = transformer::bc_logit(params, pooled);
        let target = if y { 1.0 } else { 0.0 };
        bc += softplus(z) - target * z;
        if let Some(g) = grads.as_deref_mut().filter(|_| weights.bc != 0.0) {
            let d_z = weights.bc * (sigmoid(z) - target) / m;
            let d_pooled = transformer::bc_backward(params, pooled, d_z, g);
            backprop_pooled(model, &fwd, &d_pooled, g);
        }
    }
    bc /= m;

    let tg = generation_loss(model, batch.pairs.iter(), weights.tg, grads)?;

    Ok((LossParts { ctc, bc, tg }, negatives))
}

/// Teacher-forced decoder input and next-token targets for one pair.
fn generation_example(pair: &EncodedPair, max_len: usize) -> (crate::model::DecoderInput, Vec<TokenId>) {
    let input = decoder_input(&pair.code, &pair.text, max_len);
    let kept = input.tokens.len() - input.prefix_len - 1;
    let mut targets = pair.text[..kept].to_vec();
    targets.push(pair.text.get(kept).copied().unwrap_or(EOS));
    (input, targets)
}

/// Token-mean generation loss over `pairs`, accumulating `weight` times its
/// gradient when `grads` is given and `weight` is non-zero.
fn generation_loss<'a>(
    model: &Model,
    pairs: impl Iterator<Item = &'a EncodedPair> + Clone,
    weight: f64,
    mut grads: Option<&mut Parameters>,
) -> Result<f64, TrainError> {
    let examples: Vec<_> = pairs.map(|p| generation_example(p, model.config.max_len)).collect();
    let count: usize = examples.iter().map(|(_, t)| t.len()).sum();
    if count == 0 {
        return Err(TrainError::AllPositionsMasked);
    }
    let params = &model.params;
    let mut sum = 0.0;
    for (input, targets) in &examples {
        let fwd = model.forward(
            &input.tokens,
            AttentionMask::PrefixCausal {
                prefix_len: input.prefix_len,
            },
        )?;
        let rows = targets.len();
        let mut states = Matrix::zeros(rows, fwd.output.cols);
        for r in 0..rows {
            states.row_mut(r).copy_from_slice(fwd.output.row(input.prefix_len + r));
        }
        let logits = transformer::lm_logits(params, &states);
        let mask = vec![true; rows];
        let want = grads.is_some() && weight != 0.0;
        let (s, _, d_logits) = losses::tg_loss_sum(&logits, targets, &mask, want)?;
        sum += s;
        if let (Some(g), Some(mut d_logits)) = (grads.as_deref_mut(), d_logits) {
            let scale = weight / count as f64;
            d_logits.data.iter_mut().for_each(|x| *x *= scale);
            let d_states = transformer::lm_backward(params, &states, &d_logits, g);
            let mut d_out = Matrix::zeros(fwd.output.rows, fwd.output.cols);
            for r in 0..rows {
                d_out.row_mut(input.prefix_len + r).copy_from_slice(d_states.row(r));
            }
            transformer::backward(params, model.config.heads, &fwd, &d_out, g);
        }
    }
    Ok(sum / count as f64)
}

/// Classifier loss on explicitly labeled pairs (`true` = inconsistent).
pub fn labeled_bc_loss(model: &Model, pairs: &[(EncodedPair, bool)], mut grads: Option<&mut Parameters>) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let m = pairs.len() as f64;
    let mut loss = 0.0;
    for (pair, y) in pairs {
        let (tokens, _) = cross_input(&pair.code, &pair.text, model.config.max_len);
        let fwd = model.forward(&tokens, AttentionMask::padded(&tokens))?;
        let pooled = fwd.output.row(0);
        let z = transformer::bc_logit(&model.params, pooled);
        let target = if *y { 1.0 } else { 0.0 };
        loss += softplus(z) - target * z;
        if let Some(g) = grads.as_deref_mut() {
            let d_pooled = transformer::bc_backward(&model.params, pooled, (sigmoid(z) - target) / m, g);
            backprop_pooled(model, &fwd, &d_pooled, g);
        }
    }
    Ok(loss / m)
}

/// SplitMix64 finalizer; decorrelates `(seed, step)` into one stream key.
fn mix(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Chunks of at most `size`; a trailing chunk smaller than `min` joins the
/// previous one.
fn chunk(order: &[usize], size: usize, min: usize) -> Vec<Vec<usize>> {
    let mut chunks: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().map_or(false, |c| c.len() < min) {
        let last = chunks.pop().expect("non-empty");
        chunks.last_mut().expect("non-empty").extend(last);
    }
    chunks
}

struct Stepper<'a> {
    cfg: &'a TrainConfig,
    opt: AdamW,
    total_steps: usize,
    warmup: usize,
    step: usize,
    reports: Vec<LossReport>,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a TrainConfig, params: &Parameters, steps_per_epoch: usize) -> Self {
        let total_steps = steps_per_epoch * cfg.epochs;
        Stepper {
            cfg,
            opt: AdamW::new(params, cfg.weight_decay),
            total_steps,
            warmup: (cfg.warmup_fraction * total_steps as f64).ceil() as usize,
            step: 0,
            reports: Vec::with_capacity(total_steps),
        }
    }

    fn apply(
        &mut self,
        model: &mut Model,
        grads: &Parameters,
        report: LossReport,
        observer: &mut dyn TrainObserver,
    ) -> Result<(), TrainError> {
        if !report.is_finite() || !grads.is_finite() {
            return Err(TrainError::NonFiniteLoss { report: Box::new(report) });
        }
        let lr = warmup_lr(self.cfg.learning_rate, self.step, self.warmup);
        self.opt.step(&mut model.params, grads, lr);
        observer.on_step(&report);
        self.reports.push(report);
        self.step += 1;
        Ok(())
    }

    fn end_epoch(
        &self,
        epoch: usize,
        model: &Model,
        vocab: &Vocabulary,
        observer: &mut dyn TrainObserver,
    ) -> Result<bool, TrainError> {
        if let Some(dir) = self.cfg.checkpoint_dir.as_ref().filter(|_| self.cfg.checkpoint_every > 0) {
            if (epoch + 1) % self.cfg.checkpoint_every == 0 {
                let ckpt = Checkpoint {
                    model: model.clone(),
                    vocab: vocab.clone(),
                };
                save_checkpoint(&dir.join(format!("epoch-{:04}.ckpt", epoch + 1)), &ckpt)?;
            }
        }
        Ok(observer.on_epoch_end(epoch, model))
    }
}

/// Joint pre-training on (comment, method) pairs.
///
/// Consistent and unlabeled pairs are positives for all three objectives;
/// inconsistent pairs enter only the classifier loss. Classifier negatives
/// are mined per step. Updates `model` in place and returns one report per
/// step.
pub fn train_joint(
    model: &mut Model,
    vocab: &Vocabulary,
    pairs: &[PairExample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<LossReport>, TrainError> {
    cfg.validate()?;
    let encoded: Vec<EncodedPair> = pairs.iter().map(|p| EncodedPair::new(vocab, &p.method, &p.comment)).collect();
    let positives: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].label != Label::Inconsistent).collect();
    let extras: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].label == Label::Inconsistent).collect();
    if positives.len() < 2 {
        return Err(TrainError::NotEnoughPositives(positives.len()));
    }
    let steps_per_epoch = chunk(&positives, cfg.batch_size, 2).len();
    let mut stepper = Stepper::new(cfg, &model.params, steps_per_epoch);
    let mut grads = model.params.clone();

    for epoch in 0..cfg.epochs {
        let pos_order: Vec<usize> = epoch_order(positives.len(), cfg.seed, epoch).into_iter().map(|k| positives[k]).collect();
        let extra_order: Vec<usize> = epoch_order(extras.len(), cfg.seed ^ 0x5eed, epoch).into_iter().map(|k| extras[k]).collect();
        let chunks = chunk(&pos_order, cfg.batch_size, 2);
        for (c, members) in chunks.iter().enumerate() {
            let batch = JointBatch {
                pairs: members.iter().map(|&i| encoded[i].clone()).collect(),
                bc_extra: extra_order
                    .iter()
                    .skip(c)
                    .step_by(chunks.len())
                    .map(|&i| (encoded[i].clone(), true))
                    .collect(),
            };
            grads.zero_();
            let seed = mix(cfg.seed, stepper.step as u64);
            let (parts, _) = joint_loss(model, &batch, Negatives::Mine { seed }, &cfg.loss_weights, Some(&mut grads))?;
            let report = LossReport {
                step: stepper.step,
                epoch,
                ctc: parts.ctc,
                bc: parts.bc,
                tg: parts.tg,
                total: parts.total(&cfg.loss_weights),
            };
            stepper.apply(model, &grads, report, observer)?;
        }
        if stepper.end_epoch(epoch, model, vocab, observer)? {
            break;
        }
    }
    debug_assert!(stepper.reports.len() <= stepper.total_steps);
    Ok(stepper.reports)
}

/// Classifier fine-tuning on dataset labels, without mining.
///
/// The reported total equals the classifier loss unless
/// `cfg.finetune_with_tg` adds the weighted generation loss.
pub fn finetune_iccd(
    model: &mut Model,
    vocab: &Vocabulary,
    pairs: &[PairExample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<LossReport>, TrainError> {
    cfg.validate()?;
    if let Some(p) = pairs.iter().find(|p| p.label == Label::Unlabeled) {
        return Err(TrainError::UnlabeledPair(p.id.clone()));
    }
    if pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let labeled: Vec<(EncodedPair, bool)> = pairs
        .iter()
        .map(|p| (EncodedPair::new(vocab, &p.method, &p.comment), p.label == Label::Inconsistent))
        .collect();
    let all: Vec<usize> = (0..pairs.len()).collect();
    let steps_per_epoch = chunk(&all, cfg.batch_size, 1).len();
    let mut stepper = Stepper::new(cfg, &model.params, steps_per_epoch);
    let mut grads = model.params.clone();
    let tg_weight = if cfg.finetune_with_tg { cfg.loss_weights.tg } else { 0.0 };

    for epoch in 0..cfg.epochs {
        let order = epoch_order(pairs.len(), cfg.seed, epoch);
        for members in chunk(&order, cfg.batch_size, 1) {
            let batch: Vec<(EncodedPair, bool)> = members.iter().map(|&i| labeled[i].clone()).collect();
            grads.zero_();
            let bc = labeled_bc_loss(model, &batch, Some(&mut grads))?;
            let consistent: Vec<&EncodedPair> = batch.iter().filter(|(_, y)| !*y).map(|(p, _)| p).collect();
            let tg = if tg_weight > 0.0 && !consistent.is_empty() {
                generation_loss(model, consistent.iter().copied(), tg_weight, Some(&mut grads))?
            } else {
                0.0
            };
            let report = LossReport {
                step: stepper.step,
                epoch,
                ctc: 0.0,
                bc,
                tg,
                total: bc + tg_weight * tg,
            };
            stepper.apply(model, &grads, report, observer)?;
        }
        if stepper.end_epoch(epoch, model, vocab, observer)? {
            break;
        }
    }
    Ok(stepper.reports)
}

/// Write reports as JSON Lines.
pub fn write_loss_log<W: std::io::Write>(out: W, reports: &[LossReport]) -> std::io::Result<()> {
    crate::corpus::write_jsonl(out, reports)
}
