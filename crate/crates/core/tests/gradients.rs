use std::time::Instant;

use doccheck_core::corpus::{HardNegative, NegativeSide};
use doccheck_core::model::{Model, ModelConfig};
use doccheck_core::tokenize::Vocabulary;
use doccheck_core::train::gradcheck::{check_gradients, ProbePlan};
use doccheck_core::train::{joint_loss, EncodedPair, JointBatch, LossWeights, Negatives};

const TOLERANCE: f64 = 1e-4;

fn setup() -> (Model, JointBatch, Vec<HardNegative>) {
    let model = Model::new(ModelConfig {
        vocab_size: 1024,
        seed: 3,
        ..ModelConfig::desk()
    })
    .unwrap();
    let vocab = Vocabulary::base();
    let batch = JointBatch {
        pairs: vec![
            EncodedPair::new(&vocab, "def add(a, b): return a + b", "Add two numbers."),
            EncodedPair::new(&vocab, "def neg(x): return -x", "Negate x."),
            EncodedPair::new(&vocab, "def one(): return 1", "Return one."),
        ],
        bc_extra: vec![(EncodedPair::new(&vocab, "def two(): return 2", "Return one."), true)],
    };
    let negatives = vec![
        HardNegative { anchor: 0, negative: 2, side: NegativeSide::Text },
        HardNegative { anchor: 1, negative: 0, side: NegativeSide::Code },
    ];
    (model, batch, negatives)
}

fn check(weights: LossWeights, label: &str) {
    let (model, batch, negatives) = setup();
    let mut grads = model.params.clone();
    grads.zero_();
    joint_loss(&model, &batch, Negatives::Fixed(&negatives), &weights, Some(&mut grads)).unwrap();
    let start = Instant::now();
    let checks = check_gradients(&model, &grads, &ProbePlan::default(), |m| {
        let (parts, _) = joint_loss(m, &batch, Negatives::Fixed(&negatives), &weights, None).unwrap();
        parts.total(&weights)
    });
    let worst = checks.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error)).unwrap();
    eprintln!("{label}: {} entries, worst {:?} in {:?}", checks.len(), worst, start.elapsed());
    assert!(worst.relative_error < TOLERANCE, "{label}: {worst:?}");
}

#[test]
fn contrastive_gradient() {
    check(LossWeights::only_ctc(), "ctc");
}

#[test]
fn classifier_gradient() {
    check(LossWeights::only_bc(), "bc");
}

#[test]
fn generation_gradient() {
    check(LossWeights::only_tg(), "tg");
}

#[test]
fn weighted_sum_gradient() {
    check(LossWeights { ctc: 0.7, bc: 1.3, tg: 0.4 }, "sum");
}
