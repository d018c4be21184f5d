//! Classification metrics, smoothed BLEU-4 and lexical baselines.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, PairExample};
use crate::LanguageId;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no examples to evaluate")]
    EmptyInput,
    #[error("reference is empty")]
    EmptyReference,
    #[error("training data must contain both consistent and inconsistent pairs")]
    SingleClassTrain,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub bleu4: Option<f64>,
    pub per_language: BTreeMap<LanguageId, f64>,
}

/// Confusion counts and derived scores with respect to `positive`.
pub fn classification_metrics(preds: &[Label], labels: &[Label], positive: Label) -> Result<MetricsReport, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut r = MetricsReport::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == positive, l == positive) {
            (true, true) => r.tp += 1,
            (true, false) => r.fp += 1,
            (false, true) => r.fn_ += 1,
            (false, false) => r.tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    r.precision = ratio(r.tp, r.tp + r.fp);
    r.recall = ratio(r.tp, r.tp + r.fn_);
    // Harmonic mean of precision and recall as one rounded division.
    r.f1 = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn_);
    r.accuracy = ratio(r.tp + r.tn, preds.len());
    Ok(r)
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 in [0, 100] with add-one smoothing of the 2- to 4-gram
/// precisions and the brevity penalty `exp(1 - r/c)` for `c < r`.
pub fn smoothed_bleu4(candidate: &[&str], reference: &[&str]) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let matched: usize = cand.iter().map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0))).sum();
        let total = candidate.len().saturating_sub(n - 1);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(100.0 * bp * log_sum.exp())
}

/// Whitespace tokenization then [`smoothed_bleu4`].
pub fn sentence_bleu(candidate: &str, reference: &str) -> Result<f64, EvalError> {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    smoothed_bleu4(&c, &r)
}

/// Mean sentence BLEU per language; `bleu4` is the unweighted mean of the
/// per-language means.
pub fn corpus_bleu(items: &[(String, String, LanguageId)]) -> Result<MetricsReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut groups: BTreeMap<LanguageId, Vec<f64>> = BTreeMap::new();
    for (cand, reference, lang) in items {
        groups.entry(*lang).or_default().push(sentence_bleu(cand, reference)?);
    }
    let per_language: BTreeMap<LanguageId, f64> = groups
        .into_iter()
        .map(|(l, s)| (l, s.iter().sum::<f64>() / s.len() as f64))
        .collect();
    let overall = per_language.values().sum::<f64>() / per_language.len() as f64;
    Ok(MetricsReport {
        bleu4: Some(overall),
        per_language,
        ..MetricsReport::default()
    })
}

/// Lowercased alphanumeric runs; whitespace, punctuation and `_` separate.
pub fn lexical_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sparse vector as sorted `(term index, weight)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

/// Log-scaled term frequency and smoothed inverse document frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVectorizer {
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    docs: usize,
}

impl TfidfVectorizer {
    pub fn fit<'a>(documents: impl IntoIterator<Item = &'a str>) -> Self {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut doc_freq = Vec::new();
        let mut docs = 0;
        for doc in documents {
            docs += 1;
            let mut terms = lexical_terms(doc);
            terms.sort();
            terms.dedup();
            for t in terms {
                let next = index.len();
                let id = *index.entry(t).or_insert(next);
                if id == doc_freq.len() {
                    doc_freq.push(0);
                }
                doc_freq[id] += 1;
            }
        }
        TfidfVectorizer { index, doc_freq, docs }
    }

    /// `ln((1 + n) / (1 + df)) + 1`; unseen terms have `df = 0`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.index.get(term).map_or(0, |&i| self.doc_freq[i]);
        ((1.0 + self.docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// Unit-length TF-IDF vector. Unseen terms get indices past the fitted
    /// vocabulary, in first-occurrence order, so two texts transformed
    /// together share them via `extra`.
    fn transform_with(&self, text: &str, extra: &mut HashMap<String, usize>) -> SparseVec {
        let mut counts: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for term in lexical_terms(text) {
            let id = match self.index.get(&term) {
                Some(&i) => i,
                None => {
                    let next = self.index.len() + extra.len();
                    *extra.entry(term.clone()).or_insert(next)
                }
            };
            let idf = self.idf(&term);
            counts.entry(id).or_insert((0, idf)).0 += 1;
        }
        let mut v: SparseVec = counts
            .into_iter()
            .map(|(id, (c, idf))| (id, (1.0 + (c as f64).ln()) * idf))
            .collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        v
    }

    pub fn transform(&self, text: &str) -> SparseVec {
        self.transform_with(text, &mut HashMap::new())
    }

    pub fn dimension(&self) -> usize {
        self.index.len()
    }

    /// Cosine similarity of two texts.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let mut extra = HashMap::new();
        let va = self.transform_with(a, &mut extra);
        let vb = self.transform_with(b, &mut extra);
        sparse_dot(&va, &vb)
    }
}

pub fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut sum) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

fn labeled(pairs: &[PairExample]) -> Vec<&PairExample> {
    pairs.iter().filter(|p| p.label != Label::Unlabeled).collect()
}

fn require_both_labels(train: &[&PairExample]) -> Result<(), EvalError> {
    let has = |l: Label| train.iter().any(|p| p.label == l);
    if has(Label::Consistent) && has(Label::Inconsistent) {
        Ok(())
    } else {
        Err(EvalError::SingleClassTrain)
    }
}

fn fit_on_pairs(train: &[&PairExample]) -> TfidfVectorizer {
    TfidfVectorizer::fit(train.iter().flat_map(|p| [p.comment.as_str(), p.method.as_str()]))
}

/// Comment/code cosine-similarity classifier: inconsistent iff the score is
/// below a threshold chosen to maximize train F1.
#[derive(Debug, Clone)]
pub struct SimilarityBaseline {
    pub vectorizer: TfidfVectorizer,
    pub threshold: f64,
}

impl SimilarityBaseline {
    pub fn fit(train: &[PairExample]) -> Result<Self, EvalError> {
        let train = labeled(train);
        require_both_labels(&train)?;
        let vectorizer = fit_on_pairs(&train);
        let scored: Vec<(f64, Label)> = train
            .iter()
            .map(|p| (vectorizer.similarity(&p.comment, &p.method), p.label))
            .collect();
        let mut distinct: Vec<f64> = scored.iter().map(|s| s.0).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        // Flag nothing, every midpoint, then flag everything.
        let mut candidates = vec![distinct[0]];
        candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        candidates.push(distinct[distinct.len() - 1] + 1.0);
        let labels: Vec<Label> = scored.iter().map(|s| s.1).collect();
        let mut best = (f64::NEG_INFINITY, candidates[0]);
        for &t in &candidates {
            let preds: Vec<Label> = scored.iter().map(|s| predict_below(s.0, t)).collect();
            let f1 = classification_metrics(&preds, &labels, Label::Inconsistent)?.f1;
            // Candidates ascend, so strict improvement keeps the lowest tie.
            if f1 > best.0 {
                best = (f1, t);
            }
        }
        Ok(SimilarityBaseline {
            vectorizer,
            threshold: best.1,
        })
    }

    pub fn score(&self, pair: &PairExample) -> f64 {
        self.vectorizer.similarity(&pair.comment, &pair.method)
    }

    pub fn predict(&self, pair: &PairExample) -> Label {
        predict_below(self.score(pair), self.threshold)
    }
}

fn predict_below(score: f64, threshold: f64) -> Label {
    if score < threshold {
        Label::Inconsistent
    } else {
        Label::Consistent
    }
}

fn evaluate(test: &[PairExample], predict: impl Fn(&PairExample) -> Label) -> Result<MetricsReport, EvalError> {
    let test = labeled(test);
    let preds: Vec<Label> = test.iter().map(|p| predict(p)).collect();
    let labels: Vec<Label> = test.iter().map(|p| p.label).collect();
    classification_metrics(&preds, &labels, Label::Inconsistent)
}

/// Fit the similarity baseline on `train` and score it on `test`.
pub fn tfidf_similarity_baseline(train: &[PairExample], test: &[PairExample]) -> Result<(f64, MetricsReport), EvalError> {
    let model = SimilarityBaseline::fit(train)?;
    let report = evaluate(test, |p| model.predict(p))?;
    Ok((model.threshold, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-4,
            epochs: 50,
            seed: 0,
        }
    }
}

/// Linear max-margin classifier over `[tfidf(comment), tfidf(code), 1]`,
/// trained by hinge-loss subgradient steps with a `1 / (lambda t)` rate.
#[derive(Debug, Clone)]
pub struct SvmBaseline {
    pub vectorizer: TfidfVectorizer,
    pub weights: Vec<f64>,
}

impl SvmBaseline {
    fn features(&self, pair: &PairExample) -> SparseVec {
        svm_features(&self.vectorizer, pair)
    }

    pub fn fit(train: &[PairExample], cfg: &SvmConfig) -> Result<Self, EvalError> {
        let train = labeled(train);
        require_both_labels(&train)?;
        let vectorizer = fit_on_pairs(&train);
        let dim = 2 * vectorizer.dimension() + 1;
        let data: Vec<(SparseVec, f64)> = train
            .iter()
            .map(|p| (svm_features(&vectorizer, p), if p.label == Label::Inconsistent { 1.0 } else { -1.0 }))
            .collect();
        let mut w = vec![0.0; dim];
        // w = scale * raw keeps each shrink step O(1).
        let mut scale = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut t = 0usize;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (cfg.lambda * t as f64);
                let (x, y) = &data[i];
                let margin = y * scale * x.iter().map(|(j, v)| w[*j] * v).sum::<f64>();
                let shrink = 1.0 - eta * cfg.lambda;
                if shrink <= 0.0 {
                    w.iter_mut().for_each(|v| *v = 0.0);
                    scale = 1.0;
                } else {
                    scale *= shrink;
                    if scale < 1e-9 {
                        w.iter_mut().for_each(|v| *v *= scale);
                        scale = 1.0;
                    }
                }
                if margin < 1.0 {
                    for (j, v) in x {
                        w[*j] += eta * y * v / scale;
                    }
                }
            }
        }
        w.iter_mut().for_each(|v| *v *= scale);
        Ok(SvmBaseline { vectorizer, weights: w })
    }

    pub fn decision(&self, pair: &PairExample) -> f64 {
        self.features(pair)
            .iter()
            .filter(|(j, _)| *j < self.weights.len())
            .map(|(j, v)| self.weights[*j] * v)
            .sum()
    }

    pub fn predict(&self, pair: &PairExample) -> Label {
        if self.decision(pair) > 0.0 {
            Label::Inconsistent
        } else {
            Label::Consistent
        }
    }
}

fn svm_features(vectorizer: &TfidfVectorizer, pair: &PairExample) -> SparseVec {
    let d = vectorizer.dimension();
    let mut x: SparseVec = vectorizer.transform(&pair.comment).into_iter().filter(|(j, _)| *j < d).collect();
    x.extend(vectorizer.transform(&pair.method).into_iter().filter(|(j, _)| *j < d).map(|(j, v)| (j + d, v)));
    x.push((2 * d, 1.0));
    x
}

pub fn svm_baseline(train: &[PairExample], test: &[PairExample], cfg: &SvmConfig) -> Result<MetricsReport, EvalError> {
    let model = SvmBaseline::fit(train, cfg)?;
    evaluate(test, |p| model.predict(p))
}

/// One line of a per-example evaluation dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub label: Label,
    pub prediction: Label,
    pub confidence: f64,
    pub bleu4: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use proptest::prelude::*;

    fn labels(s: &str) -> Vec<Label> {
        s.chars()
            .map(|c| if c == 'I' { Label::Inconsistent } else { Label::Consistent })
            .collect()
    }

    #[test]
    fn confusion_fixture() {
        // tp=2, fp=1, fn=1, tn=0
        let r = classification_metrics(&labels("IIIC"), &labels("IICI"), Label::Inconsistent).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (2, 1, 1, 0));
        assert_eq!(r.precision, 2.0 / 3.0);
        assert_eq!(r.recall, 2.0 / 3.0);
        assert_eq!(r.f1, 2.0 / 3.0);
        assert_eq!(r.accuracy, 0.5);
        let r = classification_metrics(&labels("CCC"), &labels("ICI"), Label::Inconsistent).unwrap();
        assert_eq!(r.f1, 0.0);
        assert!(matches!(
            classification_metrics(&labels("C"), &labels("CC"), Label::Inconsistent),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn bleu_edges() {
        assert_eq!(sentence_bleu("a b c d e", "a b c d e").unwrap(), 100.0);
        assert_eq!(sentence_bleu("", "a b").unwrap(), 0.0);
        assert!(matches!(sentence_bleu("a", ""), Err(EvalError::EmptyReference)));
        let v = sentence_bleu("the cat sat", "the cat sat down").unwrap();
        assert!((v - 100.0 * (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn bleu_grows_with_correct_next_token() {
        let reference: Vec<&str> = "returns the sum of the two given numbers".split(' ').collect();
        let mut prev = 0.0;
        for k in 1..reference.len() {
            let score = smoothed_bleu4(&reference[..k], &reference).unwrap();
            assert!(score > prev, "{k}: {score} <= {prev}");
            prev = score;
        }
    }

    proptest! {
        #[test]
        fn bleu_in_range(c in proptest::collection::vec(0u8..5, 0..12), r in proptest::collection::vec(0u8..5, 1..12)) {
            let words = ["a", "b", "c", "d", "e"];
            let c: Vec<&str> = c.iter().map(|&i| words[i as usize]).collect();
            let r: Vec<&str> = r.iter().map(|&i| words[i as usize]).collect();
            let s = smoothed_bleu4(&c, &r).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&s));
        }

        #[test]
        fn metrics_permutation_invariant(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40), seed in 0u64..100) {
            let to = |b: bool| if b { Label::Inconsistent } else { Label::Consistent };
            let preds: Vec<Label> = bits.iter().map(|b| to(b.0)).collect();
            let labels: Vec<Label> = bits.iter().map(|b| to(b.1)).collect();
            let mut joint: Vec<(Label, Label)> = preds.iter().copied().zip(labels.iter().copied()).collect();
            joint.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (p2, l2): (Vec<Label>, Vec<Label>) = joint.into_iter().unzip();
            prop_assert_eq!(
                classification_metrics(&preds, &labels, Label::Inconsistent).unwrap(),
                classification_metrics(&p2, &l2, Label::Inconsistent).unwrap()
            );
        }
    }

    #[test]
    fn corpus_macro_average() {
        let items = vec![
            ("a b c d".to_string(), "a b c d".to_string(), LanguageId::Go),
            ("x".to_string(), "y".to_string(), LanguageId::Go),
            ("p q r s".to_string(), "p q r s".to_string(), LanguageId::Java),
        ];
        let r = corpus_bleu(&items).unwrap();
        assert_eq!(r.per_language[&LanguageId::Go], 50.0);
        assert_eq!(r.per_language[&LanguageId::Java], 100.0);
        assert_eq!(r.bleu4, Some(75.0));
        assert!(matches!(corpus_bleu(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn tfidf_similarity_properties() {
        let v = TfidfVectorizer::fit(["alpha beta", "beta gamma"]);
        assert!((v.similarity("load user table", "load user table") - 1.0).abs() < 1e-12);
        assert!(v.similarity("Load the user.", "def load_user(db): return db.get(user)") > 0.0);
        assert_eq!(v.similarity("alpha", "gamma"), 0.0);
        let expected_idf = (3.0f64 / 3.0).ln() + 1.0;
        assert!((v.idf("beta") - expected_idf).abs() < 1e-15);
    }

    fn pair(comment: &str, method: &str, label: Label) -> PairExample {
        PairExample {
            id: comment.into(),
            comment: comment.into(),
            method: method.into(),
            label,
            language: LanguageId::Python,
            provenance: Provenance::Synthetic,
        }
    }

    #[test]
    fn baselines_need_both_classes() {
        let train = vec![pair("a", "a", Label::Consistent)];
        assert!(matches!(tfidf_similarity_baseline(&train, &train), Err(EvalError::SingleClassTrain)));
        assert!(matches!(svm_baseline(&train, &train, &SvmConfig::default()), Err(EvalError::SingleClassTrain)));
    }

    #[test]
    fn threshold_separates_overlap() {
        let train = vec![
            pair("open file", "def open_file(p): return open(p)", Label::Consistent),
            pair("close socket", "def close_socket(s): s.close()", Label::Consistent),
            pair("close socket", "def open_file(p): return open(p)", Label::Inconsistent),
            pair("open file", "def close_socket(s): s.close()", Label::Inconsistent),
        ];
        let (t, report) = tfidf_similarity_baseline(&train, &train).unwrap();
        assert!(t > 0.0);
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn similarity_baseline_on_shuffled_comments() {
        let data = crate::synthetic::shuffled_comment_dataset(&crate::synthetic::synthetic_pairs(32));
        let (_, report) = tfidf_similarity_baseline(&data, &data).unwrap();
        assert!(report.accuracy >= 0.95 && report.accuracy < 1.0, "{report:?}");
    }

    #[test]
    fn svm_fits_marker_words() {
        let mut train = Vec::new();
        for i in 0..10 {
            train.push(pair(&format!("stale note {i}"), &format!("def f{i}(): pass"), Label::Inconsistent));
            train.push(pair(&format!("fresh note {i}"), &format!("def g{i}(): pass"), Label::Consistent));
        }
        let report = svm_baseline(&train, &train, &SvmConfig::default()).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }
}
