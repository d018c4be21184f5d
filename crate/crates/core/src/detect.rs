//! The end-user pipeline: extract functions, classify each (code,
//! docstring) pair, and generate replacement docstrings.

use serde::{Deserialize, Serialize};

use crate::extract::{parse_file, ExtractError, SourceFile};
use crate::model::{cross_input, decoder_input, EncodeMode, Model, ModelError};
use crate::tokenize::{TokenId, Vocabulary, Wrap, EOS};
use crate::train::sigmoid;
use crate::LanguageId;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const MAX_NEW_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Consistent,
    Inconsistent,
    MissingDocstring,
}

impl Prediction {
    pub fn as_str(self) -> &'static str {
        match self {
            Prediction::Consistent => "consistent",
            Prediction::Inconsistent => "inconsistent",
            Prediction::MissingDocstring => "missing_docstring",
        }
    }
}

/// One checked function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub function_name: String,
    pub code: String,
    pub docstring: Option<String>,
    pub prediction: Prediction,
    /// Probability that the pair is inconsistent; 1.0 when the docstring is
    /// missing.
    pub confidence: f64,
    pub recommended_docstring: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("beam width must be at least 1")]
    InvalidBeamWidth,
    #[error("code is empty")]
    EmptyCode,
    #[error("model vocabulary of {model} is smaller than the tokenizer's {tokenizer}")]
    VocabularyMismatch { model: usize, tokenizer: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// 1 is greedy decoding.
    pub beam_width: usize,
    pub max_new_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 1,
            max_new_tokens: MAX_NEW_TOKENS,
        }
    }
}

/// Output of [`generate_docstring`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<TokenId>,
    /// Set when decoding produced no visible text.
    pub empty: bool,
    pub code_truncated: bool,
}

/// A loaded model plus its tokenizer and decision settings. Read-only, so
/// one instance may serve concurrent requests.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: Model,
    pub vocab: Vocabulary,
    pub threshold: f64,
    pub decode: DecodeConfig,
}

/// Per-function warnings that do not change the result record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckFlags {
    pub truncated: bool,
    pub empty_generation: bool,
}

/// All results for one source text, in source order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceReport {
    pub results: Vec<CheckResult>,
    pub diagnostics: Vec<String>,
}

fn validate_threshold(threshold: f64) -> Result<f64, DetectError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(threshold)
    } else {
        Err(DetectError::InvalidThreshold(threshold))
    }
}

/// Compact JSON array of results. Every output channel serializes result
/// lists through this function.
pub fn results_json(results: &[CheckResult]) -> String {
    serde_json::to_string(results).expect("check results always serialize")
}

fn argmax_lowest(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest logits, ties broken by lower index.
fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

impl Detector {
    pub fn new(model: Model, vocab: Vocabulary) -> Result<Self, DetectError> {
        if model.config.vocab_size < vocab.len() {
            return Err(DetectError::VocabularyMismatch {
                model: model.config.vocab_size,
                tokenizer: vocab.len(),
            });
        }
        Ok(Detector {
            model,
            vocab,
            threshold: DEFAULT_THRESHOLD,
            decode: DecodeConfig::default(),
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, DetectError> {
        self.threshold = validate_threshold(threshold)?;
        Ok(self)
    }

    pub fn with_decode(mut self, decode: DecodeConfig) -> Result<Self, DetectError> {
        if decode.beam_width == 0 {
            return Err(DetectError::InvalidBeamWidth);
        }
        self.decode = decode;
        Ok(self)
    }

    /// P(inconsistent) of a (code, comment) pair and whether either side was
    /// truncated.
    pub fn inconsistency(&self, code: &str, comment: &str) -> Result<(f64, bool), DetectError> {
        let code_ids = self.vocab.encode(code, Wrap::None);
        if code_ids.is_empty() {
            return Err(DetectError::EmptyCode);
        }
        let text_ids = self.vocab.encode(comment, Wrap::None);
        let (tokens, truncated) = cross_input(&code_ids, &text_ids, self.model.config.max_len);
        let encoded = self.model.encode(&tokens, EncodeMode::Cross)?;
        let logit = crate::model::transformer::bc_logit(&self.model.params, &encoded.pooled);
        Ok((sigmoid(logit), truncated))
    }

    /// Classify one pair; generate a replacement when it is inconsistent or
    /// the docstring is missing.
    pub fn check_pair(&self, function_name: &str, code: &str, docstring: Option<&str>) -> Result<(CheckResult, CheckFlags), DetectError> {
        self.check_pair_at(function_name, code, docstring, self.threshold)
    }

    fn check_pair_at(
        &self,
        function_name: &str,
        code: &str,
        docstring: Option<&str>,
        threshold: f64,
    ) -> Result<(CheckResult, CheckFlags), DetectError> {
        if code.trim().is_empty() {
            return Err(DetectError::EmptyCode);
        }
        let mut flags = CheckFlags::default();
        let (prediction, confidence) = match docstring {
            None => (Prediction::MissingDocstring, 1.0),
            Some(doc) => {
                let (p, truncated) = self.inconsistency(code, doc)?;
                flags.truncated = truncated;
                let prediction = if p > threshold { Prediction::Inconsistent } else { Prediction::Consistent };
                (prediction, p)
            }
        };
        let recommended = match (prediction, docstring) {
            (Prediction::Consistent, Some(doc)) => doc.to_string(),
            _ => {
                let generation = self.generate_docstring(code)?;
                flags.truncated |= generation.code_truncated;
                flags.empty_generation = generation.empty;
                generation.text
            }
        };
        Ok((
            CheckResult {
                function_name: function_name.to_string(),
                code: code.to_string(),
                docstring: docstring.map(str::to_string),
                prediction,
                confidence,
                recommended_docstring: recommended,
            },
            flags,
        ))
    }

    /// Autoregressive docstring for `code`, stopping at EOS or the token cap.
    pub fn generate_docstring(&self, code: &str) -> Result<Generation, DetectError> {
        let code_ids = self.vocab.encode(code, Wrap::None);
        if code_ids.is_empty() {
            return Err(DetectError::EmptyCode);
        }
        self.generate_from_ids(&code_ids)
    }

    pub fn generate_from_ids(&self, code_ids: &[TokenId]) -> Result<Generation, DetectError> {
        let max_len = self.model.config.max_len;
        // Keep at least one code token next to CLS, SEP and BOS.
        let cap = self.decode.max_new_tokens.min(max_len.saturating_sub(4));
        let tokens = if self.decode.beam_width == 1 {
            self.greedy(code_ids, cap)?
        } else {
            self.beam(code_ids, cap)?
        };
        let code_truncated = decoder_input(code_ids, &tokens, max_len).truncated;
        let text = String::from_utf8_lossy(&self.vocab.decode_bytes(&tokens).unwrap_or_default())
            .trim()
            .to_string();
        Ok(Generation {
            empty: text.is_empty(),
            text,
            tokens,
            code_truncated,
        })
    }

    fn logits(&self, code: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, DetectError> {
        let mut logits = self.model.next_token_logits(&decoder_input(code, prefix, self.model.config.max_len))?;
        // Ids beyond the tokenizer cannot be decoded.
        logits.truncate(self.vocab.len());
        Ok(logits)
    }

    fn greedy(&self, code: &[TokenId], cap: usize) -> Result<Vec<TokenId>, DetectError> {
        let mut out = Vec::new();
        while out.len() < cap {
            let next = argmax_lowest(&self.logits(code, &out)?) as TokenId;
            if next == EOS {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }

    fn beam(&self, code: &[TokenId], cap: usize) -> Result<Vec<TokenId>, DetectError> {
        let width = self.decode.beam_width;
        // (tokens, summed log-probability, finished)
        let mut beams: Vec<(Vec<TokenId>, f64, bool)> = vec![(Vec::new(), 0.0, false)];
        for _ in 0..cap {
            if beams.iter().all(|b| b.2) {
                break;
            }
            let mut candidates: Vec<(Vec<TokenId>, f64, bool)> = Vec::new();
            for (tokens, score, done) in &beams {
                if *done {
                    candidates.push((tokens.clone(), *score, true));
                    continue;
                }
                let logits = self.logits(code, tokens)?;
                let logp = log_softmax(&logits);
                for id in top_k(&logits, width) {
                    let mut next = tokens.clone();
                    let finished = id as TokenId == EOS;
                    if !finished {
                        next.push(id as TokenId);
                    }
                    candidates.push((next, score + logp[id], finished));
                }
            }
            // Stable sort keeps expansion order among equal scores.
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
            candidates.truncate(width);
            beams = candidates;
        }
        Ok(beams.into_iter().next().map(|b| b.0).unwrap_or_default())
    }

    /// Check `text` as a file of `language` labelled `path` in diagnostics,
    /// optionally overriding the decision threshold.
    pub fn check_text(&self, path: &str, language: LanguageId, text: &str, threshold: Option<f64>) -> Result<SourceReport, DetectError> {
        let threshold = threshold.map(validate_threshold).transpose()?.unwrap_or(self.threshold);
        self.check_source_at(&SourceFile::new(path, language, text), threshold)
    }

    /// Extract every function of `file` and check it, in source order.
    pub fn check_source(&self, file: &SourceFile) -> Result<SourceReport, DetectError> {
        self.check_source_at(file, self.threshold)
    }

    fn check_source_at(&self, file: &SourceFile, threshold: f64) -> Result<SourceReport, DetectError> {
        let parsed = parse_file(file)?;
        let mut report = SourceReport {
            results: Vec::with_capacity(parsed.records.len()),
            diagnostics: parsed.diagnostics,
        };
        for record in &parsed.records {
            let (result, flags) = self.check_pair_at(&record.function_name, &record.code, record.docstring.as_deref(), threshold)?;
            let at = format!("{}:{}", file.path.display(), record.line_span.0);
            if flags.truncated {
                report.diagnostics.push(format!("{at}: {} truncated to the model context", record.function_name));
            }
            if flags.empty_generation {
                report.diagnostics.push(format!("{at}: {} generation produced no text", record.function_name));
            }
            report.results.push(result);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::LanguageId;

    fn detector() -> Detector {
        let model = Model::new(ModelConfig {
            vocab_size: 300,
            max_len: 64,
            num_layers: 1,
            hidden: 16,
            heads: 2,
            intermediate: 32,
            proj_dim: 8,
            ..ModelConfig::desk()
        })
        .unwrap();
        Detector::new(model, Vocabulary::base())
            .unwrap()
            .with_decode(DecodeConfig {
                beam_width: 1,
                max_new_tokens: 6,
            })
            .unwrap()
    }

    #[test]
    fn threshold_decides_and_keeps_docstring() {
        let d = detector();
        let (p, _) = d.inconsistency("def f(): pass", "Does f.").unwrap();
        let below = d.clone().with_threshold((p + 1.0) / 2.0).unwrap();
        let (r, _) = below.check_pair("f", "def f(): pass", Some("Does f.")).unwrap();
        assert_eq!(r.prediction, Prediction::Consistent);
        assert_eq!(r.recommended_docstring, "Does f.");
        assert_eq!(r.confidence, p);

        let above = d.clone().with_threshold(p / 2.0).unwrap();
        let (r, _) = above.check_pair("f", "def f(): pass", Some("Does f.")).unwrap();
        assert_eq!(r.prediction, Prediction::Inconsistent);
        assert_eq!(r.recommended_docstring, d.generate_docstring("def f(): pass").unwrap().text);

        assert!(d.clone().with_threshold(1.0).is_err());
        assert!(d.clone().with_threshold(0.0).is_err());
    }

    #[test]
    fn near_one_threshold_is_consistent() {
        let d = detector().with_threshold(1.0 - 1e-12).unwrap();
        for code in ["def a(): pass", "int main() { return 0; }"] {
            let (r, _) = d.check_pair("a", code, Some("x")).unwrap();
            assert_eq!(r.prediction, Prediction::Consistent);
        }
    }

    #[test]
    fn missing_docstring_gets_generation() {
        let d = detector();
        let (r, _) = d.check_pair("f", "def f(): pass", None).unwrap();
        assert_eq!(r.prediction, Prediction::MissingDocstring);
        assert_eq!(r.confidence, 1.0);
        assert!(r.docstring.is_none());
    }

    #[test]
    fn beam_one_matches_greedy_and_cap_holds() {
        let d = detector();
        let greedy = d.generate_docstring("def g(x): return x").unwrap();
        assert!(greedy.tokens.len() <= 6);
        let beam = d
            .clone()
            .with_decode(DecodeConfig {
                beam_width: 1,
                max_new_tokens: 6,
            })
            .unwrap()
            .beam(&d.vocab.encode("def g(x): return x", Wrap::None), 6)
            .unwrap();
        assert_eq!(beam, greedy.tokens);
        let wide = d
            .clone()
            .with_decode(DecodeConfig {
                beam_width: 3,
                max_new_tokens: 6,
            })
            .unwrap();
        assert!(wide.generate_docstring("def g(x): return x").unwrap().tokens.len() <= 6);
    }

    #[test]
    fn default_cap_is_64() {
        let d = Detector::new(detector().model, Vocabulary::base()).unwrap();
        let g = d.generate_docstring("x").unwrap();
        assert!(g.tokens.len() <= MAX_NEW_TOKENS);
    }

    #[test]
    fn source_results_in_order() {
        let d = detector();
        let empty = SourceFile::new("e.py", LanguageId::Python, "");
        assert!(d.check_source(&empty).unwrap().results.is_empty());
        let src = "def a():\n    \"\"\"Doc a.\"\"\"\n    return 1\n\ndef b():\n    return 2\n";
        let report = d.check_source(&SourceFile::new("s.py", LanguageId::Python, src)).unwrap();
        let names: Vec<&str> = report.results.iter().map(|r| r.function_name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_ne!(report.results[0].prediction, Prediction::MissingDocstring);
        assert_eq!(report.results[1].prediction, Prediction::MissingDocstring);
        assert_eq!(report, d.check_source(&SourceFile::new("s.py", LanguageId::Python, src)).unwrap());
    }

    #[test]
    fn result_json_field_names() {
        let r = CheckResult {
            function_name: "f".into(),
            code: "c".into(),
            docstring: None,
            prediction: Prediction::MissingDocstring,
            confidence: 1.0,
            recommended_docstring: "r".into(),
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"function_name":"f","code":"c","docstring":null,"prediction":"missing_docstring","confidence":1.0,"recommended_docstring":"r"}"#
        );
    }
}
