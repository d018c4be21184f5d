//! Labeled (comment, method) pair datasets: post-hoc labeling of edit
//! records, hard-negative sampling, stratified splits and JSONL I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::extract::{normalize_docstring, FunctionRecord};
use crate::LanguageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Consistent,
    Inconsistent,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Consistent => "consistent",
            Label::Inconsistent => "inconsistent",
            Label::Unlabeled => "unlabeled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    JitDerived,
    Extracted,
    Synthetic,
}

/// One (comment, method) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub id: String,
    pub comment: String,
    pub method: String,
    pub label: Label,
    pub language: LanguageId,
    pub provenance: Provenance,
}

/// A method and its comment before and after one edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JitEditRecord {
    pub id: String,
    pub comment_before: String,
    pub method_before: String,
    pub comment_after: String,
    pub method_after: String,
    pub language: LanguageId,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Which side of an anchor pair a hard negative replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSide {
    /// Anchor code paired with another example's text.
    Text,
    /// Anchor text paired with another example's code.
    Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HardNegative {
    pub anchor: usize,
    pub negative: usize,
    pub side: NegativeSide,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("record {id}: {reason}")]
    DegenerateRecord { id: String, reason: &'static str },
    #[error("batch of {0} is too small; at least 2 examples are required")]
    BatchTooSmall(usize),
    #[error("embedding batches differ in size or dimension")]
    ShapeMismatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios((f64, f64, f64)),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Comment text used for labeling: first paragraph, whitespace collapsed,
/// case preserved.
pub fn normalize_comment(text: &str, language: LanguageId) -> String {
    normalize_docstring(text, language)
}

/// Post-hoc pair: the old comment against the new method.
///
/// Consistent iff the normalized old and new comments are equal. The
/// pre-edit method is never consulted.
pub fn build_jit_pair(rec: &JitEditRecord) -> Result<PairExample, CorpusError> {
    let before = normalize_comment(&rec.comment_before, rec.language);
    if before.is_empty() {
        return Err(CorpusError::DegenerateRecord {
            id: rec.id.clone(),
            reason: "comment_before is empty after normalization",
        });
    }
    if rec.method_after.trim().is_empty() {
        return Err(CorpusError::DegenerateRecord {
            id: rec.id.clone(),
            reason: "method_after is empty",
        });
    }
    let after = normalize_comment(&rec.comment_after, rec.language);
    let label = if before == after { Label::Consistent } else { Label::Inconsistent };
    Ok(PairExample {
        id: rec.id.clone(),
        comment: before,
        method: rec.method_after.clone(),
        label,
        language: rec.language,
        provenance: Provenance::JitDerived,
    })
}

/// Documented functions as pairs labeled consistent.
pub fn pairs_from_records(records: &[FunctionRecord]) -> Vec<PairExample> {
    records
        .iter()
        .filter_map(|r| {
            let doc = r.docstring.as_deref().filter(|d| !d.is_empty())?;
            Some(PairExample {
                id: format!("{}:{}:{}", r.file.display(), r.qualified_name, r.line_span.0),
                comment: doc.to_string(),
                method: r.code.clone(),
                label: Label::Consistent,
                language: r.language,
                provenance: Provenance::Extracted,
            })
        })
        .collect()
}

fn anchor_rng(seed: u64, anchor: usize, side: NegativeSide) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side_bit = match side {
        NegativeSide::Text => 0,
        NegativeSide::Code => 1,
    };
    rng.set_stream(((anchor as u64) << 1) | side_bit);
    rng
}

/// Index `j != anchor` drawn with probability proportional to
/// `exp(scores[j] / temperature)`.
pub fn sample_excluding<R: Rng>(scores: &[f64], anchor: usize, temperature: f64, rng: &mut R) -> usize {
    let max = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != anchor)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(j, &s)| if j == anchor { 0.0 } else { ((s - max) / temperature).exp() })
        .collect();
    let total: f64 = weights.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for (j, w) in weights.iter().enumerate() {
        if j == anchor {
            continue;
        }
        acc += w;
        last = j;
        if target < acc {
            return j;
        }
    }
    last
}

/// One text negative and one code negative per anchor, sampled from the
/// diagonal-masked softmax of similarities over `temperature`.
///
/// Each draw depends only on `(seed, anchor, side)`.
pub fn mine_hard_negatives(
    code_embs: &[Vec<f64>],
    text_embs: &[Vec<f64>],
    temperature: f64,
    seed: u64,
) -> Result<Vec<HardNegative>, CorpusError> {
    let n = code_embs.len();
    if n != text_embs.len() {
        return Err(CorpusError::ShapeMismatch);
    }
    if n < 2 {
        return Err(CorpusError::BatchTooSmall(n));
    }
    let dim = code_embs[0].len();
    if code_embs.iter().chain(text_embs).any(|v| v.len() != dim) {
        return Err(CorpusError::ShapeMismatch);
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let to_text: Vec<f64> = text_embs.iter().map(|v| dot(&code_embs[i], v)).collect();
        let j = sample_excluding(&to_text, i, temperature, &mut anchor_rng(seed, i, NegativeSide::Text));
        out.push(HardNegative {
            anchor: i,
            negative: j,
            side: NegativeSide::Text,
        });
        let to_code: Vec<f64> = code_embs.iter().map(|u| dot(&text_embs[i], u)).collect();
        let j = sample_excluding(&to_code, i, temperature, &mut anchor_rng(seed, i, NegativeSide::Code));
        out.push(HardNegative {
            anchor: i,
            negative: j,
            side: NegativeSide::Code,
        });
    }
    Ok(out)
}

/// Split `n` items into three counts by largest remainder; ties favor the
/// earlier split.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for k in 0..3 {
        counts[k] = exact[k].floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Seeded, label-stratified train/valid/test split of pair ids.
///
/// Within each split, ids keep their dataset order.
pub fn split_dataset(pairs: &[PairExample], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit, CorpusError> {
    if pairs.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(ratios));
    }
    let mut strata: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        strata.entry(p.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: [BTreeSet<usize>; 3] = Default::default();
    for indices in strata.values_mut() {
        indices.shuffle(&mut rng);
        let counts = allocate(indices.len(), r);
        let mut start = 0;
        for k in 0..3 {
            assigned[k].extend(&indices[start..start + counts[k]]);
            start += counts[k];
        }
    }
    let ids = |set: &BTreeSet<usize>| set.iter().map(|&i| pairs[i].id.clone()).collect();
    Ok(DatasetSplit {
        train: ids(&assigned[0]),
        valid: ids(&assigned[1]),
        test: ids(&assigned[2]),
        seed,
    })
}

/// Write one JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Read one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: idx + 1, source })?);
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairExample>, CorpusError> {
    read_jsonl(io::BufReader::new(std::fs::File::open(path)?))
}

pub fn load_jit_records(path: &Path) -> Result<Vec<JitEditRecord>, CorpusError> {
    read_jsonl(io::BufReader::new(std::fs::File::open(path)?))
}

/// Ids listed one per line; blank lines and `#` comments are ignored.
pub fn read_id_list<R: BufRead>(input: R) -> Result<BTreeSet<String>, CorpusError> {
    let mut ids = BTreeSet::new();
    for line in input.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() && !id.starts_with('#') {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

/// Pairs whose id is in `ids`, in dataset order.
pub fn select_ids(pairs: &[PairExample], ids: &BTreeSet<String>) -> Vec<PairExample> {
    pairs.iter().filter(|p| ids.contains(&p.id)).cloned().collect()
}
