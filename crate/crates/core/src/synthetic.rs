//! Small deterministic code/comment corpora for smoke tests and oracles.

use crate::corpus::{Label, PairExample, Provenance};
use crate::LanguageId;

const VERBS: [(&str, &str); 8] = [
    ("add", "Add"),
    ("remove", "Remove"),
    ("find", "Find"),
    ("count", "Count"),
    ("load", "Load"),
    ("save", "Save"),
    ("sort", "Sort"),
    ("merge", "Merge"),
];

const OBJECTS: [(&str, &str); 4] = [("user", "users"), ("order", "orders"), ("item", "items"), ("tag", "tags")];

/// Functions whose comment shares no word with the code.
const PARAPHRASED: [(&str, &str); 2] = [
    ("def lcm(a, b):\n    return a * b // gcd(a, b)", "Least common multiple."),
    ("def is_leap(y):\n    return y % 4 == 0 and (y % 100 != 0 or y % 400 == 0)", "Check for a leap year."),
];

/// `n` (at most 32) consistent Python pairs.
///
/// Comments reuse verbs and nouns across pairs the way real docstrings
/// share vocabulary; two comments are pure paraphrases of their code.
pub fn synthetic_pairs(n: usize) -> Vec<PairExample> {
    assert!(n <= VERBS.len() * OBJECTS.len(), "at most 32 synthetic pairs");
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (code, comment) = if k >= n.saturating_sub(PARAPHRASED.len()) && n >= 8 {
            let (c, m) = PARAPHRASED[k + PARAPHRASED.len() - n];
            (c.to_string(), m.to_string())
        } else {
            let (verb, verb_cap) = VERBS[k % VERBS.len()];
            let (obj, objs) = OBJECTS[(k / VERBS.len() + k) % OBJECTS.len()];
            let code = format!("def {verb}_{obj}(db, {obj}_id):\n    return db.{verb}(\"{objs}\", {obj}_id)");
            let comment = format!("{verb_cap} one {obj} in the {objs} table.");
            (code, comment)
        };
        out.push(PairExample {
            id: format!("syn-{k:02}"),
            comment,
            method: code,
            label: Label::Consistent,
            language: LanguageId::Python,
            provenance: Provenance::Synthetic,
        });
    }
    out
}

/// Each pair plus a negative that takes the comment of the next pair
/// (a cyclic shift, so no negative keeps its own comment).
pub fn shuffled_comment_dataset(pairs: &[PairExample]) -> Vec<PairExample> {
    let n = pairs.len();
    let mut out: Vec<PairExample> = pairs.to_vec();
    for (i, p) in pairs.iter().enumerate() {
        let donor = &pairs[(i + 1) % n];
        out.push(PairExample {
            id: format!("{}-neg", p.id),
            comment: donor.comment.clone(),
            method: p.method.clone(),
            label: Label::Inconsistent,
            language: p.language,
            provenance: Provenance::Synthetic,
        });
    }
    out
}
