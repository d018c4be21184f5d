//! Byte-level BPE vocabulary shared by code and natural-language text.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const CLS: TokenId = 4;
pub const SEP: TokenId = 5;
pub const MSK: TokenId = 6;

pub const SPECIAL_NAMES: [&str; 7] = ["<pad>", "<unk>", "<s>", "</s>", "<cls>", "<sep>", "<mask>"];
pub const NUM_SPECIALS: usize = SPECIAL_NAMES.len();
/// Specials plus the 256 byte tokens.
pub const BASE_VOCAB_SIZE: usize = NUM_SPECIALS + 256;
pub const DEFAULT_VOCAB_SIZE: usize = 8192;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TokenizeError {
    #[error("corpus contains no text")]
    CorpusEmpty,
    #[error("vocab size {requested} is below the base alphabet size {BASE_VOCAB_SIZE}")]
    VocabTooSmall { requested: usize },
    #[error("token id {0} is out of range")]
    UnknownId(TokenId),
    #[error("invalid vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which special tokens to wrap an encoding in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wrap {
    #[default]
    None,
    BosEos,
    ClsSep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    merges: Vec<(TokenId, TokenId)>,
    /// Byte content of every token; empty for specials.
    tokens: Vec<Vec<u8>>,
    ranks: HashMap<(TokenId, TokenId), usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    version: u32,
    specials: BTreeMap<String, TokenId>,
    merges: Vec<[TokenId; 2]>,
}

fn byte_token(b: u8) -> TokenId {
    (NUM_SPECIALS + b as usize) as TokenId
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Space,
    Word,
    Digit,
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphabetic() || c == '_' {
        CharClass::Word
    } else if c.is_numeric() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

/// Split text into merge-isolated chunks that partition it exactly.
///
/// Runs of one character class form a chunk; a single space directly before
/// a non-space run is attached to that run.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let byte_at = |i: usize| if i < n { chars[i].0 } else { text.len() };
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if class_of(chars[i].1) == CharClass::Space {
            let mut j = i;
            while j < n && class_of(chars[j].1) == CharClass::Space {
                j += 1;
            }
            let attach = j < n && chars[j - 1].1 == ' ';
            if !attach {
                out.push(&text[byte_at(i)..byte_at(j)]);
                i = j;
                continue;
            }
            if j - 1 > i {
                out.push(&text[byte_at(i)..byte_at(j - 1)]);
            }
            i = j - 1;
        }
        let run_start = if chars[i].1 == ' ' { i + 1 } else { i };
        let class = class_of(chars[run_start].1);
        let mut m = run_start;
        while m < n && class_of(chars[m].1) == class {
            m += 1;
        }
        out.push(&text[byte_at(i)..byte_at(m)]);
        i = m;
    }
    out
}

impl Vocabulary {
    /// A vocabulary with the byte alphabet and no merges.
    pub fn base() -> Self {
        let mut tokens = vec![Vec::new(); NUM_SPECIALS];
        tokens.extend((0..=255u8).map(|b| vec![b]));
        Vocabulary {
            merges: Vec::new(),
            tokens,
            ranks: HashMap::new(),
        }
    }

    /// Train greedy highest-frequency merges until the vocabulary holds
    /// `vocab_size` tokens or no pair remains. Ties go to the
    /// lexicographically smallest merged pair.
    pub fn train<I, S>(corpus: I, vocab_size: usize) -> Result<Self, TokenizeError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if vocab_size < BASE_VOCAB_SIZE {
            return Err(TokenizeError::VocabTooSmall { requested: vocab_size });
        }
        let mut chunk_counts: HashMap<String, u64> = HashMap::new();
        for text in corpus {
            for chunk in pretokenize(text.as_ref()) {
                *chunk_counts.entry(chunk.to_string()).or_insert(0) += 1;
            }
        }
        if chunk_counts.is_empty() {
            return Err(TokenizeError::CorpusEmpty);
        }
        let mut chunks: Vec<(String, u64)> = chunk_counts.into_iter().collect();
        chunks.sort();

        let mut vocab = Vocabulary::base();
        let mut words: Vec<(Vec<TokenId>, u64)> = chunks
            .into_iter()
            .map(|(s, c)| (s.bytes().map(byte_token).collect(), c))
            .collect();

        let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        let mut pair_words: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
        for (idx, (symbols, count)) in words.iter().enumerate() {
            for w in symbols.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += count;
                pair_words.entry((w[0], w[1])).or_default().insert(idx);
            }
        }

        type HeapEntry = (u64, Reverse<(Vec<u8>, Vec<u8>)>, (TokenId, TokenId));
        let entry = |vocab: &Vocabulary, pair: (TokenId, TokenId), count: u64| -> HeapEntry {
            let key = (vocab.tokens[pair.0 as usize].clone(), vocab.tokens[pair.1 as usize].clone());
            (count, Reverse(key), pair)
        };
        let mut heap: BinaryHeap<HeapEntry> = pair_counts
            .iter()
            .map(|(&pair, &count)| entry(&vocab, pair, count))
            .collect();

        while vocab.tokens.len() < vocab_size {
            let Some((count, _, pair)) = heap.pop() else { break };
            if pair_counts.get(&pair).copied() != Some(count) || count == 0 {
                continue;
            }
            let new_id = vocab.push_merge(pair);
            let affected: Vec<usize> = {
                let mut v: Vec<usize> = pair_words.remove(&pair).unwrap_or_default().into_iter().collect();
                v.sort_unstable();
                v
            };
            let mut touched: HashSet<(TokenId, TokenId)> = HashSet::new();
            for idx in affected {
                let (symbols, wcount) = &mut words[idx];
                for w in symbols.windows(2) {
                    let p = (w[0], w[1]);
                    if let Some(c) = pair_counts.get_mut(&p) {
                        *c -= *wcount;
                    }
                    touched.insert(p);
                }
                *symbols = merge_all(symbols, pair, new_id);
                for w in symbols.windows(2) {
                    let p = (w[0], w[1]);
                    *pair_counts.entry(p).or_insert(0) += *wcount;
                    pair_words.entry(p).or_default().insert(idx);
                    touched.insert(p);
                }
            }
            pair_counts.remove(&pair);
            let mut touched: Vec<_> = touched.into_iter().collect();
            touched.sort_unstable();
            for p in touched {
                match pair_counts.get(&p).copied() {
                    Some(0) => {
                        pair_counts.remove(&p);
                    }
                    Some(c) => heap.push(entry(&vocab, p, c)),
                    None => {}
                }
            }
        }
        Ok(vocab)
    }

    fn push_merge(&mut self, pair: (TokenId, TokenId)) -> TokenId {
        let id = self.tokens.len() as TokenId;
        let mut bytes = self.tokens[pair.0 as usize].clone();
        bytes.extend_from_slice(&self.tokens[pair.1 as usize]);
        self.tokens.push(bytes);
        self.ranks.insert(pair, self.merges.len());
        self.merges.push(pair);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// A copy keeping only the first `n` merges.
    pub fn truncated(&self, n: usize) -> Vocabulary {
        let mut vocab = Vocabulary::base();
        for &pair in self.merges.iter().take(n) {
            vocab.push_merge(pair);
        }
        vocab
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Encode `text`, applying merges in rank order within each chunk.
    pub fn encode(&self, text: &str, wrap: Wrap) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(text.len() / 2 + 2);
        match wrap {
            Wrap::None => {}
            Wrap::BosEos => ids.push(BOS),
            Wrap::ClsSep => ids.push(CLS),
        }
        for chunk in pretokenize(text) {
            ids.extend(self.encode_chunk(chunk));
        }
        match wrap {
            Wrap::None => {}
            Wrap::BosEos => ids.push(EOS),
            Wrap::ClsSep => ids.push(SEP),
        }
        ids
    }

    fn encode_chunk(&self, chunk: &str) -> Vec<TokenId> {
        let mut symbols: Vec<TokenId> = chunk.bytes().map(byte_token).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            let new_id = (BASE_VOCAB_SIZE + rank) as TokenId;
            symbols = merge_all(&symbols, pair, new_id);
        }
        symbols
    }

    /// Concatenated bytes of all non-special tokens.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizeError> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.tokens.get(id as usize).ok_or(TokenizeError::UnknownId(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Decode to text; byte sequences that are not valid UTF-8 are replaced
    /// lossily.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizeError> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            version: FORMAT_VERSION,
            specials: SPECIAL_NAMES
                .iter()
                .enumerate()
                .map(|(i, name)| (name.to_string(), i as TokenId))
                .collect(),
            merges: self.merges.iter().map(|&(a, b)| [a, b]).collect(),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizeError> {
        let file: VocabularyFile = serde_json::from_str(text)?;
        if file.version != FORMAT_VERSION {
            return Err(TokenizeError::Format(format!("unsupported version {}", file.version)));
        }
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            if file.specials.get(*name) != Some(&(i as TokenId)) {
                return Err(TokenizeError::Format(format!("special {name} must have id {i}")));
            }
        }
        let mut vocab = Vocabulary::base();
        for [a, b] in file.merges {
            let limit = vocab.len() as TokenId;
            if a < NUM_SPECIALS as TokenId || b < NUM_SPECIALS as TokenId || a >= limit || b >= limit {
                return Err(TokenizeError::Format(format!("merge [{a}, {b}] references an invalid token")));
            }
            vocab.push_merge((a, b));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizeError> {
        Vocabulary::from_json(&std::fs::read_to_string(path)?)
    }
}

fn merge_all(symbols: &[TokenId], pair: (TokenId, TokenId), new_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}
