//! Word splitting and greedy longest-match-first subword segmentation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SPECIAL_TOKENS: [&str; 3] = [PAD, UNK, CLS];
pub const CONTINUATION: &str = "##";
pub const MAX_WORD_CHARS: usize = 100;

/// Lowercases and splits on whitespace; every punctuation or symbol
/// character becomes a word of its own.
pub fn basic_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Lowercased alphanumeric word tokens; whitespace and punctuation only
/// separate words.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl SubwordVocabulary {
    /// Builds a vocabulary from an ordered token list. Special tokens
    /// must be present, `[PAD]` first, with no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(Error::InvalidRecord("subword vocabulary must start with [PAD]".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidRecord(format!("duplicate subword `{t}`")));
            }
        }
        for s in SPECIAL_TOKENS {
            if !index.contains_key(s) {
                return Err(Error::InvalidRecord(format!("missing special token {s}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        self.index[UNK]
    }

    pub fn cls_id(&self) -> u32 {
        self.index[CLS]
    }

    /// One token per line; the line index is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn hash(&self) -> [u8; 32] {
        crate::sha256(self.to_file_string().as_bytes())
    }

    /// Greedy longest-match-first segmentation of one (already
    /// lowercased) word. Returns `[UNK]` alone if any position fails to
    /// match or the word is longer than [`MAX_WORD_CHARS`].
    pub fn segment_word(&self, word: &str) -> Vec<u32> {
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() {
            return vec![];
        }
        if chars.len() > MAX_WORD_CHARS {
            return vec![self.unk_id()];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let body: String = chars[start..end].iter().collect();
                let candidate = if start == 0 { body } else { format!("{CONTINUATION}{body}") };
                if let Some(id) = self.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => pieces.push(id),
                None => return vec![self.unk_id()],
            }
            start = end;
        }
        pieces
    }

    /// Subword ids of arbitrary text without the leading `[CLS]`.
    pub fn segment_text(&self, text: &str) -> Vec<u32> {
        basic_tokenize(text)
            .iter()
            .flat_map(|w| self.segment_word(w))
            .collect()
    }
}

/// Tokenizes `text` into subword ids: `[CLS]` followed by the greedy
/// segmentation of every word, truncated to `max_len` ids.
pub fn wordpiece_tokenize(text: &str, vocab: &SubwordVocabulary, max_len: usize) -> Vec<u32> {
    let mut ids = vec![vocab.cls_id()];
    for word in basic_tokenize(text) {
        if ids.len() >= max_len {
            break;
        }
        ids.extend(vocab.segment_word(&word));
    }
    ids.truncate(max_len.max(1));
    ids
}

/// Reassembles words from subword ids by joining continuation pieces.
pub fn detokenize(ids: &[u32], vocab: &SubwordVocabulary) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        let tok = vocab.token(id);
        if SPECIAL_TOKENS.contains(&tok) {
            continue;
        }
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !words.is_empty() => words.last_mut().unwrap().push_str(rest),
            _ => words.push(tok.to_string()),
        }
    }
    words
}

/// Builds a frequency-based subword vocabulary: special tokens, every
/// distinct character, then the most frequent whole words, word prefixes
/// and `##`-suffixes until `target_size` entries exist.
pub fn build_subword_vocab<'a, I>(texts: I, target_size: usize) -> Result<SubwordVocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    let mut any = false;
    for text in texts {
        any = true;
        for w in basic_tokenize(text) {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::EmptyInput("no statements for subword vocabulary".into()));
    }
    let chars: BTreeSet<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
    let minimum = SPECIAL_TOKENS.len() + chars.len();
    if target_size < minimum {
        return Err(Error::VocabularyTooSmall {
            target: target_size,
            minimum,
        });
    }
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    let base: BTreeSet<String> = tokens.iter().cloned().collect();

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for (word, &f) in &word_freq {
        let cs: Vec<char> = word.chars().collect();
        if cs.len() > MAX_WORD_CHARS {
            continue;
        }
        *counts.entry(word.clone()).or_default() += f;
        for end in 2..cs.len() {
            *counts.entry(cs[..end].iter().collect()).or_default() += f;
        }
        for start in 1..cs.len() {
            let suffix: String = cs[start..].iter().collect();
            *counts.entry(format!("{CONTINUATION}{suffix}")).or_default() += f;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(t, _)| !base.contains(t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    tokens.extend(
        ranked
            .into_iter()
            .take(target_size - tokens.len())
            .map(|(t, _)| t),
    );
    SubwordVocabulary::from_tokens(tokens)
}
