//! Corpus loading, tokenization and vocabularies.
//!
//! A corpus directory holds `train.txt`, `valid.txt` and `test.txt`. The
//! vocabulary is built from the training split alone; anything unseen in
//! valid or test maps to `<unk>`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// One token per Unicode scalar value, spaces and newlines included.
    Char,
    /// ASCII-whitespace separated words, with `<eos>` for every newline.
    Word,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Char => "char",
            Level::Word => "word",
        })
    }
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "char" => Ok(Level::Char),
            "word" => Ok(Level::Word),
            other => Err(Error::Config(format!("unknown level {other:?}, expected char or word"))),
        }
    }
}

/// Splits text into tokens at the given level.
pub fn tokenize(text: &str, level: Level) -> Vec<String> {
    match level {
        Level::Char => text.chars().map(String::from).collect(),
        Level::Word => {
            let mut out = Vec::new();
            for line in text.split_inclusive('\n') {
                out.extend(line.split_ascii_whitespace().map(String::from));
                if line.ends_with('\n') {
                    out.push(EOS.to_string());
                }
            }
            out
        }
    }
}

/// Token ↔ id map. Ids are dense in `0..len()` and `<unk>` is always last.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    level: Level,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    level: Level,
    tokens: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;
    fn try_from(r: VocabRepr) -> Result<Self> {
        Vocab::from_tokens(r.level, r.tokens)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            level: v.level,
            tokens: v.tokens,
        }
    }
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.level == other.level && self.tokens == other.tokens
    }
}

impl Vocab {
    /// Rebuilds a vocabulary from its token list, which must end in `<unk>`
    /// and contain no duplicates.
    pub fn from_tokens(level: Level, tokens: Vec<String>) -> Result<Self> {
        if tokens.last().map(String::as_str) != Some(UNK) {
            return Err(Error::Config(format!("vocabulary must end with {UNK}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { level, tokens, index })
    }

    /// Ranks tokens by descending frequency, ties broken lexicographically,
    /// keeps the top `max_size - 1` and appends `<unk>`.
    ///
    /// A literal `<unk>` in the text is counted as the unknown token, not
    /// ranked.
    pub fn build(text: &str, level: Level, max_size: Option<usize>) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        if let Some(m) = max_size {
            if m < 2 {
                return Err(Error::Config(format!("vocabulary cap must be at least 2, got {m}")));
            }
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in tokenize(text, level) {
            if t != UNK {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(m) = max_size {
            ranked.truncate(m - 1);
        }
        let mut tokens: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
        tokens.push(UNK.to_string());
        Vocab::from_tokens(level, tokens)
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk_id())
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text, self.level)
            .iter()
            .map(|t| self.id_of(t))
            .collect()
    }

    /// Inverse of [`encode`](Self::encode) on in-vocabulary text. At word
    /// level, tokens are joined by single spaces and `<eos>` becomes a newline.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        let mut line_start = true;
        for &id in ids {
            let tok = self.token_of(id).ok_or(Error::TokenOutOfRange { id, vocab: self.len() })?;
            match self.level {
                Level::Char => out.push_str(tok),
                Level::Word if tok == EOS => {
                    out.push('\n');
                    line_start = true;
                }
                Level::Word => {
                    if !line_start {
                        out.push(' ');
                    }
                    out.push_str(tok);
                    line_start = false;
                }
            }
        }
        Ok(out)
    }

    /// Number of tokens in `text` that are not in the vocabulary.
    pub fn count_oov(&self, text: &str) -> usize {
        tokenize(text, self.level)
            .iter()
            .filter(|t| !self.contains(t))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// File names of the three splits inside a corpus directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: String,
    pub valid: String,
    pub test: String,
}

impl Default for SplitFiles {
    fn default() -> Self {
        SplitFiles {
            train: "train.txt".into(),
            valid: "valid.txt".into(),
            test: "test.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    /// Hex SHA-256 over the three split files.
    pub hash: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub vocab: Vocab,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[usize] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Builds a corpus from in-memory texts, for tests and synthetic data.
    pub fn from_texts(train: &str, valid: &str, test: &str, level: Level, cap: Option<usize>) -> Result<Self> {
        let vocab = Vocab::build(train, level, cap)?;
        let mut h = Sha256::new();
        for (name, text) in [("train", train), ("valid", valid), ("test", test)] {
            hash_part(&mut h, name, text.as_bytes());
        }
        Ok(Corpus {
            train: vocab.encode(train),
            valid: vocab.encode(valid),
            test: vocab.encode(test),
            provenance: Provenance {
                source: PathBuf::from("<memory>"),
                hash: hex::encode(h.finalize()),
            },
            vocab,
        })
    }
}

fn hash_part(h: &mut Sha256, name: &str, bytes: &[u8]) {
    h.update(name.as_bytes());
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

fn read_text(path: &Path) -> Result<(String, Vec<u8>)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::Utf8 {
            path: path.to_path_buf(),
            offset: e.valid_up_to(),
        })?
        .to_string();
    Ok((text, bytes))
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
pub fn load_corpus(dir: &Path, level: Level, cap: Option<usize>) -> Result<Corpus> {
    load_corpus_with(dir, &SplitFiles::default(), level, cap)
}

pub fn load_corpus_with(dir: &Path, files: &SplitFiles, level: Level, cap: Option<usize>) -> Result<Corpus> {
    let mut h = Sha256::new();
    let mut texts = Vec::with_capacity(3);
    for name in [&files.train, &files.valid, &files.test] {
        let (text, bytes) = read_text(&dir.join(name))?;
        hash_part(&mut h, name, &bytes);
        texts.push(text);
    }
    let vocab = Vocab::build(&texts[0], level, cap)?;
    Ok(Corpus {
        train: vocab.encode(&texts[0]),
        valid: vocab.encode(&texts[1]),
        test: vocab.encode(&texts[2]),
        provenance: Provenance {
            source: dir.to_path_buf(),
            hash: hex::encode(h.finalize()),
        },
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_vocab_orders_by_frequency() {
        let v = Vocab::build("aab", Level::Char, None).unwrap();
        assert_eq!(v.tokens(), &["a", "b", UNK]);
        assert!(v.id_of("a") < v.id_of("b"));
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocab::build("cba", Level::Char, None).unwrap();
        assert_eq!(v.tokens(), &["a", "b", "c", UNK]);
    }

    #[test]
    fn word_cap_maps_rest_to_unk() {
        let v = Vocab::build("x y x", Level::Word, Some(2)).unwrap();
        assert_eq!(v.tokens(), &["x", UNK]);
        assert_eq!(v.id_of("y"), v.unk_id());
    }

    #[test]
    fn literal_unk_is_the_unknown_token() {
        let v = Vocab::build("a <unk> b <unk>\n", Level::Word, Some(3)).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.tokens(), &[EOS, "a", UNK]);
    }

    #[test]
    fn word_level_marks_newlines() {
        assert_eq!(tokenize("a b\nc\n", Level::Word), vec!["a", "b", EOS, "c", EOS]);
        assert_eq!(tokenize("a b", Level::Word), vec!["a", "b"]);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(Vocab::build("", Level::Char, None), Err(Error::EmptyText)));
    }

    #[test]
    fn encode_empty_is_empty() {
        let v = Vocab::build("abc", Level::Char, None).unwrap();
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn round_trips() {
        let v = Vocab::build("héllo wörld\n", Level::Char, None).unwrap();
        assert_eq!(v.decode(&v.encode("wöll\nhé")).unwrap(), "wöll\nhé");
        let w = Vocab::build("the cat sat\non the mat\n", Level::Word, None).unwrap();
        let t = "the mat sat\ncat on the\n";
        assert_eq!(w.decode(&w.encode(t)).unwrap(), t);
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let v = Vocab::build("ab", Level::Char, None).unwrap();
        assert!(matches!(v.decode(&[3]), Err(Error::TokenOutOfRange { id: 3, vocab: 3 })));
    }

    #[test]
    fn serde_rebuilds_index() {
        let v = Vocab::build("hello", Level::Char, None).unwrap();
        let back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id_of("l"), v.id_of("l"));
    }
}
