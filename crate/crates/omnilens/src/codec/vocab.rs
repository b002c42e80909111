//! The unified vocabulary: text subwords, coordinate bins, special markers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Names of the special markers, in id order.
pub const SPECIAL_NAMES: [&str; 7] =
    ["<bos>", "<eos>", "<pad>", "<no_object>", "<sep>", "<mask0>", "<mask1>"];

const MAX_SUBWORD: usize = 4;

/// The single discrete token space shared by every task.
///
/// Id layout (three disjoint contiguous ranges):
/// `[0, 7)` specials, `[7, 7 + bins)` coordinate bins, text subwords after.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnifiedVocabulary {
    bins: usize,
    text_tokens: BTreeMap<String, usize>,
    text_by_id: Vec<String>,
}

impl UnifiedVocabulary {
    pub const BOS: usize = 0;
    pub const EOS: usize = 1;
    pub const PAD: usize = 2;
    pub const NO_OBJECT: usize = 3;
    pub const SEP: usize = 4;
    pub const MASK_ZERO: usize = 5;
    pub const MASK_ONE: usize = 6;

    pub fn special_len(&self) -> usize {
        SPECIAL_NAMES.len()
    }

    pub fn coord_base(&self) -> usize {
        SPECIAL_NAMES.len()
    }

    pub fn coord_len(&self) -> usize {
        self.bins
    }

    pub fn text_base(&self) -> usize {
        self.coord_base() + self.bins
    }

    pub fn text_len(&self) -> usize {
        self.text_by_id.len()
    }

    pub fn total_size(&self) -> usize {
        self.text_base() + self.text_by_id.len()
    }

    pub fn coord_token(&self, bin: usize) -> Result<usize> {
        if bin >= self.bins {
            return Err(Error::Range(format!("bin {bin} out of range 0..{}", self.bins)));
        }
        Ok(self.coord_base() + bin)
    }

    pub fn is_coord(&self, id: usize) -> bool {
        id >= self.coord_base() && id < self.text_base()
    }

    pub fn coord_bin(&self, id: usize) -> Option<usize> {
        self.is_coord(id).then(|| id - self.coord_base())
    }

    pub fn is_text(&self, id: usize) -> bool {
        id >= self.text_base() && id < self.total_size()
    }

    pub fn subword(&self, id: usize) -> Option<&str> {
        self.is_text(id).then(|| self.text_by_id[id - self.text_base()].as_str())
    }

    /// Greedy longest-match subword split of one word.
    pub fn tokenize_word(&self, word: &str) -> Result<Vec<usize>> {
        let chars: Vec<char> = word.chars().collect();
        let mut ids = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut matched = None;
            let top = MAX_SUBWORD.min(chars.len() - i);
            for len in (1..=top).rev() {
                let piece: String = chars[i..i + len].iter().collect();
                if let Some(&id) = self.text_tokens.get(&piece) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    ids.push(id);
                    i += len;
                }
                None => {
                    return Err(Error::Vocabulary(format!(
                        "no subword covers {word:?} at position {i}"
                    )))
                }
            }
        }
        Ok(ids)
    }

    /// Tokenizes free text: words split on whitespace and commas, each word
    /// subword-tokenized, words joined by `SEP`.
    pub fn tokenize_text(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for word in text.split(|c: char| c.is_whitespace() || c == ',').filter(|w| !w.is_empty()) {
            if !ids.is_empty() {
                ids.push(Self::SEP);
            }
            ids.extend(self.tokenize_word(word)?);
        }
        Ok(ids)
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut s = String::new();
        for &id in ids {
            if id == Self::SEP {
                if !s.is_empty() {
                    s.push(' ');
                }
            } else if let Some(sw) = self.subword(id) {
                s.push_str(sw);
            }
        }
        s
    }

    /// Canonical text serialization: one token per line with its explicit id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        s.push_str("omnilens-vocab v1\n");
        let _ = writeln!(s, "bins={}", self.bins);
        for (id, name) in SPECIAL_NAMES.iter().enumerate() {
            let _ = writeln!(s, "{id}\tspecial\t{name}");
        }
        for b in 0..self.bins {
            let _ = writeln!(s, "{}\tcoord\t<bin{b}>", self.coord_base() + b);
        }
        for (i, sw) in self.text_by_id.iter().enumerate() {
            let _ = writeln!(s, "{}\ttext\t{sw}", self.text_base() + i);
        }
        s
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        let mut lines = s.lines();
        match lines.next() {
            Some("omnilens-vocab v1") => {}
            other => return Err(Error::Format(format!("bad vocab header: {other:?}"))),
        }
        let bins: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("bins="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("missing bins= line".into()))?;
        let mut text_by_id = Vec::new();
        let text_base = SPECIAL_NAMES.len() + bins;
        for line in lines {
            let mut parts = line.splitn(3, '\t');
            let id: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad vocab line: {line:?}")))?;
            let kind = parts.next().unwrap_or("");
            let tok = parts.next().unwrap_or("");
            if kind == "text" {
                if id != text_base + text_by_id.len() {
                    return Err(Error::Format(format!("non-contiguous text id {id}")));
                }
                text_by_id.push(tok.to_string());
            }
        }
        let text_tokens =
            text_by_id.iter().enumerate().map(|(i, s)| (s.clone(), text_base + i)).collect();
        Ok(Self { bins, text_tokens, text_by_id })
    }

    /// SHA-256 of the canonical serialization; checkpoints refuse to load
    /// against a different hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_file_string().as_bytes());
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Builds the vocabulary for a class corpus: the text table holds every
/// character n-gram (n <= 4) of every corpus name, so greedy longest-match
/// always covers the names it was built from.
pub fn build_vocabulary(class_corpus: &[String], bins: usize) -> Result<UnifiedVocabulary> {
    if class_corpus.is_empty() {
        return Err(Error::Config("class corpus must be non-empty".into()));
    }
    if bins == 0 {
        return Err(Error::Config("bins must be positive".into()));
    }
    let mut subwords: Vec<String> = Vec::new();
    for name in class_corpus {
        if name.is_empty() {
            return Err(Error::Config("empty class name in corpus".into()));
        }
        if name.contains(|c: char| c.is_whitespace() || c == ',' || c == '\t') {
            return Err(Error::Config(format!("class name {name:?} contains separators")));
        }
        let chars: Vec<char> = name.chars().collect();
        for n in 1..=MAX_SUBWORD.min(chars.len()) {
            for start in 0..=chars.len() - n {
                subwords.push(chars[start..start + n].iter().collect());
            }
        }
    }
    subwords.sort();
    subwords.dedup();
    let text_base = SPECIAL_NAMES.len() + bins;
    let text_tokens =
        subwords.iter().enumerate().map(|(i, s)| (s.clone(), text_base + i)).collect();
    Ok(UnifiedVocabulary { bins, text_tokens, text_by_id: subwords })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn counting_contract() {
        let v = build_vocabulary(
            &["polyp".into(), "adenoma".into(), "cancer".into()],
            1000,
        )
        .unwrap();
        assert_eq!(v.coord_len(), 1000);
        assert!(v.text_len() >= 3);
        for name in SPECIAL_NAMES.iter().take(5) {
            assert!(SPECIAL_NAMES.contains(name));
        }
        assert_eq!(v.total_size(), 7 + 1000 + v.text_len());
    }

    #[test]
    fn deterministic_build() {
        let a = build_vocabulary(&["polyp".into()], 1000).unwrap();
        let b = build_vocabulary(&["polyp".into()], 1000).unwrap();
        assert_eq!(a.to_file_string(), b.to_file_string());
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn single_letter_corpus_matches_enumeration_oracle() {
        // independent oracle: unique substrings of length 1..=4 over the corpus
        let corpus: Vec<String> = ('a'..='z').map(|c| c.to_string()).collect();
        let mut oracle = BTreeSet::new();
        for name in &corpus {
            let cs: Vec<char> = name.chars().collect();
            for n in 1..=4usize.min(cs.len()) {
                for s in 0..=cs.len() - n {
                    oracle.insert(cs[s..s + n].iter().collect::<String>());
                }
            }
        }
        let v = build_vocabulary(&corpus, 1000).unwrap();
        assert_eq!(v.text_len(), oracle.len());
        assert_eq!(v.text_len(), 26);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(build_vocabulary(&[], 1000).is_err());
    }

    #[test]
    fn disjoint_id_ranges() {
        let v = build_vocabulary(&["polyp".into(), "ulcerative-colitis".into()], 50).unwrap();
        let mut seen = BTreeSet::new();
        for id in 0..v.special_len() {
            assert!(seen.insert(id));
        }
        for b in 0..v.coord_len() {
            assert!(seen.insert(v.coord_token(b).unwrap()));
        }
        for id in v.text_base()..v.total_size() {
            assert!(v.is_text(id));
            assert!(seen.insert(id));
        }
        assert_eq!(seen.len(), v.total_size());
    }

    #[test]
    fn tokenize_round_trip_and_serialization() {
        let corpus =
            vec!["polyp".to_string(), "adenoma".to_string(), "ulcerative-colitis".to_string()];
        let v = build_vocabulary(&corpus, 100).unwrap();
        for name in &corpus {
            let ids = v.tokenize_word(name).unwrap();
            assert_eq!(&v.detokenize(&ids), name);
        }
        let reloaded = UnifiedVocabulary::from_file_string(&v.to_file_string()).unwrap();
        assert_eq!(reloaded, v);
        assert_eq!(reloaded.hash(), v.hash());
    }

    #[test]
    fn tokenize_text_uses_sep() {
        let v = build_vocabulary(&["polyp".into(), "cancer".into()], 10).unwrap();
        let ids = v.tokenize_text("polyp, cancer").unwrap();
        assert!(ids.contains(&UnifiedVocabulary::SEP));
        assert!(v.tokenize_text("").unwrap().is_empty());
        assert!(v.tokenize_text("zzz?").is_err());
    }
}
