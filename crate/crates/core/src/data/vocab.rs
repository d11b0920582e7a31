use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::column::Example;
use super::segment::{Segmentation, Sentence};
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Token, character and label index spaces.
///
/// Token and character ids 0 and 1 are padding and unknown. Label ids are
/// dense `0..labels.len()` with no reserved entries, since every label row
/// takes part in the label softmax.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    tokens: Vec<String>,
    chars: Vec<char>,
    labels: Vec<String>,
    token_index: HashMap<String, usize>,
    char_index: HashMap<char, usize>,
    label_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    chars: Vec<char>,
    labels: Vec<String>,
}

impl From<VocabFile> for Vocab {
    fn from(f: VocabFile) -> Self {
        Vocab::from_parts(f.tokens, f.chars, f.labels)
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile {
            tokens: v.tokens,
            chars: v.chars,
            labels: v.labels,
        }
    }
}

/// Token-id and character-id view of a sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSentence {
    pub tokens: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, chars: Vec<char>, labels: Vec<String>) -> Self {
        let token_index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let char_index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let label_index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Vocab {
            tokens,
            chars,
            labels,
            token_index,
            char_index,
            label_index,
        }
    }

    /// Builds the index spaces from a training corpus. Tokens seen fewer than
    /// `min_count` times map to unknown.
    pub fn build(corpus: &[Example], min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Domain("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut chars = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for ex in corpus {
            for tok in ex.sentence.tokens() {
                *counts.entry(tok).or_default() += 1;
                chars.extend(tok.chars());
            }
            labels.extend(ex.gold.segments().iter().map(|s| s.label.clone()));
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        // most frequent first, ties alphabetical
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let tokens = [PAD, UNK]
            .into_iter()
            .map(String::from)
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        // The reserved char slots hold placeholders that never occur in tokens.
        let chars = ['\u{0}', '\u{1}'].into_iter().chain(chars).collect();
        Ok(Vocab::from_parts(tokens, chars, labels.into_iter().collect()))
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.token_index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn char_id(&self, c: char) -> usize {
        match self.char_index.get(&c) {
            Some(&id) if id > UNK_ID => id,
            _ => UNK_ID,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn encode(&self, sentence: &Sentence) -> EncodedSentence {
        let tokens = sentence.tokens().iter().map(|t| self.token_id(t)).collect();
        let chars = (0..sentence.len())
            .map(|k| sentence.chars(k).iter().map(|&c| self.char_id(c)).collect())
            .collect();
        EncodedSentence { tokens, chars }
    }

    pub fn encode_segmentation(&self, seg: &Segmentation) -> Result<Segmentation<usize>> {
        seg.map_labels(|l| {
            self.label_id(l)
                .ok_or_else(|| Error::Validation(format!("label {l:?} is not in the label vocabulary")))
        })
    }

    pub fn decode_segmentation(&self, seg: &Segmentation<usize>) -> Segmentation {
        seg.map_labels(|&l| Ok(self.label(l).to_string()))
            .expect("label ids come from this vocabulary")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: Vocab = serde_json::from_str(&text)?;
        if vocab.tokens.len() < 2 || vocab.chars.len() < 2 || vocab.labels.is_empty() {
            return Err(Error::Validation(format!(
                "{}: vocabulary lacks reserved entries or labels",
                path.display()
            )));
        }
        Ok(vocab)
    }
}
