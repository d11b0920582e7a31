//! Synthetic corpora whose segmentations follow fixed token rules.
//!
//! Segments are determined from tokens alone:
//!
//! * a maximal run of digit tokens is one `NUM` segment;
//! * an optional determiner, any adjectives and a closing noun form an `NP`;
//! * an optional auxiliary and a verb form a `VP`;
//! * a preposition is a one-token `PP`;
//! * punctuation and a few function words are one-token `O` segments;
//! * marker tokens are one-token segments labeled `MA` and `MB` in
//!   alternation within a sentence, starting from `MA`. Their label depends
//!   on earlier segments rather than on the token itself.

use std::fs;
use std::path::Path;

use crate::autodiff::Rng;
use crate::data::{segments_to_iob, Example, Segment, Segmentation, Sentence, OUTSIDE};
use crate::error::{Error, Result};

const DET: &[&str] = &["the", "this", "that", "some", "every"];
const ADJ: &[&str] = &["big", "small", "red", "old", "new", "quick", "green", "tall"];
const NOUN: &[&str] = &["cat", "dog", "house", "tree", "car", "bird", "river", "city", "book", "road"];
const AUX: &[&str] = &["will", "can", "must", "has"];
const VERB: &[&str] = &["run", "see", "eat", "build", "take", "find", "move", "hold"];
const PREP: &[&str] = &["in", "on", "under", "near", "with"];
const OUT: &[&str] = &["a", "b", ",", ".", "and", "or"];
const DIGIT: &[&str] = &["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
const MARK: &[&str] = &["ka", "ko", "ku"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Det,
    Adj,
    Noun,
    Aux,
    Verb,
    Prep,
    Out,
    Digit,
    Mark,
}

fn class(token: &str) -> Option<Class> {
    let table: [(&[&str], Class); 9] = [
        (DET, Class::Det),
        (ADJ, Class::Adj),
        (NOUN, Class::Noun),
        (AUX, Class::Aux),
        (VERB, Class::Verb),
        (PREP, Class::Prep),
        (OUT, Class::Out),
        (DIGIT, Class::Digit),
        (MARK, Class::Mark),
    ];
    table
        .iter()
        .find(|(words, _)| words.contains(&token))
        .map(|&(_, c)| c)
}

/// Which rule families a corpus uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuleSet {
    /// Include marker tokens, whose labels alternate across the sentence.
    pub alternating_marks: bool,
    /// Probability that a phrase is a marker, when markers are enabled.
    pub mark_rate: f64,
    pub min_phrases: usize,
    pub max_phrases: usize,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            alternating_marks: true,
            mark_rate: 0.25,
            min_phrases: 3,
            max_phrases: 8,
        }
    }
}

impl RuleSet {
    /// The gold segmentation the rules assign to `tokens`.
    pub fn segment(&self, tokens: &[&str]) -> Result<Segmentation> {
        let classes = tokens
            .iter()
            .map(|t| class(t).ok_or_else(|| Error::Domain(format!("token {t:?} is not in the rule lexicon"))))
            .collect::<Result<Vec<_>>>()?;
        let n = tokens.len();
        let mut segments = Vec::new();
        let mut marks = 0;
        let mut k = 0;
        while k < n {
            let start = k;
            let label = match classes[k] {
                Class::Digit => {
                    while k + 1 < n && classes[k + 1] == Class::Digit {
                        k += 1;
                    }
                    "NUM".to_string()
                }
                Class::Det | Class::Adj | Class::Noun => {
                    if classes[k] == Class::Det {
                        k += 1;
                    }
                    while k < n && classes[k] == Class::Adj {
                        k += 1;
                    }
                    if k >= n || classes[k] != Class::Noun {
                        return Err(Error::Domain(format!("noun phrase starting at token {} has no noun", start + 1)));
                    }
                    "NP".to_string()
                }
                Class::Aux | Class::Verb => {
                    if classes[k] == Class::Aux {
                        k += 1;
                        if k >= n || classes[k] != Class::Verb {
                            return Err(Error::Domain(format!("auxiliary at token {} has no verb", start + 1)));
                        }
                    }
                    "VP".to_string()
                }
                Class::Prep => "PP".to_string(),
                Class::Out => OUTSIDE.to_string(),
                Class::Mark => {
                    marks += 1;
                    if marks % 2 == 1 { "MA" } else { "MB" }.to_string()
                }
            };
            segments.push(Segment::new(start + 1, k + 1, label));
            k += 1;
        }
        Segmentation::new(segments, n)
    }

    fn phrase(&self, rng: &mut Rng, prev: Option<&str>, out: &mut Vec<&'static str>) -> &'static str {
        let pick = |rng: &mut Rng, words: &[&'static str]| words[rng.below(words.len())];
        loop {
            let kind = if self.alternating_marks && rng.next_f64() < self.mark_rate {
                "MARK"
            } else {
                let r = rng.next_f64();
                if r < 0.46 {
                    "NP"
                } else if r < 0.64 {
                    "VP"
                } else if r < 0.82 {
                    "NUM"
                } else if r < 0.91 {
                    "PP"
                } else {
                    "O"
                }
            };
            // adjacent digit runs would merge into one segment
            if kind == "NUM" && prev == Some("NUM") {
                continue;
            }
            match kind {
                "NP" => {
                    if rng.next_f64() < 0.7 {
                        out.push(pick(rng, DET));
                    }
                    for _ in 0..rng.below(4) {
                        out.push(pick(rng, ADJ));
                    }
                    out.push(pick(rng, NOUN));
                }
                "VP" => {
                    if rng.next_f64() < 0.5 {
                        out.push(pick(rng, AUX));
                    }
                    out.push(pick(rng, VERB));
                }
                "NUM" => {
                    for _ in 0..2 + rng.below(4) {
                        out.push(pick(rng, DIGIT));
                    }
                }
                "PP" => out.push(pick(rng, PREP)),
                "O" => out.push(pick(rng, OUT)),
                _ => out.push(pick(rng, MARK)),
            }
            return kind;
        }
    }

    /// One random sentence with its rule-assigned segmentation.
    pub fn sentence(&self, rng: &mut Rng) -> Result<Example> {
        let phrases = self.min_phrases + rng.below(self.max_phrases - self.min_phrases + 1);
        let mut tokens = Vec::new();
        let mut prev = None;
        for _ in 0..phrases {
            prev = Some(self.phrase(rng, prev, &mut tokens));
        }
        let gold = self.segment(&tokens)?;
        Ok(Example {
            sentence: Sentence::new(tokens)?,
            gold,
        })
    }
}

/// Train, dev and test splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthCorpus {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

/// Generates `n_sentences` sentences and splits them 80/10/10, with at least
/// one sentence in each split.
pub fn generate(rules: &RuleSet, n_sentences: usize, seed: u64) -> Result<SynthCorpus> {
    if n_sentences < 3 {
        return Err(Error::Domain(format!("need at least 3 sentences to split, got {n_sentences}")));
    }
    if rules.min_phrases == 0 || rules.min_phrases > rules.max_phrases {
        return Err(Error::Domain("phrase count range is empty".into()));
    }
    if !(0.0..1.0).contains(&rules.mark_rate) {
        return Err(Error::Domain(format!("mark rate {} is outside [0, 1)", rules.mark_rate)));
    }
    let root = Rng::new(seed).split("synth");
    let all = (0..n_sentences)
        .map(|k| rules.sentence(&mut root.split_index(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let held = (n_sentences / 10).max(1);
    let train_len = n_sentences - 2 * held;
    let mut it = all.into_iter();
    let train = it.by_ref().take(train_len).collect();
    let dev = it.by_ref().take(held).collect();
    let test = it.collect();
    Ok(SynthCorpus { train, dev, test })
}

/// Renders examples as two-column `token tag` text.
pub fn to_column_text(corpus: &[Example]) -> String {
    let mut out = String::new();
    for ex in corpus {
        for (tok, tag) in ex.sentence.tokens().iter().zip(segments_to_iob(&ex.gold)) {
            out.push_str(tok);
            out.push(' ');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

impl SynthCorpus {
    /// Writes `train.txt`, `dev.txt` and `test.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, split) in [("train.txt", &self.train), ("dev.txt", &self.dev), ("test.txt", &self.test)] {
            let path = dir.join(name);
            fs::write(&path, to_column_text(split)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn mean_segment_len(&self) -> f64 {
        let all = self.train.iter().chain(&self.dev).chain(&self.test);
        let (tokens, segments) = all.fold((0, 0), |(t, s), ex| (t + ex.sentence.len(), s + ex.gold.len()));
        tokens as f64 / segments as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{iob_to_segments, parse_columns, to_examples};

    #[test]
    fn digit_runs_are_one_segment() {
        let seg = RuleSet::default().segment(&["a", "1", "2", "3", "b"]).unwrap();
        assert_eq!(seg.to_string(), "(1,1,O)(2,4,NUM)(5,5,O)");
    }

    #[test]
    fn markers_alternate() {
        let seg = RuleSet::default()
            .segment(&["ka", "the", "cat", "ku", "in", "ko"])
            .unwrap();
        assert_eq!(seg.to_string(), "(1,1,MA)(2,3,NP)(4,4,MB)(5,5,PP)(6,6,MA)");
    }

    #[test]
    fn incomplete_phrases_rejected() {
        assert!(RuleSet::default().segment(&["the", "big"]).is_err());
        assert!(RuleSet::default().segment(&["will", "cat"]).is_err());
        assert!(RuleSet::default().segment(&["xyz"]).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible_and_valid() {
        let a = generate(&RuleSet::default(), 60, 4).unwrap();
        assert_eq!(a, generate(&RuleSet::default(), 60, 4).unwrap());
        assert_ne!(a, generate(&RuleSet::default(), 60, 5).unwrap());
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (48, 6, 6));
        let mut lengths = std::collections::BTreeSet::new();
        for ex in a.train.iter().chain(&a.dev).chain(&a.test) {
            assert_eq!(iob_to_segments(&segments_to_iob(&ex.gold)).unwrap(), ex.gold);
            let tokens: Vec<&str> = ex.sentence.tokens().iter().map(String::as_str).collect();
            assert_eq!(RuleSet::default().segment(&tokens).unwrap(), ex.gold);
            lengths.extend(ex.gold.segments().iter().map(|s| s.len()));
        }
        assert!((1..=5).all(|l| lengths.contains(&l)), "{lengths:?}");
    }

    #[test]
    fn column_text_parses_back() {
        let c = generate(&RuleSet::default(), 10, 1).unwrap();
        let text = to_column_text(&c.train);
        let back = to_examples(parse_columns(&text, 0, Some(1)).unwrap()).unwrap();
        assert_eq!(back, c.train);
    }

    #[test]
    fn too_few_sentences() {
        assert!(matches!(generate(&RuleSet::default(), 2, 0), Err(Error::Domain(_))));
        assert!(generate(&RuleSet::default(), 3, 0).is_ok());
    }
}
