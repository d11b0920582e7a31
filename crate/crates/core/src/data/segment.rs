use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label used for tokens outside every chunk.
pub const OUTSIDE: &str = "O";

/// A tokenized input sentence with the characters of each token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
    chars: Vec<Vec<char>>,
}

impl Sentence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Domain("a sentence needs at least one token".into()));
        }
        if let Some(k) = tokens.iter().position(String::is_empty) {
            return Err(Error::Domain(format!("token {} is empty", k + 1)));
        }
        let chars = tokens.iter().map(|t| t.chars().collect()).collect();
        Ok(Sentence { tokens, chars })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Characters of the token at 0-based position `k`.
    pub fn chars(&self, k: usize) -> &[char] {
        &self.chars[k]
    }
}

/// A labeled span `(start, end, label)` with 1-based inclusive bounds.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment<L = String> {
    pub start: usize,
    pub end: usize,
    pub label: L,
}

impl<L> Segment<L> {
    pub fn new(start: usize, end: usize, label: L) -> Self {
        Segment { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl<L: fmt::Display> fmt::Display for Segment<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.start, self.end, self.label)
    }
}

/// Ordered segments that tile `1..=n` without gaps or overlap.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segmentation<L = String> {
    segments: Vec<Segment<L>>,
    n: usize,
}

impl<L> Segmentation<L> {
    pub fn new(segments: Vec<Segment<L>>, n: usize) -> Result<Self> {
        check_cover(&segments, n)?;
        Ok(Segmentation { segments, n })
    }

    pub fn segments(&self) -> &[Segment<L>] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<Segment<L>> {
        self.segments
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn map_labels<M>(&self, mut f: impl FnMut(&L) -> Result<M>) -> Result<Segmentation<M>> {
        let segments = self
            .segments
            .iter()
            .map(|s| Ok(Segment::new(s.start, s.end, f(&s.label)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Segmentation { segments, n: self.n })
    }
}

impl Segmentation<String> {
    /// True when every outside segment covers exactly one token, the form
    /// produced by [`iob_to_segments`](super::iob_to_segments).
    pub fn is_canonical(&self) -> bool {
        self.segments
            .iter()
            .all(|s| s.label != OUTSIDE || s.start == s.end)
    }
}

impl<L: fmt::Display> fmt::Display for Segmentation<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.segments {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

fn check_cover<L>(segments: &[Segment<L>], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Contract("segmentation of an empty sentence".into()));
    }
    let mut cursor = 1;
    for (k, s) in segments.iter().enumerate() {
        if s.start != cursor || s.end < s.start || s.end > n {
            return Err(Error::Contract(format!(
                "segment {} spans ({}, {}) but the cover expects it to start at {cursor} within 1..={n}",
                k + 1,
                s.start,
                s.end
            )));
        }
        cursor = s.end + 1;
    }
    if cursor != n + 1 {
        return Err(Error::Contract(format!(
            "segments cover 1..{} of a {n}-token sentence",
            cursor - 1
        )));
    }
    Ok(())
}
