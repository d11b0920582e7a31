use std::fmt;
use std::str::FromStr;

use super::segment::{Segment, Segmentation, OUTSIDE};
use crate::error::{Error, Result};

/// A token-level IOB tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn chunk_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == OUTSIDE {
            return Ok(Tag::Outside);
        }
        match s.split_once('-') {
            Some(("B", t)) if !t.is_empty() => Ok(Tag::Begin(t.to_string())),
            Some(("I", t)) if !t.is_empty() => Ok(Tag::Inside(t.to_string())),
            _ => Err(s.to_string()),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str(OUTSIDE),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

/// Groups IOB tags into segments.
///
/// Each `O` token becomes its own single-token segment labeled `O`. An
/// `I-X` that does not continue an open `X` chunk starts a new chunk, the
/// same leniency conlleval applies.
pub fn iob_to_segments(tags: &[Tag]) -> Result<Segmentation> {
    if tags.is_empty() {
        return Err(Error::Contract("cannot segment an empty tag sequence".into()));
    }
    let mut segments: Vec<Segment> = Vec::new();
    let mut open: Option<&str> = None;
    for (k, tag) in tags.iter().enumerate() {
        let pos = k + 1;
        match tag {
            Tag::Outside => {
                segments.push(Segment::new(pos, pos, OUTSIDE.to_string()));
                open = None;
            }
            Tag::Inside(t) if open == Some(t.as_str()) => {
                segments.last_mut().expect("open chunk").end = pos;
            }
            Tag::Begin(t) | Tag::Inside(t) => {
                segments.push(Segment::new(pos, pos, t.clone()));
                open = Some(t);
            }
        }
    }
    Segmentation::new(segments, tags.len())
}

/// Writes a segmentation as IOB tags; every token of an `O` segment is `O`.
pub fn segments_to_iob<L: AsRef<str>>(seg: &Segmentation<L>) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(seg.sentence_len());
    for s in seg.segments() {
        let label = s.label.as_ref();
        if label == OUTSIDE {
            tags.extend((s.start..=s.end).map(|_| Tag::Outside));
        } else {
            tags.push(Tag::Begin(label.to_string()));
            tags.extend((s.start + 1..=s.end).map(|_| Tag::Inside(label.to_string())));
        }
    }
    tags
}
