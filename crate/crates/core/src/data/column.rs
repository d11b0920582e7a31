//! Whitespace-separated column files with blank-line sentence breaks.

use std::fs;
use std::path::Path;

use super::iob::{iob_to_segments, Tag};
use super::segment::{Segmentation, Sentence};
use crate::error::{Error, Result};

/// A sentence paired with its gold segmentation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub sentence: Sentence,
    pub gold: Segmentation,
}

/// Non-blank lines of one block, as `(1-based line number, fields)`.
type Block<'a> = Vec<(usize, Vec<&'a str>)>;

fn blocks(text: &str) -> Vec<Block<'_>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push((k + 1, fields));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn field<'a>(line: usize, fields: &[&'a str], column: usize) -> Result<&'a str> {
    fields.get(column).copied().ok_or_else(|| Error::Parse {
        line,
        message: format!("expected at least {} fields, found {}", column + 1, fields.len()),
    })
}

fn tag(line: usize, raw: &str) -> Result<Tag> {
    raw.parse().map_err(|tag| Error::Scheme { line, tag })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses sentences and IOB tags from column text. Columns are 0-based; a
/// `tag_column` of `None` selects the last field of each line.
pub fn parse_columns(text: &str, token_column: usize, tag_column: Option<usize>) -> Result<Vec<(Sentence, Vec<Tag>)>> {
    blocks(text)
        .into_iter()
        .map(|block| {
            let mut tokens = Vec::with_capacity(block.len());
            let mut tags = Vec::with_capacity(block.len());
            for (line, fields) in &block {
                tokens.push(field(*line, fields, token_column)?);
                let tag_column = tag_column.unwrap_or(fields.len() - 1);
                tags.push(tag(*line, field(*line, fields, tag_column)?)?);
            }
            Ok((Sentence::new(tokens)?, tags))
        })
        .collect()
}

pub fn parse_column_file(
    path: impl AsRef<Path>,
    token_column: usize,
    tag_column: Option<usize>,
) -> Result<Vec<(Sentence, Vec<Tag>)>> {
    parse_columns(&read_text(path.as_ref())?, token_column, tag_column)
}

/// Converts parsed records into examples with gold segmentations.
pub fn to_examples(records: Vec<(Sentence, Vec<Tag>)>) -> Result<Vec<Example>> {
    records
        .into_iter()
        .map(|(sentence, tags)| {
            Ok(Example {
                gold: iob_to_segments(&tags)?,
                sentence,
            })
        })
        .collect()
}

/// Reads a tagged corpus and converts each tag sequence to segments.
pub fn read_corpus(path: impl AsRef<Path>, token_column: usize, tag_column: Option<usize>) -> Result<Vec<Example>> {
    to_examples(parse_column_file(path, token_column, tag_column)?)
}

/// Sentences of a column file, ignoring any tag columns.
pub fn parse_tokens(text: &str, token_column: usize) -> Result<Vec<Sentence>> {
    blocks(text)
        .into_iter()
        .map(|block| {
            let tokens = block
                .iter()
                .map(|(line, fields)| field(*line, fields, token_column))
                .collect::<Result<Vec<_>>>()?;
            Sentence::new(tokens)
        })
        .collect()
}

/// Gold and predicted tag sequences from a prediction file whose last two
/// columns are `gold predicted`.
pub fn parse_predictions(text: &str) -> Result<Vec<(Vec<Tag>, Vec<Tag>)>> {
    blocks(text)
        .into_iter()
        .map(|block| {
            let mut gold = Vec::with_capacity(block.len());
            let mut pred = Vec::with_capacity(block.len());
            for (line, fields) in &block {
                if fields.len() < 3 {
                    return Err(Error::Parse {
                        line: *line,
                        message: format!(
                            "expected `token ... gold predicted`, found {} fields",
                            fields.len()
                        ),
                    });
                }
                gold.push(tag(*line, fields[fields.len() - 2])?);
                pred.push(tag(*line, fields[fields.len() - 1])?);
            }
            Ok((gold, pred))
        })
        .collect()
}

/// Appends one column to every non-blank line, keeping blank lines in place.
/// `column` yields the values in reading order.
pub fn append_column(text: &str, mut column: impl FnMut() -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(text.len() * 2);
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            out.push_str(line);
        } else {
            let value = column().ok_or_else(|| Error::Parse {
                line: k + 1,
                message: "ran out of predicted tags".into(),
            })?;
            out.push_str(line.trim_end());
            out.push(' ');
            out.push_str(&value);
        }
        out.push('\n');
    }
    Ok(out)
}
