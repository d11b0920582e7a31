//! Column-format corpora, IOB conversion and vocabularies.

mod column;
mod iob;
mod segment;
mod vocab;

pub use column::{
    append_column, parse_column_file, parse_columns, parse_predictions, parse_tokens, read_corpus, to_examples, Example,
};
pub use iob::{iob_to_segments, segments_to_iob, Tag};
pub use segment::{Segment, Segmentation, Sentence, OUTSIDE};
pub use vocab::{EncodedSentence, Vocab, PAD_ID, UNK_ID};

pub(crate) use column::read_text;
