//! Chunk-level precision, recall and F1 with conlleval conventions.
//!
//! Segments labeled `O` are not chunks. Percentages are computed in floating
//! point the way conlleval computes them and printed with two decimals, so
//! displayed values agree with its output digit for digit.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::data::{iob_to_segments, segments_to_iob, Segment, Segmentation, Tag, OUTSIDE};
use crate::error::{Error, Result};

/// Default upper edges of the length buckets.
pub const DEFAULT_BUCKETS: [usize; 4] = [22, 44, 66, 88];

/// Chunk counts for one label or for the whole corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// `100·num/den` with two decimals, `0.00` when `den` is zero.
pub fn percent(num: usize, den: usize) -> String {
    format!("{:.2}", ratio(num, den))
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    /// `2PR/(P+R)`, mathematically `2·correct/(gold+predicted)`.
    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }

    pub fn precision_str(&self) -> String {
        percent(self.correct, self.predicted)
    }

    pub fn recall_str(&self) -> String {
        percent(self.correct, self.gold)
    }

    pub fn f1_str(&self) -> String {
        format!("{:.2}", self.f1())
    }

    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.correct += other.correct;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct F1Report {
    pub overall: Counts,
    pub labels: BTreeMap<String, Counts>,
    pub tokens: usize,
    pub correct_tags: usize,
}

/// Structured form of an [`F1Report`] for JSON output.
#[derive(Clone, Debug, Serialize)]
pub struct F1Record {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tokens: usize,
    #[serde(flatten)]
    pub counts: Counts,
    pub labels: BTreeMap<String, LabelRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelRecord {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

impl F1Report {
    pub fn precision(&self) -> f64 {
        self.overall.precision()
    }

    pub fn recall(&self) -> f64 {
        self.overall.recall()
    }

    pub fn f1(&self) -> f64 {
        self.overall.f1()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct_tags, self.tokens)
    }

    pub fn record(&self) -> F1Record {
        F1Record {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            accuracy: self.accuracy(),
            tokens: self.tokens,
            counts: self.overall,
            labels: self
                .labels
                .iter()
                .map(|(l, c)| {
                    let r = LabelRecord {
                        precision: c.precision(),
                        recall: c.recall(),
                        f1: c.f1(),
                        counts: *c,
                    };
                    (l.clone(), r)
                })
                .collect(),
        }
    }

    fn add_sentence(&mut self, gold: &Segmentation, pred: &Segmentation, gold_tags: &[Tag], pred_tags: &[Tag]) {
        let chunks = |s: &Segmentation| -> Vec<Segment> {
            s.segments().iter().filter(|x| x.label != OUTSIDE).cloned().collect()
        };
        let (g, p) = (chunks(gold), chunks(pred));
        for s in &g {
            self.labels.entry(s.label.clone()).or_default().gold += 1;
        }
        for s in &p {
            let c = self.labels.entry(s.label.clone()).or_default();
            c.predicted += 1;
            // both lists are sorted by start with no overlap
            if g.binary_search_by(|x| x.start.cmp(&s.start)).is_ok_and(|k| g[k] == *s) {
                c.correct += 1;
            }
        }
        self.tokens += gold_tags.len();
        self.correct_tags += gold_tags.iter().zip(pred_tags).filter(|(a, b)| a == b).count();
    }

    fn finish(mut self) -> Self {
        let mut overall = Counts::default();
        for c in self.labels.values() {
            overall.add(*c);
        }
        self.overall = overall;
        self
    }
}

impl fmt::Display for F1Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.overall;
        writeln!(
            f,
            "processed {} tokens with {} phrases; found: {} phrases; correct: {}.",
            self.tokens, o.gold, o.predicted, o.correct
        )?;
        writeln!(
            f,
            "accuracy: {:>6}%; precision: {:>6}%; recall: {:>6}%; FB1: {:>6}",
            percent(self.correct_tags, self.tokens),
            o.precision_str(),
            o.recall_str(),
            o.f1_str()
        )?;
        for (label, c) in &self.labels {
            writeln!(
                f,
                "{label:>17}: precision: {:>6}%; recall: {:>6}%; FB1: {:>6}  {}",
                c.precision_str(),
                c.recall_str(),
                c.f1_str(),
                c.predicted
            )?;
        }
        Ok(())
    }
}

fn check_aligned<A, B>(gold: &[A], pred: &[B], len: impl Fn(&A) -> usize, len_b: impl Fn(&B) -> usize) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
        if len(g) != len_b(p) {
            return Err(Error::Contract(format!(
                "sentence {} has {} gold tokens but {} predicted",
                k + 1,
                len(g),
                len_b(p)
            )));
        }
    }
    Ok(())
}

/// Scores predicted segmentations against gold ones.
pub fn chunk_f1(gold: &[Segmentation], pred: &[Segmentation]) -> Result<F1Report> {
    check_aligned(gold, pred, Segmentation::sentence_len, Segmentation::sentence_len)?;
    let mut report = F1Report::default();
    for (g, p) in gold.iter().zip(pred) {
        report.add_sentence(g, p, &segments_to_iob(g), &segments_to_iob(p));
    }
    Ok(report.finish())
}

/// Scores `(gold, predicted)` tag sequences the way conlleval reads a
/// prediction file: chunks come from the repaired tags, accuracy from the
/// raw tags.
pub fn tag_f1(pairs: &[(Vec<Tag>, Vec<Tag>)]) -> Result<F1Report> {
    let mut report = F1Report::default();
    for (k, (g, p)) in pairs.iter().enumerate() {
        if g.len() != p.len() || g.is_empty() {
            return Err(Error::Contract(format!(
                "sentence {} has {} gold tags and {} predicted",
                k + 1,
                g.len(),
                p.len()
            )));
        }
        report.add_sentence(&iob_to_segments(g)?, &iob_to_segments(p)?, g, p);
    }
    Ok(report.finish())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bucket {
    /// Inclusive token-count range; `hi` is `None` for the overflow bucket.
    pub lo: usize,
    pub hi: Option<usize>,
    pub sentences: usize,
    /// Absent when the bucket holds no sentences.
    pub report: Option<F1Report>,
}

impl Bucket {
    pub fn is_overflow(&self) -> bool {
        self.hi.is_none()
    }

    pub fn range(&self) -> String {
        match self.hi {
            Some(hi) => format!("{}-{hi}", self.lo),
            None => format!("{}+", self.lo),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketReport {
    pub buckets: Vec<Bucket>,
}

impl fmt::Display for BucketReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.buckets {
            let f1 = b.report.as_ref().map_or_else(|| "-".to_string(), |r| r.overall.f1_str());
            let flag = if b.is_overflow() { "  (overflow)" } else { "" };
            writeln!(f, "{:>12}  {:>6}  FB1: {f1:>6}{flag}", b.range(), format!("({})", b.sentences))?;
        }
        Ok(())
    }
}

/// Groups sentences by token count under the given upper edges and scores
/// each group. Sentences beyond the last edge land in an overflow bucket,
/// which is only listed when it is non-empty.
pub fn bucket_f1(gold: &[Segmentation], pred: &[Segmentation], edges: &[usize]) -> Result<BucketReport> {
    check_aligned(gold, pred, Segmentation::sentence_len, Segmentation::sentence_len)?;
    if edges.is_empty() || edges[0] == 0 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain(format!("bucket edges {edges:?} must be positive and strictly increasing")));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); edges.len() + 1];
    for (k, g) in gold.iter().enumerate() {
        let slot = edges.partition_point(|&e| e < g.sentence_len());
        members[slot].push(k);
    }
    let mut buckets = Vec::with_capacity(members.len());
    for (slot, idx) in members.iter().enumerate() {
        let lo = if slot == 0 { 1 } else { edges[slot - 1] + 1 };
        let hi = edges.get(slot).copied();
        if hi.is_none() && idx.is_empty() {
            continue;
        }
        let report = if idx.is_empty() {
            None
        } else {
            let g: Vec<Segmentation> = idx.iter().map(|&k| gold[k].clone()).collect();
            let p: Vec<Segmentation> = idx.iter().map(|&k| pred[k].clone()).collect();
            Some(chunk_f1(&g, &p)?)
        };
        buckets.push(Bucket {
            lo,
            hi,
            sentences: idx.len(),
            report,
        });
    }
    Ok(BucketReport { buckets })
}
