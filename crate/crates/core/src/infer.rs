//! Greedy decoding, beam search, and an exhaustive search used as a test
//! oracle.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::data::{Segment, Segmentation, Sentence};
use crate::error::{Error, Result};
use crate::model::{argmax, DecoderState, EncoderOutput, Forward, Mode, Model};

/// Longest sentence the exhaustive search accepts.
pub const ORACLE_MAX_LEN: usize = 12;

/// One emitted segment with the work and probabilities behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeStep {
    pub segment: Segment<usize>,
    /// Size of the span candidate set at this step.
    pub candidates: usize,
    pub span_logprob: f64,
    pub label_logprob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub segmentation: Segmentation<usize>,
    pub steps: Vec<DecodeStep>,
}

impl Decoded {
    fn from_steps(steps: Vec<DecodeStep>, n: usize) -> Result<Self> {
        let segmentation = Segmentation::new(steps.iter().map(|s| s.segment.clone()).collect(), n)?;
        Ok(Decoded { segmentation, steps })
    }

    /// Accumulated `Σ log Q^s + log Q^l` along the decode.
    pub fn score(&self) -> f64 {
        self.steps
            .iter()
            .fold(0.0, |acc, s| acc + s.span_logprob + s.label_logprob)
    }

    /// Number of decoder iterations, equal to the number of segments.
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Total number of spans scored across all iterations.
    pub fn scored_spans(&self) -> usize {
        self.steps.iter().map(|s| s.candidates).sum()
    }

    pub fn labeled(&self, model: &Model) -> Segmentation {
        model.vocab().decode_segmentation(&self.segmentation)
    }
}

/// Teacher-forced score of a segmentation: its total log-probability when
/// every step is conditioned on its own previous segments.
pub fn score(model: &Model, sentence: &Sentence, seg: &Segmentation<usize>) -> Result<f64> {
    let mut f = Forward::new(model, Mode::Eval);
    let enc = f.encode_sentence(sentence)?;
    let (total, _) = f.forced_log_likelihood(&enc, seg)?;
    Ok(f.tape.scalar(total))
}

/// Left-to-right greedy segmentation: at each cursor take the best span,
/// then the best label for it, and move past the span.
pub fn greedy_decode(model: &Model, sentence: &Sentence) -> Result<Decoded> {
    let mut f = Forward::new(model, Mode::Eval);
    let enc = f.encode_sentence(sentence)?;
    let n = enc.len();
    let mut state = f.initial_state();
    let mut prev: Option<Segment<usize>> = None;
    let mut steps = Vec::new();
    while state.cursor <= n {
        let emb = f.segment_embedding(&enc, prev.as_ref())?;
        state = f.decoder_step(&enc, &state, emb)?;
        let spans = f.span_scores(&enc, &state)?;
        let span_lp = f.tape.value(spans).data().to_vec();
        let t = argmax(&span_lp);
        let j = state.cursor + t;
        let labels = f.label_scores(&enc, &state, state.cursor, j)?;
        let label_lp = f.tape.value(labels).data();
        let l = argmax(label_lp);
        let segment = Segment::new(state.cursor, j, l);
        steps.push(DecodeStep {
            segment: segment.clone(),
            candidates: span_lp.len(),
            span_logprob: span_lp[t],
            label_logprob: label_lp[l],
        });
        state = state.advance(j);
        prev = Some(segment);
    }
    Decoded::from_steps(steps, n)
}

#[derive(Clone)]
struct Hypothesis {
    state: DecoderState,
    steps: Vec<DecodeStep>,
    score: f64,
    /// Follows the greedy path; kept in the beam so the result never scores
    /// below greedy decoding.
    greedy: bool,
}

impl Hypothesis {
    fn finished(&self, n: usize) -> bool {
        self.state.cursor > n
    }
}

/// Higher score first; equal scores fall back to the lexicographic order of
/// `(end, label)` sequences, matching greedy tie-breaking.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| {
        let key = |h: &Hypothesis| -> Vec<(usize, usize)> {
            h.steps.iter().map(|s| (s.segment.end, s.segment.label)).collect()
        };
        key(a).cmp(&key(b))
    })
}

/// Indices of the `k` largest values, best first, ties to the lower index.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn expand(f: &mut Forward, enc: &EncoderOutput, h: &Hypothesis, width: usize) -> Result<Vec<Hypothesis>> {
    let prev = h.steps.last().map(|s| s.segment.clone());
    let emb = f.segment_embedding(enc, prev.as_ref())?;
    let state = f.decoder_step(enc, &h.state, emb)?;
    let spans = f.span_scores(enc, &state)?;
    let span_lp = f.tape.value(spans).data().to_vec();
    let mut children = Vec::new();
    for (rank_t, t) in top_k(&span_lp, width).into_iter().enumerate() {
        let j = state.cursor + t;
        let labels = f.label_scores(enc, &state, state.cursor, j)?;
        let label_lp = f.tape.value(labels).data().to_vec();
        for (rank_l, l) in top_k(&label_lp, width).into_iter().enumerate() {
            let mut steps = h.steps.clone();
            steps.push(DecodeStep {
                segment: Segment::new(state.cursor, j, l),
                candidates: span_lp.len(),
                span_logprob: span_lp[t],
                label_logprob: label_lp[l],
            });
            children.push(Hypothesis {
                state: state.advance(j),
                steps,
                score: h.score + span_lp[t] + label_lp[l],
                greedy: h.greedy && rank_t == 0 && rank_l == 0,
            });
        }
    }
    Ok(children)
}

/// Beam search over partial segmentations ranked by accumulated log-probability.
///
/// Each hypothesis is extended by its `width` best spans, each paired with
/// its `width` best labels; the pool of extensions and finished hypotheses
/// is then cut back to `width`. The greedy path is never pruned, and width 1
/// reproduces [`greedy_decode`].
pub fn beam_decode(model: &Model, sentence: &Sentence, width: usize) -> Result<Decoded> {
    if width < 1 {
        return Err(Error::Domain("beam width must be at least 1".into()));
    }
    let mut f = Forward::new(model, Mode::Eval);
    let enc = f.encode_sentence(sentence)?;
    let n = enc.len();
    let initial = f.initial_state();
    let mut beam = vec![Hypothesis {
        state: initial,
        steps: Vec::new(),
        score: 0.0,
        greedy: true,
    }];
    let mut best: Option<Hypothesis> = None;
    while beam.iter().any(|h| !h.finished(n)) {
        let mut pool = Vec::new();
        for h in beam {
            if h.finished(n) {
                pool.push(h);
            } else {
                pool.extend(expand(&mut f, &enc, &h, width)?);
            }
        }
        pool.sort_by(rank);
        for h in pool.iter().filter(|h| h.finished(n)) {
            if best.as_ref().is_none_or(|b| rank(h, b) == Ordering::Less) {
                best = Some(h.clone());
            }
        }
        let greedy = pool.iter().position(|h| h.greedy);
        let mut kept: Vec<Hypothesis> = pool.iter().take(width).cloned().collect();
        if let Some(g) = greedy.filter(|&g| g >= width) {
            kept[width - 1] = pool[g].clone();
        }
        beam = kept;
    }
    for h in beam {
        if best.as_ref().is_none_or(|b| rank(&h, b) == Ordering::Less) {
            best = Some(h);
        }
    }
    let best = best.expect("the greedy hypothesis always finishes");
    Decoded::from_steps(best.steps, n)
}

/// Result of the exhaustive search.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub best: Decoded,
    /// Number of complete labeled segmentations scored.
    pub evaluated: usize,
}

struct Search<'a, 'm> {
    f: &'a mut Forward<'m>,
    enc: &'a EncoderOutput,
    labels: usize,
    evaluated: usize,
    best: Option<Hypothesis>,
}

impl Search<'_, '_> {
    fn visit(&mut self, h: Hypothesis) -> Result<()> {
        let n = self.enc.len();
        if h.finished(n) {
            self.evaluated += 1;
            if self.best.as_ref().is_none_or(|b| rank(&h, b) == Ordering::Less) {
                self.best = Some(h);
            }
            return Ok(());
        }
        for child in expand(self.f, self.enc, &h, n.max(self.labels))? {
            self.visit(child)?;
        }
        Ok(())
    }
}

/// Scores every labeled segmentation of the sentence under teacher-forced
/// conditioning and returns the best. Only for sentences of at most
/// [`ORACLE_MAX_LEN`] tokens.
pub fn exhaustive_oracle(model: &Model, sentence: &Sentence) -> Result<OracleResult> {
    let n = sentence.len();
    if n > ORACLE_MAX_LEN {
        return Err(Error::Domain(format!(
            "exhaustive search is limited to {ORACLE_MAX_LEN} tokens, got {n}"
        )));
    }
    let mut f = Forward::new(model, Mode::Eval);
    let enc = f.encode_sentence(sentence)?;
    let state = f.initial_state();
    let mut search = Search {
        f: &mut f,
        enc: &enc,
        labels: model.num_labels(),
        evaluated: 0,
        best: None,
    };
    search.visit(Hypothesis {
        state,
        steps: Vec::new(),
        score: 0.0,
        greedy: false,
    })?;
    let evaluated = search.evaluated;
    let best = search.best.expect("at least one segmentation exists");
    Ok(OracleResult {
        best: Decoded::from_steps(best.steps, n)?,
        evaluated,
    })
}

/// Decodes many sentences in parallel; `beam` of 1 is greedy decoding.
pub fn decode_all(model: &Model, sentences: &[Sentence], beam: usize) -> Result<Vec<Decoded>> {
    if beam < 1 {
        return Err(Error::Domain("beam width must be at least 1".into()));
    }
    sentences
        .par_iter()
        .map(|s| {
            if beam == 1 {
                greedy_decode(model, s)
            } else {
                beam_decode(model, s, beam)
            }
        })
        .collect()
}

/// Number of labeled segmentations of an `n`-token sentence with `labels`
/// labels: `labels · (1 + labels)^(n-1)`.
pub fn segmentation_count(n: usize, labels: usize) -> usize {
    labels * (1 + labels).pow(n.saturating_sub(1) as u32)
}
