use super::encoder::EncoderOutput;
use super::{DecoderParams, Forward};
use crate::autodiff::{lstm_cell, Var};
use crate::data::{Segment, Segmentation};
use crate::error::{Error, Result};

/// Decoder recurrence state plus the cursor `i_k` (1-based; `n + 1` means
/// the sentence is fully segmented).
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// `(h, c)` per recurrent layer; empty for the feed-forward decoder.
    pub layers: Vec<(Var, Var)>,
    /// `h^d_k` once a step has been taken.
    pub output: Option<Var>,
    pub cursor: usize,
}

impl DecoderState {
    /// State after selecting a segment ending at `j`.
    pub fn advance(&self, j: usize) -> DecoderState {
        DecoderState {
            cursor: j + 1,
            ..self.clone()
        }
    }
}

/// One teacher-forced step as seen by the decoder.
#[derive(Clone, Debug)]
pub struct ForcedStep {
    pub cursor: usize,
    /// The previous segment fed to the segment embedding.
    pub prev: Option<Segment<usize>>,
    pub candidates: usize,
    pub span_logprob: f64,
    pub label_logprob: f64,
}

/// Index of the first maximum, so ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

impl<'m> Forward<'m> {
    pub fn initial_state(&mut self) -> DecoderState {
        let layers = match &self.model.layout().decoder {
            DecoderParams::Lstm(stack) => stack
                .iter()
                .map(|w| (self.tape.zeros(w.hidden), self.tape.zeros(w.hidden)))
                .collect(),
            DecoderParams::Mlp { .. } => Vec::new(),
        };
        DecoderState {
            layers,
            output: None,
            cursor: 1,
        }
    }

    /// `h^s_{k-1}`: the start vector for the first step, otherwise the
    /// previous segment's phrase representation and label embedding, minus
    /// whichever parts are switched off.
    pub fn segment_embedding(&mut self, enc: &EncoderOutput, prev: Option<&Segment<usize>>) -> Result<Var> {
        let layout = self.model.layout();
        let config = self.model.config();
        let Some(prev) = prev else {
            return Ok(self.tape.param(layout.start));
        };
        if prev.label >= self.model.num_labels() {
            return Err(Error::Contract(format!("label id {} out of range", prev.label)));
        }
        let mut parts = Vec::with_capacity(2);
        if config.use_phrase {
            parts.push(self.phrase_repr(enc, prev.start, prev.end)?);
        } else if prev.start < 1 || prev.start > prev.end || prev.end > enc.len() {
            return Err(Error::Contract(format!(
                "segment ({}, {}) outside a {}-token sentence",
                prev.start,
                prev.end,
                enc.len()
            )));
        }
        if config.use_label {
            parts.push(self.tape.row(layout.label_emb, prev.label)?);
        }
        self.tape.concat(&parts)
    }

    /// Advances the decoder on input `h^s_{k-1} ⊕ h^p_{i_k,n}`. The cursor is
    /// left unchanged.
    pub fn decoder_step(&mut self, enc: &EncoderOutput, state: &DecoderState, seg_emb: Var) -> Result<DecoderState> {
        let n = enc.len();
        if state.cursor > n {
            return Err(Error::Contract(format!(
                "decoder stepped at cursor {} of a {n}-token sentence",
                state.cursor
            )));
        }
        let rest = self.phrase_repr(enc, state.cursor, n)?;
        let input = self.tape.concat(&[seg_emb, rest])?;
        match &self.model.layout().decoder {
            DecoderParams::Lstm(stack) => {
                let mut x = input;
                let mut layers = Vec::with_capacity(stack.len());
                for (w, &(h, c)) in stack.iter().zip(&state.layers) {
                    let (h, c) = lstm_cell(&mut self.tape, x, h, c, w)?;
                    layers.push((h, c));
                    x = h;
                }
                Ok(DecoderState {
                    layers,
                    output: Some(x),
                    cursor: state.cursor,
                })
            }
            DecoderParams::Mlp { w, b } => {
                let (w, b) = (self.tape.param(*w), self.tape.param(*b));
                let pre = self.tape.matvec(w, input)?;
                let pre = self.tape.add(pre, b)?;
                Ok(DecoderState {
                    layers: Vec::new(),
                    output: Some(self.tape.tanh(pre)),
                    cursor: state.cursor,
                })
            }
        }
    }

    fn stepped(&self, enc: &EncoderOutput, state: &DecoderState) -> Result<Var> {
        if state.cursor < 1 || state.cursor > enc.len() {
            return Err(Error::Contract(format!(
                "cursor {} outside 1..={}",
                state.cursor,
                enc.len()
            )));
        }
        state
            .output
            .ok_or_else(|| Error::Contract("decoder state has not been stepped".into()))
    }

    /// Log-probabilities over `(i_k, i_k) … (i_k, n)`; entry `t` is the span
    /// ending at `i_k + t`.
    pub fn span_scores(&mut self, enc: &EncoderOutput, state: &DecoderState) -> Result<Var> {
        let hd = self.stepped(enc, state)?;
        let ws = self.tape.param(self.model.layout().span_w);
        let u = self.tape.vecmat(hd, ws)?;
        let candidates = (state.cursor..=enc.len())
            .map(|j| self.phrase_repr(enc, state.cursor, j))
            .collect::<Result<Vec<_>>>()?;
        let stacked = self.tape.stack(&candidates)?;
        let scores = self.tape.matvec(stacked, u)?;
        self.tape.log_softmax(scores)
    }

    /// Log-probabilities over the label space for span `(i, j)`.
    pub fn label_scores(&mut self, enc: &EncoderOutput, state: &DecoderState, i: usize, j: usize) -> Result<Var> {
        let hd = self.stepped(enc, state)?;
        let layout = self.model.layout();
        let hp = self.phrase_repr(enc, i, j)?;
        let joint = self.tape.concat(&[hp, hd])?;
        let wl = self.tape.param(layout.label_w);
        let z = self.tape.matvec(wl, joint)?;
        let el = self.tape.param(layout.label_emb);
        let scores = self.tape.matvec(el, z)?;
        self.tape.log_softmax(scores)
    }

    /// Greedy choice of the next segment: best span, then the best label for
    /// that span. Ties go to the shorter span and then the lower label id.
    pub fn select_segment(&mut self, enc: &EncoderOutput, state: &DecoderState) -> Result<Segment<usize>> {
        let spans = self.span_scores(enc, state)?;
        let j = state.cursor + argmax(self.tape.value(spans).data());
        let labels = self.label_scores(enc, state, state.cursor, j)?;
        let label = argmax(self.tape.value(labels).data());
        Ok(Segment::new(state.cursor, j, label))
    }

    /// Total `Σ_k log Q^s + log Q^l` of `seg`, with every step conditioned on
    /// the segments of `seg` itself.
    pub fn forced_log_likelihood(
        &mut self,
        enc: &EncoderOutput,
        seg: &Segmentation<usize>,
    ) -> Result<(Var, Vec<ForcedStep>)> {
        if seg.sentence_len() != enc.len() {
            return Err(Error::Contract(format!(
                "segmentation covers {} tokens, sentence has {}",
                seg.sentence_len(),
                enc.len()
            )));
        }
        let mut state = self.initial_state();
        let mut prev: Option<&Segment<usize>> = None;
        let mut terms = Vec::with_capacity(2 * seg.len());
        let mut trace = Vec::with_capacity(seg.len());
        for s in seg.segments() {
            if s.label >= self.model.num_labels() {
                return Err(Error::Contract(format!("label id {} out of range", s.label)));
            }
            let emb = self.segment_embedding(enc, prev)?;
            state = self.decoder_step(enc, &state, emb)?;
            let spans = self.span_scores(enc, &state)?;
            let span_lp = self.tape.pick(spans, s.end - state.cursor)?;
            let labels = self.label_scores(enc, &state, s.start, s.end)?;
            let label_lp = self.tape.pick(labels, s.label)?;
            trace.push(ForcedStep {
                cursor: state.cursor,
                prev: prev.cloned(),
                candidates: self.tape.value(spans).len(),
                span_logprob: self.tape.scalar(span_lp),
                label_logprob: self.tape.scalar(label_lp),
            });
            terms.push(span_lp);
            terms.push(label_lp);
            state = state.advance(s.end);
            prev = Some(s);
        }
        Ok((self.tape.add_all(&terms)?, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::{DecoderKind, Mode, Model, TrainConfig};
    use super::*;
    use crate::data::Vocab;

    fn exp_sum(values: &[f64]) -> f64 {
        values.iter().map(|v| v.exp()).sum()
    }

    fn zero_param(m: &mut Model, name: &str) {
        let id = m.params().require(name).unwrap();
        m.params_mut().value_mut(id).data_mut().fill(0.0);
    }

    #[test]
    fn first_step_uses_start_vector() {
        let m = tiny_model(tiny_config());
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        let v = f.segment_embedding(&enc, None).unwrap();
        assert_eq!(f.tape.value(v), m.params().value(m.layout().start));
    }

    #[test]
    fn previous_segment_embedding_parts() {
        let m = tiny_model(tiny_config());
        let np = m.vocab().label_id("NP").unwrap();
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        let emb = f.segment_embedding(&enc, Some(&Segment::new(1, 2, np))).unwrap();
        let hp = f.phrase_repr(&enc, 1, 2).unwrap();
        let mut expect = f.tape.value(hp).data().to_vec();
        expect.extend(m.params().value(m.layout().label_emb).row(np));
        assert_eq!(f.tape.value(emb).data(), expect.as_slice());
        assert!(f.segment_embedding(&enc, Some(&Segment::new(8, 10, np))).is_err());

        let no_phrase = tiny_model(TrainConfig { use_phrase: false, ..tiny_config() });
        let mut f = Forward::new(&no_phrase, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        let emb = f.segment_embedding(&enc, Some(&Segment::new(1, 2, np))).unwrap();
        assert_eq!(f.tape.value(emb).data(), no_phrase.params().value(no_phrase.layout().label_emb).row(np));

        let no_label = tiny_model(TrainConfig { use_label: false, ..tiny_config() });
        let mut f = Forward::new(&no_label, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        let emb = f.segment_embedding(&enc, Some(&Segment::new(1, 2, np))).unwrap();
        assert_eq!(f.tape.value(emb).len(), 18);
    }

    #[test]
    fn candidate_sets_and_normalization() {
        let m = tiny_model(tiny_config());
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        let start = f.initial_state();
        let v = f.segment_embedding(&enc, None).unwrap();
        let mut state = f.decoder_step(&enc, &start, v).unwrap();
        for cursor in [1, 5, 9] {
            state.cursor = cursor;
            let spans = f.span_scores(&enc, &state).unwrap();
            let lp = f.tape.value(spans).data().to_vec();
            assert_eq!(lp.len(), 10 - cursor);
            assert!((exp_sum(&lp) - 1.0).abs() <= 1e-12);
            let labels = f.label_scores(&enc, &state, cursor, 9).unwrap();
            assert!((exp_sum(f.tape.value(labels).data()) - 1.0).abs() <= 1e-12);
        }
        let last = f.span_scores(&enc, &state).unwrap();
        assert_eq!(f.tape.value(last).data(), &[0.0]);
        state.cursor = 10;
        assert!(matches!(f.span_scores(&enc, &state), Err(Error::Contract(_))));
        assert!(matches!(f.decoder_step(&enc, &state, v), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_score_matrices_are_uniform() {
        let mut m = tiny_model(tiny_config());
        zero_param(&mut m, "span.w");
        zero_param(&mut m, "label.w");
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        let s0 = f.initial_state();
        let v = f.segment_embedding(&enc, None).unwrap();
        let state = f.decoder_step(&enc, &s0, v).unwrap();
        let spans = f.span_scores(&enc, &state).unwrap();
        for &x in f.tape.value(spans).data() {
            assert!((x + 9f64.ln()).abs() < 1e-12);
        }
        let labels = f.label_scores(&enc, &state, 1, 2).unwrap();
        for &x in f.tape.value(labels).data() {
            assert!((x + 3f64.ln()).abs() < 1e-12);
        }
        // uniform everywhere: ties resolve to the shortest span and label 0
        assert_eq!(f.select_segment(&enc, &state).unwrap(), Segment::new(1, 1, 0));
    }

    #[test]
    fn zero_decoder_weights_give_zero_hidden() {
        let mut m = tiny_model(tiny_config());
        for l in 0..2 {
            zero_param(&mut m, &format!("dec.{l}.w"));
            zero_param(&mut m, &format!("dec.{l}.b"));
        }
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        let mut state = f.initial_state();
        let mut prev = None;
        for seg in [Segment::new(1, 2, 0), Segment::new(3, 4, 2)] {
            let emb = f.segment_embedding(&enc, prev.as_ref()).unwrap();
            state = f.decoder_step(&enc, &state, emb).unwrap();
            assert!(f.tape.value(state.output.unwrap()).data().iter().all(|&x| x == 0.0));
            state = state.advance(seg.end);
            prev = Some(seg);
        }
    }

    #[test]
    fn previous_label_conditions_later_steps() {
        for decoder in [DecoderKind::Lstm, DecoderKind::Mlp] {
            let m = tiny_model(TrainConfig { decoder, ..tiny_config() });
            let run = |label: usize| {
                let mut f = Forward::new(&m, Mode::Eval);
                let enc = f.encode_sentence(&table_one().sentence).unwrap();
                let seg = Segmentation::new(
                    vec![Segment::new(1, 2, label), Segment::new(3, 4, 2), Segment::new(5, 9, 0)],
                    9,
                )
                .unwrap();
                let (_, trace) = f.forced_log_likelihood(&enc, &seg).unwrap();
                (trace[1].span_logprob, trace[2].span_logprob)
            };
            let (a, b) = (run(0), run(1));
            assert_ne!(a.0, b.0);
            if decoder == DecoderKind::Lstm {
                // the recurrence carries the label two steps on
                assert_ne!(a.1, b.1);
            } else {
                assert_eq!(a.1, b.1);
            }
        }
    }

    #[test]
    fn label_embedding_is_shared() {
        let base = tiny_model(tiny_config());
        let mut bumped = base.clone();
        let id = bumped.layout().label_emb;
        bumped.params_mut().value_mut(id).row_mut(1).iter_mut().for_each(|x| *x += 0.5);
        let probe = |m: &Model| {
            let mut f = Forward::new(m, Mode::Eval);
            let enc = f.encode_sentence(&table_one().sentence).unwrap();
            let emb = f.segment_embedding(&enc, Some(&Segment::new(1, 2, 1))).unwrap();
            let s0 = f.initial_state();
            let v = f.segment_embedding(&enc, None).unwrap();
            let st = f.decoder_step(&enc, &s0, v).unwrap();
            let labels = f.label_scores(&enc, &st, 1, 2).unwrap();
            (f.tape.value(emb).clone(), f.tape.value(labels).clone())
        };
        let (e0, l0) = probe(&base);
        let (e1, l1) = probe(&bumped);
        assert_ne!(e0, e1);
        assert_ne!(l0, l1);
    }

    #[test]
    fn single_label_single_token_is_forced() {
        let ex = example("x", "B-A");
        let vocab = Vocab::build(&[ex.clone()], 1).unwrap();
        let m = Model::new(tiny_config(), vocab).unwrap();
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = f.encode_sentence(&ex.sentence).unwrap();
        let s0 = f.initial_state();
        let v = f.segment_embedding(&enc, None).unwrap();
        let st = f.decoder_step(&enc, &s0, v).unwrap();
        let labels = f.label_scores(&enc, &st, 1, 1).unwrap();
        assert_eq!(f.tape.value(labels).data(), &[0.0]);
        assert_eq!(f.select_segment(&enc, &st).unwrap(), Segment::new(1, 1, 0));
    }

    #[test]
    fn argmax_prefers_first_and_is_shift_invariant() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        let shifted: Vec<f64> = [1.0, 3.0, 2.5].iter().map(|x| x + 1e3).collect();
        assert_eq!(argmax(&shifted), argmax(&[1.0, 3.0, 2.5]));
    }
}
