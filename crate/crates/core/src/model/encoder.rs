use super::Forward;
use crate::autodiff::{lstm_cell, LstmWeights, Var};
use crate::data::{EncodedSentence, Sentence};
use crate::error::{Error, Result};

/// Contextual states of one sentence. Positions are 1-based in the public
/// accessors.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    /// `h^c_k = forward_k ⊕ backward_k`, stored 0-based.
    pub states: Vec<Var>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `h^c_k` for 1-based `k`.
    pub fn state(&self, k: usize) -> Var {
        self.states[k - 1]
    }
}

fn run_stack(f: &mut Forward, layers: &[LstmWeights], inputs: Vec<Var>) -> Result<Vec<Var>> {
    let mut seq = inputs;
    for (l, weights) in layers.iter().enumerate() {
        if l > 0 {
            seq = seq.into_iter().map(|v| f.dropout(v)).collect::<Result<_>>()?;
        }
        let mut h = f.tape.zeros(weights.hidden);
        let mut c = f.tape.zeros(weights.hidden);
        let mut out = Vec::with_capacity(seq.len());
        for &x in &seq {
            (h, c) = lstm_cell(&mut f.tape, x, h, c, weights)?;
            out.push(h);
        }
        seq = out;
    }
    Ok(seq)
}

impl<'m> Forward<'m> {
    /// Convolution over character embeddings followed by max-pooling over
    /// positions. Out-of-range window slots read a zero vector.
    pub fn char_cnn(&mut self, chars: &[usize]) -> Result<Var> {
        if chars.is_empty() {
            return Err(Error::Contract("char_cnn needs at least one character".into()));
        }
        let cnn = self
            .model
            .layout()
            .char_cnn
            .ok_or_else(|| Error::Contract("char_cnn called on a model without it".into()))?;
        let config = self.model.config();
        let half = config.char_window / 2;
        let pad = self.tape.zeros(config.char_emb_dim);
        let embedded = chars
            .iter()
            .map(|&c| self.tape.row(cnn.emb, c))
            .collect::<Result<Vec<_>>>()?;
        let filters = self.tape.param(cnn.filters);
        let bias = self.tape.param(cnn.bias);
        let mut responses = Vec::with_capacity(chars.len());
        for p in 0..chars.len() {
            let window: Vec<Var> = (0..config.char_window)
                .map(|o| (p + o).checked_sub(half).and_then(|q| embedded.get(q).copied()).unwrap_or(pad))
                .collect();
            let window = self.tape.concat(&window)?;
            let conv = self.tape.matvec(filters, window)?;
            responses.push(self.tape.add(conv, bias)?);
        }
        self.tape.max(&responses)
    }

    /// Token representations `e_k`, with dropout in training mode.
    pub fn embed_tokens(&mut self, sentence: &EncodedSentence) -> Result<Vec<Var>> {
        let layout = self.model.layout();
        let use_chars = layout.char_cnn.is_some();
        let mut out = Vec::with_capacity(sentence.len());
        for (k, &tok) in sentence.tokens.iter().enumerate() {
            let emb = self.tape.row(layout.token_emb, tok)?;
            let e = if use_chars {
                let chars = self.char_cnn(&sentence.chars[k])?;
                self.tape.concat(&[emb, chars])?
            } else {
                emb
            };
            out.push(self.dropout(e)?);
        }
        Ok(out)
    }

    /// Runs the forward and backward recurrent stacks over token
    /// representations.
    pub fn encode(&mut self, reprs: &[Var]) -> Result<EncoderOutput> {
        if reprs.is_empty() {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        let layout = self.model.layout();
        let forward = run_stack(self, &layout.enc_fwd, reprs.to_vec())?;
        let mut backward = run_stack(self, &layout.enc_bwd, reprs.iter().rev().copied().collect())?;
        backward.reverse();
        let states = forward
            .iter()
            .zip(&backward)
            .map(|(&a, &b)| self.tape.concat(&[a, b]))
            .collect::<Result<_>>()?;
        Ok(EncoderOutput {
            forward,
            backward,
            states,
        })
    }

    pub fn encode_sentence(&mut self, sentence: &Sentence) -> Result<EncoderOutput> {
        let encoded = self.model.vocab().encode(sentence);
        let reprs = self.embed_tokens(&encoded)?;
        self.encode(&reprs)
    }

    /// `h^p_{i,j} = h^c_j ⊕ (h^c_j − h^c_i) ⊕ h^c_i` for `1 ≤ i ≤ j ≤ n`.
    pub fn phrase_repr(&mut self, enc: &EncoderOutput, i: usize, j: usize) -> Result<Var> {
        if i < 1 || i > j || j > enc.len() {
            return Err(Error::Contract(format!(
                "phrase ({i}, {j}) outside a {}-token sentence",
                enc.len()
            )));
        }
        let (hi, hj) = (enc.state(i), enc.state(j));
        let diff = self.tape.sub(hj, hi)?;
        self.tape.concat(&[hj, diff, hi])
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::{Mode, TrainConfig};
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn token_repr_width_follows_char_switch() {
        let m = tiny_model(tiny_config());
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = m.vocab().encode(&table_one().sentence);
        let reprs = f.embed_tokens(&enc).unwrap();
        assert_eq!(f.tape.value(reprs[0]).len(), 4 + 3);

        let m = tiny_model(TrainConfig { char_cnn: false, ..tiny_config() });
        let mut f = Forward::new(&m, Mode::Eval);
        let reprs = f.embed_tokens(&m.vocab().encode(&table_one().sentence)).unwrap();
        assert_eq!(f.tape.value(reprs[0]).len(), 4);
    }

    #[test]
    fn char_cnn_shapes_and_position_sensitivity() {
        let m = tiny_model(tiny_config());
        let mut f = Forward::new(&m, Mode::Eval);
        assert!(matches!(f.char_cnn(&[]), Err(Error::Contract(_))));
        let single = f.char_cnn(&[2]).unwrap();
        assert_eq!(f.tape.value(single).len(), 3);
        let long = f.char_cnn(&[2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(f.tape.value(long).len(), 3);
        let ab = f.char_cnn(&[2, 3, 4]).unwrap();
        let ba = f.char_cnn(&[4, 2, 3]).unwrap();
        assert_ne!(f.tape.value(ab), f.tape.value(ba));
    }

    #[test]
    fn single_char_sees_zero_padding() {
        // Oracle: direct evaluation of filters · [0, e_c, 0] + b.
        let m = tiny_model(tiny_config());
        let cnn = m.layout().char_cnn.unwrap();
        let store = m.params();
        let e = store.value(cnn.emb).row(2).to_vec();
        let w = store.value(cnn.filters);
        let b = store.value(cnn.bias).data();
        let mut window = vec![0.0; 3];
        window.extend(&e);
        window.extend([0.0; 3]);
        let expect: Vec<f64> = (0..3)
            .map(|r| w.row(r).iter().zip(&window).map(|(x, y)| x * y).sum::<f64>() + b[r])
            .collect();
        let mut f = Forward::new(&m, Mode::Eval);
        let got = f.char_cnn(&[2]).unwrap();
        for (g, x) in f.tape.value(got).data().iter().zip(&expect) {
            assert!((g - x).abs() < 1e-15);
        }
    }

    #[test]
    fn phrase_repr_blocks() {
        let m = tiny_model(tiny_config());
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        let d = 6;
        for i in 1..=9 {
            let p = f.phrase_repr(&enc, i, i).unwrap();
            assert!(f.tape.value(p).data()[d..2 * d].iter().all(|&x| x == 0.0));
        }
        let p = f.phrase_repr(&enc, 1, 9).unwrap();
        let v = f.tape.value(p).data().to_vec();
        assert_eq!(v.len(), 18);
        assert_eq!(&v[..d], f.tape.value(enc.state(9)).data());
        assert_eq!(&v[2 * d..], f.tape.value(enc.state(1)).data());
        assert!(matches!(f.phrase_repr(&enc, 3, 2), Err(Error::Contract(_))));
        assert!(matches!(f.phrase_repr(&enc, 0, 2), Err(Error::Contract(_))));
        assert!(matches!(f.phrase_repr(&enc, 1, 10), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_recurrent_weights_give_zero_states() {
        let mut m = tiny_model(tiny_config());
        let names: Vec<String> = m
            .params()
            .iter()
            .map(|(_, p)| p.name.clone())
            .filter(|n| n.starts_with("enc."))
            .collect();
        for name in names {
            let id = m.params().require(&name).unwrap();
            m.params_mut().value_mut(id).data_mut().fill(0.0);
        }
        let mut f = Forward::new(&m, Mode::Eval);
        let enc = f.encode_sentence(&table_one().sentence).unwrap();
        for &s in &enc.states {
            assert!(f.tape.value(s).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let m = tiny_model(TrainConfig { dropout: 0.4, ..tiny_config() });
        let run = || {
            let mut f = Forward::new(&m, Mode::Eval);
            let enc = f.encode_sentence(&table_one().sentence).unwrap();
            enc.states.iter().map(|&s| f.tape.value(s).clone()).collect::<Vec<Tensor>>()
        };
        assert_eq!(run(), run());
    }
}
