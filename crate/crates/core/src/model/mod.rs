//! The segmenter: parameter layout, forward context, encoder and decoder.

mod config;
mod decoder;
mod encoder;

use std::path::Path;

pub use config::{DecoderKind, TrainConfig};
pub use decoder::{argmax, DecoderState, ForcedStep};
pub use encoder::EncoderOutput;

use crate::autodiff::{glorot, LstmWeights, ParamId, ParamStore, Rng, Tape, Tensor};
use crate::data::{read_text, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct CharCnn {
    pub emb: ParamId,
    pub filters: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum DecoderParams {
    Lstm(Vec<LstmWeights>),
    Mlp { w: ParamId, b: ParamId },
}

/// Parameter handles, resolved once by name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub token_emb: ParamId,
    pub char_cnn: Option<CharCnn>,
    pub enc_fwd: Vec<LstmWeights>,
    pub enc_bwd: Vec<LstmWeights>,
    pub decoder: DecoderParams,
    pub start: ParamId,
    pub span_w: ParamId,
    pub label_w: ParamId,
    pub label_emb: ParamId,
}

/// A configured segmenter with its vocabulary and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: TrainConfig,
    vocab: Vocab,
    params: ParamStore,
    layout: Layout,
}

fn init_params(config: &TrainConfig, vocab: &Vocab) -> Result<ParamStore> {
    let c = config;
    let mut rng = Rng::new(c.seed).split("init");
    let mut store = ParamStore::new(c.seed);
    store.add_glorot("emb.token", vocab.num_tokens(), c.token_emb_dim, &mut rng)?;
    if c.char_cnn {
        store.add_glorot("char.emb", vocab.num_chars(), c.char_emb_dim, &mut rng)?;
        store.add_glorot("char.conv.w", c.char_filters, c.char_window * c.char_emb_dim, &mut rng)?;
        store.add_zeros("char.conv.b", &[c.char_filters])?;
    }
    for dir in ["fwd", "bwd"] {
        let mut input = c.token_repr_dim();
        for l in 0..c.encoder_layers {
            LstmWeights::init(&mut store, &format!("enc.{dir}.{l}"), input, c.encoder_hidden, &mut rng)?;
            input = c.encoder_hidden;
        }
    }
    match c.decoder {
        DecoderKind::Lstm => {
            let mut input = c.decoder_input_dim();
            for l in 0..c.decoder_layers {
                LstmWeights::init(&mut store, &format!("dec.{l}"), input, c.decoder_hidden, &mut rng)?;
                input = c.decoder_hidden;
            }
        }
        DecoderKind::Mlp => {
            store.add_glorot("dec.mlp.w", c.decoder_hidden, c.decoder_input_dim(), &mut rng)?;
            store.add_zeros("dec.mlp.b", &[c.decoder_hidden])?;
        }
    }
    let start = glorot(1, c.segment_dim(), &mut rng)?;
    store.add("dec.start", Tensor::vector(start.into_data()))?;
    store.add_glorot("span.w", c.decoder_hidden, c.phrase_dim(), &mut rng)?;
    store.add_glorot("label.w", c.label_emb_dim, c.phrase_dim() + c.decoder_hidden, &mut rng)?;
    store.add_glorot("emb.label", vocab.num_labels(), c.label_emb_dim, &mut rng)?;
    Ok(store)
}

fn expect_shape(store: &ParamStore, id: ParamId, want: &[usize]) -> Result<()> {
    let got = store.value(id).shape();
    if got != want {
        return Err(Error::Validation(format!(
            "parameter {:?} has shape {got:?}, expected {want:?}",
            store.name(id)
        )));
    }
    Ok(())
}

fn lstm_stack(store: &ParamStore, prefix: &str, layers: usize, input: usize, hidden: usize) -> Result<Vec<LstmWeights>> {
    let mut input = input;
    (0..layers)
        .map(|l| {
            let w = LstmWeights::lookup(store, &format!("{prefix}.{l}"))?;
            if w.input != input || w.hidden != hidden {
                return Err(Error::Validation(format!(
                    "LSTM {prefix}.{l} maps {} -> {}, expected {input} -> {hidden}",
                    w.input, w.hidden
                )));
            }
            input = hidden;
            Ok(w)
        })
        .collect()
}

impl Layout {
    fn resolve(store: &ParamStore, c: &TrainConfig, vocab: &Vocab) -> Result<Self> {
        let token_emb = store.require("emb.token")?;
        expect_shape(store, token_emb, &[vocab.num_tokens(), c.token_emb_dim])?;
        let char_cnn = if c.char_cnn {
            let cnn = CharCnn {
                emb: store.require("char.emb")?,
                filters: store.require("char.conv.w")?,
                bias: store.require("char.conv.b")?,
            };
            expect_shape(store, cnn.emb, &[vocab.num_chars(), c.char_emb_dim])?;
            expect_shape(store, cnn.filters, &[c.char_filters, c.char_window * c.char_emb_dim])?;
            expect_shape(store, cnn.bias, &[c.char_filters])?;
            Some(cnn)
        } else {
            None
        };
        let enc_fwd = lstm_stack(store, "enc.fwd", c.encoder_layers, c.token_repr_dim(), c.encoder_hidden)?;
        let enc_bwd = lstm_stack(store, "enc.bwd", c.encoder_layers, c.token_repr_dim(), c.encoder_hidden)?;
        let decoder = match c.decoder {
            DecoderKind::Lstm => DecoderParams::Lstm(lstm_stack(
                store,
                "dec",
                c.decoder_layers,
                c.decoder_input_dim(),
                c.decoder_hidden,
            )?),
            DecoderKind::Mlp => {
                let w = store.require("dec.mlp.w")?;
                let b = store.require("dec.mlp.b")?;
                expect_shape(store, w, &[c.decoder_hidden, c.decoder_input_dim()])?;
                expect_shape(store, b, &[c.decoder_hidden])?;
                DecoderParams::Mlp { w, b }
            }
        };
        let layout = Layout {
            token_emb,
            char_cnn,
            enc_fwd,
            enc_bwd,
            decoder,
            start: store.require("dec.start")?,
            span_w: store.require("span.w")?,
            label_w: store.require("label.w")?,
            label_emb: store.require("emb.label")?,
        };
        expect_shape(store, layout.start, &[c.segment_dim()])?;
        expect_shape(store, layout.span_w, &[c.decoder_hidden, c.phrase_dim()])?;
        expect_shape(store, layout.label_w, &[c.label_emb_dim, c.phrase_dim() + c.decoder_hidden])?;
        expect_shape(store, layout.label_emb, &[vocab.num_labels(), c.label_emb_dim])?;
        Ok(layout)
    }
}

impl Model {
    /// Fresh randomly initialized model; the seed comes from `config`.
    pub fn new(config: TrainConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, &vocab)?;
        Model::from_parts(config, vocab, params)
    }

    /// Assembles a model from stored parts, checking every shape.
    pub fn from_parts(config: TrainConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&params, &config, &vocab)?;
        Ok(Model {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable parameter access. Values may change freely; the set of
    /// parameters and their shapes must not.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_labels(&self) -> usize {
        self.vocab.num_labels()
    }

    /// Overrides token embedding rows from a text file holding one token per
    /// line followed by its vector. Returns the number of rows replaced.
    pub fn load_embeddings(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let dim = self.config.token_emb_dim;
        let id = self.layout.token_emb;
        let mut replaced = 0;
        for (k, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: k + 1,
                    message: e.to_string(),
                })?;
            if values.len() != dim {
                return Err(Error::Validation(format!(
                    "{}: line {} has a {}-d vector, token-emb-dim is {dim}",
                    path.display(),
                    k + 1,
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: k + 1,
                    message: "non-finite embedding value".into(),
                });
            }
            let row = self.vocab.token_id(token);
            if row > crate::data::UNK_ID && self.vocab.token(row) == Some(token) {
                self.params.value_mut(id).row_mut(row).copy_from_slice(&values);
                replaced += 1;
            }
        }
        Ok(replaced)
    }
}

/// Whether a forward pass is for training (dropout on) or evaluation.
#[derive(Clone, Debug)]
pub enum Mode {
    Train(Rng),
    Eval,
}

/// One forward computation: a tape bound to a model plus the dropout state.
pub struct Forward<'m> {
    pub tape: Tape<'m>,
    model: &'m Model,
    rng: Option<Rng>,
}

impl<'m> Forward<'m> {
    pub fn new(model: &'m Model, mode: Mode) -> Self {
        let rng = match mode {
            Mode::Train(rng) => Some(rng),
            Mode::Eval => None,
        };
        Forward {
            tape: Tape::new(&model.params),
            model,
            rng,
        }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub(crate) fn dropout(&mut self, v: crate::autodiff::Var) -> Result<crate::autodiff::Var> {
        let ratio = self.model.config.dropout;
        match &mut self.rng {
            Some(rng) => self.tape.dropout(v, ratio, true, rng),
            None => Ok(v),
        }
    }
}
