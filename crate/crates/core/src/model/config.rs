use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Adam;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Recurrent decoder carrying state across segments.
    Lstm,
    /// Feed-forward map of the same inputs, no cross-step state.
    Mlp,
}

impl std::str::FromStr for DecoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lstm" => Ok(DecoderKind::Lstm),
            "mlp" => Ok(DecoderKind::Mlp),
            other => Err(format!("unknown decoder kind {other:?} (expected lstm or mlp)")),
        }
    }
}

/// Model shape, ablation switches and optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub token_emb_dim: usize,
    pub char_cnn: bool,
    pub char_emb_dim: usize,
    pub char_filters: usize,
    pub char_window: usize,
    pub label_emb_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub decoder: DecoderKind,
    /// Include the previous segment's phrase representation in its embedding.
    pub use_phrase: bool,
    /// Include the previous segment's label embedding in its embedding.
    pub use_label: bool,
    pub dropout: f64,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub min_count: usize,

    pub token_column: usize,
    /// Tag column; `None` means the last column of each line.
    pub tag_column: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            token_emb_dim: 300,
            char_cnn: true,
            char_emb_dim: 30,
            char_filters: 50,
            char_window: 3,
            label_emb_dim: 50,
            encoder_hidden: 256,
            decoder_hidden: 512,
            encoder_layers: 2,
            decoder_layers: 2,
            decoder: DecoderKind::Lstm,
            use_phrase: true,
            use_label: true,
            dropout: 0.4,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 1e-6,
            clip_norm: 5.0,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 1,
            min_count: 1,
            token_column: 0,
            tag_column: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    /// Returns a copy with every key set in `text` replaced. Keys the text
    /// leaves out keep their current values.
    pub fn overlay_toml(&self, text: &str) -> Result<Self> {
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Validation(e.to_string()))?;
        let layer: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Validation(e.to_string()))?;
        base.extend(layer);
        base.try_into().map_err(|e: toml::de::Error| Error::Validation(e.to_string()))
    }

    pub fn overlay_file(&self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.overlay_toml(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Checks every constraint and reports all offending keys at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let positive = [
            ("token-emb-dim", self.token_emb_dim),
            ("label-emb-dim", self.label_emb_dim),
            ("encoder-hidden", self.encoder_hidden),
            ("decoder-hidden", self.decoder_hidden),
            ("encoder-layers", self.encoder_layers),
            ("decoder-layers", self.decoder_layers),
            ("batch-size", self.batch_size),
            ("max-epochs", self.max_epochs),
        ];
        for (key, v) in positive {
            if v == 0 {
                bad.push(format!("{key} must be positive"));
            }
        }
        if self.char_cnn {
            for (key, v) in [
                ("char-emb-dim", self.char_emb_dim),
                ("char-filters", self.char_filters),
            ] {
                if v == 0 {
                    bad.push(format!("{key} must be positive when char-cnn is on"));
                }
            }
            if self.char_window.is_multiple_of(2) {
                bad.push("char-window must be odd".into());
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push("dropout must lie in [0, 1)".into());
        }
        if !self.use_phrase && !self.use_label {
            bad.push("use-phrase and use-label cannot both be off".into());
        }
        if !(self.lr > 0.0) {
            bad.push("lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bad.push("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            bad.push("eps must be positive".into());
        }
        if self.l2 < 0.0 {
            bad.push("l2 must be non-negative".into());
        }
        if !(self.clip_norm > 0.0) {
            bad.push("clip-norm must be positive".into());
        }
        if self.tag_column == Some(self.token_column) {
            bad.push("token-column and tag-column must differ".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad.join("; ")))
        }
    }

    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            l2: self.l2,
        }
    }

    pub fn token_repr_dim(&self) -> usize {
        self.token_emb_dim + if self.char_cnn { self.char_filters } else { 0 }
    }

    /// Width of a contextual state `h^c_k`.
    pub fn context_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Width of a phrase representation `h^p_{i,j}`.
    pub fn phrase_dim(&self) -> usize {
        3 * self.context_dim()
    }

    /// Width of the previous-segment embedding and of the start vector.
    pub fn segment_dim(&self) -> usize {
        (if self.use_phrase { self.phrase_dim() } else { 0 }) + if self.use_label { self.label_emb_dim } else { 0 }
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.segment_dim() + self.phrase_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_keeps_unset_keys() {
        let base = TrainConfig { seed: 9, lr: 0.5, ..TrainConfig::default() };
        let c = base.overlay_toml("lr = 0.01\ndecoder = \"mlp\"\n").unwrap();
        assert_eq!((c.seed, c.lr, c.decoder), (9, 0.01, DecoderKind::Mlp));
        assert!(matches!(base.overlay_toml("lrr = 1.0"), Err(Error::Validation(_))));
        let c = TrainConfig { tag_column: Some(2), ..base }.overlay_toml("").unwrap();
        assert_eq!(c.tag_column, Some(2));
    }

    #[test]
    fn defaults_are_valid_and_match_reported_sizes() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.phrase_dim(), 1536);
        let no_char = TrainConfig { char_cnn: false, ..c };
        assert_eq!(no_char.token_repr_dim(), 300);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig {
            decoder: DecoderKind::Mlp,
            tag_column: Some(2),
            ..TrainConfig::default()
        };
        let back = TrainConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        let partial = TrainConfig::from_toml_str("encoder_hidden = 8\ndecoder = \"mlp\"\n").unwrap();
        assert_eq!(partial.encoder_hidden, 8);
        assert_eq!(partial.decoder, DecoderKind::Mlp);
        assert_eq!(partial.batch_size, 16);
        assert!(TrainConfig::from_toml_str("bogus_key = 1").is_err());
    }

    #[test]
    fn contradictions_list_every_key() {
        let c = TrainConfig {
            use_phrase: false,
            use_label: false,
            dropout: 1.0,
            batch_size: 0,
            ..TrainConfig::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        for key in ["use-phrase", "dropout", "batch-size"] {
            assert!(msg.contains(key), "{msg}");
        }
    }
}
