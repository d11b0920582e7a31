//! Teacher-forced training with dev-set model selection, and timing runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Rng, Var};
use crate::data::{Example, Segmentation, Sentence, Vocab};
use crate::error::{Error, Result};
use crate::eval::chunk_f1;
use crate::infer::decode_all;
use crate::model::{ForcedStep, Forward, Mode, Model, TrainConfig};

/// Negative log-likelihood of the gold segmentation, `−Σ_k (log Q^s + log Q^l)`,
/// with every decoder step fed the gold previous segment. Also returns what
/// the decoder saw at each step.
pub fn sentence_loss(
    f: &mut Forward,
    sentence: &Sentence,
    gold: &Segmentation<usize>,
) -> Result<(Var, Vec<ForcedStep>)> {
    if gold.sentence_len() != sentence.len() {
        return Err(Error::Contract(format!(
            "gold segmentation covers {} tokens, sentence has {}",
            gold.sentence_len(),
            sentence.len()
        )));
    }
    let enc = f.encode_sentence(sentence)?;
    let (ll, trace) = f.forced_log_likelihood(&enc, gold)?;
    Ok((f.tape.neg(ll), trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Summed training loss over the epoch.
    pub loss: f64,
    pub dev_f1: f64,
    /// Wall-clock seconds; kept out of the serialized report so that it stays
    /// reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based index of the selected epoch.
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

#[derive(Serialize)]
struct Summary {
    best_epoch: usize,
    best_dev_f1: f64,
}

#[derive(Serialize)]
struct Timing {
    epoch: usize,
    seconds: f64,
}

impl TrainReport {
    /// One JSON record per epoch followed by a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("plain record"));
            out.push('\n');
        }
        let summary = Summary {
            best_epoch: self.best_epoch,
            best_dev_f1: self.best_dev_f1,
        };
        out.push_str(&serde_json::to_string(&summary).expect("plain record"));
        out.push('\n');
        out
    }

    /// Per-epoch wall-clock records.
    pub fn timing_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| {
                let t = Timing {
                    epoch: e.epoch,
                    seconds: e.seconds,
                };
                serde_json::to_string(&t).expect("plain record") + "\n"
            })
            .collect()
    }
}

type Encoded = Vec<(Sentence, Segmentation<usize>)>;

fn encode_gold(vocab: &Vocab, corpus: &[Example]) -> Result<Encoded> {
    corpus
        .iter()
        .map(|ex| Ok((ex.sentence.clone(), vocab.encode_segmentation(&ex.gold)?)))
        .collect()
}

/// Length-bucketed batches in a seeded random order.
fn batches(data: &Encoded, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by_key(|&k| (data[k].0.len(), k));
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    rng.shuffle(&mut out);
    out
}

/// One pass over `data` with an Adam step per batch. Returns the summed loss.
fn run_epoch(model: &mut Model, data: &Encoded, epoch: usize) -> Result<f64> {
    let config = model.config().clone();
    let root = Rng::new(config.seed);
    let mut order_rng = root.split("batches").split_index(epoch as u64);
    let dropout_rng = root.split("dropout").split_index(epoch as u64);
    let adam = config.adam();
    let mut total = 0.0;
    for batch in batches(data, config.batch_size, &mut order_rng) {
        let mut grads = Gradients::zeros(model.params());
        for &k in &batch {
            let (sentence, gold) = &data[k];
            let mut f = Forward::new(model, Mode::Train(dropout_rng.split_index(k as u64)));
            let (loss, _) = sentence_loss(&mut f, sentence, gold)?;
            total += f.tape.scalar(loss);
            f.tape.backward(loss, &mut grads)?;
        }
        grads.clip_global_norm(config.clip_norm);
        adam.step(model.params_mut(), &grads)?;
    }
    Ok(total)
}

/// Chunk F1 of greedy decoding on `corpus`.
pub fn evaluate(model: &Model, corpus: &[Example]) -> Result<f64> {
    let sentences: Vec<Sentence> = corpus.iter().map(|e| e.sentence.clone()).collect();
    let decoded = decode_all(model, &sentences, 1)?;
    let pred: Vec<Segmentation> = decoded.iter().map(|d| d.labeled(model)).collect();
    let gold: Vec<Segmentation> = corpus.iter().map(|e| e.gold.clone()).collect();
    Ok(chunk_f1(&gold, &pred)?.f1())
}

/// Trains `model` in place and returns the parameters of the epoch with the
/// best dev F1. `on_epoch` sees each record as it is produced.
pub fn train_model(
    model: Model,
    train: &[Example],
    dev: &[Example],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainReport)> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Domain("training and dev corpora must be non-empty".into()));
    }
    let data = encode_gold(model.vocab(), train)?;
    let config = model.config().clone();
    let mut model = model;
    let mut best = model.clone();
    let mut report = TrainReport::default();
    let mut since_improved = 0;
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let loss = run_epoch(&mut model, &data, epoch)?;
        let dev_f1 = evaluate(&model, dev)?;
        let record = EpochRecord {
            epoch,
            loss,
            dev_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        report.epochs.push(record);
        let improved = epoch == 1 || dev_f1 > report.best_dev_f1;
        // ties go to the later, longer-trained epoch
        if improved || dev_f1 == report.best_dev_f1 {
            report.best_epoch = epoch;
            report.best_dev_f1 = dev_f1;
            best = model.clone();
        }
        if improved {
            since_improved = 0;
        } else {
            since_improved += 1;
            if since_improved > config.patience {
                break;
            }
        }
    }
    Ok((best, report))
}

/// Builds the vocabulary from `train`, initializes a model and trains it.
pub fn train(train: &[Example], dev: &[Example], config: &TrainConfig) -> Result<(Model, TrainReport)> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Domain("training and dev corpora must be non-empty".into()));
    }
    let vocab = Vocab::build(train, config.min_count)?;
    let model = Model::new(config.clone(), vocab)?;
    train_model(model, train, dev, |_| {})
}

/// Wall-clock and work counts for one training epoch and one greedy
/// evaluation pass.
#[derive(Clone, Debug, Serialize)]
pub struct TimingReport {
    pub sentences: usize,
    pub tokens: usize,
    pub train_seconds: f64,
    pub train_seconds_per_sentence: f64,
    pub eval_seconds: f64,
    pub eval_seconds_per_sentence: f64,
    /// Mean number of decoder iterations per sentence when decoding.
    pub mean_iterations: f64,
    /// Mean of `m / n` over sentences.
    pub mean_iterations_per_token: f64,
    /// Mean number of gold segments, the iteration count under teacher forcing.
    pub mean_gold_segments: f64,
    /// Spans scored while decoding, summed over the corpus.
    pub scored_spans: usize,
    /// `Σ n(n+1)/2`, the count if every sentence were split into single tokens.
    pub scored_spans_bound: usize,
}

/// Times one training epoch on a copy of `model` and one decoding pass.
pub fn timing(model: &Model, corpus: &[Example], batch_size: usize) -> Result<TimingReport> {
    if corpus.is_empty() {
        return Err(Error::Domain("timing needs a non-empty corpus".into()));
    }
    let mut config = model.config().clone();
    config.batch_size = batch_size;
    let mut scratch = Model::from_parts(config, model.vocab().clone(), model.params().clone())?;
    let data = encode_gold(scratch.vocab(), corpus)?;
    let started = Instant::now();
    run_epoch(&mut scratch, &data, 1)?;
    let train_seconds = started.elapsed().as_secs_f64();

    let sentences: Vec<Sentence> = corpus.iter().map(|e| e.sentence.clone()).collect();
    let started = Instant::now();
    let decoded = decode_all(model, &sentences, 1)?;
    let eval_seconds = started.elapsed().as_secs_f64();

    let count = corpus.len() as f64;
    let tokens: usize = sentences.iter().map(Sentence::len).sum();
    Ok(TimingReport {
        sentences: corpus.len(),
        tokens,
        train_seconds,
        train_seconds_per_sentence: train_seconds / count,
        eval_seconds,
        eval_seconds_per_sentence: eval_seconds / count,
        mean_iterations: decoded.iter().map(|d| d.iterations() as f64).sum::<f64>() / count,
        mean_iterations_per_token: decoded
            .iter()
            .zip(&sentences)
            .map(|(d, s)| d.iterations() as f64 / s.len() as f64)
            .sum::<f64>()
            / count,
        mean_gold_segments: corpus.iter().map(|e| e.gold.len() as f64).sum::<f64>() / count,
        scored_spans: decoded.iter().map(|d| d.scored_spans()).sum(),
        scored_spans_bound: sentences.iter().map(|s| s.len() * (s.len() + 1) / 2).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::{example, table_one, tiny_config};
    use crate::model::DecoderKind;

    fn zero(model: &mut Model, name: &str) {
        let id = model.params().require(name).unwrap();
        model.params_mut().value_mut(id).data_mut().fill(0.0);
    }

    #[test]
    fn uniform_model_loss_counts_candidates() {
        // four labels so the label term is ln 4 per segment
        let extra = example("x", "B-PP");
        let t1 = table_one();
        let vocab = Vocab::build(&[t1.clone(), extra], 1).unwrap();
        assert_eq!(vocab.num_labels(), 4);
        let mut m = Model::new(tiny_config(), vocab).unwrap();
        zero(&mut m, "span.w");
        zero(&mut m, "label.w");
        let gold = m.vocab().encode_segmentation(&t1.gold).unwrap();
        let mut f = Forward::new(&m, Mode::Eval);
        let (loss, trace) = sentence_loss(&mut f, &t1.sentence, &gold).unwrap();
        // gold cursors 1, 3, 5, 9 leave 9, 7, 5 and 1 candidates
        let sizes: Vec<usize> = trace.iter().map(|s| s.candidates).collect();
        assert_eq!(sizes, [9, 7, 5, 1]);
        let expect = 9f64.ln() + 7f64.ln() + 5f64.ln() + 1f64.ln() + 4.0 * 4f64.ln();
        assert!((f.tape.scalar(loss) - expect).abs() < 1e-12);
    }

    #[test]
    fn decoder_sees_gold_previous_segments() {
        let t1 = table_one();
        let vocab = Vocab::build(&[t1.clone()], 1).unwrap();
        let m = Model::new(tiny_config(), vocab).unwrap();
        let gold = m.vocab().encode_segmentation(&t1.gold).unwrap();
        let mut f = Forward::new(&m, Mode::Train(Rng::new(3)));
        let (loss, trace) = sentence_loss(&mut f, &t1.sentence, &gold).unwrap();
        assert!(f.tape.scalar(loss) >= 0.0);
        assert!(trace[0].prev.is_none());
        for (k, step) in trace.iter().enumerate().skip(1) {
            assert_eq!(step.prev.as_ref(), Some(&gold.segments()[k - 1]));
            assert_eq!(step.cursor, gold.segments()[k].start);
        }
    }

    #[test]
    fn mismatched_gold_rejected() {
        let t1 = table_one();
        let m = Model::new(tiny_config(), Vocab::build(&[t1.clone()], 1).unwrap()).unwrap();
        let short = Segmentation::new(vec![crate::data::Segment::new(1, 2, 0)], 2).unwrap();
        let mut f = Forward::new(&m, Mode::Eval);
        assert!(matches!(sentence_loss(&mut f, &t1.sentence, &short), Err(Error::Contract(_))));
    }

    fn toy_corpus() -> Vec<Example> {
        vec![
            example("the cat sat", "B-NP I-NP B-VP"),
            example("a dog ran .", "B-NP I-NP B-VP O"),
            example("the dog sat .", "B-NP I-NP B-VP O"),
            example("a cat ran", "B-NP I-NP B-VP"),
        ]
    }

    #[test]
    fn loss_decreases_when_overfitting() {
        let corpus = toy_corpus();
        let config = TrainConfig {
            max_epochs: 6,
            patience: 100,
            batch_size: 2,
            lr: 0.01,
            ..tiny_config()
        };
        let (_, report) = train(&corpus, &corpus, &config).unwrap();
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn fixed_seed_reports_match_and_best_is_max() {
        let corpus = toy_corpus();
        let config = TrainConfig {
            max_epochs: 4,
            dropout: 0.3,
            decoder: DecoderKind::Mlp,
            ..tiny_config()
        };
        let (_, a) = train(&corpus, &corpus, &config).unwrap();
        let (best, b) = train(&corpus, &corpus, &config).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let max = a.epochs.iter().map(|e| e.dev_f1).fold(f64::MIN, f64::max);
        assert_eq!(a.best_dev_f1, max);
        assert_eq!(evaluate(&best, &corpus).unwrap(), a.best_dev_f1);
    }

    #[test]
    fn zero_patience_stops_after_first_non_improving_epoch() {
        let corpus = toy_corpus();
        let config = TrainConfig {
            max_epochs: 50,
            patience: 0,
            lr: 1e-9,
            ..tiny_config()
        };
        let (_, report) = train(&corpus, &corpus, &config).unwrap();
        // with a negligible learning rate dev F1 never improves after epoch 1
        assert_eq!(report.epochs.len(), 2);
        assert_eq!(report.epochs[0].dev_f1, report.epochs[1].dev_f1);
        assert_eq!(report.best_epoch, 2);
    }

    #[test]
    fn empty_corpora_rejected() {
        let corpus = toy_corpus();
        assert!(matches!(train(&[], &corpus, &tiny_config()), Err(Error::Domain(_))));
        assert!(matches!(train(&corpus, &[], &tiny_config()), Err(Error::Domain(_))));
    }

    #[test]
    fn timing_counts_work() {
        let corpus = toy_corpus();
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let m = Model::new(tiny_config(), vocab).unwrap();
        let t = timing(&m, &corpus, 2).unwrap();
        assert_eq!(t.sentences, 4);
        assert_eq!(t.mean_gold_segments, 2.5);
        assert!(t.scored_spans <= t.scored_spans_bound);
        assert!(t.mean_iterations_per_token <= 1.0);
    }
}
