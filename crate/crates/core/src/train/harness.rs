//! Mini-batch training with best-validation model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textgsl_autodiff::{Adam, AdamConfig, Scalar, Tape};

use super::data::Dataset;
use super::report::{ClassAccuracy, EpochRecord, Evaluation, RunReport};
use super::{TrainConfig, TrainError};
use crate::corpus::Split;
use crate::model::{readout, ModelConfig, ModelSpec, Pass, TextGsl};

/// Callbacks invoked during training. `on_batch` sees the document ids of
/// every training batch before it is used.
pub trait TrainObserver {
    fn on_batch(&mut self, _epoch: usize, _doc_ids: &[&str]) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _seconds: f64) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Fails if a test-split document ever reaches a training batch.
#[derive(Debug, Default)]
pub struct InductiveAudit {
    test_ids: std::collections::BTreeSet<String>,
    pub batches_seen: usize,
    pub docs_seen: usize,
}

impl InductiveAudit {
    pub fn new<T: Scalar>(data: &Dataset<T>) -> Self {
        Self {
            test_ids: data
                .examples
                .iter()
                .filter(|e| e.split == Split::Test)
                .map(|e| e.doc_id.clone())
                .collect(),
            batches_seen: 0,
            docs_seen: 0,
        }
    }
}

impl TrainObserver for InductiveAudit {
    fn on_batch(&mut self, epoch: usize, doc_ids: &[&str]) -> Result<(), TrainError> {
        self.batches_seen += 1;
        self.docs_seen += doc_ids.len();
        match doc_ids.iter().find(|id| self.test_ids.contains(**id)) {
            Some(id) => Err(TrainError::Leak {
                epoch,
                doc_id: id.to_string(),
            }),
            None => Ok(()),
        }
    }
}

/// Writes `epoch,train_loss,train_acc,val_acc,seconds` lines.
pub struct ProgressLog<W>(pub W);

impl<W: std::io::Write> TrainObserver for ProgressLog<W> {
    fn on_epoch(&mut self, r: &EpochRecord, seconds: f64) {
        let _ = writeln!(
            self.0,
            "{},{:.6},{:.4},{:.4},{:.2}",
            r.epoch, r.train_loss, r.train_acc, r.val_acc, seconds
        );
    }
}

impl<A: TrainObserver, B: TrainObserver> TrainObserver for (A, B) {
    fn on_batch(&mut self, epoch: usize, doc_ids: &[&str]) -> Result<(), TrainError> {
        self.0.on_batch(epoch, doc_ids)?;
        self.1.on_batch(epoch, doc_ids)
    }

    fn on_epoch(&mut self, record: &EpochRecord, seconds: f64) {
        self.0.on_epoch(record, seconds);
        self.1.on_epoch(record, seconds);
    }
}

pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: TextGsl<T>,
    pub report: RunReport,
}

/// Independent generator streams derived from the run seed.
fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

pub(crate) fn derived_seed(seed: u64, tag: u64) -> u64 {
    use rand::RngCore;
    stream(seed, tag).next_u64()
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_VALIDATION: u64 = 4;
pub(crate) const STREAM_SUBSAMPLE: u64 = 5;

pub fn train<T: Scalar>(
    data: &Dataset<T>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate().map_err(TrainError::Config)?;
    let mut data = data.clone();
    if data.count(Split::Val) == 0 {
        data.carve_validation(config.val_ratio, derived_seed(config.seed, STREAM_VALIDATION));
    }
    let train_idx = data.indices(Split::Train);
    let val_idx = data.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(TrainError::Data(format!(
            "need nonempty train and validation splits, found {} and {}",
            train_idx.len(),
            val_idx.len()
        )));
    }
    let spec = ModelSpec {
        config: model_config.clone(),
        mode: config.mode,
        input_dim: data.input_dim(),
        classes: data.classes(),
    };
    let mut model = TextGsl::<T>::new(spec, derived_seed(config.seed, STREAM_INIT))?;
    model.set_dropout(config.dropout_seq, config.dropout_str)?;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.l2_weight,
            ..AdamConfig::default()
        },
        model.store(),
    );
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);

    let mut order = train_idx.clone();
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, TextGsl<T>)> = None;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let ids: Vec<&str> = batch.iter().map(|&k| data.examples[k].doc_id.as_str()).collect();
            observer.on_batch(epoch, &ids)?;
            let inputs: Vec<_> = batch.iter().map(|&k| data.input(k)).collect();
            let pairs: Vec<_> = inputs
                .iter()
                .zip(batch)
                .map(|(d, &k)| (d, data.examples[k].label))
                .collect();
            let mut tape = Tape::new();
            let loss = {
                let mut pass = Pass::new(&mut tape, model.store(), true, &mut dropout_rng);
                model.batch_loss(&mut pass, &pairs)?
            };
            let lv = tape.value(loss).item().as_f64();
            let store = model.store_mut();
            store.zero_grads();
            tape.backward(loss, store).map_err(crate::model::ModelError::from)?;
            if !lv.is_finite() || store.first_non_finite().is_some() {
                let tensor = store
                    .first_non_finite()
                    .map(str::to_string)
                    .unwrap_or_else(|| "loss".to_string());
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b + 1,
                    tensor,
                });
            }
            adam.step(store).map_err(crate::model::ModelError::from)?;
            loss_sum += lv * batch.len() as f64;
        }
        let train_eval = evaluate_indices(&model, &data, &train_idx, Split::Train)?;
        let val_eval = evaluate_indices(&model, &data, &val_idx, Split::Val)?;
        let gammas = model.gammas();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            l2_penalty: 0.5 * config.l2_weight * model.store().squared_norm().as_f64(),
            train_acc: train_eval.accuracy,
            val_loss: val_eval.loss,
            val_acc: val_eval.accuracy,
            gammas: (gammas.len() == 3).then(|| [gammas[0].1, gammas[1].1, gammas[2].1]),
        };
        observer.on_epoch(&record, started.elapsed().as_secs_f64());
        records.push(record);
        if best.as_ref().is_none_or(|(_, acc, _)| val_eval.accuracy > *acc) {
            best = Some((epoch, val_eval.accuracy, model.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if config.patience.is_some_and(|p| epoch - best_epoch >= p) {
            stopped_early = epoch < config.epochs;
            break;
        }
    }
    let (best_epoch, best_val_acc, best_model) = best.expect("at least one epoch");
    let test_idx = data.indices(Split::Test);
    let test = if test_idx.is_empty() {
        None
    } else {
        Some(evaluate_indices(&best_model, &data, &test_idx, Split::Test)?)
    };
    let report = RunReport {
        seed: config.seed,
        config: config.clone(),
        model: model_config.clone(),
        classes: data.labels.labels().to_vec(),
        train_docs: train_idx.len(),
        val_docs: val_idx.len(),
        test_docs: test_idx.len(),
        epochs: records,
        best_epoch,
        best_val_acc,
        stopped_early,
        test,
        manifest: None,
    };
    Ok(TrainOutcome {
        model: best_model,
        report,
    })
}

/// Accuracy, mean loss and per-class accuracy of `model` on one split.
pub fn evaluate<T: Scalar>(model: &TextGsl<T>, data: &Dataset<T>, split: Split) -> Result<Evaluation, TrainError> {
    evaluate_indices(model, data, &data.indices(split), split)
}

fn evaluate_indices<T: Scalar>(
    model: &TextGsl<T>,
    data: &Dataset<T>,
    idx: &[usize],
    split: Split,
) -> Result<Evaluation, TrainError> {
    if model.spec().classes != data.classes() {
        return Err(TrainError::ClassMismatch {
            model: model.spec().classes,
            data: data.classes(),
        });
    }
    let c = data.classes();
    let mut totals = vec![0usize; c];
    let mut hits = vec![0usize; c];
    let mut loss = 0.0;
    for &k in idx {
        let label = data.examples[k].label;
        let p = model.predict_proba(&data.input(k))?;
        let mut best = 0;
        for j in 1..p.len() {
            if p[j] > p[best] {
                best = j;
            }
        }
        loss -= p[label].as_f64().max(readout::LOG_CLAMP).ln();
        totals[label] += 1;
        if best == label {
            hits[label] += 1;
        }
    }
    let total = idx.len();
    let correct: usize = hits.iter().sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Evaluation {
        split,
        total,
        correct,
        accuracy: ratio(correct, total),
        loss: if total == 0 { 0.0 } else { loss / total as f64 },
        per_class: (0..c)
            .map(|j| ClassAccuracy {
                label: data.labels.label(j).to_string(),
                total: totals[j],
                correct: hits[j],
                accuracy: ratio(hits[j], totals[j]),
            })
            .collect(),
    })
}

/// Accuracy of fixed predictions against labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "prediction count");
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}
