use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainingMeta};
use super::data::{Dataset, Example};
use super::PipelineError;
use crate::model::{top_k, Batch, Model, ModelConfig, ModelError};
use crate::numeric::{AdamW, AdamWConfig, Gradients, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Compute per-file gradients on the thread pool and sum them in file
    /// order.
    pub parallel: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { batch_size: 64, epochs: 60, lr: 1e-3, seed: 0, parallel: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub wall_seconds: f64,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
pub struct DivergenceError {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Loss and accuracy of a model over a set of files.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplitScore {
    /// Mean cross-entropy over labels inside the type vocabulary.
    pub loss: f64,
    /// Accuracies over every label; out-of-vocabulary labels count as wrong.
    pub top1: f64,
    pub top5: f64,
    pub labels: usize,
}

/// A model and its optimizer state.
// Labels, loss, gradients, logits and label types of one file.
type FilePart<T> = Result<(usize, T, Gradients<T>, Tensor<T>, Vec<usize>), ModelError>;

#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub parallel: bool,
}

/// What one optimizer step saw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub labels: usize,
    pub top1_hits: usize,
    pub top5_hits: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, lr: f64) -> Self {
        Trainer { model, optimizer: AdamW::new(AdamWConfig { lr, ..AdamWConfig::default() }), parallel: false }
    }

    /// Loss and gradients of one batch without updating anything.
    pub fn gradients(&self, batch: &[&Example]) -> Result<(StepStats, Gradients<T>), ModelError> {
        if self.parallel && batch.len() > 1 {
            return self.parallel_gradients(batch);
        }
        let inputs: Vec<_> = batch.iter().map(|e| &e.input).collect();
        let packed = Batch::pack(&inputs);
        let (loss, grads, logits) = self.model.loss_grads_logits(&packed)?;
        let mut stats = StepStats { loss: loss.to_f64().unwrap_or(f64::NAN), labels: 0, top1_hits: 0, top5_hits: 0 };
        tally(&logits, &packed.label_types, &mut stats);
        Ok((stats, grads))
    }

    fn parallel_gradients(&self, batch: &[&Example]) -> Result<(StepStats, Gradients<T>), ModelError> {
        let parts: Vec<FilePart<T>> = batch
            .par_iter()
            .map(|e| {
                let packed = Batch::pack(&[&e.input]);
                let (l, g, logits) = self.model.loss_grads_logits(&packed)?;
                Ok((packed.label_types.len(), l, g, logits, packed.label_types.to_vec()))
            })
            .collect();
        let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
        let total: usize = parts.iter().map(|p| p.0).sum();
        let mut stats = StepStats { loss: 0.0, labels: 0, top1_hits: 0, top5_hits: 0 };
        let mut sum = Gradients::new();
        let mut loss = T::zero();
        for (n, l, g, logits, types) in parts {
            let w = T::from_f64_lossy(n as f64 / total as f64);
            loss = loss + l * w;
            for (name, t) in g {
                let scaled = t.map(|x| x * w);
                match sum.get_mut(&name) {
                    Some(acc) => Tensor::add_assign(acc, &scaled),
                    None => {
                        sum.insert(name, scaled);
                    }
                }
            }
            tally(&logits, &types, &mut stats);
        }
        stats.loss = loss.to_f64().unwrap_or(f64::NAN);
        Ok((stats, sum))
    }

    /// One AdamW update on the mean loss of `batch`. A non-finite loss
    /// leaves the parameters untouched.
    pub fn step(&mut self, batch: &[&Example]) -> Result<StepStats, ModelError> {
        let (stats, grads) = self.gradients(batch)?;
        if stats.loss.is_finite() {
            self.optimizer.step(&mut self.model.params, &grads)?;
        }
        Ok(stats)
    }
}

fn tally<T: Scalar>(logits: &Tensor<T>, types: &[usize], stats: &mut StepStats) {
    for (r, &want) in types.iter().enumerate() {
        let best = top_k(logits.row(r), 5);
        stats.labels += 1;
        stats.top1_hits += usize::from(best.first().map(|b| b.0) == Some(want));
        stats.top5_hits += usize::from(best.iter().any(|b| b.0 == want));
    }
}

/// Loss and accuracy over `examples`, evaluated `batch_size` files at a time.
pub fn evaluate_loss<T: Scalar>(model: &Model<T>, examples: &[Example], batch_size: usize) -> Result<SplitScore, ModelError> {
    let (mut nll, mut scored, mut labels, mut top1, mut top5) = (0.0f64, 0usize, 0usize, 0usize, 0usize);
    for chunk in examples.chunks(batch_size.max(1)) {
        let inputs: Vec<_> = chunk.iter().map(|e| &e.input).collect();
        let packed = Batch::pack(&inputs);
        if packed.all_labels.is_empty() {
            continue;
        }
        let logits = model.label_logits(&packed)?;
        for (r, &(_, want)) in packed.all_labels.iter().enumerate() {
            labels += 1;
            let Some(want) = want else { continue };
            let row: Vec<f64> = logits.row(r).iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
            nll += crate::numeric::cross_entropy(&row, want)?;
            scored += 1;
            let best = top_k(&row, 5);
            top1 += usize::from(best[0].0 == want);
            top5 += usize::from(best.iter().any(|b| b.0 == want));
        }
    }
    let frac = |n: usize| if labels == 0 { 0.0 } else { n as f64 / labels as f64 };
    Ok(SplitScore {
        loss: if scored == 0 { 0.0 } else { nll / scored as f64 },
        top1: frac(top1),
        top5: frac(top5),
        labels,
    })
}

pub struct TrainOutcome<T: Scalar> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model<T>,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
}

/// Train from a fresh initialisation. Epoch 0 is the initialisation itself;
/// the kept parameters are those of the epoch with the lowest validation
/// loss (the last epoch when there are no validation files). Each record is
/// passed to `on_log` as soon as it exists.
pub fn train<T: Scalar>(
    config: ModelConfig,
    data: &Dataset,
    opts: &TrainOptions,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome<T>, PipelineError> {
    let start = Instant::now();
    let model = Model::<T>::init(config, data.vocab_sizes(), opts.seed)?;
    let usable: Vec<&Example> = data.train.iter().filter(|e| e.trainable_labels() > 0).collect();
    if usable.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut trainer = Trainer::new(model, opts.lr);
    trainer.parallel = opts.parallel;
    let mut log = Vec::new();
    let mut emit = |r: LogRecord, log: &mut Vec<LogRecord>| {
        on_log(&r);
        log.push(r);
    };
    let record = |epoch, split: &str, s: SplitScore| LogRecord {
        epoch,
        split: split.to_string(),
        loss: s.loss,
        top1: s.top1,
        top5: s.top5,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let bs = opts.batch_size.max(1);
    let validate = |m: &Model<T>| -> Result<Option<SplitScore>, ModelError> {
        if data.valid.is_empty() {
            Ok(None)
        } else {
            evaluate_loss(m, &data.valid, bs).map(Some)
        }
    };
    let mut best_epoch = 0;
    let mut best_loss = validate(&trainer.model)?.map(|s| {
        emit(record(0, "valid", s), &mut log);
        s.loss
    });
    let mut best_params = trainer.model.params.clone();
    for epoch in 1..=opts.epochs {
        let mut order = usable.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut labels, mut top1, mut top5) = (0.0, 0usize, 0usize, 0usize);
        for (step, chunk) in order.chunks(bs).enumerate() {
            let s = trainer.step(chunk)?;
            if !s.loss.is_finite() {
                return Err(DivergenceError { epoch, step, loss: s.loss }.into());
            }
            loss_sum += s.loss * s.labels as f64;
            labels += s.labels;
            top1 += s.top1_hits;
            top5 += s.top5_hits;
        }
        let n = labels.max(1) as f64;
        let train_score = SplitScore { loss: loss_sum / n, top1: top1 as f64 / n, top5: top5 as f64 / n, labels };
        emit(record(epoch, "train", train_score), &mut log);
        match validate(&trainer.model)? {
            Some(s) => {
                emit(record(epoch, "valid", s), &mut log);
                if best_loss.is_none_or(|b| s.loss < b) {
                    best_loss = Some(s.loss);
                    best_epoch = epoch;
                    best_params = trainer.model.params.clone();
                }
            }
            None => {
                best_epoch = epoch;
                best_params = trainer.model.params.clone();
            }
        }
    }
    let model = Model { params: best_params, ..trainer.model };
    let meta = TrainingMeta {
        epoch: best_epoch,
        valid_loss: best_loss,
        seed: opts.seed,
        batch_size: bs,
        learning_rate: opts.lr,
        epochs_run: opts.epochs,
        split: None,
        type_counts: data.type_counts.clone(),
    };
    let checkpoint = Checkpoint::from_model(&model, data.vocab.clone(), meta);
    Ok(TrainOutcome { model, checkpoint, log })
}
