//! Batch assembly and the training loop: label-smoothed cross entropy,
//! Adam with an optional inverse-sqrt schedule, per-epoch teacher-forced
//! dev accuracy, early stopping on patience, and an optional parameter
//! EMA used for evaluation and for the kept checkpoint.

use super::fusion::ProviderData;
use super::model::{BoundParams, Seq2SeqModel};
use super::rnn::forward_loss_rnn;
use super::transformer::forward_loss_transformer;
use super::{Arch, BatchType, NmtError};
use crate::numerics::{AdamConfig, AdamState, ParamAverager, Tape, Tensor, Var, IGNORE_TARGET};
use crate::rng::Rng;

/// One padded training batch (ids only; padding happens inside the
/// forwards). `provider` rows align with `src` rows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub tgt: Vec<Vec<u32>>,
    pub provider: Option<Vec<Tensor>>,
}

/// Id-encoded corpus plus optional provider vectors by sentence index.
#[derive(Debug, Clone, Default)]
pub struct DataSet {
    pub pairs: Vec<(Vec<u32>, Vec<u32>)>,
    pub provider: Option<ProviderData>,
}

impl DataSet {
    pub fn new(pairs: Vec<(Vec<u32>, Vec<u32>)>) -> DataSet {
        DataSet {
            pairs,
            provider: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Architecture dispatch for the teacher-forced loss. Logit rows align
/// with the returned flat targets.
pub fn forward_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    batch: &Batch,
) -> (Var, Var, Vec<usize>) {
    match model.config.arch {
        Arch::Rnn => forward_loss_rnn(tape, bound, model, batch),
        Arch::Transformer => forward_loss_transformer(tape, bound, model, batch),
    }
}

/// Group sentence indices into batches: sorted by length for padding
/// efficiency, then filled by sentence count or by a target-token
/// budget (end-of-sentence counted).
pub fn make_batches(data: &DataSet, batch_type: BatchType, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.pairs.len()).collect();
    order.sort_by_key(|&i| (data.pairs[i].1.len(), data.pairs[i].0.len(), i));
    let mut batches = Vec::new();
    match batch_type {
        BatchType::Sents => {
            for chunk in order.chunks(batch_size.max(1)) {
                batches.push(chunk.to_vec());
            }
        }
        BatchType::Tokens => {
            let mut current: Vec<usize> = Vec::new();
            let mut budget = 0usize;
            for i in order {
                let cost = data.pairs[i].1.len() + 1;
                if !current.is_empty() && budget + cost > batch_size.max(1) {
                    batches.push(std::mem::take(&mut current));
                    budget = 0;
                }
                current.push(i);
                budget += cost;
            }
            if !current.is_empty() {
                batches.push(current);
            }
        }
    }
    batches
}

fn assemble(data: &DataSet, indices: &[usize]) -> Result<Batch, NmtError> {
    let src: Vec<Vec<u32>> = indices.iter().map(|&i| data.pairs[i].0.clone()).collect();
    let tgt: Vec<Vec<u32>> = indices.iter().map(|&i| data.pairs[i].1.clone()).collect();
    let provider = match &data.provider {
        Some(provider) => {
            let mut rows = Vec::with_capacity(indices.len());
            for (&i, src_sent) in indices.iter().zip(&src) {
                rows.push(provider.for_sentence(i, src_sent.len())?.clone());
            }
            Some(rows)
        }
        None => None,
    };
    Ok(Batch { src, tgt, provider })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Model holding the best-scoring parameters (the EMA copy when
    /// parameter averaging is on).
    pub model: Seq2SeqModel,
    pub best_dev_accuracy: f64,
    pub best_epoch: usize,
    pub steps: u64,
    pub history: Vec<EpochStats>,
}

/// Teacher-forced next-token accuracy under evaluation parameters.
pub fn token_accuracy(model: &Seq2SeqModel, data: &DataSet) -> Result<f64, NmtError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let batches = make_batches(data, model.config.batch_type, model.config.batch_size);
    let mut correct = 0u64;
    let mut total = 0u64;
    for indices in &batches {
        let batch = assemble(data, indices)?;
        let mut tape = Tape::eval_mode(model.config.seed);
        let bound = BoundParams::bind(model, &mut tape);
        let (_, logits, targets) = forward_loss(&mut tape, &bound, model, &batch);
        let logits = tape.value(logits);
        for (row, &target) in targets.iter().enumerate() {
            if target == IGNORE_TARGET {
                continue;
            }
            let slice = logits.row_slice(row);
            let argmax = slice
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            total += 1;
            if argmax == target {
                correct += 1;
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}

/// Train until the dev accuracy stops improving for `patience` epochs or
/// `max_epochs` is reached. Keeps the best-dev parameters. Identical
/// seeds give identical outcomes.
pub fn train(
    mut model: Seq2SeqModel,
    train_data: &DataSet,
    dev_data: &DataSet,
) -> Result<TrainOutcome, NmtError> {
    if train_data.is_empty() {
        return Err(NmtError::InvalidConfig("empty training corpus".into()));
    }
    let config = model.config.clone();
    let batches = make_batches(train_data, config.batch_type, config.batch_size);
    // Materialize once; epochs shuffle the visit order only.
    let assembled: Vec<Batch> = batches
        .iter()
        .map(|indices| assemble(train_data, indices))
        .collect::<Result<_, _>>()?;

    let mut adam = AdamState::new(
        &model.params.tensors,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let schedule = config.lr_schedule();
    let mut averager = config
        .average_decay
        .map(|decay| ParamAverager::new(&model.params.tensors, decay));

    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_params: Option<Vec<Tensor>> = None;
    let mut best_epoch = 0;
    let mut bad_epochs = 0usize;
    let mut history = Vec::new();
    let mut order_rng = Rng::new(config.seed ^ 0x0e70c5);
    let mut steps = 0u64;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..assembled.len()).collect();
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (visit, &batch_idx) in order.iter().enumerate() {
            let batch = &assembled[batch_idx];
            let tape_seed = config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((epoch as u64) << 20)
                .wrapping_add(visit as u64);
            let mut tape = Tape::new(tape_seed);
            let bound = BoundParams::bind(&model, &mut tape);
            let (loss, _, _) = forward_loss(&mut tape, &bound, &model, batch);
            loss_sum += tape.value(loss).item();
            tape.backward(loss);
            let grads: Vec<Option<Tensor>> = bound
                .vars
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if model.frozen.contains(&i) {
                        None
                    } else {
                        tape.grad(v).cloned()
                    }
                })
                .collect();
            steps += 1;
            adam.step(
                &mut model.params.tensors,
                &grads,
                schedule.multiplier(steps),
            );
            if let Some(avg) = &mut averager {
                avg.update(&model.params.tensors);
            }
        }

        // Evaluate with the averaged parameters when configured.
        let eval_params: Vec<Tensor> = match &averager {
            Some(avg) => avg.average.clone(),
            None => model.params.tensors.clone(),
        };
        let mut eval_model = model.clone();
        eval_model.params.tensors = eval_params.clone();
        let dev_accuracy = token_accuracy(&eval_model, dev_data)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / assembled.len() as f64,
            dev_accuracy,
        });

        if dev_accuracy > best_accuracy {
            best_accuracy = dev_accuracy;
            best_params = Some(eval_params);
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > config.early_stop_patience {
                break;
            }
        }
    }

    if let Some(params) = best_params {
        model.params.tensors = params;
    }
    Ok(TrainOutcome {
        model,
        best_dev_accuracy: best_accuracy.max(0.0),
        best_epoch,
        steps,
        history,
    })
}
