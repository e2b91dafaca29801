//! Mini-batch Adam training on synthetic scenes with a per-epoch held-out
//! evaluation of the final head.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{self, EvalPair, MetricReport};
use crate::tensor::Tensor;

use super::adam::{adam_step, AdamState};
use super::config::{AblationVariant, ToyConfig};
use super::data::{gen_synthetic_sized, SyntheticSample};
use super::model::Model;

const SHUFFLE_STREAM: u64 = 0x5eed_5eed;

/// One line of the training trace, written after every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    /// Mean hybrid loss over the epoch's optimisation steps.
    pub loss: f64,
    pub mae: f64,
    pub f_beta: f64,
    pub s_alpha: f64,
    pub e_phi: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<TraceRow>,
    /// Batch-mean loss of every optimisation step, in order.
    pub step_losses: Vec<f64>,
    pub report: MetricReport,
}

impl TrainOutcome {
    /// Relative drop from the first step's loss to the mean of the last five.
    pub fn loss_reduction(&self) -> f64 {
        let Some(&first) = self.step_losses.first() else { return 0.0 };
        let tail = &self.step_losses[self.step_losses.len().saturating_sub(5)..];
        let last = tail.iter().sum::<f64>() / tail.len() as f64;
        1.0 - last / first
    }
}

/// Leading `n - n/5` samples train, the rest are held out. A split that would
/// leave nothing held out evaluates on the training samples instead.
pub fn split(data: &[SyntheticSample]) -> (&[SyntheticSample], &[SyntheticSample]) {
    let n_train = data.len() - data.len() / 5;
    let (train, test) = data.split_at(n_train);
    if test.is_empty() {
        (train, train)
    } else {
        (train, test)
    }
}

pub fn evaluate_model(model: &Model, samples: &[SyntheticSample]) -> Result<MetricReport> {
    let pairs = samples
        .iter()
        .map(|s| {
            let pred = model.predict(s)?.maps.pop().ok_or_else(|| Error::contract("model produced no heads"))?;
            EvalPair::new(pred, s.gt.mask().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    metrics::evaluate(&pairs)
}

fn batch_step(model: &mut Model, batch: &[&SyntheticSample], state: &mut AdamState, t: usize, lr: f64) -> Result<f64> {
    let mut acc: Vec<Tensor> = model.params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut loss = 0.0;
    for sample in batch {
        let (l, grads) = model.loss_and_grads(sample)?;
        loss += l;
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_assign(g)?;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let acc: Vec<Tensor> = acc.iter().map(|g| g.scale(inv)).collect();
    adam_step(model.params.tensors_mut(), &acc, state, t, lr)?;
    Ok(loss * inv)
}

/// Trains a freshly initialised model of `variant` on `data`.
pub fn train(config: &ToyConfig, variant: AblationVariant, data: &[SyntheticSample]) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::contract("training needs at least one sample"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut model = Model::new(config, variant, &mut init_rng)?;
    let (train_set, test_set) = split(data);
    let mut state = AdamState::new(model.params.tensors());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<&SyntheticSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = batch_step(&mut model, &batch, &mut state, step_losses.len() + 1, lr)?;
            step_losses.push(loss);
            epoch_loss += loss;
            steps += 1;
        }
        let report = evaluate_model(&model, test_set)?;
        trace.push(TraceRow {
            epoch: epoch + 1,
            step: step_losses.len(),
            lr,
            loss: epoch_loss / steps as f64,
            mae: report.mae,
            f_beta: report.f_beta,
            s_alpha: report.s_alpha,
            e_phi: report.e_phi,
        });
    }
    let report = evaluate_model(&model, test_set)?;
    Ok(TrainOutcome { model, trace, step_losses, report })
}

/// Generates `config.samples` scenes from `config.seed` and trains on them.
pub fn train_synthetic(config: &ToyConfig, variant: AblationVariant) -> Result<TrainOutcome> {
    let (h, w) = config.input_size;
    let data = gen_synthetic_sized(config.samples, h, w, config.seed)?;
    train(config, variant, &data)
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("epoch,step,loss,mae,f_beta,s_alpha,e_phi\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.step, r.loss, r.mae, r.f_beta, r.s_alpha, r.e_phi
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ToyConfig {
        ToyConfig {
            input_size: (16, 16),
            channels: [2, 3, 4],
            width: 2,
            epochs: 2,
            samples: 10,
            batch: 4,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn split_holds_out_a_fifth() {
        let data = gen_synthetic_sized(10, 8, 8, 1).unwrap();
        let (a, b) = split(&data);
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a, b) = split(&data[..1]);
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn runs_and_traces_every_epoch() {
        let out = train_synthetic(&quick(), AblationVariant::Cma).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert_eq!(out.step_losses.len(), 4);
        assert!(out.step_losses.iter().all(|l| l.is_finite()));
        assert!(trace_csv(&out.trace).lines().count() == 3);
    }

    #[test]
    fn rejects_empty_data() {
        assert!(train(&quick(), AblationVariant::Model1, &[]).is_err());
    }
}
