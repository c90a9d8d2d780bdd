use std::path::Path;

use serde::Serialize;

use crate::autograd::Tape;
use crate::data::{GrayImage, Sample};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::nn::Mode;
use crate::panet::{save_checkpoint, PaNet};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;
use crate::train::adam::AdamState;
use crate::train::config::TrainConfig;

/// Independent random streams of one training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrainSeeds {
    pub init: u64,
    pub shuffle: u64,
}

impl TrainSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            init: derive_seed(seed, 1),
            shuffle: derive_seed(seed, 2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

/// A model with its optimizer; one [`Trainer::step`] is one Adam update.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: PaNet<f32>,
    pub adam: AdamState<f32>,
    cfg: TrainConfig,
}

fn batch_tensors(batch: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (h, w) = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument {
            op: "train",
            msg: "empty batch".into(),
        })?
        .image
        .dims();
    let n = batch.len();
    let mut img = Vec::with_capacity(n * h * w);
    let mut lab = Vec::with_capacity(n * h * w);
    for s in batch {
        if s.image.dims() != (h, w) {
            return Err(Error::ShapeMismatch {
                op: "train",
                lhs: vec![h, w],
                rhs: vec![s.image.height(), s.image.width()],
            });
        }
        img.extend_from_slice(s.image.data());
        lab.extend(s.mask.data().iter().map(|&v| v as f32));
    }
    Ok((Tensor::new(&[n, 1, h, w], img)?, Tensor::new(&[n, 1, h, w], lab)?))
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let model = PaNet::build(&cfg.model, init_seed)?;
        let adam = AdamState::new(&model.params);
        Ok(Self {
            model,
            adam,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Loss of `batch` in training mode, without updating anything.
    pub fn loss(&self, batch: &[&Sample]) -> Result<f64> {
        let (x, l) = batch_tensors(batch)?;
        let mut tape = Tape::new();
        let loss = self.record_loss(&mut tape, x, l)?;
        Ok(tape.value(loss).data()[0] as f64)
    }

    fn record_loss(&self, tape: &mut Tape<f32>, x: Tensor<f32>, l: Tensor<f32>) -> Result<crate::autograd::NodeId> {
        let x = tape.constant(x);
        let l = tape.constant(l);
        let probs = self.model.forward(tape, x, Mode::Training)?;
        let fg = tape.select_channel(probs, 1)?;
        self.cfg.loss.apply(tape, fg, l, &self.cfg.ssim)
    }

    /// Forward, backward and one Adam update; returns the pre-update loss.
    /// A non-finite loss aborts before any state changes.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<f64> {
        let (x, l) = batch_tensors(batch)?;
        let mut tape = Tape::new();
        let loss = self.record_loss(&mut tape, x, l)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                batch: self.adam.t as usize,
                loss: value,
            });
        }
        self.model.params.zero_grad();
        tape.backprop(loss, &mut self.model.params)?;
        self.adam.step(&mut self.model.params, self.cfg.learning_rate)?;
        tape.commit_running_stats(&mut self.model.params);
        Ok(value)
    }

    /// Inference-mode plaque probabilities.
    pub fn predict(&self, image: &GrayImage) -> Result<Vec<f32>> {
        predict(&self.model, image)
    }

    /// Inference-mode mask thresholded at 0.5.
    pub fn segment(&self, image: &GrayImage) -> Result<BinaryMask> {
        segment(&self.model, image)
    }
}

pub fn predict(model: &PaNet<f32>, image: &GrayImage) -> Result<Vec<f32>> {
    model.predict_foreground(image.height(), image.width(), image.data())
}

pub fn segment(model: &PaNet<f32>, image: &GrayImage) -> Result<BinaryMask> {
    let probs = predict(model, image)?;
    BinaryMask::from_probabilities(image.height(), image.width(), &probs)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: PaNet<f32>,
    pub history: Vec<EpochStats>,
    pub steps: u64,
}

/// `epochs × ⌈N / batch_size⌉` Adam steps over `samples`, reshuffled every
/// epoch. Writes the final checkpoint when `checkpoint` is given.
pub fn train(
    cfg: &TrainConfig,
    samples: &[Sample],
    seeds: TrainSeeds,
    checkpoint: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument {
            op: "train",
            msg: "training set is empty".into(),
        });
    }
    let mut trainer = Trainer::new(cfg, seeds.init)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        SplitMix64::new(derive_seed(seeds.shuffle, epoch as u64)).shuffle(&mut order);
        let mut total = 0.0;
        let mut steps = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let loss = trainer.step(&batch).map_err(|e| match e {
                Error::Diverged { loss, .. } => Error::Diverged { epoch, batch: b, loss },
                other => other,
            })?;
            total += loss;
            steps += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / steps as f64,
            steps,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    if let Some(path) = checkpoint {
        save_checkpoint(&trainer.model, path)?;
    }
    Ok(TrainOutcome {
        steps: trainer.adam.t,
        model: trainer.model,
        history,
    })
}
