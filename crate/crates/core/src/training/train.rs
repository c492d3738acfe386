use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{rec_loss, stack_persons};
use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{Ablation, ForwardOptions, Model, ModelConfig, PreparedScene};
use crate::motion::{differences, Scene, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Observed frames `T+1` taken from the start of every scene.
    pub observed_frames: usize,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 3e-4,
            dropout: 0.2,
            seed: 0,
            observed_frames: 51,
            max_steps: None,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::validation("lr", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout", "must lie in [0, 1)"));
        }
        if self.observed_frames < 2 {
            return Err(Error::validation("observed_frames", "must be at least 2"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::validation("max_steps", "must be positive"));
        }
        self.ablation.validate()
    }

    /// `base` with this run's dropout and ablation switches applied.
    pub fn model_config(&self, base: &ModelConfig) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            dropout: self.dropout,
            ablation: self.ablation,
            ..base.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets the ablation switches of a configuration.
pub fn apply_ablation(cfg: &ModelConfig, flags: Ablation) -> Result<ModelConfig> {
    flags.validate()?;
    let out = ModelConfig {
        ablation: flags,
        ..cfg.clone()
    };
    out.validate()?;
    Ok(out)
}

/// An observed prefix and the displacements of the following `N` frames.
#[derive(Clone, Debug)]
pub struct Sample {
    pub observed: Scene,
    /// Absolute future poses, `N×J×3` per person.
    pub future: Vec<Sequence>,
    /// `(P·N) × (J·3)` future displacements, starting from the last observed pose.
    pub target: Tensor,
}

impl Sample {
    pub fn from_scene(scene: &Scene, observed_frames: usize, horizon: usize) -> Result<Self> {
        let needed = observed_frames + horizon;
        if scene.num_frames() < needed {
            return Err(Error::SequenceTooShort {
                what: "scene",
                needed,
                got: scene.num_frames(),
            });
        }
        let observed = scene.slice_frames(0, observed_frames);
        let with_last = scene.slice_frames(observed_frames - 1, needed);
        let future = with_last.persons.iter().map(|s| s.slice(1, horizon + 1)).collect();
        let disp: Vec<Sequence> = with_last.persons.iter().map(differences).collect();
        Ok(Self {
            observed,
            future,
            target: stack_persons(&disp)?,
        })
    }
}

/// Splits scenes into samples, rejecting all short scenes at once.
pub fn make_samples(scenes: &[Scene], observed_frames: usize, horizon: usize) -> Result<Vec<Sample>> {
    let needed = observed_frames + horizon;
    let short: Vec<String> = scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| s.num_frames() < needed)
        .map(|(i, s)| format!("#{i} ({} frames)", s.num_frames()))
        .collect();
    if !short.is_empty() {
        return Err(Error::validation(
            "data",
            format!("scenes need at least {needed} frames; too short: {}", short.join(", ")),
        ));
    }
    scenes
        .iter()
        .map(|s| Sample::from_scene(s, observed_frames, horizon))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean batch loss per optimizer step.
    pub step_loss: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    /// `epoch,loss` rows with a header.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.epoch_loss.iter().enumerate() {
            s.push_str(&format!("{},{l:?}\n", e + 1));
        }
        s
    }
}

/// Mini-batch Adam on the reconstruction loss. Shuffling and dropout draw
/// from streams seeded by `cfg.seed`, so identical inputs give identical runs.
pub fn train(model: &mut Model, scenes: &[Scene], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if model.config.ablation != cfg.ablation {
        return Err(Error::validation(
            "ablation",
            format!(
                "model built with {:?} but training requested {:?}",
                model.config.ablation.names(),
                cfg.ablation.names()
            ),
        ));
    }
    if scenes.is_empty() {
        return Err(Error::validation("data", "no scenes"));
    }
    if cfg.observed_frames < model.config.min_observed_frames() {
        return Err(Error::validation(
            "observed_frames",
            format!(
                "{} < kernel + 1 = {}",
                cfg.observed_frames,
                model.config.min_observed_frames()
            ),
        ));
    }
    model.config.dropout = cfg.dropout;
    let samples = make_samples(scenes, cfg.observed_frames, model.config.horizon)?;
    let prepared: Vec<PreparedScene> = samples
        .iter()
        .map(|s| model.prepare(&s.observed))
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        epoch_loss: Vec::new(),
        step_loss: Vec::new(),
        steps: 0,
    };
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break 'epochs;
            }
            model.params.zero_grad();
            let mut batch_sum = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new();
                let opts = ForwardOptions {
                    training: true,
                    dropout_seed: rand::Rng::random(&mut rng),
                    record_attention: false,
                };
                let out = model.forward(&mut tape, &prepared[i], opts)?;
                let loss = rec_loss(&mut tape, out.displacements, &samples[i].target)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at step {}", report.steps)));
                }
                batch_sum += value;
                tape.backward(loss)?.accumulate_scaled(&mut model.params, scale);
            }
            adam.step(&mut model.params);
            report.steps += 1;
            report.step_loss.push(batch_sum * scale);
            epoch_sum += batch_sum;
            epoch_count += batch.len();
        }
        if epoch_count > 0 {
            report.epoch_loss.push(epoch_sum / epoch_count as f64);
        }
    }
    Ok(report)
}

/// Reconstruction loss of the model on each sample without dropout.
pub fn evaluate_loss(model: &Model, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let prep = model.prepare(&s.observed)?;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &prep, ForwardOptions::default())?;
        let loss = rec_loss(&mut tape, out.displacements, &s.target)?;
        total += tape.value(loss).data()[0];
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Deterministic 90/10 split of `n` items by seeded shuffle: `(train, held_out)`.
/// At least one item is held out when `n ≥ 2`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = if n >= 2 { (n / 10).max(1) } else { 0 };
    let val = idx.split_off(n - held);
    (idx, val)
}
