//! Reconstruction and regularisation phases, and the early-stopped loop.

use std::rc::Rc;

use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Autoencoder, Mode, RunningStats};
use super::params::{Adam, AdamConfig, Group, ParamStore};
use super::tape::{Gradients, Mat, Tape, Var};
use super::{DiscriminatorKind, NnError, Result, PROB_EPS};
use crate::geometry::sample_prior_with;
use crate::graph::{Graph, GraphStream};
use crate::seeding::derive;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            patience: 20,
            batch_size: 128,
            val_fraction: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Losses of one adversarial step. The discriminator loss is absent in
/// geometric mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub reconstruction: f64,
    pub discriminator: Option<f64>,
    pub generator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reconstruction: f64,
    pub discriminator: Option<f64>,
    pub generator: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Validation reconstruction loss of the untrained model.
    pub initial_validation: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl History {
    pub fn best_validation(&self) -> f64 {
        self.epochs[self.best_epoch - 1].validation
    }
}

/// Optimiser state for the three phases plus the generator used for dropout
/// and prior samples.
pub struct Trainer {
    reconstruction: Adam,
    discriminator: Adam,
    generator: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: &Autoencoder, adam: AdamConfig, seed: u64) -> Self {
        let store = model.params();
        Trainer {
            reconstruction: Adam::new(adam, store, store.ids_in(&[Group::Encoder, Group::Decoder])),
            discriminator: Adam::new(adam, store, store.ids_in(&[Group::Discriminator])),
            generator: Adam::new(adam, store, store.ids_in(&[Group::Encoder])),
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Updates the discriminator with cross-entropy on `real` rows (label 1)
    /// against `fake` rows (label 0) and returns the loss before the update.
    pub fn discriminator_step(&mut self, model: &mut Autoencoder, real: &Mat, fake: &Mat) -> Result<f64> {
        let (nr, nf) = (real.nrows(), fake.nrows());
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape);
        let z = tape.leaf(concatenate(Axis(0), &[real.view(), fake.view()]).expect("equal widths"));
        let d = model.discriminator_forward(&mut tape, &p, z);
        let mut target = Mat::zeros((nr + nf, 1));
        target.slice_mut(ndarray::s![..nr, ..]).fill(1.0);
        let weight = Mat::from_elem((nr + nf, 1), 1.0 / (nr + nf) as f64);
        let loss = tape.bce(d, Rc::new(target), Rc::new(weight), PROB_EPS);
        let value = finite(tape.scalar(loss), self.step, "discriminator loss")?;
        let grads = tape.backward(loss);
        apply(&mut self.discriminator, &mut model.store, &p, &grads, self.step)?;
        Ok(value)
    }
}

fn apply(adam: &mut Adam, store: &mut ParamStore, vars: &[Var], grads: &Gradients, step: usize) -> Result<()> {
    let g: Vec<Option<&Mat>> = adam.ids().iter().map(|&id| grads.wrt(vars[id])).collect();
    if g.iter().flatten().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(NnError::Divergence { step, what: "gradient" });
    }
    adam.update(store, &g);
    Ok(())
}

fn finite(value: f64, step: usize, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NnError::Divergence { step, what })
    }
}

/// One reconstruction phase followed by the regularisation phase on `batch`.
pub fn adversarial_step(model: &mut Autoencoder, trainer: &mut Trainer, batch: &[&Graph]) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(NnError::Shape("empty batch".into()));
    }
    trainer.step += 1;
    let step = trainer.step;
    let packed = model.batch(batch)?;

    // Reconstruction: encoder and decoder on the autoencoder loss.
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let f = model.forward(&mut tape, &p, &packed, Mode::Train(&mut trainer.rng));
    let recon = model.reconstruction_on_tape(&mut tape, &f, &packed);
    let reconstruction = finite(tape.scalar(recon), step, "reconstruction loss")?;
    let total = match model.l2_on_tape(&mut tape, &p) {
        Some(l2) => tape.add(recon, l2),
        None => recon,
    };
    let grads = tape.backward(total);
    apply(&mut trainer.reconstruction, &mut model.store, &p, &grads, step)?;
    model.update_running_stats(&f.batch_stats);

    let b = batch.len();
    let inv_b = 1.0 / b as f64;
    let mut discriminator = None;

    if model.config.discriminator == DiscriminatorKind::Probabilistic {
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape);
        let fake = model.encoder_forward(
            &mut tape,
            &p,
            &packed,
            &mut Mode::Train(&mut trainer.rng),
            &mut Vec::new(),
        );
        let fake = tape.value(fake).clone();
        let real = sample_prior_rows(model, b, &mut trainer.rng)?;
        discriminator = Some(trainer.discriminator_step(model, &real, &fake)?);
    }

    // Generator: encoder only.
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let raw = model.encoder_forward(
        &mut tape,
        &p,
        &packed,
        &mut Mode::Train(&mut trainer.rng),
        &mut Vec::new(),
    );
    let loss = match model.config.discriminator {
        DiscriminatorKind::Probabilistic => {
            let d = model.discriminator_forward(&mut tape, &p, raw);
            let ones = Rc::new(Mat::ones((b, 1)));
            let weight = Rc::new(Mat::from_elem((b, 1), inv_b));
            tape.bce(d, ones, weight, PROB_EPS)
        }
        DiscriminatorKind::Geometric => tape.geometric_loss(raw, model.block_geometry(), model.config.sigma, PROB_EPS),
    };
    let generator = finite(tape.scalar(loss), step, "generator loss")?;
    let grads = tape.backward(loss);
    apply(&mut trainer.generator, &mut model.store, &p, &grads, step)?;

    Ok(StepLosses {
        reconstruction,
        discriminator,
        generator,
    })
}

/// `count` rows of concatenated prior samples, one block per member.
fn sample_prior_rows(model: &Autoencoder, count: usize, rng: &mut ChaCha8Rng) -> Result<Mat> {
    let ens = model.ensemble();
    let mut out = Mat::zeros((count, ens.latent_dim()));
    let bd = ens.block_dim();
    for r in 0..count {
        for (m, member) in ens.members().iter().enumerate() {
            let point = sample_prior_with(*member, rng)?;
            for (k, v) in point.coords().iter().enumerate() {
                out[[r, m * bd + k]] = *v;
            }
        }
    }
    Ok(out)
}

/// Trains with early stopping on the validation reconstruction loss and
/// leaves the best parameters in `model`.
///
/// The last `val_fraction` of the stream is held out. Training stops once
/// `patience` epochs have passed without improvement, so `patience = 0`
/// runs exactly one epoch.
pub fn train(model: &mut Autoencoder, stream: &GraphStream, config: &TrainConfig) -> Result<History> {
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(NnError::Config("batch_size and max_epochs must be positive".into()));
    }
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        return Err(NnError::Config("val_fraction must lie in (0, 1)".into()));
    }
    let n = stream.len();
    let n_val = (n as f64 * config.val_fraction).ceil() as usize;
    if n_val == 0 || n_val >= n {
        return Err(NnError::Config(format!(
            "a stream of {n} graphs cannot be split with validation fraction {}",
            config.val_fraction
        )));
    }
    let graphs: Vec<&Graph> = stream.graphs.iter().collect();
    let (train_set, val_set) = graphs.split_at(n - n_val);

    let mut trainer = Trainer::new(model, config.adam, derive(config.seed, "trainer"));
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive(config.seed, "batch-order"));
    let initial_validation = model.evaluate_loss(val_set)?;
    let mut best: Option<(f64, ParamStore, Vec<RunningStats>)> = None;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        let (mut rec, mut dis, mut gen, mut batches) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Graph> = chunk.iter().map(|&i| train_set[i]).collect();
            let losses = adversarial_step(model, &mut trainer, &batch)?;
            rec += losses.reconstruction;
            dis += losses.discriminator.unwrap_or(0.0);
            gen += losses.generator;
            batches += 1.0;
        }
        let validation = model.evaluate_loss(val_set)?;
        finite(validation, trainer.steps(), "validation loss")?;
        epochs.push(EpochRecord {
            epoch,
            reconstruction: rec / batches,
            discriminator: (model.config.discriminator == DiscriminatorKind::Probabilistic).then_some(dis / batches),
            generator: gen / batches,
            validation,
        });
        if best.as_ref().is_none_or(|(b, _, _)| validation < *b) {
            best = Some((validation, model.store.clone(), model.running.clone()));
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }
    let (_, store, running) = best.expect("at least one epoch ran");
    model.store = store;
    model.running = running;
    Ok(History {
        initial_validation,
        epochs,
        best_epoch,
    })
}
