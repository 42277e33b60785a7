// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{select_top_k, Adam, SaeModel};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::{axpy, col, dot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub expansion_factor: usize,
    pub k: usize,
    /// Fraction of the final epochs over which the learning rate decays
    /// linearly towards zero; 0 keeps it constant.
    #[serde(default)]
    pub decay_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-2,
            batch_size: 256,
            epochs: 1000,
            seed: 0,
            expansion_factor: 4,
            k: 8,
            decay_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.decay_fraction) {
            return Err(Error::InvalidConfig("decay fraction must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.expansion_factor == 0 || self.k == 0 {
            return Err(Error::InvalidConfig(
                "batch size, expansion factor and k must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample squared reconstruction error of each epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

struct Grads {
    encoder: Vec<f64>,
    b_enc: Vec<f64>,
    decoder: Vec<f64>,
    b_dec: Vec<f64>,
}

impl Grads {
    fn zeros(d: usize, d_sae: usize) -> Self {
        Grads {
            encoder: vec![0.0; d * d_sae],
            b_enc: vec![0.0; d_sae],
            decoder: vec![0.0; d * d_sae],
            b_dec: vec![0.0; d],
        }
    }

    fn clear(&mut self) {
        for buf in [
            &mut self.encoder,
            &mut self.b_enc,
            &mut self.decoder,
            &mut self.b_dec,
        ] {
            buf.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// Learning-rate multiplier: 1 until the decay window, then linear
/// towards zero (the last epoch still takes a small step).
fn lr_factor(epoch: usize, epochs: usize, decay_fraction: f64) -> f64 {
    let window = (decay_fraction * epochs as f64).ceil();
    let remaining = (epochs - epoch) as f64;
    if window <= 0.0 || remaining > window {
        1.0
    } else {
        remaining / window
    }
}

/// Train a Top-K SAE on every activation of `corpus` by Adam on the mean
/// squared reconstruction error, renormalizing decoder columns after each
/// step. Deterministic for a fixed seed.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<(SaeModel, TrainReport)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    corpus.validate()?;
    let d = corpus.d;
    let d_sae = config.expansion_factor * d;
    if config.k > d_sae {
        return Err(Error::OutOfRange {
            what: "k",
            value: config.k,
            min: 1,
            max: d_sae,
        });
    }
    let mut model = SaeModel::init(d, d_sae, config.k, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(config.learning_rate, &[d * d_sae, d_sae, d * d_sae, d]);
    let mut grads = Grads::zeros(d, d_sae);

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut centered = vec![0.0; d];
    let mut pre = vec![0.0; d_sae];
    let mut recon = vec![0.0; d];
    let mut active: Vec<usize> = Vec::with_capacity(d_sae);
    let mut history = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;

    for epoch in 0..config.epochs {
        adam.lr = config.learning_rate * lr_factor(epoch, config.epochs, config.decay_fraction);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            grads.clear();
            let scale = 2.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            // Batched forward pass: one GEMM for every pre-activation.
            let xc = DMatrix::from_fn(d, batch.len(), |r, c| {
                corpus.activations[batch[c]].values[r] - model.b_dec[r]
            });
            let pre_batch = model.encoder.tr_mul(&xc);
            for (slot, &idx) in batch.iter().enumerate() {
                let x = &corpus.activations[idx].values;
                centered.copy_from_slice(xc.column(slot).as_slice());
                for (p, (q, b)) in pre.iter_mut().zip(pre_batch.column(slot).iter().zip(&model.b_enc)) {
                    *p = q + b;
                }
                active.clear();
                active.extend((0..d_sae).filter(|&i| pre[i] > 0.0));
                if active.len() > model.k {
                    select_top_k(&pre, &mut active, model.k);
                }

                recon.copy_from_slice(&model.b_dec);
                for &i in &active {
                    axpy(pre[i], col(&model.decoder, i), &mut recon);
                }
                // recon becomes the residual gradient 2(x̂ − x)/B
                let mut sq = 0.0;
                for (r, xi) in recon.iter_mut().zip(x) {
                    let diff = *r - xi;
                    sq += diff * diff;
                    *r = scale * diff;
                }
                batch_loss += sq;

                axpy(1.0, &recon, &mut grads.b_dec);
                for &i in &active {
                    let w = col(&model.decoder, i);
                    let dz = dot(w, &recon);
                    axpy(pre[i], &recon, &mut grads.decoder[i * d..(i + 1) * d]);
                    grads.b_enc[i] += dz;
                    axpy(dz, &centered, &mut grads.encoder[i * d..(i + 1) * d]);
                    axpy(-dz, col(&model.encoder, i), &mut grads.b_dec);
                }
            }
            let mean_loss = batch_loss / batch.len() as f64;
            if !mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    loss: mean_loss,
                });
            }
            epoch_loss += batch_loss;

            adam.begin_step();
            adam.update(0, model.encoder.as_mut_slice(), &grads.encoder);
            adam.update(1, &mut model.b_enc, &grads.b_enc);
            adam.update(2, model.decoder.as_mut_slice(), &grads.decoder);
            adam.update(3, &mut model.b_dec, &grads.b_dec);
            model.normalize_decoder();
            steps += 1;
        }
        history.push(epoch_loss / corpus.len() as f64);
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: loss {:.6}", history[epoch]);
        }
    }
    Ok((
        model,
        TrainReport {
            loss_history: history,
            steps,
        },
    ))
}
