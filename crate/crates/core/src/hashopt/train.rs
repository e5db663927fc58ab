//! Minibatch training with an Adam update and the per-epoch γ ramp.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gamma_schedule, HashModel, LossBreakdown, Tower, DEFAULT_GAMMA_MAX, DEFAULT_GAMMA_MIN};
use crate::corpus::{EmbeddingStore, PairExample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma_min: DEFAULT_GAMMA_MIN,
            gamma_max: DEFAULT_GAMMA_MAX,
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.gamma_min > 0.0 && self.gamma_min < self.gamma_max) {
            return bad(format!(
                "need 0 < gamma_min < gamma_max, got {} and {}",
                self.gamma_min, self.gamma_max
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    /// Minibatches per epoch for `pairs` examples.
    pub fn steps_per_epoch(&self, pairs: usize) -> usize {
        pairs.div_ceil(self.batch_size)
    }
}

/// Borrowed training data: pairs index into the two stores.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a, T> {
    pub contexts: &'a EmbeddingStore<T>,
    pub candidates: &'a EmbeddingStore<T>,
    pub pairs: &'a [PairExample],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub gamma: f64,
    pub preserved: f64,
    pub hash: f64,
    pub quantization: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: HashModel<T>,
    /// One record per minibatch, in execution order.
    pub trace: Vec<StepRecord>,
    pub epoch_mean_loss: Vec<f64>,
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: HashModel<T>,
    v: HashModel<T>,
    step: i32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &HashModel<T>) -> Self {
        let z = HashModel::zeros(model.d(), model.h()).expect("dims of an existing model");
        AdamState {
            m: z.clone(),
            v: z,
            step: 0,
        }
    }

    pub fn update(&mut self, model: &mut HashModel<T>, grads: &HashModel<T>, cfg: &TrainConfig) {
        self.step += 1;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(self.step);
        let bc2 = one - b2.powi(self.step);
        let lr = T::from_f64_lossy(cfg.learning_rate);
        let eps = T::from_f64_lossy(cfg.eps);
        let sides = [
            (&mut model.ctx, &grads.ctx, &mut self.m.ctx, &mut self.v.ctx),
            (&mut model.can, &grads.can, &mut self.m.can, &mut self.v.can),
        ];
        for (p, g, m, v) in sides {
            adam_tower(p, g, m, v, [b1, b2, bc1, bc2, lr, eps]);
        }
    }
}

fn adam_tower<T: Scalar>(p: &mut Tower<T>, g: &Tower<T>, m: &mut Tower<T>, v: &mut Tower<T>, k: [T; 6]) {
    let [b1, b2, bc1, bc2, lr, eps] = k;
    let one = T::one();
    for (((pt, gt), mt), vt) in p
        .tensors_mut()
        .into_iter()
        .zip(g.tensors())
        .zip(m.tensors_mut())
        .zip(v.tensors_mut())
    {
        for i in 0..pt.len() {
            let gi = gt[i];
            mt[i] = b1 * mt[i] + (one - b1) * gi;
            vt[i] = b2 * vt[i] + (one - b2) * gi * gi;
            let m_hat = mt[i] / bc1;
            let v_hat = vt[i] / bc2;
            pt[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Train `model` for `cfg.epochs` passes over shuffled minibatches.
///
/// The quantization weight restarts at `gamma_min` at the start of every
/// epoch. A non-finite loss aborts training.
pub fn train<T: Scalar>(
    mut model: HashModel<T>,
    data: TrainingSet<'_, T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.pairs.is_empty() {
        return Err(Error::Empty("no training pairs".into()));
    }
    let steps = cfg.steps_per_epoch(data.pairs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model);
    let mut order: Vec<usize> = (0..data.pairs.len()).collect();
    let mut trace = Vec::with_capacity(steps * cfg.epochs);
    let mut epoch_mean_loss = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (t, idx) in order.chunks(cfg.batch_size).enumerate() {
            let gamma = gamma_schedule(t, steps, cfg.gamma_min, cfg.gamma_max)?;
            batch.clear();
            batch.extend(idx.iter().map(|&i| data.pairs[i]));
            let (loss, grads) = model.gradients(&batch, data.contexts, data.candidates, T::from_f64_lossy(gamma))?;
            let rec = record(epoch, t, gamma, &loss);
            if !rec.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch} step {t}: preserved={} hash={} quantization={}",
                    rec.preserved, rec.hash, rec.quantization
                )));
            }
            sum += rec.total;
            trace.push(rec);
            adam.update(&mut model, &grads, cfg);
        }
        epoch_mean_loss.push(sum / steps as f64);
    }
    Ok(TrainOutcome {
        model,
        trace,
        epoch_mean_loss,
    })
}

fn record<T: Scalar>(epoch: usize, step: usize, gamma: f64, l: &LossBreakdown<T>) -> StepRecord {
    StepRecord {
        epoch,
        step,
        gamma,
        preserved: l.preserved.as_f64(),
        hash: l.hash.as_f64(),
        quantization: l.quantization.as_f64(),
        total: l.total.as_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn toy() -> (EmbeddingStore<f64>, EmbeddingStore<f64>, Vec<PairExample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let can = Array2::from_shape_simple_fn((12, 8), || StandardNormal.sample(&mut rng));
        let ctx = &can
            + &Array2::from_shape_simple_fn((12, 8), || {
                0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
        let pos: Vec<(u64, u64)> = (0..12).map(|i| (i, i)).collect();
        let pairs = crate::corpus::make_pairs(&pos, 12, 1, 4).unwrap();
        (
            EmbeddingStore::new(ctx).unwrap(),
            EmbeddingStore::new(can).unwrap(),
            pairs,
        )
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (ctx, can, pairs) = toy();
        let model = HashModel::<f64>::init(8, 4, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 5,
            ..Default::default()
        };
        let out = train(
            model.clone(),
            TrainingSet {
                contexts: &ctx,
                candidates: &can,
                pairs: &pairs,
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.trace.len(), 2 * 5);
        assert_eq!(out.trace[0].gamma, cfg.gamma_min);
        assert_eq!(out.trace[5].step, 0);
    }

    #[test]
    fn same_seed_same_parameters() {
        let (ctx, can, pairs) = toy();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 9,
            ..Default::default()
        };
        let run = || {
            let m = HashModel::<f32>::init(8, 4, 2).unwrap();
            let (c, k) = (ctx.cast::<f32>(), can.cast::<f32>());
            train(
                m,
                TrainingSet {
                    contexts: &c,
                    candidates: &k,
                    pairs: &pairs,
                },
                &cfg,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_mean_loss, b.epoch_mean_loss);
        assert_ne!(a.model, HashModel::<f32>::init(8, 4, 2).unwrap());
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            TrainConfig {
                gamma_min: 0.0,
                ..Default::default()
            },
            TrainConfig {
                gamma_min: 0.2,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (ctx, can, pairs) = toy();
        let mut model = HashModel::<f64>::init(8, 4, 1).unwrap();
        model.ctx.dec_c2.fill(f64::MAX);
        let err = train(
            model,
            TrainingSet {
                contexts: &ctx,
                candidates: &can,
                pairs: &pairs,
            },
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn empty_pairs_rejected() {
        let (ctx, can, _) = toy();
        let model = HashModel::<f64>::init(8, 4, 1).unwrap();
        assert!(train(
            model,
            TrainingSet {
                contexts: &ctx,
                candidates: &can,
                pairs: &[]
            },
            &TrainConfig::default()
        )
        .is_err());
    }
}
