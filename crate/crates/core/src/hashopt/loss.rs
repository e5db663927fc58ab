//! Preserved, hash, and quantization losses and their analytic gradients.

use ndarray::{Array2, Zip};

use super::{HashModel, Tower, TowerCache};
use crate::corpus::{EmbeddingStore, PairExample};
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

pub const DEFAULT_GAMMA_MIN: f64 = 1e-4;
pub const DEFAULT_GAMMA_MAX: f64 = 1e-1;

/// Gradient set, shaped like the model it was taken from.
pub type Gradients<T> = HashModel<T>;

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// `‖e_ctx − E_ctx‖² + ‖e_can − E_can‖²`.
pub fn preserved_loss<T: Scalar>(e_ctx: &[T], rec_ctx: &[T], e_can: &[T], rec_can: &[T]) -> Result<T> {
    check_len(e_ctx.len(), rec_ctx.len())?;
    check_len(e_can.len(), rec_can.len())?;
    Ok(sq_dist(e_ctx, rec_ctx) + sq_dist(e_can, rec_can))
}

/// `(o_ctxᵀ o_can − h·S)²`.
pub fn hash_loss<T: Scalar>(o_ctx: &[T], o_can: &[T], label: u8, h: usize) -> Result<T> {
    if label > 1 {
        return Err(Error::InvalidArgument(format!(
            "similarity label must be 0 or 1, got {label}"
        )));
    }
    check_len(h, o_ctx.len())?;
    check_len(h, o_can.len())?;
    let target = T::from_usize(h * label as usize).unwrap();
    let r = scalar::dot(o_ctx, o_can) - target;
    Ok(r * r)
}

/// `‖sign(o_ctx) − o_ctx‖² + ‖sign(o_can) − o_can‖²`.
pub fn quantization_loss<T: Scalar>(o_ctx: &[T], o_can: &[T]) -> T {
    let q = |o: &[T]| {
        o.iter()
            .map(|&v| (scalar::sign(v) - v) * (scalar::sign(v) - v))
            .sum::<T>()
    };
    q(o_ctx) + q(o_can)
}

/// Gradient of one side of the quantization loss with the sign held fixed:
/// `2(o − sign(o))`.
pub fn quantization_grad<T: Scalar>(o: &[T]) -> Vec<T> {
    let two = T::one() + T::one();
    o.iter().map(|&v| two * (v - scalar::sign(v))).collect()
}

/// Linear ramp `γ_min + (γ_max − γ_min)·t/T` for minibatch `t` of `T`.
pub fn gamma_schedule(t: usize, steps: usize, gamma_min: f64, gamma_max: f64) -> Result<f64> {
    if t >= steps {
        return Err(Error::InvalidArgument(format!(
            "step {t} outside an epoch of {steps} minibatches"
        )));
    }
    Ok(gamma_min + (gamma_max - gamma_min) / steps as f64 * t as f64)
}

/// Batch-mean loss terms; `total = preserved + hash + gamma · quantization`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub preserved: T,
    pub hash: T,
    pub quantization: T,
    pub gamma: T,
    pub total: T,
}

struct BatchForward<T> {
    ctx: TowerCache<T>,
    can: TowerCache<T>,
    labels: Vec<u8>,
}

fn row_sq_dist<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Vec<T> {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| sq_dist(x.as_slice().unwrap(), y.as_slice().unwrap()))
        .collect()
}

fn row_dots<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Vec<T> {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| scalar::dot(x.as_slice().unwrap(), y.as_slice().unwrap()))
        .collect()
}

fn row_quant<T: Scalar>(o: &Array2<T>) -> Vec<T> {
    o.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| (scalar::sign(v) - v) * (scalar::sign(v) - v)).sum())
        .collect()
}

impl<T: Scalar> HashModel<T> {
    fn forward_batch(
        &self,
        batch: &[PairExample],
        contexts: &EmbeddingStore<T>,
        candidates: &EmbeddingStore<T>,
    ) -> Result<BatchForward<T>> {
        if batch.is_empty() {
            return Err(Error::Empty("minibatch has no pairs".into()));
        }
        check_len(self.d(), contexts.d())?;
        check_len(self.d(), candidates.d())?;
        let mut labels = Vec::with_capacity(batch.len());
        for p in batch {
            if p.label > 1 {
                return Err(Error::InvalidArgument(format!(
                    "similarity label must be 0 or 1, got {}",
                    p.label
                )));
            }
            labels.push(p.label);
        }
        let ctx_ids: Vec<u64> = batch.iter().map(|p| p.ctx_id).collect();
        let can_ids: Vec<u64> = batch.iter().map(|p| p.can_id).collect();
        let ctx = self.ctx.forward(contexts.gather(&ctx_ids)?);
        let can = self.can.forward(candidates.gather(&can_ids)?);
        Ok(BatchForward { ctx, can, labels })
    }

    fn breakdown(&self, f: &BatchForward<T>, gamma: T) -> (LossBreakdown<T>, Vec<T>) {
        let n = T::from_usize(f.labels.len()).unwrap();
        let h = T::from_usize(self.h()).unwrap();
        let lp_ctx = row_sq_dist(&f.ctx.x, &f.ctx.e);
        let lp_can = row_sq_dist(&f.can.x, &f.can.e);
        let dots = row_dots(&f.ctx.o, &f.can.o);
        let residuals: Vec<T> = dots
            .iter()
            .zip(&f.labels)
            .map(|(&dot, &s)| dot - if s == 1 { h } else { T::zero() })
            .collect();
        let lq_ctx = row_quant(&f.ctx.o);
        let lq_can = row_quant(&f.can.o);
        let mut preserved = T::zero();
        let mut hash = T::zero();
        let mut quantization = T::zero();
        for i in 0..f.labels.len() {
            preserved += lp_ctx[i] + lp_can[i];
            hash += residuals[i] * residuals[i];
            quantization += lq_ctx[i] + lq_can[i];
        }
        preserved /= n;
        hash /= n;
        quantization /= n;
        let total = preserved + hash + gamma * quantization;
        (
            LossBreakdown {
                preserved,
                hash,
                quantization,
                gamma,
                total,
            },
            residuals,
        )
    }

    /// Mean over the batch of `L_p + L_h + γ·L_q`.
    pub fn total_loss(
        &self,
        batch: &[PairExample],
        contexts: &EmbeddingStore<T>,
        candidates: &EmbeddingStore<T>,
        gamma: T,
    ) -> Result<LossBreakdown<T>> {
        let f = self.forward_batch(batch, contexts, candidates)?;
        Ok(self.breakdown(&f, gamma).0)
    }

    /// Loss plus its analytic gradient with respect to every parameter.
    ///
    /// The sign target inside the quantization term is treated as a constant.
    pub fn gradients(
        &self,
        batch: &[PairExample],
        contexts: &EmbeddingStore<T>,
        candidates: &EmbeddingStore<T>,
        gamma: T,
    ) -> Result<(LossBreakdown<T>, Gradients<T>)> {
        let f = self.forward_batch(batch, contexts, candidates)?;
        let (loss, residuals) = self.breakdown(&f, gamma);
        let two = T::one() + T::one();
        let scale = two / T::from_usize(batch.len()).unwrap();

        let d_e = |c: &TowerCache<T>| {
            let mut g = &c.e - &c.x;
            g *= scale;
            g
        };
        // d/d o of the hash and quantization terms
        let d_o = |own: &TowerCache<T>, other: &TowerCache<T>| {
            let mut g = Array2::<T>::zeros(own.o.dim());
            for (i, mut row) in g.rows_mut().into_iter().enumerate() {
                let r = residuals[i];
                Zip::from(&mut row)
                    .and(other.o.row(i))
                    .and(own.o.row(i))
                    .for_each(|g, &p, &q| *g = scale * (r * p + gamma * (q - scalar::sign(q))));
            }
            g
        };
        let ctx_grad: Tower<T> = self.ctx.backward(&f.ctx, &d_e(&f.ctx), &d_o(&f.ctx, &f.can));
        let can_grad: Tower<T> = self.can.backward(&f.can, &d_e(&f.can), &d_o(&f.can, &f.ctx));
        Ok((
            loss,
            HashModel {
                ctx: ctx_grad,
                can: can_grad,
            },
        ))
    }
}
