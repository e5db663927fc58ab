//! Twin autoencoders that compress dense embeddings into ±1 hash codes.
//!
//! Each side (context, candidate) owns an independent tower:
//!
//! ```text
//! encoder: o = tanh(W2 · tanh(W1 · e + b1) + b2)      d -> d -> h
//! decoder: E = V2 · tanh(V1 · o + c1) + c2             h -> d -> d
//! ```
//!
//! The hash code is `sign(o)` with `sign(0) = +1`. Training minimizes the
//! reconstruction ("preserved") loss, the inner-product hash loss, and a
//! quantization loss whose weight ramps linearly within each epoch.

mod loss;
mod train;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader};
use crate::corpus::EmbeddingStore;
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

pub use loss::{
    gamma_schedule, hash_loss, preserved_loss, quantization_grad, quantization_loss, Gradients, LossBreakdown,
    DEFAULT_GAMMA_MAX, DEFAULT_GAMMA_MIN,
};
pub use train::{train, AdamState, StepRecord, TrainConfig, TrainOutcome, TrainingSet};

pub const MODEL_MAGIC: &[u8; 8] = b"DSHCMDL1";

/// Hash code widths evaluated in the dimension sweep.
pub const SWEEP_DIMS: [usize; 8] = [16, 32, 48, 64, 128, 256, 512, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Context,
    Candidate,
}

/// A ±1 hash code.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignCode(pub Vec<i8>);

impl SignCode {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    /// Inner product of two ±1 codes.
    pub fn dot(&self, other: &SignCode) -> i64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a as i64) * (b as i64))
            .sum()
    }
}

/// Component-wise sign with `sign(0) = +1`.
pub fn sign_quantize<T: Scalar>(o: &[T]) -> SignCode {
    SignCode(
        o.iter()
            .map(|&v| if scalar::sign(v) > T::zero() { 1 } else { -1 })
            .collect(),
    )
}

/// Encoder and decoder parameters for one side.
///
/// Weight matrices are stored `out × in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower<T> {
    pub enc_w1: Array2<T>,
    pub enc_b1: Array1<T>,
    pub enc_w2: Array2<T>,
    pub enc_b2: Array1<T>,
    pub dec_v1: Array2<T>,
    pub dec_c1: Array1<T>,
    pub dec_v2: Array2<T>,
    pub dec_c2: Array1<T>,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub(crate) struct TowerCache<T> {
    pub x: Array2<T>,
    pub a1: Array2<T>,
    pub o: Array2<T>,
    pub a2: Array2<T>,
    pub e: Array2<T>,
}

fn tanh_in_place<T: Scalar>(m: &mut Array2<T>) {
    m.mapv_inplace(|v| v.tanh());
}

fn affine<T: Scalar>(x: &ArrayView2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut z = x.dot(&w.t());
    z += b;
    z
}

impl<T: Scalar> Tower<T> {
    pub fn zeros(d: usize, h: usize) -> Self {
        Tower {
            enc_w1: Array2::zeros((d, d)),
            enc_b1: Array1::zeros(d),
            enc_w2: Array2::zeros((h, d)),
            enc_b2: Array1::zeros(h),
            dec_v1: Array2::zeros((d, h)),
            dec_c1: Array1::zeros(d),
            dec_v2: Array2::zeros((d, d)),
            dec_c2: Array1::zeros(d),
        }
    }

    // Embeddings are unit-norm, so each input component has variance 1/d
    // rather than the unit variance Xavier assumes. The first layer gets a
    // gain of sqrt(d) to compensate; without it tanh never leaves its
    // linear region at the start of training.
    fn xavier(d: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Self::zeros(d, h);
        let input_gain = (d as f64).sqrt();
        for (w, gain) in [
            (&mut t.enc_w1, input_gain),
            (&mut t.enc_w2, 1.0),
            (&mut t.dec_v1, 1.0),
            (&mut t.dec_v2, 1.0),
        ] {
            let (fan_out, fan_in) = w.dim();
            let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| T::from_f64_lossy(rng.random_range(-a..a)));
        }
        t
    }

    pub fn d(&self) -> usize {
        self.enc_w1.ncols()
    }

    pub fn h(&self) -> usize {
        self.enc_w2.nrows()
    }

    /// Parameter tensors in file order.
    pub fn tensors(&self) -> [&[T]; 8] {
        [
            self.enc_w1.as_slice().unwrap(),
            self.enc_b1.as_slice().unwrap(),
            self.enc_w2.as_slice().unwrap(),
            self.enc_b2.as_slice().unwrap(),
            self.dec_v1.as_slice().unwrap(),
            self.dec_c1.as_slice().unwrap(),
            self.dec_v2.as_slice().unwrap(),
            self.dec_c2.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 8] {
        [
            self.enc_w1.as_slice_mut().unwrap(),
            self.enc_b1.as_slice_mut().unwrap(),
            self.enc_w2.as_slice_mut().unwrap(),
            self.enc_b2.as_slice_mut().unwrap(),
            self.dec_v1.as_slice_mut().unwrap(),
            self.dec_c1.as_slice_mut().unwrap(),
            self.dec_v2.as_slice_mut().unwrap(),
            self.dec_c2.as_slice_mut().unwrap(),
        ]
    }

    pub fn encode_batch(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut a1 = affine(&x, &self.enc_w1, &self.enc_b1);
        tanh_in_place(&mut a1);
        let mut o = affine(&a1.view(), &self.enc_w2, &self.enc_b2);
        tanh_in_place(&mut o);
        o
    }

    pub fn decode_batch(&self, o: ArrayView2<T>) -> Array2<T> {
        let mut a2 = affine(&o, &self.dec_v1, &self.dec_c1);
        tanh_in_place(&mut a2);
        affine(&a2.view(), &self.dec_v2, &self.dec_c2)
    }

    pub(crate) fn forward(&self, x: Array2<T>) -> TowerCache<T> {
        let mut a1 = affine(&x.view(), &self.enc_w1, &self.enc_b1);
        tanh_in_place(&mut a1);
        let mut o = affine(&a1.view(), &self.enc_w2, &self.enc_b2);
        tanh_in_place(&mut o);
        let mut a2 = affine(&o.view(), &self.dec_v1, &self.dec_c1);
        tanh_in_place(&mut a2);
        let e = affine(&a2.view(), &self.dec_v2, &self.dec_c2);
        TowerCache { x, a1, o, a2, e }
    }

    /// Backpropagate `d_e` (loss gradient at the reconstruction) and
    /// `d_o_extra` (direct gradient at the code) through the tower.
    pub(crate) fn backward(&self, c: &TowerCache<T>, d_e: &Array2<T>, d_o_extra: &Array2<T>) -> Tower<T> {
        let one = T::one();
        let dec_v2 = d_e.t().dot(&c.a2);
        let dec_c2 = d_e.sum_axis(Axis(0));
        let mut d_y1 = d_e.dot(&self.dec_v2);
        ndarray::Zip::from(&mut d_y1)
            .and(&c.a2)
            .for_each(|g, &a| *g *= one - a * a);
        let dec_v1 = d_y1.t().dot(&c.o);
        let dec_c1 = d_y1.sum_axis(Axis(0));
        let mut d_z2 = d_y1.dot(&self.dec_v1);
        d_z2 += d_o_extra;
        ndarray::Zip::from(&mut d_z2)
            .and(&c.o)
            .for_each(|g, &a| *g *= one - a * a);
        let enc_w2 = d_z2.t().dot(&c.a1);
        let enc_b2 = d_z2.sum_axis(Axis(0));
        let mut d_z1 = d_z2.dot(&self.enc_w2);
        ndarray::Zip::from(&mut d_z1)
            .and(&c.a1)
            .for_each(|g, &a| *g *= one - a * a);
        let enc_w1 = d_z1.t().dot(&c.x);
        let enc_b1 = d_z1.sum_axis(Axis(0));
        Tower {
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            dec_v1,
            dec_c1,
            dec_v2,
            dec_c2,
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Parameters of both autoencoders. The two towers share nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel<T> {
    pub ctx: Tower<T>,
    pub can: Tower<T>,
}

impl<T: Scalar> HashModel<T> {
    /// Xavier-uniform weights and zero biases from a seeded generator.
    /// The first encoder layer is scaled for unit-norm input (see `Tower::xavier`).
    pub fn init(d: usize, h: usize, seed: u64) -> Result<Self> {
        check_dims(d, h)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx = Tower::xavier(d, h, &mut rng);
        let can = Tower::xavier(d, h, &mut rng);
        Ok(HashModel { ctx, can })
    }

    pub fn zeros(d: usize, h: usize) -> Result<Self> {
        check_dims(d, h)?;
        Ok(HashModel {
            ctx: Tower::zeros(d, h),
            can: Tower::zeros(d, h),
        })
    }

    pub fn d(&self) -> usize {
        self.ctx.d()
    }

    pub fn h(&self) -> usize {
        self.ctx.h()
    }

    pub fn tower(&self, side: Side) -> &Tower<T> {
        match side {
            Side::Context => &self.ctx,
            Side::Candidate => &self.can,
        }
    }

    pub fn tower_mut(&mut self, side: Side) -> &mut Tower<T> {
        match side {
            Side::Context => &mut self.ctx,
            Side::Candidate => &mut self.can,
        }
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.ctx.tensors().iter().map(|t| t.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.ctx.all_finite() && self.can.all_finite()
    }

    /// Real-valued code `o` in `(-1, 1)^h`.
    pub fn encode(&self, side: Side, e: &[T]) -> Result<Vec<T>> {
        if e.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: e.len(),
            });
        }
        let x = ArrayView2::from_shape((1, e.len()), e).expect("row view");
        Ok(self.tower(side).encode_batch(x).into_raw_vec_and_offset().0)
    }

    /// Reconstruction `E` from a real code.
    pub fn decode(&self, side: Side, o: &[T]) -> Result<Vec<T>> {
        if o.len() != self.h() {
            return Err(Error::DimensionMismatch {
                expected: self.h(),
                got: o.len(),
            });
        }
        let x = ArrayView2::from_shape((1, o.len()), o).expect("row view");
        Ok(self.tower(side).decode_batch(x).into_raw_vec_and_offset().0)
    }

    /// Real codes for every row of `store`, in row order.
    pub fn encode_store(&self, side: Side, store: &EmbeddingStore<T>) -> Result<Array2<T>> {
        if store.d() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: store.d(),
            });
        }
        Ok(self.tower(side).encode_batch(store.vectors().view()))
    }

    /// `sign(encode(row))` for every row, order preserved.
    pub fn export_codes(&self, side: Side, store: &EmbeddingStore<T>) -> Result<Vec<SignCode>> {
        const CHUNK: usize = 1024;
        if store.d() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: store.d(),
            });
        }
        let tower = self.tower(side);
        let mut out = Vec::with_capacity(store.n());
        let v = store.vectors();
        let mut start = 0;
        while start < store.n() {
            let end = (start + CHUNK).min(store.n());
            let o = tower.encode_batch(v.slice(ndarray::s![start..end, ..]));
            out.extend(o.rows().into_iter().map(|r| sign_quantize(r.as_slice().unwrap())));
            start = end;
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> HashModel<U> {
        let conv = |t: &Tower<T>| Tower {
            enc_w1: t.enc_w1.mapv(|v| U::from_f64_lossy(v.as_f64())),
            enc_b1: t.enc_b1.mapv(|v| U::from_f64_lossy(v.as_f64())),
            enc_w2: t.enc_w2.mapv(|v| U::from_f64_lossy(v.as_f64())),
            enc_b2: t.enc_b2.mapv(|v| U::from_f64_lossy(v.as_f64())),
            dec_v1: t.dec_v1.mapv(|v| U::from_f64_lossy(v.as_f64())),
            dec_c1: t.dec_c1.mapv(|v| U::from_f64_lossy(v.as_f64())),
            dec_v2: t.dec_v2.mapv(|v| U::from_f64_lossy(v.as_f64())),
            dec_c2: t.dec_c2.mapv(|v| U::from_f64_lossy(v.as_f64())),
        };
        HashModel {
            ctx: conv(&self.ctx),
            can: conv(&self.can),
        }
    }
}

fn check_dims(d: usize, h: usize) -> Result<()> {
    if d == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!(
            "model dimensions must be positive (d={d}, h={h})"
        )));
    }
    if d > u32::MAX as usize || h > u32::MAX as usize {
        return Err(Error::Overflow("model dimensions exceed u32".into()));
    }
    Ok(())
}

/// Write `DSHCMDL1 | d | h | ctx tensors | can tensors` as f32-LE.
pub fn save_model<T: Scalar>(model: &HashModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + model.parameter_count() * 4);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&(model.d() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.h() as u32).to_le_bytes());
    for tower in [&model.ctx, &model.can] {
        for t in tower.tensors() {
            for v in t {
                buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
            }
        }
    }
    let mut w = binio::create(path)?;
    binio::write_all(&mut w, &buf, path)?;
    binio::finish(w, path)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<HashModel<T>> {
    let bytes = binio::read_all(path.as_ref())?;
    decode_model(&bytes)
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<HashModel<T>> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let d = r.u32()? as usize;
    let h = r.u32()? as usize;
    let mut model = HashModel::zeros(d, h)?;
    let per_tower: u64 = model.ctx.tensors().iter().map(|t| t.len() as u64).sum();
    let total = binio::checked_size(&[2, per_tower, 4], "model payload")?;
    let payload = r.exact_payload(total)?;
    r.expect_end()?;
    let mut vals = payload
        .chunks_exact(4)
        .map(|c| T::from_storage(f32::from_le_bytes(c.try_into().unwrap())));
    for side in [Side::Context, Side::Candidate] {
        for t in model.tower_mut(side).tensors_mut() {
            for slot in t.iter_mut() {
                *slot = vals.next().expect("payload length checked");
            }
        }
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    Ok(model)
}
