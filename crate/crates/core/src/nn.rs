//! Small dense-tensor toolkit shared by the adaptive filter and the GCN:
//! a row-major matrix, SGD with momentum, cosine annealing, seeded
//! initialization, finite-difference gradients and the `ANFM` checkpoint
//! container.
//!
//! Models are generic over [`Scalar`] so gradient checks can run in `f64`
//! while the pipeline trains in `f32`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

pub trait Scalar:
    Float + Sum + AddAssign + SubAssign + MulAssign + Debug + Default + Send + Sync + 'static
{
    fn c(x: f64) -> Self {
        Self::from(x).expect("finite constant")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}×{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::c(rng.random_range(-bound..bound)))
            .collect();
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Tensor::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (kk, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                axpy(a, rhs.row(kk), o);
            }
        }
        out
    }

    /// `selfᵀ · rhs`.
    pub fn t_matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rows, rhs.rows, "t_matmul shape mismatch");
        let mut out = Tensor::zeros(self.cols, rhs.cols);
        self.t_matmul_acc(rhs, &mut out);
        out
    }

    /// `out += selfᵀ · rhs`.
    pub fn t_matmul_acc(&self, rhs: &Tensor<T>, out: &mut Tensor<T>) {
        assert_eq!(self.rows, rhs.rows, "t_matmul shape mismatch");
        assert_eq!((out.rows, out.cols), (self.cols, rhs.cols));
        for r in 0..self.rows {
            let b = rhs.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                axpy(a, b, &mut out.data[i * rhs.cols..(i + 1) * rhs.cols]);
            }
        }
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.cols, rhs.cols, "matmul_t shape mismatch");
        let mut out = Tensor::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        out
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += a · x`.
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y += W · x` for `W` of shape `y.len() × x.len()`.
#[inline]
pub fn gemv_acc<T: Scalar>(w: &Tensor<T>, x: &[T], y: &mut [T]) {
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += dot(w.row(i), x);
    }
}

/// `x += Wᵀ · y`.
#[inline]
pub fn gemv_t_acc<T: Scalar>(w: &Tensor<T>, y: &[T], x: &mut [T]) {
    for (i, &yi) in y.iter().enumerate() {
        if yi != T::zero() {
            axpy(yi, w.row(i), x);
        }
    }
}

/// `W += y · xᵀ`.
#[inline]
pub fn outer_acc<T: Scalar>(w: &mut Tensor<T>, y: &[T], x: &[T]) {
    let cols = w.cols;
    for (i, &yi) in y.iter().enumerate() {
        if yi != T::zero() {
            axpy(yi, x, &mut w.data[i * cols..(i + 1) * cols]);
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// A named parameter tensor with its gradient and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: &'static str,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    velocity: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: &'static str, value: Tensor<T>) -> Self {
        let (r, c) = (value.rows, value.cols);
        Param {
            name,
            value,
            grad: Tensor::zeros(r, c),
            velocity: Tensor::zeros(r, c),
        }
    }
}

/// Something with an ordered list of trainable parameters.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill_zero();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.data.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.is_finite())
    }
}

/// SGD with momentum and L2 weight decay (decay folded into the gradient).
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn step<T: Scalar>(&self, params: Vec<&mut Param<T>>, lr: f64) {
        let (mu, wd, lr) = (T::c(self.momentum), T::c(self.weight_decay), T::c(lr));
        for p in params {
            for ((w, g), v) in p
                .value
                .data
                .iter_mut()
                .zip(&p.grad.data)
                .zip(p.velocity.data.iter_mut())
            {
                let g = *g + wd * *w;
                *v = mu * *v + g;
                *w -= lr * *v;
            }
        }
    }
}

/// Learning rate at `epoch` of `total`, annealed from `base` to 0 on a half cosine.
pub fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos())
}

/// Central finite-difference gradient of `loss` at `x`.
///
/// `x` is perturbed in place one coordinate at a time and restored.
pub fn numeric_gradient<T: Scalar, F: FnMut(&[T]) -> T>(mut loss: F, x: &mut [T], eps: T) -> Vec<T> {
    let two = T::one() + T::one();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let plus = loss(x);
            x[i] = orig - eps;
            let minus = loss(x);
            x[i] = orig;
            (plus - minus) / (two * eps)
        })
        .collect()
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ANFM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Contents of an `ANFM` checkpoint.
///
/// Layout (little-endian): magic, `u32` version, 4-byte section tag,
/// `u32` count + `u64` hyperparameters, `u32` count + shape table
/// (`u32` name length, name bytes, `u32` rows, `u32` cols), then every
/// tensor's values as `f32` in table order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tag: [u8; 4],
    pub hyper: Vec<u64>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn capture<T: Scalar, M: Parameterized<T>>(tag: [u8; 4], hyper: Vec<u64>, model: &M) -> Self {
        let tensors = model
            .params()
            .into_iter()
            .map(|p| {
                let data = p.value.data.iter().map(|x| x.as_f64() as f32).collect();
                (
                    p.name.to_string(),
                    Tensor {
                        rows: p.value.rows,
                        cols: p.value.cols,
                        data,
                    },
                )
            })
            .collect();
        Checkpoint { tag, hyper, tensors }
    }

    /// Copies the stored values into `model`, checking names and shapes.
    pub fn restore<T: Scalar, M: Parameterized<T>>(&self, model: &mut M) -> Result<()> {
        let params = model.params_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (p, (name, t)) in params.into_iter().zip(&self.tensors) {
            if p.name != name || p.value.rows != t.rows || p.value.cols != t.cols {
                return Err(Error::Format(format!(
                    "tensor {name} {}×{} does not match {} {}×{}",
                    t.rows, t.cols, p.name, p.value.rows, p.value.cols
                )));
            }
            for (dst, &src) in p.value.data.iter_mut().zip(&t.data) {
                *dst = T::c(src as f64);
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.tag);
        b.extend_from_slice(&(self.hyper.len() as u32).to_le_bytes());
        for h in &self.hyper {
            b.extend_from_slice(&h.to_le_bytes());
        }
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.rows as u32).to_le_bytes());
            b.extend_from_slice(&(t.cols as u32).to_le_bytes());
        }
        for (_, t) in &self.tensors {
            for v in &t.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic, expected ANFM".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let nh = r.u32()? as usize;
        let hyper = (0..nh).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let nt = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(nt);
        for _ in 0..nt {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            shapes.push((name, rows, cols));
        }
        let mut tensors = Vec::with_capacity(nt);
        for (name, rows, cols) in shapes {
            let raw = r.take(rows * cols * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor { rows, cols, data }));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { tag, hyper, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(
            Error::Truncation {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            },
        )?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
