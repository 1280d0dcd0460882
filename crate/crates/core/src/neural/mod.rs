//! Dense arrays, trainable parameters, and the hand-differentiated layers the
//! models are built from.

mod bigru;
pub mod checkpoint;
mod gradcheck;
mod gru;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;

pub use bigru::{BiGruCache, BiGruStack};
pub use gradcheck::{finite_diff_check, finite_diff_check_sampled, GradCheckReport};
pub use gru::{GruCell, GruStepCache};

use crate::error::{Error, Result};

/// Floating point element type. Models run in `f32`; gradient checking runs
/// the same code in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor data", n, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn uniform(shape: &[usize], range: f64, rng: &mut impl Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = T::lit(rng.gen_range(-range..=range));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Length of one row (product of trailing extents).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Checked write: rejects non-finite values.
    pub fn set(&mut self, index: usize, value: T) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite write at element {index}")));
        }
        self.data[index] = value;
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        axpy(T::one(), &other.data, &mut self.data);
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Trainable array with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    pub fn uniform(name: impl Into<String>, shape: &[usize], range: f64, rng: &mut impl Rng) -> Self {
        Self::new(name, Tensor::uniform(shape, range, rng))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything that owns trainable parameters in a fixed order.
pub trait Module<T: Real> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p));
        out
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Overwrites our parameter values with `other`'s and zeroes our
    /// gradients. Both must share a layout.
    fn sync_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let values: Vec<&Tensor<T>> = other.params().into_iter().map(|p| &p.value).collect();
        let mut i = 0;
        self.visit_params_mut(&mut |p| {
            p.value.data_mut().copy_from_slice(values[i].data());
            p.zero_grad();
            i += 1;
        });
    }

    /// Adds `other`'s gradients into ours. Both must share a layout.
    fn accumulate_grads_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let grads: Vec<&Tensor<T>> = other.params().into_iter().map(|p| &p.grad).collect();
        let mut i = 0;
        self.visit_params_mut(&mut |p| {
            p.grad.add_assign(grads[i]);
            i += 1;
        });
    }
}

#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y += Σᵢ c[i] · m[i]` where `m` holds `c.len()` rows of `y.len()` values.
/// Rows are taken four at a time, summed pairwise, then added to `y`.
pub fn axpy_rows<T: Real>(c: &[T], m: &[T], y: &mut [T]) {
    let n = y.len();
    debug_assert_eq!(m.len(), c.len() * n);
    let mut i = 0;
    while i + 4 <= c.len() {
        let a = [c[i], c[i + 1], c[i + 2], c[i + 3]];
        if a.iter().any(|v| *v != T::zero()) {
            let r = &m[i * n..(i + 4) * n];
            let (r0, rest) = r.split_at(n);
            let (r1, rest) = rest.split_at(n);
            let (r2, r3) = rest.split_at(n);
            for ((((yj, &x0), &x1), &x2), &x3) in y.iter_mut().zip(r0).zip(r1).zip(r2).zip(r3) {
                *yj += (a[0] * x0 + a[1] * x1) + (a[2] * x2 + a[3] * x3);
            }
        }
        i += 4;
    }
    for k in i..c.len() {
        if c[k] != T::zero() {
            axpy(c[k], &m[k * n..(k + 1) * n], y);
        }
    }
}

#[inline(always)]
fn halve<T: Real, const N: usize, const H: usize>(v: &[T; N]) -> [T; H] {
    let mut out = [T::zero(); H];
    for k in 0..H {
        out[k] = v[k] + v[k + H];
    }
    out
}

/// Inner product with 64 independent partial sums reduced by fixed halving,
/// so the result does not depend on the target's vector width.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 64];
    let ca = a.chunks_exact(64);
    let cb = b.chunks_exact(64);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..64 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    let v: [T; 32] = halve(&acc);
    let v: [T; 16] = halve(&v);
    let v: [T; 8] = halve(&v);
    let v: [T; 4] = halve(&v);
    let v: [T; 2] = halve(&v);
    (v[0] + v[1]) + tail
}

/// Checked inner product.
pub fn try_dot<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dim("dot", a.len(), b.len()));
    }
    Ok(dot(a, b))
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_vec<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

/// `out = xᵀ W + b` for `W` of shape `(d_in, d_out)`.
pub fn linear<T: Real>(w: &Tensor<T>, b: &Tensor<T>, x: &[T]) -> Result<Vec<T>> {
    if w.rows() != x.len() {
        return Err(Error::dim("linear input", w.rows(), x.len()));
    }
    if b.len() != w.cols() {
        return Err(Error::dim("linear bias", w.cols(), b.len()));
    }
    let mut out = b.data().to_vec();
    linear_acc(w, x, &mut out);
    Ok(out)
}

/// `out += xᵀ W`.
#[inline]
pub(crate) fn linear_acc<T: Real>(w: &Tensor<T>, x: &[T], out: &mut [T]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi != T::zero() {
            axpy(xi, w.row(i), out);
        }
    }
}

/// Backward of `out = xᵀ W + b`: accumulates weight and bias gradients and,
/// when requested, `dx += W d_out`.
pub(crate) fn linear_backward<T: Real>(
    w: &mut Param<T>,
    b: Option<&mut Param<T>>,
    x: &[T],
    d_out: &[T],
    dx: Option<&mut [T]>,
) {
    for (i, &xi) in x.iter().enumerate() {
        if xi != T::zero() {
            axpy(xi, d_out, w.grad.row_mut(i));
        }
    }
    if let Some(b) = b {
        axpy(T::one(), d_out, b.grad.data_mut());
    }
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            *d += dot(w.value.row(i), d_out);
        }
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    let s: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Log-softmax over a score vector.
pub fn log_softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let z = log_sum_exp(xs);
    xs.iter().map(|&x| x - z).collect()
}
