//! Dense tensors with a reverse-mode differentiation graph.
//!
//! A [`Tensor`] is an immutable, reference-counted node. Operations build new
//! nodes that remember their parents; [`backward`] walks the graph from a
//! scalar loss and returns [`Gradients`] for every leaf that requires them.
//!
//! There is no implicit broadcasting: every binary op requires equal shapes,
//! and bias/channel adaptation is done by dedicated ops.

mod autograd;
mod conv;
mod gradcheck;
mod ops;
mod resize;

pub use autograd::{backward, Gradients};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::Elementwise;

use std::fmt;
use std::iter::Sum;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, shape_err, Result};

/// Floating-point element type: `f64` for checks and metrics, `f32` for training.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static
{
    /// `c (+)= op(a) · op(b)` on row-major buffers, `op(a)` is `m×k`, `op(b)` is `k×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_trans);
                let (rsb, csb) = strides(k, n, b_trans);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: buffer lengths checked above; strides describe the
                // row-major (optionally transposed) layouts of those buffers.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Initialization recipe for [`Tensor::create`].
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Uniform { low: f64, high: f64, seed: u64 },
    Normal { mean: f64, std: f64, seed: u64 },
    Values(Vec<f64>),
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) op: ops::Op<T>,
    pub(crate) requires_grad: bool,
}

/// Reference-counted tensor handle; cloning is cheap and shares the node.
pub struct Tensor<T: Scalar = f64>(pub(crate) Arc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return arg_err("shape must have at least one dimension");
    }
    if let Some(d) = shape.iter().find(|&&d| d == 0) {
        return arg_err(format!("nonpositive dimension {d} in shape {shape:?}"));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: ops::Op<T>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        Tensor(Arc::new(Node { id: next_id(), shape, data, op, requires_grad }))
    }

    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node { id: next_id(), shape, data, op: ops::Op::Leaf, requires_grad }))
    }

    /// Builds a constant tensor from explicit values.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        if numel_of(shape) != data.len() {
            return shape_err(format!(
                "{} values supplied for shape {shape:?} ({} expected)",
                data.len(),
                numel_of(shape)
            ));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self::leaf(shape.to_vec(), vec![value; numel_of(shape)], false))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Seeded inits draw in `f64` from ChaCha8 and round once, so the same seed
    /// yields the same values at both precisions up to that rounding.
    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        check_shape(shape)?;
        let n = numel_of(shape);
        match init {
            Init::Zeros => Self::zeros(shape),
            Init::Ones => Self::ones(shape),
            Init::Values(v) => Self::from_f64(shape, &v),
            Init::Uniform { low, high, seed } => {
                if !(low < high) {
                    return arg_err(format!("uniform bounds must satisfy low < high, got [{low}, {high})"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = (0..n).map(|_| T::lit(rng.random_range(low..high))).collect();
                Self::from_vec(shape, data)
            }
            Init::Normal { mean, std, seed } => {
                let dist = Normal::new(mean, std)
                    .map_err(|e| crate::Error::InvalidArgument(format!("normal init: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = (0..n).map(|_| T::lit(dist.sample(&mut rng))).collect();
                Self::from_vec(shape, data)
            }
        }
    }

    /// A differentiable leaf (a trainable parameter or a checked input).
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.requiring_grad())
    }

    /// Copy of this tensor's values as a fresh leaf that tracks gradients.
    pub fn requiring_grad(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), true)
    }

    /// Copy of this tensor's values with no graph history.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.0.data.iter().map(|v| U::lit(v.f64())).collect();
        Tensor::leaf(self.0.shape.clone(), data, false)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.f64()).collect()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, ops::Op::Leaf)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return shape_err(format!("item() on tensor of shape {:?}", self.shape()));
        }
        Ok(self.0.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Same node identity and contents comparison is by value.
    pub fn bitwise_eq(&self, other: &Tensor<T>) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.f64().to_bits() == b.f64().to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Value at a multi-index (row-major).
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape().len(), "index rank");
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(self.shape()).enumerate() {
            assert!(ix < d, "index {ix} out of bounds for dim {i} of size {d}");
            off = off * d + ix;
        }
        self.0.data[off]
    }
}

#[cfg(test)]
mod tests;
