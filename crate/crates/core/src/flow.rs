use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel displacement `[2,H,W]`: channel 0 is horizontal `u`, channel 1 vertical `v`, in pixels.
#[derive(Debug, Clone)]
pub struct FlowField<T: Scalar = f64>(Tensor<T>);

impl<T: Scalar> FlowField<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        match values.shape() {
            [2, h, w] if *h > 0 && *w > 0 => Ok(FlowField(values)),
            s => Err(Error::ShapeMismatch(format!("flow field must be [2,H,W], got {s:?}"))),
        }
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[2, h, w])?)
    }

    /// Builds a flow whose every pixel is `(u, v)`.
    pub fn constant(h: usize, w: usize, u: T, v: T) -> Result<Self> {
        let mut data = vec![u; h * w];
        data.extend(std::iter::repeat_n(v, h * w));
        Self::new(Tensor::from_vec(&[2, h, w], data)?)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// `(u, v)` at `(row, col)`.
    pub fn at(&self, r: usize, c: usize) -> (T, T) {
        let n = self.height() * self.width();
        let i = r * self.width() + c;
        (self.0.data()[i], self.0.data()[n + i])
    }

    pub fn cast<U: Scalar>(&self) -> FlowField<U> {
        FlowField(self.0.cast())
    }
}
