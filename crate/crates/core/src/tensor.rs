//! Dense row-major tensors over the crate-wide scalar type.
//!
//! Image-shaped tensors use NHWC layout throughout the crate: rank-4
//! `[batch, height, width, channels]`, with the channel index fastest.

/// Scalar type used by tensors, gradients, and the optimizer.
///
/// Defaults to `f32`; the `f64` cargo feature switches the whole numeric
/// stack to double precision (useful for tight gradient checks).
#[cfg(feature = "f64")]
pub type Real = f64;

/// Scalar type used by tensors, gradients, and the optimizer.
#[cfg(not(feature = "f64"))]
pub type Real = f32;

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching flat data.
    ///
    /// Panics if `data.len()` does not equal the product of `shape`:
    /// callers construct tensors from dimensions they already hold, so a
    /// mismatch is a programming error rather than a recoverable state.
    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape: shape.to_vec(), data }
    }

    /// A tensor of zeros.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    /// A tensor filled with `value`.
    pub fn full(shape: &[usize], value: Real) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    /// A rank-0 (single element) tensor.
    pub fn scalar(value: Real) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Interprets the tensor as NHWC, accepting rank 4 directly and rank 3
    /// as a single-image `[h, w, c]`.
    pub fn nhwc(&self) -> Option<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            [n, h, w, c] => Some((*n, *h, *w, *c)),
            [h, w, c] => Some((1, *h, *w, *c)),
            _ => None,
        }
    }

    /// Flat index of `[n, y, x, c]` in an NHWC tensor with the given dims.
    #[inline]
    pub fn nhwc_index(h: usize, w: usize, c: usize, n: usize, y: usize, x: usize, ch: usize) -> usize {
        debug_assert!(y < h && x < w && ch < c);
        ((n * h + y) * w + x) * c + ch
    }

    /// Reshapes in place to a shape with the same element count.
    ///
    /// Panics on element-count mismatch, same rationale as [`Tensor::from_vec`].
    pub fn reshape(&mut self, shape: &[usize]) {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.data.len(), "reshape {:?} -> {:?}", self.shape, shape);
        self.shape = shape.to_vec();
    }
}
