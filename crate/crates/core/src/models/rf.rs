//! Analytic receptive-field bookkeeping.
//!
//! Tracks `(rf, jump)` through a chain of layers: `rf` is the side length in
//! input pixels of the region one output pixel depends on, and `jump` is the
//! input-pixel distance between neighboring outputs. Composition rules:
//! a convolution widens `rf` by `dilation * (k - 1) * jump`, and any stride
//! multiplies `jump`. Branches (skips, residuals) are handled by walking the
//! deepest path, whose field contains the shallower one.

/// Receptive-field accumulator. Starts at one pixel looking at itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    rf: usize,
    jump: usize,
}

impl ReceptiveField {
    pub fn new() -> Self {
        ReceptiveField { rf: 1, jump: 1 }
    }

    /// Square convolution with the given kernel size, stride, and dilation.
    pub fn conv(&mut self, k: usize, stride: usize, dilation: usize) -> &mut Self {
        self.rf += dilation * (k - 1) * self.jump;
        self.jump *= stride;
        self
    }

    /// Non-overlapping max pool with a square window.
    pub fn pool(&mut self, window: usize) -> &mut Self {
        self.rf += (window - 1) * self.jump;
        self.jump *= window;
        self
    }

    /// Transposed convolution: outputs are `stride` times denser, then the
    /// kernel widens the field at the new spacing.
    pub fn deconv(&mut self, k: usize, stride: usize) -> &mut Self {
        self.jump /= stride;
        self.rf += (k - 1) * self.jump;
        self
    }

    /// Nearest-neighbor upsampling: densifies outputs without widening.
    pub fn upsample(&mut self, factor: usize) -> &mut Self {
        self.jump /= factor;
        self
    }

    /// Side length, in input pixels, of one output pixel's field of view.
    pub fn field(&self) -> usize {
        self.rf
    }
}

impl Default for ReceptiveField {
    fn default() -> Self {
        Self::new()
    }
}
