//! The differentiable op set, written once against a context trait.
//!
//! A [`Program`] builds its computation through an [`AdContext`], so the same
//! code runs under plain evaluation, dual-number forward mode, and the
//! recording tape. The op set is closed: it is exactly what the denoiser,
//! the samplers, and the objectives need, which keeps the engines small and
//! their equivalence checkable. An unsupported operation is unrepresentable
//! rather than a runtime error; the fallible ops fail only on shape
//! violations.

use crate::error::Result;
use crate::numerics::tensor::Tensor;

pub trait AdContext {
    type Value;

    /// A non-differentiated leaf (weights, schedule constants, noise draws).
    fn constant(&mut self, t: &Tensor) -> Self::Value;
    fn shape(&self, v: &Self::Value) -> Vec<usize>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Self::Value;
    fn add_scalar(&mut self, a: &Self::Value, c: f64) -> Self::Value;
    fn relu(&mut self, a: &Self::Value) -> Self::Value;
    fn square(&mut self, a: &Self::Value) -> Self::Value;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Adds a `[k]` bias row to every row of an `[n, k]` value.
    fn add_bias(&mut self, a: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn sum_all(&mut self, a: &Self::Value) -> Self::Value;
    fn mean_all(&mut self, a: &Self::Value) -> Self::Value;
    fn sum_axis(&mut self, a: &Self::Value, axis: usize) -> Result<Self::Value>;
    fn mean_axis(&mut self, a: &Self::Value, axis: usize) -> Result<Self::Value>;
    /// Frobenius norm, as a scalar value. Gradient at the origin is taken
    /// to be zero.
    fn norm(&mut self, a: &Self::Value) -> Self::Value;
    fn concat_cols(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn slice_rows(&mut self, a: &Self::Value, rows: &[usize]) -> Result<Self::Value>;
}

/// A differentiable function of one or more tensors, expressed over any
/// [`AdContext`].
pub trait Program {
    fn arity(&self) -> usize {
        1
    }

    fn build<C: AdContext>(&self, ctx: &mut C, inputs: &[C::Value]) -> Result<C::Value>;
}

/// Wraps a program with a trailing `sum_all`, turning a vector-valued
/// program into the scalar the reverse engine differentiates.
pub struct SumOf<'a, P>(pub &'a P);

impl<P: Program> Program for SumOf<'_, P> {
    fn arity(&self) -> usize {
        self.0.arity()
    }

    fn build<C: AdContext>(&self, ctx: &mut C, inputs: &[C::Value]) -> Result<C::Value> {
        let v = self.0.build(ctx, inputs)?;
        Ok(ctx.sum_all(&v))
    }
}
