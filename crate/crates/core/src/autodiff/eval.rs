//! Plain evaluation context: values are bare tensors, nothing is recorded.

use super::context::AdContext;
use crate::error::Result;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Default)]
pub struct EvalCtx;

impl AdContext for EvalCtx {
    type Value = Tensor;

    fn constant(&mut self, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn shape(&self, v: &Tensor) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.scale(c)
    }

    fn add_scalar(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.add_scalar(c)
    }

    fn relu(&mut self, a: &Tensor) -> Tensor {
        a.relu()
    }

    fn square(&mut self, a: &Tensor) -> Tensor {
        a.square()
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }

    fn add_bias(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        a.add_bias(bias)
    }

    fn sum_all(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.sum_all())
    }

    fn mean_all(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.mean_all())
    }

    fn sum_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        a.sum_axis(axis)
    }

    fn mean_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        a.mean_axis(axis)
    }

    fn norm(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.frobenius_norm())
    }

    fn concat_cols(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.concat_cols(b)
    }

    fn slice_rows(&mut self, a: &Tensor, rows: &[usize]) -> Result<Tensor> {
        a.slice_rows(rows)
    }
}
