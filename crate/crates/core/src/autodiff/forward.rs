//! Forward-mode engine: dual tensors carry a tangent alongside every primal.
//!
//! One pass computes both the value and the directional derivative along the
//! seeded tangent. Nothing is retained between ops, so peak live scalars stay
//! a fixed multiple of the plain forward pass no matter how long the program
//! runs; each live value simply doubles (primal + tangent).

use super::context::AdContext;
use crate::error::Result;
use crate::numerics::tensor::Tensor;

/// A primal/tangent pair; shapes always match, through every op.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTensor {
    pub primal: Tensor,
    pub tangent: Tensor,
}

impl DualTensor {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        if primal.shape() != tangent.shape() {
            return Err(crate::error::Error::TangentShape {
                tangent: tangent.shape().to_vec(),
                input: primal.shape().to_vec(),
            });
        }
        Ok(DualTensor { primal, tangent })
    }

    /// A constant: zero tangent.
    pub fn lift(primal: Tensor) -> Self {
        let tangent = Tensor::zeros(primal.shape()).expect("valid shape");
        DualTensor { primal, tangent }
    }
}

#[derive(Debug, Default)]
pub struct DualCtx;

impl AdContext for DualCtx {
    type Value = DualTensor;

    fn constant(&mut self, t: &Tensor) -> DualTensor {
        DualTensor::lift(t.clone())
    }

    fn shape(&self, v: &DualTensor) -> Vec<usize> {
        v.primal.shape().to_vec()
    }

    fn add(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: a.primal.add(&b.primal)?,
            tangent: a.tangent.add(&b.tangent)?,
        })
    }

    fn sub(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: a.primal.sub(&b.primal)?,
            tangent: a.tangent.sub(&b.tangent)?,
        })
    }

    fn mul(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let primal = a.primal.mul(&b.primal)?;
        let tangent = a.tangent.mul(&b.primal)?.add(&a.primal.mul(&b.tangent)?)?;
        Ok(DualTensor { primal, tangent })
    }

    fn scale(&mut self, a: &DualTensor, c: f64) -> DualTensor {
        DualTensor {
            primal: a.primal.scale(c),
            tangent: a.tangent.scale(c),
        }
    }

    fn add_scalar(&mut self, a: &DualTensor, c: f64) -> DualTensor {
        DualTensor {
            primal: a.primal.add_scalar(c),
            tangent: a.tangent.clone(),
        }
    }

    fn relu(&mut self, a: &DualTensor) -> DualTensor {
        let gate = a.primal.step_positive();
        DualTensor {
            primal: a.primal.relu(),
            tangent: a.tangent.mul(&gate).expect("same shape"),
        }
    }

    fn square(&mut self, a: &DualTensor) -> DualTensor {
        DualTensor {
            primal: a.primal.square(),
            tangent: a.tangent.mul(&a.primal).expect("same shape").scale(2.0),
        }
    }

    fn matmul(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let primal = a.primal.matmul(&b.primal)?;
        let tangent = a.tangent.matmul(&b.primal)?.add(&a.primal.matmul(&b.tangent)?)?;
        Ok(DualTensor { primal, tangent })
    }

    fn add_bias(&mut self, a: &DualTensor, bias: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: a.primal.add_bias(&bias.primal)?,
            tangent: a.tangent.add_bias(&bias.tangent)?,
        })
    }

    fn sum_all(&mut self, a: &DualTensor) -> DualTensor {
        DualTensor {
            primal: Tensor::scalar(a.primal.sum_all()),
            tangent: Tensor::scalar(a.tangent.sum_all()),
        }
    }

    fn mean_all(&mut self, a: &DualTensor) -> DualTensor {
        DualTensor {
            primal: Tensor::scalar(a.primal.mean_all()),
            tangent: Tensor::scalar(a.tangent.mean_all()),
        }
    }

    fn sum_axis(&mut self, a: &DualTensor, axis: usize) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: a.primal.sum_axis(axis)?,
            tangent: a.tangent.sum_axis(axis)?,
        })
    }

    fn mean_axis(&mut self, a: &DualTensor, axis: usize) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: a.primal.mean_axis(axis)?,
            tangent: a.tangent.mean_axis(axis)?,
        })
    }

    fn norm(&mut self, a: &DualTensor) -> DualTensor {
        let n = a.primal.frobenius_norm();
        let dn = if n == 0.0 {
            0.0
        } else {
            a.primal.dot(&a.tangent).expect("same shape") / n
        };
        DualTensor {
            primal: Tensor::scalar(n),
            tangent: Tensor::scalar(dn),
        }
    }

    fn concat_cols(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: a.primal.concat_cols(&b.primal)?,
            tangent: a.tangent.concat_cols(&b.tangent)?,
        })
    }

    fn slice_rows(&mut self, a: &DualTensor, rows: &[usize]) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: a.primal.slice_rows(rows)?,
            tangent: a.tangent.slice_rows(rows)?,
        })
    }
}
