//! Reverse-mode engine: a recording tape.
//!
//! Every op appends a node holding its kind, input ids, and the full output
//! tensor. Outputs are saved eagerly and nothing is rematerialized, so the
//! tape's live-scalar footprint grows with program length; that cost is the
//! point of comparison against the forward engine and is attributed to
//! [`AllocClass::Tape`](crate::numerics::meter::AllocClass) on the meter.

use super::context::AdContext;
use crate::error::{Error, Result};
use crate::numerics::meter::tape_scope;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone)]
enum TapeOp {
    Input,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Square(usize),
    Matmul(usize, usize),
    AddBias(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    Norm(usize),
    ConcatCols(usize, usize, usize),
    SliceRows(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: TapeOp,
    out: Tensor,
}

/// Tape context; confined to the `grad` call that creates it.
#[derive(Debug, Default)]
pub struct TapeCtx {
    nodes: Vec<Node>,
    inputs: Vec<usize>,
}

impl TapeCtx {
    pub fn new() -> Self {
        TapeCtx::default()
    }

    fn push(&mut self, op: TapeOp, out: Tensor) -> usize {
        self.nodes.push(Node { op, out });
        self.nodes.len() - 1
    }

    fn out(&self, id: usize) -> &Tensor {
        &self.nodes[id].out
    }

    /// Registers a differentiable root input.
    pub fn input(&mut self, t: &Tensor) -> usize {
        let _g = tape_scope();
        let saved = t.clone();
        let id = self.push(TapeOp::Input, saved);
        self.inputs.push(id);
        id
    }

    pub fn value(&self, id: usize) -> &Tensor {
        self.out(id)
    }

    /// Runs the backward sweep from a scalar root; returns one gradient per
    /// registered input, in registration order.
    pub fn backward(&self, root: usize) -> Result<Vec<Tensor>> {
        if !self.out(root).is_scalar() {
            return Err(Error::NonScalarOutput { shape: self.out(root).shape().to_vec() });
        }
        let grads_by_node = {
            let _g = tape_scope();
            let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
            adj[root] = Some(Tensor::scalar(1.0));
            for i in (0..self.nodes.len()).rev() {
                let Some(dz) = adj[i].take() else { continue };
                match &self.nodes[i].op {
                    TapeOp::Input | TapeOp::Const => {
                        // Leaves: re-park the adjoint so inputs can read it.
                        adj[i] = Some(dz);
                    }
                    TapeOp::Add(a, b) => {
                        accumulate(&mut adj, *a, dz.clone())?;
                        accumulate(&mut adj, *b, dz)?;
                    }
                    TapeOp::Sub(a, b) => {
                        accumulate(&mut adj, *a, dz.clone())?;
                        accumulate(&mut adj, *b, dz.scale(-1.0))?;
                    }
                    TapeOp::Mul(a, b) => {
                        accumulate(&mut adj, *a, dz.mul(self.out(*b))?)?;
                        accumulate(&mut adj, *b, dz.mul(self.out(*a))?)?;
                    }
                    TapeOp::Scale(a, c) => accumulate(&mut adj, *a, dz.scale(*c))?,
                    TapeOp::AddScalar(a) => accumulate(&mut adj, *a, dz)?,
                    TapeOp::Relu(a) => {
                        let gate = self.out(*a).step_positive();
                        accumulate(&mut adj, *a, dz.mul(&gate)?)?;
                    }
                    TapeOp::Square(a) => {
                        accumulate(&mut adj, *a, dz.mul(self.out(*a))?.scale(2.0))?;
                    }
                    TapeOp::Matmul(a, b) => {
                        accumulate(&mut adj, *a, dz.matmul_nt(self.out(*b))?)?;
                        accumulate(&mut adj, *b, self.out(*a).matmul_tn(&dz)?)?;
                    }
                    TapeOp::AddBias(a, b) => {
                        accumulate(&mut adj, *b, dz.sum_axis(0)?)?;
                        accumulate(&mut adj, *a, dz)?;
                    }
                    TapeOp::SumAll(a) => {
                        let da = Tensor::full(self.out(*a).shape(), dz.item()?)?;
                        accumulate(&mut adj, *a, da)?;
                    }
                    TapeOp::MeanAll(a) => {
                        let n = self.out(*a).len() as f64;
                        let da = Tensor::full(self.out(*a).shape(), dz.item()? / n)?;
                        accumulate(&mut adj, *a, da)?;
                    }
                    TapeOp::SumAxis(a, axis) => {
                        let da = self.broadcast_axis(*a, *axis, &dz, 1.0)?;
                        accumulate(&mut adj, *a, da)?;
                    }
                    TapeOp::MeanAxis(a, axis) => {
                        let shape = self.out(*a).shape();
                        let count = if *axis == 0 { shape[0] } else { shape[1] } as f64;
                        let da = self.broadcast_axis(*a, *axis, &dz, 1.0 / count)?;
                        accumulate(&mut adj, *a, da)?;
                    }
                    TapeOp::Norm(a) => {
                        let n = self.out(i).item()?;
                        if n != 0.0 {
                            accumulate(&mut adj, *a, self.out(*a).scale(dz.item()? / n))?;
                        }
                    }
                    TapeOp::ConcatCols(a, b, left) => {
                        let (da, db) = dz.split_cols(*left)?;
                        accumulate(&mut adj, *a, da)?;
                        accumulate(&mut adj, *b, db)?;
                    }
                    TapeOp::SliceRows(a, rows) => {
                        let n = self.out(*a).shape()[0];
                        accumulate(&mut adj, *a, Tensor::scatter_rows(rows, &dz, n)?)?;
                    }
                }
            }
            self.inputs
                .iter()
                .map(|&id| adj[id].take())
                .collect::<Vec<_>>()
        };
        // Clone results outside the tape scope so callers hold forward-class
        // tensors and the tape's accounting drains fully on drop.
        self.inputs
            .iter()
            .zip(grads_by_node)
            .map(|(&id, g)| match g {
                Some(t) => Ok(t.clone()),
                None => Tensor::zeros(self.out(id).shape()),
            })
            .collect()
    }

    fn broadcast_axis(&self, a: usize, axis: usize, dz: &Tensor, factor: f64) -> Result<Tensor> {
        let shape = self.out(a).shape();
        let scaled = dz.scale(factor);
        if axis == 0 {
            scaled.tile_row(shape[0])
        } else {
            scaled.tile_col(shape[1])
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], idx: usize, delta: Tensor) -> Result<()> {
    adj[idx] = Some(match adj[idx].take() {
        Some(existing) => existing.add(&delta)?,
        None => delta,
    });
    Ok(())
}

impl AdContext for TapeCtx {
    type Value = usize;

    fn constant(&mut self, t: &Tensor) -> usize {
        let _g = tape_scope();
        let saved = t.clone();
        self.push(TapeOp::Const, saved)
    }

    fn shape(&self, v: &usize) -> Vec<usize> {
        self.out(*v).shape().to_vec()
    }

    fn add(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let _g = tape_scope();
        let out = self.out(*a).add(self.out(*b))?;
        Ok(self.push(TapeOp::Add(*a, *b), out))
    }

    fn sub(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let _g = tape_scope();
        let out = self.out(*a).sub(self.out(*b))?;
        Ok(self.push(TapeOp::Sub(*a, *b), out))
    }

    fn mul(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let _g = tape_scope();
        let out = self.out(*a).mul(self.out(*b))?;
        Ok(self.push(TapeOp::Mul(*a, *b), out))
    }

    fn scale(&mut self, a: &usize, c: f64) -> usize {
        let _g = tape_scope();
        let out = self.out(*a).scale(c);
        self.push(TapeOp::Scale(*a, c), out)
    }

    fn add_scalar(&mut self, a: &usize, c: f64) -> usize {
        let _g = tape_scope();
        let out = self.out(*a).add_scalar(c);
        self.push(TapeOp::AddScalar(*a), out)
    }

    fn relu(&mut self, a: &usize) -> usize {
        let _g = tape_scope();
        let out = self.out(*a).relu();
        self.push(TapeOp::Relu(*a), out)
    }

    fn square(&mut self, a: &usize) -> usize {
        let _g = tape_scope();
        let out = self.out(*a).square();
        self.push(TapeOp::Square(*a), out)
    }

    fn matmul(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let _g = tape_scope();
        let out = self.out(*a).matmul(self.out(*b))?;
        Ok(self.push(TapeOp::Matmul(*a, *b), out))
    }

    fn add_bias(&mut self, a: &usize, bias: &usize) -> Result<usize> {
        let _g = tape_scope();
        let out = self.out(*a).add_bias(self.out(*bias))?;
        Ok(self.push(TapeOp::AddBias(*a, *bias), out))
    }

    fn sum_all(&mut self, a: &usize) -> usize {
        let _g = tape_scope();
        let out = Tensor::scalar(self.out(*a).sum_all());
        self.push(TapeOp::SumAll(*a), out)
    }

    fn mean_all(&mut self, a: &usize) -> usize {
        let _g = tape_scope();
        let out = Tensor::scalar(self.out(*a).mean_all());
        self.push(TapeOp::MeanAll(*a), out)
    }

    fn sum_axis(&mut self, a: &usize, axis: usize) -> Result<usize> {
        let _g = tape_scope();
        let out = self.out(*a).sum_axis(axis)?;
        Ok(self.push(TapeOp::SumAxis(*a, axis), out))
    }

    fn mean_axis(&mut self, a: &usize, axis: usize) -> Result<usize> {
        let _g = tape_scope();
        let out = self.out(*a).mean_axis(axis)?;
        Ok(self.push(TapeOp::MeanAxis(*a, axis), out))
    }

    fn norm(&mut self, a: &usize) -> usize {
        let _g = tape_scope();
        let out = Tensor::scalar(self.out(*a).frobenius_norm());
        self.push(TapeOp::Norm(*a), out)
    }

    fn concat_cols(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let _g = tape_scope();
        let left = self.out(*a).shape()[1];
        let out = self.out(*a).concat_cols(self.out(*b))?;
        Ok(self.push(TapeOp::ConcatCols(*a, *b, left), out))
    }

    fn slice_rows(&mut self, a: &usize, rows: &[usize]) -> Result<usize> {
        let _g = tape_scope();
        let out = self.out(*a).slice_rows(rows)?;
        Ok(self.push(TapeOp::SliceRows(*a, rows.to_vec()), out))
    }
}
