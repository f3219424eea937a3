//! Two differentiation engines over one op set, plus an independent
//! finite-difference oracle.
//!
//! [`jvp`] runs a program once in dual-number form and returns the value and
//! the directional derivative along a tangent, with no retained graph.
//! [`grad`] records the program on a tape and back-propagates; the tape lives
//! for the duration of the call and its storage shows up on the memory meter
//! under the tape class. [`finite_diff`] checks either engine by central
//! differences.

pub mod context;
pub mod eval;
pub mod forward;
pub mod reverse;

pub use context::{AdContext, Program, SumOf};
pub use eval::EvalCtx;
pub use forward::{DualCtx, DualTensor};
pub use reverse::TapeCtx;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

fn check_arity<P: Program>(p: &P, got: usize) -> Result<()> {
    if p.arity() == got {
        Ok(())
    } else {
        Err(Error::ArityMismatch { arity: p.arity(), got })
    }
}

/// Plain evaluation of a program.
pub fn eval<P: Program>(p: &P, inputs: &[&Tensor]) -> Result<Tensor> {
    check_arity(p, inputs.len())?;
    let mut ctx = EvalCtx;
    let vals: Vec<Tensor> = inputs.iter().map(|t| (*t).clone()).collect();
    p.build(&mut ctx, &vals)
}

/// Forward-mode pass over a program with any output shape; returns the
/// output value and its tangent.
pub fn jvp_full<P: Program>(
    p: &P,
    inputs: &[&Tensor],
    tangents: &[&Tensor],
) -> Result<(Tensor, Tensor)> {
    check_arity(p, inputs.len())?;
    if inputs.len() != tangents.len() {
        return Err(Error::ArityMismatch { arity: inputs.len(), got: tangents.len() });
    }
    let mut ctx = DualCtx;
    let vals = inputs
        .iter()
        .zip(tangents)
        .map(|(x, v)| DualTensor::new((*x).clone(), (*v).clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = p.build(&mut ctx, &vals)?;
    Ok((out.primal, out.tangent))
}

/// Value and directional derivative of a scalar program along `v`, in one
/// forward pass.
pub fn jvp<P: Program>(p: &P, x: &Tensor, v: &Tensor) -> Result<(f64, f64)> {
    let (value, tangent) = jvp_full(p, &[x], &[v])?;
    Ok((value.item()?, tangent.item()?))
}

/// Value and exact reverse-mode gradients of a scalar program, one gradient
/// per input. The tape is confined to this call.
pub fn grad_multi<P: Program>(p: &P, inputs: &[&Tensor]) -> Result<(f64, Vec<Tensor>)> {
    check_arity(p, inputs.len())?;
    let mut ctx = TapeCtx::new();
    let vals: Vec<usize> = inputs.iter().map(|t| ctx.input(t)).collect();
    let root = p.build(&mut ctx, &vals)?;
    let value = ctx.value(root).item()?;
    let grads = ctx.backward(root)?;
    Ok((value, grads))
}

/// Exact reverse-mode gradient of a single-input scalar program.
pub fn grad<P: Program>(p: &P, x: &Tensor) -> Result<Tensor> {
    let (_, mut grads) = grad_multi(p, &[x])?;
    Ok(grads.remove(0))
}

/// Central finite differences per coordinate, one gradient per input.
pub fn finite_diff_multi<P: Program>(p: &P, inputs: &[&Tensor], h: f64) -> Result<Vec<Tensor>> {
    check_arity(p, inputs.len())?;
    if h <= 0.0 {
        return Err(Error::NonPositiveStep { h });
    }
    let mut grads = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let mut g = Vec::with_capacity(x.len());
        for j in 0..x.len() {
            let probe = |delta: f64| -> Result<f64> {
                let mut data = x.data().to_vec();
                data[j] += delta;
                let bumped = Tensor::new(x.shape(), data)?;
                let mut owned: Vec<&Tensor> = inputs.to_vec();
                owned[i] = &bumped;
                eval(p, &owned)?.item()
            };
            let f_plus = probe(h)?;
            let f_minus = probe(-h)?;
            g.push((f_plus - f_minus) / (2.0 * h));
        }
        grads.push(Tensor::new(x.shape(), g)?);
    }
    Ok(grads)
}

/// Central finite differences for a single-input scalar program.
pub fn finite_diff<P: Program>(p: &P, x: &Tensor, h: f64) -> Result<Tensor> {
    let mut grads = finite_diff_multi(p, &[x], h)?;
    Ok(grads.remove(0))
}
