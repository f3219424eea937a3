//! Dense row-major `f64` tensors.
//!
//! Shapes are explicit and never broadcast: binary ops demand identical
//! shapes, scalar constants go through dedicated methods, and the one
//! row-broadcast the denoiser needs (`add_bias`) is its own named operation.
//! Every tensor registers its float-slot count with the thread's
//! [`MemMeter`](super::meter::MemMeter) on construction and drop.

use super::meter::{self, AllocClass};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    class: AllocClass,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape { shape: shape.to_vec() });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        let class = meter::record_alloc(data.len());
        Ok(Tensor { shape: shape.to_vec(), data, class })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(&[1], vec![value]).expect("scalar shape is valid")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::InvalidShape { shape: vec![rows.len(), r.len()] });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NonScalarOutput { shape: self.shape.clone() })
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::RankMismatch { op, shape: self.shape.clone() }),
        }
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        let cols = self.shape[1];
        self.data[i * cols + j]
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            })
        }
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(&self.shape, data)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Tensor::new(&self.shape, data).expect("same shape")
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|a| a * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|a| a + c)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn square(&self) -> Tensor {
        self.map(|a| a * a)
    }

    /// Elementwise mask of the positive entries; the relu derivative.
    pub fn step_positive(&self) -> Tensor {
        self.map(|a| if a > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::MatmulDims { m, k, k2, n });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Tensor::new(&[m, n], out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul_nt")?;
        let (n, k2) = other.dims2("matmul_nt")?;
        if k != k2 {
            return Err(Error::MatmulDims { m, k, k2, n });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
            }
        }
        Tensor::new(&[m, n], out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.dims2("matmul_tn")?;
        let (k2, n) = other.dims2("matmul_tn")?;
        if k != k2 {
            return Err(Error::MatmulDims { m, k, k2, n });
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(brow) {
                    *d += a * b;
                }
            }
        }
        Tensor::new(&[m, n], out)
    }

    /// Adds a `[k]` bias row to every row of a `[n, k]` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, k) = self.dims2("add_bias")?;
        if bias.shape != [k] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            for j in 0..k {
                data.push(self.data[i * k + j] + bias.data[j]);
            }
        }
        Tensor::new(&[n, k], data)
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.data.len() as f64
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (n, k) = self.dims2("sum_axis")?;
        if axis >= 2 {
            return Err(Error::InvalidAxis { axis, rank: 2 });
        }
        if axis == 0 {
            let mut out = vec![0.0; k];
            for i in 0..n {
                for (o, v) in out.iter_mut().zip(&self.data[i * k..(i + 1) * k]) {
                    *o += v;
                }
            }
            Tensor::new(&[k], out)
        } else {
            let out = (0..n)
                .map(|i| self.data[i * k..(i + 1) * k].iter().sum())
                .collect();
            Tensor::new(&[n], out)
        }
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let (n, k) = self.dims2("mean_axis")?;
        let count = if axis == 0 { n } else { k } as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / count))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    /// Horizontal concatenation of two `[n, *]` tensors.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = self.dims2("concat_cols")?;
        let (n2, k2) = other.dims2("concat_cols")?;
        if n != n2 {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(n * (k + k2));
        for i in 0..n {
            data.extend_from_slice(&self.data[i * k..(i + 1) * k]);
            data.extend_from_slice(&other.data[i * k2..(i + 1) * k2]);
        }
        Tensor::new(&[n, k + k2], data)
    }

    /// Splits columns back apart; inverse of [`concat_cols`](Self::concat_cols).
    pub fn split_cols(&self, left: usize) -> Result<(Tensor, Tensor)> {
        let (n, k) = self.dims2("split_cols")?;
        if left == 0 || left >= k {
            return Err(Error::InvalidAxis { axis: left, rank: k });
        }
        let mut a = Vec::with_capacity(n * left);
        let mut b = Vec::with_capacity(n * (k - left));
        for i in 0..n {
            a.extend_from_slice(&self.data[i * k..i * k + left]);
            b.extend_from_slice(&self.data[i * k + left..(i + 1) * k]);
        }
        Ok((Tensor::new(&[n, left], a)?, Tensor::new(&[n, k - left], b)?))
    }

    /// Gathers rows by index; indices may repeat.
    pub fn slice_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (n, k) = self.dims2("slice_rows")?;
        if rows.is_empty() {
            return Err(Error::InvalidShape { shape: vec![0, k] });
        }
        let mut data = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            if r >= n {
                return Err(Error::InvalidAxis { axis: r, rank: n });
            }
            data.extend_from_slice(&self.data[r * k..(r + 1) * k]);
        }
        Tensor::new(&[rows.len(), k], data)
    }

    /// Scatter-adds rows of `src` into a zero `[n, k]` tensor at `rows`;
    /// the slice_rows adjoint. Repeated indices accumulate.
    pub fn scatter_rows(rows: &[usize], src: &Tensor, n: usize) -> Result<Tensor> {
        let (m, k) = src.dims2("scatter_rows")?;
        if m != rows.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter_rows",
                lhs: vec![rows.len()],
                rhs: src.shape.clone(),
            });
        }
        let mut out = vec![0.0; n * k];
        for (s, &r) in rows.iter().enumerate() {
            if r >= n {
                return Err(Error::InvalidAxis { axis: r, rank: n });
            }
            for j in 0..k {
                out[r * k + j] += src.data[s * k + j];
            }
        }
        Tensor::new(&[n, k], out)
    }

    /// Repeats a `[n]` column `k` times into `[n, k]`.
    pub fn tile_col(&self, k: usize) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(Error::RankMismatch { op: "tile_col", shape: self.shape.clone() });
        }
        let n = self.data.len();
        let mut data = Vec::with_capacity(n * k);
        for &v in &self.data {
            data.extend(std::iter::repeat_n(v, k));
        }
        Tensor::new(&[n, k], data)
    }

    /// Repeats a `[k]` row `n` times into `[n, k]`.
    pub fn tile_row(&self, n: usize) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(Error::RankMismatch { op: "tile_row", shape: self.shape.clone() });
        }
        let k = self.data.len();
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Tensor::new(&[n, k], data)
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        let class = meter::record_alloc(self.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            class,
        }
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        meter::record_dealloc(self.data.len(), self.class);
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        assert_eq!(t1(&[-1.0, 0.0, 2.0]).relu(), t1(&[0.0, 0.0, 2.0]));
    }

    #[test]
    fn add_and_square() {
        assert_eq!(t1(&[1.0, 2.0]).add(&t1(&[3.0, 4.0])).unwrap(), t1(&[4.0, 6.0]));
        assert_eq!(t1(&[0.3, 0.4]).square(), t1(&[0.09, 0.16000000000000003]));
        let sq = t1(&[0.3, 0.4]).square();
        assert!((sq.data()[0] - 0.09).abs() < 1e-15);
        assert!((sq.data()[1] - 0.16).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = t1(&[1.0]).add(&t1(&[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn matmul_identity_and_small_product() {
        let id = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::new(&[2, 1], vec![0.3, 0.4]).unwrap();
        assert_eq!(id.matmul(&v).unwrap(), v);
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap(), Tensor::new(&[1, 1], vec![11.0]).unwrap());
    }

    #[test]
    fn matmul_zero_case_and_dim_error() {
        let z = Tensor::zeros(&[2, 3]).unwrap();
        let any = Tensor::full(&[3, 5], 2.5).unwrap();
        assert_eq!(z.matmul(&any).unwrap(), Tensor::zeros(&[2, 5]).unwrap());
        assert!(z.matmul(&Tensor::zeros(&[2, 2]).unwrap()).is_err());
    }

    #[test]
    fn transposed_products_match_naive() {
        let a = Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap();
        let b = Tensor::new(&[4, 3], vec![2.0, 1.0, 0.0, -1.0, 0.5, 2.0, 3.0, -2.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let nt = a.matmul_nt(&b).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a.get2(i, p) * b.get2(j, p)).sum();
                assert!((nt.get2(i, j) - want).abs() < 1e-14);
            }
        }
        let c = Tensor::new(&[2, 4], vec![1.0, 0.0, 2.0, -1.0, 0.5, 1.5, -2.0, 3.0]).unwrap();
        let tn = a.matmul_tn(&c).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..2).map(|p| a.get2(p, i) * c.get2(p, j)).sum();
                assert!((tn.get2(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reductions() {
        assert_eq!(t1(&[1.0, 2.0, 3.0]).mean_all(), 2.0);
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.sum_axis(0).unwrap(), t1(&[4.0, 6.0]));
        assert_eq!(m.sum_axis(1).unwrap(), t1(&[3.0, 7.0]));
        assert!(matches!(m.sum_axis(2), Err(Error::InvalidAxis { .. })));
    }

    #[test]
    fn empty_tensors_are_unconstructible() {
        // Zero dimensions are rejected at the type boundary, so reductions
        // can never see an empty tensor.
        assert!(matches!(Tensor::new(&[0], vec![]), Err(Error::InvalidShape { .. })));
        assert!(matches!(Tensor::zeros(&[2, 0]), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn frobenius_norm_cases() {
        assert_eq!(t1(&[3.0, 4.0]).frobenius_norm(), 5.0);
        assert_eq!(Tensor::zeros(&[4]).unwrap().frobenius_norm(), 0.0);
        assert_eq!(t1(&[0.0, 1.0, 0.0]).frobenius_norm(), 1.0);
    }

    #[test]
    fn concat_split_and_slice() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![9.0, 8.0]).unwrap();
        let c = a.concat_cols(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        let (l, r) = c.split_cols(2).unwrap();
        assert_eq!(l, a);
        assert_eq!(r, b);
        let s = c.slice_rows(&[1, 0, 1]).unwrap();
        assert_eq!(s.shape(), &[3, 3]);
        assert_eq!(s.get2(0, 2), 8.0);
        let back = Tensor::scatter_rows(&[1, 0, 1], &s, 2).unwrap();
        assert_eq!(back.get2(1, 2), 16.0);
    }

    #[test]
    fn add_bias_broadcasts_one_row_only() {
        let a = Tensor::new(&[2, 3], vec![0.0; 6]).unwrap();
        let bias = t1(&[1.0, 2.0, 3.0]);
        let out = a.add_bias(&bias).unwrap();
        assert_eq!(out.get2(1, 2), 3.0);
        assert!(a.add_bias(&t1(&[1.0, 2.0])).is_err());
    }
}
