//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    Min,
}

/// Contiguous n-dimensional array.
///
/// `shape` may be empty, in which case the tensor is a scalar holding one
/// element. Every value is finite; constructors and operations that could
/// produce `NaN`/`Inf` return [`Error::NonFinite`] instead.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

fn check_finite<T: Scalar>(data: &[T], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("tensor_full"));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Result<Self> {
        Self::full(&[], value)
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::LengthMismatch {
                shape: shape.to_vec(),
                expected: len,
                actual: data.len(),
            });
        }
        check_finite(&data, "from_vec")?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for layer kernels whose outputs are finite by
    /// construction of finite inputs.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the storage. The caller must keep values finite.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::LengthMismatch {
                shape: shape.to_vec(),
                expected: len,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Checks that every value is finite, naming `op` in the error.
    pub fn ensure_finite(self, op: &'static str) -> Result<Self> {
        check_finite(&self.data, op)?;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
            .ensure_finite("map")
    }

    pub fn elementwise(op: BinaryOp, a: &Self, b: &Self) -> Result<Self> {
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                left: a.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let f = match op {
            BinaryOp::Add => |x: T, y: T| x + y,
            BinaryOp::Sub => |x: T, y: T| x - y,
            BinaryOp::Mul => |x: T, y: T| x * y,
        };
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(a.shape.clone(), data).ensure_finite("elementwise")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Mul, self, other)
    }

    /// Reduction over one axis, or over every element when `axis` is `None`.
    ///
    /// Sums and means accumulate in `f64` in storage order regardless of `T`.
    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>) -> Result<Self> {
        let Some(axis) = axis else {
            let v = reduce_strided(op, &self.data, 0, 1, self.data.len());
            return Tensor::scalar(T::lit(v)).and_then(|t| t.ensure_finite("reduce"));
        };
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::AxisOutOfRange { axis, rank });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let start = o * extent * inner + i;
                out.push(T::lit(reduce_strided(op, &self.data, start, inner, extent)));
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Tensor::from_parts(shape, out).ensure_finite("reduce")
    }

    pub fn sum(&self) -> f64 {
        reduce_strided(ReduceOp::Sum, &self.data, 0, 1, self.data.len())
    }

    pub fn mean(&self) -> f64 {
        reduce_strided(ReduceOp::Mean, &self.data, 0, 1, self.data.len())
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Element at a multi-index; panics when out of bounds.
    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {i} out of bounds for extent {n}");
            acc * n + i
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

fn reduce_strided<T: Scalar>(op: ReduceOp, data: &[T], start: usize, stride: usize, n: usize) -> f64 {
    let items = (0..n).map(|j| data[start + j * stride].as_f64());
    match op {
        ReduceOp::Sum => items.fold(0.0, |a, v| a + v),
        ReduceOp::Mean => items.fold(0.0, |a, v| a + v) / n as f64,
        ReduceOp::Max => items.fold(f64::NEG_INFINITY, f64::max),
        ReduceOp::Min => items.fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    type T32 = Tensor<f32>;

    #[test]
    fn full_fills_every_element() {
        let t = T32::full(&[2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = T32::full(&[1], 7.5).unwrap();
        assert_eq!(t.data(), &[7.5]);
        let t = T32::full(&[3, 1, 2], -1.0).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn full_rejects_zero_extent_and_nan() {
        assert!(matches!(T32::full(&[2, 0], 1.0), Err(Error::InvalidShape(_))));
        assert!(matches!(T32::full(&[2], f32::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn elementwise_basics() {
        let a = T32::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = T32::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert!(a.sub(&a).unwrap().data().iter().all(|&v| v == 0.0));
        let c = T32::zeros(&[3]).unwrap();
        assert!(matches!(a.add(&c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mul_matches_loop_oracle() {
        let mut rng = SeededRng::new(3);
        let a: T32 = rng.normal(&[4, 4], 0.0, 1.0).unwrap();
        let b: T32 = rng.normal(&[4, 4], 0.0, 1.0).unwrap();
        let got = a.mul(&b).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(got.at(&[i, j]), a.at(&[i, j]) * b.at(&[i, j]));
            }
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let a = T32::full(&[2], f32::MAX).unwrap();
        assert!(matches!(a.add(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn reductions() {
        let t = T32::from_vec(&[2, 2], vec![5.0, 7.0, 9.0, 6.0]).unwrap();
        assert_eq!(t.reduce(ReduceOp::Min, None).unwrap().data(), &[5.0]);
        let t = T32::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.reduce(ReduceOp::Mean, None).unwrap();
        assert!(m.shape().is_empty());
        assert_eq!(m.data(), &[2.5]);
        let t = T32::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = t.reduce(ReduceOp::Sum, Some(0)).unwrap();
        assert_eq!(s.shape(), &[2]);
        assert_eq!(s.data(), &[4.0, 6.0]);
        let s = t.reduce(ReduceOp::Max, Some(1)).unwrap();
        assert_eq!(s.data(), &[2.0, 4.0]);
        assert!(matches!(
            t.reduce(ReduceOp::Sum, Some(2)),
            Err(Error::AxisOutOfRange { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn reshape_checks_length() {
        let t = T32::zeros(&[2, 3]).unwrap();
        assert_eq!(t.clone().reshape(&[3, 2]).unwrap().shape(), &[3, 2]);
        assert!(t.reshape(&[4]).is_err());
    }
}
