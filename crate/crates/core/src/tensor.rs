use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::real::Real;

/// Dense row-major array. Gradients live on the tape, not here.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            bail!(Argument, "zero extent in shape {:?}", shape);
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::dim("Tensor::new", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let count = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; count],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: &[T]) -> Self {
        Tensor {
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            bail!(Argument, "ragged rows");
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
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

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => bail!(Argument, "expected a matrix, got shape {:?}", self.shape),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.shape.get(1).copied().unwrap_or(1);
        &self.data[i * c..(i + 1) * c]
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data[..] {
            [v] => Ok(v),
            _ => bail!(Contract, "item() on tensor of shape {:?}", self.shape),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != self.data.len() || shape.contains(&0) {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(Tensor::<f64>::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(&[2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.dims2().unwrap(), (2, 3));
        assert!(t.item().is_err());
        assert_eq!(Tensor::scalar(4.0f64).item().unwrap(), 4.0);
        assert!(Tensor::<f64>::vector(&[1.0]).dims2().is_err());
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::<f32>::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = t.clone().reshaped(&[3, 2]).unwrap();
        assert_eq!(r.row(1), &[3., 4.]);
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn cast_and_finiteness() {
        let t = Tensor::<f64>::vector(&[0.5, -2.0]);
        assert_eq!(t.cast::<f32>().data(), &[0.5f32, -2.0]);
        assert_eq!(t.max_abs(), 2.0);
        assert!(!Tensor::<f64>::vector(&[f64::INFINITY]).is_finite());
    }
}
