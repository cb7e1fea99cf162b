use super::Real;
use crate::error::{shape, Result};

/// Dense (batch, channels, length) tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Self { shape: [batch, channels, length], data: vec![T::zero(); batch * channels * length] }
    }

    pub fn from_vec(batch: usize, channels: usize, length: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * channels * length {
            return Err(shape(format!(
                "buffer of {} for shape ({batch}, {channels}, {length})",
                data.len()
            )));
        }
        Ok(Self { shape: [batch, channels, length], data })
    }

    pub fn from_f32(batch: usize, channels: usize, length: usize, data: &[f32]) -> Result<Self> {
        Self::from_vec(batch, channels, length, data.iter().map(|&v| T::of(v as f64)).collect())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.shape[1] * self.shape[2];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape[1] * self.shape[2];
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, l: usize) -> T {
        self.data[(b * self.shape[1] + c) * self.shape[2] + l]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major (rows, cols) matrix, used for logits and pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(format!("buffer of {} for matrix {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }
}
