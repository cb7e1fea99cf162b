use std::collections::HashMap;

use super::Real;
use crate::error::{invalid, shape, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named flat arrays in a fixed order. Used for parameters, gradients,
/// optimizer moments and normalization running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape_: Vec<usize>, data: Vec<T>) -> Result<usize> {
        let name = name.into();
        let n: usize = shape_.iter().product();
        if n != data.len() {
            return Err(shape(format!("{name}: shape {shape_:?} but {} values", data.len())));
        }
        if self.index.contains_key(&name) {
            return Err(invalid(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, shape: shape_, data });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn require(&self, name: &str) -> Result<&[T]> {
        self.get(name).map(|p| p.data.as_slice()).ok_or_else(|| invalid(format!("missing parameter {name}")))
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut [T]> {
        self.get_mut(name).map(|p| p.data.as_mut_slice()).ok_or_else(|| invalid(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.position(name).map(move |i| &mut self.params[i])
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[T] {
        &self.params[i].data
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.params[i].data
    }

    pub fn param(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.fill(T::zero());
        out
    }

    pub fn fill(&mut self, v: T) {
        for p in &mut self.params {
            p.data.iter_mut().for_each(|x| *x = v);
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a over names and value bit patterns of the selected arrays.
    pub fn checksum_where(&self, mut keep: impl FnMut(&str) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for p in self.params.iter().filter(|p| keep(&p.name)) {
            p.name.bytes().for_each(&mut eat);
            for v in &p.data {
                v.bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    pub fn scale(&mut self, s: T) {
        for p in &mut self.params {
            p.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn max_abs(&self) -> T {
        self.params
            .iter()
            .flat_map(|p| p.data.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn convert<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}
