use std::collections::BTreeMap;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use svbrdf_core::Real;

/// Index of a parameter array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named parameter arrays, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an array. Panics on duplicate names or a size mismatch,
    /// both of which are programming errors in the model definition.
    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<T>) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), values.len(), "parameter {name}: size mismatch");
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.values.push(values);
        ParamId(id)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.insert(name, shape, vec![T::zero(); n])
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], v: T) -> ParamId {
        let n = shape.iter().product();
        self.insert(name, shape, vec![v; n])
    }

    /// Gaussian with standard deviation `1 / sqrt(fan_in)`.
    pub fn fan_in_normal(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl RngCore) -> ParamId {
        let n: usize = shape.iter().product();
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let values = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        self.insert(name, shape, values)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize], &[T])> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.values)
            .map(|((n, s), v)| (n.as_str(), s.as_slice(), v.as_slice()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.values.iter_mut()
    }

    pub fn values(&self) -> impl Iterator<Item = &Vec<T>> {
        self.values.iter()
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names && self.shapes == other.shapes
    }

    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, _, v)| v.iter().any(|x| !x.is_finite())).map(|(n, _, _)| n)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| v.iter().map(|x| U::lit(x.as_f64())).collect()).collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads<T> {
    values: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            values: store.values().map(|v| vec![T::zero(); v.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.fill(T::zero());
        }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<T>> {
        self.values.iter()
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.values {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> T {
        self.values.iter().flatten().map(|&g| g * g).sum::<T>().sqrt()
    }
}
