use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{dim_err, NumericsError, Result, Tape, Var};

/// Row-major dense tensor of f64 values.
///
/// Values are immutable once created; only the gradient buffer changes,
/// through [`Tensor::accumulate_grad`] and [`Tensor::zero_grad`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return dim_err("tensor", format!("shape {shape:?} needs {numel} values, got {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite("tensor"));
        }
        Ok(Self { shape, values, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, values: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], values: vec![v], requires_grad: false, grad: None }
    }

    /// Gaussian init with standard deviation `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let values = (0..numel).map(|_| normal.sample(rng)).collect();
        Self { shape, values, requires_grad: false, grad: None }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.values.len() {
            return dim_err("accumulate_grad", "gradient length differs from values");
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Replaces the values in place, keeping the shape. Used by optimizers.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// A named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its index.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every parameter on the tape as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Adds the tape gradients of `vars` into the stored tensors.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.values().iter().copied()).collect()
    }

    /// Gradients in the same flat layout as [`ParamStore::flatten`]; missing
    /// gradients read as zero.
    pub fn flat_grad(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in &self.tensors {
            match t.grad() {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat(0.0).take(t.numel())),
            }
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return dim_err("load_flat", format!("expected {} scalars, got {}", self.num_scalars(), flat.len()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite("load_flat"));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.values_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::new(vec![2, 3], vec![0.0; 5]), Err(NumericsError::Dimension { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(Tensor::new(vec![1], vec![f64::NAN]), Err(NumericsError::NonFinite("tensor")));
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(vec![2]);
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn flatten_roundtrip() {
        let mut ps = ParamStore::new();
        ps.add("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        ps.add("b", Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let flat = ps.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0]);
        ps.load_flat(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(ps.get(1).values(), &[6.0]);
        assert!(ps.load_flat(&[1.0]).is_err());
    }
}
