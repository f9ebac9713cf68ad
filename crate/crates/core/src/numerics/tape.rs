use super::ops::Op;
use super::{dim_err, NumericsError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub op: Op,
    pub needs_grad: bool,
}

/// Wengert list for reverse-mode differentiation.
///
/// Every op appends one node; [`Tape::backward`] replays the list in reverse.
/// Call [`Tape::clear`] between training steps to release recorded values.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    pub(crate) grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies a tensor onto the tape. Gradients are tracked when the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.values().to_vec(),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are finite")
    }

    pub(crate) fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite(name));
        }
        let needs_grad = op.inputs().iter().any(|&i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { shape, value, op, needs_grad });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Propagates d(loss)/d(node) to every node that depends on a
    /// gradient-tracking leaf. Calling it twice without [`Tape::zero_grads`]
    /// accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.nodes[loss.0].value.len();
        if numel != 1 {
            return Err(NumericsError::Rank(self.nodes[loss.0].shape.clone()));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        // Seed is tracked separately so repeated calls add a fresh unit seed
        // instead of re-propagating accumulated gradients.
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            super::ops::backward_node(&self.nodes, i, &g, &mut local)?;
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => self.grads[i] = Some(g),
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(op, format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }
}
