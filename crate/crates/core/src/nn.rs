//! Small building blocks over [`ParamStore`]: dense layers and tanh MLPs,
//! each usable on a tape or through a plain f64 inference path.

use rand::Rng;

use crate::numerics::{gemm, ParamStore, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights drawn from `N(0, gain² / fan_in)`, zero bias.
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        let w = ps.add(format!("{name}.w"), Tensor::randn(vec![fan_in, fan_out], std, rng));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(vec![fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[self.w])?;
        tape.add_row(y, vars[self.b])
    }

    /// `rows x fan_in` -> `rows x fan_out` without recording anything.
    pub fn apply(&self, ps: &ParamStore, x: &[f64], rows: usize) -> Vec<f64> {
        let (w, b) = (ps.get(self.w).values(), ps.get(self.b).values());
        let mut out: Vec<f64> = b.iter().copied().cycle().take(rows * self.fan_out).collect();
        gemm(rows, self.fan_in, self.fan_out, x, false, w, false, &mut out, true);
        out
    }
}

/// Dense layers with tanh between them and a linear final layer.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`. The last layer is scaled by
    /// `out_gain` (small values give near-uniform initial policies).
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { 1.0 };
                Linear::new(ps, &format!("{name}.{i}"), sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], mut x: Var) -> Result<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, vars, x)?;
            if i + 1 < self.layers.len() {
                x = tape.tanh(x)?;
            }
        }
        Ok(x)
    }

    pub fn apply(&self, ps: &ParamStore, x: &[f64], rows: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.apply(ps, &h, rows);
            if i + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h
    }
}
