use super::gauss::{log_std_normal_pdf, std_normal_cdf, std_normal_pdf, std_normal_sf};
use super::tape::Node;
use super::{dim_err, gemm, NumericsError, Result, Tape, Var};

const LN_EPS: f64 = 1e-5;

pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, b_t: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { x: Var, bias: Var, cols: usize },
    Scale { x: Var, s: f64 },
    AddScalar { x: Var },
    MulConst { x: Var, c: Vec<f64> },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Softplus { x: Var },
    Gelu { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Square { x: Var },
    NormalCdf { x: Var },
    MaskedSoftmax { x: Var, n: usize },
    MaskedLogSoftmax { x: Var, mask: Vec<bool>, n: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, n: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Reshape { x: Var },
    Permute0213 { x: Var, dims: [usize; 4] },
    GatherRows { x: Var, idx: Vec<usize>, cols: usize },
    ConcatCols { a: Var, b: Var, ca: usize, cb: usize },
    SliceCols { x: Var, start: usize, end: usize, cols: usize },
    Sum { x: Var },
    Mean { x: Var },
    SumLast { x: Var, n: usize },
    Pick { x: Var, idx: Vec<usize>, n: usize },
    Clamp { x: Var, lo: f64, hi: f64 },
    Minimum { a: Var, b: Var },
    IntervalLogProb { mu: Var, sigma: Var, dmu: Vec<f64>, dsigma: Vec<f64> },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. } | BatchMatMul { a, b, .. } | Add { a, b } | Sub { a, b } | Mul { a, b } => {
                vec![*a, *b]
            }
            ConcatCols { a, b, .. } | Minimum { a, b } => vec![*a, *b],
            AddRow { x, bias, .. } => vec![*x, *bias],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            IntervalLogProb { mu, sigma, .. } => vec![*mu, *sigma],
            Scale { x, .. }
            | AddScalar { x }
            | MulConst { x, .. }
            | Tanh { x }
            | Sigmoid { x }
            | Softplus { x }
            | Gelu { x }
            | Exp { x }
            | Log { x }
            | Square { x }
            | NormalCdf { x }
            | MaskedSoftmax { x, .. }
            | MaskedLogSoftmax { x, .. }
            | Reshape { x }
            | Permute0213 { x, .. }
            | GatherRows { x, .. }
            | SliceCols { x, .. }
            | Sum { x }
            | Mean { x }
            | SumLast { x, .. }
            | Pick { x, .. }
            | Clamp { x, .. } => vec![*x],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Expands a mask of length `n` (broadcast over rows) or of the full
/// element count into a full-length mask.
fn expand_mask(op: &'static str, mask: &[bool], numel: usize, n: usize) -> Result<Vec<bool>> {
    if mask.len() == numel {
        Ok(mask.to_vec())
    } else if mask.len() == n {
        Ok(mask.iter().copied().cycle().take(numel).collect())
    } else {
        dim_err(op, format!("mask length {} matches neither row width {n} nor {numel}", mask.len()))
    }
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl Tape {
    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, value, op)
    }

    /// `a [m,k] x b [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b, m, k, n })
    }

    /// Batched product of `a [B,m,k]` with `b [B,k,n]`, or with `b [B,n,k]`
    /// read transposed when `b_transposed` is set.
    pub fn bmm(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return dim_err("bmm", format!("{sa:?} x {sb:?}"));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if b_transposed { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return dim_err("bmm", format!("inner dims {k} vs {kb}"));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let (va, vb) = (self.value(a), self.value(b));
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &va[bi * m * k..(bi + 1) * m * k],
                    false,
                    &vb[bi * k * n..(bi + 1) * k * n],
                    b_transposed,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
        }
        self.push("bmm", vec![batch, m, n], out, Op::BatchMatMul { a, b, batch, m, k, n, b_t: b_transposed })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), v, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push("sub", self.shape(a).to_vec(), v, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), v, Op::Mul { a, b })
    }

    /// Adds a bias vector to every row of `x [.., c]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = last_dim(self.shape(x));
        if self.numel(bias) != cols {
            return dim_err("add_row", format!("bias has {} entries, rows have {cols}", self.numel(bias)));
        }
        let b = self.value(bias);
        let v = self.value(x).chunks(cols).flat_map(|row| row.iter().zip(b).map(|(r, c)| r + c)).collect();
        self.push("add_row", self.shape(x).to_vec(), v, Op::AddRow { x, bias, cols })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * s, Op::Scale { x, s })
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + s, Op::AddScalar { x })
    }

    /// Elementwise product with a constant array of the same length.
    pub fn mul_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.numel(x) {
            return dim_err("mul_const", "constant length differs from tensor");
        }
        let v = self.value(x).iter().zip(c).map(|(a, b)| a * b).collect();
        self.push("mul_const", self.shape(x).to_vec(), v, Op::MulConst { x, c: c.to_vec() })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid { x })
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, softplus, Op::Softplus { x })
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, |v| v * std_normal_cdf(v), Op::Gelu { x })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp { x })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, f64::ln, Op::Log { x })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square { x })
    }

    pub fn normal_cdf(&mut self, x: Var) -> Result<Var> {
        self.unary("normal_cdf", x, std_normal_cdf, Op::NormalCdf { x })
    }

    /// Softmax over the last dimension with masked positions forced to
    /// exactly zero. `mask[i] == true` marks a position that may receive
    /// probability; the mask is either one row long or covers every element.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let n = last_dim(self.shape(x));
        let full = expand_mask("masked_softmax", mask, self.numel(x), n)?;
        let mut out = vec![0.0; self.numel(x)];
        for (r, (row, (mrow, orow))) in self.value(x).chunks(n).zip(full.chunks(n).zip(out.chunks_mut(n))).enumerate() {
            let max = row.iter().zip(mrow).filter(|(_, &m)| m).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::DegenerateRow { row: r });
            }
            let mut z = 0.0;
            for ((o, v), &m) in orow.iter_mut().zip(row).zip(mrow) {
                if m {
                    *o = (v - max).exp();
                    z += *o;
                }
            }
            orow.iter_mut().for_each(|o| *o /= z);
        }
        let shape = self.shape(x).to_vec();
        self.push("masked_softmax", shape, out, Op::MaskedSoftmax { x, n })
    }

    /// Log-softmax over the last dimension restricted to unmasked entries.
    /// Masked entries hold 0.0 (not -inf) and carry no gradient.
    pub fn masked_log_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let n = last_dim(self.shape(x));
        let full = expand_mask("masked_log_softmax", mask, self.numel(x), n)?;
        let mut out = vec![0.0; self.numel(x)];
        for (r, (row, (mrow, orow))) in self.value(x).chunks(n).zip(full.chunks(n).zip(out.chunks_mut(n))).enumerate() {
            let max = row.iter().zip(mrow).filter(|(_, &m)| m).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::DegenerateRow { row: r });
            }
            let lse = max + row.iter().zip(mrow).filter(|(_, &m)| m).map(|(v, _)| (v - max).exp()).sum::<f64>().ln();
            for ((o, v), &m) in orow.iter_mut().zip(row).zip(mrow) {
                if m {
                    *o = v - lse;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("masked_log_softmax", shape, out, Op::MaskedLogSoftmax { x, mask: full, n })
    }

    /// Layer normalisation over the last dimension with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = last_dim(self.shape(x));
        if self.numel(gamma) != n || self.numel(beta) != n {
            return dim_err("layer_norm", "gain/bias length differs from row width");
        }
        let rows = self.numel(x) / n;
        let mut xhat = vec![0.0; rows * n];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        let (g, b) = (self.value(gamma), self.value(beta));
        for (r, row) in self.value(x).chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let xh = (row[j] - mean) * is;
                xhat[r * n + j] = xh;
                out[r * n + j] = xh * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gamma, beta, n, xhat, inv_std })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.numel(x) {
            return dim_err("reshape", format!("{:?} -> {shape:?}", self.shape(x)));
        }
        let v = self.value(x).to_vec();
        self.push("reshape", shape, v, Op::Reshape { x })
    }

    /// `[a, b, c, d] -> [a, c, b, d]`, e.g. splitting attention heads.
    pub fn permute_0213(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return dim_err("permute_0213", format!("needs rank 4, got {s:?}"));
        }
        let dims = [s[0], s[1], s[2], s[3]];
        let [a, b, c, d] = dims;
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    let s_off = ((i * b + j) * c + k) * d;
                    let d_off = ((i * c + k) * b + j) * d;
                    out[d_off..d_off + d].copy_from_slice(&src[s_off..s_off + d]);
                }
            }
        }
        self.push("permute_0213", vec![a, c, b, d], out, Op::Permute0213 { x, dims })
    }

    /// Selects rows of a 2-D tensor.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return dim_err("gather_rows", format!("needs rank 2, got {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return dim_err("gather_rows", format!("row {bad} out of {rows}"));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        self.push("gather_rows", vec![idx.len(), cols], out, Op::GatherRows { x, idx: idx.to_vec(), cols })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return dim_err("concat_cols", format!("{sa:?} and {sb:?}"));
        }
        let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&self.value(a)[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&self.value(b)[r * cb..(r + 1) * cb]);
        }
        self.push("concat_cols", vec![rows, ca + cb], out, Op::ConcatCols { a, b, ca, cb })
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start >= end || end > s[1] {
            return dim_err("slice_cols", format!("{start}..{end} of {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        self.push("slice_cols", vec![rows, end - start], out, Op::SliceCols { x, start, end, cols })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.numel(x);
        if n == 0 {
            return dim_err("mean", "empty tensor");
        }
        let s = self.value(x).iter().sum::<f64>() / n as f64;
        self.push("mean", vec![], vec![s], Op::Mean { x })
    }

    /// Sums over the last dimension.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = last_dim(&shape);
        let v = self.value(x).chunks(n).map(|r| r.iter().sum()).collect();
        let out_shape = if shape.is_empty() { vec![] } else { shape[..shape.len() - 1].to_vec() };
        self.push("sum_last", out_shape, v, Op::SumLast { x, n })
    }

    /// For each row of `x [.., n]`, the entry at column `idx[row]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = last_dim(&shape);
        let rows = self.numel(x) / n.max(1);
        if idx.len() != rows || idx.iter().any(|&i| i >= n) {
            return dim_err("pick", format!("{} indices for {rows} rows of width {n}", idx.len()));
        }
        let v = idx.iter().enumerate().map(|(r, &i)| self.value(x)[r * n + i]).collect();
        self.push("pick", vec![rows], v, Op::Pick { x, idx: idx.to_vec(), n })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("minimum", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x.min(*y)).collect();
        self.push("minimum", self.shape(a).to_vec(), v, Op::Minimum { a, b })
    }

    /// `log P(lo_i <= Y_i < hi_i)` for `Y_i ~ N(mu_i, sigma_i^2)`, elementwise.
    /// Bounds may be infinite. Evaluated in log space so far-tail intervals
    /// keep a usable gradient.
    pub fn interval_log_prob(&mut self, mu: Var, sigma: Var, lo: &[f64], hi: &[f64]) -> Result<Var> {
        self.check_same_shape("interval_log_prob", mu, sigma)?;
        let n = self.numel(mu);
        if lo.len() != n || hi.len() != n {
            return dim_err("interval_log_prob", "bounds length differs from mu");
        }
        let mut out = vec![0.0; n];
        let mut dmu = vec![0.0; n];
        let mut dsigma = vec![0.0; n];
        for i in 0..n {
            let (m, s) = (self.value(mu)[i], self.value(sigma)[i]);
            if s <= 0.0 {
                return Err(NumericsError::Covariance(format!("non-positive sigma {s}")));
            }
            let a = (lo[i] - m) / s;
            let b = (hi[i] - m) / s;
            let lp = log_interval_prob(a, b);
            out[i] = lp;
            // ratios phi(z)/p, zero at infinite bounds
            let ra = if a.is_finite() { (log_std_normal_pdf(a) - lp).exp() } else { 0.0 };
            let rb = if b.is_finite() { (log_std_normal_pdf(b) - lp).exp() } else { 0.0 };
            dmu[i] = (ra - rb) / s;
            let za = if a.is_finite() { a * ra } else { 0.0 };
            let zb = if b.is_finite() { b * rb } else { 0.0 };
            dsigma[i] = (za - zb) / s;
        }
        let shape = self.shape(mu).to_vec();
        self.push("interval_log_prob", shape, out, Op::IntervalLogProb { mu, sigma, dmu, dsigma })
    }
}

/// `ln(Phi(b) - Phi(a))` for standardized bounds `a < b`.
pub(crate) fn log_interval_prob(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        // both in the upper tail: Q(a) - Q(b)
        let la = log_sf(a);
        let lb = log_sf(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b < 0.0 {
        let la = log_sf(-b);
        let lb = log_sf(-a);
        la + (-(lb - la).exp()).ln_1p()
    } else {
        (std_normal_cdf(b) - std_normal_cdf(a)).ln()
    }
}

/// `ln Q(z)` with an asymptotic expansion once `Q` underflows.
pub(crate) fn log_sf(z: f64) -> f64 {
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z < 35.0 {
        std_normal_sf(z).ln()
    } else {
        let z2 = z * z;
        log_std_normal_pdf(z) - z.ln() + (-1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)).ln_1p()
    }
}

fn slot<'a>(nodes: &[Node], local: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(local[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(nodes: &[Node], local: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
    if let Some(dst) = slot(nodes, local, v) {
        dst.iter_mut().enumerate().for_each(|(i, d)| *d += f(i));
    }
}

pub(crate) fn backward_node(nodes: &[Node], i: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) -> Result<()> {
    let y = &nodes[i].value;
    let val = |v: Var| -> &[f64] { &nodes[v.0].value };
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if nodes[a.0].needs_grad {
                let bv = val(*b);
                let da = slot(nodes, local, *a).unwrap();
                gemm(m, n, k, g, false, &bv, true, da, true);
            }
            if nodes[b.0].needs_grad {
                let av = val(*a);
                let db = slot(nodes, local, *b).unwrap();
                gemm(k, m, n, &av, true, g, false, db, true);
            }
        }
        Op::BatchMatMul { a, b, batch, m, k, n, b_t } => {
            let (m, k, n) = (*m, *k, *n);
            if nodes[a.0].needs_grad {
                let bv = val(*b);
                let da = slot(nodes, local, *a).unwrap();
                for bi in 0..*batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    let bs = &bv[bi * k * n..(bi + 1) * k * n];
                    // dA = dC B (b stored n x k) or dC B^T (b stored k x n)
                    gemm(m, n, k, gs, false, bs, !*b_t, &mut da[bi * m * k..(bi + 1) * m * k], true);
                }
            }
            if nodes[b.0].needs_grad {
                let av = val(*a);
                let db = slot(nodes, local, *b).unwrap();
                for bi in 0..*batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    let as_ = &av[bi * m * k..(bi + 1) * m * k];
                    let dbs = &mut db[bi * k * n..(bi + 1) * k * n];
                    if *b_t {
                        // dB [n,k] = dC^T A
                        gemm(n, m, k, gs, true, as_, false, dbs, true);
                    } else {
                        // dB [k,n] = A^T dC
                        gemm(k, m, n, as_, true, gs, false, dbs, true);
                    }
                }
            }
        }
        Op::Add { a, b } => {
            add_into(nodes, local, *a, |j| g[j]);
            add_into(nodes, local, *b, |j| g[j]);
        }
        Op::Sub { a, b } => {
            add_into(nodes, local, *a, |j| g[j]);
            add_into(nodes, local, *b, |j| -g[j]);
        }
        Op::Mul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            add_into(nodes, local, *a, |j| g[j] * bv[j]);
            add_into(nodes, local, *b, |j| g[j] * av[j]);
        }
        Op::AddRow { x, bias, cols } => {
            add_into(nodes, local, *x, |j| g[j]);
            if let Some(db) = slot(nodes, local, *bias) {
                for row in g.chunks(*cols) {
                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
            }
        }
        Op::Scale { x, s } => add_into(nodes, local, *x, |j| g[j] * s),
        Op::AddScalar { x } => add_into(nodes, local, *x, |j| g[j]),
        Op::MulConst { x, c } => add_into(nodes, local, *x, |j| g[j] * c[j]),
        Op::Tanh { x } => add_into(nodes, local, *x, |j| g[j] * (1.0 - y[j] * y[j])),
        Op::Sigmoid { x } => add_into(nodes, local, *x, |j| g[j] * y[j] * (1.0 - y[j])),
        Op::Softplus { x } => {
            let xv = val(*x);
            add_into(nodes, local, *x, |j| g[j] * sigmoid(xv[j]))
        }
        Op::Gelu { x } => {
            let xv = val(*x);
            add_into(nodes, local, *x, |j| g[j] * (std_normal_cdf(xv[j]) + xv[j] * std_normal_pdf(xv[j])))
        }
        Op::Exp { x } => add_into(nodes, local, *x, |j| g[j] * y[j]),
        Op::Log { x } => {
            let xv = val(*x);
            add_into(nodes, local, *x, |j| g[j] / xv[j])
        }
        Op::Square { x } => {
            let xv = val(*x);
            add_into(nodes, local, *x, |j| 2.0 * g[j] * xv[j])
        }
        Op::NormalCdf { x } => {
            let xv = val(*x);
            add_into(nodes, local, *x, |j| g[j] * std_normal_pdf(xv[j]))
        }
        Op::MaskedSoftmax { x, n, .. } => {
            if let Some(dx) = slot(nodes, local, *x) {
                for ((yr, gr), dr) in y.chunks(*n).zip(g.chunks(*n)).zip(dx.chunks_mut(*n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..*n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::MaskedLogSoftmax { x, mask, n } => {
            if let Some(dx) = slot(nodes, local, *x) {
                for (((yr, gr), dr), mr) in y.chunks(*n).zip(g.chunks(*n)).zip(dx.chunks_mut(*n)).zip(mask.chunks(*n)) {
                    let gsum: f64 = gr.iter().zip(mr).filter(|(_, &m)| m).map(|(v, _)| v).sum();
                    for j in 0..*n {
                        if mr[j] {
                            dr[j] += gr[j] - yr[j].exp() * gsum;
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, n, xhat, inv_std } => {
            let n = *n;
            let gv = val(*gamma);
            if let Some(dg) = slot(nodes, local, *gamma) {
                for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        dg[j] += gr[j] * xr[j];
                    }
                }
            }
            if let Some(db) = slot(nodes, local, *beta) {
                for gr in g.chunks(n) {
                    db.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                }
            }
            if let Some(dx) = slot(nodes, local, *x) {
                let nf = n as f64;
                for (r, ((gr, xr), dr)) in g.chunks(n).zip(xhat.chunks(n)).zip(dx.chunks_mut(n)).enumerate() {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..n {
                        let dxh = gr[j] * gv[j];
                        s1 += dxh;
                        s2 += dxh * xr[j];
                    }
                    let is = inv_std[r];
                    for j in 0..n {
                        let dxh = gr[j] * gv[j];
                        dr[j] += is / nf * (nf * dxh - s1 - xr[j] * s2);
                    }
                }
            }
        }
        Op::Reshape { x } => add_into(nodes, local, *x, |j| g[j]),
        Op::Permute0213 { x, dims } => {
            if let Some(dx) = slot(nodes, local, *x) {
                let [a, b, c, d] = *dims;
                for i0 in 0..a {
                    for j in 0..b {
                        for k in 0..c {
                            let s_off = ((i0 * b + j) * c + k) * d;
                            let d_off = ((i0 * c + k) * b + j) * d;
                            for t in 0..d {
                                dx[s_off + t] += g[d_off + t];
                            }
                        }
                    }
                }
            }
        }
        Op::GatherRows { x, idx, cols } => {
            if let Some(dx) = slot(nodes, local, *x) {
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..*cols {
                        dx[src * cols + c] += g[r * cols + c];
                    }
                }
            }
        }
        Op::ConcatCols { a, b, ca, cb } => {
            let w = ca + cb;
            add_into(nodes, local, *a, |j| g[(j / ca) * w + j % ca]);
            add_into(nodes, local, *b, |j| g[(j / cb) * w + ca + j % cb]);
        }
        Op::SliceCols { x, start, end, cols } => {
            let w = end - start;
            if let Some(dx) = slot(nodes, local, *x) {
                for (r, gr) in g.chunks(w).enumerate() {
                    for c in 0..w {
                        dx[r * cols + start + c] += gr[c];
                    }
                }
            }
        }
        Op::Sum { x } => add_into(nodes, local, *x, |_| g[0]),
        Op::Mean { x } => {
            let n = nodes[x.0].value.len() as f64;
            add_into(nodes, local, *x, |_| g[0] / n)
        }
        Op::SumLast { x, n } => add_into(nodes, local, *x, |j| g[j / n]),
        Op::Pick { x, idx, n } => {
            if let Some(dx) = slot(nodes, local, *x) {
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * n + c] += g[r];
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            let xv = val(*x);
            add_into(nodes, local, *x, |j| if xv[j] >= *lo && xv[j] <= *hi { g[j] } else { 0.0 })
        }
        Op::Minimum { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            add_into(nodes, local, *a, |j| if av[j] <= bv[j] { g[j] } else { 0.0 });
            add_into(nodes, local, *b, |j| if av[j] <= bv[j] { 0.0 } else { g[j] });
        }
        Op::IntervalLogProb { mu, sigma, dmu, dsigma } => {
            add_into(nodes, local, *mu, |j| g[j] * dmu[j]);
            add_into(nodes, local, *sigma, |j| g[j] * dsigma[j]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn leaf(tape: &mut Tape, shape: Vec<usize>, vals: Vec<f64>) -> Var {
        tape.leaf(&Tensor::new(shape, vals).unwrap().with_requires_grad(true))
    }

    /// Central-difference check of `build` (which maps leaf values to a scalar)
    /// against the tape gradient. Returns the worst relative error.
    fn fd_check(shapes: &[Vec<usize>], rng: &mut ChaCha8Rng, build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        let inits: Vec<Vec<f64>> =
            shapes.iter().map(|s| (0..s.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let eval = |vals: &[Vec<f64>]| -> f64 {
            let mut t = Tape::new();
            let vars: Vec<Var> = shapes.iter().zip(vals).map(|(s, v)| leaf(&mut t, s.clone(), v.clone())).collect();
            let out = build(&mut t, &vars);
            t.item(out)
        };
        let mut t = Tape::new();
        let vars: Vec<Var> = shapes.iter().zip(&inits).map(|(s, v)| leaf(&mut t, s.clone(), v.clone())).collect();
        let out = build(&mut t, &vars);
        t.backward(out).unwrap();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for (vi, v) in vars.iter().enumerate() {
            let g = t.grad(*v).map(|g| g.to_vec()).unwrap_or(vec![0.0; inits[vi].len()]);
            for j in 0..inits[vi].len() {
                let mut p = inits.clone();
                p[vi][j] += eps;
                let mut m = inits.clone();
                m[vi][j] -= eps;
                let fd = (eval(&p) - eval(&m)) / (2.0 * eps);
                let err = (fd - g[j]).abs() / (fd.abs().max(g[j].abs()).max(1e-3));
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn matmul_hand_values() {
        let mut t = Tape::new();
        let a = t.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = t.constant(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[3.0, 7.0]);
        let i = t.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let ii = t.matmul(i, i).unwrap();
        assert_eq!(t.value(ii), &[1.0, 0.0, 0.0, 1.0]);
        let bad = t.matmul(b, b);
        assert!(matches!(bad, Err(NumericsError::Dimension { .. })));
    }

    #[test]
    fn matmul_grad_is_ones_times_bt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let av: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bv: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t = Tape::new();
        let a = leaf(&mut t, vec![4, 5], av);
        let b = leaf(&mut t, vec![5, 3], bv.clone());
        let c = t.matmul(a, b).unwrap();
        let s = t.sum(c).unwrap();
        t.backward(s).unwrap();
        // ones(4,3) . b^T: every row equals the row sums of b
        let ga = t.grad(a).unwrap();
        for r in 0..4 {
            for k in 0..5 {
                let expect: f64 = bv[k * 3..k * 3 + 3].iter().sum();
                assert!((ga[r * 5 + k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn square_and_sigmoid_grads() {
        let mut t = Tape::new();
        let x = leaf(&mut t, vec![], vec![3.0]);
        let y = t.square(x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);

        let mut t = Tape::new();
        let x = leaf(&mut t, vec![3], vec![0.0; 3]);
        let s = t.sigmoid(x).unwrap();
        let l = t.sum(s).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.25, 0.25, 0.25]);
    }

    #[test]
    fn backward_accumulates_and_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = leaf(&mut t, vec![], vec![3.0]);
        let y = t.square(x).unwrap();
        t.backward(y).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[12.0]);
        t.zero_grads();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
        let v = leaf(&mut t, vec![2], vec![1.0, 2.0]);
        assert_eq!(t.backward(v), Err(NumericsError::Rank(vec![2])));
    }

    #[test]
    fn masked_softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let p = t.masked_softmax(x, &[true, true, true]).unwrap();
        for v in t.value(p) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = t.constant(vec![3], vec![5.0, 0.0, 0.0]).unwrap();
        let p = t.masked_softmax(x, &[false, true, true]).unwrap();
        assert_eq!(t.value(p), &[0.0, 0.5, 0.5]);
        let x = t.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let p = t.masked_softmax(x, &[true, true]).unwrap();
        let e = std::f64::consts::E;
        assert!((t.value(p)[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((t.value(p)[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((t.value(p)[0] - 0.2689).abs() < 1e-4);
        let x = t.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            t.masked_softmax(x, &[true, true, false, false]).err(),
            Some(NumericsError::DegenerateRow { row: 1 })
        );
    }

    #[test]
    fn interval_log_prob_matches_cdf_difference() {
        let mut t = Tape::new();
        let mu = t.constant(vec![1], vec![0.5]).unwrap();
        let s = t.constant(vec![1], vec![0.1]).unwrap();
        let lp = t.interval_log_prob(mu, s, &[1.0 / 3.0], &[2.0 / 3.0]).unwrap();
        let p = std_normal_cdf((2.0 / 3.0 - 0.5) / 0.1) - std_normal_cdf((1.0 / 3.0 - 0.5) / 0.1);
        assert!((t.item(lp) - p.ln()).abs() < 1e-13);
        // far tail stays finite
        let mu = t.constant(vec![1], vec![0.0]).unwrap();
        let s = t.constant(vec![1], vec![1e-3]).unwrap();
        let lp = t.interval_log_prob(mu, s, &[2.0 / 3.0], &[f64::INFINITY]).unwrap();
        assert!(t.item(lp).is_finite() && t.item(lp) < -1e5);
    }

    #[test]
    fn log_interval_prob_tails_agree_with_direct() {
        for &(a, b) in &[(0.5, 1.5), (-2.0, -0.1), (-1.0, 1.0), (3.0, f64::INFINITY), (f64::NEG_INFINITY, -4.0)] {
            let direct = (std_normal_cdf(b) - std_normal_cdf(a)).ln();
            assert!((log_interval_prob(a, b) - direct).abs() < 1e-12, "{a} {b}");
        }
        // asymptotic branch is continuous with the erfc branch
        let below = log_sf(35.0 - 1e-9);
        let above = log_sf(35.0 + 1e-9);
        assert!((below - above).abs() < 1e-6);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
        let cases: Vec<(Vec<Vec<usize>>, Build)> = vec![
            (
                vec![vec![3, 4], vec![4, 2]],
                Box::new(|t, v| {
                    let c = t.matmul(v[0], v[1]).unwrap();
                    let c = t.tanh(c).unwrap();
                    t.sum(c).unwrap()
                }),
            ),
            (
                vec![vec![2, 3, 4], vec![2, 4, 3]],
                Box::new(|t, v| {
                    let c = t.bmm(v[0], v[1], false).unwrap();
                    let c = t.square(c).unwrap();
                    t.sum(c).unwrap()
                }),
            ),
            (
                vec![vec![2, 3, 4], vec![2, 5, 4]],
                Box::new(|t, v| {
                    let c = t.bmm(v[0], v[1], true).unwrap();
                    let c = t.square(c).unwrap();
                    t.sum(c).unwrap()
                }),
            ),
            (
                vec![vec![3, 2], vec![3, 2]],
                Box::new(|t, v| {
                    let a = t.add(v[0], v[1]).unwrap();
                    let b = t.sub(a, v[1]).unwrap();
                    let c = t.mul(b, v[1]).unwrap();
                    let c = t.exp(c).unwrap();
                    t.mean(c).unwrap()
                }),
            ),
            (
                vec![vec![3, 4], vec![4]],
                Box::new(|t, v| {
                    let a = t.add_row(v[0], v[1]).unwrap();
                    let a = t.gelu(a).unwrap();
                    let a = t.square(a).unwrap();
                    t.sum(a).unwrap()
                }),
            ),
            (
                vec![vec![5]],
                Box::new(|t, v| {
                    let a = t.softplus(v[0]).unwrap();
                    let a = t.log(a).unwrap();
                    let a = t.scale(a, 1.7).unwrap();
                    let a = t.add_scalar(a, 0.3).unwrap();
                    let a = t.square(a).unwrap();
                    t.sum(a).unwrap()
                }),
            ),
            (
                vec![vec![5]],
                Box::new(|t, v| {
                    let a = t.sigmoid(v[0]).unwrap();
                    let a = t.mul_const(a, &[1.0, -2.0, 3.0, 0.5, 0.1]).unwrap();
                    let a = t.normal_cdf(a).unwrap();
                    t.sum(a).unwrap()
                }),
            ),
            (
                vec![vec![3, 4]],
                Box::new(|t, v| {
                    let m = [true, false, true, true, false, true, true, true, true, true, false, false];
                    let p = t.masked_softmax(v[0], &m).unwrap();
                    let p = t.mul_const(p, &[0.3, 1.0, -0.7, 2.0, 1.0, 0.2, 0.1, -1.0, 0.5, 0.4, 0.9, -0.3]).unwrap();
                    t.sum(p).unwrap()
                }),
            ),
            (
                vec![vec![2, 4]],
                Box::new(|t, v| {
                    let lp = t.masked_log_softmax(v[0], &[true, false, true, true]).unwrap();
                    let lp = t.mul_const(lp, &[0.3, 1.0, -0.7, 2.0, 1.0, 0.2, 0.1, -1.0]).unwrap();
                    t.sum(lp).unwrap()
                }),
            ),
            (
                vec![vec![3, 5], vec![5], vec![5]],
                Box::new(|t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
                    let y = t.mul_const(y, &(0..15).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
                    t.sum(y).unwrap()
                }),
            ),
            (
                vec![vec![2, 3, 2, 2]],
                Box::new(|t, v| {
                    let y = t.permute_0213(v[0]).unwrap();
                    let y = t.reshape(y, vec![6, 4]).unwrap();
                    let y = t.mul_const(y, &(0..24).map(|i| i as f64 * 0.1).collect::<Vec<_>>()).unwrap();
                    let y = t.tanh(y).unwrap();
                    t.sum(y).unwrap()
                }),
            ),
            (
                vec![vec![4, 3], vec![4, 2]],
                Box::new(|t, v| {
                    let g = t.gather_rows(v[0], &[3, 0, 3]).unwrap();
                    let c = t.concat_cols(v[0], v[1]).unwrap();
                    let s = t.slice_cols(c, 1, 4).unwrap();
                    let s = t.square(s).unwrap();
                    let a = t.sum(s).unwrap();
                    let g2 = t.square(g).unwrap();
                    let b = t.sum(g2).unwrap();
                    let z = t.add(a, b).unwrap();
                    t.tanh(z).unwrap()
                }),
            ),
            (
                vec![vec![3, 4]],
                Box::new(|t, v| {
                    let s = t.sum_last(v[0]).unwrap();
                    let p = t.pick(v[0], &[1, 3, 0]).unwrap();
                    let x = t.mul(s, p).unwrap();
                    t.sum(x).unwrap()
                }),
            ),
            (
                vec![vec![6], vec![6]],
                Box::new(|t, v| {
                    let c = t.clamp(v[0], -0.5, 0.5).unwrap();
                    let m = t.minimum(c, v[1]).unwrap();
                    let m = t.mul_const(m, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
                    t.sum(m).unwrap()
                }),
            ),
            (
                vec![vec![4], vec![4]],
                Box::new(|t, v| {
                    let mu = t.sigmoid(v[0]).unwrap();
                    let s = t.softplus(v[1]).unwrap();
                    let s = t.add_scalar(s, 0.05).unwrap();
                    let lp = t
                        .interval_log_prob(
                            mu,
                            s,
                            &[f64::NEG_INFINITY, 1.0 / 3.0, 2.0 / 3.0, 0.2],
                            &[1.0 / 3.0, 2.0 / 3.0, f64::INFINITY, 0.3],
                        )
                        .unwrap();
                    t.sum(lp).unwrap()
                }),
            ),
        ];
        for (i, (shapes, build)) in cases.iter().enumerate() {
            for _ in 0..5 {
                let err = fd_check(shapes, &mut rng, build.as_ref());
                assert!(err < 1e-4, "case {i}: relative error {err}");
            }
        }
    }
}
