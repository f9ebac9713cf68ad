//! Bivariate Gaussian predictions over (AS severity, EF), their discretisation
//! into a joint class table, and divergences between such tables.

use serde::{Deserialize, Serialize};

use crate::numerics::{bvn_cdf, std_normal_cdf, NumericsError};

/// Mean and Cholesky-factored covariance over `(y_as, y_ef)`.
///
/// `L = [[l11, 0], [l21, l22]]` with `l11, l22 > 0`, so `Σ = L Lᵀ` is
/// symmetric positive definite by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianJoint {
    pub mu: [f64; 2],
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl GaussianJoint {
    pub fn from_cholesky(mu: [f64; 2], l11: f64, l21: f64, l22: f64) -> Result<Self, NumericsError> {
        if !(l11 > 0.0 && l22 > 0.0 && l21.is_finite() && l11.is_finite() && l22.is_finite()) {
            return Err(NumericsError::Covariance(format!("cholesky ({l11}, {l21}, {l22})")));
        }
        Ok(Self { mu, l11, l21, l22 })
    }

    /// From marginal standard deviations and correlation `|rho| < 1`.
    pub fn from_moments(mu: [f64; 2], sd: [f64; 2], rho: f64) -> Result<Self, NumericsError> {
        if rho.abs() >= 1.0 || rho.is_nan() {
            return Err(NumericsError::Covariance(format!("correlation {rho}")));
        }
        Self::from_cholesky(mu, sd[0], rho * sd[1], sd[1] * (1.0 - rho * rho).sqrt())
    }

    pub fn from_covariance(mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<Self, NumericsError> {
        let (s11, s12, s22) = (sigma[0][0], sigma[0][1], sigma[1][1]);
        if s12 != sigma[1][0] || !(s11 > 0.0) || s11 * s22 - s12 * s12 <= 0.0 {
            return Err(NumericsError::Covariance(format!("{sigma:?}")));
        }
        let l11 = s11.sqrt();
        let l21 = s12 / l11;
        Self::from_cholesky(mu, l11, l21, (s22 - l21 * l21).sqrt())
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let off = self.l11 * self.l21;
        [[self.l11 * self.l11, off], [off, self.l21 * self.l21 + self.l22 * self.l22]]
    }

    pub fn std_devs(&self) -> [f64; 2] {
        let s = self.covariance();
        [s[0][0].sqrt(), s[1][1].sqrt()]
    }

    pub fn correlation(&self) -> f64 {
        let s = self.covariance();
        (s[0][1] / (s[0][0] * s[1][1]).sqrt()).clamp(-1.0, 1.0)
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let s = self.covariance();
        let tr = s[0][0] + s[1][1];
        let det = (self.l11 * self.l22).powi(2);
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        // smaller root via det / larger to avoid cancellation
        let big = 0.5 * tr + disc;
        [det / big, big]
    }
}

/// Bin edges for the AS and EF classes. Outer edges are treated as ±∞ when
/// integrating, so no Gaussian mass falls outside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryGrid {
    pub as_edges: Vec<f64>,
    pub ef_edges: Vec<f64>,
}

impl Default for CategoryGrid {
    fn default() -> Self {
        Self { as_edges: uniform_edges(3), ef_edges: vec![0.0, 0.40, 0.50, 1.0] }
    }
}

pub fn uniform_edges(k: usize) -> Vec<f64> {
    (0..=k).map(|i| i as f64 / k as f64).collect()
}

impl CategoryGrid {
    pub fn new(as_edges: Vec<f64>, ef_edges: Vec<f64>) -> Result<Self, NumericsError> {
        for (name, e) in [("as_edges", &as_edges), ("ef_edges", &ef_edges)] {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(NumericsError::Dimension {
                    op: "CategoryGrid",
                    detail: format!("{name} must be strictly increasing with >= 2 entries"),
                });
            }
        }
        Ok(Self { as_edges, ef_edges })
    }

    pub fn n_as(&self) -> usize {
        self.as_edges.len() - 1
    }

    pub fn n_ef(&self) -> usize {
        self.ef_edges.len() - 1
    }

    pub fn as_class(&self, y: f64) -> usize {
        bin_index(&self.as_edges, y)
    }

    /// Half-open bins, last one closed: `[0,.40)`, `[.40,.50)`, `[.50,1]`.
    pub fn ef_category(&self, y: f64) -> usize {
        bin_index(&self.ef_edges, y)
    }

    /// Integration bounds of AS class `i` (outer bins open to ±∞).
    pub fn as_bounds(&self, i: usize) -> (f64, f64) {
        open_bounds(&self.as_edges, i)
    }

    pub fn ef_bounds(&self, j: usize) -> (f64, f64) {
        open_bounds(&self.ef_edges, j)
    }
}

fn bin_index(edges: &[f64], y: f64) -> usize {
    let k = edges.len() - 1;
    edges[1..k].iter().take_while(|&&e| y >= e).count()
}

fn open_bounds(edges: &[f64], i: usize) -> (f64, f64) {
    let k = edges.len() - 1;
    let lo = if i == 0 { f64::NEG_INFINITY } else { edges[i] };
    let hi = if i + 1 == k { f64::INFINITY } else { edges[i + 1] };
    (lo, hi)
}

/// Probability of each bin under `N(mu, sd²)` with outer bins open.
pub fn bin_probs(edges: &[f64], mu: f64, sd: f64) -> Vec<f64> {
    let k = edges.len() - 1;
    let cdf: Vec<f64> = (0..=k)
        .map(|i| match i {
            0 => 0.0,
            _ if i == k => 1.0,
            _ => std_normal_cdf((edges[i] - mu) / sd),
        })
        .collect();
    cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
}

/// Joint class table, row-major `n_as x n_ef`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPMF {
    pub n_as: usize,
    pub n_ef: usize,
    pub probs: Vec<f64>,
}

impl JointPMF {
    pub fn new(n_as: usize, n_ef: usize, probs: Vec<f64>) -> Result<Self, NumericsError> {
        if probs.len() != n_as * n_ef {
            return Err(NumericsError::Dimension {
                op: "JointPMF",
                detail: format!("{} entries for {n_as}x{n_ef}", probs.len()),
            });
        }
        if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(NumericsError::Dimension {
                op: "JointPMF",
                detail: "entries must be non-negative and sum to 1".into(),
            });
        }
        Ok(Self { n_as, n_ef, probs })
    }

    pub fn uniform(n_as: usize, n_ef: usize) -> Self {
        let n = n_as * n_ef;
        Self { n_as, n_ef, probs: vec![1.0 / n as f64; n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.n_ef + j]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Cell masses of `joint` on `grid`, normalised to 1. Also returns the
/// normalisation residual `|Σ cells − 1|` before renormalising.
pub fn discretize_with_residual(joint: &GaussianJoint, grid: &CategoryGrid) -> (JointPMF, f64) {
    let (ka, ke) = (grid.n_as(), grid.n_ef());
    let [sa, se] = joint.std_devs();
    let rho = joint.correlation();
    let za: Vec<f64> = (0..=ka).map(|i| edge_z(&grid.as_edges, i, joint.mu[0], sa)).collect();
    let ze: Vec<f64> = (0..=ke).map(|j| edge_z(&grid.ef_edges, j, joint.mu[1], se)).collect();
    // CDF on the extended edge lattice
    let mut f = vec![0.0; (ka + 1) * (ke + 1)];
    for i in 1..=ka {
        for j in 1..=ke {
            f[i * (ke + 1) + j] = bvn_cdf(za[i], ze[j], rho);
        }
    }
    let mut probs = Vec::with_capacity(ka * ke);
    for i in 0..ka {
        for j in 0..ke {
            let at = |a: usize, b: usize| f[a * (ke + 1) + b];
            let p = at(i + 1, j + 1) - at(i, j + 1) - at(i + 1, j) + at(i, j);
            probs.push(p.max(0.0));
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    (JointPMF { n_as: ka, n_ef: ke, probs }, (total - 1.0).abs())
}

fn edge_z(edges: &[f64], i: usize, mu: f64, sd: f64) -> f64 {
    let k = edges.len() - 1;
    if i == 0 {
        f64::NEG_INFINITY
    } else if i == k {
        f64::INFINITY
    } else {
        (edges[i] - mu) / sd
    }
}

pub fn discretize(joint: &GaussianJoint, grid: &CategoryGrid) -> JointPMF {
    discretize_with_residual(joint, grid).0
}

/// Jensen–Shannon divergence in nats; lies in `[0, ln 2]`.
pub fn js_divergence(p: &JointPMF, q: &JointPMF) -> Result<f64, NumericsError> {
    if (p.n_as, p.n_ef) != (q.n_as, q.n_ef) {
        return Err(NumericsError::Dimension {
            op: "js_divergence",
            detail: format!("{}x{} vs {}x{}", p.n_as, p.n_ef, q.n_as, q.n_ef),
        });
    }
    Ok(js_slices(&p.probs, &q.probs))
}

pub(crate) fn js_slices(p: &[f64], q: &[f64]) -> f64 {
    // Written symmetrically in (a, b) so js(p, q) == js(q, p) bit for bit.
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        let term = |x: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
        let (ta, tb) = (term(a), term(b));
        acc += if a <= b { ta + tb } else { tb + ta };
    }
    (0.5 * acc).clamp(0.0, std::f64::consts::LN_2)
}

pub fn marginals(p: &JointPMF) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; p.n_as];
    let mut e = vec![0.0; p.n_ef];
    for i in 0..p.n_as {
        for j in 0..p.n_ef {
            let v = p.get(i, j);
            a[i] += v;
            e[j] += v;
        }
    }
    (a, e)
}

/// First index of the maximum; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `(as_class, ef_category)` from the marginal argmaxes.
pub fn predicted_classes(p: &JointPMF) -> (usize, usize) {
    let (a, e) = marginals(p);
    (argmax(&a), argmax(&e))
}
