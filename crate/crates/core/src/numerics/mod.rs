//! Dense f64 tensors, a reverse-mode autodiff tape and Gaussian integration.

mod gauss;
mod ops;
mod optim;
mod tape;
mod tensor;

pub use gauss::{bvn_cdf, bvn_rect_prob, std_normal_cdf, std_normal_pdf, std_normal_sf};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::{ParamStore, Tensor};

pub(crate) use ops::log_interval_prob;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("masked softmax: row {row} has no unmasked position")]
    DegenerateRow { row: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("covariance is not positive definite: {0}")]
    Covariance(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub(crate) fn dim_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(NumericsError::Dimension { op, detail: detail.into() })
}

/// Row-major `c = a * b` where `a` is `m x k` and `b` is `k x n`.
///
/// Transposed operands are expressed through strides, so `a_t`/`b_t` read
/// the stored matrix as its transpose without copying.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    // stored a is (m x k) or, when transposed, (k x m)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
