use std::f64::consts::PI;

use super::HeadVars;
use crate::error::{Error, Result};
use crate::numerics::{log_interval_prob, Tape, Var};
use crate::probmodel::{bin_probs, CategoryGrid, GaussianJoint};

/// EF variances below this are clamped before taking logs.
pub const EF_VAR_FLOOR: f64 = 1e-12;

/// Probability of each AS class under the AS marginal (outer bins open).
pub fn as_class_probs(joint: &GaussianJoint, grid: &CategoryGrid) -> Vec<f64> {
    bin_probs(&grid.as_edges, joint.mu[0], joint.std_devs()[0])
}

/// Negative log mass of the true AS bin under the AS marginal.
pub fn loss_as(joint: &GaussianJoint, y_as_class: usize, grid: &CategoryGrid) -> Result<f64> {
    if y_as_class >= grid.n_as() {
        return Err(Error::Label(format!("AS class {y_as_class} outside 0..{}", grid.n_as())));
    }
    let (lo, hi) = grid.as_bounds(y_as_class);
    let (m, s) = (joint.mu[0], joint.std_devs()[0]);
    Ok(-log_interval_prob((lo - m) / s, (hi - m) / s))
}

/// Gaussian NLL of the EF value under the EF marginal. Returns the loss and
/// whether the variance had to be clamped.
pub fn loss_ef(joint: &GaussianJoint, y_ef: f64) -> Result<(f64, bool)> {
    if !(0.0..=1.0).contains(&y_ef) {
        return Err(Error::Label(format!("EF value {y_ef} outside [0, 1]")));
    }
    let var = joint.covariance()[1][1];
    let clamped = var < EF_VAR_FLOOR;
    let var = var.max(EF_VAR_FLOOR);
    let r = y_ef - joint.mu[1];
    Ok((0.5 * ((2.0 * PI * var).ln() + r * r / var), clamped))
}

pub fn loss_total(
    joint: &GaussianJoint,
    y_as_class: usize,
    y_ef: f64,
    lambda_as: f64,
    lambda_ef: f64,
    grid: &CategoryGrid,
) -> Result<f64> {
    if !(lambda_as >= 0.0 && lambda_ef >= 0.0) {
        return Err(Error::Config("loss weights must be non-negative".into()));
    }
    Ok(lambda_as * loss_as(joint, y_as_class, grid)? + lambda_ef * loss_ef(joint, y_ef)?.0)
}

/// Batch-mean weighted loss on the tape.
pub(crate) fn loss_total_tape(
    tape: &mut Tape,
    hv: &HeadVars,
    classes: &[usize],
    y_ef: &[f64],
    lambda_as: f64,
    lambda_ef: f64,
    grid: &CategoryGrid,
) -> Result<Var> {
    let b = classes.len();
    let mu_as = tape.slice_cols(hv.mu, 0, 1)?;
    let mu_as = tape.reshape(mu_as, vec![b])?;
    let mu_ef = tape.slice_cols(hv.mu, 1, 2)?;
    let mu_ef = tape.reshape(mu_ef, vec![b])?;

    let (lo, hi): (Vec<f64>, Vec<f64>) = classes.iter().map(|&c| grid.as_bounds(c)).unzip();
    let lp = tape.interval_log_prob(mu_as, hv.sd_as, &lo, &hi)?;
    let nll_as = tape.mean(lp)?;
    let nll_as = tape.scale(nll_as, -lambda_as)?;

    // log sd + r^2 / (2 sd^2) + log(2 pi) / 2; sd >= sigma_min keeps the
    // variance far above the clamp floor.
    let y = tape.constant(vec![b], y_ef.to_vec())?;
    let r = tape.sub(y, mu_ef)?;
    let r2 = tape.square(r)?;
    let log_sd = tape.log(hv.sd_ef)?;
    let m2 = tape.scale(log_sd, -2.0)?;
    let inv_var = tape.exp(m2)?;
    let q = tape.mul(r2, inv_var)?;
    let q = tape.scale(q, 0.5)?;
    let per = tape.add(q, log_sd)?;
    let per = tape.add_scalar(per, 0.5 * (2.0 * PI).ln())?;
    let nll_ef = tape.mean(per)?;
    let nll_ef = tape.scale(nll_ef, lambda_ef)?;
    Ok(tape.add(nll_as, nll_ef)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::std_normal_cdf;

    fn joint(mu: [f64; 2], sd: [f64; 2]) -> GaussianJoint {
        GaussianJoint::from_moments(mu, sd, 0.0).unwrap()
    }

    #[test]
    fn as_loss_examples() {
        let g = CategoryGrid::default();
        let sharp = joint([0.5, 0.5], [1e-6, 0.1]);
        assert!(loss_as(&sharp, 1, &g).unwrap() < 1e-12);

        let j = joint([0.5, 0.5], [0.1, 0.1]);
        let p1 = std_normal_cdf((2.0 / 3.0 - 0.5) / 0.1) - std_normal_cdf((1.0 / 3.0 - 0.5) / 0.1);
        let l = loss_as(&j, 1, &g).unwrap();
        assert!((l + p1.ln()).abs() < 1e-12);
        assert!((l - 0.1005).abs() < 1e-4);
        assert!(matches!(loss_as(&j, 3, &g), Err(Error::Label(_))));

        let p = as_class_probs(&j, &g);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_class_probs_give_ln3() {
        // Edges chosen so a standard normal puts 1/3 in each bin.
        let q = 0.430_727_299_295_457_6; // Phi^-1(2/3)
        let g = CategoryGrid::new(vec![-10.0, -q, q, 10.0], vec![0.0, 0.5, 1.0]).unwrap();
        let j = joint([0.0, 0.5], [1.0, 0.1]);
        for c in 0..3 {
            assert!((loss_as(&j, c, &g).unwrap() - 3f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn ef_loss_examples() {
        let unit = joint([0.5, 0.4], [0.1, 1.0]);
        let (l, clamped) = loss_ef(&unit, 0.4).unwrap();
        assert!((l - 0.5 * (2.0 * PI).ln()).abs() < 1e-12 && !clamped);

        let j = joint([0.5, 0.4], [0.1, 0.1]);
        let (l, _) = loss_ef(&j, 0.5).unwrap();
        assert!((l - (0.5 * (2.0 * PI * 0.01).ln() + 0.5)).abs() < 1e-12);
        assert!((l + 0.8836).abs() < 1e-4);
        assert!(loss_ef(&j, 1.5).is_err());

        let tiny = joint([0.5, 0.4], [0.1, 1e-7]);
        assert!(loss_ef(&tiny, 0.4).unwrap().1);
    }

    #[test]
    fn total_weighting() {
        let g = CategoryGrid::default();
        let j = joint([0.4, 0.3], [0.2, 0.1]);
        let a = loss_as(&j, 1, &g).unwrap();
        let e = loss_ef(&j, 0.35).unwrap().0;
        assert_eq!(loss_total(&j, 1, 0.35, 1.0, 0.0, &g).unwrap(), a);
        assert_eq!(loss_total(&j, 1, 0.35, 0.0, 1.0, &g).unwrap(), e);
        assert!((loss_total(&j, 1, 0.35, 1.0, 1.0, &g).unwrap() - (a + e)).abs() < 1e-15);
    }
}
