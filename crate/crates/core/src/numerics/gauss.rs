//! Univariate and bivariate normal probabilities.
#![allow(clippy::excessive_precision)]

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{NumericsError, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF, `0.5 * erfc(-x / sqrt 2)`. Handles `+-inf`.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub(crate) fn log_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

// Gauss-Legendre half-rules (weight, abscissa) for 6, 12 and 20 points.
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];
const GL12: [(f64, f64); 6] = [
    (0.04717533638651177, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];
const GL20: [(f64, f64); 10] = [
    (0.01761400713915212, -0.9931285991850949),
    (0.04060142980038694, -0.9639719272779138),
    (0.06267204833410906, -0.9122344282513259),
    (0.08327674157670475, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.07652652113349733),
];

/// `P(X > h, Y > k)` for standard bivariate normal with correlation `r`
/// (Drezner-Wesolowsky with Genz's refinements for |r| near 1).
fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { std_normal_sf(k) };
    }
    if k == f64::NEG_INFINITY {
        return std_normal_sf(h);
    }
    let quad: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for &(w, x) in quad {
            for sign in [-1.0, 1.0] {
                let sn = (0.5 * asr * (sign * x + 1.0)).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (4.0 * PI) + std_normal_sf(h) * std_normal_sf(k);
    } else {
        let mut k = k;
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -0.5 * (bs / as_ + hk);
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = (2.0 * PI).sqrt() * std_normal_cdf(-b / a);
                bvn -= (-0.5 * hk).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a *= 0.5;
            for &(w, x) in quad {
                for sign in [-1.0, 1.0] {
                    let xs = (a * (sign * x + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr = -0.5 * (bs / xs + hk);
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + d * xs);
                        let ep = (-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs;
                        bvn += a * w * asr.exp() * (ep - sp);
                    }
                }
            }
            bvn = -bvn / (2.0 * PI);
        }
        if r > 0.0 {
            bvn += std_normal_sf(h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 { std_normal_cdf(k) - std_normal_cdf(h) } else { std_normal_sf(h) - std_normal_sf(k) };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Standard bivariate normal CDF `P(X <= x, Y <= y)` with correlation `rho`.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return std_normal_cdf(y);
    }
    if y == f64::INFINITY {
        return std_normal_cdf(x);
    }
    bvn_upper(-x, -y, rho)
}

/// Mass of `N(mu, sigma)` on the rectangle `[lo.0, hi.0] x [lo.1, hi.1]`.
/// Bounds may be infinite.
pub fn bvn_rect_prob(lo: (f64, f64), hi: (f64, f64), mu: (f64, f64), sigma: [[f64; 2]; 2]) -> Result<f64> {
    let (s11, s12, s21, s22) = (sigma[0][0], sigma[0][1], sigma[1][0], sigma[1][1]);
    if !(s11 > 0.0 && s22 > 0.0) || s12 != s21 || s11 * s22 - s12 * s12 <= 0.0 {
        return Err(NumericsError::Covariance(format!("{sigma:?}")));
    }
    if lo.0.is_nan() || lo.1.is_nan() || hi.0.is_nan() || hi.1.is_nan() || lo.0 > hi.0 || lo.1 > hi.1 {
        return Err(NumericsError::Dimension {
            op: "bvn_rect_prob",
            detail: format!("invalid rectangle {lo:?}..{hi:?}"),
        });
    }
    let (sd1, sd2) = (s11.sqrt(), s22.sqrt());
    let rho = (s12 / (sd1 * sd2)).clamp(-1.0, 1.0);
    let z = |v: f64, m: f64, s: f64| (v - m) / s;
    let (a1, b1) = (z(lo.0, mu.0, sd1), z(hi.0, mu.0, sd1));
    let (a2, b2) = (z(lo.1, mu.1, sd2), z(hi.1, mu.1, sd2));
    let p = bvn_cdf(b1, b2, rho) - bvn_cdf(a1, b2, rho) - bvn_cdf(b1, a2, rho) + bvn_cdf(a1, a2, rho);
    Ok(p.clamp(0.0, 1.0))
}
