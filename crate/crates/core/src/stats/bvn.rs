//! Standard bivariate normal CDF.
//!
//! Port of Genz's BVND (Drezner–Wesolowsky integration over the correlation
//! parameter with Gauss–Legendre rules, plus a series correction for |ρ| near 1).

#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

use super::special::normal_cdf;
use crate::error::{Error, Result};

const GL6: [(f64, f64); 3] = [
    (0.1713244923791705e+00, -0.9324695142031522e+00),
    (0.3607615730481384e+00, -0.6612093864662647e+00),
    (0.4679139345726904e+00, -0.2386191860831970e+00),
];

const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191e+00),
    (0.1069393259953183e+00, -0.9041172563704750e+00),
    (0.1600783285433464e+00, -0.7699026741943050e+00),
    (0.2031674267230659e+00, -0.5873179542866171e+00),
    (0.2334925365383547e+00, -0.3678314989981802e+00),
    (0.2491470458134029e+00, -0.1252334085114692e+00),
];

const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949e+00),
    (0.4060142980038694e-01, -0.9639719272779138e+00),
    (0.6267204833410906e-01, -0.9122344282513259e+00),
    (0.8327674157670475e-01, -0.8391169718222188e+00),
    (0.1019301198172404e+00, -0.7463319064601508e+00),
    (0.1181945319615184e+00, -0.6360536807265150e+00),
    (0.1316886384491766e+00, -0.5108670019508271e+00),
    (0.1420961093183821e+00, -0.3737060887154196e+00),
    (0.1491729864726037e+00, -0.2277858511416451e+00),
    (0.1527533871307259e+00, -0.7652652113349733e-01),
];

fn rule(abs_r: f64) -> &'static [(f64, f64)] {
    if abs_r < 0.3 {
        &GL6
    } else if abs_r < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// `P(X > h, Y > k)` for finite `h`, `k` and `|r| < 1`.
fn upper_orthant(h: f64, k: f64, r: f64) -> f64 {
    let quad = rule(r.abs());
    let mut hk = h * k;
    let mut bvn = 0.0;

    if r.abs() < 0.925 {
        if r != 0.0 {
            let hs = 0.5 * (h * h + k * k);
            let asr = r.asin();
            for &(w, x) in quad {
                for sign in [-1.0, 1.0] {
                    let sn = (0.5 * asr * (sign * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (4.0 * PI);
        }
        return bvn + normal_cdf(-h) * normal_cdf(-k);
    }

    let mut k = k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    let a2 = (1.0 - r) * (1.0 + r);
    let mut a = a2.sqrt();
    let b2 = (h - k) * (h - k);
    let c = (4.0 - hk) / 8.0;
    let d = (12.0 - hk) / 16.0;
    let e = -0.5 * (b2 / a2 + hk);
    if e > -100.0 {
        bvn = a * e.exp() * (1.0 - c * (b2 - a2) * (1.0 - d * b2 / 5.0) / 3.0 + c * d * a2 * a2 / 5.0);
    }
    if hk > -100.0 {
        let b = b2.sqrt();
        bvn -= (-0.5 * hk).exp()
            * (2.0 * PI).sqrt()
            * normal_cdf(-b / a)
            * b
            * (1.0 - c * b2 * (1.0 - d * b2 / 5.0) / 3.0);
    }
    a *= 0.5;
    for &(w, x) in quad {
        for sign in [-1.0, 1.0] {
            let xs = (a * (sign * x + 1.0)).powi(2);
            let rs = (1.0 - xs).sqrt();
            let e = -0.5 * (b2 / xs + hk);
            if e > -100.0 {
                bvn += a
                    * w
                    * e.exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs - (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
    }
    bvn = -bvn / (2.0 * PI);

    if r > 0.0 {
        bvn + normal_cdf(-h.max(k))
    } else {
        let mut out = -bvn;
        if k > h {
            out += if h < 0.0 {
                normal_cdf(k) - normal_cdf(h)
            } else {
                normal_cdf(-h) - normal_cdf(-k)
            };
        }
        out
    }
}

/// `P(X ≤ h, Y ≤ k)` for a standard bivariate normal with correlation `rho`.
///
/// Accepts infinite limits and the degenerate correlations ±1.
pub(crate) fn bvn_cdf_unchecked(h: f64, k: f64, rho: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return normal_cdf(k);
    }
    if k == f64::INFINITY {
        return normal_cdf(h);
    }
    if rho >= 1.0 {
        return normal_cdf(h.min(k));
    }
    if rho <= -1.0 {
        return (normal_cdf(h) - normal_cdf(-k)).max(0.0);
    }
    upper_orthant(-h, -k, rho).clamp(0.0, 1.0)
}

pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidInput(format!("correlation must satisfy |rho| < 1, got {rho}")));
    }
    if h.is_nan() || k.is_nan() {
        return Err(Error::InvalidInput("NaN integration limit".into()));
    }
    Ok(bvn_cdf_unchecked(h, k, rho))
}

/// Bivariate normal density; equals `∂/∂ρ` of [`bvn_cdf`]. Zero at infinite limits.
pub fn bvn_pdf(h: f64, k: f64, rho: f64) -> f64 {
    if !h.is_finite() || !k.is_finite() {
        return 0.0;
    }
    let s = 1.0 - rho * rho;
    (-(h * h - 2.0 * rho * h * k + k * k) / (2.0 * s)).exp() / (2.0 * PI * s.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_at_the_origin() {
        assert!((bvn_cdf(0.0, 0.0, 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((bvn_cdf(0.0, 0.0, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        for rho in [-0.99, -0.95, -0.93, -0.6, -0.2, 0.1, 0.4, 0.8, 0.93, 0.999] {
            let exact = 0.25 + f64::asin(rho) / (2.0 * PI);
            let got = bvn_cdf(0.0, 0.0, rho).unwrap();
            assert!((got - exact).abs() < 1e-13, "rho={rho}: {got} vs {exact}");
        }
    }

    #[test]
    fn independence_factorises() {
        for (h, k) in [(1.0, -0.5), (-2.0, 0.3), (3.0, 3.0)] {
            let got = bvn_cdf(h, k, 0.0).unwrap();
            assert!((got - normal_cdf(h) * normal_cdf(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_unit_correlation() {
        assert!(bvn_cdf(0.0, 0.0, 1.0).is_err());
        assert!(bvn_cdf(0.0, 0.0, -1.0).is_err());
        assert!(bvn_cdf(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn infinite_limits() {
        assert_eq!(bvn_cdf(f64::NEG_INFINITY, 1.0, 0.3).unwrap(), 0.0);
        assert!((bvn_cdf(f64::INFINITY, 1.0, 0.3).unwrap() - normal_cdf(1.0)).abs() < 1e-16);
    }
}
