use serde::{Deserialize, Serialize};

use super::special::student_t_sf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom (generally non-integer).
    pub df: f64,
    pub p_two_sided: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Two-sample t-test without the equal-variance assumption.
pub fn welch_t(x: &[f64], y: &[f64]) -> Result<WelchResult> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "welch t-test needs at least 2 values per sample, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("welch t-test input contains non-finite values".into()));
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let sx = vx / nx;
    let sy = vy / ny;
    let se2 = sx + sy;
    if se2 == 0.0 {
        if mx == my {
            return Ok(WelchResult {
                t: 0.0,
                df: nx + ny - 2.0,
                p_two_sided: 1.0,
            });
        }
        return Err(Error::Degenerate(format!(
            "both samples are constant with different means ({mx} vs {my})"
        )));
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2 / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
    let p = (2.0 * student_t_sf(t.abs(), df)?).min(1.0);
    Ok(WelchResult { t, df, p_two_sided: p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let r = welch_t(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn degenerate_cases() {
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
        let flat = welch_t(&[3.0, 3.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((flat.t, flat.p_two_sided), (0.0, 1.0));
        assert!(matches!(welch_t(&[3.0, 3.0], &[4.0, 4.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn one_constant_sample_is_fine() {
        let r = welch_t(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.t > 0.0 && r.df > 0.0 && r.p_two_sided < 1.0);
        // only y varies: df collapses to ny - 1
        assert!((r.df - 2.0).abs() < 1e-12);
    }

    #[test]
    fn swapping_negates_t() {
        let x = [1.0, 2.5, 3.1, 4.7, 5.0];
        let y = [2.0, 4.0, 6.0, 8.0, 10.0, 11.5];
        let a = welch_t(&x, &y).unwrap();
        let b = welch_t(&y, &x).unwrap();
        assert_eq!(a.t, -b.t);
        assert_eq!(a.p_two_sided, b.p_two_sided);
        assert_eq!(a.df, b.df);
    }
}
