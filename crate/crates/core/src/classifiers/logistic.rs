use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, training_labels, Encoding};
use crate::data::{Dataset, Feature, FeatureVector, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// L2 penalty on the standardized weights; the bias is not penalized.
    pub l2: f64,
    /// Convergence threshold on the gradient's max-norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1.0,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub(super) encoding: Encoding,
    pub means: Vec<f64>,
    /// Fit-time standard deviations; constant columns carry 1 and a zero weight.
    pub sds: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn from_parts(features: &[Feature], means: Vec<f64>, sds: Vec<f64>, weights: Vec<f64>, bias: f64) -> Result<Self> {
        let encoding = Encoding::new(features);
        let d = encoding.dim();
        if means.len() != d || sds.len() != d || weights.len() != d {
            return Err(Error::InvalidInput(format!("logistic parameters must all have length {d}")));
        }
        if sds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput("standard deviations must be > 0".into()));
        }
        Ok(LogisticModel {
            encoding,
            means,
            sds,
            weights,
            bias,
            converged: true,
            iterations: 0,
        })
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    pub fn predict_proba(&self, v: &FeatureVector) -> Result<f64> {
        let x = self.encoding.encode(v)?;
        let z = self.bias
            + x.iter()
                .zip(&self.means)
                .zip(&self.sds)
                .zip(&self.weights)
                .map(|(((x, m), s), w)| w * (x - m) / s)
                .sum::<f64>();
        Ok(sigmoid(z))
    }

    /// Weights followed by the bias, the parameter order of [`LogisticObjective`].
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }
}

/// Penalized negative log-likelihood on the standardized design:
/// `sum_i [log(1 + e^z_i) - y_i z_i] + l2/2 |w|^2` with `z = Xw + b`.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    /// Standardized design with a trailing column of ones for the bias.
    z: DMatrix<f64>,
    y: DVector<f64>,
    l2: f64,
    means: Vec<f64>,
    sds: Vec<f64>,
    /// Columns with zero variance; their weights stay at 0.
    constant: Vec<bool>,
}

impl LogisticObjective {
    pub fn new(train: &Dataset, l2: f64) -> Result<Self> {
        if !(l2 >= 0.0) || !l2.is_finite() {
            return Err(Error::InvalidInput(format!("l2 must be finite and >= 0, got {l2}")));
        }
        let labels = training_labels(train, "logistic regression")?;
        let enc = Encoding::new(train.schema().features());
        let raw: Vec<Vec<f64>> = train.rows().iter().map(|r| enc.encode(r)).collect::<Result<_>>()?;
        let n = raw.len();
        let d = enc.dim();
        let mut means = vec![0.0; d];
        let mut sds = vec![1.0; d];
        let mut constant = vec![false; d];
        for j in 0..d {
            let m = raw.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = raw.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
            means[j] = m;
            if var > 0.0 && var.sqrt() > 1e-12 * m.abs().max(1.0) {
                sds[j] = var.sqrt();
            } else {
                constant[j] = true;
            }
        }
        let z = DMatrix::from_fn(n, d + 1, |i, j| {
            if j == d {
                1.0
            } else if constant[j] {
                0.0
            } else {
                (raw[i][j] - means[j]) / sds[j]
            }
        });
        let y = DVector::from_iterator(n, labels.iter().map(|&l| if l == Label::Var { 1.0 } else { 0.0 }));
        Ok(LogisticObjective {
            z,
            y,
            l2,
            means,
            sds,
            constant,
        })
    }

    pub fn n_params(&self) -> usize {
        self.z.ncols()
    }

    fn margins(&self, theta: &[f64]) -> DVector<f64> {
        &self.z * DVector::from_column_slice(theta)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let w = &theta[..theta.len() - 1];
        0.5 * self.l2 * w.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let m = self.margins(theta);
        let nll: f64 = m
            .iter()
            .zip(self.y.iter())
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        nll + self.penalty(theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.margins(theta);
        let resid = DVector::from_iterator(m.len(), m.iter().zip(self.y.iter()).map(|(&z, &y)| sigmoid(z) - y));
        let mut g = self.z.tr_mul(&resid);
        let d = theta.len() - 1;
        for j in 0..d {
            g[j] += self.l2 * theta[j];
        }
        g.iter().copied().collect()
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let m = self.margins(theta);
        let mut weighted = self.z.clone();
        for (i, &z) in m.iter().enumerate() {
            let p = sigmoid(z);
            let s = p * (1.0 - p);
            weighted.row_mut(i).scale_mut(s);
        }
        let mut h = self.z.tr_mul(&weighted);
        let d = theta.len() - 1;
        for j in 0..d {
            h[(j, j)] += self.l2;
        }
        h
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Damped Newton on the penalized objective over standardized one-hot features.
pub fn fit_logistic(train: &Dataset, cfg: &LogisticConfig) -> Result<LogisticModel> {
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidInput("logistic tol must be > 0 and max_iter >= 1".into()));
    }
    let obj = LogisticObjective::new(train, cfg.l2)?;
    let p = obj.n_params();
    // free parameters: non-constant columns plus the bias
    let free: Vec<usize> = (0..p).filter(|&j| j == p - 1 || !obj.constant[j]).collect();
    let mut theta = vec![0.0; p];
    let mut f = obj.value(&theta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let g = obj.gradient(&theta);
        let gmax = free.iter().map(|&j| g[j].abs()).fold(0.0, f64::max);
        if gmax <= cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let h = obj.hessian(&theta);
        let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&j| -g[j]));
        let step = match hf.clone().cholesky() {
            Some(c) => c.solve(&gf),
            None => {
                let ridge = 1e-8 * hf.diagonal().amax().max(1.0);
                match (hf + DMatrix::identity(free.len(), free.len()) * ridge).cholesky() {
                    Some(c) => c.solve(&gf),
                    None => gf.clone(),
                }
            }
        };
        log::trace!("newton {iterations}: f {f:.15e} |g| {gmax:.3e}");
        let slope: f64 = step.iter().zip(gf.iter()).map(|(s, g)| -s * g).sum();
        // Newton decrement below the resolution of f: no representable progress left
        if -slope <= 4.0 * f64::EPSILON * f.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut trial = theta.clone();
        loop {
            for (k, &j) in free.iter().enumerate() {
                trial[j] = theta[j] + t * step[k];
            }
            let ft = obj.value(&trial);
            if ft <= f + 1e-4 * t * slope || t < 1e-10 {
                // accept; a non-decrease at t < 1e-10 means we are at machine precision
                if ft <= f {
                    theta.clone_from(&trial);
                    f = ft;
                }
                break;
            }
            t *= 0.5;
        }
        if t < 1e-10 {
            let g = obj.gradient(&theta);
            converged = free.iter().map(|&j| g[j].abs()).fold(0.0, f64::max) <= cfg.tol;
            break;
        }
    }
    if !converged {
        log::warn!("logistic regression did not converge in {iterations} iterations");
    }
    let bias = theta.pop().expect("bias present");
    Ok(LogisticModel {
        encoding: Encoding::new(train.schema().features()),
        means: obj.means,
        sds: obj.sds,
        weights: theta,
        bias,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cell, Schema};

    fn line(xs: &[(f64, usize)]) -> Dataset {
        let schema = Schema::new(vec![Feature::continuous("x")], "y").unwrap();
        let rows = xs
            .iter()
            .map(|&(x, y)| FeatureVector::new(vec![Cell::Number(x)], Some(Label::from_index(y))))
            .collect();
        Dataset::new(schema, rows, "t").unwrap()
    }

    #[test]
    fn analytic_probabilities() {
        let s = Schema::new(vec![Feature::continuous("x")], "y").unwrap();
        let zero = LogisticModel::from_parts(s.features(), vec![0.0], vec![1.0], vec![0.0], 0.0).unwrap();
        let v = FeatureVector::new(vec![Cell::Number(12.0)], None);
        assert_eq!(zero.predict_proba(&v).unwrap(), 0.5);
        let one = LogisticModel::from_parts(s.features(), vec![0.0], vec![1.0], vec![1.0], 0.0).unwrap();
        let v = FeatureVector::new(vec![Cell::Number(3f64.ln())], None);
        assert!((one.predict_proba(&v).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn separable_data_stays_finite() {
        let d = line(&[(-2.0, 0), (-1.0, 0), (-0.5, 0), (0.5, 1), (1.0, 1), (2.0, 1)]);
        let m = fit_logistic(&d, &LogisticConfig::default()).unwrap();
        assert!(m.converged);
        assert!(m.weights[0].is_finite() && m.weights[0] > 0.0);
        for r in d.rows() {
            let p = m.predict_proba(r).unwrap();
            assert_eq!(p >= 0.5, r.label == Some(Label::Var));
        }
    }

    #[test]
    fn optimum_has_zero_gradient() {
        let d = line(&[(0.3, 0), (1.1, 1), (-0.4, 0), (2.2, 1), (0.9, 0), (1.7, 0), (0.1, 1)]);
        let m = fit_logistic(&d, &LogisticConfig::default()).unwrap();
        let obj = LogisticObjective::new(&d, 1.0).unwrap();
        let g = obj.gradient(&m.params());
        assert!(g.iter().all(|g| g.abs() <= 1e-8), "{g:?}");
    }

    #[test]
    fn constant_column_gets_zero_weight() {
        let schema = Schema::new(vec![Feature::continuous("x"), Feature::continuous("k")], "y").unwrap();
        let rows = (0..10)
            .map(|i| {
                FeatureVector::new(
                    vec![Cell::Number(i as f64), Cell::Number(0.1)],
                    Some(Label::from_index(usize::from(i > 5))),
                )
            })
            .collect();
        let d = Dataset::new(schema, rows, "t").unwrap();
        let m = fit_logistic(&d, &LogisticConfig { l2: 0.0, ..Default::default() }).unwrap();
        assert_eq!(m.weights[1], 0.0);
        assert_eq!(m.sds[1], 1.0);
    }

    #[test]
    fn single_class_is_an_error() {
        let d = line(&[(0.0, 1), (1.0, 1)]);
        assert!(fit_logistic(&d, &LogisticConfig::default()).is_err());
    }
}
