//! Latent-normal association: polychoric (ordinal × ordinal) and polyserial
//! (continuous × ordinal) correlation, both by two-step maximum likelihood.
//!
//! Thresholds are fixed from the marginal proportions; the correlation is then
//! found by a coarse grid scan followed by golden-section refinement on
//! `[-RHO_BOUND, RHO_BOUND]`.

use serde::{Deserialize, Serialize};

use super::bvn::{bvn_cdf_unchecked, bvn_pdf};
use super::special::{ln_normal_cdf, normal_pdf, normal_quantile};
use crate::data::Label;
use crate::error::{Error, Result};

pub const RHO_BOUND: f64 = 0.999;
const GRID_POINTS: usize = 41;
const BRACKET_TOL: f64 = 1e-10;
const GRADIENT_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssociationKind {
    Polychoric,
    Polyserial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub rho: f64,
    pub kind: AssociationKind,
    pub converged: bool,
    pub loglik: f64,
}

/// r×c table of non-negative counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let r = counts.len();
        let c = counts.first().map_or(0, Vec::len);
        if r < 2 || c < 2 {
            return Err(Error::InvalidInput(format!("contingency table must be at least 2x2, got {r}x{c}")));
        }
        if counts.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidInput("ragged contingency table".into()));
        }
        if counts.iter().flatten().sum::<u64>() == 0 {
            return Err(Error::InvalidInput("contingency table is empty".into()));
        }
        Ok(ContingencyTable { counts })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn n_rows(&self) -> usize {
        self.counts.len()
    }

    pub fn n_cols(&self) -> usize {
        self.counts[0].len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.n_cols()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn transpose(&self) -> ContingencyTable {
        let counts = (0..self.n_cols())
            .map(|j| self.counts.iter().map(|r| r[j]).collect())
            .collect();
        ContingencyTable { counts }
    }

    /// Removes all-zero rows and columns. `None` if fewer than 2 of either remain.
    pub fn without_empty_margins(&self) -> Option<ContingencyTable> {
        let rows = self.row_totals();
        let cols = self.col_totals();
        let counts: Vec<Vec<u64>> = self
            .counts
            .iter()
            .zip(&rows)
            .filter(|(_, &t)| t > 0)
            .map(|(r, _)| r.iter().zip(&cols).filter(|(_, &t)| t > 0).map(|(v, _)| *v).collect())
            .collect();
        ContingencyTable::new(counts).ok()
    }
}

fn thresholds(margins: &[u64]) -> Vec<f64> {
    let total: u64 = margins.iter().sum();
    let mut cum = 0u64;
    let mut out = Vec::with_capacity(margins.len() + 1);
    out.push(f64::NEG_INFINITY);
    for &m in &margins[..margins.len() - 1] {
        cum += m;
        out.push(normal_quantile(cum as f64 / total as f64));
    }
    out.push(f64::INFINITY);
    out
}

struct Polychoric<'a> {
    table: &'a ContingencyTable,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Polychoric<'_> {
    fn grid<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        self.a.iter().map(|&ai| self.b.iter().map(|&bj| f(ai, bj)).collect()).collect()
    }

    fn loglik(&self, rho: f64) -> f64 {
        let cdf = self.grid(|h, k| bvn_cdf_unchecked(h, k, rho));
        let mut ll = 0.0;
        for (i, row) in self.table.counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let p = cdf[i + 1][j + 1] - cdf[i][j + 1] - cdf[i + 1][j] + cdf[i][j];
                ll += n as f64 * p.max(1e-300).ln();
            }
        }
        ll
    }

    fn gradient(&self, rho: f64) -> f64 {
        let cdf = self.grid(|h, k| bvn_cdf_unchecked(h, k, rho));
        let pdf = self.grid(|h, k| bvn_pdf(h, k, rho));
        let mut g = 0.0;
        for (i, row) in self.table.counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let p = cdf[i + 1][j + 1] - cdf[i][j + 1] - cdf[i + 1][j] + cdf[i][j];
                let dp = pdf[i + 1][j + 1] - pdf[i][j + 1] - pdf[i + 1][j] + pdf[i][j];
                g += n as f64 * dp / p.max(1e-300);
            }
        }
        g
    }
}

/// Polychoric correlation of an r×c contingency table.
pub fn polychoric(table: &ContingencyTable) -> Result<AssociationResult> {
    if table.row_totals().contains(&0) || table.col_totals().contains(&0) {
        return Err(Error::Degenerate("contingency table has an all-zero row or column".into()));
    }
    let model = Polychoric {
        table,
        a: thresholds(&table.row_totals()),
        b: thresholds(&table.col_totals()),
    };
    let opt = maximize(|r| model.loglik(r));
    let converged = opt.bracket <= BRACKET_TOL || model.gradient(opt.x).abs() <= GRADIENT_TOL;
    Ok(AssociationResult {
        rho: opt.x,
        kind: AssociationKind::Polychoric,
        converged,
        loglik: opt.fx,
    })
}

/// Polyserial correlation between a continuous sample and a binary outcome.
///
/// The latent variable behind `y` is cut at the threshold implied by the
/// prevalence of `Label::Var`; a positive `rho` means larger `x` goes with `Var`.
pub fn polyserial(x: &[f64], y: &[Label]) -> Result<AssociationResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("{} values for {} labels", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput("polyserial correlation needs at least 3 observations".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("polyserial correlation of a constant variable".into()));
    }
    let n1 = y.iter().filter(|&&l| l == Label::Var).count();
    if n1 == 0 || n1 == y.len() {
        return Err(Error::Degenerate("polyserial correlation needs both labels".into()));
    }
    let tau = normal_quantile(1.0 - n1 as f64 / n);
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();

    let loglik = |rho: f64| -> f64 {
        let s = (1.0 - rho * rho).sqrt();
        z.iter()
            .zip(y)
            .map(|(&zi, &yi)| {
                let u = (rho * zi - tau) / s;
                match yi {
                    Label::Var => ln_normal_cdf(u),
                    Label::NonVar => ln_normal_cdf(-u),
                }
            })
            .sum()
    };
    let gradient = |rho: f64| -> f64 {
        let s = (1.0 - rho * rho).sqrt();
        z.iter()
            .zip(y)
            .map(|(&zi, &yi)| {
                let u = (rho * zi - tau) / s;
                let du = (zi - rho * tau) / (s * s * s);
                let (arg, sign) = match yi {
                    Label::Var => (u, 1.0),
                    Label::NonVar => (-u, -1.0),
                };
                let mills = (normal_pdf(arg).ln() - ln_normal_cdf(arg)).exp();
                sign * mills * du
            })
            .sum()
    };

    let opt = maximize(loglik);
    let converged = opt.bracket <= BRACKET_TOL || gradient(opt.x).abs() <= GRADIENT_TOL;
    Ok(AssociationResult {
        rho: opt.x,
        kind: AssociationKind::Polyserial,
        converged,
        loglik: opt.fx,
    })
}

struct Optimum {
    x: f64,
    fx: f64,
    bracket: f64,
}

/// Maximises a 1-D function on `[-RHO_BOUND, RHO_BOUND]`.
fn maximize<F: Fn(f64) -> f64>(f: F) -> Optimum {
    let step = 2.0 * RHO_BOUND / (GRID_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..GRID_POINTS).map(|i| -RHO_BOUND + step * i as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let best = (0..GRID_POINTS).fold(0, |b, i| if fs[i] > fs[b] { i } else { b });

    let mut lo = xs[best.saturating_sub(1)];
    let mut hi = xs[(best + 1).min(GRID_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iter = 0;
    while hi - lo > BRACKET_TOL && iter < MAX_ITER {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
        iter += 1;
    }
    let (mut x, mut fx) = if fc >= fd { (c, fc) } else { (d, fd) };
    // the bound itself wins when the likelihood keeps rising toward it
    for edge in [-RHO_BOUND, RHO_BOUND] {
        if (x - edge).abs() < step {
            let fe = f(edge);
            if fe >= fx {
                x = edge;
                fx = fe;
            }
        }
    }
    Optimum {
        x,
        fx,
        bracket: hi - lo,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[u64]]) -> ContingencyTable {
        ContingencyTable::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn independence_gives_zero() {
        let r = polychoric(&table(&[&[25, 25], &[25, 25]])).unwrap();
        assert!(r.rho.abs() <= 1e-6, "{}", r.rho);
        assert!(r.converged);
        let r = polychoric(&table(&[&[10, 30], &[5, 15]])).unwrap();
        assert!(r.rho.abs() <= 1e-6, "{}", r.rho);
    }

    #[test]
    fn perfect_concordance_hits_the_bound() {
        let r = polychoric(&table(&[&[50, 0], &[0, 50]])).unwrap();
        assert!(r.rho >= 0.999);
        let r = polychoric(&table(&[&[0, 50], &[50, 0]])).unwrap();
        assert!(r.rho <= -0.999);
    }

    #[test]
    fn zero_margin_is_rejected() {
        assert!(polychoric(&table(&[&[0, 0], &[3, 4]])).is_err());
        assert!(ContingencyTable::new(vec![vec![1, 2]]).is_err());
        assert!(ContingencyTable::new(vec![vec![0, 0], vec![0, 0]]).is_err());
    }

    #[test]
    fn empty_margins_can_be_dropped() {
        let t = table(&[&[3, 0, 2], &[0, 0, 0], &[1, 0, 6]]);
        let s = t.without_empty_margins().unwrap();
        assert_eq!(s.counts(), &[vec![3, 2], vec![1, 6]]);
        assert!(table(&[&[3, 0], &[0, 0]]).without_empty_margins().is_none());
    }

    #[test]
    fn polyserial_errors() {
        assert!(polyserial(&[1.0, 1.0, 1.0], &[Label::Var, Label::NonVar, Label::Var]).is_err());
        assert!(polyserial(&[1.0, 2.0, 3.0], &[Label::Var; 3]).is_err());
        assert!(polyserial(&[1.0, 2.0], &[Label::Var, Label::NonVar]).is_err());
    }

    #[test]
    fn polyserial_sign_follows_mean_difference() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let y = [0, 0, 1, 0, 1, 0, 1, 1].map(Label::from_index);
        assert!(polyserial(&x, &y).unwrap().rho > 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(polyserial(&neg, &y).unwrap().rho < 0.0);
    }
}
