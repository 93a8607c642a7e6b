//! Linear-model fits shared by the estimators.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::math::{critical_value, sqrt};

/// Estimator tags used in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    FsNaive,
    Sl,
    Ksg,
    Hlf,
    Hl2,
    Hl1,
    Sw,
    Naive,
    ChR,
    ChL,
    ChB,
    Gt,
    Slw,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::FsNaive,
        Method::Sl,
        Method::Ksg,
        Method::Hlf,
        Method::Hl2,
        Method::Hl1,
        Method::Sw,
        Method::Naive,
        Method::ChR,
        Method::ChL,
        Method::ChB,
        Method::Gt,
        Method::Slw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FsNaive => "FS-naive",
            Method::Sl => "SL",
            Method::Ksg => "KSG",
            Method::Hlf => "HLF",
            Method::Hl2 => "HL2",
            Method::Hl1 => "HL1",
            Method::Sw => "SW",
            Method::Naive => "Naive",
            Method::ChR => "ChR",
            Method::ChL => "ChL",
            Method::ChB => "ChB",
            Method::Gt => "GT",
            Method::Slw => "SLW",
        }
    }

    /// Scenario (1 = two files to link, 2 = pre-linked file) a method runs in.
    pub fn scenarios(self) -> &'static [u8] {
        match self {
            Method::Naive => &[1, 2],
            Method::ChR | Method::ChL | Method::ChB | Method::Gt | Method::Slw => &[2],
            _ => &[1],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(alloc::format!("unknown method `{s}`")))
    }
}

/// Coefficients with a covariance estimate and 95% intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub method: Method,
    pub beta: Vec<f64>,
    pub cov: Matrix,
    /// Degrees of freedom of the reference distribution; `None` means normal.
    pub df: Option<f64>,
    pub ci: Vec<(f64, f64)>,
    pub diagnostics: Vec<String>,
}

impl LinearFit {
    pub fn new(method: Method, beta: Vec<f64>, mut cov: Matrix, df: Option<f64>) -> Result<Self> {
        if cov.rows() != beta.len() || cov.cols() != beta.len() {
            return Err(invalid("covariance does not match the coefficients"));
        }
        cov.symmetrize();
        for k in 0..beta.len() {
            if cov[(k, k)] < 0.0 {
                // round-off on exact fits
                if cov[(k, k)] > -1e-12 * (1.0 + beta[k].abs()) {
                    cov[(k, k)] = 0.0;
                } else {
                    return Err(invalid(alloc::format!("negative variance {} for coefficient {k}", cov[(k, k)])));
                }
            }
        }
        let z = critical_value(0.95, df);
        let ci = (0..beta.len())
            .map(|k| {
                let h = z * sqrt(cov[(k, k)]);
                (beta[k] - h, beta[k] + h)
            })
            .collect();
        Ok(Self { method, beta, cov, df, ci, diagnostics: Vec::new() })
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.cov[(k, k)]
    }

    pub fn se(&self, k: usize) -> f64 {
        sqrt(self.variance(k))
    }

    pub fn covers(&self, k: usize, truth: f64) -> bool {
        let (lo, hi) = self.ci[k];
        lo <= truth && truth <= hi
    }

    pub fn with_diagnostic(mut self, d: impl Into<String>) -> Self {
        self.diagnostics.push(d.into());
        self
    }
}

/// Single-column design without intercept.
pub fn design(x: &[f64]) -> Matrix {
    Matrix::column(x)
}

/// Two-column design `[1, x]`.
pub fn design_with_intercept(x: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(x.len(), 2);
    for (i, &xi) in x.iter().enumerate() {
        m[(i, 0)] = 1.0;
        m[(i, 1)] = xi;
    }
    m
}

/// Least-squares coefficients and residual sum of squares.
pub fn least_squares(y: &[f64], x: &Matrix) -> Result<(Vec<f64>, f64)> {
    if y.len() != x.rows() {
        return Err(invalid("outcome and design lengths differ"));
    }
    let beta = x.gram().solve(&x.tr_mul_vec(y))?;
    let fitted = x.mul_vec(&beta);
    let rss = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((beta, rss))
}

/// Ordinary least squares with the classical covariance `s^2 (X'X)^-1` and
/// t intervals on `n - p` degrees of freedom.
pub fn naive_ols(y: &[f64], x: &Matrix) -> Result<LinearFit> {
    ols_tagged(y, x, Method::Naive)
}

pub fn ols_tagged(y: &[f64], x: &Matrix, method: Method) -> Result<LinearFit> {
    let (n, p) = (x.rows(), x.cols());
    if n < 3 || n <= p {
        return Err(invalid(alloc::format!("{n} observations are too few for {p} coefficients")));
    }
    let (beta, rss) = least_squares(y, x)?;
    let s2 = rss / (n - p) as f64;
    let cov = x.gram().inverse()?.scale(s2);
    LinearFit::new(method, beta, cov, Some((n - p) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_has_zero_variance() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let fit = naive_ols(&x, &design(&x)).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-14);
        assert!(fit.variance(0).abs() < 1e-28);
        assert!(fit.covers(0, 1.0));
    }

    #[test]
    fn textbook_simple_regression() {
        // y = 1 + 2x with residuals (+0.1, -0.1, -0.1, +0.1)
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.1, 2.9, 4.9, 7.1];
        let fit = naive_ols(&y, &design_with_intercept(&x)).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-12);
        assert!((fit.beta[1] - 2.0).abs() < 1e-12);
        // s^2 = 0.04 / 2; var(slope) = s^2 / Sxx with Sxx = 5
        assert!((fit.variance(1) - 0.02 / 5.0).abs() < 1e-14);
        let (lo, hi) = fit.ci[1];
        assert!((hi - lo - 2.0 * 4.302652729911275 * (0.004f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("XYZ".parse::<Method>().is_err());
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(naive_ols(&[1.0, 2.0], &design(&[1.0, 2.0])).is_err());
        assert!(naive_ols(&[1.0, 2.0, 3.0], &design(&[0.0, 0.0, 0.0])).is_err());
    }
}
