//! Two-class mixture models for a single pre-linked file: a per-block
//! data-augmentation sampler and a global EM fit with sandwich covariance.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::math::{exp, ln, normal_ln_pdf, powi, sqrt};
use crate::regression::{least_squares, LinearFit, Method};
use crate::rng::{derive_seed, seeded, SimRng};

/// Linked rows `(y, x, block)` with the correct-link indicator when known.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedFile {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// Zero-based block index of each row.
    pub block: Vec<usize>,
    pub truth: Option<Vec<bool>>,
}

impl LinkedFile {
    pub fn new(y: Vec<f64>, x: Vec<f64>, block: Vec<usize>, truth: Option<Vec<bool>>) -> Result<Self> {
        if y.len() != x.len() || y.len() != block.len() || truth.as_ref().is_some_and(|t| t.len() != y.len()) {
            return Err(invalid("linked file columns differ in length"));
        }
        let n_blocks = block.iter().max().map_or(0, |m| m + 1);
        for b in 0..n_blocks {
            if !block.contains(&b) {
                return Err(invalid(alloc::format!("block ids must cover 0..{n_blocks}; {b} is absent")));
            }
        }
        Ok(Self { y, x, block, truth })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_blocks(&self) -> usize {
        self.block.iter().max().map_or(0, |m| m + 1)
    }

    pub fn block_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_blocks()];
        for (r, &b) in self.block.iter().enumerate() {
            rows[b].push(r);
        }
        rows
    }
}

/// Regression `y = b0 + b1 x + N(0, sigma^2)` for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassParams {
    pub b0: f64,
    pub b1: f64,
    pub sigma2: f64,
}

impl ClassParams {
    fn ln_pdf(&self, y: f64, x: f64) -> f64 {
        normal_ln_pdf(y, self.b0 + self.b1 * x, self.sigma2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub link: ClassParams,
    pub nonlink: ClassParams,
    pub lambda: f64,
    pub class_posteriors: Vec<f64>,
}

/// Posterior responsibility of the link class.
fn responsibility(link: &ClassParams, nonlink: &ClassParams, lambda: f64, y: f64, x: f64) -> f64 {
    let a = ln(lambda) + link.ln_pdf(y, x);
    let b = ln(1.0 - lambda) + nonlink.ln_pdf(y, x);
    1.0 / (1.0 + exp(b - a))
}

// ---------------------------------------------------------------------------
// data augmentation

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtPriors {
    /// Prior variance of every regression coefficient (mean zero).
    pub coef_var: f64,
    pub ig_shape: f64,
    pub ig_scale: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
}

impl Default for GtPriors {
    fn default() -> Self {
        Self { coef_var: 100.0, ig_shape: 0.01, ig_scale: 0.01, lambda_a: 1.0, lambda_b: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub priors: GtPriors,
    /// Keep the link label on the class whose slope is larger in magnitude,
    /// measured in units of its sampling standard error.
    pub identify: bool,
    /// Hold both class regressions fixed, sampling only `C` and `lambda`.
    pub fixed_regression: Option<(ClassParams, ClassParams)>,
}

impl Default for GtConfig {
    fn default() -> Self {
        Self { n_iter: 2000, burn_in: 1000, seed: 0, priors: GtPriors::default(), identify: true, fixed_regression: None }
    }
}

/// Retained draws of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct GtSamples {
    /// Per retained iteration, the link indicator of every row.
    pub classes: Vec<Vec<bool>>,
    /// Per retained iteration and block: link class, non-link class, lambda.
    pub params: Vec<Vec<(ClassParams, ClassParams, f64)>>,
    /// Sweeps in which a class had no rows and kept its parameters.
    pub frozen: usize,
    pub label_swaps: usize,
    /// Retained draws whose link-class slope sign differs from the first retained draw.
    pub slope_sign_changes: usize,
}

impl GtSamples {
    /// Frequency with which each row sits in the link class.
    pub fn class_frequencies(&self) -> Vec<f64> {
        let n = self.classes.first().map_or(0, Vec::len);
        let mut f = vec![0.0; n];
        for c in &self.classes {
            for (fi, &ci) in f.iter_mut().zip(c) {
                if ci {
                    *fi += 1.0;
                }
            }
        }
        let m = self.classes.len().max(1) as f64;
        f.iter_mut().for_each(|v| *v /= m);
        f
    }

    /// Per retained draw, the no-intercept least-squares slope of `y` on `x`
    /// over the rows currently in the link class, and its classical variance.
    pub fn completed_estimates(&self, file: &LinkedFile) -> Vec<(f64, f64)> {
        self.classes
            .iter()
            .filter_map(|c| {
                let (mut sxx, mut sxy, mut n) = (0.0, 0.0, 0usize);
                for (r, &ci) in c.iter().enumerate() {
                    if ci {
                        sxx += file.x[r] * file.x[r];
                        sxy += file.x[r] * file.y[r];
                        n += 1;
                    }
                }
                if n < 3 || sxx <= 0.0 {
                    return None;
                }
                let b = sxy / sxx;
                let rss: f64 = c
                    .iter()
                    .enumerate()
                    .filter(|(_, &ci)| ci)
                    .map(|(r, _)| powi(file.y[r] - b * file.x[r], 2))
                    .sum();
                Some((b, rss / (n - 1) as f64 / sxx))
            })
            .collect()
    }
}

fn draw_class(rng: &mut SimRng, y: &[f64], x: &[f64], cur: &ClassParams, pr: &GtPriors) -> ClassParams {
    // beta | sigma^2 then sigma^2 | beta
    let mut prec = Matrix::zeros(2, 2);
    let mut rhs = [0.0; 2];
    for (&yi, &xi) in y.iter().zip(x) {
        prec[(0, 0)] += 1.0;
        prec[(0, 1)] += xi;
        prec[(1, 1)] += xi * xi;
        rhs[0] += yi;
        rhs[1] += xi * yi;
    }
    prec[(1, 0)] = prec[(0, 1)];
    let mut post = prec.scale(1.0 / cur.sigma2);
    post[(0, 0)] += 1.0 / pr.coef_var;
    post[(1, 1)] += 1.0 / pr.coef_var;
    let (Ok(cov), true) = (post.inverse(), true) else {
        return *cur;
    };
    let mean = cov.mul_vec(&[rhs[0] / cur.sigma2, rhs[1] / cur.sigma2]);
    let Ok(l) = cov.cholesky() else {
        return *cur;
    };
    let (e0, e1): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
    let b0 = mean[0] + l[(0, 0)] * e0;
    let b1 = mean[1] + l[(1, 0)] * e0 + l[(1, 1)] * e1;
    let rss: f64 = y.iter().zip(x).map(|(&yi, &xi)| powi(yi - b0 - b1 * xi, 2)).sum();
    let shape = pr.ig_shape + 0.5 * y.len() as f64;
    let rate = pr.ig_scale + 0.5 * rss;
    let g: f64 = Gamma::new(shape, 1.0 / rate).map(|d| d.sample(rng)).unwrap_or(1.0 / cur.sigma2);
    ClassParams { b0, b1, sigma2: (1.0 / g).max(1e-12) }
}

/// `|b1| * sqrt(Sxx / sigma^2)` over the rows currently in the class.
fn slope_score(p: &ClassParams, x: &[f64], c: &[bool], class: bool) -> f64 {
    let xs: Vec<f64> = x.iter().zip(c).filter(|(_, &ci)| ci == class).map(|(&xi, _)| xi).collect();
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|v| (v - mx) * (v - mx)).sum();
    p.b1.abs() * sqrt(sxx / p.sigma2)
}

struct BlockChain {
    link: ClassParams,
    nonlink: ClassParams,
    lambda: f64,
    c: Vec<bool>,
}

fn init_block(y: &[f64], x: &[f64]) -> BlockChain {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let vy = (y.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n).max(1e-6);
    let link = least_squares(y, &crate::regression::design_with_intercept(x))
        .map(|(b, rss)| ClassParams { b0: b[0], b1: b[1], sigma2: (rss / n).max(1e-6) })
        .unwrap_or(ClassParams { b0: my, b1: 0.0, sigma2: vy });
    BlockChain { link, nonlink: ClassParams { b0: my, b1: 0.0, sigma2: vy }, lambda: 0.8, c: vec![true; y.len()] }
}

/// Per-block data augmentation for the two-class regression mixture.
pub fn gt_da(file: &LinkedFile, cfg: &GtConfig) -> Result<GtSamples> {
    if cfg.n_iter <= cfg.burn_in {
        return Err(invalid("iteration budget yields no samples"));
    }
    let blocks = file.block_rows();
    if let Some(b) = blocks.iter().position(|r| r.len() < 2) {
        return Err(invalid(alloc::format!("block {b} has too few rows for the mixture")));
    }
    let keep = cfg.n_iter - cfg.burn_in;
    let mut classes = vec![vec![false; file.len()]; keep];
    let mut params = vec![Vec::with_capacity(blocks.len()); keep];
    let (mut frozen, mut label_swaps) = (0, 0);
    for (b, rows) in blocks.iter().enumerate() {
        let mut rng = seeded(derive_seed(cfg.seed, &[b as u64]));
        let y: Vec<f64> = rows.iter().map(|&r| file.y[r]).collect();
        let x: Vec<f64> = rows.iter().map(|&r| file.x[r]).collect();
        let mut st = init_block(&y, &x);
        if let Some((l, u)) = cfg.fixed_regression {
            st.link = l;
            st.nonlink = u;
        }
        for iter in 0..cfg.n_iter {
            for (i, c) in st.c.iter_mut().enumerate() {
                let p = responsibility(&st.link, &st.nonlink, st.lambda, y[i], x[i]);
                *c = rng.random::<f64>() < p;
            }
            let n1 = st.c.iter().filter(|&&c| c).count();
            let n0 = st.c.len() - n1;
            if cfg.fixed_regression.is_none() {
                let split = |want: bool| -> (Vec<f64>, Vec<f64>) {
                    st.c.iter().enumerate().filter(|(_, &c)| c == want).map(|(i, _)| (y[i], x[i])).unzip()
                };
                let (y1, x1) = split(true);
                let (y0, x0) = split(false);
                if n1 > 0 {
                    st.link = draw_class(&mut rng, &y1, &x1, &st.link, &cfg.priors);
                } else {
                    frozen += 1;
                }
                if n0 > 0 {
                    st.nonlink = draw_class(&mut rng, &y0, &x0, &st.nonlink, &cfg.priors);
                } else {
                    frozen += 1;
                }
            }
            let beta = Beta::new(cfg.priors.lambda_a + n1 as f64, cfg.priors.lambda_b + n0 as f64)
                .map_err(|_| invalid("lambda prior must be positive"))?;
            st.lambda = beta.sample(&mut rng).clamp(1e-12, 1.0 - 1e-12);
            if cfg.identify && slope_score(&st.nonlink, &x, &st.c, false) > slope_score(&st.link, &x, &st.c, true) {
                core::mem::swap(&mut st.link, &mut st.nonlink);
                st.lambda = 1.0 - st.lambda;
                st.c.iter_mut().for_each(|c| *c = !*c);
                label_swaps += 1;
            }
            if iter >= cfg.burn_in {
                let k = iter - cfg.burn_in;
                for (i, &r) in rows.iter().enumerate() {
                    classes[k][r] = st.c[i];
                }
                params[k].push((st.link, st.nonlink, st.lambda));
            }
        }
    }
    let first_sign: Vec<bool> = params.first().map(|p| p.iter().map(|(l, _, _)| l.b1 >= 0.0).collect()).unwrap_or_default();
    let slope_sign_changes = params
        .iter()
        .filter(|p| p.iter().zip(&first_sign).any(|((l, _, _), &s)| (l.b1 >= 0.0) != s))
        .count();
    Ok(GtSamples { classes, params, frozen, label_swaps, slope_sign_changes })
}

/// Exact posterior of the link indicators when both class regressions are
/// fixed and `lambda ~ Beta(a, b)` is integrated out. Rows: at most 16.
pub fn exact_class_posterior(
    y: &[f64],
    x: &[f64],
    link: &ClassParams,
    nonlink: &ClassParams,
    a: f64,
    b: f64,
) -> Result<Vec<(Vec<bool>, f64)>> {
    let n = y.len();
    if n > 16 || x.len() != n {
        return Err(invalid("exact class posterior needs at most 16 rows"));
    }
    let mut out = Vec::with_capacity(1 << n);
    for mask in 0u32..(1 << n) {
        let c: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let n1 = c.iter().filter(|&&v| v).count() as f64;
        let mut lw = crate::math::ln_beta(a + n1, b + n as f64 - n1);
        for i in 0..n {
            lw += if c[i] { link.ln_pdf(y[i], x[i]) } else { nonlink.ln_pdf(y[i], x[i]) };
        }
        out.push((c, lw));
    }
    let logs: Vec<f64> = out.iter().map(|(_, w)| *w).collect();
    let norm = crate::math::log_sum_exp(&logs);
    Ok(out.into_iter().map(|(c, w)| (c, exp(w - norm))).collect())
}

// ---------------------------------------------------------------------------
// EM with sandwich covariance

pub const LAMBDA_MIN: f64 = 1e-4;
pub const LAMBDA_MAX: f64 = 1.0 - 1e-4;

/// Link class `y ~ N(b0 + b1 x, s2)`, non-link class `y ~ N(mu, s2u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlwParams {
    pub b0: f64,
    pub b1: f64,
    pub s2: f64,
    pub mu: f64,
    pub s2u: f64,
    pub lambda: f64,
}

impl SlwParams {
    fn as_array(&self) -> [f64; 6] {
        [self.b0, self.b1, self.s2, self.mu, self.s2u, self.lambda]
    }

    fn from_array(a: &[f64]) -> Self {
        Self { b0: a[0], b1: a[1], s2: a[2], mu: a[3], s2u: a[4], lambda: a[5] }
    }

    fn classes(&self) -> (ClassParams, ClassParams) {
        (
            ClassParams { b0: self.b0, b1: self.b1, sigma2: self.s2 },
            ClassParams { b0: self.mu, b1: 0.0, sigma2: self.s2u },
        )
    }

    fn is_valid(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite()) && self.s2 > 0.0 && self.s2u > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlwFit {
    pub params: SlwParams,
    pub mixture: MixtureFit,
    /// `(b0, b1)` with the sandwich covariance and Wald intervals.
    pub slope_fit: LinearFit,
    pub loglik: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlwConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SlwConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 2000, restarts: 5, seed: 0 }
    }
}

pub fn slw_loglik(p: &SlwParams, y: &[f64], x: &[f64]) -> f64 {
    let (l, u) = p.classes();
    y.iter()
        .zip(x)
        .map(|(&yi, &xi)| {
            let a = ln(p.lambda) + l.ln_pdf(yi, xi);
            let b = ln(1.0 - p.lambda) + u.ln_pdf(yi, xi);
            let m = a.max(b);
            m + ln(exp(a - m) + exp(b - m))
        })
        .sum()
}

fn slw_step(p: &SlwParams, y: &[f64], x: &[f64], floor: f64) -> SlwParams {
    let (l, u) = p.classes();
    let tau: Vec<f64> = y.iter().zip(x).map(|(&yi, &xi)| responsibility(&l, &u, p.lambda, yi, xi)).collect();
    let (mut w, mut wx, mut wxx, mut wy, mut wxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut v, mut vy) = (0.0, 0.0);
    for ((&t, &yi), &xi) in tau.iter().zip(y).zip(x) {
        w += t;
        wx += t * xi;
        wxx += t * xi * xi;
        wy += t * yi;
        wxy += t * xi * yi;
        v += 1.0 - t;
        vy += (1.0 - t) * yi;
    }
    let det = w * wxx - wx * wx;
    let (b0, b1) = if det > 1e-12 * (1.0 + w * wxx) {
        ((wxx * wy - wx * wxy) / det, (w * wxy - wx * wy) / det)
    } else {
        (p.b0, p.b1)
    };
    let mu = if v > 0.0 { vy / v } else { p.mu };
    let (mut s2n, mut s2d, mut s2u) = (0.0, 0.0, 0.0);
    for ((&t, &yi), &xi) in tau.iter().zip(y).zip(x) {
        let r = yi - b0 - b1 * xi;
        s2n += t * r * r;
        s2d += t;
        s2u += (1.0 - t) * (yi - mu) * (yi - mu);
    }
    let mut s2 = if s2d > 0.0 { (s2n / s2d).max(floor) } else { p.s2 };
    let mut s2u = if v > 0.0 { (s2u / v).max(floor) } else { p.s2u };
    if s2u < s2 && s2d > 0.0 && v > 0.0 {
        // non-link spread may not fall below the residual spread
        s2 = ((s2n + s2u * v) / (s2d + v)).max(floor);
        s2u = s2;
    }
    let lambda = (w / y.len() as f64).clamp(LAMBDA_MIN, LAMBDA_MAX);
    SlwParams { b0, b1, s2, mu, s2u, lambda }
}

fn slw_run(start: SlwParams, y: &[f64], x: &[f64], cfg: &SlwConfig, floor: f64) -> (SlwParams, Vec<f64>, usize, bool) {
    let mut p = start;
    let mut trace = vec![slw_loglik(&p, y, x)];
    let mut converged = false;
    let mut it = 0;
    while it < cfg.max_iter {
        let next = slw_step(&p, y, x, floor);
        it += 1;
        let change = next.as_array().iter().zip(p.as_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        if !p.is_valid() {
            break;
        }
        trace.push(slw_loglik(&p, y, x));
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    (p, trace, it, converged)
}

/// Per-row score vectors with respect to `(b0, b1, s2, mu, s2u, lambda)`.
fn slw_scores(p: &SlwParams, y: &[f64], x: &[f64]) -> Vec<[f64; 6]> {
    let (l, u) = p.classes();
    y.iter()
        .zip(x)
        .map(|(&yi, &xi)| {
            let t = responsibility(&l, &u, p.lambda, yi, xi);
            let r = yi - p.b0 - p.b1 * xi;
            let e = yi - p.mu;
            [
                t * r / p.s2,
                t * r * xi / p.s2,
                t * (r * r / p.s2 - 1.0) / (2.0 * p.s2),
                (1.0 - t) * e / p.s2u,
                (1.0 - t) * (e * e / p.s2u - 1.0) / (2.0 * p.s2u),
                t / p.lambda - (1.0 - t) / (1.0 - p.lambda),
            ]
        })
        .collect()
}

fn summed_score(p: &SlwParams, y: &[f64], x: &[f64]) -> [f64; 6] {
    let mut s = [0.0; 6];
    for row in slw_scores(p, y, x) {
        for (a, b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    s
}

/// `A^-1 B A^-1` with `B` the score outer products and `A` the negative
/// Hessian by central differences of the summed score, restricted to the
/// parameters listed in `idx`.
fn sandwich(p: &SlwParams, y: &[f64], x: &[f64], idx: &[usize]) -> Result<Matrix> {
    let k = idx.len();
    let scores = slw_scores(p, y, x);
    let mut meat = Matrix::zeros(k, k);
    for s in &scores {
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                meat[(a, b)] += s[ia] * s[ib];
            }
        }
    }
    let base = p.as_array();
    let mut bread = Matrix::zeros(k, k);
    for (c, &ic) in idx.iter().enumerate() {
        let h = 1e-5 * (1.0 + base[ic].abs());
        let mut plus = base;
        let mut minus = base;
        plus[ic] += h;
        minus[ic] -= h;
        let sp = summed_score(&SlwParams::from_array(&plus), y, x);
        let sm = summed_score(&SlwParams::from_array(&minus), y, x);
        for (r, &ir) in idx.iter().enumerate() {
            bread[(r, c)] = -(sp[ir] - sm[ir]) / (2.0 * h);
        }
    }
    bread.symmetrize();
    let inv = bread.inverse()?;
    let mut cov = inv.matmul(&meat).matmul(&inv);
    cov.symmetrize();
    Ok(cov)
}

/// EM for the link-regression / non-link-marginal mixture over the whole file.
///
/// Starts from least squares with `lambda = 0.8` and pooled moments for the
/// non-link class; when that run degenerates or does not converge, seeded
/// random restarts are tried and the best likelihood kept.
pub fn slw_em(file: &LinkedFile, cfg: &SlwConfig) -> Result<SlwFit> {
    let (y, x) = (&file.y, &file.x);
    let n = y.len();
    if n < 5 {
        return Err(invalid("too few rows for the mixture"));
    }
    let my = y.iter().sum::<f64>() / n as f64;
    let vy = y.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n as f64;
    if !(vy > 0.0) {
        return Err(invalid("outcome has no variation"));
    }
    let floor = 1e-8 * vy;
    let (b, rss) = least_squares(y, &crate::regression::design_with_intercept(x))?;
    let start = SlwParams { b0: b[0], b1: b[1], s2: (rss / n as f64).max(floor), mu: my, s2u: vy, lambda: 0.8 };
    let (mut best, mut trace, mut iters, mut converged) = slw_run(start, y, x, cfg, floor);
    let mut restarts = 0;
    if !converged || !best.is_valid() {
        let mut rng = seeded(cfg.seed);
        let sd = sqrt(vy);
        for _ in 0..cfg.restarts {
            restarts += 1;
            let jitter = |rng: &mut SimRng| -> f64 { StandardNormal.sample(rng) };
            let s = SlwParams {
                b0: b[0] + 0.5 * sd * jitter(&mut rng),
                b1: b[1] * (0.5 + rng.random::<f64>()),
                s2: vy * (0.2 + rng.random::<f64>()),
                mu: my + 0.5 * sd * jitter(&mut rng),
                s2u: vy * (0.5 + rng.random::<f64>()),
                lambda: 0.5 + 0.45 * rng.random::<f64>(),
            };
            let cand = slw_run(s, y, x, cfg, floor);
            let better = cand.0.is_valid()
                && (!best.is_valid() || cand.1.last().copied().unwrap_or(f64::NEG_INFINITY) > *trace.last().unwrap_or(&f64::NEG_INFINITY));
            if better {
                (best, trace, iters, converged) = cand;
            }
        }
    }
    if !best.is_valid() {
        return Err(invalid("mixture EM degenerated from every start"));
    }
    let cov = sandwich(&best, y, x, &[0, 1, 2, 3, 4, 5]).or_else(|_| sandwich(&best, y, x, &[0, 1, 2]))?;
    let beta_cov = Matrix::from_row_major(2, 2, vec![cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]]);
    let mut slope_fit = LinearFit::new(Method::Slw, vec![best.b0, best.b1], beta_cov, None)?;
    if !converged {
        slope_fit.diagnostics.push(alloc::format!("EM stopped after {iters} iterations without converging"));
    }
    let (l, u) = best.classes();
    let class_posteriors = y.iter().zip(x.iter()).map(|(&yi, &xi)| responsibility(&l, &u, best.lambda, yi, xi)).collect();
    Ok(SlwFit {
        params: best,
        mixture: MixtureFit { link: l, nonlink: u, lambda: best.lambda, class_posteriors },
        slope_fit,
        loglik: trace,
        iterations: iters,
        converged,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{design_with_intercept, naive_ols};

    fn synth(n: usize, lambda: f64, seed: u64) -> LinkedFile {
        let mut rng = seeded(seed);
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let ok = rng.random::<f64>() < lambda;
            let other: f64 = StandardNormal.sample(&mut rng);
            y.push(if ok { 1.8 * xi + 0.87 * e } else { 2.0 * other });
            x.push(xi);
            truth.push(ok);
        }
        let block = (0..n).map(|i| i * 3 / n).collect();
        LinkedFile::new(y, x, block, Some(truth)).unwrap()
    }

    #[test]
    fn linked_file_validation() {
        assert!(LinkedFile::new(vec![1.0], vec![], vec![0], None).is_err());
        assert!(LinkedFile::new(vec![1.0, 2.0], vec![1.0, 2.0], vec![0, 2], None).is_err());
        let f = LinkedFile::new(vec![1.0, 2.0], vec![1.0, 2.0], vec![1, 0], None).unwrap();
        assert_eq!(f.block_rows(), vec![vec![1], vec![0]]);
    }

    #[test]
    fn slw_recovers_slope_and_is_monotone() {
        let f = synth(600, 0.85, 1);
        let fit = slw_em(&f, &SlwConfig::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.params.b1 - 1.8).abs() < 0.15, "{:?}", fit.params);
        for w in fit.loglik.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        assert!(fit.slope_fit.cov.is_psd(1e-12));
        assert!(fit.slope_fit.covers(1, fit.params.b1));
    }

    #[test]
    fn slw_beats_a_grid_over_the_slope_and_lambda() {
        let f = synth(50, 0.8, 2);
        let fit = slw_em(&f, &SlwConfig::default()).unwrap();
        let best = *fit.loglik.last().unwrap();
        let mut grid = f64::NEG_INFINITY;
        for a in 0..50 {
            for c in 0..50 {
                let mut p = fit.params;
                p.b1 = 0.5 + 2.5 * a as f64 / 49.0;
                p.lambda = 0.02 + 0.96 * c as f64 / 49.0;
                grid = grid.max(slw_loglik(&p, &f.y, &f.x));
            }
        }
        assert!(best >= grid - 1e-3, "{best} vs {grid}");
    }

    #[test]
    fn error_free_file_matches_ols() {
        let mut f = synth(300, 1.0, 3);
        for (y, x) in f.y.iter_mut().zip(&f.x) {
            *y = 1.8 * x + 0.05 * (*y - 1.8 * x);
        }
        let fit = slw_em(&f, &SlwConfig::default()).unwrap();
        let ols = naive_ols(&f.y, &design_with_intercept(&f.x)).unwrap();
        assert_eq!(fit.params.lambda, LAMBDA_MAX);
        assert!((fit.params.b1 - ols.beta[1]).abs() < 1e-6, "{} {}", fit.params.b1, ols.beta[1]);
    }

    #[test]
    fn gt_on_clean_data() {
        let f = synth(300, 1.0, 4);
        let cfg = GtConfig { n_iter: 600, burn_in: 200, seed: 1, ..GtConfig::default() };
        let s = gt_da(&f, &cfg).unwrap();
        let lam: f64 = s.params.iter().map(|p| p.iter().map(|t| t.2).sum::<f64>() / 3.0).sum::<f64>() / 400.0;
        assert!(lam > 0.95, "{lam}");
    }

    #[test]
    fn gt_recovers_slope_with_errors() {
        let f = synth(300, 0.8, 4);
        let cfg = GtConfig { n_iter: 600, burn_in: 200, seed: 1, ..GtConfig::default() };
        let s = gt_da(&f, &cfg).unwrap();
        let lam: f64 = s.params.iter().map(|p| p.iter().map(|t| t.2).sum::<f64>() / 3.0).sum::<f64>() / 400.0;
        assert!((lam - 0.8).abs() < 0.1, "{lam}");
        let est = s.completed_estimates(&f);
        let mean = est.iter().map(|e| e.0).sum::<f64>() / est.len() as f64;
        assert!((mean - 1.8).abs() < 0.1);
    }

    #[test]
    fn gt_fixed_regression_matches_exact_posterior() {
        let y = [1.9, -0.3, 0.8, 2.5, -1.6];
        let x = [1.0, 0.4, -0.5, 1.2, -0.9];
        let link = ClassParams { b0: 0.0, b1: 1.8, sigma2: 0.8 };
        let nonlink = ClassParams { b0: 0.0, b1: 0.0, sigma2: 4.0 };
        let exact = exact_class_posterior(&y, &x, &link, &nonlink, 1.0, 1.0).unwrap();
        assert_eq!(exact.len(), 32);
        let f = LinkedFile::new(y.to_vec(), x.to_vec(), vec![0; 5], None).unwrap();
        let cfg = GtConfig {
            n_iter: 40_000,
            burn_in: 1000,
            seed: 8,
            identify: false,
            fixed_regression: Some((link, nonlink)),
            ..GtConfig::default()
        };
        let s = gt_da(&f, &cfg).unwrap();
        let mut counts = alloc::collections::BTreeMap::new();
        for c in &s.classes {
            *counts.entry(c.clone()).or_insert(0.0) += 1.0 / s.classes.len() as f64;
        }
        let tv: f64 = 0.5 * exact.iter().map(|(c, p)| (counts.get(c).copied().unwrap_or(0.0) - p).abs()).sum::<f64>();
        assert!(tv < 0.1, "{tv}");
    }

    #[test]
    fn symmetric_classes_switch_without_identification() {
        let mut rng = seeded(6);
        let (mut y, mut x) = (Vec::new(), Vec::new());
        for i in 0..40 {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            y.push(sign * 0.5 * xi + e);
            x.push(xi);
        }
        let f = LinkedFile::new(y, x, vec![0; 40], None).unwrap();
        let cfg = GtConfig { n_iter: 4000, burn_in: 0, seed: 2, identify: false, ..GtConfig::default() };
        assert!(gt_da(&f, &cfg).unwrap().slope_sign_changes > 0);
    }

    #[test]
    fn sandwich_is_symmetric_psd() {
        let f = synth(200, 0.7, 5);
        let fit = slw_em(&f, &SlwConfig::default()).unwrap();
        let cov = sandwich(&fit.params, &f.y, &f.x, &[0, 1, 2, 3, 4, 5]).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(cov[(i, j)], cov[(j, i)]);
            }
        }
        assert!(cov.is_psd(1e-10));
    }
}
