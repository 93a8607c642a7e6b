//! Estimating-equation estimators for regression on linked data.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::math::round;
use crate::regression::{least_squares, LinearFit, Method};
use crate::structure::{QMatrix, QVariant};

/// First-order bias of naive least squares when `E(Y*) = Q X beta`:
/// `(X'X)^-1 X' (Q - I) X beta`.
pub fn prop1_bias(q: &QMatrix, x: &Matrix, beta: &[f64]) -> Result<Vec<f64>> {
    let n = x.rows();
    if q.n_a() != n || q.n_b() != n || beta.len() != x.cols() {
        return Err(invalid("Q must be n x n and beta must match the design"));
    }
    let mu = x.mul_vec(beta);
    let qmu = q.to_matrix().mul_vec(&mu);
    let diff: Vec<f64> = qmu.iter().zip(&mu).map(|(a, b)| a - b).collect();
    x.gram().solve(&x.tr_mul_vec(&diff))
}

/// Bias-adjusted estimator `b* - (X'X)^-1 X' (Q - D) Y*` with `Q` truncated
/// to its two largest entries per row. The covariance reported is the
/// classical one of `b*`; callers wanting a resampling variance replace it.
pub fn sw_estimator(y: &[f64], x: &Matrix, q: &QMatrix, delta_hat: &Matrix) -> Result<LinearFit> {
    let n = x.rows();
    if y.len() != n || q.n_a() != n || q.n_b() != n || delta_hat.rows() != n || delta_hat.cols() != n {
        return Err(invalid("SW needs square Q and D matching the linked rows"));
    }
    let q2 = q.truncate(2)?.to_matrix();
    let (b_star, rss) = least_squares(y, x)?;
    let adj = q2.sub(delta_hat).mul_vec(y);
    let gram = x.gram();
    let corr = gram.solve(&x.tr_mul_vec(&adj))?;
    let beta: Vec<f64> = b_star.iter().zip(&corr).map(|(b, c)| b - c).collect();
    let p = x.cols();
    let dof = n.saturating_sub(p).max(1);
    let cov = gram.inverse()?.scale(rss / dof as f64);
    LinearFit::new(Method::Sw, beta, cov, Some(dof as f64))
}

/// One block of the primary-analysis weighting estimator: outcomes of the
/// block's A-records, covariates of its B-records and the `n_A x n_B` Q.
#[derive(Debug, Clone, PartialEq)]
pub struct HlBlock {
    pub y: Vec<f64>,
    pub x: Matrix,
    pub q: QMatrix,
}

impl HlBlock {
    pub fn new(y: Vec<f64>, x: Matrix, q: QMatrix) -> Result<Self> {
        if q.n_a() != y.len() || q.n_b() != x.rows() {
            return Err(invalid("block Q does not match the outcome and covariate sizes"));
        }
        Ok(Self { y, x, q })
    }
}

/// Pooled solution of the blocked equation
/// `sum_b X_b' Q_b' (Y_b - Q_b X_b beta) = 0`, skipping block `skip`.
fn hl_solve(blocks: &[HlBlock], skip: Option<usize>) -> Result<Vec<f64>> {
    let p = blocks.first().map(|b| b.x.cols()).ok_or_else(|| invalid("no blocks"))?;
    let mut lhs = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for (idx, b) in blocks.iter().enumerate() {
        if Some(idx) == skip {
            continue;
        }
        let qx = b.q.to_matrix().matmul(&b.x);
        lhs = lhs.add(&qx.gram());
        for (r, v) in rhs.iter_mut().zip(qx.tr_mul_vec(&b.y)) {
            *r += v;
        }
    }
    lhs.solve(&rhs)
}

/// Delete-one-block jackknife result.
#[derive(Debug, Clone, PartialEq)]
pub struct Jackknife {
    pub cov: Matrix,
    pub valid: usize,
    pub diagnostics: Vec<String>,
}

/// `(H-1)/H * sum_b (b_(-b) - mean)(b_(-b) - mean)'` over the replicates that
/// solved; failing replicates are dropped with a diagnostic.
pub fn jackknife_variance<F>(n_blocks: usize, replicate: F) -> Result<Jackknife>
where
    F: Fn(usize) -> Result<Vec<f64>>,
{
    if n_blocks < 2 {
        return Err(Error::TooFewReplicates { valid: n_blocks, needed: 2 });
    }
    let mut reps = Vec::with_capacity(n_blocks);
    let mut diagnostics = Vec::new();
    for b in 0..n_blocks {
        match replicate(b) {
            Ok(est) => reps.push(est),
            Err(e) => diagnostics.push(alloc::format!("jackknife replicate {b} dropped: {e}")),
        }
    }
    let h = reps.len();
    if h < 2 {
        return Err(Error::TooFewReplicates { valid: h, needed: 2 });
    }
    let p = reps[0].len();
    let mut mean = vec![0.0; p];
    for r in &reps {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / h as f64;
        }
    }
    let mut cov = Matrix::zeros(p, p);
    let f = (h as f64 - 1.0) / h as f64;
    for r in &reps {
        for a in 0..p {
            for c in 0..p {
                cov[(a, c)] += f * (r[a] - mean[a]) * (r[c] - mean[c]);
            }
        }
    }
    Ok(Jackknife { cov, valid: h, diagnostics })
}

/// Weighting estimator `(X'Q'QX)^-1 X'Q'Y` pooled over blocks, with the
/// delete-one-block jackknife covariance and normal intervals.
pub fn hl_estimator(blocks: &[HlBlock], method: Method) -> Result<LinearFit> {
    let beta = hl_solve(blocks, None)?;
    let jk = jackknife_variance(blocks.len(), |b| hl_solve(blocks, Some(b)))?;
    let mut fit = LinearFit::new(method, beta, jk.cov, None)?;
    fit.diagnostics = jk.diagnostics;
    Ok(fit)
}

/// Point estimate only.
pub fn hl_point(blocks: &[HlBlock]) -> Result<Vec<f64>> {
    hl_solve(blocks, None)
}

/// Exchangeable-error Q: `lambda` on the diagonal, `(1 - lambda)/(n - 1)` elsewhere.
pub fn ele_q(lambda: f64, n: usize) -> Result<QMatrix> {
    if n == 0 || !(lambda >= 1.0 / n as f64 && lambda <= 1.0) {
        return Err(invalid(alloc::format!("lambda {lambda} outside [1/n, 1] for n = {n}")));
    }
    let off = if n > 1 { (1.0 - lambda) / (n - 1) as f64 } else { 0.0 };
    let mut e = vec![off; n * n];
    for i in 0..n {
        e[i * n + i] = lambda;
    }
    Ok(QMatrix::new(n, n, e, QVariant::Full)?.with_variant(QVariant::Ele))
}

/// Per-block correct-link probabilities under exchangeable linkage error.
#[derive(Debug, Clone, PartialEq)]
pub struct EleModel {
    lambdas: Vec<f64>,
    sizes: Vec<usize>,
    /// Audit sample size behind each estimate; `None` when `lambda` is known.
    audit_sizes: Vec<Option<usize>>,
}

impl EleModel {
    pub fn new(lambdas: Vec<f64>, sizes: Vec<usize>, audit_sizes: Vec<Option<usize>>) -> Result<Self> {
        if lambdas.len() != sizes.len() || sizes.len() != audit_sizes.len() || sizes.is_empty() {
            return Err(invalid("ELE model needs one lambda, size and audit size per block"));
        }
        for (&l, &n) in lambdas.iter().zip(&sizes) {
            if n < 2 || !(l >= 1.0 / n as f64 - 1e-12 && l <= 1.0) {
                return Err(invalid(alloc::format!("lambda {l} invalid for block of size {n}")));
            }
        }
        Ok(Self { lambdas, sizes, audit_sizes })
    }

    pub fn known(lambdas: Vec<f64>, sizes: Vec<usize>) -> Result<Self> {
        let k = sizes.len();
        Self::new(lambdas, sizes, vec![None; k])
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn lambda_variance(&self, b: usize) -> f64 {
        match self.audit_sizes[b] {
            Some(m) if m > 0 => self.lambdas[b] * (1.0 - self.lambdas[b]) / m as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditEstimate {
    pub lambda: f64,
    pub audited: usize,
    /// True when the raw proportion fell outside `[1/n, (n-1)/n]`.
    pub clamped: bool,
}

/// Correct-link proportion in a simple random audit sample of the block,
/// clamped to `[1/n, (n-1)/n]`.
pub fn estimate_lambda_audit<R: Rng + ?Sized>(correct: &[bool], fraction: f64, rng: &mut R) -> Result<AuditEstimate> {
    let n = correct.len();
    if n == 0 {
        return Err(invalid("cannot audit an empty block"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(alloc::format!("audit fraction {fraction} outside (0, 1]")));
    }
    let m = (round(n as f64 * fraction) as usize).clamp(1, n);
    let hits = sample(rng, n, m).iter().filter(|&i| correct[i]).count();
    let raw = hits as f64 / m as f64;
    let (lo, hi) = (1.0 / n as f64, (n as f64 - 1.0) / n as f64);
    let lambda = raw.clamp(lo.min(hi), hi.max(lo));
    Ok(AuditEstimate { lambda, audited: m, clamped: lambda != raw })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChambersVariant {
    ChR,
    ChL,
    ChB,
}

impl ChambersVariant {
    fn method(self) -> Method {
        match self {
            ChambersVariant::ChR => Method::ChR,
            ChambersVariant::ChL => Method::ChL,
            ChambersVariant::ChB => Method::ChB,
        }
    }
}

/// Rows of one block in a linked file.
struct EleBlock {
    rows: Vec<usize>,
    lambda: f64,
}

impl EleBlock {
    fn off(&self) -> f64 {
        let n = self.rows.len() as f64;
        (1.0 - self.lambda) / (n - 1.0)
    }

    /// `Q v` for a vector indexed by the block's rows.
    fn q_apply(&self, v: &[f64]) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        let off = self.off();
        v.iter().map(|&vi| self.lambda * vi + off * (s - vi)).collect()
    }

    /// `(dQ/dlambda) v`.
    fn dq_apply(&self, v: &[f64]) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        let n = self.rows.len() as f64;
        v.iter().map(|&vi| vi - (s - vi) / (n - 1.0)).collect()
    }

    /// Diagonal of `V(Delta f)`: variance of the value a row receives.
    fn sigma_diag(&self, f: &[f64]) -> Vec<f64> {
        let s2: f64 = f.iter().map(|v| v * v).sum();
        let n = self.rows.len() as f64;
        let qf = self.q_apply(f);
        f.iter()
            .zip(&qf)
            .map(|(&fi, &m)| (self.lambda * fi * fi + (1.0 - self.lambda) * (s2 - fi * fi) / (n - 1.0) - m * m).max(0.0))
            .collect()
    }
}

fn gather(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| v[r]).collect()
}

fn gather_x(x: &Matrix, rows: &[usize]) -> Matrix {
    let p = x.cols();
    let mut data = Vec::with_capacity(rows.len() * p);
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Matrix::from_row_major(rows.len(), p, data)
}

fn q_apply_cols(block: &EleBlock, x: &Matrix) -> Matrix {
    let (n, p) = (x.rows(), x.cols());
    let mut out = Matrix::zeros(n, p);
    for c in 0..p {
        let col: Vec<f64> = (0..n).map(|i| x[(i, c)]).collect();
        for (i, v) in block.q_apply(&col).into_iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    out
}

/// Per-block pieces reused across the variants.
struct Prepared {
    block: EleBlock,
    y: Vec<f64>,
    x: Matrix,
    qx: Matrix,
}

fn prepare(y: &[f64], x: &Matrix, block_of: &[usize], ele: &EleModel) -> Result<Vec<Prepared>> {
    if y.len() != x.rows() || block_of.len() != y.len() {
        return Err(invalid("outcome, design and block labels differ in length"));
    }
    let h = ele.lambdas.len();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); h];
    for (r, &b) in block_of.iter().enumerate() {
        if b >= h {
            return Err(invalid(alloc::format!("row {r} has block {b} but the model has {h} blocks")));
        }
        rows[b].push(r);
    }
    rows.into_iter()
        .enumerate()
        .map(|(b, rows)| {
            if rows.len() != ele.sizes[b] {
                return Err(invalid(alloc::format!("block {b} has {} rows, model says {}", rows.len(), ele.sizes[b])));
            }
            let block = EleBlock { rows, lambda: ele.lambdas[b] };
            let xb = gather_x(x, &block.rows);
            let qx = q_apply_cols(&block, &xb);
            Ok(Prepared { y: gather(y, &block.rows), x: xb, qx, block })
        })
        .collect()
}

/// Weighting matrix rows for a block: `v = A'` with `A` the n x p matrix
/// returned here, so the block equation is `A' (y - QX beta) = 0`.
fn weight_matrix(p: &Prepared, variant: ChambersVariant, w: Option<&[f64]>) -> Matrix {
    match variant {
        ChambersVariant::ChR => p.x.clone(),
        ChambersVariant::ChL => p.qx.clone(),
        ChambersVariant::ChB => {
            let w = w.expect("ChB needs weights");
            let mut a = p.qx.clone();
            for i in 0..a.rows() {
                for c in 0..a.cols() {
                    a[(i, c)] *= w[i];
                }
            }
            a
        }
    }
}

fn solve_blocks(prep: &[Prepared], variant: ChambersVariant, weights: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
    let k = prep[0].x.cols();
    let mut lhs = Matrix::zeros(k, k);
    let mut rhs = vec![0.0; k];
    for (b, p) in prep.iter().enumerate() {
        let a = weight_matrix(p, variant, weights.map(|w| w[b].as_slice()));
        lhs = lhs.add(&a.transpose().matmul(&p.qx));
        for (r, v) in rhs.iter_mut().zip(a.tr_mul_vec(&p.y)) {
            *r += v;
        }
    }
    lhs.solve(&rhs)
}

fn residual_sigma2(prep: &[Prepared], beta: &[f64]) -> f64 {
    let (mut acc, mut n) = (0.0, 0.0);
    let mut r2 = 0.0;
    for p in prep {
        let f = p.x.mul_vec(beta);
        let fitted = p.qx.mul_vec(beta);
        let sig = p.block.sigma_diag(&f);
        for ((yi, mi), si) in p.y.iter().zip(&fitted).zip(&sig) {
            let r = yi - mi;
            acc += r * r - si;
            r2 += r * r;
            n += 1.0;
        }
    }
    (acc / n).max(1e-6 * r2 / n).max(f64::MIN_POSITIVE)
}

/// Chambers-type estimators under the exchangeable linkage-error model.
///
/// `block_of[r]` is the block index of row `r`. `sigma2` defaults to the
/// plug-in estimate from ChL residuals. The covariance is the sandwich
/// `J^-1 (sum_b A_b' V_b A_b + sum_b d_b Var(lambda_b) d_b') J^-T`.
pub fn chambers_fit(
    y: &[f64],
    x: &Matrix,
    block_of: &[usize],
    ele: &EleModel,
    variant: ChambersVariant,
    sigma2: Option<f64>,
) -> Result<LinearFit> {
    let prep = prepare(y, x, block_of, ele)?;
    let chl = solve_blocks(&prep, ChambersVariant::ChL, None)?;
    let s2 = sigma2.unwrap_or_else(|| residual_sigma2(&prep, &chl));
    if !(s2 > 0.0) {
        return Err(invalid("sigma^2 must be positive"));
    }
    let weights_for = |beta: &[f64]| -> Vec<Vec<f64>> {
        prep.iter()
            .map(|p| p.block.sigma_diag(&p.x.mul_vec(beta)).into_iter().map(|s| 1.0 / (s2 + s)).collect())
            .collect()
    };
    let (beta, weights) = match variant {
        ChambersVariant::ChL => (chl, None),
        ChambersVariant::ChR => (solve_blocks(&prep, variant, None)?, None),
        ChambersVariant::ChB => {
            let mut beta = chl;
            let mut w = weights_for(&beta);
            for _ in 0..50 {
                let next = solve_blocks(&prep, variant, Some(&w))?;
                let change = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                beta = next;
                w = weights_for(&beta);
                if change < 1e-10 {
                    break;
                }
            }
            (beta, Some(w))
        }
    };

    let k = beta.len();
    let mut j = Matrix::zeros(k, k);
    let mut meat = Matrix::zeros(k, k);
    for (b, p) in prep.iter().enumerate() {
        let a = weight_matrix(p, variant, weights.as_ref().map(|w| w[b].as_slice()));
        j = j.add(&a.transpose().matmul(&p.qx));
        let f = p.x.mul_vec(&beta);
        let v: Vec<f64> = p.block.sigma_diag(&f).into_iter().map(|s| s2 + s).collect();
        let mut av = a.clone();
        for i in 0..av.rows() {
            for c in 0..k {
                av[(i, c)] *= v[i];
            }
        }
        meat = meat.add(&a.transpose().matmul(&av));
        let var_l = ele.lambda_variance(b);
        if var_l > 0.0 {
            let d = a.tr_mul_vec(&p.block.dq_apply(&f));
            for r in 0..k {
                for c in 0..k {
                    meat[(r, c)] += d[r] * d[c] * var_l;
                }
            }
        }
    }
    let j_inv = j.inverse()?;
    let cov = j_inv.matmul(&meat).matmul(&j_inv.transpose());
    let mut fit = LinearFit::new(variant.method(), beta, cov, None)?;
    for (b, (&l, &n)) in ele.lambdas.iter().zip(&ele.sizes).enumerate() {
        let (lo, hi) = (1.0 / n as f64, (n as f64 - 1.0) / n as f64);
        if ele.audit_sizes[b].is_some() && ((l - lo).abs() < 1e-12 || (l - hi).abs() < 1e-12) {
            fit.diagnostics.push(alloc::format!("block {b}: lambda estimate {l} sits at the clamp boundary"));
        }
    }
    Ok(fit)
}
