//! Bayesian bipartite linkage: Gibbs sampling of the matching labeling, an
//! exact enumeration oracle for small blocks, and the variant whose link
//! conditionals also carry a pairwise regression likelihood.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::comparison::{ComparisonSet, PatternTable, MISSING_LEVEL};
use crate::error::{invalid, Error, Result};
use crate::fs::{check_shape, pattern_log_ratio, FsParams};
use crate::linalg::Matrix;
use crate::math::{exp, ln, ln_beta, ln_gamma, log_sum_exp, normal_ln_pdf, sqrt};
use crate::rng::{seeded, SimRng};
use crate::structure::LinkageStructure;

/// Prior on bipartite structures: a Beta-binomial on the number of linked
/// A-records, uniform over structures with a given link count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BipartitePrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BipartitePrior {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

impl BipartitePrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(invalid("bipartite prior hyperparameters must be positive"));
        }
        Ok(Self { alpha, beta })
    }

    /// Log prior mass of one structure with `k` links, up to a constant.
    pub fn log_structure_weight(&self, k: usize, n_a: usize, n_b: usize) -> f64 {
        ln_beta(k as f64 + self.alpha, (n_a - k) as f64 + self.beta) + ln_gamma((n_b - k + 1) as f64)
            - ln_gamma((n_b + 1) as f64)
    }

    /// Log prior ratio for adding one link to a structure with `k` links.
    fn log_add_ratio(&self, k: usize, n_a: usize, n_b: usize) -> f64 {
        ln(k as f64 + self.alpha) - ln((n_a - k - 1) as f64 + self.beta) - ln((n_b - k) as f64)
    }
}

/// How the m/u level probabilities are handled by the sampler.
#[derive(Debug, Clone, PartialEq)]
pub enum MuMode {
    /// Dirichlet updates with a common hyperparameter on every level.
    Learn { dirichlet: f64 },
    Fixed(FsParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub mode: MuMode,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { n_iter: 2000, burn_in: 1000, thin: 1, seed: 0, mode: MuMode::Learn { dirichlet: 1.0 } }
    }
}

impl GibbsConfig {
    fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.n_iter <= self.burn_in || (self.n_iter - self.burn_in) / self.thin == 0 {
            return Err(invalid("iteration budget yields no samples"));
        }
        if let MuMode::Learn { dirichlet } = self.mode {
            if !(dirichlet > 0.0) {
                return Err(invalid("Dirichlet hyperparameter must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorLinkageSamples {
    pub samples: Vec<LinkageStructure>,
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl PosteriorLinkageSamples {
    /// Row-major `n_a x n_b` posterior link frequencies.
    pub fn link_frequencies(&self) -> Vec<f64> {
        let Some(first) = self.samples.first() else {
            return Vec::new();
        };
        let n_b = first.n_b();
        let mut f = vec![0.0; first.n_a() * n_b];
        for s in &self.samples {
            for (i, j) in s.links() {
                f[i * n_b + j] += 1.0;
            }
        }
        let n = self.samples.len() as f64;
        f.iter_mut().for_each(|x| *x /= n);
        f
    }

    pub fn structure_frequencies(&self) -> BTreeMap<LinkageStructure, f64> {
        let mut map = BTreeMap::new();
        for s in &self.samples {
            *map.entry(s.clone()).or_insert(0.0) += 1.0;
        }
        let n = self.samples.len() as f64;
        map.values_mut().for_each(|v| *v /= n);
        map
    }
}

struct Chain<'a> {
    set: &'a ComparisonSet,
    table: PatternTable,
    z: Vec<Option<usize>>,
    owner: Vec<Option<usize>>,
    k: usize,
    m: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    log_ratio: Vec<f64>,
    order: Vec<usize>,
    /// Per field and level, the number of pairs showing that level.
    level_totals: Vec<Vec<f64>>,
}

impl<'a> Chain<'a> {
    fn new(set: &'a ComparisonSet, m: Vec<Vec<f64>>, u: Vec<Vec<f64>>) -> Self {
        let table = set.patterns();
        let mut level_totals: Vec<Vec<f64>> = set.level_counts.iter().map(|&l| vec![0.0; l]).collect();
        for (p, &c) in table.patterns.iter().zip(&table.counts) {
            for (k, &l) in p.iter().enumerate() {
                if l != MISSING_LEVEL {
                    level_totals[k][usize::from(l)] += c as f64;
                }
            }
        }
        let mut chain = Self {
            set,
            table,
            z: vec![None; set.n_a],
            owner: vec![None; set.n_b],
            k: 0,
            m,
            u,
            log_ratio: Vec::new(),
            order: (0..set.n_a).collect(),
            level_totals,
        };
        chain.refresh_ratios();
        chain
    }

    fn refresh_ratios(&mut self) {
        self.log_ratio = self.table.patterns.iter().map(|p| pattern_log_ratio(&self.m, &self.u, p)).collect();
    }

    fn pair_ratio(&self, i: usize, j: usize) -> f64 {
        self.log_ratio[self.table.pair_pattern[i * self.set.n_b + j] as usize]
    }

    /// One randomized sweep of single-record updates.
    fn sweep<F: Fn(usize, usize) -> f64>(&mut self, rng: &mut SimRng, prior: &BipartitePrior, extra: F) {
        let (n_a, n_b) = (self.set.n_a, self.set.n_b);
        let mut order = core::mem::take(&mut self.order);
        order.shuffle(rng);
        let mut logw: Vec<f64> = Vec::with_capacity(n_b + 1);
        let mut cand: Vec<usize> = Vec::with_capacity(n_b);
        for &i in &order {
            if let Some(j) = self.z[i].take() {
                self.owner[j] = None;
                self.k -= 1;
            }
            let lp = prior.log_add_ratio(self.k, n_a, n_b);
            logw.clear();
            cand.clear();
            logw.push(0.0);
            for j in 0..n_b {
                if self.owner[j].is_none() {
                    cand.push(j);
                    logw.push(lp + self.pair_ratio(i, j) + extra(i, j));
                }
            }
            let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for w in logw.iter_mut() {
                *w = exp(*w - top);
                total += *w;
            }
            let mut draw = rng.random::<f64>() * total;
            let mut pick = logw.len() - 1;
            for (idx, w) in logw.iter().enumerate() {
                if draw < *w {
                    pick = idx;
                    break;
                }
                draw -= w;
            }
            if pick > 0 {
                let j = cand[pick - 1];
                self.z[i] = Some(j);
                self.owner[j] = Some(i);
                self.k += 1;
            }
        }
        self.order = order;
    }

    fn update_mu(&mut self, rng: &mut SimRng, a: f64) {
        let mut linked: Vec<Vec<f64>> = self.level_totals.iter().map(|t| vec![0.0; t.len()]).collect();
        for (i, zi) in self.z.iter().enumerate() {
            if let Some(j) = *zi {
                let v = self.set.vector(i, j);
                for (k, (&l, &miss)) in v.levels.iter().zip(&v.missing).enumerate() {
                    if !miss {
                        linked[k][usize::from(l)] += 1.0;
                    }
                }
            }
        }
        for (k, totals) in self.level_totals.iter().enumerate() {
            self.m[k] = dirichlet(rng, linked[k].iter().map(|c| a + c));
            self.u[k] = dirichlet(rng, totals.iter().zip(&linked[k]).map(|(t, c)| a + t - c));
        }
        self.refresh_ratios();
    }

    fn structure(&self) -> LinkageStructure {
        LinkageStructure::new(self.z.clone(), self.set.n_b).expect("sampler keeps links one-to-one")
    }
}

fn dirichlet(rng: &mut SimRng, shapes: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut draws: Vec<f64> =
        shapes.map(|s| Gamma::new(s, 1.0).expect("positive Dirichlet shape").sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        let n = draws.len() as f64;
        draws.iter_mut().for_each(|d| *d = 1.0 / n);
    }
    draws
}

fn start_mu(set: &ComparisonSet, mode: &MuMode) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let params = match mode {
        MuMode::Fixed(p) => {
            check_shape(p, set)?;
            p.clone()
        }
        MuMode::Learn { .. } => FsParams::initial(set)?,
    };
    Ok((params.m_probs().to_vec(), params.u_probs().to_vec()))
}

fn keep_sample(cfg: &GibbsConfig, iter: usize) -> bool {
    iter >= cfg.burn_in && (iter - cfg.burn_in + 1).is_multiple_of(cfg.thin)
}

/// Gibbs sampler over matching labelings; every emitted structure is one-to-one.
pub fn gibbs_sl(set: &ComparisonSet, prior: &BipartitePrior, cfg: &GibbsConfig) -> Result<PosteriorLinkageSamples> {
    cfg.validate()?;
    let (m, u) = start_mu(set, &cfg.mode)?;
    let mut rng = seeded(cfg.seed);
    let mut chain = Chain::new(set, m, u);
    let mut samples = Vec::with_capacity((cfg.n_iter - cfg.burn_in) / cfg.thin);
    for iter in 0..cfg.n_iter {
        chain.sweep(&mut rng, prior, |_, _| 0.0);
        if let MuMode::Learn { dirichlet } = cfg.mode {
            chain.update_mu(&mut rng, dirichlet);
        }
        if keep_sample(cfg, iter) {
            samples.push(chain.structure());
        }
    }
    Ok(PosteriorLinkageSamples {
        samples,
        seed: cfg.seed,
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
    })
}

/// Exact posterior over every bipartite structure of a small block with
/// fixed m/u probabilities.
pub fn enumerate_exact(
    set: &ComparisonSet,
    prior: &BipartitePrior,
    params: &FsParams,
) -> Result<Vec<(LinkageStructure, f64)>> {
    if set.n_a > 4 || set.n_b > 5 {
        return Err(Error::BlockTooLarge { n_a: set.n_a, n_b: set.n_b });
    }
    check_shape(params, set)?;
    let table = set.patterns();
    let lr: Vec<f64> = table.patterns.iter().map(|p| pattern_log_ratio(params.m_probs(), params.u_probs(), p)).collect();
    let mut out: Vec<(Vec<Option<usize>>, f64)> = Vec::new();
    let mut z = vec![None; set.n_a];
    let mut used = vec![false; set.n_b];
    fn rec(
        i: usize,
        z: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        acc: f64,
        k: usize,
        ctx: &(&ComparisonSet, &PatternTable, &[f64], &BipartitePrior),
        out: &mut Vec<(Vec<Option<usize>>, f64)>,
    ) {
        let (set, table, lr, prior) = *ctx;
        if i == set.n_a {
            out.push((z.clone(), acc + prior.log_structure_weight(k, set.n_a, set.n_b)));
            return;
        }
        rec(i + 1, z, used, acc, k, ctx, out);
        for j in 0..set.n_b {
            if !used[j] {
                used[j] = true;
                z[i] = Some(j);
                let w = lr[table.pair_pattern[i * set.n_b + j] as usize];
                rec(i + 1, z, used, acc + w, k + 1, ctx, out);
                z[i] = None;
                used[j] = false;
            }
        }
    }
    rec(0, &mut z, &mut used, 0.0, 0, &(set, &table, &lr, prior), &mut out);
    let logs: Vec<f64> = out.iter().map(|(_, w)| *w).collect();
    let norm = log_sum_exp(&logs);
    out.into_iter()
        .map(|(z, w)| Ok((LinkageStructure::new(z, set.n_b)?, exp(w - norm))))
        .collect()
}

/// Pairwise regression parameters: outcome given covariate among links (m)
/// and among non-links (u), each `y = b0 + b1 x + N(0, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackRegressionParams {
    pub beta0_m: f64,
    pub beta1_m: f64,
    pub sigma_m: f64,
    pub beta0_u: f64,
    pub beta1_u: f64,
    pub sigma_u: f64,
}

impl FeedbackRegressionParams {
    fn log_ratio(&self, y: f64, x: f64) -> f64 {
        normal_ln_pdf(y, self.beta0_m + self.beta1_m * x, self.sigma_m * self.sigma_m)
            - normal_ln_pdf(y, self.beta0_u + self.beta1_u * x, self.sigma_u * self.sigma_u)
    }
}

/// Prior for both pairwise regressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressionPrior {
    /// `p(beta, sigma^2) ∝ sigma^-2`.
    Improper,
    /// `beta | sigma^2 ~ N(mean, sigma^2 diag(1/precision))`, `sigma^2 ~ IG(shape, scale)`.
    Conjugate { mean: [f64; 2], precision: [f64; 2], shape: f64, scale: f64 },
}

/// Outcome and covariate values on the two sides of a block.
#[derive(Debug, Clone, PartialEq)]
pub struct PairData {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// True when `a` holds the outcome and `b` the covariate.
    pub outcome_on_a: bool,
}

impl PairData {
    fn pair(&self, i: usize, j: usize) -> (f64, f64) {
        if self.outcome_on_a {
            (self.a[i], self.b[j])
        } else {
            (self.b[j], self.a[i])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsgConfig {
    pub gibbs: GibbsConfig,
    pub regression_prior: RegressionPrior,
    /// Starting regression parameters; defaults to the all-pairs fit for both classes.
    pub init: Option<FeedbackRegressionParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsgSamples {
    pub linkage: PosteriorLinkageSamples,
    pub regression: Vec<FeedbackRegressionParams>,
    /// Sweeps in which the link-class regression was held fixed.
    pub frozen_m: usize,
    pub frozen_u: usize,
}

/// Sufficient statistics for a regression on `[1, x]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Stats {
    n: f64,
    sx: f64,
    sxx: f64,
    sy: f64,
    sxy: f64,
    syy: f64,
}

impl Stats {
    fn add(&mut self, y: f64, x: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sxx += x * x;
        self.sy += y;
        self.sxy += x * y;
        self.syy += y * y;
    }

    fn minus(&self, o: &Self) -> Self {
        Self {
            n: self.n - o.n,
            sx: self.sx - o.sx,
            sxx: self.sxx - o.sxx,
            sy: self.sy - o.sy,
            sxy: self.sxy - o.sxy,
            syy: self.syy - o.syy,
        }
    }

    fn all_pairs(data: &PairData) -> Self {
        let (ys, xs) = if data.outcome_on_a { (&data.a, &data.b) } else { (&data.b, &data.a) };
        let (ny, nx) = (ys.len() as f64, xs.len() as f64);
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let sq = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>();
        Self {
            n: ny * nx,
            sx: ny * sum(xs),
            sxx: ny * sq(xs),
            sy: nx * sum(ys),
            sxy: sum(xs) * sum(ys),
            syy: nx * sq(ys),
        }
    }

    fn gram(&self) -> Matrix {
        Matrix::from_row_major(2, 2, vec![self.n, self.sx, self.sx, self.sxx])
    }

    fn ols(&self) -> Option<(f64, f64, f64)> {
        let b = self.gram().solve(&[self.sy, self.sxy]).ok()?;
        let rss = (self.syy - b[0] * self.sy - b[1] * self.sxy).max(0.0);
        let s = if self.n > 2.0 { sqrt(rss / (self.n - 2.0)) } else { 1.0 };
        Some((b[0], b[1], if s > 0.0 { s } else { 1.0 }))
    }
}

/// Draw `(beta0, beta1, sigma)` from the regression posterior.
fn draw_regression(rng: &mut SimRng, st: &Stats, prior: &RegressionPrior) -> Option<(f64, f64, f64)> {
    let xty = [st.sy, st.sxy];
    let (mean, cov_unit, sigma2) = match *prior {
        RegressionPrior::Improper => {
            let gram = st.gram();
            let b = gram.solve(&xty).ok()?;
            let rss = (st.syy - b[0] * xty[0] - b[1] * xty[1]).max(1e-12);
            let df = st.n - 2.0;
            let chi: f64 = ChiSquared::new(df).ok()?.sample(rng);
            let sigma2 = rss / chi;
            (b, gram.inverse().ok()?, sigma2)
        }
        RegressionPrior::Conjugate { mean, precision, shape, scale } => {
            let mut post_prec = st.gram();
            post_prec[(0, 0)] += precision[0];
            post_prec[(1, 1)] += precision[1];
            let rhs = [xty[0] + precision[0] * mean[0], xty[1] + precision[1] * mean[1]];
            let bn = post_prec.solve(&rhs).ok()?;
            let quad_prior = precision[0] * mean[0] * mean[0] + precision[1] * mean[1] * mean[1];
            let quad_post = bn[0] * rhs[0] + bn[1] * rhs[1];
            let an = shape + 0.5 * st.n;
            let dn = scale + 0.5 * (st.syy + quad_prior - quad_post).max(0.0);
            let g: f64 = Gamma::new(an, 1.0 / dn).ok()?.sample(rng);
            (bn, post_prec.inverse().ok()?, 1.0 / g)
        }
    };
    let l = cov_unit.scale(sigma2).cholesky().ok()?;
    let (e0, e1): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
    let b0 = mean[0] + l[(0, 0)] * e0;
    let b1 = mean[1] + l[(1, 0)] * e0 + l[(1, 1)] * e1;
    Some((b0, b1, sqrt(sigma2)))
}

/// Data augmentation over links where each pair's link conditional also
/// includes the ratio of the link-class and non-link-class regression
/// densities of the outcome given the covariate.
pub fn da_ksg(
    set: &ComparisonSet,
    data: &PairData,
    prior: &BipartitePrior,
    cfg: &KsgConfig,
) -> Result<KsgSamples> {
    cfg.gibbs.validate()?;
    if data.a.len() != set.n_a || data.b.len() != set.n_b {
        return Err(invalid("outcome/covariate lengths do not match the block"));
    }
    let gcfg = &cfg.gibbs;
    let (m, u) = start_mu(set, &gcfg.mode)?;
    let mut rng = seeded(gcfg.seed);
    let mut chain = Chain::new(set, m, u);
    let all = Stats::all_pairs(data);
    let mut reg = match cfg.init {
        Some(r) => r,
        None => {
            let (b0, b1, s) = all.ols().ok_or_else(|| Error::Singular("all-pairs regression".into()))?;
            FeedbackRegressionParams { beta0_m: b0, beta1_m: b1, sigma_m: s, beta0_u: b0, beta1_u: b1, sigma_u: s }
        }
    };
    let keep = (gcfg.n_iter - gcfg.burn_in) / gcfg.thin;
    let mut samples = Vec::with_capacity(keep);
    let mut regression = Vec::with_capacity(keep);
    let (mut frozen_m, mut frozen_u) = (0, 0);
    for iter in 0..gcfg.n_iter {
        let r = reg;
        chain.sweep(&mut rng, prior, |i, j| {
            let (y, x) = data.pair(i, j);
            r.log_ratio(y, x)
        });
        if let MuMode::Learn { dirichlet } = gcfg.mode {
            chain.update_mu(&mut rng, dirichlet);
        }
        let mut linked = Stats::default();
        for (i, zi) in chain.z.iter().enumerate() {
            if let Some(j) = *zi {
                let (y, x) = data.pair(i, j);
                linked.add(y, x);
            }
        }
        let unlinked = all.minus(&linked);
        match (linked.n >= 3.0).then(|| draw_regression(&mut rng, &linked, &cfg.regression_prior)).flatten() {
            Some((b0, b1, s)) => {
                reg.beta0_m = b0;
                reg.beta1_m = b1;
                reg.sigma_m = s;
            }
            None => frozen_m += 1,
        }
        match (unlinked.n >= 3.0).then(|| draw_regression(&mut rng, &unlinked, &cfg.regression_prior)).flatten() {
            Some((b0, b1, s)) => {
                reg.beta0_u = b0;
                reg.beta1_u = b1;
                reg.sigma_u = s;
            }
            None => frozen_u += 1,
        }
        if keep_sample(gcfg, iter) {
            samples.push(chain.structure());
            regression.push(reg);
        }
    }
    Ok(KsgSamples {
        linkage: PosteriorLinkageSamples {
            samples,
            seed: gcfg.seed,
            n_iter: gcfg.n_iter,
            burn_in: gcfg.burn_in,
            thin: gcfg.thin,
        },
        regression,
        frozen_m,
        frozen_u,
    })
}

/// Total variation distance between an empirical structure distribution and
/// an exact one.
pub fn total_variation(empirical: &BTreeMap<LinkageStructure, f64>, exact: &[(LinkageStructure, f64)]) -> f64 {
    let mut tv = 0.0;
    let mut seen = 0.0;
    for (s, p) in exact {
        let e = empirical.get(s).copied().unwrap_or(0.0);
        seen += e;
        tv += (e - p).abs();
    }
    // mass on structures missing from the exact list
    tv += (1.0 - seen).max(0.0);
    0.5 * tv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_field_set(n_a: usize, n_b: usize, agree: impl Fn(usize, usize) -> bool) -> ComparisonSet {
        let mut rows = Vec::new();
        for i in 0..n_a {
            for j in 0..n_b {
                rows.push(vec![Some(u8::from(!agree(i, j)))]);
            }
        }
        ComparisonSet::from_levels(n_a, n_b, vec![2], rows).unwrap()
    }

    fn fixed(m: f64, u: f64) -> FsParams {
        FsParams::new(0.5, vec![vec![m, 1.0 - m]], vec![vec![u, 1.0 - u]]).unwrap()
    }

    #[test]
    fn structure_counts() {
        let p = fixed(0.9, 0.1);
        for (n, count) in [(1, 2), (2, 7), (3, 34)] {
            let set = one_field_set(n, n, |i, j| i == j);
            let post = enumerate_exact(&set, &BipartitePrior::default(), &p).unwrap();
            assert_eq!(post.len(), count);
            let total: f64 = post.iter().map(|(_, q)| q).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            enumerate_exact(&one_field_set(5, 5, |_, _| true), &BipartitePrior::default(), &p),
            Err(Error::BlockTooLarge { .. })
        ));
    }

    #[test]
    fn single_pair_closed_form() {
        // with a uniform link-fraction prior both structures have prior 1/2
        let set = one_field_set(1, 1, |_, _| true);
        let cfg = GibbsConfig { n_iter: 5100, burn_in: 100, thin: 1, seed: 5, mode: MuMode::Fixed(fixed(0.9, 0.1)) };
        let s = gibbs_sl(&set, &BipartitePrior::default(), &cfg).unwrap();
        assert_eq!(s.samples.len(), 5000);
        let freq = s.link_frequencies()[0];
        assert!((freq - 0.9).abs() < 0.03, "{freq}");
        let exact = enumerate_exact(&set, &BipartitePrior::default(), &fixed(0.9, 0.1)).unwrap();
        let linked = exact.iter().find(|(z, _)| z.n_links() == 1).unwrap().1;
        assert!((linked - 0.9).abs() < 1e-12);
    }

    #[test]
    fn total_disagreement_favours_no_links() {
        let set = one_field_set(3, 3, |_, _| false);
        let prior = BipartitePrior::new(1.0, 5.0).unwrap();
        let cfg = GibbsConfig { n_iter: 3000, burn_in: 500, thin: 1, seed: 2, mode: MuMode::Fixed(fixed(0.95, 0.2)) };
        let s = gibbs_sl(&set, &prior, &cfg).unwrap();
        let freq = s.structure_frequencies();
        let (mode, _) = freq.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert_eq!(mode.n_links(), 0);
    }

    #[test]
    fn learned_mu_stays_on_simplex() {
        let set = one_field_set(4, 5, |i, j| i == j);
        let cfg = GibbsConfig { n_iter: 50, burn_in: 10, thin: 4, seed: 9, mode: MuMode::Learn { dirichlet: 1.0 } };
        let (m, u) = start_mu(&set, &cfg.mode).unwrap();
        let mut chain = Chain::new(&set, m, u);
        let mut rng = seeded(1);
        for _ in 0..20 {
            chain.sweep(&mut rng, &BipartitePrior::default(), |_, _| 0.0);
            chain.update_mu(&mut rng, 1.0);
            for p in chain.m.iter().chain(&chain.u) {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(gibbs_sl(&set, &BipartitePrior::default(), &cfg).unwrap().samples.len(), 10);
    }

    #[test]
    fn bad_budgets_rejected() {
        let set = one_field_set(1, 1, |_, _| true);
        let cfg = GibbsConfig { n_iter: 10, burn_in: 10, ..GibbsConfig::default() };
        assert!(gibbs_sl(&set, &BipartitePrior::default(), &cfg).is_err());
        let cfg = GibbsConfig { mode: MuMode::Learn { dirichlet: 0.0 }, ..GibbsConfig::default() };
        assert!(gibbs_sl(&set, &BipartitePrior::default(), &cfg).is_err());
        assert!(BipartitePrior::new(0.0, 1.0).is_err());
    }

    #[test]
    fn ksg_freezes_without_links() {
        let set = one_field_set(2, 2, |_, _| false);
        let data = PairData { a: vec![0.1, 0.4], b: vec![1.0, -1.0], outcome_on_a: true };
        let cfg = KsgConfig {
            gibbs: GibbsConfig { n_iter: 20, burn_in: 10, thin: 1, seed: 3, mode: MuMode::Fixed(fixed(0.9, 0.1)) },
            regression_prior: RegressionPrior::Improper,
            init: Some(FeedbackRegressionParams {
                beta0_m: 0.0,
                beta1_m: 1.0,
                sigma_m: 1.0,
                beta0_u: 0.0,
                beta1_u: 0.0,
                sigma_u: 1.0,
            }),
        };
        let out = da_ksg(&set, &data, &BipartitePrior::default(), &cfg).unwrap();
        // at most 2 links or 4 pairs: both classes stay below 3 rows
        assert_eq!(out.frozen_m, 20);
        assert!(out.regression.iter().all(|r| r.beta1_m == 1.0));
    }

    #[test]
    fn pair_stats_match_direct_sums() {
        let data = PairData { a: vec![1.0, 2.0], b: vec![0.5, -1.0, 3.0], outcome_on_a: false };
        let mut direct = Stats::default();
        for i in 0..2 {
            for j in 0..3 {
                let (y, x) = data.pair(i, j);
                direct.add(y, x);
            }
        }
        let all = Stats::all_pairs(&data);
        for (a, b) in [
            (all.n, direct.n),
            (all.sx, direct.sx),
            (all.sxx, direct.sxx),
            (all.sy, direct.sy),
            (all.sxy, direct.sxy),
            (all.syy, direct.syy),
        ] {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
