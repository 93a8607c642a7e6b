//! End-to-end estimation for one simulated replication: link (where the
//! scenario calls for it), estimate the slope, attach a variance and a 95%
//! interval.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::assignment::assign_one_to_one;
use crate::bipartite::{
    da_ksg, gibbs_sl, BipartitePrior, GibbsConfig, KsgConfig, MuMode, PairData, PosteriorLinkageSamples,
    RegressionPrior,
};
use crate::combine::{mi_combine, PooledEstimate};
use crate::comparison::{block_partition, build_comparisons, ComparisonSet};
use crate::error::{invalid, Error, Result};
use crate::fs::{default_threshold, em_fit, match_weights, posterior_q, FsParams};
use crate::linalg::Matrix;
use crate::metrics::{evaluate_pairs, EstimateRecord, LinkageQuality};
use crate::mixture::{gt_da, slw_em, GtConfig, SlwConfig};
use crate::regression::{design, least_squares, ols_tagged, LinearFit, Method};
use crate::rng::{derive_seed, seeded};
use crate::simgen::{scenario1_schema, Scenario1Config, Scenario1Data, Scenario2Data, F_BLOCK, F_X, F_Y};
use crate::structure::{LinkageStructure, QMatrix, QVariant};
use crate::weighting::{
    chambers_fit, estimate_lambda_audit, hl_estimator, jackknife_variance, sw_estimator, ChambersVariant, EleModel,
    HlBlock,
};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default, deny_unknown_fields))]
pub struct MethodSettings {
    pub em_tol: f64,
    pub em_max_iter: usize,
    /// Match-weight cutoff for declared links; `None` uses the weight at
    /// which the posterior link probability is one half.
    pub fs_threshold: Option<f64>,
    pub gibbs_iter: usize,
    pub gibbs_burn_in: usize,
    /// Linkage samples passed to the multiple-imputation combiner.
    pub mi_samples: usize,
    pub audit_fraction: f64,
    pub gt_iter: usize,
    pub gt_burn_in: usize,
    pub gt_mi_samples: usize,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            em_tol: 1e-6,
            em_max_iter: 1000,
            fs_threshold: None,
            gibbs_iter: 1000,
            gibbs_burn_in: 500,
            mi_samples: 50,
            audit_fraction: 0.5,
            gt_iter: 2000,
            gt_burn_in: 1000,
            gt_mi_samples: 100,
        }
    }
}

fn record_from_fit(fit: &LinearFit, k: usize, truth: f64, seed: u64) -> EstimateRecord {
    EstimateRecord {
        method: fit.method,
        replication: 0,
        seed,
        estimate: fit.beta[k],
        se: fit.se(k),
        ci: fit.ci[k],
        truth,
        diagnostics: fit.diagnostics.clone(),
    }
}

fn record_from_pooled(method: Method, p: &PooledEstimate, truth: f64, seed: u64, diagnostics: Vec<String>) -> EstimateRecord {
    EstimateRecord { method, replication: 0, seed, estimate: p.point, se: p.se(), ci: p.ci, truth, diagnostics }
}

/// Classical no-intercept slope and its variance.
fn slope_and_variance(y: &[f64], x: &[f64]) -> Result<(f64, f64)> {
    let n = y.len();
    if n < 3 {
        return Err(invalid("fewer than three linked pairs"));
    }
    let (b, rss) = least_squares(y, &design(x))?;
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    Ok((b[0], rss / (n - 1) as f64 / sxx))
}

/// Everything one replication produced.
#[derive(Debug, Clone)]
pub struct ReplicationResults {
    pub estimates: Vec<(Method, Result<EstimateRecord>)>,
    /// Quality of the Fellegi-Sunter links, when they were computed.
    pub linkage: Option<LinkageQuality>,
}

// ---------------------------------------------------------------------------
// scenario 1

/// Blocked comparison sets with the analysis variables they need.
#[derive(Debug, Clone)]
pub struct LinkageProblem {
    pub sets: Vec<ComparisonSet>,
    pub y_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub beta_true: f64,
}

impl LinkageProblem {
    pub fn from_data(data: &Scenario1Data, cfg: &Scenario1Config) -> Result<Self> {
        let blocks = block_partition(&data.file_a, &data.file_b, F_BLOCK)?;
        let sets = build_comparisons(&data.file_a, &data.file_b, &scenario1_schema(cfg.dp), &blocks)?;
        Ok(Self {
            sets,
            y_a: data.file_a.real_column(F_Y)?,
            x_b: data.file_b.real_column(F_X)?,
            beta_true: data.beta_true,
        })
    }

    /// `(row in A, row in B)` of a pair given in a set's oriented indices.
    pub fn original_pair(&self, s: usize, i: usize, j: usize) -> (usize, usize) {
        let set = &self.sets[s];
        if set.swapped {
            (set.b_rows[j], set.a_rows[i])
        } else {
            (set.a_rows[i], set.b_rows[j])
        }
    }

    fn pairs_of(&self, s: usize, z: &LinkageStructure) -> Vec<(usize, usize)> {
        z.links().map(|(i, j)| self.original_pair(s, i, j)).collect()
    }

    fn regress(&self, pairs: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
        pairs.iter().map(|&(a, b)| (self.y_a[a], self.x_b[b])).unzip()
    }

    fn pair_data(&self, s: usize) -> PairData {
        let set = &self.sets[s];
        if set.swapped {
            PairData {
                a: set.a_rows.iter().map(|&r| self.x_b[r]).collect(),
                b: set.b_rows.iter().map(|&r| self.y_a[r]).collect(),
                outcome_on_a: false,
            }
        } else {
            PairData {
                a: set.a_rows.iter().map(|&r| self.y_a[r]).collect(),
                b: set.b_rows.iter().map(|&r| self.x_b[r]).collect(),
                outcome_on_a: true,
            }
        }
    }
}

/// Fellegi-Sunter fits, one per block.
#[derive(Debug, Clone)]
pub struct FsLinkage {
    pub params: Vec<FsParams>,
    /// Declared links per block as original `(A row, B row)` pairs.
    pub links: Vec<Vec<(usize, usize)>>,
    pub diagnostics: Vec<String>,
}

/// All pairs of all blocks as one pattern set, for a pooled fit.
fn pooled_set(sets: &[ComparisonSet]) -> Result<ComparisonSet> {
    let first = sets.first().ok_or_else(|| invalid("no paired blocks"))?;
    let levels: Vec<Vec<Option<u8>>> = sets
        .iter()
        .flat_map(|s| &s.vectors)
        .map(|v| v.levels.iter().zip(&v.missing).map(|(&l, &m)| (!m).then_some(l)).collect())
        .collect();
    ComparisonSet::from_levels(1, levels.len(), first.level_counts.clone(), levels)
}

pub fn fs_link(problem: &LinkageProblem, settings: &MethodSettings) -> Result<FsLinkage> {
    let mut pooled: Option<FsParams> = None;
    let mut diagnostics = Vec::new();
    let mut params = Vec::with_capacity(problem.sets.len());
    let mut links = Vec::with_capacity(problem.sets.len());
    for (s, set) in problem.sets.iter().enumerate() {
        let fit = FsParams::initial(set).and_then(|init| em_fit(set, &init, settings.em_tol, settings.em_max_iter));
        let p = match fit {
            Ok(f) => f.params,
            Err(e) => {
                diagnostics.push(alloc::format!("block {s}: {e}; using the pooled fit"));
                if pooled.is_none() {
                    let all = pooled_set(&problem.sets)?;
                    let init = FsParams::initial(&all)?;
                    pooled = Some(em_fit(&all, &init, settings.em_tol, settings.em_max_iter)?.params);
                }
                pooled.clone().expect("pooled fit present")
            }
        };
        let w = match_weights(&p, set)?;
        let z = assign_one_to_one(&w, set.n_a, set.n_b, settings.fs_threshold.unwrap_or_else(|| default_threshold(&p)))?;
        links.push(problem.pairs_of(s, &z));
        params.push(p);
    }
    Ok(FsLinkage { params, links, diagnostics })
}

/// Naive least squares on the Fellegi-Sunter links.
pub fn fs_naive(problem: &LinkageProblem, fs: &FsLinkage, method: Method) -> Result<LinearFit> {
    let pairs: Vec<_> = fs.links.iter().flatten().copied().collect();
    let (y, x) = problem.regress(&pairs);
    let mut fit = ols_tagged(&y, &design(&x), method)?;
    fit.diagnostics.extend(fs.diagnostics.iter().cloned());
    Ok(fit)
}

/// Posterior link probabilities of one block with A records as rows.
pub fn block_q(problem: &LinkageProblem, fs: &FsLinkage, s: usize) -> Result<QMatrix> {
    let set = &problem.sets[s];
    let q = posterior_q(&fs.params[s], set)?;
    if !set.swapped {
        return Ok(q);
    }
    let mut t = vec![0.0; set.n_a * set.n_b];
    for i in 0..set.n_a {
        for j in 0..set.n_b {
            t[j * set.n_a + i] = q.get(i, j);
        }
    }
    QMatrix::new(set.n_b, set.n_a, t, QVariant::Full)
}

/// Rows and columns of a block in A/B orientation.
pub fn block_rows(problem: &LinkageProblem, s: usize) -> (&[usize], &[usize]) {
    let set = &problem.sets[s];
    if set.swapped {
        (&set.b_rows, &set.a_rows)
    } else {
        (&set.a_rows, &set.b_rows)
    }
}

pub fn hl_fit(problem: &LinkageProblem, fs: &FsLinkage, method: Method) -> Result<LinearFit> {
    let keep = match method {
        Method::Hlf => None,
        Method::Hl2 => Some(2),
        Method::Hl1 => Some(1),
        _ => return Err(Error::IncompatibleMethod(alloc::format!("{method} is not a weighting variant"))),
    };
    let mut blocks = Vec::with_capacity(problem.sets.len());
    for s in 0..problem.sets.len() {
        let q = block_q(problem, fs, s)?;
        let q = match keep {
            Some(k) => q.truncate(k)?,
            None => q,
        }
        .normalize_rows()?;
        let (ra, rb) = block_rows(problem, s);
        let y = ra.iter().map(|&r| problem.y_a[r]).collect();
        let x: Vec<f64> = rb.iter().map(|&r| problem.x_b[r]).collect();
        blocks.push(HlBlock::new(y, design(&x), q)?);
    }
    let mut fit = hl_estimator(&blocks, method)?;
    fit.diagnostics.extend(fs.diagnostics.iter().cloned());
    Ok(fit)
}

/// SW on the declared links, with the delete-one-block jackknife covariance.
pub fn sw_fit(problem: &LinkageProblem, fs: &FsLinkage) -> Result<LinearFit> {
    let qs: Vec<QMatrix> = (0..problem.sets.len()).map(|s| block_q(problem, fs, s)).collect::<Result<_>>()?;
    let positions: Vec<(Vec<usize>, Vec<usize>)> = (0..problem.sets.len())
        .map(|s| {
            let (ra, rb) = block_rows(problem, s);
            let pa = fs.links[s].iter().map(|(a, _)| ra.iter().position(|r| r == a).expect("row in block")).collect();
            let pb = fs.links[s].iter().map(|(_, b)| rb.iter().position(|r| r == b).expect("row in block")).collect();
            (pa, pb)
        })
        .collect();
    let run = |skip: Option<usize>| -> Result<LinearFit> {
        let used: Vec<usize> = (0..problem.sets.len()).filter(|&s| Some(s) != skip).collect();
        let n: usize = used.iter().map(|&s| fs.links[s].len()).sum();
        let mut q = vec![0.0; n * n];
        let (mut y, mut x) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let mut off = 0;
        for &s in &used {
            let (pa, pb) = &positions[s];
            for (k, &ia) in pa.iter().enumerate() {
                for (l, &jb) in pb.iter().enumerate() {
                    q[(off + k) * n + off + l] = qs[s].get(ia, jb);
                }
            }
            let (yb, xb) = problem.regress(&fs.links[s]);
            y.extend(yb);
            x.extend(xb);
            off += pa.len();
        }
        let q = QMatrix::new(n, n, q, QVariant::Full)?;
        sw_estimator(&y, &design(&x), &q, &Matrix::identity(n))
    };
    let full = run(None)?;
    let jk = jackknife_variance(problem.sets.len(), |b| run(Some(b)).map(|f| f.beta))?;
    let mut fit = LinearFit::new(Method::Sw, full.beta, jk.cov, None)?;
    fit.diagnostics = jk.diagnostics;
    fit.diagnostics.extend(fs.diagnostics.iter().cloned());
    Ok(fit)
}

fn gibbs_config(settings: &MethodSettings, seed: u64) -> Result<GibbsConfig> {
    let kept = settings.gibbs_iter.saturating_sub(settings.gibbs_burn_in);
    if settings.mi_samples < 2 || kept < settings.mi_samples {
        return Err(invalid("the Gibbs budget must leave at least mi_samples draws"));
    }
    Ok(GibbsConfig {
        n_iter: settings.gibbs_iter,
        burn_in: settings.gibbs_burn_in,
        thin: kept / settings.mi_samples,
        seed,
        mode: MuMode::Learn { dirichlet: 1.0 },
    })
}

/// Pool the `m`-th draw of every block and combine the per-draw slopes.
fn combine_linkage_draws(problem: &LinkageProblem, draws: &[PosteriorLinkageSamples], m: usize) -> Result<PooledEstimate> {
    let mut est = Vec::with_capacity(m);
    for k in 0..m {
        let mut pairs = Vec::new();
        for (s, d) in draws.iter().enumerate() {
            pairs.extend(problem.pairs_of(s, &d.samples[k]));
        }
        let (y, x) = problem.regress(&pairs);
        est.push(slope_and_variance(&y, &x)?);
    }
    mi_combine(&est)
}

pub fn sl_fit(problem: &LinkageProblem, settings: &MethodSettings, seed: u64) -> Result<PooledEstimate> {
    let draws = problem
        .sets
        .iter()
        .enumerate()
        .map(|(s, set)| gibbs_sl(set, &BipartitePrior::default(), &gibbs_config(settings, derive_seed(seed, &[s as u64]))?))
        .collect::<Result<Vec<_>>>()?;
    combine_linkage_draws(problem, &draws, settings.mi_samples)
}

pub fn ksg_fit(problem: &LinkageProblem, settings: &MethodSettings, seed: u64) -> Result<(PooledEstimate, Vec<String>)> {
    let mut draws = Vec::with_capacity(problem.sets.len());
    let mut diagnostics = Vec::new();
    for (s, set) in problem.sets.iter().enumerate() {
        let cfg = KsgConfig {
            gibbs: gibbs_config(settings, derive_seed(seed, &[s as u64]))?,
            regression_prior: RegressionPrior::Improper,
            init: None,
        };
        let out = da_ksg(set, &problem.pair_data(s), &BipartitePrior::default(), &cfg)?;
        if out.frozen_m + out.frozen_u > 0 {
            diagnostics.push(alloc::format!(
                "block {s}: regression held fixed in {} link and {} non-link sweeps",
                out.frozen_m,
                out.frozen_u
            ));
        }
        draws.push(out.linkage);
    }
    Ok((combine_linkage_draws(problem, &draws, settings.mi_samples)?, diagnostics))
}

/// Run the requested scenario-1 methods on one generated replication.
pub fn run_scenario1(
    data: &Scenario1Data,
    cfg: &Scenario1Config,
    methods: &[Method],
    settings: &MethodSettings,
    seed: u64,
) -> Result<ReplicationResults> {
    if let Some(m) = methods.iter().find(|m| !m.scenarios().contains(&1)) {
        return Err(Error::IncompatibleMethod(alloc::format!("{m} in scenario 1")));
    }
    let problem = LinkageProblem::from_data(data, cfg)?;
    let truth = problem.beta_true;
    let needs_fs = methods.iter().any(|m| matches!(m, Method::FsNaive | Method::Naive | Method::Hlf | Method::Hl2 | Method::Hl1 | Method::Sw));
    let fs = if needs_fs { Some(fs_link(&problem, settings)) } else { None };
    let mut out = Vec::with_capacity(methods.len());
    for (idx, &m) in methods.iter().enumerate() {
        let mseed = derive_seed(seed, &[idx as u64 + 1]);
        let with_fs = |f: &dyn Fn(&FsLinkage) -> Result<LinearFit>| -> Result<EstimateRecord> {
            let fs = fs.as_ref().expect("fs requested").as_ref().map_err(Clone::clone)?;
            Ok(record_from_fit(&f(fs)?, 0, truth, mseed))
        };
        let rec = match m {
            Method::FsNaive | Method::Naive => with_fs(&|fs| fs_naive(&problem, fs, m)),
            Method::Hlf | Method::Hl2 | Method::Hl1 => with_fs(&|fs| hl_fit(&problem, fs, m)),
            Method::Sw => with_fs(&|fs| sw_fit(&problem, fs)),
            Method::Sl => sl_fit(&problem, settings, mseed).map(|p| record_from_pooled(m, &p, truth, mseed, Vec::new())),
            Method::Ksg => ksg_fit(&problem, settings, mseed).map(|(p, d)| record_from_pooled(m, &p, truth, mseed, d)),
            _ => unreachable!("scenario checked above"),
        };
        out.push((m, rec));
    }
    let linkage = match &fs {
        Some(Ok(fs)) => {
            let pairs: Vec<_> = fs.links.iter().flatten().copied().collect();
            Some(evaluate_pairs(&pairs, &data.true_links))
        }
        _ => None,
    };
    Ok(ReplicationResults { estimates: out, linkage })
}

// ---------------------------------------------------------------------------
// scenario 2

pub fn audit_model(data: &Scenario2Data, fraction: f64, seed: u64) -> Result<(EleModel, Vec<String>)> {
    let truth = data.file.truth.as_ref().ok_or_else(|| invalid("the audit needs the correct-link indicators"))?;
    let mut rng = seeded(seed);
    let (mut lambdas, mut sizes, mut audited, mut notes) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (b, rows) in data.file.block_rows().iter().enumerate() {
        let correct: Vec<bool> = rows.iter().map(|&r| truth[r]).collect();
        let a = estimate_lambda_audit(&correct, fraction, &mut rng)?;
        if a.clamped {
            notes.push(alloc::format!("block {}: audited lambda clamped to {}", b + 1, a.lambda));
        }
        lambdas.push(a.lambda);
        sizes.push(rows.len());
        audited.push(Some(a.audited));
    }
    Ok((EleModel::new(lambdas, sizes, audited)?, notes))
}

/// Run the requested scenario-2 methods on one generated file.
pub fn run_scenario2(
    data: &Scenario2Data,
    methods: &[Method],
    settings: &MethodSettings,
    seed: u64,
) -> Result<ReplicationResults> {
    if let Some(m) = methods.iter().find(|m| !m.scenarios().contains(&2)) {
        return Err(Error::IncompatibleMethod(alloc::format!("{m} in scenario 2")));
    }
    let f = &data.file;
    let truth = data.beta_true;
    let x = design(&f.x);
    let audit = methods
        .iter()
        .any(|m| matches!(m, Method::ChR | Method::ChL | Method::ChB))
        .then(|| audit_model(data, settings.audit_fraction, derive_seed(seed, &[0])));
    let mut out = Vec::with_capacity(methods.len());
    for (idx, &m) in methods.iter().enumerate() {
        let mseed = derive_seed(seed, &[idx as u64 + 1]);
        let rec = match m {
            Method::Naive => ols_tagged(&f.y, &x, Method::Naive).map(|fit| record_from_fit(&fit, 0, truth, mseed)),
            Method::ChR | Method::ChL | Method::ChB => {
                let variant = match m {
                    Method::ChR => ChambersVariant::ChR,
                    Method::ChL => ChambersVariant::ChL,
                    _ => ChambersVariant::ChB,
                };
                audit.as_ref().expect("audit requested").as_ref().map_err(Clone::clone).and_then(|(ele, notes)| {
                    let mut fit = chambers_fit(&f.y, &x, &f.block, ele, variant, None)?;
                    fit.diagnostics.extend(notes.iter().cloned());
                    Ok(record_from_fit(&fit, 0, truth, mseed))
                })
            }
            Method::Gt => gt_estimate(data, settings, mseed),
            Method::Slw => slw_em(f, &SlwConfig { seed: mseed, ..SlwConfig::default() })
                .map(|fit| record_from_fit(&fit.slope_fit, 1, truth, mseed)),
            _ => unreachable!("scenario checked above"),
        };
        out.push((m, rec));
    }
    Ok(ReplicationResults { estimates: out, linkage: None })
}

fn gt_estimate(data: &Scenario2Data, settings: &MethodSettings, seed: u64) -> Result<EstimateRecord> {
    let cfg = GtConfig { n_iter: settings.gt_iter, burn_in: settings.gt_burn_in, seed, ..GtConfig::default() };
    let samples = gt_da(&data.file, &cfg)?;
    let est = samples.completed_estimates(&data.file);
    let step = (est.len() / settings.gt_mi_samples.max(2)).max(1);
    let thinned: Vec<(f64, f64)> = est.iter().step_by(step).copied().collect();
    let pooled = mi_combine(&thinned)?;
    let mut diagnostics = Vec::new();
    if samples.frozen > 0 {
        diagnostics.push(alloc::format!("{} sweeps with an empty class", samples.frozen));
    }
    Ok(record_from_pooled(Method::Gt, &pooled, data.beta_true, seed, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{gen_scenario1, gen_scenario2, Scenario2Config};

    #[test]
    fn scenario1_runs_every_method_on_clean_data() {
        let cfg = Scenario1Config { n_a: 60, n_b: 90, n_blocks: 3, error_level: 0.0, seed: 2, ..Default::default() };
        let data = gen_scenario1(&cfg).unwrap();
        let settings = MethodSettings { gibbs_iter: 200, gibbs_burn_in: 100, mi_samples: 20, ..Default::default() };
        let methods = [Method::FsNaive, Method::Naive, Method::Sl, Method::Ksg, Method::Hlf, Method::Hl2, Method::Hl1, Method::Sw];
        let res = run_scenario1(&data, &cfg, &methods, &settings, 1).unwrap();
        assert!(res.linkage.unwrap().f1 > 0.9);
        for (m, r) in res.estimates {
            let r = r.unwrap_or_else(|e| panic!("{m}: {e}"));
            assert!((r.estimate - 1.8).abs() < 0.3, "{m} {}", r.estimate);
            assert!(r.se > 0.0 && r.ci.0 < r.estimate && r.estimate < r.ci.1);
        }
    }

    #[test]
    fn fs_links_are_accurate_on_clean_data() {
        let cfg = Scenario1Config { error_level: 0.0, seed: 4, ..Default::default() };
        let data = gen_scenario1(&cfg).unwrap();
        let problem = LinkageProblem::from_data(&data, &cfg).unwrap();
        let fs = fs_link(&problem, &MethodSettings::default()).unwrap();
        let pairs: Vec<_> = fs.links.iter().flatten().copied().collect();
        let q = crate::metrics::evaluate_pairs(&pairs, &data.true_links);
        assert!(q.precision > 0.95 && q.recall > 0.95, "{q:?}");
    }

    #[test]
    fn scenario2_runs_every_method() {
        let data = gen_scenario2(&Scenario2Config { seed: 3, ..Default::default() }).unwrap();
        let settings = MethodSettings { gt_iter: 300, gt_burn_in: 100, ..Default::default() };
        let methods = [Method::Naive, Method::ChR, Method::ChL, Method::ChB, Method::Gt, Method::Slw];
        for (m, r) in run_scenario2(&data, &methods, &settings, 5).unwrap().estimates {
            let r = r.unwrap_or_else(|e| panic!("{m}: {e}"));
            let tol = if m == Method::Naive { 0.4 } else { 0.2 };
            assert!((r.estimate - 1.8).abs() < tol, "{m} {}", r.estimate);
        }
    }

    #[test]
    fn incompatible_methods_are_rejected() {
        let data = gen_scenario2(&Scenario2Config::default()).unwrap();
        assert!(matches!(
            run_scenario2(&data, &[Method::Sl], &MethodSettings::default(), 0),
            Err(Error::IncompatibleMethod(_))
        ));
    }
}
