//! Two-class comparison-vector mixture fitted by EM.

use alloc::vec;
use alloc::vec::Vec;

use crate::comparison::{ComparisonSet, PatternTable, MISSING_LEVEL};
use crate::error::{invalid, Error, Result};
use crate::math::ln;
use crate::structure::{QMatrix, QVariant};

/// Floor applied to m/u probabilities when forming weights and posteriors.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FsParams {
    nu: f64,
    m: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(invalid(alloc::format!("{what} has entries outside [0, 1]")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(invalid(alloc::format!("{what} sums to {s}")));
    }
    Ok(())
}

impl FsParams {
    pub fn new(nu: f64, m: Vec<Vec<f64>>, u: Vec<Vec<f64>>) -> Result<Self> {
        if !(nu > 0.0 && nu < 1.0) {
            return Err(invalid(alloc::format!("nu = {nu} outside (0, 1)")));
        }
        if m.len() != u.len() || m.is_empty() {
            return Err(invalid("m and u need one simplex per field"));
        }
        for (k, (mk, uk)) in m.iter().zip(&u).enumerate() {
            if mk.len() != uk.len() {
                return Err(invalid(alloc::format!("field {k}: m and u have different level counts")));
            }
            check_simplex(mk, "m simplex")?;
            check_simplex(uk, "u simplex")?;
        }
        Ok(Self { nu, m, u })
    }

    /// Starting values: `nu = min(n_a, n_b) / (n_a n_b)`, m puts 0.9 on full
    /// agreement, u follows the empirical level frequencies.
    pub fn initial(set: &ComparisonSet) -> Result<Self> {
        let pairs = set.n_a * set.n_b;
        if pairs == 0 {
            return Err(invalid("empty comparison set"));
        }
        let mut nu = set.n_a.min(set.n_b) as f64 / pairs as f64;
        if nu >= 1.0 {
            nu = 0.5;
        }
        let mut m = Vec::with_capacity(set.n_fields());
        let mut u = Vec::with_capacity(set.n_fields());
        for (k, &levels) in set.level_counts.iter().enumerate() {
            let mut mk = vec![0.1 / (levels - 1) as f64; levels];
            mk[0] = 0.9;
            let mut freq = vec![0.0; levels];
            let mut seen = 0.0;
            for v in set.vectors.iter().filter(|v| !v.missing[k]) {
                freq[usize::from(v.levels[k])] += 1.0;
                seen += 1.0;
            }
            if seen > 0.0 {
                freq.iter_mut().for_each(|f| *f /= seen);
            } else {
                freq.iter_mut().for_each(|f| *f = 1.0 / levels as f64);
            }
            m.push(mk);
            u.push(freq);
        }
        Ok(Self { nu, m, u })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn m_probs(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn u_probs(&self) -> &[Vec<f64>] {
        &self.u
    }

    fn swapped(&self) -> Self {
        Self { nu: 1.0 - self.nu, m: self.u.clone(), u: self.m.clone() }
    }

    /// `(m(gamma), u(gamma))` for a pattern; missing fields contribute no factor.
    fn pattern_probs(&self, pattern: &[u8], floor: f64) -> (f64, f64) {
        let (mut pm, mut pu) = (1.0, 1.0);
        for (k, &l) in pattern.iter().enumerate() {
            if l != MISSING_LEVEL {
                pm *= self.m[k][usize::from(l)].max(floor);
                pu *= self.u[k][usize::from(l)].max(floor);
            }
        }
        (pm, pu)
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut d = (self.nu - other.nu).abs();
        for (a, b) in self.m.iter().flatten().zip(other.m.iter().flatten()) {
            d = d.max((a - b).abs());
        }
        for (a, b) in self.u.iter().flatten().zip(other.u.iter().flatten()) {
            d = d.max((a - b).abs());
        }
        d
    }

    /// True when some field gives full agreement more mass among links.
    pub fn is_identified(&self) -> bool {
        self.m.iter().zip(&self.u).any(|(m, u)| m[0] > u[0])
    }
}

/// `log(m(gamma) / u(gamma))` with floored level probabilities.
pub(crate) fn pattern_log_ratio(m: &[Vec<f64>], u: &[Vec<f64>], pattern: &[u8]) -> f64 {
    let mut w = 0.0;
    for (k, &l) in pattern.iter().enumerate() {
        if l != MISSING_LEVEL {
            w += ln(m[k][usize::from(l)].max(PROB_FLOOR)) - ln(u[k][usize::from(l)].max(PROB_FLOOR));
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: FsParams,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood at the start and after every iteration.
    pub loglik: Vec<f64>,
}

pub(crate) fn check_shape(params: &FsParams, set: &ComparisonSet) -> Result<()> {
    if params.m.len() != set.n_fields() || params.m.iter().zip(&set.level_counts).any(|(m, &l)| m.len() != l) {
        return Err(Error::Schema("parameters do not match the comparison fields".into()));
    }
    Ok(())
}

fn table_loglik(params: &FsParams, table: &PatternTable) -> f64 {
    table
        .patterns
        .iter()
        .zip(&table.counts)
        .map(|(p, &c)| {
            let (pm, pu) = params.pattern_probs(p, 0.0);
            c as f64 * ln(params.nu * pm + (1.0 - params.nu) * pu)
        })
        .sum()
}

pub fn log_likelihood(params: &FsParams, set: &ComparisonSet) -> Result<f64> {
    check_shape(params, set)?;
    Ok(table_loglik(params, &set.patterns()))
}

fn em_step(params: &FsParams, table: &PatternTable, level_counts: &[usize]) -> FsParams {
    let mut m_acc: Vec<Vec<f64>> = level_counts.iter().map(|&l| vec![0.0; l]).collect();
    let mut u_acc = m_acc.clone();
    let (mut g_sum, mut total) = (0.0, 0.0);
    for (p, &c) in table.patterns.iter().zip(&table.counts) {
        let (pm, pu) = params.pattern_probs(p, 0.0);
        let num = params.nu * pm;
        let den = num + (1.0 - params.nu) * pu;
        let g = if den > 0.0 { num / den } else { params.nu };
        let c = c as f64;
        g_sum += c * g;
        total += c;
        for (k, &l) in p.iter().enumerate() {
            if l != MISSING_LEVEL {
                m_acc[k][usize::from(l)] += c * g;
                u_acc[k][usize::from(l)] += c * (1.0 - g);
            }
        }
    }
    let normalize = |acc: Vec<Vec<f64>>, prev: &[Vec<f64>]| -> Vec<Vec<f64>> {
        acc.into_iter()
            .zip(prev)
            .map(|(mut a, p)| {
                let s: f64 = a.iter().sum();
                if s > 0.0 {
                    a.iter_mut().for_each(|x| *x /= s);
                    a
                } else {
                    p.clone()
                }
            })
            .collect()
    };
    FsParams {
        nu: g_sum / total,
        m: normalize(m_acc, &params.m),
        u: normalize(u_acc, &params.u),
    }
}

/// EM for the two-class mixture under conditional independence.
///
/// Stops when the largest parameter change drops below `tol`. Classes are
/// swapped at the end if no field favours agreement among links.
pub fn em_fit(set: &ComparisonSet, init: &FsParams, tol: f64, max_iter: usize) -> Result<EmFit> {
    check_shape(init, set)?;
    let table = set.patterns();
    if table.patterns.len() < 2 {
        return Err(Error::NonIdentifiable("all comparison vectors are identical".into()));
    }
    let mut params = init.clone();
    let mut loglik = vec![table_loglik(&params, &table)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = em_step(&params, &table, &set.level_counts);
        iterations += 1;
        let change = next.max_abs_diff(&params);
        params = next;
        let ll = table_loglik(&params, &table);
        let prev = *loglik.last().unwrap_or(&ll);
        debug_assert!(ll >= prev - 1e-9 * (1.0 + prev.abs()), "EM log-likelihood fell from {prev} to {ll}");
        loglik.push(ll);
        if change < tol {
            converged = true;
            break;
        }
    }
    // keep nu strictly inside (0, 1)
    params.nu = params.nu.clamp(1e-12, 1.0 - 1e-12);
    if !params.is_identified() {
        params = params.swapped();
    }
    Ok(EmFit { params, iterations, converged, loglik })
}

/// `w_ij = log(m(gamma_ij) / u(gamma_ij))`, row-major over the block.
pub fn match_weights(params: &FsParams, set: &ComparisonSet) -> Result<Vec<f64>> {
    check_shape(params, set)?;
    let table = set.patterns();
    let w: Vec<f64> = table
        .patterns
        .iter()
        .map(|p| {
            let (pm, pu) = params.pattern_probs(p, PROB_FLOOR);
            ln(pm) - ln(pu)
        })
        .collect();
    Ok(table.pair_pattern.iter().map(|&p| w[p as usize]).collect())
}

/// `q_ij = nu m / (nu m + (1 - nu) u)`.
pub fn posterior_q(params: &FsParams, set: &ComparisonSet) -> Result<QMatrix> {
    check_shape(params, set)?;
    let table = set.patterns();
    let q: Vec<f64> = table
        .patterns
        .iter()
        .map(|p| {
            let (pm, pu) = params.pattern_probs(p, PROB_FLOOR);
            let num = params.nu * pm;
            (num / (num + (1.0 - params.nu) * pu)).clamp(0.0, 1.0)
        })
        .collect();
    QMatrix::new(
        set.n_a,
        set.n_b,
        table.pair_pattern.iter().map(|&p| q[p as usize]).collect(),
        QVariant::Full,
    )
}

/// Weight at which the posterior link probability equals one half.
pub fn default_threshold(params: &FsParams) -> f64 {
    ln((1.0 - params.nu) / params.nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::exp;
    use crate::rng::seeded;
    use rand::Rng;

    fn binary_params(nu: f64, m: f64, u: f64, fields: usize) -> FsParams {
        FsParams::new(nu, vec![vec![m, 1.0 - m]; fields], vec![vec![u, 1.0 - u]; fields]).unwrap()
    }

    fn set_from(n_a: usize, n_b: usize, counts: Vec<usize>, rows: Vec<Vec<u8>>) -> ComparisonSet {
        let rows = rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
        ComparisonSet::from_levels(n_a, n_b, counts, rows).unwrap()
    }

    #[test]
    fn weights_by_hand() {
        let p = binary_params(0.3, 0.9, 0.1, 2);
        let set = set_from(1, 2, vec![2, 2], vec![vec![0, 0], vec![1, 1]]);
        let w = match_weights(&p, &set).unwrap();
        assert!((w[0] - 2.0 * ln(9.0)).abs() < 1e-12);
        assert!((w[1] - 2.0 * ln(1.0 / 9.0)).abs() < 1e-12);
        let even = binary_params(0.5, 0.5, 0.5, 2);
        assert!(match_weights(&even, &set).unwrap().iter().all(|&w| w == 0.0));
        assert!(posterior_q(&even, &set).unwrap().entries().iter().all(|&q| q == 0.5));
    }

    #[test]
    fn posterior_matches_bayes_rule() {
        let p = FsParams::new(0.2, vec![vec![0.8, 0.2], vec![0.6, 0.3, 0.1]], vec![vec![0.3, 0.7], vec![0.1, 0.3, 0.6]])
            .unwrap();
        let set = set_from(2, 2, vec![2, 3], vec![vec![0, 0], vec![0, 2], vec![1, 1], vec![1, 2]]);
        let q = posterior_q(&p, &set).unwrap();
        for (idx, v) in set.vectors.iter().enumerate() {
            let m = p.m[0][v.levels[0] as usize] * p.m[1][v.levels[1] as usize];
            let u = p.u[0][v.levels[0] as usize] * p.u[1][v.levels[1] as usize];
            let want = 0.2 * m / (0.2 * m + 0.8 * u);
            assert!((q.entries()[idx] - want).abs() < 1e-14);
        }
        let tiny = binary_params(1e-12, 0.9, 0.1, 2);
        assert!(posterior_q(&tiny, &set_from(1, 1, vec![2, 2], vec![vec![0, 0]])).unwrap().get(0, 0) < 1e-9);
    }

    #[test]
    fn missing_fields_contribute_nothing() {
        let p = binary_params(0.3, 0.9, 0.1, 2);
        let set = ComparisonSet::from_levels(1, 1, vec![2, 2], vec![vec![Some(0), None]]).unwrap();
        assert!((match_weights(&p, &set).unwrap()[0] - ln(9.0)).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_is_kept() {
        // 4 links agreeing everywhere among 16 pairs
        let mut rows = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                rows.push(if i == j { vec![0, 0] } else { vec![1, 1] });
            }
        }
        let set = set_from(4, 4, vec![2, 2], rows);
        let init = FsParams::new(0.25, vec![vec![1.0, 0.0]; 2], vec![vec![0.0, 1.0]; 2]).unwrap();
        let fit = em_fit(&set, &init, 1e-6, 500).unwrap();
        assert_eq!(fit.params, init);
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
    }

    #[test]
    fn recovers_separated_classes() {
        let mut rng = seeded(7);
        let mut rows = Vec::new();
        for _ in 0..400 {
            let link = rng.random_bool(0.5);
            rows.push(vec![u8::from(!link); 3]);
        }
        let set = set_from(20, 20, vec![2, 2, 2], rows);
        let truth = set.vectors.iter().filter(|v| v.levels[0] == 0).count() as f64 / 400.0;
        let fit = em_fit(&set, &FsParams::initial(&set).unwrap(), 1e-8, 500).unwrap();
        assert!((fit.params.nu - 0.5).abs() < 0.02 + (truth - 0.5).abs());
        assert!((fit.params.nu - truth).abs() < 1e-6);
        assert!(fit.params.m[0][0] > 0.99);
    }

    #[test]
    fn identical_vectors_are_rejected() {
        let set = set_from(2, 2, vec![2], vec![vec![0]; 4]);
        let init = FsParams::initial(&set).unwrap();
        assert!(matches!(em_fit(&set, &init, 1e-6, 10), Err(Error::NonIdentifiable(_))));
    }

    #[test]
    fn em_beats_a_parameter_grid() {
        let rows = vec![vec![0], vec![1], vec![1], vec![1], vec![1], vec![0], vec![1], vec![0], vec![1], vec![1], vec![0], vec![1]];
        let set = set_from(3, 4, vec![2], rows);
        let fit = em_fit(&set, &FsParams::initial(&set).unwrap(), 1e-10, 5000).unwrap();
        let best_em = *fit.loglik.last().unwrap();
        let mut best_grid = f64::NEG_INFINITY;
        let g = |k: usize| (k as f64 + 0.5) / 50.0;
        for a in 0..50 {
            for b in 0..50 {
                for c in 0..50 {
                    let p = binary_params(g(a), g(b), g(c), 1);
                    best_grid = best_grid.max(log_likelihood(&p, &set).unwrap());
                }
            }
        }
        assert!(best_em >= best_grid - 1e-3, "{best_em} vs {best_grid}");
    }

    #[test]
    fn posterior_equals_responsibilities_at_convergence() {
        let mut rng = seeded(3);
        let rows: Vec<Vec<u8>> = (0..60)
            .map(|_| {
                let link = rng.random_bool(0.2);
                (0..3).map(|_| u8::from(rng.random_bool(if link { 0.1 } else { 0.7 }))).collect()
            })
            .collect();
        let set = set_from(6, 10, vec![2, 2, 2], rows);
        let fit = em_fit(&set, &FsParams::initial(&set).unwrap(), 1e-12, 10_000).unwrap();
        let q = posterior_q(&fit.params, &set).unwrap();
        let w = match_weights(&fit.params, &set).unwrap();
        let nu = fit.params.nu;
        for (qi, wi) in q.entries().iter().zip(&w) {
            let resp = nu * exp(*wi) / (nu * exp(*wi) + 1.0 - nu);
            assert!((qi - resp).abs() < 1e-9);
        }
        let threshold = default_threshold(&fit.params);
        for (qi, wi) in q.entries().iter().zip(&w) {
            assert_eq!(*qi >= 0.5 - 1e-12, *wi >= threshold - 1e-12);
        }
    }
}
