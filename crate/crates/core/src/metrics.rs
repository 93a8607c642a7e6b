//! Linkage quality, per-replication estimate records and their summaries,
//! and a main-effects ANOVA screen over simulation factors.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::{powi, sqrt};
use crate::regression::Method;
use crate::structure::LinkageStructure;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageQuality {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub declared: usize,
    pub correct: usize,
    pub true_links: usize,
}

/// Precision, recall and F1 of declared pairs against true pairs.
/// With nothing declared, precision is 1; with no true links, recall is 1.
pub fn evaluate_pairs(declared: &[(usize, usize)], truth: &[(usize, usize)]) -> LinkageQuality {
    let mut t = truth.to_vec();
    t.sort_unstable();
    t.dedup();
    let mut d = declared.to_vec();
    d.sort_unstable();
    d.dedup();
    let correct = d.iter().filter(|p| t.binary_search(p).is_ok()).count();
    let precision = if d.is_empty() { 1.0 } else { correct as f64 / d.len() as f64 };
    let recall = if t.is_empty() { 1.0 } else { correct as f64 / t.len() as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    LinkageQuality { precision, recall, f1, declared: d.len(), correct, true_links: t.len() }
}

pub fn evaluate_linkage(estimate: &LinkageStructure, truth: &LinkageStructure) -> LinkageQuality {
    let d: Vec<_> = estimate.links().collect();
    let t: Vec<_> = truth.links().collect();
    evaluate_pairs(&d, &t)
}

/// One method's result on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub method: Method,
    pub replication: usize,
    pub seed: u64,
    pub estimate: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub truth: f64,
    pub diagnostics: Vec<String>,
}

impl EstimateRecord {
    pub fn bias(&self) -> f64 {
        self.estimate - self.truth
    }

    pub fn covered(&self) -> bool {
        self.ci.0 <= self.truth && self.truth <= self.ci.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean_bias: f64,
    pub mean_se: f64,
    pub coverage: f64,
    /// Monte Carlo standard deviation of the estimates.
    pub sd_estimate: f64,
    pub n_valid: usize,
}

pub fn summarize(records: &[EstimateRecord]) -> Option<Summary> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let mean_bias = records.iter().map(EstimateRecord::bias).sum::<f64>() / n;
    let mean_se = records.iter().map(|r| r.se).sum::<f64>() / n;
    let coverage = records.iter().filter(|r| r.covered()).count() as f64 / n;
    let mean_est = records.iter().map(|r| r.estimate).sum::<f64>() / n;
    let sd_estimate = if records.len() > 1 {
        sqrt(records.iter().map(|r| powi(r.estimate - mean_est, 2)).sum::<f64>() / (n - 1.0))
    } else {
        0.0
    };
    Some(Summary { mean_bias, mean_se, coverage, sd_estimate, n_valid: records.len() })
}

/// Average of per-cell summaries, each cell weighted equally.
pub fn mean_of_cells(cells: &[Summary]) -> Option<Summary> {
    if cells.is_empty() {
        return None;
    }
    let n = cells.len() as f64;
    let avg = |f: fn(&Summary) -> f64| cells.iter().map(f).sum::<f64>() / n;
    Some(Summary {
        mean_bias: avg(|c| c.mean_bias),
        mean_se: avg(|c| c.mean_se),
        coverage: avg(|c| c.coverage),
        sd_estimate: avg(|c| c.sd_estimate),
        n_valid: cells.iter().map(|c| c.n_valid).sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaRow {
    pub factor: String,
    pub df: usize,
    pub ss: f64,
    pub f: f64,
}

/// Sequential (type-I) main-effects ANOVA in the order the factors are given,
/// with treatment dummies. Rows come back sorted by decreasing F. A factor
/// with zero sum of squares has F = 0, including when the residual is zero.
pub fn anova_screen(factor_names: &[&str], levels: &[Vec<String>], y: &[f64]) -> Result<Vec<AnovaRow>> {
    let n = y.len();
    if levels.len() != n || levels.iter().any(|l| l.len() != factor_names.len()) {
        return Err(invalid("one level per factor is needed for every observation"));
    }
    // orthonormal basis grown column by column (modified Gram-Schmidt)
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let add = |col: Vec<f64>, basis: &mut Vec<Vec<f64>>| -> Option<f64> {
        let mut v = col;
        let scale = sqrt(v.iter().map(|a| a * a).sum::<f64>());
        for q in basis.iter() {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = sqrt(v.iter().map(|a| a * a).sum::<f64>());
        if norm <= 1e-10 * scale.max(1.0) {
            return None;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        let proj: f64 = v.iter().zip(y).map(|(a, b)| a * b).sum();
        basis.push(v);
        Some(proj * proj)
    };
    add(alloc::vec![1.0; n], &mut basis);
    let mut rows = Vec::with_capacity(factor_names.len());
    for (k, name) in factor_names.iter().enumerate() {
        let mut distinct: Vec<&String> = levels.iter().map(|l| &l[k]).collect();
        distinct.sort();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(invalid(alloc::format!("factor `{name}` has fewer than two levels")));
        }
        let (mut ss, mut df) = (0.0, 0);
        for lv in &distinct[1..] {
            let col = levels.iter().map(|l| f64::from(u8::from(&l[k] == *lv))).collect();
            if let Some(s) = add(col, &mut basis) {
                ss += s;
                df += 1;
            }
        }
        rows.push(AnovaRow { factor: String::from(*name), df, ss, f: 0.0 });
    }
    let residual: f64 = {
        let total: f64 = y.iter().map(|v| v * v).sum();
        let explained: f64 = basis.iter().map(|q| powi(q.iter().zip(y).map(|(a, b)| a * b).sum::<f64>(), 2)).sum();
        (total - explained).max(0.0)
    };
    let df_e = n.saturating_sub(basis.len());
    for r in &mut rows {
        r.f = if r.ss <= 1e-12 * (1.0 + residual) || r.df == 0 {
            0.0
        } else if df_e == 0 || residual <= 0.0 {
            f64::INFINITY
        } else {
            (r.ss / r.df as f64) / (residual / df_e as f64)
        };
    }
    rows.sort_by(|a, b| b.f.total_cmp(&a.f));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn linkage_quality_conventions() {
        let t = LinkageStructure::new(vec![Some(0), Some(1), None], 3).unwrap();
        let q = evaluate_linkage(&t, &t);
        assert_eq!((q.precision, q.recall, q.f1), (1.0, 1.0, 1.0));
        let none = LinkageStructure::empty(3, 3);
        let q = evaluate_linkage(&none, &t);
        assert_eq!((q.precision, q.recall, q.f1), (1.0, 0.0, 0.0));
        let truth: Vec<_> = (0..10).map(|i| (i, i)).collect();
        assert_eq!(evaluate_pairs(&[], &truth).recall, 0.0);
    }

    #[test]
    fn hand_counted_toy() {
        // two of four declared pairs are true links, two of four true links found
        let truth = [(0, 0), (1, 1), (2, 2), (3, 3)];
        let q = evaluate_pairs(&[(0, 0), (1, 2), (2, 1), (3, 3)], &truth);
        assert_eq!((q.precision, q.recall), (0.5, 0.5));
        let q = evaluate_pairs(&[(0, 0), (1, 1), (2, 2), (3, 3), (4, 0), (5, 1), (6, 2), (7, 3)], &truth);
        assert_eq!((q.precision, q.recall), (0.5, 1.0));
        assert!((q.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    fn rec(estimate: f64, se: f64) -> EstimateRecord {
        EstimateRecord {
            method: Method::Naive,
            replication: 0,
            seed: 0,
            estimate,
            se,
            ci: (estimate - 2.0 * se, estimate + 2.0 * se),
            truth: 1.0,
            diagnostics: vec![],
        }
    }

    #[test]
    fn summaries() {
        let s = summarize(&[rec(1.1, 0.1), rec(0.5, 0.1)]).unwrap();
        assert!((s.mean_bias + 0.2).abs() < 1e-12);
        assert_eq!(s.coverage, 0.5);
        let one = summarize(&[rec(1.0, 0.1)]).unwrap();
        assert_eq!(one.coverage, 1.0);
        let m = mean_of_cells(&[s, one]).unwrap();
        assert!((m.mean_bias + 0.1).abs() < 1e-12);
        assert_eq!(m.coverage, 0.75);
        assert!(summarize(&[]).is_none());
    }

    fn grid(n_rep: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for m in ["LCAR", "NL", "IL"] {
            for dp in ["high", "low"] {
                for _ in 0..n_rep {
                    out.push(vec![dp.to_string(), m.to_string()]);
                }
            }
        }
        out
    }

    #[test]
    fn anova_constant_metric() {
        let lv = grid(4);
        let rows = anova_screen(&["dp", "mechanism"], &lv, &vec![0.3; lv.len()]).unwrap();
        assert!(rows.iter().all(|r| r.f == 0.0));
    }

    #[test]
    fn anova_planted_effect() {
        let lv = grid(10);
        let mut rng = seeded(3);
        let y: Vec<f64> =
            lv.iter().map(|l| f64::from(u8::from(l[1] == "IL")) + 0.1 * (rng.random::<f64>() - 0.5)).collect();
        let rows = anova_screen(&["dp", "mechanism"], &lv, &y).unwrap();
        assert_eq!(rows[0].factor, "mechanism");
        assert_eq!(rows[0].df, 2);
        assert!(rows[0].f > 100.0 * rows[1].f.max(1.0));
    }

    #[test]
    fn anova_null_two_levels() {
        let lv = grid(1);
        let y = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let rows = anova_screen(&["dp", "mechanism"], &lv, &y).unwrap();
        let dp = rows.iter().find(|r| r.factor == "dp").unwrap();
        assert!(dp.f.abs() < 1e-9);
        assert!(anova_screen(&["dp"], &[vec!["a".into()], vec!["a".into()]], &[1.0, 2.0]).is_err());
    }
}
