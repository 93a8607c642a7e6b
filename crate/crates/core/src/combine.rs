//! Pooling estimates across completed analyses.

use crate::error::{Error, Result};
use crate::math::{critical_value, sqrt};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledEstimate {
    pub point: f64,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    /// `None` stands for infinite degrees of freedom (normal interval).
    pub df: Option<f64>,
    pub ci: (f64, f64),
    pub m: usize,
}

impl PooledEstimate {
    pub fn se(&self) -> f64 {
        sqrt(self.total)
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci.0 <= truth && truth <= self.ci.1
    }
}

/// Reference distribution for combined intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntervalRule {
    #[default]
    StudentT,
    Normal,
}

fn check(estimates: &[(f64, f64)]) -> Result<()> {
    if estimates.len() < 2 {
        return Err(Error::TooFewReplicates { valid: estimates.len(), needed: 2 });
    }
    if let Some((_, v)) = estimates.iter().find(|(_, v)| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(alloc::format!("variance {v} is negative")));
    }
    Ok(())
}

fn mean_and_ss(estimates: &[(f64, f64)]) -> (f64, f64, f64) {
    let m = estimates.len() as f64;
    let point = estimates.iter().map(|e| e.0).sum::<f64>() / m;
    let within = estimates.iter().map(|e| e.1).sum::<f64>() / m;
    let ss = estimates.iter().map(|e| (e.0 - point) * (e.0 - point)).sum::<f64>();
    (point, within, ss)
}

/// Rubin's rules with the Student-t interval.
pub fn mi_combine(estimates: &[(f64, f64)]) -> Result<PooledEstimate> {
    mi_combine_with(estimates, IntervalRule::StudentT)
}

pub fn mi_combine_with(estimates: &[(f64, f64)], rule: IntervalRule) -> Result<PooledEstimate> {
    check(estimates)?;
    let m = estimates.len() as f64;
    let (point, within, ss) = mean_and_ss(estimates);
    let between = ss / (m - 1.0);
    let inflated = (1.0 + 1.0 / m) * between;
    let total = within + inflated;
    let df = (inflated > 0.0).then(|| {
        let r = 1.0 + within / inflated;
        (m - 1.0) * r * r
    });
    let crit = match rule {
        IntervalRule::StudentT => critical_value(0.95, df),
        IntervalRule::Normal => critical_value(0.95, None),
    };
    let h = crit * sqrt(total);
    Ok(PooledEstimate { point, within, between, total, df, ci: (point - h, point + h), m: estimates.len() })
}

/// Linkage averaging over conditional (mean, variance) pairs: the between
/// term uses divisor `M` and the interval is normal.
pub fn linkage_average(stats: &[(f64, f64)]) -> Result<PooledEstimate> {
    check(stats)?;
    let m = stats.len() as f64;
    let (point, within, ss) = mean_and_ss(stats);
    let between = ss / m;
    let total = within + between;
    let h = critical_value(0.95, None) * sqrt(total);
    Ok(PooledEstimate { point, within, between, total, df: None, ci: (point - h, point + h), m: stats.len() })
}
