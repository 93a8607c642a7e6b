//! Plain-text comparison tables from `metrics.csv` and `records.csv`.

use std::collections::BTreeMap;
use std::fmt::Write;

use reclink_core::metrics::{anova_screen, mean_of_cells, Summary};

use crate::error::{CliError, Result};
use crate::harness::{MetricsRow, RecordRow};

fn methods_in_order<'a>(names: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for n in names {
        if !out.contains(&n) {
            out.push(n);
        }
    }
    out
}

/// Per-method averages over valid cells, each cell weighted equally.
pub fn method_table(metrics: &[MetricsRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>6} {:>10} {:>10} {:>9} {:>8}", "method", "cells", "bias", "se", "coverage", "invalid");
    for m in methods_in_order(metrics.iter().map(|r| r.method.as_str())) {
        let rows: Vec<&MetricsRow> = metrics.iter().filter(|r| r.method == m).collect();
        let cells: Vec<Summary> = rows
            .iter()
            .filter(|r| r.status == "ok")
            .filter_map(|r| {
                Some(Summary {
                    mean_bias: r.mean_bias?,
                    mean_se: r.mean_se?,
                    coverage: r.coverage?,
                    sd_estimate: r.sd_estimate?,
                    n_valid: r.n_valid,
                })
            })
            .collect();
        let invalid = rows.iter().filter(|r| r.status != "ok").count();
        match mean_of_cells(&cells) {
            Some(a) => {
                let _ = writeln!(
                    s,
                    "{m:<10} {:>6} {:>10.3} {:>10.3} {:>9.2} {invalid:>8}",
                    cells.len(),
                    a.mean_bias,
                    a.mean_se,
                    a.coverage
                );
            }
            None => {
                let _ = writeln!(s, "{m:<10} {:>6} {:>10} {:>10} {:>9} {invalid:>8}", 0, "-", "-", "-");
            }
        }
    }
    s
}

fn parse_factors(label: &str) -> Vec<(String, String)> {
    label
        .split(';')
        .filter(|p| !p.is_empty())
        .filter_map(|p| p.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

/// Grid factors ranked by their main-effect F statistic on each
/// per-replication metric, method by method.
pub fn factor_screen(metrics: &[MetricsRow], records: &[RecordRow]) -> Result<String> {
    let mut cell_factors: BTreeMap<usize, Vec<(String, String)>> = BTreeMap::new();
    for r in metrics {
        cell_factors.entry(r.cell).or_insert_with(|| parse_factors(&r.factors));
    }
    let mut s = String::new();
    for m in methods_in_order(records.iter().map(|r| r.method.as_str())) {
        let rows: Vec<&RecordRow> = records.iter().filter(|r| r.method == m && r.estimate.is_some()).collect();
        let Some(first) = rows.first() else { continue };
        let names: Vec<String> = cell_factors
            .get(&first.cell)
            .ok_or_else(|| CliError::Input(format!("cell {} missing from metrics", first.cell)))?
            .iter()
            .map(|(k, _)| k.clone())
            .collect();
        let mut levels = Vec::with_capacity(rows.len());
        for r in &rows {
            let f = cell_factors.get(&r.cell).ok_or_else(|| CliError::Input(format!("cell {} missing from metrics", r.cell)))?;
            levels.push(f.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());
        }
        // screen only factors that vary among this method's records
        let varying: Vec<usize> =
            (0..names.len()).filter(|&k| levels.iter().any(|l| l[k] != levels[0][k])).collect();
        if varying.is_empty() {
            continue;
        }
        let used: Vec<&str> = varying.iter().map(|&k| names[k].as_str()).collect();
        let lv: Vec<Vec<String>> = levels.iter().map(|l| varying.iter().map(|&k| l[k].clone()).collect()).collect();
        let series: [(&str, Vec<f64>); 3] = [
            ("bias", rows.iter().map(|r| r.estimate.unwrap_or(0.0) - r.truth.unwrap_or(0.0)).collect()),
            ("se", rows.iter().map(|r| r.se.unwrap_or(0.0)).collect()),
            ("coverage", rows.iter().map(|r| f64::from(u8::from(r.covered == Some(true)))).collect()),
        ];
        for (metric, y) in series {
            let ranked = anova_screen(&used, &lv, &y)?;
            let list: Vec<String> = ranked.iter().map(|a| format!("{} (F={:.1})", a.factor, a.f)).collect();
            let _ = writeln!(s, "{m:<10} {metric:<9} {}", list.join(", "));
        }
    }
    Ok(s)
}
