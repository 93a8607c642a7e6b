//! Parallel experiment runner: every (cell, replication) pair is one job with
//! its own seed; results are merged in job order, so output does not depend
//! on the number of workers.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use reclink_core::methods::{run_scenario1, run_scenario2, ReplicationResults};
use reclink_core::metrics::{summarize, EstimateRecord, LinkageQuality, Summary};
use reclink_core::regression::Method;
use reclink_core::rng::derive_seed;
use reclink_core::simgen::{gen_scenario1, gen_scenario2};
use serde::{Deserialize, Serialize};

use crate::config::{Cell, CellConfig, ExperimentPlan};
use crate::error::{CliError, Result};
use crate::io::Dataset;

/// Seed of one replication of one cell.
pub fn replication_seed(base: u64, cell: usize, replication: usize) -> u64 {
    derive_seed(base, &[cell as u64, replication as u64])
}

impl ExperimentPlan {
    pub fn seed_of(&self, cell: usize, replication: usize) -> u64 {
        replication_seed(self.base_seed, if self.common_seeds { 0 } else { cell }, replication)
    }
}

pub fn generate(config: &CellConfig, seed: u64) -> reclink_core::Result<Dataset> {
    Ok(match config.with_seed(seed) {
        CellConfig::One(c) => Dataset::One(gen_scenario1(&c)?, c),
        CellConfig::Two(c) => Dataset::Two(gen_scenario2(&c)?, c),
    })
}

#[derive(Debug, Clone)]
pub struct JobOutput {
    pub cell: usize,
    pub replication: usize,
    pub seed: u64,
    pub results: std::result::Result<ReplicationResults, String>,
    pub wall: Duration,
}

fn run_job(plan: &ExperimentPlan, cell: &Cell, replication: usize) -> JobOutput {
    let seed = plan.seed_of(cell.index, replication);
    let start = Instant::now();
    let results = generate(&cell.config, seed)
        .and_then(|d| match d {
            Dataset::One(data, cfg) => run_scenario1(&data, &cfg, &plan.methods, &plan.settings, seed),
            Dataset::Two(data, _) => run_scenario2(&data, &plan.methods, &plan.settings, seed),
        })
        .map_err(|e| e.to_string());
    JobOutput { cell: cell.index, replication, seed, results, wall: start.elapsed() }
}

/// One line of the per-replication log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub cell: usize,
    pub replication: usize,
    pub seed: u64,
    pub method: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub truth: Option<f64>,
    pub covered: Option<bool>,
    pub error: String,
    pub diagnostics: String,
}

/// Aggregate of one method in one cell. Column order is the order of
/// `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: usize,
    pub fingerprint: String,
    pub factors: String,
    pub method: String,
    pub replications: usize,
    pub n_valid: usize,
    pub n_failed: usize,
    pub mean_bias: Option<f64>,
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
    pub sd_estimate: Option<f64>,
    /// `ok`, or `invalid` when failures exceed the ceiling.
    pub status: String,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Mean Fellegi-Sunter linkage quality in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageRow {
    pub cell: usize,
    pub fingerprint: String,
    pub factors: String,
    pub n: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub cell: usize,
    pub replication: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub records: Vec<RecordRow>,
    pub metrics: Vec<MetricsRow>,
    pub linkage: Vec<LinkageRow>,
    pub timing: Vec<TimingRow>,
    pub total_wall: Duration,
}

impl PlanOutput {
    pub fn invalid_cells(&self) -> usize {
        let mut cells: Vec<usize> = self.metrics.iter().filter(|m| m.status != "ok").map(|m| m.cell).collect();
        cells.dedup();
        cells.len()
    }
}

fn join(d: &[String]) -> String {
    d.join("; ")
}

fn usable(r: &EstimateRecord) -> bool {
    r.estimate.is_finite() && r.se.is_finite() && r.ci.0.is_finite() && r.ci.1.is_finite()
}

fn record_row(job: &JobOutput, method: Method, r: std::result::Result<&EstimateRecord, String>) -> RecordRow {
    let mut row = RecordRow {
        cell: job.cell,
        replication: job.replication,
        seed: job.seed,
        method: method.to_string(),
        estimate: None,
        se: None,
        ci_lo: None,
        ci_hi: None,
        truth: None,
        covered: None,
        error: String::new(),
        diagnostics: String::new(),
    };
    match r {
        Ok(rec) if usable(rec) => {
            row.estimate = Some(rec.estimate);
            row.se = Some(rec.se);
            row.ci_lo = Some(rec.ci.0);
            row.ci_hi = Some(rec.ci.1);
            row.truth = Some(rec.truth);
            row.covered = Some(rec.covered());
            row.diagnostics = join(&rec.diagnostics);
        }
        Ok(rec) => {
            row.error = "non-finite estimate or interval".into();
            row.diagnostics = join(&rec.diagnostics);
        }
        Err(e) => row.error = e,
    }
    row
}

fn mean_quality(q: &[LinkageQuality]) -> (f64, f64, f64) {
    let n = q.len() as f64;
    let avg = |f: fn(&LinkageQuality) -> f64| q.iter().map(f).sum::<f64>() / n;
    (avg(|q| q.precision), avg(|q| q.recall), avg(|q| q.f1))
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutput> {
    let start = Instant::now();
    let jobs: Vec<(&Cell, usize)> =
        plan.cells.iter().flat_map(|c| (0..plan.replications).map(move |r| (c, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let outputs: Vec<JobOutput> = pool.install(|| jobs.par_iter().map(|&(c, r)| run_job(plan, c, r)).collect());

    let mut records = Vec::new();
    let mut metrics = Vec::new();
    let mut linkage = Vec::new();
    let mut timing = Vec::with_capacity(outputs.len());
    for (cell, chunk) in plan.cells.iter().zip(outputs.chunks(plan.replications)) {
        let cell_wall: Duration = chunk.iter().map(|j| j.wall).sum();
        let mut per_method: Vec<Vec<EstimateRecord>> = vec![Vec::new(); plan.methods.len()];
        let mut failed = vec![0usize; plan.methods.len()];
        let mut quality = Vec::new();
        for job in chunk {
            timing.push(TimingRow { cell: job.cell, replication: job.replication, wall_seconds: job.wall.as_secs_f64() });
            match &job.results {
                Ok(res) => {
                    quality.extend(res.linkage);
                    for (k, (m, r)) in res.estimates.iter().enumerate() {
                        let row = record_row(job, *m, r.as_ref().map_err(ToString::to_string));
                        match r {
                            Ok(rec) if usable(rec) => per_method[k].push(rec.clone()),
                            _ => failed[k] += 1,
                        }
                        records.push(row);
                    }
                }
                Err(e) => {
                    for (k, &m) in plan.methods.iter().enumerate() {
                        failed[k] += 1;
                        records.push(record_row(job, m, Err(format!("generation: {e}"))));
                    }
                }
            }
        }
        for (k, &m) in plan.methods.iter().enumerate() {
            let s: Option<Summary> = summarize(&per_method[k]);
            let over = failed[k] as f64 > plan.failure_ceiling * plan.replications as f64;
            metrics.push(MetricsRow {
                cell: cell.index,
                fingerprint: cell.fingerprint.clone(),
                factors: cell.factor_label(),
                method: m.to_string(),
                replications: plan.replications,
                n_valid: per_method[k].len(),
                n_failed: failed[k],
                mean_bias: s.map(|s| s.mean_bias),
                mean_se: s.map(|s| s.mean_se),
                coverage: s.map(|s| s.coverage),
                sd_estimate: s.map(|s| s.sd_estimate),
                status: if over { "invalid" } else { "ok" }.into(),
                wall_time: cell_wall,
            });
        }
        if !quality.is_empty() {
            let (precision, recall, f1) = mean_quality(&quality);
            linkage.push(LinkageRow {
                cell: cell.index,
                fingerprint: cell.fingerprint.clone(),
                factors: cell.factor_label(),
                n: quality.len(),
                precision,
                recall,
                f1,
            });
        }
    }
    Ok(PlanOutput { records, metrics, linkage, timing, total_wall: start.elapsed() })
}
