//! Subcommands of the `reclink` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use reclink_core::bipartite::{gibbs_sl, BipartitePrior, GibbsConfig, MuMode};
use reclink_core::methods::{block_q, block_rows, fs_link, run_scenario1, run_scenario2, LinkageProblem};
use reclink_core::metrics::evaluate_pairs;
use reclink_core::mixture::{slw_em, SlwConfig};
use reclink_core::regression::Method;
use reclink_core::rng::derive_seed;
use reclink_core::simgen::Scenario1Data;
use serde::Serialize;

use crate::config::{self, ExperimentPlan};
use crate::error::{io_err, CliError, Result};
use crate::harness::{generate, run_plan};
use crate::io::{
    read_csv, read_dataset, read_records, write_csv, write_dataset, write_json, ClassPosteriorRow, Dataset, FitRow,
    LinkRow, QTriple, SampleRow, TruthSidecar, FILE_A, FILE_B, TRUTH,
};
use crate::report::{factor_screen, method_table};

pub const METRICS_CSV: &str = "metrics.csv";
pub const RECORDS_CSV: &str = "records.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const LINKAGE_CSV: &str = "linkage.csv";

#[derive(Debug, Parser)]
#[command(name = "reclink", version, about = "Record linkage and regression on linked files")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate data sets with their ground truth, one directory per cell and replication.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Replications per cell; defaults to one.
        #[arg(long, default_value_t = 1)]
        replications: usize,
    },
    /// Link the two files of a scenario-1 data set.
    Link {
        #[command(flatten)]
        common: Common,
        /// Directory holding file_a.csv, file_b.csv and optionally truth.json.
        #[arg(long)]
        input: PathBuf,
        /// Also draw posterior linkage samples.
        #[arg(long)]
        samples: bool,
    },
    /// Run the configured estimators on one data set.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the full experiment plan.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Summarise the tables written by `bench`.
    Report {
        /// Directory holding metrics.csv and optionally records.csv.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load_plan(common: &Common) -> Result<ExperimentPlan> {
    let mut cfg = config::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.base_seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.plan()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, replications } => simulate(&common, replications),
        Command::Link { common, input, samples } => link(&common, &input, samples),
        Command::Estimate { common, input } => estimate(&common, &input),
        Command::Bench { common } => bench(&common),
        Command::Report { input, out_dir } => report(&input, out_dir.as_deref()),
    }
}

pub fn simulate(common: &Common, replications: usize) -> Result<()> {
    let plan = load_plan(common)?;
    for cell in &plan.cells {
        for r in 0..replications {
            let data = generate(&cell.config, plan.seed_of(cell.index, r))?;
            write_dataset(&common.out_dir.join(format!("cell{:03}", cell.index)).join(format!("rep{r:03}")), &data)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FsBlockParams {
    block: usize,
    nu: f64,
    m: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct QualityReport {
    precision: f64,
    recall: f64,
    f1: f64,
    declared: usize,
    correct: usize,
    true_links: usize,
}

fn scenario1_input(dir: &Path) -> Result<(Scenario1Data, Option<TruthSidecar>)> {
    let truth_path = dir.join(TRUTH);
    let truth: Option<TruthSidecar> = truth_path.exists().then(|| crate::io::read_json(&truth_path)).transpose()?;
    if truth.as_ref().is_some_and(|t| t.scenario != 1) {
        return Err(CliError::Input("linking needs a scenario-1 data set".into()));
    }
    let data = Scenario1Data {
        file_a: read_records(&dir.join(FILE_A))?,
        file_b: read_records(&dir.join(FILE_B))?,
        true_links: truth.as_ref().map(|t| t.true_links.clone()).unwrap_or_default(),
        errors_a: Vec::new(),
        errors_b: Vec::new(),
        beta_true: truth.as_ref().map_or(f64::NAN, |t| t.beta_true),
        diagnostics: Vec::new(),
    };
    Ok((data, truth))
}

pub fn link(common: &Common, input: &Path, samples: bool) -> Result<()> {
    let plan = load_plan(common)?;
    if plan.scenario != 1 {
        return Err(CliError::Config("linking needs a scenario-1 configuration".into()));
    }
    let (data, truth) = scenario1_input(input)?;
    let cfg = match &plan.cells[0].config {
        config::CellConfig::One(c) => c.clone(),
        config::CellConfig::Two(_) => unreachable!("scenario checked above"),
    };
    let problem = LinkageProblem::from_data(&data, &cfg)?;
    let fs = fs_link(&problem, &plan.settings)?;
    create_dir(&common.out_dir)?;

    let mut q_rows = Vec::new();
    let mut params = Vec::new();
    for s in 0..problem.sets.len() {
        let q = block_q(&problem, &fs, s)?;
        let (ra, rb) = block_rows(&problem, s);
        for (i, &a) in ra.iter().enumerate() {
            for (j, &b) in rb.iter().enumerate() {
                q_rows.push(QTriple { block: s, a_row: a, b_row: b, q: q.get(i, j) });
            }
        }
        let p = &fs.params[s];
        params.push(FsBlockParams { block: s, nu: p.nu(), m: p.m_probs().to_vec(), u: p.u_probs().to_vec() });
    }
    let links: Vec<LinkRow> = fs.links.iter().flatten().map(|&(a, b)| LinkRow { a_row: a, b_row: b }).collect();
    write_csv(&common.out_dir.join("q.csv"), &q_rows)?;
    write_csv(&common.out_dir.join("links.csv"), &links)?;
    write_json(&common.out_dir.join("fs_params.json"), &params)?;

    if samples {
        let seed = truth.as_ref().map_or(plan.base_seed, |t| t.seed);
        let seed = common.seed.unwrap_or(seed);
        let mut rows = Vec::new();
        for (s, set) in problem.sets.iter().enumerate() {
            let gcfg = GibbsConfig {
                n_iter: plan.settings.gibbs_iter,
                burn_in: plan.settings.gibbs_burn_in,
                thin: 1,
                seed: derive_seed(seed, &[s as u64]),
                mode: MuMode::Learn { dirichlet: 1.0 },
            };
            let draws = gibbs_sl(set, &BipartitePrior::default(), &gcfg)?;
            let (ra, _) = block_rows(&problem, s);
            for (k, z) in draws.samples.iter().enumerate() {
                let pairs: Vec<(usize, usize)> = z.links().map(|(i, j)| problem.original_pair(s, i, j)).collect();
                for &a in ra {
                    let b_row = pairs.iter().find(|p| p.0 == a).map(|p| p.1);
                    rows.push(SampleRow { sample: k, block: s, a_row: a, b_row });
                }
            }
        }
        write_csv(&common.out_dir.join("samples.csv"), &rows)?;
    }

    if truth.is_some() {
        let declared: Vec<(usize, usize)> = links.iter().map(|l| (l.a_row, l.b_row)).collect();
        let q = evaluate_pairs(&declared, &data.true_links);
        let rep = QualityReport {
            precision: q.precision,
            recall: q.recall,
            f1: q.f1,
            declared: q.declared,
            correct: q.correct,
            true_links: q.true_links,
        };
        println!("precision {:.4}  recall {:.4}  f1 {:.4}", q.precision, q.recall, q.f1);
        write_json(&common.out_dir.join("linkage.json"), &rep)?;
    }
    Ok(())
}

pub fn estimate(common: &Common, input: &Path) -> Result<()> {
    let plan = load_plan(common)?;
    let data = read_dataset(input)?;
    let seed = common.seed.unwrap_or_else(|| data.seed());
    let results = match &data {
        Dataset::One(d, cfg) if plan.scenario == 1 => run_scenario1(d, cfg, &plan.methods, &plan.settings, seed)?,
        Dataset::Two(d, _) if plan.scenario == 2 => run_scenario2(d, &plan.methods, &plan.settings, seed)?,
        _ => return Err(CliError::Config("the configured scenario does not match the data set".into())),
    };
    create_dir(&common.out_dir)?;
    let rows: Vec<FitRow> = results
        .estimates
        .iter()
        .map(|(m, r)| match r {
            Ok(rec) => FitRow {
                method: m.to_string(),
                estimate: rec.estimate,
                se: rec.se,
                ci_lo: rec.ci.0,
                ci_hi: rec.ci.1,
                diagnostics: rec.diagnostics.join("; "),
            },
            Err(e) => FitRow {
                method: m.to_string(),
                estimate: f64::NAN,
                se: f64::NAN,
                ci_lo: f64::NAN,
                ci_hi: f64::NAN,
                diagnostics: format!("failed: {e}"),
            },
        })
        .collect();
    write_csv(&common.out_dir.join("estimates.csv"), &rows)?;
    for r in &rows {
        println!("{:<10} {:>10.4} {:>10.4}  [{:.4}, {:.4}]", r.method, r.estimate, r.se, r.ci_lo, r.ci_hi);
    }

    if let (Dataset::Two(d, _), Some(idx)) = (&data, plan.methods.iter().position(|&m| m == Method::Slw)) {
        // same seed as the SLW run above
        let fit = slw_em(&d.file, &SlwConfig { seed: derive_seed(seed, &[idx as u64 + 1]), ..SlwConfig::default() })?;
        let rows: Vec<ClassPosteriorRow> = fit
            .mixture
            .class_posteriors
            .iter()
            .enumerate()
            .map(|(i, &p)| ClassPosteriorRow { row: i, block: d.file.block[i] + 1, posterior: p })
            .collect();
        write_csv(&common.out_dir.join("class_posteriors.csv"), &rows)?;
    }
    Ok(())
}

pub fn bench(common: &Common) -> Result<()> {
    let plan = load_plan(common)?;
    let out = run_plan(&plan)?;
    create_dir(&common.out_dir)?;
    write_csv(&common.out_dir.join(METRICS_CSV), &out.metrics)?;
    write_csv(&common.out_dir.join(RECORDS_CSV), &out.records)?;
    write_csv(&common.out_dir.join(TIMING_CSV), &out.timing)?;
    if plan.scenario == 1 {
        write_csv(&common.out_dir.join(LINKAGE_CSV), &out.linkage)?;
    }
    print!("{}", method_table(&out.metrics));
    eprintln!(
        "{} cells x {} replications in {:.1} s",
        plan.cells.len(),
        plan.replications,
        out.total_wall.as_secs_f64()
    );
    match out.invalid_cells() {
        0 => Ok(()),
        n => Err(CliError::CeilingBreached(n)),
    }
}

pub fn report(input: &Path, out_dir: Option<&Path>) -> Result<()> {
    let metrics = read_csv(&input.join(METRICS_CSV))?;
    let mut text = method_table(&metrics);
    let records_path = input.join(RECORDS_CSV);
    if records_path.exists() {
        let records = read_csv(&records_path)?;
        let screen = factor_screen(&metrics, &records)?;
        if !screen.is_empty() {
            text.push_str("\nfactors ranked by F\n");
            text.push_str(&screen);
        }
    }
    print!("{text}");
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        let path = dir.join("report.txt");
        fs::write(&path, text).map_err(io_err(path))?;
    }
    Ok(())
}
