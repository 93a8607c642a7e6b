//! Simulation scenarios.
//!
//! Scenario 1 produces two record files sharing a set of true links, with
//! typographic errors injected into the linking variables. Scenario 2 produces
//! a single pre-linked file whose outcome values are shuffled among flagged
//! rows inside each block.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::comparison::{ComparisonKind, FieldKind, LinkingSchema, SchemaField};
use crate::error::{invalid, Error, Result};
use crate::math::{exp, logistic, round, sqrt};
use crate::mixture::LinkedFile;
use crate::records::{RecordFile, Value};
use crate::rng::{derangement, seeded, SimRng};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub const F_ID: &str = "id";
pub const F_BLOCK: &str = "block";
pub const F_ZIP: &str = "zip";
pub const F_GENDER: &str = "gender";
pub const F_NAME: &str = "lname";
pub const F_RACE: &str = "race";
pub const F_YEAR: &str = "yob";
pub const F_Y: &str = "y";
pub const F_X: &str = "x";

/// Discriminatory power of the linking variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "lowercase"))]
pub enum Dp {
    High,
    Low,
}

impl Dp {
    pub fn as_str(self) -> &'static str {
        match self {
            Dp::High => "high",
            Dp::Low => "low",
        }
    }
}

impl fmt::Display for Dp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(Dp::High),
            "low" => Ok(Dp::Low),
            _ => Err(invalid(alloc::format!("unknown discriminatory power `{s}`"))),
        }
    }
}

/// How linkage errors depend on the file variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "UPPERCASE"))]
pub enum Mechanism {
    Lcar,
    Snl,
    Nl,
    Wnl,
    Il,
    Ele,
}

impl Mechanism {
    pub const SCENARIO1: [Mechanism; 5] = [Mechanism::Lcar, Mechanism::Snl, Mechanism::Nl, Mechanism::Wnl, Mechanism::Il];
    pub const SCENARIO2: [Mechanism; 4] = [Mechanism::Ele, Mechanism::Nl, Mechanism::Wnl, Mechanism::Il];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Lcar => "LCAR",
            Mechanism::Snl => "SNL",
            Mechanism::Nl => "NL",
            Mechanism::Wnl => "WNL",
            Mechanism::Il => "IL",
            Mechanism::Ele => "ELE",
        }
    }

    /// The covariate entering the error propensity for one record.
    pub fn covariate(self, race: i64, y: f64, x: f64) -> f64 {
        match self {
            Mechanism::Lcar | Mechanism::Ele => 0.0,
            Mechanism::Snl => f64::from(u8::from(race == 4 || race == 5)),
            Mechanism::Nl => x,
            Mechanism::Wnl => y,
            Mechanism::Il => -0.3 + exp(y) + 0.5 * x,
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let u = s.to_ascii_uppercase();
        [Mechanism::Lcar, Mechanism::Snl, Mechanism::Nl, Mechanism::Wnl, Mechanism::Il, Mechanism::Ele]
            .into_iter()
            .find(|m| m.as_str() == u)
            .ok_or_else(|| invalid(alloc::format!("unknown mechanism `{s}`")))
    }
}

/// Offset `c` with `mean(logistic(c + v)) = target`, by bisection.
/// Returns the offset and the absolute residual.
pub fn calibrate_offset(v: &[f64], target: f64) -> Result<(f64, f64)> {
    if v.is_empty() || !(target > 0.0 && target < 1.0) {
        return Err(invalid("calibration needs records and a target in (0, 1)"));
    }
    let mean = |c: f64| v.iter().map(|&vi| logistic(c + vi)).sum::<f64>() / v.len() as f64;
    let v_min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let v_max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(v_min.is_finite() && v_max.is_finite()) {
        return Err(Error::Bracketing { target, v_min, v_max });
    }
    let (mut lo, mut hi) = (-v_max - 50.0, -v_min + 50.0);
    if mean(lo) > target || mean(hi) < target {
        return Err(Error::Bracketing { target, v_min, v_max });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + lo.abs()) {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    Ok((c, (mean(c) - target).abs()))
}

/// Error indicators for `v.len()` records at the given level.
///
/// LCAR flags a uniformly chosen subset of exactly `round(level * n)`
/// records, ELE flags each record independently with probability `level`,
/// and the remaining mechanisms draw from the calibrated logistic propensity.
pub fn error_flags(mechanism: Mechanism, level: f64, v: &[f64], rng: &mut SimRng) -> Result<Vec<bool>> {
    let n = v.len();
    if !(0.0..1.0).contains(&level) {
        return Err(invalid(alloc::format!("error level {level} outside [0, 1)")));
    }
    if level == 0.0 || n == 0 {
        return Ok(vec![false; n]);
    }
    match mechanism {
        Mechanism::Lcar => {
            let k = round(level * n as f64) as usize;
            let mut flags = vec![false; n];
            for i in index::sample(rng, n, k.min(n)) {
                flags[i] = true;
            }
            Ok(flags)
        }
        Mechanism::Ele => Ok((0..n).map(|_| rng.random::<f64>() < level).collect()),
        _ => {
            let (c, _) = calibrate_offset(v, level)?;
            Ok(v.iter().map(|&vi| rng.random::<f64>() < logistic(c + vi)).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameError {
    Deletion,
    Transposition,
}

/// Apply one typographic error. A name too short for a transposition gets a
/// deletion instead, and an empty name is returned unchanged; both cases
/// come back with a diagnostic.
pub fn perturb_name(name: &str, kind: NameError, rng: &mut SimRng) -> (String, Option<String>) {
    let mut chars: Vec<char> = name.chars().collect();
    let mut note = None;
    let kind = match (kind, chars.len()) {
        (_, 0) => return (String::new(), Some("empty name left unchanged".to_string())),
        (NameError::Transposition, 1) => {
            note = Some("one-character name: deletion instead of transposition".to_string());
            NameError::Deletion
        }
        (k, _) => k,
    };
    match kind {
        NameError::Deletion => {
            let i = rng.random_range(0..chars.len());
            chars.remove(i);
        }
        NameError::Transposition => {
            let pick = index::sample(rng, chars.len(), 2);
            chars.swap(pick.index(0), pick.index(1));
        }
    }
    (chars.into_iter().collect(), note)
}

const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "su", "ren", "ta", "vo", "ne", "di", "ba", "ho", "ly", "gar", "pe", "zu", "fin"];

/// A distinct name for each integer below 16^4.
fn syllable_name(mut k: usize) -> String {
    let mut s = String::new();
    for _ in 0..4 {
        s.push_str(SYLLABLES[k % 16]);
        k /= 16;
    }
    s
}

fn unique_names(rng: &mut SimRng, n: usize) -> Result<Vec<String>> {
    if n > 65_536 {
        return Err(invalid("at most 65536 distinct names are available"));
    }
    Ok(index::sample(rng, 65_536, n).into_iter().map(syllable_name).collect())
}

fn standard_normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// `(y, x)` with variances 4 and 1 and covariance `2 rho`, so the slope of
/// `y` on `x` is `2 rho`.
fn correlated_pair(rng: &mut SimRng, rho: f64) -> (f64, f64) {
    let x = standard_normal(rng);
    let e = standard_normal(rng);
    (2.0 * rho * x + 2.0 * sqrt(1.0 - rho * rho) * e, x)
}

// ---------------------------------------------------------------------------
// scenario 1

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default, deny_unknown_fields))]
pub struct Scenario1Config {
    pub n_a: usize,
    pub n_b: usize,
    pub overlap: f64,
    pub n_blocks: usize,
    pub dp: Dp,
    pub rho: f64,
    pub error_level: f64,
    pub mechanism: Mechanism,
    pub seed: u64,
    pub birth_year_base: i64,
    pub age_mean: f64,
    pub age_sd: f64,
}

impl Default for Scenario1Config {
    fn default() -> Self {
        Self {
            n_a: 200,
            n_b: 300,
            overlap: 1.0,
            n_blocks: 10,
            dp: Dp::High,
            rho: 0.9,
            error_level: 0.1,
            mechanism: Mechanism::Lcar,
            seed: 0,
            birth_year_base: 2025,
            age_mean: 30.0,
            age_sd: 10.0,
        }
    }
}

impl Scenario1Config {
    pub fn n_links(&self) -> usize {
        round(self.overlap * self.n_a as f64) as usize
    }

    pub fn beta_true(&self) -> f64 {
        2.0 * self.rho
    }

    pub fn validate(&self) -> Result<()> {
        let links = self.overlap * self.n_a as f64;
        if !(self.overlap > 0.0 && self.overlap <= 1.0) || (links - round(links)).abs() > 1e-9 {
            return Err(invalid(alloc::format!("overlap {} times n_a {} is not a whole count", self.overlap, self.n_a)));
        }
        if self.n_blocks == 0 || !self.n_a.is_multiple_of(self.n_blocks) {
            return Err(invalid(alloc::format!("n_a {} is not divisible by {} blocks", self.n_a, self.n_blocks)));
        }
        if self.n_b < self.n_links() {
            return Err(invalid("file B is smaller than the number of links"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(invalid("rho must lie in (-1, 1)"));
        }
        if !(self.error_level >= 0.0 && self.error_level < 1.0) {
            return Err(invalid("error level must lie in [0, 1)"));
        }
        if self.mechanism == Mechanism::Ele {
            return Err(Error::IncompatibleMethod("ELE mechanism in scenario 1".into()));
        }
        if !(self.age_sd >= 0.0) {
            return Err(invalid("age standard deviation must be non-negative"));
        }
        Ok(())
    }
}

pub fn scenario1_schema(dp: Dp) -> LinkingSchema {
    let field = |name: &str, kind, comparison| SchemaField { name: name.to_string(), kind, comparison };
    let first = match dp {
        Dp::High => field(F_ZIP, FieldKind::Categorical, ComparisonKind::Exact),
        Dp::Low => field(F_GENDER, FieldKind::Categorical, ComparisonKind::Exact),
    };
    LinkingSchema::new(vec![
        first,
        field(F_NAME, FieldKind::StringName, ComparisonKind::Levenshtein4),
        field(F_RACE, FieldKind::Categorical, ComparisonKind::Exact),
        field(F_YEAR, FieldKind::Year, ComparisonKind::Exact),
    ])
    .expect("fixed schema is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario1Data {
    pub file_a: RecordFile,
    pub file_b: RecordFile,
    /// `(row in A, row in B)` for every true link.
    pub true_links: Vec<(usize, usize)>,
    pub errors_a: Vec<bool>,
    pub errors_b: Vec<bool>,
    pub beta_true: f64,
    pub diagnostics: Vec<String>,
}

#[derive(Clone)]
struct Entity {
    block: i64,
    first: i64,
    name: String,
    race: i64,
    year: i64,
    y: f64,
    x: f64,
}

fn inject_typos(
    entities: &mut [Entity],
    rows: &[usize],
    cfg: &Scenario1Config,
    rng: &mut SimRng,
    diagnostics: &mut Vec<String>,
) -> Result<Vec<bool>> {
    let v: Vec<f64> = rows.iter().map(|&e| cfg.mechanism.covariate(entities[e].race, entities[e].y, entities[e].x)).collect();
    let flags = error_flags(cfg.mechanism, cfg.error_level, &v, rng)?;
    let bad: Vec<usize> = (0..rows.len()).filter(|&r| flags[r]).collect();
    let mut years: Vec<i64> = bad.iter().map(|&r| entities[rows[r]].year).collect();
    years.shuffle(rng);
    for (&r, y) in bad.iter().zip(years) {
        entities[rows[r]].year = y;
    }
    for &r in &bad {
        for kind in [NameError::Deletion, NameError::Transposition] {
            if rng.random::<f64>() < cfg.error_level / 2.0 {
                let (name, note) = perturb_name(&entities[rows[r]].name, kind, rng);
                entities[rows[r]].name = name;
                if let Some(n) = note {
                    diagnostics.push(n);
                }
            }
        }
    }
    Ok(flags)
}

fn to_file(entities: &[Entity], rows: &[usize], dp: Dp, outcome: bool) -> Result<RecordFile> {
    let first = if dp == Dp::High { F_ZIP } else { F_GENDER };
    let last = if outcome { F_Y } else { F_X };
    let fields = [F_ID, F_BLOCK, first, F_NAME, F_RACE, F_YEAR, last].iter().map(|s| s.to_string()).collect();
    let mut f = RecordFile::new(fields)?;
    for (id, &e) in rows.iter().enumerate() {
        let en = &entities[e];
        f.push(vec![
            Value::Int(id as i64 + 1),
            Value::Int(en.block),
            Value::Int(en.first),
            Value::Text(en.name.clone()),
            Value::Int(en.race),
            Value::Int(en.year),
            Value::Real(if outcome { en.y } else { en.x }),
        ])?;
    }
    Ok(f)
}

/// Two files with `overlap * n_a` true links, typographic errors injected
/// independently into each file.
pub fn gen_scenario1(cfg: &Scenario1Config) -> Result<Scenario1Data> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let n_ab = cfg.n_links();
    let n_entities = cfg.n_a + cfg.n_b - n_ab;
    let h = cfg.n_blocks as i64;
    let names = match cfg.dp {
        Dp::High => unique_names(&mut rng, n_entities)?,
        Dp::Low => {
            let pool = unique_names(&mut rng, cfg.n_a)?;
            (0..n_entities).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
        }
    };
    // entity order: links, A-only, B-only
    let mut entities = Vec::with_capacity(n_entities);
    for (k, name) in names.into_iter().enumerate() {
        let (y, x) = if k < n_ab {
            correlated_pair(&mut rng, cfg.rho)
        } else {
            (standard_normal(&mut rng), standard_normal(&mut rng))
        };
        let first = match cfg.dp {
            Dp::High => rng.random_range(1..=30),
            Dp::Low => rng.random_range(1..=2),
        };
        let race = rng.random_range(1..=5);
        let age = cfg.age_mean + cfg.age_sd * standard_normal(&mut rng);
        let slot = if k < cfg.n_a { k } else { k - (cfg.n_a - n_ab) };
        entities.push(Entity {
            block: slot as i64 % h + 1,
            first,
            name,
            race,
            year: cfg.birth_year_base - round(age) as i64,
            y,
            x,
        });
    }
    let mut rows_a: Vec<usize> = (0..cfg.n_a).collect();
    let mut rows_b: Vec<usize> = (0..n_ab).chain(cfg.n_a..n_entities).collect();
    rows_a.shuffle(&mut rng);
    rows_b.shuffle(&mut rng);

    // each file carries its own copy of the linking values
    let mut copy_b = entities.clone();
    let mut diagnostics = Vec::new();
    let errors_a = inject_typos(&mut entities, &rows_a, cfg, &mut rng, &mut diagnostics)?;
    let errors_b = inject_typos(&mut copy_b, &rows_b, cfg, &mut rng, &mut diagnostics)?;

    let mut pos_b = vec![usize::MAX; n_entities];
    for (r, &e) in rows_b.iter().enumerate() {
        pos_b[e] = r;
    }
    let mut true_links: Vec<(usize, usize)> =
        rows_a.iter().enumerate().filter(|(_, &e)| e < n_ab).map(|(r, &e)| (r, pos_b[e])).collect();
    true_links.sort_unstable();
    Ok(Scenario1Data {
        file_a: to_file(&entities, &rows_a, cfg.dp, true)?,
        file_b: to_file(&copy_b, &rows_b, cfg.dp, false)?,
        true_links,
        errors_a,
        errors_b,
        beta_true: cfg.beta_true(),
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// scenario 2

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default, deny_unknown_fields))]
pub struct Scenario2Config {
    pub n: usize,
    pub block_sizes: Vec<usize>,
    pub error_rates: Vec<f64>,
    pub rho: f64,
    pub mechanism: Mechanism,
    pub seed: u64,
}

impl Default for Scenario2Config {
    fn default() -> Self {
        Self {
            n: 600,
            block_sizes: vec![100, 200, 300],
            error_rates: vec![0.05, 0.10, 0.15],
            rho: 0.9,
            mechanism: Mechanism::Ele,
            seed: 0,
        }
    }
}

impl Scenario2Config {
    pub fn beta_true(&self) -> f64 {
        2.0 * self.rho
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() || self.block_sizes.len() != self.error_rates.len() {
            return Err(invalid("need one error rate per block"));
        }
        if self.block_sizes.iter().sum::<usize>() != self.n {
            return Err(invalid(alloc::format!("block sizes do not sum to n = {}", self.n)));
        }
        if self.error_rates.iter().any(|e| !(0.0..1.0).contains(e)) {
            return Err(invalid("error rates must lie in [0, 1)"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(invalid("rho must lie in (-1, 1)"));
        }
        if !Mechanism::SCENARIO2.contains(&self.mechanism) {
            return Err(Error::IncompatibleMethod(alloc::format!("{} mechanism in scenario 2", self.mechanism)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario2Data {
    /// Rows ordered by block; `truth` marks rows whose outcome was not moved.
    pub file: LinkedFile,
    pub beta_true: f64,
    pub diagnostics: Vec<String>,
}

/// A pre-linked file whose outcomes are deranged among flagged rows of each
/// block.
pub fn gen_scenario2(cfg: &Scenario2Config) -> Result<Scenario2Data> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let (mut y, mut x, mut block, mut truth) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut diagnostics = Vec::new();
    let all: Vec<Vec<(f64, f64)>> =
        cfg.block_sizes.iter().map(|&size| (0..size).map(|_| correlated_pair(&mut rng, cfg.rho)).collect()).collect();
    for (b, ((&size, &rate), pairs)) in cfg.block_sizes.iter().zip(&cfg.error_rates).zip(all).enumerate() {
        let v: Vec<f64> = pairs.iter().map(|&(yi, xi)| cfg.mechanism.covariate(0, yi, xi)).collect();
        let flags = error_flags(cfg.mechanism, rate, &v, &mut rng)?;
        let flagged: Vec<usize> = (0..size).filter(|&i| flags[i]).collect();
        let mut yb: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut moved = vec![false; size];
        match derangement(&mut rng, flagged.len()) {
            Some(perm) if flagged.len() > 1 => {
                for (k, &src) in perm.iter().enumerate() {
                    yb[flagged[k]] = pairs[flagged[src]].0;
                    moved[flagged[k]] = true;
                }
            }
            _ if rate > 0.0 => diagnostics.push(alloc::format!(
                "block {}: {} flagged row(s), no error induced",
                b + 1,
                flagged.len()
            )),
            _ => {}
        }
        y.extend(yb);
        x.extend(pairs.iter().map(|p| p.1));
        block.extend(core::iter::repeat_n(b, size));
        truth.extend(moved.iter().map(|m| !m));
    }
    Ok(Scenario2Data { file: LinkedFile::new(y, x, block, Some(truth))?, beta_true: cfg.beta_true(), diagnostics })
}
