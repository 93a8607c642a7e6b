//! Blocking and comparison vectors.
//!
//! Agreement levels are ordinal: level 0 is the strongest agreement and
//! `levels - 1` the strongest disagreement. Missing values never produce a
//! level; they set the per-field `missing` flag and downstream likelihoods
//! skip that factor.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::records::{RecordFile, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Categorical,
    Year,
    StringName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonKind {
    /// Binary: 0 agree, 1 disagree.
    Exact,
    /// Normalized Levenshtein distance cut into four levels.
    Levenshtein4,
}

impl ComparisonKind {
    pub fn levels(self) -> usize {
        match self {
            ComparisonKind::Exact => 2,
            ComparisonKind::Levenshtein4 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaField {
    pub name: String,
    pub kind: FieldKind,
    pub comparison: ComparisonKind,
}

/// The linking variables used to build comparison vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkingSchema {
    fields: Vec<SchemaField>,
}

impl LinkingSchema {
    pub fn new(fields: Vec<SchemaField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Schema("schema needs at least one field".into()));
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Schema(alloc::format!("duplicate field `{}`", f.name)));
            }
            if f.comparison == ComparisonKind::Levenshtein4 && f.kind != FieldKind::StringName {
                return Err(Error::Schema(alloc::format!(
                    "field `{}`: levenshtein comparison requires a string-name field",
                    f.name
                )));
            }
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[SchemaField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Number of agreement levels per field.
    pub fn level_counts(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.comparison.levels()).collect()
    }
}

/// Edit distance over Unicode scalar values (insert, delete, substitute; unit costs).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the longer length; 0 when both strings are empty.
pub fn levenshtein_normalized(a: &str, b: &str) -> f64 {
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / len as f64
    }
}

/// Cut a normalized distance into levels 0 (= 0), 1 (<= 0.25), 2 (<= 0.5), 3 (> 0.5).
pub fn categorize_ld(d: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&d) {
        return Err(invalid(alloc::format!("normalized distance {d} outside [0, 1]")));
    }
    Ok(if d == 0.0 {
        0
    } else if d <= 0.25 {
        1
    } else if d <= 0.5 {
        2
    } else {
        3
    })
}

/// Records sharing one block-key value. A block with an empty side is unpaired
/// and all of its records are declared non-links.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub key: Value,
    pub a_rows: Vec<usize>,
    pub b_rows: Vec<usize>,
}

impl Block {
    pub fn is_paired(&self) -> bool {
        !self.a_rows.is_empty() && !self.b_rows.is_empty()
    }
}

struct KeyOrd(Value);

impl PartialEq for KeyOrd {
    fn eq(&self, o: &Self) -> bool {
        self.0.total_cmp(&o.0).is_eq()
    }
}
impl Eq for KeyOrd {}
impl PartialOrd for KeyOrd {
    fn partial_cmp(&self, o: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for KeyOrd {
    fn cmp(&self, o: &Self) -> core::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

/// Partition both files by exact equality of `block_key`, sorted by key.
pub fn block_partition(file_a: &RecordFile, file_b: &RecordFile, block_key: &str) -> Result<Vec<Block>> {
    let ca = file_a.field_index(block_key)?;
    let cb = file_b.field_index(block_key)?;
    let mut map: BTreeMap<KeyOrd, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, row) in file_a.rows().iter().enumerate() {
        map.entry(KeyOrd(row[ca].clone())).or_default().0.push(i);
    }
    for (j, row) in file_b.rows().iter().enumerate() {
        map.entry(KeyOrd(row[cb].clone())).or_default().1.push(j);
    }
    Ok(map.into_iter().map(|(k, (a_rows, b_rows))| Block { key: k.0, a_rows, b_rows }).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonVector {
    /// Index into the block's (oriented) A side.
    pub i: usize,
    /// Index into the block's (oriented) B side.
    pub j: usize,
    pub levels: Vec<u8>,
    pub missing: Vec<bool>,
}

/// All cross pairs of one block, oriented so that `n_a <= n_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSet {
    pub block_key: Value,
    pub n_a: usize,
    pub n_b: usize,
    /// True when the block's A side comes from file B (the original A side was larger).
    pub swapped: bool,
    /// Row indices (in the oriented files) of the block's A side.
    pub a_rows: Vec<usize>,
    pub b_rows: Vec<usize>,
    pub level_counts: Vec<usize>,
    /// Row-major: vector for pair (i, j) is at `i * n_b + j`.
    pub vectors: Vec<ComparisonVector>,
}

/// Distinct comparison patterns in a set, with the pattern of every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternTable {
    /// Per pattern: levels with missing fields encoded as `u8::MAX`.
    pub patterns: Vec<Vec<u8>>,
    pub counts: Vec<usize>,
    pub pair_pattern: Vec<u32>,
}

pub const MISSING_LEVEL: u8 = u8::MAX;

impl ComparisonSet {
    /// Builds a set directly from per-pair levels (`None` = missing), row-major.
    pub fn from_levels(
        n_a: usize,
        n_b: usize,
        level_counts: Vec<usize>,
        levels: Vec<Vec<Option<u8>>>,
    ) -> Result<Self> {
        if levels.len() != n_a * n_b {
            return Err(invalid("level rows must number n_a * n_b"));
        }
        if n_a > n_b {
            return Err(invalid("a comparison set needs n_a <= n_b"));
        }
        let mut vectors = Vec::with_capacity(levels.len());
        for (idx, row) in levels.into_iter().enumerate() {
            if row.len() != level_counts.len() {
                return Err(invalid("levels length differs from the field count"));
            }
            let mut lv = Vec::with_capacity(row.len());
            let mut missing = Vec::with_capacity(row.len());
            for (k, l) in row.into_iter().enumerate() {
                match l {
                    Some(l) if usize::from(l) < level_counts[k] => {
                        lv.push(l);
                        missing.push(false);
                    }
                    Some(l) => return Err(invalid(alloc::format!("level {l} out of range for field {k}"))),
                    None => {
                        lv.push(0);
                        missing.push(true);
                    }
                }
            }
            vectors.push(ComparisonVector { i: idx / n_b.max(1), j: idx % n_b.max(1), levels: lv, missing });
        }
        Ok(Self {
            block_key: Value::Missing,
            n_a,
            n_b,
            swapped: false,
            a_rows: (0..n_a).collect(),
            b_rows: (0..n_b).collect(),
            level_counts,
            vectors,
        })
    }

    pub fn vector(&self, i: usize, j: usize) -> &ComparisonVector {
        &self.vectors[i * self.n_b + j]
    }

    pub fn n_fields(&self) -> usize {
        self.level_counts.len()
    }

    pub fn patterns(&self) -> PatternTable {
        let mut index: BTreeMap<Vec<u8>, u32> = BTreeMap::new();
        let mut patterns = Vec::new();
        let mut counts = Vec::new();
        let mut pair_pattern = Vec::with_capacity(self.vectors.len());
        for v in &self.vectors {
            let key: Vec<u8> = v
                .levels
                .iter()
                .zip(&v.missing)
                .map(|(&l, &m)| if m { MISSING_LEVEL } else { l })
                .collect();
            let id = *index.entry(key.clone()).or_insert_with(|| {
                patterns.push(key);
                counts.push(0);
                (patterns.len() - 1) as u32
            });
            counts[id as usize] += 1;
            pair_pattern.push(id);
        }
        PatternTable { patterns, counts, pair_pattern }
    }
}

fn cell_text(v: &Value) -> Option<String> {
    match v {
        Value::Missing => None,
        Value::Text(s) => Some(s.clone()),
        other => Some(alloc::format!("{other}")),
    }
}

fn compare_field(kind: ComparisonKind, a: &Value, b: &Value) -> Result<Option<u8>> {
    if a.is_missing() || b.is_missing() {
        return Ok(None);
    }
    match kind {
        ComparisonKind::Exact => Ok(Some(u8::from(a.total_cmp(b).is_ne()))),
        ComparisonKind::Levenshtein4 => {
            let (sa, sb) = (cell_text(a).unwrap_or_default(), cell_text(b).unwrap_or_default());
            categorize_ld(levenshtein_normalized(&sa, &sb)).map(Some)
        }
    }
}

/// Comparison vectors for every paired block.
pub fn build_comparisons(
    file_a: &RecordFile,
    file_b: &RecordFile,
    schema: &LinkingSchema,
    blocks: &[Block],
) -> Result<Vec<ComparisonSet>> {
    let cols_a = schema
        .fields()
        .iter()
        .map(|f| file_a.field_index(&f.name).map_err(|_| Error::Schema(alloc::format!("file A lacks `{}`", f.name))))
        .collect::<Result<Vec<_>>>()?;
    let cols_b = schema
        .fields()
        .iter()
        .map(|f| file_b.field_index(&f.name).map_err(|_| Error::Schema(alloc::format!("file B lacks `{}`", f.name))))
        .collect::<Result<Vec<_>>>()?;
    let kinds: Vec<ComparisonKind> = schema.fields().iter().map(|f| f.comparison).collect();

    let mut out = Vec::new();
    for block in blocks.iter().filter(|b| b.is_paired()) {
        let swapped = block.a_rows.len() > block.b_rows.len();
        let (fa, fb, ra, rb, ca, cb) = if swapped {
            (file_b, file_a, &block.b_rows, &block.a_rows, &cols_b, &cols_a)
        } else {
            (file_a, file_b, &block.a_rows, &block.b_rows, &cols_a, &cols_b)
        };
        let mut vectors = Vec::with_capacity(ra.len() * rb.len());
        for (i, &ri) in ra.iter().enumerate() {
            for (j, &rj) in rb.iter().enumerate() {
                let mut levels = Vec::with_capacity(kinds.len());
                let mut missing = Vec::with_capacity(kinds.len());
                for (k, &kind) in kinds.iter().enumerate() {
                    match compare_field(kind, fa.value(ri, ca[k]), fb.value(rj, cb[k]))? {
                        Some(l) => {
                            levels.push(l);
                            missing.push(false);
                        }
                        None => {
                            levels.push(0);
                            missing.push(true);
                        }
                    }
                }
                vectors.push(ComparisonVector { i, j, levels, missing });
            }
        }
        out.push(ComparisonSet {
            block_key: block.key.clone(),
            n_a: ra.len(),
            n_b: rb.len(),
            swapped,
            a_rows: ra.clone(),
            b_rows: rb.clone(),
            level_counts: schema.level_counts(),
            vectors,
        });
    }
    Ok(out)
}
