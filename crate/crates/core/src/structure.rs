//! Linkage structures and link-probability matrices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

/// Bipartite linkage as a matching labeling: `z[i] = Some(j)` links A-record
/// `i` to B-record `j`, `None` leaves it unlinked.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkageStructure {
    z: Vec<Option<usize>>,
    n_b: usize,
}

impl LinkageStructure {
    pub fn new(z: Vec<Option<usize>>, n_b: usize) -> Result<Self> {
        let mut claimed = vec![false; n_b];
        for (i, zi) in z.iter().enumerate() {
            if let Some(j) = *zi {
                if j >= n_b {
                    return Err(invalid(alloc::format!("record {i} linked to out-of-range index {j}")));
                }
                if core::mem::replace(&mut claimed[j], true) {
                    return Err(invalid(alloc::format!("B-record {j} linked twice")));
                }
            }
        }
        Ok(Self { z, n_b })
    }

    pub fn empty(n_a: usize, n_b: usize) -> Self {
        Self { z: vec![None; n_a], n_b }
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.z
    }

    pub fn n_a(&self) -> usize {
        self.z.len()
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn n_links(&self) -> usize {
        self.z.iter().filter(|z| z.is_some()).count()
    }

    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.z.iter().enumerate().filter_map(|(i, z)| z.map(|j| (i, j)))
    }

    /// Row-major 0/1 matrix of size `n_a x n_b`.
    pub fn to_delta(&self) -> Vec<u8> {
        let mut d = vec![0u8; self.z.len() * self.n_b];
        for (i, j) in self.links() {
            d[i * self.n_b + j] = 1;
        }
        d
    }

    pub fn from_delta(n_a: usize, n_b: usize, delta: &[u8]) -> Result<Self> {
        if delta.len() != n_a * n_b {
            return Err(invalid("delta has wrong size"));
        }
        let mut z = vec![None; n_a];
        for (i, zi) in z.iter_mut().enumerate() {
            for j in 0..n_b {
                match delta[i * n_b + j] {
                    0 => {}
                    1 if zi.is_none() => *zi = Some(j),
                    1 => return Err(invalid(alloc::format!("A-record {i} linked twice"))),
                    v => return Err(invalid(alloc::format!("delta entry {v} is not 0/1"))),
                }
            }
        }
        Self::new(z, n_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QVariant {
    Full,
    Top2,
    Top1,
    Normalized,
    Ele,
}

/// Dense `n_a x n_b` matrix of link probabilities `q_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    n_a: usize,
    n_b: usize,
    entries: Vec<f64>,
    variant: QVariant,
}

impl QMatrix {
    pub fn new(n_a: usize, n_b: usize, entries: Vec<f64>, variant: QVariant) -> Result<Self> {
        if entries.len() != n_a * n_b {
            return Err(invalid("Q entries have wrong length"));
        }
        if let Some(bad) = entries.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(invalid(alloc::format!("Q entry {bad} outside [0, 1]")));
        }
        Ok(Self { n_a, n_b, entries, variant })
    }

    pub fn identity(n: usize) -> Self {
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            e[i * n + i] = 1.0;
        }
        Self { n_a: n, n_b: n, entries: e, variant: QVariant::Full }
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub(crate) fn with_variant(self, variant: QVariant) -> Self {
        Self { variant, ..self }
    }

    pub fn variant(&self) -> QVariant {
        self.variant
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_b + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n_b..(i + 1) * self.n_b]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_row_major(self.n_a, self.n_b, self.entries.clone())
    }

    /// `q'_ij = q_ij / sum_j q_ij`.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut e = self.entries.clone();
        for i in 0..self.n_a {
            let row = &mut e[i * self.n_b..(i + 1) * self.n_b];
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::ZeroRow { row: i });
            }
            row.iter_mut().for_each(|q| *q /= s);
        }
        Ok(Self { entries: e, variant: QVariant::Normalized, ..*self })
    }

    /// Keep the `keep` largest entries of every row (ties to the lowest
    /// column index), zero the rest; no renormalization.
    pub fn truncate(&self, keep: usize) -> Result<Self> {
        let variant = match keep {
            1 => QVariant::Top1,
            2 => QVariant::Top2,
            _ => return Err(invalid(alloc::format!("truncation keeps 1 or 2 entries, got {keep}"))),
        };
        let mut e = vec![0.0; self.entries.len()];
        let mut idx: Vec<usize> = Vec::with_capacity(self.n_b);
        for i in 0..self.n_a {
            let row = self.row(i);
            idx.clear();
            idx.extend(0..self.n_b);
            // stable sort keeps lower column first among equal values
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            for &j in idx.iter().take(keep) {
                e[i * self.n_b + j] = row[j];
            }
        }
        Ok(Self { entries: e, variant, ..*self })
    }

    /// Block-diagonal assembly of per-block matrices.
    pub fn block_diagonal(blocks: &[QMatrix]) -> Self {
        let n_a: usize = blocks.iter().map(|b| b.n_a).sum();
        let n_b: usize = blocks.iter().map(|b| b.n_b).sum();
        let mut e = vec![0.0; n_a * n_b];
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for i in 0..b.n_a {
                for j in 0..b.n_b {
                    e[(r0 + i) * n_b + c0 + j] = b.get(i, j);
                }
            }
            r0 += b.n_a;
            c0 += b.n_b;
        }
        let variant = blocks.first().map_or(QVariant::Full, |b| b.variant);
        Self { n_a, n_b, entries: e, variant }
    }
}
