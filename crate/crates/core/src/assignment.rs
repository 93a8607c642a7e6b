//! Exact one-to-one assignment from match weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::structure::LinkageStructure;

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
/// Returns the column chosen for each row.
fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    // potentials and matching are 1-based with column 0 as the virtual root
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            col_of[owner[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Maximum-weight one-to-one linkage using only pairs with `w >= threshold`.
///
/// `weights` is row-major `n_a x n_b`. Unlinked records contribute zero, so a
/// pair with non-positive weight is never worth linking.
pub fn assign_one_to_one(weights: &[f64], n_a: usize, n_b: usize, threshold: f64) -> Result<LinkageStructure> {
    if weights.len() != n_a * n_b {
        return Err(invalid("weight matrix has wrong size"));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(invalid("weights must be finite"));
    }
    let gain = |i: usize, j: usize| {
        let w = weights[i * n_b + j];
        if w >= threshold && w > 0.0 {
            w
        } else {
            0.0
        }
    };
    // one slack column per row stands for "unlinked"
    let cols = n_b + n_a;
    let mut cost = vec![0.0; n_a * cols];
    for i in 0..n_a {
        for j in 0..n_b {
            cost[i * cols + j] = -gain(i, j);
        }
    }
    let chosen = hungarian(&cost, n_a, cols);
    let z = chosen
        .into_iter()
        .enumerate()
        .map(|(i, j)| (j < n_b && gain(i, j) > 0.0).then_some(j))
        .collect();
    LinkageStructure::new(z, n_b)
}

/// Sum of weights over the links of `z`.
pub fn total_weight(weights: &[f64], z: &LinkageStructure) -> f64 {
    z.links().map(|(i, j)| weights[i * z.n_b() + j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    /// Best total over every one-to-one partial assignment.
    fn brute_force(weights: &[f64], n_a: usize, n_b: usize, threshold: f64) -> f64 {
        fn rec(i: usize, used: &mut Vec<bool>, w: &[f64], n_a: usize, n_b: usize, t: f64) -> f64 {
            if i == n_a {
                return 0.0;
            }
            let mut best = rec(i + 1, used, w, n_a, n_b, t);
            for j in 0..n_b {
                let wij = w[i * n_b + j];
                if !used[j] && wij >= t {
                    used[j] = true;
                    best = best.max(wij + rec(i + 1, used, w, n_a, n_b, t));
                    used[j] = false;
                }
            }
            best
        }
        rec(0, &mut vec![false; n_b], weights, n_a, n_b, threshold)
    }

    #[test]
    fn small_examples() {
        let z = assign_one_to_one(&[5.0, 1.0, 1.0, 5.0], 2, 2, 0.0).unwrap();
        assert_eq!(z.labels(), &[Some(0), Some(1)]);
        let z = assign_one_to_one(&[5.0, 4.0, 5.0, -10.0], 2, 2, 0.0).unwrap();
        assert_eq!(z.labels(), &[Some(1), Some(0)]);
        let z = assign_one_to_one(&[-1.0, -2.0, -3.0, -4.0], 2, 2, 0.0).unwrap();
        assert_eq!(z.n_links(), 0);
        let z = assign_one_to_one(&[3.0, 3.0], 1, 2, 5.0).unwrap();
        assert_eq!(z.n_links(), 0);
    }

    #[test]
    fn matches_enumeration_on_random_blocks() {
        let mut rng = seeded(11);
        for _ in 0..300 {
            let n_a = rng.random_range(1..=4);
            let n_b = rng.random_range(n_a..=5);
            let w: Vec<f64> = (0..n_a * n_b).map(|_| rng.random_range(-5.0..10.0)).collect();
            let t = rng.random_range(-1.0..4.0);
            let z = assign_one_to_one(&w, n_a, n_b, t).unwrap();
            assert!(z.links().all(|(i, j)| w[i * n_b + j] >= t));
            assert!((total_weight(&w, &z) - brute_force(&w, n_a, n_b, t)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn integer_weights_reach_the_optimum(w in proptest::collection::vec(-3i32..8, 12)) {
            let w: Vec<f64> = w.into_iter().map(f64::from).collect();
            let z = assign_one_to_one(&w, 3, 4, 1.0).unwrap();
            prop_assert_eq!(total_weight(&w, &z), brute_force(&w, 3, 4, 1.0));
        }
    }
}
