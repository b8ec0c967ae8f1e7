//! Sparse LDLᵀ factorization for quasi-definite KKT matrices.
//!
//! The matrix is supplied as the upper triangle of a symmetric matrix in
//! triplet form. A minimum-degree ordering and the elimination tree are
//! computed once; numeric factorizations reuse them, so every interior-point
//! iteration only refills the values.
//!
//! Pivots are regularized dynamically: each diagonal entry has an expected
//! sign (+1 for the primal block, -1 for the dual blocks) and a pivot that is
//! too small or of the wrong sign is replaced by `sign * delta`.

use std::collections::BTreeSet;

/// Symbolic structure of a permuted upper-triangular CSC matrix and its factor.
#[derive(Debug, Clone)]
pub struct SymbolicLdl {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// For every input triplet, the slot in `values` it accumulates into.
    slot_of_entry: Vec<usize>,
    parent: Vec<Option<usize>>,
    l_ptr: Vec<usize>,
}

impl SymbolicLdl {
    /// Analyse the pattern given by upper-triangle coordinates `(row, col)`
    /// with `row <= col`. Every diagonal position must appear at least once.
    pub fn analyse(n: usize, entries: &[(usize, usize)]) -> Self {
        let perm = minimum_degree(n, entries);
        let mut pinv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }

        // Permuted upper coordinates, deduplicated into CSC slots.
        let mut coords: Vec<(usize, usize, usize)> = entries
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let (pi, pj) = (pinv[i], pinv[j]);
                let (r, c) = if pi <= pj { (pi, pj) } else { (pj, pi) };
                (c, r, k)
            })
            .collect();
        coords.sort_unstable();

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(coords.len());
        let mut slot_of_entry = vec![0usize; entries.len()];
        let mut last: Option<(usize, usize)> = None;
        for &(c, r, k) in &coords {
            if last != Some((c, r)) {
                row_idx.push(r);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
            slot_of_entry[k] = row_idx.len() - 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }

        // Elimination tree and column counts of L.
        let mut parent = vec![None; n];
        let mut flag = vec![usize::MAX; n];
        let mut l_nz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &row in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
                let mut i = row;
                if i >= k {
                    continue;
                }
                while flag[i] != k {
                    if parent[i].is_none() {
                        parent[i] = Some(k);
                    }
                    l_nz[i] += 1;
                    flag[i] = k;
                    match parent[i] {
                        Some(p) => i = p,
                        None => break,
                    }
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + l_nz[k];
        }

        SymbolicLdl {
            n,
            perm,
            col_ptr,
            row_idx,
            slot_of_entry,
            parent,
            l_ptr,
        }
    }

    /// Scatter triplet values (same order as the analysed entries) into slots.
    pub fn gather(&self, entry_values: &[f64], slots: &mut Vec<f64>) {
        slots.clear();
        slots.resize(self.row_idx.len(), 0.0);
        for (k, &v) in entry_values.iter().enumerate() {
            slots[self.slot_of_entry[k]] += v;
        }
    }

    /// Numeric factorization. `signs[old_index]` gives the expected pivot sign.
    pub fn factor(&self, slots: &[f64], signs: &[f64], eps: f64, delta: f64) -> NumericLdl {
        let n = self.n;
        let nnz_l = self.l_ptr[n];
        let mut l_idx = vec![0usize; nnz_l];
        let mut l_val = vec![0.0; nnz_l];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut l_nz = vec![0usize; n];
        let mut regularized = 0usize;

        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            l_nz[k] = 0;
            for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                let mut i = self.row_idx[p];
                y[i] += slots[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    match self.parent[i] {
                        Some(par) => i = par,
                        None => break,
                    }
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            while top < n {
                let i = pattern[top];
                top += 1;
                if i == k {
                    continue;
                }
                let yi = y[i];
                y[i] = 0.0;
                let start = self.l_ptr[i];
                let end = start + l_nz[i];
                for p in start..end {
                    y[l_idx[p]] -= l_val[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                l_idx[end] = k;
                l_val[end] = l_ki;
                l_nz[i] += 1;
            }
            let sign = signs[self.perm[k]];
            if sign * d[k] <= eps {
                d[k] = sign * delta;
                regularized += 1;
            }
        }

        NumericLdl {
            l_idx,
            l_val,
            d,
            regularized,
        }
    }

    /// Solve `K x = b` in place (original ordering) using a numeric factor.
    pub fn solve(&self, num: &NumericLdl, b: &mut [f64], work: &mut Vec<f64>) {
        let n = self.n;
        work.clear();
        work.extend((0..n).map(|k| b[self.perm[k]]));
        // L y = b
        for j in 0..n {
            let xj = work[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                work[num.l_idx[p]] -= num.l_val[p] * xj;
            }
        }
        for j in 0..n {
            work[j] /= num.d[j];
        }
        // Lᵀ x = y
        for j in (0..n).rev() {
            let mut xj = work[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                xj -= num.l_val[p] * work[num.l_idx[p]];
            }
            work[j] = xj;
        }
        for k in 0..n {
            b[self.perm[k]] = work[k];
        }
    }
}

#[derive(Debug, Clone)]
pub struct NumericLdl {
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    pub regularized: usize,
}

/// Greedy minimum-degree ordering on the symmetric pattern. Ties are broken
/// by the smaller node index so the ordering is deterministic.
fn minimum_degree(n: usize, entries: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in entries {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while let Some(&(deg, v)) = queue.iter().next() {
        queue.remove(&(deg, v));
        eliminated[v] = true;
        order.push(v);
        let neighbours: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &neighbours {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (a, &u) in neighbours.iter().enumerate() {
            for &w in &neighbours[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &neighbours {
            debug_assert!(!eliminated[u]);
            queue.insert((adj[u].len(), u));
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(entries: &[(usize, usize, f64)], n: usize, signs: &[f64], b: &[f64]) -> Vec<f64> {
        let pattern: Vec<(usize, usize)> = entries.iter().map(|&(i, j, _)| (i, j)).collect();
        let values: Vec<f64> = entries.iter().map(|e| e.2).collect();
        let sym = SymbolicLdl::analyse(n, &pattern);
        let mut slots = Vec::new();
        sym.gather(&values, &mut slots);
        let num = sym.factor(&slots, signs, 1e-14, 1e-10);
        let mut x = b.to_vec();
        let mut work = Vec::new();
        sym.solve(&num, &mut x, &mut work);
        x
    }

    #[test]
    fn solves_quasi_definite_system() {
        // [ 4 1 | 1 ]
        // [ 1 3 | 2 ]
        // [ 1 2 |-1 ]
        let entries = vec![
            (0, 0, 4.0),
            (0, 1, 1.0),
            (1, 1, 3.0),
            (0, 2, 1.0),
            (1, 2, 2.0),
            (2, 2, -1.0),
        ];
        let b = [1.0, 2.0, 3.0];
        let x = dense_solve(&entries, 3, &[1.0, 1.0, -1.0], &b);
        let k = [[4.0, 1.0, 1.0], [1.0, 3.0, 2.0], [1.0, 2.0, -1.0]];
        for r in 0..3 {
            let lhs: f64 = (0..3).map(|c| k[r][c] * x[c]).sum();
            assert!((lhs - b[r]).abs() < 1e-12, "row {r}: {lhs} vs {}", b[r]);
        }
    }

    #[test]
    fn duplicate_entries_accumulate() {
        let entries = vec![(0, 0, 1.0), (0, 0, 1.0), (1, 1, 2.0), (0, 1, 0.5)];
        let x = dense_solve(&entries, 2, &[1.0, 1.0], &[2.5, 2.5]);
        assert!((2.0 * x[0] + 0.5 * x[1] - 2.5).abs() < 1e-12);
        assert!((0.5 * x[0] + 2.0 * x[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ordering_is_a_permutation() {
        let entries: Vec<(usize, usize)> = (0..10).flat_map(|i| [(i, i), (i, (i + 3) % 10)]).collect();
        let mut order = minimum_degree(10, &entries);
        order.sort_unstable();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }
}
