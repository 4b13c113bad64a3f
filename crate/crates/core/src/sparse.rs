//! Compressed sparse rows and a bandwidth-reduced LU for the stiffness system.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Square-or-rectangular CSR matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed in
    /// input order, so the result does not depend on the sort algorithm.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        // Bucket by row keeping input order, then stable-sort each row by column.
        let mut order = vec![0usize; triplets.len()];
        let mut fill = counts.clone();
        for (k, &(i, _, _)) in triplets.iter().enumerate() {
            order[fill[i]] = k;
            fill[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..rows {
            let slot = &mut order[counts[i]..counts[i + 1]];
            slot.sort_by_key(|&k| triplets[k].1);
            for &k in slot.iter() {
                let (_, j, v) = triplets[k];
                if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let trip: Vec<_> = (0..self.rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        CsrMatrix::from_triplets(self.cols, self.rows, &trip)
    }

    /// Replaces row `i` by the unit row `e_i`, keeping the sparsity pattern.
    pub fn set_identity_row(&mut self, i: usize) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        let mut has_diag = false;
        for k in span {
            if self.col_idx[k] == i {
                self.values[k] = 1.0;
                has_diag = true;
            } else {
                self.values[k] = 0.0;
            }
        }
        assert!(has_diag, "row {i} has no diagonal entry in its pattern");
    }

    /// Drops explicit zeros.
    pub fn pruned(&self) -> CsrMatrix {
        let trip: Vec<_> = (0..self.rows)
            .flat_map(|i| self.row(i).filter(|(_, v)| *v != 0.0).map(move |(j, v)| (i, j, v)))
            .collect();
        CsrMatrix::from_triplets(self.rows, self.cols, &trip)
    }
}

/// Reverse Cuthill–McKee ordering of the symmetrized pattern. Returns
/// `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.rows();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for nb in &mut adj {
        nb.sort_unstable();
        nb.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        let mut queue = VecDeque::from([seed]);
        visited[seed] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// LU factorization without pivoting, stored as a band after RCM reordering.
///
/// Suited to matrices whose elimination is stable without pivoting, such as
/// stiffness matrices whose Dirichlet rows were replaced by unit rows.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// inv[old] = new
    inv: Vec<usize>,
    band: Vec<f64>,
}

impl BandLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::Dimension(format!(
                "LU needs a square matrix, got {}×{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut lower, mut upper) = (0usize, 0usize);
        for i in 0..n {
            for (j, v) in a.row(i) {
                if v == 0.0 {
                    continue;
                }
                let (pi, pj) = (inv[i], inv[j]);
                if pi > pj {
                    lower = lower.max(pi - pj);
                } else {
                    upper = upper.max(pj - pi);
                }
            }
        }
        // Keep a symmetric band: Dirichlet rows shrink only the upper part.
        let bw = lower.max(upper);
        let (lower, upper) = (bw, bw);
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                band[pi * width + (pj + lower - pi)] += v;
            }
        }
        let scale = a.norm_inf();
        let mut lu = BandLu {
            n,
            lower,
            upper,
            width,
            perm,
            inv,
            band,
        };
        lu.eliminate(scale)?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * self.width + (j + self.lower - i)]
    }

    fn eliminate(&mut self, scale: f64) -> Result<()> {
        let (n, lower, upper, width) = (self.n, self.lower, self.upper, self.width);
        let tiny = f64::EPSILON * scale.max(f64::MIN_POSITIVE) * n as f64;
        for k in 0..n {
            let pivot = self.band[k * width + lower];
            if !(pivot.abs() > tiny) {
                return Err(Error::Factorization(format!(
                    "zero pivot at elimination step {k} (row {} of the original matrix)",
                    self.perm[k]
                )));
            }
            let imax = (k + lower).min(n - 1);
            let jmax = (k + upper).min(n - 1);
            for i in k + 1..=imax {
                let ik = i * width + (k + lower - i);
                let l = self.band[ik] / pivot;
                self.band[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let ukj = self.band[k * width + (j + lower - k)];
                        self.band[i * width + (j + lower - i)] -= l * ukj;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.lower
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let j0 = i.saturating_sub(self.lower);
            let mut s = y[i];
            for j in j0..i {
                s -= self.at(i, j) * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let j1 = (i + self.upper).min(n - 1);
            let mut s = y[i];
            for j in i + 1..=j1 {
                s -= self.at(i, j) * y[j];
            }
            y[i] = s / self.at(i, i);
        }
        (0..n).map(|old| y[self.inv[old]]).collect()
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        // P A Pᵀ = L U, so Aᵀ = Pᵀ Uᵀ Lᵀ P.
        let mut w: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let k0 = i.saturating_sub(self.upper);
            let mut s = w[i];
            for k in k0..i {
                s -= self.at(k, i) * w[k];
            }
            w[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            let k1 = (i + self.lower).min(n - 1);
            let mut s = w[i];
            for k in i + 1..=k1 {
                s -= self.at(k, i) * w[k];
            }
            w[i] = s;
        }
        (0..n).map(|old| w[self.inv[old]]).collect()
    }
}
