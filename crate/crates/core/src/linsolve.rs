//! Sparse symmetric positive definite solves.
//!
//! Small and medium systems go through a reverse Cuthill-McKee ordered
//! envelope Cholesky factorization. Above [`CG_THRESHOLD`] unknowns a
//! Jacobi-preconditioned conjugate gradient is used instead.

use std::collections::VecDeque;
use thiserror::Error;

pub const CG_THRESHOLD: usize = 200_000;

#[derive(Debug, Error, PartialEq)]
pub enum LinsolveError {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: matrix {0}, rhs {1}")]
    Dimension(usize, usize),
    #[error("conjugate gradient did not converge in {0} iterations")]
    NoConvergence(usize),
}

/// Compressed sparse row matrix. Symmetric matrices store both triangles and
/// column indices are sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the given sorted, deduplicated column lists per row.
    pub fn from_rows(rows: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix { n: rows.len(), row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    /// Build from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, t: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![Vec::new(); n];
        for &(i, j, _) in t {
            rows[i].push(j);
        }
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
        }
        let mut m = Self::from_rows(&rows);
        for &(i, j, v) in t {
            let p = m.position(i, j).expect("pattern built from triplets");
            m.values[p] += v;
        }
        m
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        r.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let mut s = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.values[p] * x[self.col_idx[p]];
                }
                s
            })
            .collect()
    }

    pub fn zero_values(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn same_pattern(&self, o: &CsrMatrix) -> bool {
        self.n == o.n && self.row_ptr == o.row_ptr && self.col_idx == o.col_idx
    }
}

/// Reverse Cuthill-McKee ordering. Returns `perm` with `perm[new] = old`.
pub fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let deg: Vec<usize> = (0..n).map(|i| a.row_ptr[i + 1] - a.row_ptr[i]).collect();
    let nbrs = |i: usize| &a.col_idx[a.row_ptr[i]..a.row_ptr[i + 1]];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_last = |start: usize, visited: &Vec<bool>| -> usize {
        // farthest node from start within its component, lowest degree on ties
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        dist[start] = 0;
        q.push_back(start);
        let mut best = start;
        while let Some(u) = q.pop_front() {
            if dist[u] > dist[best] || (dist[u] == dist[best] && deg[u] < deg[best]) {
                best = u;
            }
            for &v in nbrs(u) {
                if !visited[v] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        best
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let mut start = seed;
        for _ in 0..3 {
            let s = bfs_last(start, &visited);
            if s == start {
                break;
            }
            start = s;
        }
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = nbrs(u).iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_by_key(|&v| (deg[v], v));
            for v in next {
                visited[v] = true;
                q.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (profile) Cholesky factorization `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<f64>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl EnvelopeCholesky {
    /// Symbolic analysis for the pattern of `a`.
    pub fn analyze(a: &CsrMatrix) -> Self {
        let n = a.n;
        let perm = rcm_order(a);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first = vec![0; n];
        for i in 0..n {
            let old = perm[i];
            let mut f = i;
            for p in a.row_ptr[old]..a.row_ptr[old + 1] {
                f = f.min(iperm[a.col_idx[p]]);
            }
            first[i] = f;
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        EnvelopeCholesky {
            n,
            perm,
            iperm,
            first,
            l: vec![0.0; start[n]],
            start,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
        }
    }

    pub fn matches(&self, a: &CsrMatrix) -> bool {
        a.n == self.n && a.row_ptr == self.row_ptr && a.col_idx == self.col_idx
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.start[self.n]
    }

    /// Numeric factorization.
    pub fn factor(&mut self, a: &CsrMatrix) -> Result<(), LinsolveError> {
        debug_assert!(self.matches(a));
        self.l.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let old = self.perm[i];
            let fi = self.first[i];
            let si = self.start[i];
            let mut diag = 0.0;
            for p in a.row_ptr[old]..a.row_ptr[old + 1] {
                let j = self.iperm[a.col_idx[p]];
                if j < i {
                    self.l[si + j - fi] = a.values[p];
                } else if j == i {
                    diag = a.values[p];
                }
            }
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.l[si + j - fi];
                let (ri, rj) = (&self.l[si + k0 - fi..si + j - fi], &self.l[sj + k0 - fj..sj + j - fj]);
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                self.l[si + j - fi] = s / self.l[sj + j - fj];
            }
            let row = &self.l[si..si + i - fi];
            let s = diag - row.iter().map(|x| x * x).sum::<f64>();
            if !(s > 1e-14 * diag.abs()) || !s.is_finite() {
                return Err(LinsolveError::NotPositiveDefinite { row: old, pivot: s });
            }
            self.l[si + i - fi] = s.sqrt();
        }
        Ok(())
    }

    /// Solve with the current factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let (fi, si) = (self.first[i], self.start[i]);
            let row = &self.l[si..si + i - fi];
            let s: f64 = row.iter().zip(&z[fi..i]).map(|(x, y)| x * y).sum();
            z[i] = (z[i] - s) / self.l[si + i - fi];
        }
        for i in (0..n).rev() {
            let (fi, si) = (self.first[i], self.start[i]);
            z[i] /= self.l[si + i - fi];
            let xi = z[i];
            for k in fi..i {
                z[k] -= self.l[si + k - fi] * xi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let ax = a.matvec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let nb = norm2(b);
    let rr = if nb > 0.0 { norm2(&r) / nb } else { norm2(&r) };
    (r, rr)
}

/// Reusable solver for a fixed sparsity pattern.
#[derive(Debug, Clone, Default)]
pub struct SpdSolver {
    chol: Option<EnvelopeCholesky>,
}

impl SpdSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solve `A x = b` for symmetric positive definite `A`.
    pub fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, LinsolveError> {
        if b.len() != a.n {
            return Err(LinsolveError::Dimension(a.n, b.len()));
        }
        if a.n == 0 {
            return Ok(Vec::new());
        }
        if a.n > CG_THRESHOLD {
            return pcg(a, b, 1e-8, 10 * a.n);
        }
        if !self.chol.as_ref().is_some_and(|c| c.matches(a)) {
            self.chol = Some(EnvelopeCholesky::analyze(a));
        }
        let chol = self.chol.as_mut().expect("analysis present");
        chol.factor(a)?;
        let mut x = chol.solve(b);
        // iterative refinement for badly scaled systems
        for _ in 0..3 {
            let (r, rr) = rel_residual(a, &x, b);
            if rr <= 1e-12 {
                break;
            }
            let dx = chol.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        }
        Ok(x)
    }
}

/// One-shot solve of `A x = b`.
pub fn factor_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, LinsolveError> {
    SpdSolver::new().solve(a, b)
}

/// Jacobi-preconditioned conjugate gradient to relative residual `tol`.
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, LinsolveError> {
    let n = a.n;
    let dinv: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let nb = norm2(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        let ap = a.matvec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(LinsolveError::NotPositiveDefinite { row: it, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= tol * nb {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinsolveError::NoConvergence(max_iter))
}
