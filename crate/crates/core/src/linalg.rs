//! Symmetric positive definite solvers.
//!
//! The killed Laplacian of a graph is sparse and SPD. Small and medium
//! problems use a reverse Cuthill-McKee ordering followed by an envelope
//! (skyline) Cholesky factorization, which also gives exact Gaussian samples.
//! Large problems fall back to Jacobi-preconditioned conjugate gradients.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Symmetric sparse matrix stored as a diagonal plus off-diagonal rows.
#[derive(Clone, Debug)]
pub struct SparseSym {
    diag: Vec<f64>,
    // each off-diagonal pair appears in both rows
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    pub fn new(diag: Vec<f64>) -> Self {
        let n = diag.len();
        SparseSym { diag, rows: vec![Vec::new(); n] }
    }

    /// Adds `v` at `(i, j)` and `(j, i)`; `i != j`.
    pub fn add_pair(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_ne!(i, j);
        self.rows[i].push((j, v));
        self.rows[j].push((i, v));
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            let mut s = self.diag[i] * x[i];
            for &(j, v) in &self.rows[i] {
                s += v * x[j];
            }
            out[i] = s;
        }
    }

    /// Number of stored entries of the lower envelope under `perm`.
    pub fn envelope_size(&self, perm: &[usize]) -> usize {
        let inv = inverse_permutation(perm);
        (0..self.len())
            .map(|i| {
                let first = self.rows[perm[i]].iter().map(|&(j, _)| inv[j]).filter(|&j| j < i).min().unwrap_or(i);
                i - first + 1
            })
            .sum()
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Reverse Cuthill-McKee ordering; `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseSym) -> Vec<usize> {
    let n = a.len();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).len()).collect();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    let mut level = vec![usize::MAX; n];
    while order.len() < n {
        let start = (0..n).filter(|&i| !placed[i]).min_by_key(|&i| degree[i]).unwrap();
        let root = pseudo_peripheral(a, start, &degree, &mut level);
        let mut queue = VecDeque::from([root]);
        placed[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = a.row(v).iter().map(|&(j, _)| j).filter(|&j| !placed[j]).collect();
            next.sort_unstable_by_key(|&j| (degree[j], j));
            next.dedup();
            for j in next {
                placed[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(a: &SparseSym, root: usize, level: &mut [usize]) -> Vec<usize> {
    let mut visited = vec![root];
    level[root] = 0;
    let mut head = 0;
    while head < visited.len() {
        let v = visited[head];
        head += 1;
        for &(j, _) in a.row(v) {
            if level[j] == usize::MAX {
                level[j] = level[v] + 1;
                visited.push(j);
            }
        }
    }
    visited
}

fn pseudo_peripheral(a: &SparseSym, start: usize, degree: &[usize], level: &mut [usize]) -> usize {
    let mut root = start;
    let mut depth = 0;
    for _ in 0..8 {
        let visited = bfs_levels(a, root, level);
        let ecc = visited.iter().map(|&v| level[v]).max().unwrap_or(0);
        let candidate = visited
            .iter()
            .copied()
            .filter(|&v| level[v] == ecc)
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        for &v in &visited {
            level[v] = usize::MAX;
        }
        if ecc <= depth {
            break;
        }
        depth = ecc;
        root = candidate;
    }
    root
}

/// Envelope Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn new(a: &SparseSym) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        Self::with_ordering(a, perm)
    }

    pub fn with_ordering(a: &SparseSym, perm: Vec<usize>) -> Result<Self> {
        let n = a.len();
        let inv = inverse_permutation(&perm);
        let mut first = vec![0; n];
        let mut start = vec![0; n + 1];
        for i in 0..n {
            first[i] = a.row(perm[i]).iter().map(|&(j, _)| inv[j]).filter(|&j| j < i).min().unwrap_or(i);
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut values = vec![0.0; start[n]];
        for i in 0..n {
            let row = &mut values[start[i]..start[i + 1]];
            row[i - first[i]] = a.diag()[perm[i]];
            for &(j, v) in a.row(perm[i]) {
                let jj = inv[j];
                if jj < i {
                    row[jj - first[i]] += v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = values[start[i] + j - fi];
                let ri = &values[start[i] + lo - fi..start[i] + j - fi];
                let rj = &values[start[j] + lo - fj..start[j] + j - fj];
                s -= dot(ri, rj);
                values[start[i] + j - fi] = s / values[start[j] + j - fj];
            }
            let row = &values[start[i]..start[i] + i - fi];
            let d = values[start[i] + i - fi] - dot(row, row);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { row: perm[i], pivot: d });
            }
            values[start[i] + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { perm, inv, first, start, values })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.values[self.start[i] + j - self.first[i]]
    }

    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.len() {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i] + i - fi];
            y[i] = (y[i] - dot(row, &y[fi..i])) / self.l(i, i);
        }
    }

    fn backward(&self, y: &mut [f64]) {
        for i in (0..self.len()).rev() {
            let fi = self.first[i];
            y[i] /= self.l(i, i);
            let xi = y[i];
            let row = &self.values[self.start[i]..self.start[i] + i - fi];
            for (yk, &lik) in y[fi..i].iter_mut().zip(row) {
                *yk -= lik * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; self.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Maps i.i.d. standard normals `z` to a centered Gaussian vector with
    /// covariance `A⁻¹`.
    pub fn sample_from_normals(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; self.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Position of original index `i` in the factor ordering.
    pub fn position(&self, i: usize) -> usize {
        self.inv[i]
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients; stops when the residual norm
/// falls below `tol · ‖b‖`.
pub fn conjugate_gradient(a: &SparseSym, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a.diag().iter().map(|&d| 1.0 / d).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rnorm = bnorm;
    for _ in 0..max_iter {
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite { row: 0, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = dot(&r, &r).sqrt();
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rnorm <= tol * bnorm {
        Ok(x)
    } else {
        Err(Error::NoConvergence { iterations: max_iter, residual: rnorm / bnorm })
    }
}

/// Direct or iterative SPD solver chosen by problem size.
#[derive(Clone, Debug)]
pub enum SpdSolver {
    Direct(EnvelopeCholesky),
    Iterative { matrix: SparseSym, tol: f64 },
}

/// Envelopes larger than this many entries are not factored.
pub const MAX_ENVELOPE: usize = 40_000_000;

impl SpdSolver {
    /// Factors `a` directly when `a.len() <= direct_limit` and the envelope
    /// fits in memory, otherwise prepares conjugate gradients.
    pub fn new(a: SparseSym, direct_limit: usize, tol: f64) -> Result<Self> {
        if a.len() <= direct_limit {
            let perm = reverse_cuthill_mckee(&a);
            if a.envelope_size(&perm) <= MAX_ENVELOPE {
                return Ok(SpdSolver::Direct(EnvelopeCholesky::with_ordering(&a, perm)?));
            }
        }
        // positive diagonal is necessary for the preconditioner
        if let Some(i) = a.diag().iter().position(|&d| !(d > 0.0)) {
            return Err(Error::NotPositiveDefinite { row: i, pivot: a.diag()[i] });
        }
        Ok(SpdSolver::Iterative { matrix: a, tol })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpdSolver::Direct(c) => Ok(c.solve(b)),
            SpdSolver::Iterative { matrix, tol } => conjugate_gradient(matrix, b, *tol, 10 * matrix.len() + 100),
        }
    }

    pub fn cholesky(&self) -> Option<&EnvelopeCholesky> {
        match self {
            SpdSolver::Direct(c) => Some(c),
            SpdSolver::Iterative { .. } => None,
        }
    }

    pub fn is_direct(&self) -> bool {
        matches!(self, SpdSolver::Direct(_))
    }
}

/// Dense Cholesky factor of a small SPD matrix (row-major input).
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn new(mut a: Vec<f64>, n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        for j in 0..n {
            let d = a[j * n + j] - dot(&a[j * n..j * n + j], &a[j * n..j * n + j]);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            let ljj = d.sqrt();
            a[j * n + j] = ljj;
            for i in j + 1..n {
                let s = a[i * n + j] - dot(&a[i * n..i * n + j], &a[j * n..j * n + j]);
                a[i * n + j] = s / ljj;
            }
        }
        Ok(DenseCholesky { n, l: a })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            y[i] = (y[i] - dot(row, &y[..i])) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            y[i] /= self.l[i * n + i];
            let xi = y[i];
            for k in 0..i {
                y[k] -= self.l[i * n + k] * xi;
            }
        }
        y
    }

    /// Cheap reciprocal condition estimate `(min Lᵢᵢ / max Lᵢᵢ)²`.
    pub fn rcond_estimate(&self) -> f64 {
        let d = (0..self.n).map(|i| self.l[i * self.n + i]);
        let (lo, hi) = d.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi == 0.0 {
            0.0
        } else {
            (lo / hi).powi(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn path_laplacian(n: usize, kill: f64) -> SparseSym {
        let mut a = SparseSym::new(vec![2.0 + kill; n]);
        for i in 0..n - 1 {
            a.add_pair(i, i + 1, -1.0);
        }
        a
    }

    #[test]
    fn two_by_two_inverse() {
        let mut a = SparseSym::new(vec![2.0, 2.0]);
        a.add_pair(0, 1, -1.0);
        let c = EnvelopeCholesky::new(&a).unwrap();
        let x = c.solve(&[1.0, 0.0]);
        assert_relative_eq!(x[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let mut a = SparseSym::new(vec![1.0, 1.0]);
        a.add_pair(0, 1, -1.0);
        assert!(matches!(EnvelopeCholesky::new(&a), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn cg_matches_direct() {
        let a = path_laplacian(50, 0.1);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x = EnvelopeCholesky::new(&a).unwrap().solve(&b);
        let y = conjugate_gradient(&a, &b, 1e-13, 1000).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert_relative_eq!(u, v, epsilon = 1e-10);
        }
    }

    #[test]
    fn sampling_factor_reproduces_inverse() {
        // columns of L^{-T} give A^{-1} = L^{-T} L^{-1}
        let a = path_laplacian(6, 0.3);
        let c = EnvelopeCholesky::new(&a).unwrap();
        let n = 6;
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut z = vec![0.0; n];
                z[k] = 1.0;
                c.sample_from_normals(&z)
            })
            .collect();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let col = c.solve(&e);
            for j in 0..n {
                let cov: f64 = cols.iter().map(|v| v[i] * v[j]).sum();
                assert_relative_eq!(cov, col[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dense_cholesky_solves_and_estimates() {
        let a = vec![4.0, 2.0, 0.0, 2.0, 5.0, 1.0, 0.0, 1.0, 3.0];
        let c = DenseCholesky::new(a.clone(), 3).unwrap();
        let x = c.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert_relative_eq!(r, (i + 1) as f64, epsilon = 1e-13);
        }
        assert!(c.rcond_estimate() > 0.1);
        assert!(DenseCholesky::new(vec![1.0, 1.0, 1.0, 1.0], 2).is_err());
    }

    proptest! {
        #[test]
        fn envelope_solve_has_small_residual(
            n in 2usize..40,
            extra in proptest::collection::vec((0usize..40, 0usize..40, 0.1f64..3.0), 0..60),
            kill in proptest::collection::vec(0.0f64..1.0, 40),
        ) {
            let mut a = SparseSym::new(vec![0.0; n]);
            let mut seen = std::collections::HashSet::new();
            let mut diag = vec![0.0; n];
            let mut add = |a: &mut SparseSym, i: usize, j: usize, w: f64| {
                if i != j && seen.insert((i.min(j), i.max(j))) {
                    a.add_pair(i, j, -w);
                    diag[i] += w;
                    diag[j] += w;
                }
            };
            for i in 0..n - 1 { add(&mut a, i, i + 1, 1.0); }
            for &(i, j, w) in &extra { add(&mut a, i % n, j % n, w); }
            for i in 0..n { diag[i] += kill[i] + 0.01; }
            a.diag = diag;
            let b: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
            let x = EnvelopeCholesky::new(&a).unwrap().solve(&b);
            let mut r = vec![0.0; n];
            a.mul(&x, &mut r);
            for i in 0..n {
                prop_assert!((r[i] - b[i]).abs() <= 1e-9 * (1.0 + b[i].abs()));
            }
        }
    }
}
