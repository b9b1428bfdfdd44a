//! Compressed sparse row matrices and Jacobi-preconditioned Krylov solvers.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_unstable_by_key(|&(j, _)| j);
            let mut last = usize::MAX;
            for &(j, v) in &scratch {
                if j == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = j;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Square matrix with the given (possibly unsorted) column sets per row and zero values.
    pub fn from_pattern(n: usize, rows: &[Vec<usize>]) -> Self {
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, cols)| cols.iter().map(move |&j| (i, j, 0.0)))
            .collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to entry `(i, j)`, which must be part of the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    /// Scatters a dense local matrix into the global one.
    pub fn add_local(&mut self, dofs: &[usize], local: &[f64]) {
        let m = dofs.len();
        for (a, &i) in dofs.iter().enumerate() {
            for (b, &j) in dofs.iter().enumerate() {
                let v = local[a * m + b];
                if v != 0.0 {
                    self.add(i, j, v);
                }
            }
        }
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// `self += alpha * other`. Patterns must coincide.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert!(self.same_pattern(other), "axpy requires identical sparsity patterns");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// Re-expresses `self` on the (larger) pattern of `target`.
    pub fn on_pattern_of(&self, target: &Self) -> Self {
        let mut out = target.zeros_like();
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out.add(i, j, v);
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `y = A^T x`.
    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn bilinear_form(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= m;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub rel_tol: f64,
    /// Absolute cap on iterations; `None` means `10 * n`.
    pub max_iter: Option<usize>,
    /// Work in the Euclidean complement of the constants (singular periodic
    /// stiffness systems).
    pub zero_mean: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            max_iter: None,
            zero_mean: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn jacobi(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Preconditioned conjugate gradients for symmetric positive (semi)definite
/// systems. `x` holds the initial guess on entry.
pub fn cg(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: SolverOptions) -> Result<SolveStats> {
    let n = b.len();
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let mut rhs = b.to_vec();
    if opts.zero_mean {
        remove_mean(&mut rhs);
    }
    let bnorm = norm2(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let pinv = jacobi(a);
    let mut r = rhs.clone();
    let ax = a.mul_vec(x);
    axpy(-1.0, &ax, &mut r);
    if opts.zero_mean {
        remove_mean(&mut r);
    }
    let mut z: Vec<f64> = r.iter().zip(&pinv).map(|(r, p)| r * p).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm2(&r) / bnorm;
    for it in 0..=max_iter {
        if res <= opts.rel_tol {
            return Ok(SolveStats {
                iterations: it,
                residual: res,
            });
        }
        if it == max_iter {
            break;
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        if opts.zero_mean {
            remove_mean(&mut r);
        }
        res = norm2(&r) / bnorm;
        for i in 0..n {
            z[i] = r[i] * pinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        iterations: max_iter,
        residual: res,
    })
}

/// Jacobi-preconditioned BiCGSTAB for the nonsymmetric transport systems.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: SolverOptions) -> Result<SolveStats> {
    let n = b.len();
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let pinv = jacobi(a);
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&pinv).map(|(a, b)| a * b).collect() };

    let mut r = b.to_vec();
    axpy(-1.0, &a.mul_vec(x), &mut r);
    let r_hat = r.clone();
    let mut res = norm2(&r) / bnorm;
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut restarts = 0;
    let mut it = 0;
    while it < max_iter {
        if res <= opts.rel_tol {
            return Ok(SolveStats {
                iterations: it,
                residual: res,
            });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 || !rho_new.is_finite() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = precond(&p);
        a.mul_vec_into(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            break;
        }
        alpha = rho / rv;
        let mut s = r.clone();
        axpy(-alpha, &v, &mut s);
        if norm2(&s) / bnorm <= opts.rel_tol {
            axpy(alpha, &p_hat, x);
            r = s;
            res = norm2(&r) / bnorm;
            it += 1;
            continue;
        }
        let s_hat = precond(&s);
        a.mul_vec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            break;
        }
        omega = dot(&t, &s) / tt;
        axpy(alpha, &p_hat, x);
        axpy(omega, &s_hat, x);
        r = s;
        axpy(-omega, &t, &mut r);
        res = norm2(&r) / bnorm;
        it += 1;
        if omega == 0.0 {
            break;
        }
        // refresh the recursively updated residual now and then
        if it % 50 == 0 && restarts < 20 {
            let mut rt = b.to_vec();
            axpy(-1.0, &a.mul_vec(x), &mut rt);
            r = rt;
            restarts += 1;
        }
    }
    let mut rt = b.to_vec();
    axpy(-1.0, &a.mul_vec(x), &mut rt);
    let true_res = norm2(&rt) / bnorm;
    if true_res <= opts.rel_tol {
        return Ok(SolveStats {
            iterations: it,
            residual: true_res,
        });
    }
    Err(Error::SolverFailure {
        iterations: it,
        residual: true_res,
    })
}

/// Reverse Cuthill-McKee ordering of the (symmetrized) sparsity graph;
/// `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if j != i {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let bfs = |start: usize, seen: &mut Vec<bool>, order: &mut Vec<usize>| {
        let begin = order.len();
        seen[start] = true;
        order.push(start);
        let mut head = begin;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            next.sort_by_key(|&w| adj[w].len());
            for w in next {
                seen[w] = true;
                order.push(w);
            }
        }
        order[order.len() - 1]
    };
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for s in 0..n {
        if seen[s] {
            continue;
        }
        // one sweep to find a far node, then order from it
        let mut probe_seen = seen.clone();
        let mut probe = Vec::new();
        let far = bfs(s, &mut probe_seen, &mut probe);
        bfs(far, &mut seen, &mut order);
    }
    order.reverse();
    order
}

/// Direct solve by banded LU with partial pivoting after RCM reordering.
/// Intended for small, badly conditioned systems.
pub fn solve_direct(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    let perm = rcm_ordering(a);
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    // row i holds columns lo[i]..lo[i] + rows[i].len()
    let mut lo = vec![0usize; n];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut rhs = vec![0.0; n];
    let mut p = 0usize;
    for (i, &old) in perm.iter().enumerate() {
        let entries: Vec<(usize, f64)> = a.row(old).map(|(j, v)| (inv[j], v)).collect();
        let first = entries.iter().map(|e| e.0).min().unwrap_or(i).min(i);
        let last = entries.iter().map(|e| e.0).max().unwrap_or(i).max(i);
        let mut r = vec![0.0; last + 1 - first];
        for (j, v) in entries {
            r[j - first] += v;
        }
        p = p.max(i - first);
        lo[i] = first;
        rows.push(r);
        rhs[i] = b[old];
    }
    let scale = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let get = |rows: &[Vec<f64>], lo: &[usize], i: usize, c: usize| -> f64 {
        if c < lo[i] {
            0.0
        } else {
            rows[i].get(c - lo[i]).copied().unwrap_or(0.0)
        }
    };
    for k in 0..n {
        let end = (k + p + 1).min(n);
        let piv = (k..end)
            .max_by(|&x, &y| get(&rows, &lo, x, k).abs().total_cmp(&get(&rows, &lo, y, k).abs()))
            .unwrap_or(k);
        let pv = get(&rows, &lo, piv, k);
        if !(pv.abs() > 1e-300 * scale.max(1.0)) {
            return Err(Error::SolverFailure {
                iterations: k,
                residual: f64::INFINITY,
            });
        }
        rows.swap(k, piv);
        lo.swap(k, piv);
        rhs.swap(k, piv);
        let (head, tail) = rows.split_at_mut(k + 1);
        let pivot_row = &head[k];
        let plo = lo[k];
        let phi = plo + pivot_row.len();
        for (off, row) in tail.iter_mut().enumerate().take(end - k - 1) {
            let i = k + 1 + off;
            if k < lo[i] {
                continue;
            }
            let f = row.get(k - lo[i]).copied().unwrap_or(0.0);
            if f == 0.0 {
                continue;
            }
            let l = f / pv;
            if lo[i] + row.len() < phi {
                row.resize(phi - lo[i], 0.0);
            }
            for c in k..phi {
                row[c - lo[i]] -= l * pivot_row[c - plo];
            }
            rhs[i] -= l * rhs[k];
        }
    }
    let mut y = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for (off, v) in rows[i].iter().enumerate() {
            let c = lo[i] + off;
            if c > i {
                s -= v * y[c];
            }
        }
        y[i] = s / rows[i][i - lo[i]];
    }
    let mut x = vec![0.0; n];
    for (new, &old) in perm.iter().enumerate() {
        x[old] = y[new];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure {
            iterations: n,
            residual: f64::NAN,
        });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d_periodic(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            t.push((i, (i + 1) % n, -1.0));
            t.push((i, (i + n - 1) % n, -1.0));
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_are_summed_and_sorted() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![6.5, -2.0]);
        assert_eq!(m.mul_vec_transpose(&[1.0, 1.0]), vec![2.0, -1.0, 1.5]);
    }

    #[test]
    fn cg_solves_spd() {
        let a = laplace_1d_periodic(50, 0.1);
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&xs);
        let mut x = vec![0.0; 50];
        let st = cg(&a, &b, &mut x, SolverOptions::default()).unwrap();
        assert!(st.residual <= 1e-11);
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_singular_zero_mean() {
        let a = laplace_1d_periodic(40, 0.0);
        let mut xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).cos()).collect();
        remove_mean(&mut xs);
        let b = a.mul_vec(&xs);
        let mut x = vec![0.0; 40];
        cg(&a, &b, &mut x, SolverOptions { zero_mean: true, ..Default::default() }).unwrap();
        remove_mean(&mut x);
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_reports_failure() {
        let a = laplace_1d_periodic(60, 0.0);
        let b: Vec<f64> = (0..60).map(|i| if i == 0 { 1.0 } else { -1.0 / 59.0 }).collect();
        let mut x = vec![0.0; 60];
        let err = cg(&a, &b, &mut x, SolverOptions { max_iter: Some(2), zero_mean: true, ..Default::default() });
        assert!(matches!(err, Err(Error::SolverFailure { .. })));
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let n = 60;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            t.push((i, (i + 1) % n, -1.5));
            t.push((i, (i + n - 1) % n, 0.5));
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let xs: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).sqrt()).collect();
        let b = a.mul_vec(&xs);
        let mut x = vec![0.0; n];
        bicgstab(&a, &b, &mut x, SolverOptions { rel_tol: 1e-13, ..Default::default() }).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-10);
        }
    }
    #[test]
    fn direct_solve_matches_nonsymmetric_system() {
        // periodic 1D convection-diffusion with a wide stiffness spread
        let n = 50;
        let mut trip = Vec::new();
        for i in 0..n {
            let w = if i % 7 == 0 { 1e8 } else { 1.0 };
            trip.push((i, i, 2.0 * w + 1.0));
            trip.push((i, (i + 1) % n, -w + 0.3));
            trip.push((i, (i + n - 1) % n, -w - 0.3));
        }
        let a = CsrMatrix::from_triplets(n, n, &trip);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.mul_vec(&x_true);
        let x = solve_direct(&a, &b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-6, "{u} {v}");
        }
        let perm = rcm_ordering(&a);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }
}
