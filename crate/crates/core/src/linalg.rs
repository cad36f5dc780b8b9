//! Sparse symmetric matrices, a fill-reducing ordering, sparse Cholesky and
//! preconditioned conjugate gradients.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Symmetric matrices store both triangles.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries. Entries are accumulated in the order given, so
    /// identical triplet lists produce bit-identical matrices.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
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
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|p| (cols[p], vals[p])));
            row.sort_by_key(|&(j, _)| j);
            let mut it = row.iter().peekable();
            while let Some(&(j, mut v)) = it.next() {
                while let Some(&&(j2, v2)) = it.peek() {
                    if j2 != j {
                        break;
                    }
                    v += v2;
                    it.next();
                }
                col_idx.push(j);
                values.push(v);
            }
            row_ptr[i + 1] = col_idx.len();
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.col_idx[p], self.values[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(p) => self.values[self.row_ptr[i] + p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `max |a_ij - a_ji| / max |a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let mut max_diff: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                max_diff = max_diff.max((v - self.get(j, i)).abs());
                max_abs = max_abs.max(v.abs());
            }
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_diff / max_abs
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Nested dissection ordering of the adjacency graph of `a`.
///
/// Separators are middle levels of breadth-first level structures rooted at
/// pseudo-peripheral vertices. Returns `perm` with `perm[new] = old`.
pub fn nested_dissection(a: &CsrMatrix) -> Vec<usize> {
    const LEAF: usize = 64;
    let n = a.n();
    let mut perm = Vec::with_capacity(n);
    // membership tag: vertices of the current subgraph carry its id
    let mut tag = vec![0usize; n];
    let mut next_tag = 1usize;
    let mut level = vec![usize::MAX; n];

    let bfs = |start: usize, id: usize, tag: &[usize], level: &mut [usize], order: &mut Vec<usize>| {
        order.clear();
        level[start] = 0;
        order.push(start);
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for (w, _) in a.row(v) {
                if w != v && tag[w] == id && level[w] == usize::MAX {
                    level[w] = level[v] + 1;
                    order.push(w);
                }
            }
        }
    };

    // stack of subgraphs; each entry is emitted as [children..., separator]
    enum Task {
        Split(Vec<usize>),
        Emit(Vec<usize>),
    }
    let mut stack = vec![Task::Split((0..n).collect())];
    let mut order = Vec::new();
    while let Some(task) = stack.pop() {
        let nodes = match task {
            Task::Emit(sep) => {
                perm.extend(sep);
                continue;
            }
            Task::Split(nodes) => nodes,
        };
        if nodes.len() <= LEAF {
            perm.extend(nodes);
            continue;
        }
        let id = next_tag;
        next_tag += 1;
        for &v in &nodes {
            tag[v] = id;
            level[v] = usize::MAX;
        }
        // connected components are handled independently
        let start = nodes[0];
        bfs(start, id, &tag, &mut level, &mut order);
        if order.len() < nodes.len() {
            let comp: Vec<usize> = order.clone();
            let rest: Vec<usize> = nodes.iter().copied().filter(|&v| level[v] == usize::MAX).collect();
            stack.push(Task::Split(rest));
            stack.push(Task::Split(comp));
            continue;
        }
        // pseudo-peripheral root
        let mut root = *order.last().expect("non-empty");
        let mut depth = level[root];
        for _ in 0..4 {
            for &v in &nodes {
                level[v] = usize::MAX;
            }
            bfs(root, id, &tag, &mut level, &mut order);
            let last = *order.last().expect("non-empty");
            if level[last] <= depth {
                break;
            }
            depth = level[last];
            root = last;
        }
        let depth = level[*order.last().expect("non-empty")];
        if depth < 2 {
            perm.extend(nodes);
            continue;
        }
        let mid = depth / 2;
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut sep = Vec::new();
        for &v in &order {
            match level[v].cmp(&mid) {
                std::cmp::Ordering::Less => left.push(v),
                std::cmp::Ordering::Equal => sep.push(v),
                std::cmp::Ordering::Greater => right.push(v),
            }
        }
        stack.push(Task::Emit(sep));
        stack.push(Task::Split(right));
        stack.push(Task::Split(left));
    }
    perm
}

/// Sparse Cholesky factor `P A Pᵀ = L Lᵀ` (up-looking, column storage of `L`).
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    n: usize,
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = nested_dissection(a);
        Self::factor_with(a, perm)
    }

    pub fn factor_with(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.n();
        let mut pinv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        // upper triangle of C = P A Pᵀ in column form: column k holds rows i ≤ k
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for old_i in 0..n {
            let i = pinv[old_i];
            for (old_j, v) in a.row(old_i) {
                let j = pinv[old_j];
                if i <= j {
                    cols[j].push((i, v));
                }
            }
        }

        // elimination tree
        let mut parent = vec![usize::MAX; n];
        let mut ancestor = vec![usize::MAX; n];
        for k in 0..n {
            for &(i0, _) in &cols[k] {
                let mut i = i0;
                while i != usize::MAX && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == usize::MAX {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        let mut path = vec![0usize; n];
        // row pattern of L(k, :) in topological order, written to stack[top..n]
        let mut ereach = |k: usize, col: &[(usize, f64)], mark: &mut [usize], stack: &mut [usize]| -> usize {
            let mut top = n;
            mark[k] = k;
            for &(i0, _) in col {
                let mut i = i0;
                if i >= k {
                    continue;
                }
                let mut len = 0;
                while mark[i] != k {
                    path[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = path[len];
                }
            }
            top
        };

        // symbolic: column counts
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(k, &cols[k], &mut mark, &mut stack);
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            col_ptr[k + 1] = col_ptr[k] + counts[k];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut fill = col_ptr.clone();

        mark.iter_mut().for_each(|m| *m = usize::MAX);
        let mut x = vec![0.0; n];
        for k in 0..n {
            let top = ereach(k, &cols[k], &mut mark, &mut stack);
            for &(i, v) in &cols[k] {
                x[i] += v;
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..n] {
                let lki = x[i] / values[col_ptr[i]];
                x[i] = 0.0;
                for p in col_ptr[i] + 1..fill[i] {
                    x[row_idx[p]] -= values[p] * lki;
                }
                d -= lki * lki;
                row_idx[fill[i]] = k;
                values[fill[i]] = lki;
                fill[i] += 1;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Internal(format!("matrix is not positive definite (pivot {k}: {d:e})")));
            }
            row_idx[fill[k]] = k;
            values[fill[k]] = d.sqrt();
            fill[k] += 1;
        }
        Ok(Self { n, perm, col_ptr, row_idx, values })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            let p0 = self.col_ptr[j];
            y[j] /= self.values[p0];
            let yj = y[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                y[self.row_idx[p]] -= self.values[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let p0 = self.col_ptr[j];
            let mut s = y[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                s -= self.values[p] * y[self.row_idx[p]];
            }
            y[j] = s / self.values[p0];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Reverse Cuthill–McKee ordering; used for tests and as a fallback.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&i| degree[i]);
    for s in starts {
        if visited[s] {
            continue;
        }
        visited[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            nbrs.sort_by_key(|&j| degree[j]);
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Jacobi-preconditioned conjugate gradients. Stops when `‖r‖ ≤ tol ‖b‖`.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.n();
    let dinv: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 1..=max_iter {
        let ap = a.mul_vec(&p);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            return Ok((x, it));
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
    Err(Error::Internal(format!("conjugate gradients did not reach {tol:e} in {max_iter} iterations")))
}

/// Largest eigenvalue of the pencil `A x = λ B x`, `A` symmetric positive
/// semidefinite and `B` symmetric positive definite, by Lanczos on `B⁻¹A` in
/// the `B` inner product with full reorthogonalization.
///
/// Stops when the largest Ritz value changes by less than `tol` (relative)
/// over five consecutive steps, or after `max_iter` steps.
pub fn lanczos_max_generalized(
    n: usize,
    apply_a: impl Fn(&[f64]) -> Vec<f64>,
    apply_b: impl Fn(&[f64]) -> Vec<f64>,
    solve_b: impl Fn(&[f64]) -> Vec<f64>,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut v = start.to_vec();
    let bv = apply_b(&v);
    let nrm = dot(&v, &bv).sqrt();
    v.iter_mut().for_each(|x| *x /= nrm);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut b_basis: Vec<Vec<f64>> = vec![bv.iter().map(|x| x / nrm).collect()];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let steps = max_iter.min(n);
    for j in 0..steps {
        let av = apply_a(&basis[j]);
        let a_j = dot(&basis[j], &av);
        let mut w = solve_b(&av);
        alpha.push(a_j);
        for _ in 0..2 {
            for (q, bq) in basis.iter().zip(&b_basis) {
                let c = dot(bq, &w);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bw = apply_b(&w);
        let b_j = dot(&w, &bw).max(0.0).sqrt();

        let m = alpha.len();
        let mut t = nalgebra::DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let ritz = nalgebra::SymmetricEigen::new(t).eigenvalues.max();
        history.push(ritz);
        let settled = history.len() > 5 && {
            let old = history[history.len() - 6];
            (ritz - old).abs() <= tol * ritz.abs().max(f64::MIN_POSITIVE)
        };
        if settled || b_j <= 1e-14 * a_j.abs().max(1.0) || j + 1 == steps {
            return ritz;
        }
        beta.push(b_j);
        basis.push(w.iter().map(|x| x / b_j).collect());
        b_basis.push(bw.iter().map(|x| x / b_j).collect());
    }
    history.last().copied().unwrap_or(0.0)
}
