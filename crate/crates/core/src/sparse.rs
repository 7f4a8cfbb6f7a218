//! Sparse matrices and a direct LU solver.
//!
//! The factorization is left-looking (one sparse triangular solve per
//! column) with threshold partial pivoting that prefers the diagonal. Columns
//! are ordered by nested dissection of the symmetrized pattern, and rows and
//! columns are equilibrated before factoring.

use crate::error::{Error, Result};

/// Coordinate-format accumulator; duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols, "({i}, {j}) outside {}x{}", self.nrows, self.ncols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Add `scale * other` with its origin shifted to `(row, col)`.
    pub fn add_block(&mut self, row: usize, col: usize, other: &CscMatrix, scale: f64, transpose: bool) {
        for j in 0..other.ncols {
            for p in other.colptr[j]..other.colptr[j + 1] {
                let i = other.rowidx[p];
                let v = scale * other.values[p];
                if transpose {
                    self.add(row + j, col + i, v);
                } else {
                    self.add(row + i, col + j, v);
                }
            }
        }
    }

    pub fn to_csc(&self) -> CscMatrix {
        let mut e = self.entries.clone();
        // stable: duplicates are summed in insertion order
        e.sort_by_key(|&(i, j, _)| (j, i));
        let mut colptr = vec![0; self.ncols + 1];
        let mut rowidx = Vec::with_capacity(e.len());
        let mut values: Vec<f64> = Vec::with_capacity(e.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in e {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                rowidx.push(i);
                values.push(v);
                colptr[j + 1] += 1;
                last = Some((i, j));
            }
        }
        for j in 0..self.ncols {
            colptr[j + 1] += colptr[j];
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            colptr,
            rowidx,
            values,
        }
    }
}

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Triplets::new(nrows, ncols).to_csc()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.colptr[j]..self.colptr[j + 1]).map(move |p| (self.rowidx[p], self.values[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.col(j).filter(|&(r, _)| r == i).map(|(_, v)| v).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "vector length");
        let mut y = vec![0.0; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (i, v) in self.col(j) {
                    y[i] += v * xj;
                }
            }
        }
        y
    }

    /// `A^T x`.
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "vector length");
        (0..self.ncols).map(|j| self.col(j).map(|(i, v)| v * x[i]).sum()).collect()
    }

    pub fn transpose(&self) -> CscMatrix {
        let mut t = Triplets::new(self.ncols, self.nrows);
        t.add_block(0, 0, self, 1.0, true);
        t.to_csc()
    }

    pub fn to_triplets(&self) -> Triplets {
        let mut t = Triplets::new(self.nrows, self.ncols);
        t.add_block(0, 0, self, 1.0, false);
        t
    }

    /// Largest absolute entry of `A - A^T`.
    pub fn asymmetry(&self) -> f64 {
        let mut t = self.to_triplets();
        t.add_block(0, 0, self, -1.0, true);
        t.to_csc().values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

/// Nested dissection ordering of the symmetrized pattern of a square matrix.
/// Returns `order` with `order[k]` the original index eliminated `k`-th.
pub fn nested_dissection(a: &CscMatrix) -> Vec<usize> {
    let n = a.ncols;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        for (i, _) in a.col(j) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let mut nd = Dissector {
        adj: &adj,
        stamp: vec![0; n],
        level: vec![0; n],
        clock: 0,
        order: Vec::with_capacity(n),
    };
    nd.dissect((0..n).collect());
    nd.order
}

/// Ordering for a saddle-point matrix `[[A, B^T], [B, 0]]` whose first
/// `n_primal` unknowns form the `A` block: nested dissection of the pattern
/// of `A + B^T B`, with each multiplier placed right after the last primal
/// unknown it couples to, so that its pivot is available on the diagonal.
pub fn saddle_order(k: &CscMatrix, n_primal: usize) -> Vec<usize> {
    let n = k.ncols;
    let mut p = Triplets::new(n_primal, n_primal);
    for j in 0..n_primal {
        for (i, _) in k.col(j) {
            if i < n_primal {
                p.add(i, j, 1.0);
            }
        }
    }
    let coupled: Vec<Vec<usize>> = (n_primal..n)
        .map(|m| k.col(m).map(|(i, _)| i).filter(|&i| i < n_primal).collect())
        .collect();
    for s in &coupled {
        for &i in s {
            for &j in s {
                p.add(i, j, 1.0);
            }
        }
    }
    let ord = nested_dissection(&p.to_csc());
    let mut pos = vec![0; n_primal];
    for (k, &v) in ord.iter().enumerate() {
        pos[v] = k;
    }
    let mut after: Vec<Vec<usize>> = vec![Vec::new(); n_primal];
    let mut free = Vec::new();
    for (m, s) in coupled.iter().enumerate() {
        match s.iter().copied().max_by_key(|&i| pos[i]) {
            Some(last) => after[last].push(n_primal + m),
            None => free.push(n_primal + m),
        }
    }
    let mut q = Vec::with_capacity(n);
    for &v in &ord {
        q.push(v);
        q.extend(&after[v]);
    }
    q.extend(free);
    q
}

const LEAF: usize = 64;

struct Dissector<'a> {
    adj: &'a [Vec<usize>],
    stamp: Vec<usize>,
    level: Vec<usize>,
    clock: usize,
    order: Vec<usize>,
}

impl Dissector<'_> {
    fn tick(&mut self, nodes: &[usize]) -> usize {
        self.clock += 2;
        for &v in nodes {
            self.stamp[v] = self.clock;
        }
        self.clock
    }

    /// Breadth-first levels from `root` within nodes stamped `member`; visited
    /// nodes get stamp `member + 1`. Returns the level sets.
    fn bfs(&mut self, root: usize, member: usize) -> Vec<Vec<usize>> {
        let mut levels = vec![vec![root]];
        self.stamp[root] = member + 1;
        self.level[root] = 0;
        loop {
            let mut next = Vec::new();
            for &v in levels.last().expect("level") {
                for &w in &self.adj[v] {
                    if self.stamp[w] == member {
                        self.stamp[w] = member + 1;
                        self.level[w] = levels.len();
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                return levels;
            }
            levels.push(next);
        }
    }

    fn dissect(&mut self, nodes: Vec<usize>) {
        if nodes.len() <= LEAF {
            self.order.extend(nodes);
            return;
        }
        let member = self.tick(&nodes);
        let levels = self.bfs(nodes[0], member);
        let reached: usize = levels.iter().map(Vec::len).sum();
        if reached < nodes.len() {
            // several components: dissect each on its own
            let mut comps = Vec::new();
            let member = self.tick(&nodes);
            for &v in &nodes {
                if self.stamp[v] == member {
                    comps.push(self.bfs(v, member).concat());
                }
            }
            for c in comps {
                self.dissect(c);
            }
            return;
        }
        // pseudo-peripheral root
        let (mut levels, mut member) = (levels, member);
        for _ in 0..3 {
            let last = levels.last().expect("level");
            let far = *last.iter().min_by_key(|&&v| self.adj[v].len()).expect("node");
            member = self.tick(&nodes);
            let cand = self.bfs(far, member);
            let better = cand.len() > levels.len();
            levels = cand;
            if !better {
                break;
            }
        }
        if levels.len() < 3 {
            self.order.extend(nodes);
            return;
        }
        // smallest level set that leaves both parts with at least 30 % of the nodes
        let total = nodes.len();
        let mut acc = 0;
        let mut m = 0;
        let mut best = usize::MAX;
        for (k, l) in levels.iter().enumerate().take(levels.len() - 1).skip(1) {
            acc += levels[k - 1].len();
            let rest = total - acc - l.len();
            if 10 * acc >= 3 * total && 10 * rest >= 3 * total && l.len() < best {
                best = l.len();
                m = k;
            }
        }
        if m == 0 {
            let mut acc = 0;
            for (k, l) in levels.iter().enumerate() {
                acc += l.len();
                if 2 * acc >= total {
                    m = k.clamp(1, levels.len() - 2);
                    break;
                }
            }
        }
        // only separator nodes adjacent to the far side are needed
        let mut part_a: Vec<usize> = levels[..m].concat();
        let mut sep = Vec::new();
        for &v in &levels[m] {
            if self.adj[v].iter().any(|&w| self.stamp[w] == member + 1 && self.level[w] == m + 1) {
                sep.push(v);
            } else {
                part_a.push(v);
            }
        }
        let part_b: Vec<usize> = levels[m + 1..].concat();
        self.dissect(part_a);
        self.dissect(part_b);
        self.order.extend(sep);
    }
}

/// LU factors of a square sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
    q: Vec<usize>,
    pinv: Vec<usize>,
    l: Vec<Vec<(usize, f64)>>,
    u: Vec<Vec<(usize, f64)>>,
    udiag: Vec<f64>,
}

/// Relative pivot size below which a column counts as dependent.
const SINGULAR_TOL: f64 = 1e-13;
/// A diagonal pivot is kept when at least this fraction of the largest candidate.
const DIAG_PREFERENCE: f64 = 0.1;

impl SparseLu {
    pub fn factor(a: &CscMatrix) -> Result<Self> {
        Self::factor_with_order(a, &nested_dissection(a))
    }

    pub fn factor_with_order(a: &CscMatrix, q: &[usize]) -> Result<Self> {
        let n = a.ncols;
        if a.nrows != n {
            return Err(Error::Input(format!("LU of a non-square {}x{} matrix", a.nrows, n)));
        }
        // equilibration
        let mut row_scale = vec![0.0_f64; n];
        for j in 0..n {
            for (i, v) in a.col(j) {
                row_scale[i] = row_scale[i].max(v.abs());
            }
        }
        if let Some(i) = row_scale.iter().position(|&r| r == 0.0) {
            return Err(Error::Singular(format!("row {i} is empty")));
        }
        for r in row_scale.iter_mut() {
            *r = 1.0 / *r;
        }
        let mut col_scale = vec![0.0; n];
        for (j, cs) in col_scale.iter_mut().enumerate() {
            let m = a.col(j).fold(0.0_f64, |m, (i, v)| m.max((v * row_scale[i]).abs()));
            if m == 0.0 {
                return Err(Error::Singular(format!("column {j} is empty")));
            }
            *cs = 1.0 / m;
        }

        const NONE: usize = usize::MAX;
        let mut pinv = vec![NONE; n];
        let mut l: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut u: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut udiag = Vec::with_capacity(n);
        let mut x = vec![0.0; n];
        let mut visited = vec![NONE; n];
        let mut topo = vec![0usize; n];
        let mut stack: Vec<(usize, usize)> = Vec::new();

        for (k, &col) in q.iter().enumerate() {
            // symbolic: rows reachable from the column pattern through L
            let mut top = n;
            for (i0, _) in a.col(col) {
                if visited[i0] == k {
                    continue;
                }
                stack.push((i0, 0));
                visited[i0] = k;
                while let Some(&(v, next)) = stack.last() {
                    let children: &[(usize, f64)] = if pinv[v] == NONE { &[] } else { &l[pinv[v]] };
                    match children[next..].iter().position(|&(w, _)| visited[w] != k) {
                        Some(off) => {
                            let w = children[next + off].0;
                            stack.last_mut().expect("frame").1 = next + off + 1;
                            visited[w] = k;
                            stack.push((w, 0));
                        }
                        None => {
                            stack.pop();
                            top -= 1;
                            topo[top] = v;
                        }
                    }
                }
            }
            // numeric: x = L \ A(:, col)
            for (i, v) in a.col(col) {
                x[i] = v * row_scale[i] * col_scale[col];
            }
            for &i in &topo[top..n] {
                let j = pinv[i];
                if j == NONE {
                    continue;
                }
                let xi = x[i];
                if xi != 0.0 {
                    for &(r, v) in &l[j] {
                        x[r] -= v * xi;
                    }
                }
            }
            let mut piv = NONE;
            let mut best = 0.0;
            let mut colmax = 0.0_f64;
            for &i in &topo[top..n] {
                colmax = colmax.max(x[i].abs());
                if pinv[i] == NONE && x[i].abs() > best {
                    best = x[i].abs();
                    piv = i;
                }
            }
            if piv == NONE || best <= SINGULAR_TOL * colmax.max(1.0) {
                return Err(Error::Singular(format!(
                    "column {col} is linearly dependent on earlier columns (pivot {best:.1e})"
                )));
            }
            if pinv[col] == NONE && visited[col] == k && x[col].abs() >= DIAG_PREFERENCE * best {
                piv = col;
            }
            let pivot = x[piv];
            let mut ucol = Vec::new();
            let mut lcol = Vec::new();
            for &i in &topo[top..n] {
                if pinv[i] != NONE {
                    if x[i] != 0.0 {
                        ucol.push((pinv[i], x[i]));
                    }
                } else if i != piv && x[i] != 0.0 {
                    lcol.push((i, x[i] / pivot));
                }
                x[i] = 0.0;
            }
            pinv[piv] = k;
            u.push(ucol);
            l.push(lcol);
            udiag.push(pivot);
        }
        for col in l.iter_mut() {
            for e in col.iter_mut() {
                e.0 = pinv[e.0];
            }
        }
        Ok(SparseLu {
            n,
            row_scale,
            col_scale,
            q: q.to_vec(),
            pinv,
            l,
            u,
            udiag,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Entries stored in both factors.
    pub fn nnz(&self) -> usize {
        self.n + self.l.iter().map(Vec::len).sum::<usize>() + self.u.iter().map(Vec::len).sum::<usize>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side length");
        let mut z = vec![0.0; self.n];
        for (i, &bi) in b.iter().enumerate() {
            z[self.pinv[i]] = bi * self.row_scale[i];
        }
        for k in 0..self.n {
            let zk = z[k];
            if zk != 0.0 {
                for &(r, v) in &self.l[k] {
                    z[r] -= v * zk;
                }
            }
        }
        for k in (0..self.n).rev() {
            z[k] /= self.udiag[k];
            let zk = z[k];
            if zk != 0.0 {
                for &(r, v) in &self.u[k] {
                    z[r] -= v * zk;
                }
            }
        }
        let mut x = vec![0.0; self.n];
        for (k, &c) in self.q.iter().enumerate() {
            x[c] = z[k] * self.col_scale[c];
        }
        x
    }

    /// Solve with iterative refinement against `a` until the relative residual
    /// drops below `tol` or `max_steps` corrections were applied.
    pub fn solve_refined(&self, a: &CscMatrix, b: &[f64], tol: f64, max_steps: usize) -> (Vec<f64>, f64) {
        let bnorm = norm2(b).max(f64::MIN_POSITIVE);
        let mut x = self.solve(b);
        let mut res = residual(a, &x, b);
        let mut rel = norm2(&res) / bnorm;
        for _ in 0..max_steps {
            if rel <= tol {
                break;
            }
            let dx = self.solve(&res);
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let cres = residual(a, &cand, b);
            let crel = norm2(&cres) / bnorm;
            if crel >= rel {
                break;
            }
            x = cand;
            res = cres;
            rel = crel;
        }
        (x, rel)
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn residual(a: &CscMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    b.iter().zip(&ax).map(|(b, a)| b - a).collect()
}
