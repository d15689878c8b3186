//! LDLᵀ factorization of symmetric quasi-definite matrices in envelope
//! (skyline) storage, after a reverse Cuthill–McKee reordering.
//!
//! Quasi-definite matrices `[[H, Aᵀ], [A, -G]]` with `H, G` positive definite
//! are strongly factorizable: any symmetric permutation admits an LDLᵀ
//! factorization without pivoting, so the bandwidth-reducing ordering can be
//! chosen freely. No fill occurs outside the envelope.

use std::collections::VecDeque;

/// Symbolic structure: ordering and envelope of the permuted matrix.
#[derive(Clone, Debug)]
pub struct Envelope {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `iperm[old] = new`.
    iperm: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Offset of each row's segment in the value array.
    start: Vec<usize>,
}

impl Envelope {
    /// Builds the ordering from the lower or upper pattern of a symmetric matrix.
    pub fn analyze(n: usize, pattern: &[(usize, usize)]) -> Envelope {
        let mut adj = vec![Vec::new(); n];
        for &(r, c) in pattern {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(r, c) in pattern {
            let (i, j) = (iperm[r], iperm[c]);
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            first[hi] = first[hi].min(lo);
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        Envelope {
            n,
            perm,
            iperm,
            first,
            start,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Strictly-lower entries stored by the envelope.
    pub fn size(&self) -> usize {
        self.start[self.n]
    }

    /// Numeric factorization of the symmetric matrix given by `entries`
    /// (either triangle, duplicates summed). Returns `None` on a zero or
    /// non-finite pivot.
    pub fn factor(&self, entries: &[(usize, usize, f64)]) -> Option<Ldl> {
        let n = self.n;
        let mut low = vec![0.0; self.size()];
        let mut diag = vec![0.0; n];
        for &(r, c, v) in entries {
            let (i, j) = (self.iperm[r], self.iperm[c]);
            if i == j {
                diag[i] += v;
            } else {
                let (hi, lo) = if i > j { (i, j) } else { (j, i) };
                debug_assert!(lo >= self.first[hi]);
                low[self.start[hi] + lo - self.first[hi]] += v;
            }
        }
        for i in 0..n {
            let fi = self.first[i];
            let row_i = self.start[i];
            // g_ij = a_ij - Σ_k g_ik l_jk, stored in place of a_ij.
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = low[row_i + j - fi];
                let gi = &low[row_i + k0 - fi..row_i + j - fi];
                let lj = &low[self.start[j] + k0 - fj..self.start[j] + j - fj];
                for (a, b) in gi.iter().zip(lj) {
                    s -= a * b;
                }
                low[row_i + j - fi] = s;
            }
            let mut d = diag[i];
            for j in fi..i {
                let g = low[row_i + j - fi];
                let l = g / diag[j];
                d -= g * l;
                low[row_i + j - fi] = l;
            }
            if d == 0.0 || !d.is_finite() {
                return None;
            }
            diag[i] = d;
        }
        Some(Ldl {
            env: self.clone(),
            low,
            diag,
        })
    }
}

/// Numeric factor produced by [`Envelope::factor`].
#[derive(Clone, Debug)]
pub struct Ldl {
    env: Envelope,
    low: Vec<f64>,
    diag: Vec<f64>,
}

impl Ldl {
    /// Solves `K x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let env = &self.env;
        let n = env.n;
        let mut y: Vec<f64> = (0..n).map(|i| b[env.perm[i]]).collect();
        for i in 0..n {
            let fi = env.first[i];
            let row = &self.low[env.start[i]..env.start[i + 1]];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] -= s;
        }
        for (v, d) in y.iter_mut().zip(&self.diag) {
            *v /= d;
        }
        for i in (0..n).rev() {
            let fi = env.first[i];
            let yi = y[i];
            let row = &self.low[env.start[i]..env.start[i + 1]];
            for (l, v) in row.iter().zip(&mut y[fi..i]) {
                *v -= l * yi;
            }
        }
        for i in 0..n {
            b[env.perm[i]] = y[i];
        }
    }

    /// Inertia `(positive, negative)` of the factored matrix.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.diag.iter().filter(|d| **d > 0.0).count();
        (pos, self.diag.len() - pos)
    }
}

fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    // Start each component at an unvisited node of minimum degree.
    while let Some(seed) = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)) {
        let root = pseudo_peripheral(adj, seed, &visited);
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Approximate peripheral node of `start`'s component by repeated BFS.
fn pseudo_peripheral(adj: &[Vec<usize>], start: usize, blocked: &[bool]) -> usize {
    let mut node = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adj, node, blocked);
        let far = levels.iter().copied().filter(|&l| l != usize::MAX).max().unwrap_or(0);
        if far <= ecc && ecc > 0 {
            break;
        }
        ecc = far;
        let next = (0..adj.len())
            .filter(|&i| levels[i] == far)
            .min_by_key(|&i| (adj[i].len(), i))
            .unwrap_or(node);
        if next == node {
            break;
        }
        node = next;
    }
    node
}

fn bfs_levels(adj: &[Vec<usize>], root: usize, blocked: &[bool]) -> Vec<usize> {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut q = VecDeque::from([root]);
    while let Some(v) = q.pop_front() {
        for &w in &adj[v] {
            if level[w] == usize::MAX && !blocked[w] {
                level[w] = level[v] + 1;
                q.push_back(w);
            }
        }
    }
    level
}
