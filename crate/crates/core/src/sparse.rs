//! Sparse LU factorization with a static fill pattern.
//!
//! Thermal networks are mostly chains of construction nodes hanging off a
//! few hub nodes (zone air, slabs, water volumes). A greedy minimum-degree
//! ordering eliminates the chains first, so fill stays local. The symbolic
//! pass runs once per network structure; each numeric factorization then
//! runs over flat index lists.
//!
//! No pivoting is done. Every matrix assembled by the engine is strictly
//! row diagonally dominant (capacity terms on the diagonal), a property
//! Gaussian elimination preserves.

use std::collections::{BTreeSet, HashMap};

/// Elimination plan for a fixed sparsity pattern.
#[derive(Clone, Debug)]
pub struct SymbolicLu {
    n: usize,
    order: Vec<usize>,
    nbrs: Vec<Vec<usize>>,
    slots: HashMap<(usize, usize), usize>,
    diag: Vec<usize>,
    lower: Vec<Vec<usize>>,
    upper: Vec<Vec<usize>>,
    update: Vec<Vec<usize>>,
    n_slots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot {
    pub index: usize,
    pub value: f64,
}

impl SymbolicLu {
    /// `edges` lists structurally nonzero off-diagonal positions; the
    /// pattern is symmetrized.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (i, j) in edges {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }

        // Greedy minimum degree; ties go to the lowest index.
        let mut alive = vec![true; n];
        let mut order = Vec::with_capacity(n);
        let mut nbrs = vec![Vec::new(); n];
        for _ in 0..n {
            let k = (0..n)
                .filter(|&i| alive[i])
                .min_by_key(|&i| (adj[i].len(), i))
                .expect("a live node remains");
            let ns: Vec<usize> = adj[k].iter().copied().collect();
            for &a in &ns {
                adj[a].remove(&k);
                for &b in &ns {
                    if a != b {
                        adj[a].insert(b);
                    }
                }
            }
            adj[k].clear();
            alive[k] = false;
            order.push(k);
            nbrs[k] = ns;
        }

        let mut slots = HashMap::new();
        let slot = |i: usize, j: usize, slots: &mut HashMap<(usize, usize), usize>| -> usize {
            let next = slots.len();
            *slots.entry((i, j)).or_insert(next)
        };
        let diag: Vec<usize> = (0..n).map(|i| slot(i, i, &mut slots)).collect();
        let mut lower = vec![Vec::new(); n];
        let mut upper = vec![Vec::new(); n];
        let mut update = vec![Vec::new(); n];
        for &k in &order {
            for &i in &nbrs[k] {
                lower[k].push(slot(i, k, &mut slots));
                upper[k].push(slot(k, i, &mut slots));
            }
            for &i in &nbrs[k] {
                for &j in &nbrs[k] {
                    update[k].push(slot(i, j, &mut slots));
                }
            }
        }
        let n_slots = slots.len();
        Self {
            n,
            order,
            nbrs,
            slots,
            diag,
            lower,
            upper,
            update,
            n_slots,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored values, including fill.
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Storage slot of entry `(i, j)`, if it is in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        self.slots.get(&(i, j)).copied()
    }

    pub fn diag_slot(&self, i: usize) -> usize {
        self.diag[i]
    }

    /// Factorizes `values` (laid out by [`slot`](Self::slot)) in place.
    pub fn factor(&self, values: &mut [f64]) -> Result<(), SingularPivot> {
        for &k in &self.order {
            let piv = values[self.diag[k]];
            if !piv.is_finite() || piv.abs() < 1e-300 {
                return Err(SingularPivot { index: k, value: piv });
            }
            let lo = &self.lower[k];
            let up = &self.upper[k];
            for &s in lo {
                values[s] /= piv;
            }
            let m = lo.len();
            let upd = &self.update[k];
            for a in 0..m {
                let l = values[lo[a]];
                if l == 0.0 {
                    continue;
                }
                let row = &upd[a * m..(a + 1) * m];
                for b in 0..m {
                    values[row[b]] -= l * values[up[b]];
                }
            }
        }
        Ok(())
    }

    /// Solves with factored `values`, overwriting `rhs` with the solution.
    pub fn solve(&self, values: &[f64], rhs: &mut [f64]) {
        for &k in &self.order {
            let bk = rhs[k];
            if bk != 0.0 {
                for (&i, &s) in self.nbrs[k].iter().zip(&self.lower[k]) {
                    rhs[i] -= values[s] * bk;
                }
            }
        }
        for &k in self.order.iter().rev() {
            let mut acc = rhs[k];
            for (&j, &s) in self.nbrs[k].iter().zip(&self.upper[k]) {
                acc -= values[s] * rhs[j];
            }
            rhs[k] = acc / values[self.diag[k]];
        }
    }
}
