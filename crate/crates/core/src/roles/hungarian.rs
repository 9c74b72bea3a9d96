//! Square linear assignment by shortest augmenting paths with potentials,
//! O(n³), with a deterministic lexicographic tie-break among optima.

use super::RolesError;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

/// Reusable solver; holds scratch buffers so per-frame solves do not allocate.
#[derive(Debug, Default, Clone)]
pub struct HungarianSolver {
    u: Vec<f64>,
    v: Vec<f64>,
    p: Vec<usize>,
    way: Vec<usize>,
    minv: Vec<f64>,
    used: Vec<bool>,
    row_to_col: Vec<usize>,
}

impl HungarianSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves an `n×n` row-major cost matrix. Returns the row → column map of
    /// the lexicographically smallest optimal permutation.
    pub fn solve(&mut self, n: usize, cost: &[f64]) -> Result<&[usize], RolesError> {
        if cost.len() != n * n {
            return Err(RolesError::NotSquare {
                rows: n,
                len: cost.len(),
            });
        }
        if let Some(i) = cost.iter().position(|c| !c.is_finite()) {
            return Err(RolesError::NonFiniteCost(i / n.max(1), i % n.max(1)));
        }
        self.row_to_col.clear();
        if n == 0 {
            return Ok(&self.row_to_col);
        }
        if self.unique_row_minima(n, cost) {
            return Ok(&self.row_to_col);
        }
        self.run(n, cost);
        self.tie_break(n, cost);
        Ok(&self.row_to_col)
    }

    /// When every row has a strict minimum and those minima sit in distinct
    /// columns, that permutation is the unique optimum.
    fn unique_row_minima(&mut self, n: usize, a: &[f64]) -> bool {
        self.used.clear();
        self.used.resize(n, false);
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let mut best = 0;
            let mut tie = false;
            for j in 1..n {
                if row[j] < row[best] {
                    best = j;
                    tie = false;
                } else if row[j] == row[best] {
                    tie = true;
                }
            }
            if tie || self.used[best] {
                self.row_to_col.clear();
                return false;
            }
            self.used[best] = true;
            self.row_to_col.push(best);
        }
        true
    }

    fn run(&mut self, n: usize, a: &[f64]) {
        // 1-indexed arrays, column 0 is the virtual start
        self.u.clear();
        self.u.resize(n + 1, 0.0);
        self.v.clear();
        self.v.resize(n + 1, 0.0);
        self.p.clear();
        self.p.resize(n + 1, 0);
        self.way.clear();
        self.way.resize(n + 1, 0);
        for i in 1..=n {
            self.p[0] = i;
            let mut j0 = 0;
            self.minv.clear();
            self.minv.resize(n + 1, f64::INFINITY);
            self.used.clear();
            self.used.resize(n + 1, false);
            loop {
                self.used[j0] = true;
                let i0 = self.p[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0;
                for j in 1..=n {
                    if !self.used[j] {
                        let cur = a[(i0 - 1) * n + (j - 1)] - self.u[i0] - self.v[j];
                        if cur < self.minv[j] {
                            self.minv[j] = cur;
                            self.way[j] = j0;
                        }
                        if self.minv[j] < delta {
                            delta = self.minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if self.used[j] {
                        self.u[self.p[j]] += delta;
                        self.v[j] -= delta;
                    } else {
                        self.minv[j] -= delta;
                    }
                }
                j0 = j1;
                if self.p[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = self.way[j0];
                self.p[j0] = self.p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        self.row_to_col.resize(n, 0);
        for j in 1..=n {
            self.row_to_col[self.p[j] - 1] = j - 1;
        }
    }

    /// Every optimal assignment lies on the zero-reduced-cost ("tight") edges
    /// of the optimal duals, so the lexicographically smallest optimum is the
    /// lexicographically smallest perfect matching of the tight subgraph.
    fn tie_break(&mut self, n: usize, a: &[f64]) {
        let scale = 1.0 + a.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let tol = 1e-9 * scale;
        let tight: Vec<bool> = (0..n * n)
            .map(|k| a[k] - self.u[k / n + 1] - self.v[k % n + 1] <= tol)
            .collect();
        if tight.iter().filter(|&&t| t).count() == n {
            return;
        }
        let mut col_used = vec![false; n];
        for i in 0..n {
            let current = self.row_to_col[i];
            let mut chosen = current;
            for j in 0..n {
                if j >= current {
                    break;
                }
                if col_used[j] || !tight[i * n + j] {
                    continue;
                }
                col_used[j] = true;
                let ok = complete_matching(n, &tight, i + 1, &col_used);
                col_used[j] = false;
                if let Some(rest) = ok {
                    chosen = j;
                    for (r, c) in rest {
                        self.row_to_col[r] = c;
                    }
                    break;
                }
            }
            self.row_to_col[i] = chosen;
            col_used[chosen] = true;
        }
    }
}

/// Perfect matching of rows `from..n` onto unused columns using tight edges
/// (Kuhn's augmenting paths). Returns the (row, col) pairs when one exists.
fn complete_matching(n: usize, tight: &[bool], from: usize, col_used: &[bool]) -> Option<Vec<(usize, usize)>> {
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    fn augment(
        r: usize,
        n: usize,
        tight: &[bool],
        col_used: &[bool],
        seen: &mut [bool],
        match_col: &mut [Option<usize>],
    ) -> bool {
        for c in 0..n {
            if col_used[c] || seen[c] || !tight[r * n + c] {
                continue;
            }
            seen[c] = true;
            if match_col[c].is_none_or(|r2| augment(r2, n, tight, col_used, seen, match_col)) {
                match_col[c] = Some(r);
                return true;
            }
        }
        false
    }
    for r in from..n {
        let mut seen = vec![false; n];
        if !augment(r, n, tight, col_used, &mut seen, &mut match_col) {
            return None;
        }
    }
    Some(
        match_col
            .iter()
            .enumerate()
            .filter_map(|(c, r)| r.map(|r| (r, c)))
            .collect(),
    )
}

/// Minimum-cost perfect assignment of a square matrix given as rows.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, RolesError> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(RolesError::NotSquare {
            rows: n,
            len: row.len(),
        });
    }
    let flat: Vec<f64> = cost.iter().flatten().copied().collect();
    let mut solver = HungarianSolver::new();
    let row_to_col = solver.solve(n, &flat)?.to_vec();
    let cost = row_to_col.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(Assignment { row_to_col, cost })
}
