use crate::error::{Error, Result};

/// Dense cost matrix. `+∞` entries forbid a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} cost matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| v.is_nan() || *v == &f64::NEG_INFINITY) {
            return Err(Error::NonFinite(format!("cost entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == f64::INFINITY
    }
}

/// One-to-one pairing of rows to columns, sorted by row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| c.get(i, j)).sum()
    }

    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn row_for_col(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == col).map(|p| p.0)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Minimum-cost assignment.
///
/// Among matchings with the most allowed pairs, returns one of minimal total
/// cost; ties are broken toward the lexicographically smallest row-sorted pair
/// sequence. The matrix is padded square with zero-cost dummies and forbidden
/// entries are replaced by a cost larger than any feasible total.
pub fn hungarian(c: &CostMatrix) -> Assignment {
    let (rows, cols) = (c.rows, c.cols);
    if rows == 0 || cols == 0 {
        return Assignment::default();
    }
    let n = rows.max(cols);
    let max_abs = c
        .data
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let big = 2.0 * (n as f64 + 1.0) * (max_abs + 1.0);
    let mut a = vec![0.0; n * n];
    for i in 0..rows {
        for j in 0..cols {
            let v = c.get(i, j);
            a[i * n + j] = if v.is_finite() { v } else { big };
        }
    }

    let (u, v, mut col_of) = solve_square(&a, n);

    // Edges with zero reduced cost carry every optimal matching.
    let scale = if c.data.iter().any(|v| !v.is_finite()) { big } else { max_abs + 1.0 };
    let tol = 64.0 * n as f64 * f64::EPSILON * scale;
    let mut tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| a[i * n + j] - u[i] - v[j] <= tol)
                .collect()
        })
        .collect();
    for i in 0..n {
        if !tight[i].contains(&col_of[i]) {
            tight[i].push(col_of[i]);
            tight[i].sort_unstable();
        }
    }
    lexicographic_refine(&tight, &mut col_of);

    let pairs = (0..rows)
        .filter_map(|i| {
            let j = col_of[i];
            (j < cols && !c.is_forbidden(i, j)).then_some((i, j))
        })
        .collect();
    Assignment { pairs }
}

/// Shortest-augmenting-path Hungarian on an `n×n` matrix. Returns row and
/// column potentials and the column assigned to each row.
fn solve_square(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    // 1-based internally; index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    (u[1..].to_vec(), v[1..].to_vec(), col_of)
}

/// Rewrites a perfect matching of the tight graph into the lexicographically
/// smallest one: each row in turn takes its smallest column that still
/// admits a perfect matching of the remaining rows.
fn lexicographic_refine(tight: &[Vec<usize>], col_of: &mut [usize]) {
    let n = col_of.len();
    let mut row_of = vec![0usize; n];
    for (i, &j) in col_of.iter().enumerate() {
        row_of[j] = i;
    }
    let mut col_fixed = vec![false; n];
    for r in 0..n {
        for &c in &tight[r] {
            if col_fixed[c] {
                continue;
            }
            if col_of[r] == c || reroute(tight, r, c, col_of, &mut row_of, &col_fixed) {
                break;
            }
        }
        col_fixed[col_of[r]] = true;
    }
}

/// Tries to give column `c` to row `r` by pushing its current owner along an
/// alternating path that ends at `r`'s current column.
fn reroute(
    tight: &[Vec<usize>],
    r: usize,
    c: usize,
    col_of: &mut [usize],
    row_of: &mut [usize],
    col_fixed: &[bool],
) -> bool {
    let n = col_of.len();
    let start = row_of[c];
    let target = col_of[r];
    let mut parent = vec![usize::MAX; n];
    let mut seen_row = vec![false; n];
    seen_row[start] = true;
    seen_row[r] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    let mut found = false;
    'bfs: while let Some(x) = queue.pop_front() {
        for &j in &tight[x] {
            if j == c || col_fixed[j] || parent[j] != usize::MAX {
                continue;
            }
            parent[j] = x;
            if j == target {
                found = true;
                break 'bfs;
            }
            let y = row_of[j];
            if !seen_row[y] {
                seen_row[y] = true;
                queue.push_back(y);
            }
        }
    }
    if !found {
        return false;
    }
    let mut j = target;
    loop {
        let x = parent[j];
        let prev = col_of[x];
        col_of[x] = j;
        row_of[j] = x;
        if x == start {
            break;
        }
        j = prev;
    }
    col_of[r] = c;
    row_of[c] = r;
    true
}
