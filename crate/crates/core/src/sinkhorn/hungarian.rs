//! Exact linear assignment via the Hungarian method (shortest augmenting
//! paths with row/column potentials, O(n³)).
//!
//! Among all optimal assignments the lexicographically smallest one (by row
//! order, lowest column first) is returned, so downstream experiments are
//! reproducible even on tied inputs.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Maximize,
    Minimize,
}

/// Row `i` is assigned column `assignment[i]`.
pub fn hungarian(m: &Matrix, objective: Objective) -> Result<Vec<usize>> {
    if m.rows() != m.cols() {
        return Err(dim_err!("assignment needs a square matrix, got {:?}", m.shape()));
    }
    if !m.is_finite() {
        return Err(Error::InvalidInput("assignment matrix has non-finite entries".into()));
    }
    let cost = match objective {
        Objective::Minimize => m.clone(),
        Objective::Maximize => m.scale(-1.0),
    };
    let (assignment, u, v) = solve_min(&cost);
    let scale = cost.as_slice().iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let tol = 1e-9 * scale;
    let tight = |i: usize, j: usize| cost.get(i, j) - u[i] - v[j] <= tol;
    Ok(lexicographic_min(assignment, cost.rows(), tight))
}

/// Total of `m[i][assignment[i]]`, summed in row order.
pub fn assignment_value(m: &Matrix, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| m.get(i, j))
        .sum()
}

pub fn permutation_matrix(assignment: &[usize]) -> Matrix {
    let n = assignment.len();
    Matrix::from_fn(n, n, |r, c| if assignment[r] == c { 1.0 } else { 0.0 })
}

/// Inverse of [`permutation_matrix`]; `None` unless `p` is a 0/1 permutation matrix.
pub fn permutation_of(p: &Matrix) -> Option<Vec<usize>> {
    if p.rows() != p.cols() {
        return None;
    }
    let n = p.rows();
    let mut seen = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let row = p.row(r);
        if row.iter().any(|&x| x != 0.0 && x != 1.0) {
            return None;
        }
        let ones: Vec<usize> = (0..n).filter(|&c| row[c] == 1.0).collect();
        if ones.len() != 1 || seen[ones[0]] {
            return None;
        }
        seen[ones[0]] = true;
        out.push(ones[0]);
    }
    Some(out)
}

/// Hungarian method for minimization. Returns the assignment and the dual
/// potentials `(u, v)` with `cost[i][j] - u[i] - v[j] >= 0`, tight on the assignment.
fn solve_min(cost: &Matrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.rows();
    // 1-based bookkeeping; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites a perfect matching of the tight-edge graph into the
/// lexicographically smallest perfect matching of that graph.
fn lexicographic_min(
    mut assignment: Vec<usize>,
    n: usize,
    tight: impl Fn(usize, usize) -> bool,
) -> Vec<usize> {
    let mut owner = vec![0usize; n];
    for (i, &j) in assignment.iter().enumerate() {
        owner[j] = i;
    }
    for i in 0..n {
        let freed = assignment[i];
        for c in 0..freed {
            if !tight(i, c) || owner[c] < i {
                continue;
            }
            // Re-route owner[c] through rows > i to end at `freed`.
            let start = owner[c];
            let mut parent_col = vec![usize::MAX; n]; // row -> column it currently owns on the path
            let mut parent_row = vec![usize::MAX; n]; // column -> row that reached it
            let mut visited_row = vec![false; n];
            let mut visited_col = vec![false; n];
            visited_row[start] = true;
            visited_col[c] = true;
            parent_col[start] = c;
            let mut queue = std::collections::VecDeque::from([start]);
            let mut found: Option<(usize, usize)> = None;
            'bfs: while let Some(row) = queue.pop_front() {
                for col in 0..n {
                    if visited_col[col] || !tight(row, col) {
                        continue;
                    }
                    if col == freed {
                        found = Some((row, col));
                        break 'bfs;
                    }
                    let next = owner[col];
                    if next <= i || visited_row[next] {
                        continue;
                    }
                    visited_col[col] = true;
                    visited_row[next] = true;
                    parent_col[next] = col;
                    parent_row[col] = row;
                    queue.push_back(next);
                }
            }
            if let Some((mut row, mut col)) = found {
                // Walk back: each row on the path takes the column we reached it from.
                loop {
                    let prev = parent_col[row];
                    assignment[row] = col;
                    owner[col] = row;
                    if row == start {
                        break;
                    }
                    col = prev;
                    row = parent_row[prev];
                }
                assignment[i] = c;
                owner[c] = i;
                break;
            }
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(m: &Matrix, objective: Objective) -> f64 {
        fn rec(m: &Matrix, row: usize, used: &mut Vec<bool>, acc: &mut Vec<usize>, best: &mut Vec<Vec<usize>>) {
            let n = m.rows();
            if row == n {
                best.push(acc.clone());
                return;
            }
            for c in 0..n {
                if !used[c] {
                    used[c] = true;
                    acc.push(c);
                    rec(m, row + 1, used, acc, best);
                    acc.pop();
                    used[c] = false;
                }
            }
        }
        let mut all = Vec::new();
        rec(m, 0, &mut vec![false; m.rows()], &mut Vec::new(), &mut all);
        let vals = all.iter().map(|a| assignment_value(m, a));
        match objective {
            Objective::Maximize => vals.fold(f64::NEG_INFINITY, f64::max),
            Objective::Minimize => vals.fold(f64::INFINITY, f64::min),
        }
    }

    #[test]
    fn identity_maximizes_on_diagonal() {
        assert_eq!(hungarian(&Matrix::identity(4), Objective::Maximize).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(hungarian(&Matrix::scalar(-3.0), Objective::Maximize).unwrap(), vec![0]);
    }

    #[test]
    fn matches_brute_force_on_random_5x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = Matrix::from_fn(5, 5, |_, _| rng.random_range(-10.0..10.0));
            for obj in [Objective::Maximize, Objective::Minimize] {
                let a = hungarian(&m, obj).unwrap();
                assert_eq!(assignment_value(&m, &a), brute_force(&m, obj));
            }
        }
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let u = Matrix::filled(3, 3, 1.0 / 3.0);
        assert_eq!(hungarian(&u, Objective::Maximize).unwrap(), vec![0, 1, 2]);
        // Optima {0→1, 1→0, 2→2} and {0→2, 1→0, 2→1}; the first is smaller.
        let m = Matrix::from_rows(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0]]);
        assert_eq!(hungarian(&m, Objective::Maximize).unwrap(), vec![1, 0, 2]);
        assert_eq!(hungarian(&m.scale(-1.0), Objective::Minimize).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn rejects_non_square_and_nan() {
        assert!(matches!(hungarian(&Matrix::zeros(2, 3), Objective::Minimize), Err(Error::Dimension(_))));
        let mut m = Matrix::zeros(2, 2);
        m.set(0, 0, f64::NAN);
        assert!(hungarian(&m, Objective::Minimize).is_err());
    }

    #[test]
    fn permutation_round_trip() {
        let p = permutation_matrix(&[2, 0, 1]);
        assert_eq!(permutation_of(&p), Some(vec![2, 0, 1]));
        assert_eq!(permutation_of(&Matrix::filled(2, 2, 0.5)), None);
    }
}
