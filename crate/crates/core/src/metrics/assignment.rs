//! Maximum-weight one-to-one assignment (Hungarian method, O(n^3)).

/// Optimal alignment of a rectangular weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub value: f64,
    /// `(row, column)` pairs; rows or columns left over by a non-square
    /// matrix are unmatched.
    pub pairs: Vec<(usize, usize)>,
}

/// Maximizes total weight over one-to-one row/column pairings. Rows must all
/// have the same length; weights are expected to be non-negative, so the
/// implicit zero padding never hurts the optimum.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Assignment {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Assignment {
            value: 0.0,
            pairs: Vec::new(),
        };
    }
    debug_assert!(weights.iter().all(|r| r.len() == cols));

    let n = rows.max(cols);
    let max = weights.iter().flatten().fold(0.0_f64, |acc, w| acc.max(*w));
    // Square cost matrix; padding cells cost `max` (weight 0).
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max - weights[i][j]
        } else {
            max
        }
    };

    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0 && p[j] - 1 < rows && j - 1 < cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    let value = pairs.iter().map(|&(i, j)| weights[i][j]).sum();
    Assignment { value, pairs }
}
