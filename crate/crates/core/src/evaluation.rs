//! Recovery metrics against known generating parameters.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Minimum cost over assignments of `cost` with rows <= columns, via the
/// shortest augmenting path method with potentials. Returns the column of each row.
fn solve_rows_le_cols(cost: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = cost.shape();
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
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
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

fn optimal_cost(cost: &DMatrix<f64>) -> f64 {
    if cost.nrows() == 0 || cost.ncols() == 0 {
        return 0.0;
    }
    let assign = solve_rows_le_cols(cost);
    assign.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum()
}

fn remove_row_col(m: &DMatrix<f64>, row: usize, col: usize) -> DMatrix<f64> {
    m.clone().remove_row(row).remove_column(col)
}

/// Minimum-cost assignment of `min(R, C)` pairs. Among optimal
/// assignments the lexicographically smallest (by row order) is returned.
pub fn hungarian_match(cost: &DMatrix<f64>) -> Assignment {
    let transposed = cost.nrows() > cost.ncols();
    let work = if transposed { cost.transpose() } else { cost.clone() };
    let best = optimal_cost(&work);
    let tol = 1e-9 * (1.0 + best.abs());

    // Fix rows in order to their smallest column that keeps the optimum.
    let mut rows: Vec<usize> = (0..work.nrows()).collect();
    let mut cols: Vec<usize> = (0..work.ncols()).collect();
    let mut remaining = work.clone();
    let mut budget = best;
    let mut pairs = Vec::with_capacity(work.nrows());
    while !rows.is_empty() {
        let mut chosen = None;
        for c in 0..cols.len() {
            let rest = remove_row_col(&remaining, 0, c);
            if remaining[(0, c)] + optimal_cost(&rest) <= budget + tol {
                chosen = Some(c);
                break;
            }
        }
        let c = chosen.unwrap_or_else(|| solve_rows_le_cols(&remaining)[0]);
        budget -= remaining[(0, c)];
        pairs.push((rows[0], cols[c]));
        remaining = remove_row_col(&remaining, 0, c);
        rows.remove(0);
        cols.remove(c);
    }
    if transposed {
        pairs = pairs.into_iter().map(|(r, c)| (c, r)).collect();
        pairs.sort_unstable();
    }
    let total_cost = pairs.iter().map(|&(r, c)| cost[(r, c)]).sum();
    Assignment { pairs, total_cost }
}

/// Ranks starting at 1, ties given their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 (with a warning) if either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y)).unwrap_or_else(|| {
        warn!("constant column in rank correlation; using 0");
        0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatch {
    /// `(true factor, estimated factor, |Spearman rho|)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub mean_abs_rho: f64,
}

/// Matches estimated to true factors on `1 - |rho|` (Spearman).
pub fn match_factors(true_z: &DMatrix<f64>, est_z: &DMatrix<f64>) -> Result<FactorMatch> {
    let n = true_z.nrows();
    if est_z.nrows() != n {
        return Err(Error::Shape(format!("{} vs {} samples", n, est_z.nrows())));
    }
    if n < 3 {
        return Err(Error::Shape(format!("need at least 3 samples, got {n}")));
    }
    let cols = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.column_iter().map(|c| c.iter().copied().collect()).collect() };
    let (t, e) = (cols(true_z), cols(est_z));
    let rho = DMatrix::from_fn(t.len(), e.len(), |i, j| spearman(&t[i], &e[j]).abs());
    let assignment = hungarian_match(&rho.map(|r| 1.0 - r));
    let pairs: Vec<(usize, usize, f64)> = assignment.pairs.iter().map(|&(i, j)| (i, j, rho[(i, j)])).collect();
    let mean_abs_rho = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64
    };
    Ok(FactorMatch { pairs, mean_abs_rho })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMatch {
    /// `(true topic, estimated topic)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub accuracy: f64,
}

/// Matches estimated to true topic labels on their contingency table.
/// `est` holds one label per sentence, e.g. the argmax of the assignment posterior.
pub fn match_topics(true_xi: &[usize], est: &[usize]) -> Result<TopicMatch> {
    if true_xi.len() != est.len() {
        return Err(Error::Shape(format!("{} true vs {} estimated labels", true_xi.len(), est.len())));
    }
    if true_xi.is_empty() {
        return Ok(TopicMatch { pairs: Vec::new(), accuracy: 0.0 });
    }
    let n_true = true_xi.iter().max().map_or(0, |m| m + 1);
    let n_est = est.iter().max().map_or(0, |m| m + 1);
    let mut table = DMatrix::<f64>::zeros(n_true, n_est);
    for (&a, &b) in true_xi.iter().zip(est) {
        table[(a, b)] += 1.0;
    }
    let assignment = hungarian_match(&(-&table));
    let matched: f64 = assignment.pairs.iter().map(|&(a, b)| table[(a, b)]).sum();
    Ok(TopicMatch {
        pairs: assignment.pairs,
        accuracy: matched / true_xi.len() as f64,
    })
}

/// Reorders an estimated L x L topic matrix into true-topic order using
/// the pairs of a [`TopicMatch`]. Unmatched true topics keep their index.
pub fn permute_topics(est: &DMatrix<f64>, matching: &TopicMatch) -> DMatrix<f64> {
    let l_count = est.nrows();
    let mut map: Vec<usize> = (0..l_count).collect();
    for &(t, e) in &matching.pairs {
        if t < l_count && e < l_count {
            map[t] = e;
        }
    }
    DMatrix::from_fn(l_count, est.ncols(), |i, j| est[(map[i], map[j])])
}

fn correlation_scaled(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d: Vec<f64> = m.diagonal().iter().copied().collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Shape("correlation scaling needs a positive diagonal".into()));
    }
    Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (d[i] * d[j]).sqrt()))
}

/// `|est - true|_F / |true|_F`, optionally after scaling both to unit diagonal.
pub fn frobenius_relative(true_m: &DMatrix<f64>, est_m: &DMatrix<f64>, scale_to_correlation: bool) -> Result<f64> {
    if true_m.shape() != est_m.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", true_m.shape(), est_m.shape())));
    }
    let (t, e) = if scale_to_correlation {
        (correlation_scaled(true_m)?, correlation_scaled(est_m)?)
    } else {
        (true_m.clone(), est_m.clone())
    };
    let norm = t.norm();
    if norm == 0.0 {
        return Err(Error::Shape("true matrix has zero norm".into()));
    }
    Ok((e - &t).norm() / norm)
}
