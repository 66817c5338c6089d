//! Precision-parameterized sparse Cholesky factorisation.
//!
//! A reverse Cuthill-McKee permutation is applied first to keep the fill
//! (and with it the memory-bit model) reproducible and deterministic.
//! The factor is computed row by row (up-looking, elimination-tree
//! reach), with every scalar operation passed through the floating point
//! emulator at the requested format. Factor values are stored in that
//! format but carried in binary64 containers.

use thiserror::Error;

use crate::cost::CostReceipt;
use crate::fp::{self, Format, FpError};
use crate::sparse::SparseSpd;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    /// A pivot rounded to <= 0 in the working format: the format is too
    /// coarse for this matrix. Failure is loud by design.
    #[error("Cholesky breakdown at row {row}: pivot {pivot:e} not positive in {fmt}")]
    Breakdown { row: usize, pivot: f64, fmt: Format },
    #[error(transparent)]
    Fp(#[from] FpError),
}

/// Lower-triangular sparse factor with its fill-reducing permutation.
///
/// `L L^T ~ P A P^T`; stored in compressed column form with the diagonal
/// entry first in every column.
#[derive(Debug, Clone)]
pub struct CholFactor {
    n: usize,
    fmt: Format,
    /// new position -> original index
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CholFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fmt(&self) -> Format {
        self.fmt
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }
}

/// Reverse Cuthill-McKee ordering of the matrix pattern.
///
/// Deterministic: BFS starts from the minimum-degree node of each
/// component (refined once towards a pseudo-peripheral node) and
/// neighbours are visited in (degree, index) order. Returns `perm` with
/// `perm[new] = old`.
pub fn rcm_ordering(a: &SparseSpd) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n)
        .map(|i| a.row(i).filter(|&(j, _)| j != i).count())
        .collect();

    let bfs_order = |start: usize, visited: &mut [bool]| -> Vec<usize> {
        let mut order = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a
                .row(u)
                .map(|(j, _)| j)
                .filter(|&j| j != u && !visited[j])
                .collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
        order
    };

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // min-degree node of this component
        let mut scratch = visited.clone();
        let component = bfs_order(seed, &mut scratch);
        let &start = component
            .iter()
            .min_by_key(|&&i| (degree[i], i))
            .unwrap();
        // one refinement pass towards a pseudo-peripheral node
        let mut scratch = visited.clone();
        let level_order = bfs_order(start, &mut scratch);
        let &far = level_order.last().unwrap();
        let start = if degree[far] <= degree[start] { far } else { start };
        order.extend(bfs_order(start, &mut visited));
    }
    order.reverse();
    order
}

/// Factorise the SPD matrix `A` in the emulated format `fmt`.
///
/// Charges the factorisation FLOPs and `nnz(L)` format-width memory bits
/// to the receipt (the factor is charged once, at the factorisation
/// width).
pub fn cholesky(
    a: &SparseSpd,
    fmt: Format,
    receipt: &mut CostReceipt,
) -> Result<CholFactor, FactorError> {
    let n = a.n();
    let perm = rcm_ordering(a);
    let mut iperm = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        iperm[old] = new;
    }

    // permuted matrix rows, columns ascending, values rounded into fmt
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for new_i in 0..n {
        let mut row: Vec<(usize, f64)> = a
            .row(perm[new_i])
            .map(|(j, v)| (iperm[j], v))
            .collect();
        row.sort_by_key(|&(j, _)| j);
        for (_, v) in row.iter_mut() {
            *v = fp::round_to(*v, fmt)?;
        }
        rows.push(row);
    }

    // elimination tree via path compression
    const NONE: usize = usize::MAX;
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &(j, _) in rows[k].iter().filter(|&&(j, _)| j < k) {
            let mut i = j;
            while ancestor[i] != NONE && ancestor[i] != k {
                let next = ancestor[i];
                ancestor[i] = k;
                i = next;
            }
            if ancestor[i] == NONE {
                ancestor[i] = k;
                parent[i] = k;
            }
        }
    }

    // row pattern of L via elimination-tree reach, topological order
    let mut mark = vec![NONE; n];
    let mut stack = vec![0usize; n];
    let mut path = vec![0usize; n];
    let mut ereach = |k: usize, mark: &mut Vec<usize>, stack: &mut Vec<usize>| -> usize {
        let mut top = n;
        mark[k] = k;
        for &(j, _) in rows[k].iter().filter(|&&(j, _)| j < k) {
            let mut len = 0;
            let mut i = j;
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

    // symbolic pass: column counts (diagonal included)
    let mut count = vec![1usize; n];
    for k in 0..n {
        let top = ereach(k, &mut mark, &mut stack);
        for &j in &stack[top..n] {
            count[j] += 1;
        }
    }
    let mut col_ptr = vec![0usize; n + 1];
    for j in 0..n {
        col_ptr[j + 1] = col_ptr[j] + count[j];
    }
    let nnz = col_ptr[n];
    let mut row_idx = vec![0usize; nnz];
    let mut vals = vec![0.0f64; nnz];
    // next free slot per column; slot 0 of each column is the diagonal
    let mut next = col_ptr[..n].iter().map(|&p| p + 1).collect::<Vec<_>>();

    // numeric pass
    let mut mark = vec![NONE; n];
    let mut x = vec![0.0f64; n];
    let mut flops: u64 = 0;
    for k in 0..n {
        let top = ereach(k, &mut mark, &mut stack);
        for &j in &stack[top..n] {
            x[j] = 0.0;
        }
        let mut d = 0.0;
        for &(j, v) in &rows[k] {
            if j < k {
                x[j] = v;
            } else if j == k {
                d = v;
            }
        }
        for &j in &stack[top..n] {
            let ljj = vals[col_ptr[j]];
            let lkj = fp::fp_div(x[j], ljj, fmt)?;
            flops += 1;
            for p in col_ptr[j] + 1..next[j] {
                let i = row_idx[p];
                x[i] = fp::fp_sub(x[i], fp::fp_mul(vals[p], lkj, fmt)?, fmt)?;
                flops += 2;
            }
            d = fp::fp_sub(d, fp::fp_mul(lkj, lkj, fmt)?, fmt)?;
            flops += 2;
            row_idx[next[j]] = k;
            vals[next[j]] = lkj;
            next[j] += 1;
        }
        if d <= 0.0 {
            return Err(FactorError::Breakdown { row: k, pivot: d, fmt });
        }
        row_idx[col_ptr[k]] = k;
        vals[col_ptr[k]] = fp::fp_sqrt(d, fmt)?;
        flops += 1;
    }

    receipt.flops += flops;
    receipt.factor_nnz += nnz as u64;
    receipt.charge_array(nnz, fmt);

    Ok(CholFactor { n, fmt, perm, col_ptr, row_idx, vals })
}

/// Solve `A x = r` by forward/backward substitution with all operations
/// in `solve_fmt` (which must be at least as fine as the factor format).
///
/// Charges the substitution FLOPs; memory bits for solver state are
/// charged by the caller (the factor itself is charged once at
/// factorisation time). Result is returned in binary64 carriers.
pub fn solve_with_factor(
    f: &CholFactor,
    r: &[f64],
    solve_fmt: Format,
    receipt: &mut CostReceipt,
) -> Result<Vec<f64>, FactorError> {
    let n = f.n;
    assert_eq!(r.len(), n, "dimension mismatch");
    debug_assert!(solve_fmt.at_least_as_fine_as(f.fmt));

    let mut z = Vec::with_capacity(n);
    for new in 0..n {
        z.push(fp::round_to(r[f.perm[new]], solve_fmt)?);
    }
    let mut flops: u64 = 0;
    // forward sweep, L z' = z (saxpy form over columns)
    for j in 0..n {
        let zj = fp::fp_div(z[j], f.vals[f.col_ptr[j]], solve_fmt)?;
        flops += 1;
        z[j] = zj;
        for p in f.col_ptr[j] + 1..f.col_ptr[j + 1] {
            let i = f.row_idx[p];
            z[i] = fp::fp_sub(z[i], fp::fp_mul(f.vals[p], zj, solve_fmt)?, solve_fmt)?;
            flops += 2;
        }
    }
    // backward sweep, L^T y = z' (dot-product form over columns)
    for i in (0..n).rev() {
        let mut acc = z[i];
        for p in f.col_ptr[i] + 1..f.col_ptr[i + 1] {
            let k = f.row_idx[p];
            acc = fp::fp_sub(acc, fp::fp_mul(f.vals[p], z[k], solve_fmt)?, solve_fmt)?;
            flops += 2;
        }
        z[i] = fp::fp_div(acc, f.vals[f.col_ptr[i]], solve_fmt)?;
        flops += 1;
    }
    let mut out = vec![0.0; n];
    for new in 0..n {
        out[f.perm[new]] = z[new];
    }
    receipt.flops += flops;
    Ok(out)
}

/// Estimate the spectral condition number of an SPD matrix: power
/// iteration for the largest eigenvalue, inverse iteration through a
/// double-precision factor for the smallest. Deterministic start vector,
/// fixed iteration count.
pub fn condition_estimate(a: &SparseSpd, iters: usize) -> Result<f64, FactorError> {
    let n = a.n();
    let mut receipt = CostReceipt::default();
    let f = cholesky(a, Format::Double, &mut receipt)?;
    let normalize = |v: &mut [f64]| {
        let s = crate::sparse::norm2(v);
        for x in v.iter_mut() {
            *x /= s;
        }
    };
    let start: Vec<f64> = (0..n).map(|i| 1.0 + (0.7 * i as f64).sin()).collect();

    let mut v = start.clone();
    normalize(&mut v);
    let mut w = vec![0.0; n];
    for _ in 0..iters {
        a.matvec(&v, &mut w);
        std::mem::swap(&mut v, &mut w);
        normalize(&mut v);
    }
    a.matvec(&v, &mut w);
    let lambda_max: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();

    let mut v = start;
    normalize(&mut v);
    for _ in 0..iters {
        v = solve_with_factor(&f, &v, Format::Double, &mut receipt)?;
        normalize(&mut v);
    }
    a.matvec(&v, &mut w);
    let lambda_min: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();

    Ok(lambda_max / lambda_min)
}
