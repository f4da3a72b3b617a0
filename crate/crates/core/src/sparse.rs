//! Thin helpers around faer's compressed sparse column storage.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

pub type SparseMatrix = SparseColMat<usize, f64>;

/// Accumulates (row, col, value) entries; duplicates are summed on build.
#[derive(Debug, Default, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push(Triplet::new(row, col, value));
    }

    pub fn build(&self) -> SparseMatrix {
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &self.entries)
            .expect("triplet indices are in range")
    }
}

/// y = A x
pub fn matvec(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    let col_ptr = a.symbolic().col_ptr();
    let row_idx = a.symbolic().row_idx();
    let val = a.val();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for p in col_ptr[j]..col_ptr[j + 1] {
            y[row_idx[p]] += val[p] * xj;
        }
    }
    y
}

/// y = Aᵀ x
pub fn matvec_transpose(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), x.len());
    let col_ptr = a.symbolic().col_ptr();
    let row_idx = a.symbolic().row_idx();
    let val = a.val();
    (0..a.ncols())
        .map(|j| {
            (col_ptr[j]..col_ptr[j + 1])
                .map(|p| val[p] * x[row_idx[p]])
                .sum()
        })
        .collect()
}

/// xᵀ A y
pub fn bilinear(a: &SparseMatrix, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &matvec(a, y))
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Iterate over stored (row, col, value) entries.
pub fn entries(a: &SparseMatrix) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let col_ptr = a.symbolic().col_ptr();
    let row_idx = a.symbolic().row_idx();
    let val = a.val();
    (0..a.ncols()).flat_map(move |j| (col_ptr[j]..col_ptr[j + 1]).map(move |p| (row_idx[p], j, val[p])))
}

/// Keep the rows listed in `rows` and the columns listed in `cols`, renumbered
/// in list order.
pub fn submatrix(a: &SparseMatrix, rows: &[usize], cols: &[usize]) -> SparseMatrix {
    let mut row_map = vec![usize::MAX; a.nrows()];
    for (new, &old) in rows.iter().enumerate() {
        row_map[old] = new;
    }
    let mut col_map = vec![usize::MAX; a.ncols()];
    for (new, &old) in cols.iter().enumerate() {
        col_map[old] = new;
    }
    let mut b = TripletBuilder::new(rows.len(), cols.len());
    for (i, j, v) in entries(a) {
        let (ri, cj) = (row_map[i], col_map[j]);
        if ri != usize::MAX && cj != usize::MAX {
            b.push(ri, cj, v);
        }
    }
    b.build()
}

/// Maximum of |A - Aᵀ| over stored entries, relative to max |A|.
pub fn asymmetry(a: &SparseMatrix) -> f64 {
    let dense_lookup = |i: usize, j: usize| -> f64 {
        let col_ptr = a.symbolic().col_ptr();
        let row_idx = a.symbolic().row_idx();
        let range = col_ptr[j]..col_ptr[j + 1];
        match row_idx[range.clone()].binary_search(&i) {
            Ok(p) => a.val()[range.start + p],
            Err(_) => 0.0,
        }
    };
    let mut max_abs: f64 = 0.0;
    let mut max_diff: f64 = 0.0;
    for (i, j, v) in entries(a) {
        max_abs = max_abs.max(v.abs());
        max_diff = max_diff.max((v - dense_lookup(j, i)).abs());
    }
    if max_abs == 0.0 {
        0.0
    } else {
        max_diff / max_abs
    }
}

/// Write a matrix in 1-based coordinate format (`row col value` per line).
pub fn write_coordinate(a: &SparseMatrix, out: &mut impl Write) -> std::io::Result<()> {
    let nnz = entries(a).count();
    writeln!(out, "% coordinate real general")?;
    writeln!(out, "{} {} {}", a.nrows(), a.ncols(), nnz)?;
    for (i, j, v) in entries(a) {
        writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

/// Sparse LU factorization with a slice-based solve.
pub struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let lu = a
            .sp_lu()
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(SparseLu { lu, n: a.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let b = faer::MatRef::from_column_major_slice(rhs, self.n, 1);
        let x = self.lu.solve(b);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}
