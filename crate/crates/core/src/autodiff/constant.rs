//! Constant operands: row segments and fixed (possibly sparse) matrices
//! that enter the tape only as the left factor of a product.

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

/// Partition of `0..total` into consecutive, possibly empty, ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths<I: IntoIterator<Item = usize>>(lengths: I) -> Self {
        let mut offsets = vec![0];
        for len in lengths {
            offsets.push(offsets.last().unwrap() + len);
        }
        Segments { offsets }
    }

    pub fn uniform(count: usize, len: usize) -> Self {
        Segments::from_lengths(std::iter::repeat_n(len, count))
    }

    /// Segments whose lengths follow `lists`, with the flattened members.
    pub fn flatten(lists: &[Vec<usize>]) -> (Self, Vec<usize>) {
        let segs = Segments::from_lengths(lists.iter().map(Vec::len));
        (segs, lists.concat())
    }

    /// Number of segments.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of covered rows.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(m: ArrayView2<f64>) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in m.rows() {
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    indices.push(j);
                    values.push(x);
                }
            }
            indptr.push(indices.len());
        }
        SparseRows {
            ncols: m.ncols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut out = SparseRows {
            ncols: self.ncols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for &i in idx {
            for (j, x) in self.row(i) {
                out.indices.push(j);
                out.values.push(x);
            }
            out.indptr.push(out.indices.len());
        }
        out
    }

    fn segment_mean(&self, members: &[usize], segs: &Segments) -> Self {
        let mut acc = vec![0.0; self.ncols];
        let mut touched = Vec::new();
        let mut out = SparseRows {
            ncols: self.ncols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for r in segs.iter() {
            let scale = if r.is_empty() { 0.0 } else { 1.0 / r.len() as f64 };
            for &i in &members[r] {
                for (j, x) in self.row(i) {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += x;
                }
            }
            touched.sort_unstable();
            touched.dedup();
            for &j in &touched {
                if acc[j] != 0.0 {
                    out.indices.push(j);
                    out.values.push(acc[j] * scale);
                }
                acc[j] = 0.0;
            }
            touched.clear();
            out.indptr.push(out.indices.len());
        }
        out
    }

    fn hconcat(&self, other: &Self) -> Self {
        let mut out = SparseRows {
            ncols: self.ncols + other.ncols,
            indptr: vec![0],
            indices: Vec::with_capacity(self.nnz() + other.nnz()),
            values: Vec::with_capacity(self.nnz() + other.nnz()),
        };
        for i in 0..self.nrows() {
            for (j, x) in self.row(i) {
                out.indices.push(j);
                out.values.push(x);
            }
            for (j, x) in other.row(i) {
                out.indices.push(self.ncols + j);
                out.values.push(x);
            }
            out.indptr.push(out.indices.len());
        }
        out
    }

    fn matmul(&self, w: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows(), w.ncols()));
        for (i, mut orow) in out.rows_mut().into_iter().enumerate() {
            for (j, x) in self.row(i) {
                orow.scaled_add(x, &w.row(j));
            }
        }
        out
    }

    fn t_matmul(&self, g: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.ncols, g.ncols()));
        for i in 0..self.nrows() {
            let grow = g.row(i);
            for (j, x) in self.row(i) {
                out.row_mut(j).scaled_add(x, &grow);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows(), self.ncols));
        for i in 0..self.nrows() {
            for (j, x) in self.row(i) {
                out[[i, j]] = x;
            }
        }
        out
    }
}

/// A matrix that never receives gradients, such as the input features.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstMatrix {
    Dense(Array2<f64>),
    Sparse(SparseRows),
}

impl ConstMatrix {
    /// Chooses the sparse layout when at most `max_density` of the entries
    /// are non-zero.
    pub fn auto(m: ArrayView2<f64>, max_density: f64) -> Self {
        let nnz = m.iter().filter(|&&x| x != 0.0).count();
        if (nnz as f64) <= max_density * (m.len().max(1) as f64) {
            ConstMatrix::Sparse(SparseRows::from_dense(m))
        } else {
            ConstMatrix::Dense(m.to_owned())
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            ConstMatrix::Dense(m) => m.nrows(),
            ConstMatrix::Sparse(s) => s.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            ConstMatrix::Dense(m) => m.ncols(),
            ConstMatrix::Sparse(s) => s.ncols(),
        }
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&i) = idx.iter().find(|&&i| i >= self.nrows()) {
            return Err(Error::Shape(format!("row {i} of a {}-row matrix", self.nrows())));
        }
        Ok(match self {
            ConstMatrix::Dense(m) => ConstMatrix::Dense(m.select(ndarray::Axis(0), idx)),
            ConstMatrix::Sparse(s) => ConstMatrix::Sparse(s.gather_rows(idx)),
        })
    }

    /// Row `s` of the result is the mean of rows `members[segs.range(s)]`.
    pub fn segment_mean(&self, members: &[usize], segs: &Segments) -> Result<Self> {
        if segs.total() != members.len() {
            return Err(Error::Shape("segments do not cover the member list".into()));
        }
        if let Some(&i) = members.iter().find(|&&i| i >= self.nrows()) {
            return Err(Error::Shape(format!("row {i} of a {}-row matrix", self.nrows())));
        }
        Ok(match self {
            ConstMatrix::Dense(m) => {
                let mut out = Array2::zeros((segs.len(), m.ncols()));
                for (s, r) in segs.iter().enumerate() {
                    let n = r.len().max(1) as f64;
                    let mut row = out.row_mut(s);
                    for &i in &members[r] {
                        row.scaled_add(1.0 / n, &m.row(i));
                    }
                }
                ConstMatrix::Dense(out)
            }
            ConstMatrix::Sparse(s) => ConstMatrix::Sparse(s.segment_mean(members, segs)),
        })
    }

    pub fn hconcat(&self, other: &Self) -> Result<Self> {
        if self.nrows() != other.nrows() {
            return Err(Error::Shape(format!(
                "concat of {} and {} rows",
                self.nrows(),
                other.nrows()
            )));
        }
        Ok(match (self, other) {
            (ConstMatrix::Sparse(a), ConstMatrix::Sparse(b)) => ConstMatrix::Sparse(a.hconcat(b)),
            (a, b) => ConstMatrix::Dense(
                ndarray::concatenate(ndarray::Axis(1), &[a.to_dense().view(), b.to_dense().view()])
                    .expect("row counts checked"),
            ),
        })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            ConstMatrix::Dense(m) => m.clone(),
            ConstMatrix::Sparse(s) => s.to_dense(),
        }
    }

    pub(crate) fn matmul(&self, w: ArrayView2<f64>) -> Array2<f64> {
        match self {
            ConstMatrix::Dense(m) => m.dot(&w),
            ConstMatrix::Sparse(s) => s.matmul(w),
        }
    }

    /// `selfᵀ · g`
    pub(crate) fn t_matmul(&self, g: ArrayView2<f64>) -> Array2<f64> {
        match self {
            ConstMatrix::Dense(m) => m.t().dot(&g),
            ConstMatrix::Sparse(s) => s.t_matmul(g),
        }
    }
}
