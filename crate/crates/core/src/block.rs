//! Block-structured vectors and matrices.
//!
//! A vector in `R^{np}` is read as `p` contiguous blocks of length `n`.
//! Block indices are zero-based throughout the crate.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor below which a block is treated as zero.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Columns with a norm below this are rejected by [`normalize_columns`].
pub const COLUMN_NORM_FLOOR: f64 = 1e-12;

/// Relative singular-value cutoff used by [`orthonormalize_rows`].
pub const RANK_TOL: f64 = 1e-10;

/// The `(n, p)` layout: `p` blocks of length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockStructure {
    n: usize,
    p: usize,
}

impl BlockStructure {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidStructure { n, p });
        }
        Ok(Self { n, p })
    }

    /// Block length.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of blocks.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Total dimension `n * p`.
    pub fn dim(&self) -> usize {
        self.n * self.p
    }

    /// Coordinates covered by block `i`.
    pub fn block_range(&self, i: usize) -> Range<usize> {
        i * self.n..(i + 1) * self.n
    }
}

impl fmt::Display for BlockStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={}, p={}", self.n, self.p)
    }
}

/// Which block norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockNorm {
    B1,
    B2,
    BInf,
}

/// A vector of length `n * p` with block semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    structure: BlockStructure,
    values: DVector<f64>,
}

impl BlockVector {
    pub fn new(structure: BlockStructure, values: DVector<f64>) -> Result<Self> {
        if values.len() != structure.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} does not fit {structure}",
                values.len()
            )));
        }
        Ok(Self { structure, values })
    }

    pub fn from_slice(structure: BlockStructure, values: &[f64]) -> Result<Self> {
        Self::new(structure, DVector::from_column_slice(values))
    }

    pub fn zeros(structure: BlockStructure) -> Self {
        Self {
            structure,
            values: DVector::zeros(structure.dim()),
        }
    }

    pub fn structure(&self) -> BlockStructure {
        self.structure
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values.as_slice()[self.structure.block_range(i)]
    }

    /// Euclidean norm of every block, in order.
    pub fn block_norms(&self) -> Vec<f64> {
        block_norms(self.values.as_slice(), self.structure.n())
    }

    pub fn norm(&self, kind: BlockNorm) -> f64 {
        block_norm(self, kind)
    }
}

impl Serialize for BlockVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("BlockVector", 3)?;
        st.serialize_field("n", &self.structure.n)?;
        st.serialize_field("p", &self.structure.p)?;
        st.serialize_field("values", self.values.as_slice())?;
        st.end()
    }
}

/// Euclidean norms of consecutive length-`n` chunks of `values`.
pub(crate) fn block_norms(values: &[f64], n: usize) -> Vec<f64> {
    values
        .chunks(n)
        .map(|b| b.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

pub(crate) fn block_norm_slice(values: &[f64], n: usize, kind: BlockNorm) -> f64 {
    match kind {
        BlockNorm::B1 => block_norms(values, n).iter().sum(),
        BlockNorm::B2 => values.iter().map(|x| x * x).sum::<f64>().sqrt(),
        BlockNorm::BInf => block_norms(values, n).into_iter().fold(0.0, f64::max),
    }
}

/// A sorted set of block indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndexSet {
    indices: BTreeSet<usize>,
}

impl BlockIndexSet {
    /// Builds a set, rejecting indices outside `0..p`.
    pub fn new(p: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let indices: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&bad) = indices.iter().find(|&&i| i >= p) {
            return Err(Error::InvalidArgument(format!(
                "block index {bad} out of range for p = {p}"
            )));
        }
        Ok(Self { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.indices.iter().copied().collect()
    }
}

/// A dense `m x np` sensing matrix with column blocks of width `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    structure: BlockStructure,
    data: DMatrix<f64>,
}

impl SensingMatrix {
    pub fn new(structure: BlockStructure, data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() != structure.dim() || data.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix does not fit {structure}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self { structure, data })
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_slice(structure: BlockStructure, m: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != m * structure.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} entries cannot fill a {m}x{} matrix",
                entries.len(),
                structure.dim()
            )));
        }
        Self::new(
            structure,
            DMatrix::from_row_slice(m, structure.dim(), entries),
        )
    }

    pub fn structure(&self) -> BlockStructure {
        self.structure
    }

    /// Number of rows `m`.
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Column block `j` as an owned `m x n` matrix.
    pub fn column_block(&self, j: usize) -> DMatrix<f64> {
        let n = self.structure.n();
        self.data.columns(j * n, n).into_owned()
    }

    /// The Gram matrix `A^T A`, laid out with the same block structure.
    pub fn gram(&self) -> SensingMatrix {
        SensingMatrix {
            structure: self.structure,
            data: self.data.tr_mul(&self.data),
        }
    }

    pub fn apply(&self, x: &BlockVector) -> Result<DVector<f64>> {
        if x.structure() != self.structure {
            return Err(Error::DimensionMismatch(format!(
                "vector with {} applied to matrix with {}",
                x.structure(),
                self.structure
            )));
        }
        Ok(&self.data * x.values())
    }
}

pub fn block_norm(v: &BlockVector, kind: BlockNorm) -> f64 {
    block_norm_slice(v.values.as_slice(), v.structure.n(), kind)
}

/// Blocks whose Euclidean norm exceeds `tol`.
pub fn block_support(v: &BlockVector, tol: f64) -> BlockIndexSet {
    let indices = v
        .block_norms()
        .into_iter()
        .enumerate()
        .filter(|&(_, norm)| norm > tol)
        .map(|(i, _)| i)
        .collect();
    BlockIndexSet { indices }
}

/// Blocks with norm strictly above `beta / 2`.
pub fn threshold_support(v: &BlockVector, beta: f64) -> Result<BlockIndexSet> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold beta must be positive, got {beta}"
        )));
    }
    Ok(block_support(v, beta / 2.0))
}

/// Proximal operator of `tau * ||.||_b1`: shrinks every block towards zero by `tau`.
pub fn block_soft_threshold(v: &BlockVector, tau: f64) -> Result<BlockVector> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be nonnegative, got {tau}"
        )));
    }
    let mut out = v.clone();
    soft_threshold_in_place(out.values.as_mut_slice(), v.structure.n(), tau);
    Ok(out)
}

pub(crate) fn soft_threshold_in_place(values: &mut [f64], n: usize, tau: f64) {
    for block in values.chunks_mut(n) {
        let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if norm > tau { 1.0 - tau / norm } else { 0.0 };
        block.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Rescales every column to unit Euclidean length.
pub fn normalize_columns(a: &SensingMatrix) -> Result<SensingMatrix> {
    let mut data = a.data.clone();
    for (j, mut col) in data.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm < COLUMN_NORM_FLOOR {
            return Err(Error::ZeroColumn { column: j, norm });
        }
        col /= norm;
    }
    Ok(SensingMatrix {
        structure: a.structure,
        data,
    })
}

/// Numerical rank of `a` at the relative cutoff [`RANK_TOL`].
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Replaces `A` by a matrix with orthonormal rows and the same kernel,
/// taken from the thin QR factorization of `A^T`.
pub fn orthonormalize_rows(a: &SensingMatrix) -> Result<SensingMatrix> {
    let m = a.rows();
    let rank = numerical_rank(&a.data);
    if rank < m {
        return Err(Error::RankDeficient { rank, rows: m });
    }
    let q = a.data.transpose().qr().q();
    Ok(SensingMatrix {
        structure: a.structure,
        data: q.transpose(),
    })
}
