//! Weighted graphs, Laplacian matrices, and block partitions.
//!
//! A weighted Laplacian is a symmetric matrix `L` with nonpositive
//! off-diagonal entries and zero row sums. We store it as an edge list
//! `(i, j, w)` with `i < j` and `w > 0`, plus the derived diagonal
//! `L_ii = sum_j w_ij`. The quadratic form `(1/2) x^T L x` (the Dirichlet
//! energy) is evaluated over edges as `(1/2) sum_ij w_ij (x_i - x_j)^2`.

use nalgebra::DMatrix;
use std::io::{self, BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({i}, {j}) invalid for {n} nodes: indices must satisfy 0 <= i < j < n")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("edge ({i}, {j}) has nonpositive weight {weight}")]
    NonpositiveWeight { i: usize, j: usize, weight: f64 },

    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },

    #[error("vector length {len} does not match node count {expected}")]
    DimensionMismatch { len: usize, expected: usize },

    #[error("block {index} of partition is empty")]
    EmptyBlock { index: usize },

    #[error("partition covers {total} entries, expected {expected}")]
    PartitionMismatch { total: usize, expected: usize },

    #[error("graph file line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Sparse symmetric Laplacian of a weighted undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLaplacian {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    diag: Vec<f64>,
}

/// Builds a Laplacian from an edge list. Edges must be upper-triangular
/// (`i < j`), strictly positive, and free of duplicates; violations are
/// reported as errors rather than silently merged.
pub fn laplacian_from_edges(
    n: usize,
    edges: &[(usize, usize, f64)],
) -> Result<WeightedLaplacian, GraphError> {
    for &(i, j, w) in edges {
        if i >= j || j >= n {
            return Err(GraphError::IndexOutOfRange { i, j, n });
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(GraphError::NonpositiveWeight { i, j, weight: w });
        }
    }
    let mut sorted = edges.to_vec();
    sorted.sort_by_key(|&(i, j, _)| (i, j));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
            return Err(GraphError::DuplicateEdge {
                i: pair[0].0,
                j: pair[0].1,
            });
        }
    }
    let mut diag = vec![0.0; n];
    for &(i, j, w) in &sorted {
        diag[i] += w;
        diag[j] += w;
    }
    Ok(WeightedLaplacian {
        n,
        edges: sorted,
        diag,
    })
}

impl WeightedLaplacian {
    /// The zero Laplacian on `n` isolated nodes.
    pub fn empty(n: usize) -> Self {
        WeightedLaplacian {
            n,
            edges: Vec::new(),
            diag: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges sorted by `(i, j)`.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Diagonal entries `L_ii = sum_{j != i} w_ij`.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn max_diag(&self) -> f64 {
        self.diag.iter().cloned().fold(0.0, f64::max)
    }

    fn check_len(&self, x: &[f64]) -> Result<(), GraphError> {
        if x.len() != self.n {
            return Err(GraphError::DimensionMismatch {
                len: x.len(),
                expected: self.n,
            });
        }
        Ok(())
    }

    /// Dirichlet energy `(1/2) x^T L x`, accumulated over edges in sorted
    /// order as `(1/2) sum w_ij (x_i - x_j)^2`.
    pub fn dirichlet_energy(&self, x: &[f64]) -> Result<f64, GraphError> {
        self.check_len(x)?;
        let mut acc = 0.0;
        for &(i, j, w) in &self.edges {
            let d = x[i] - x[j];
            acc += w * d * d;
        }
        Ok(0.5 * acc)
    }

    /// Matrix-vector product `h = L x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, GraphError> {
        self.check_len(x)?;
        let mut out = vec![0.0; self.n];
        self.matvec_into(x, &mut out);
        Ok(out)
    }

    /// In-place matrix-vector product; accumulation runs in fixed edge-list
    /// order so repeated calls are bit-identical.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            out[i] = self.diag[i] * x[i];
        }
        for &(i, j, w) in &self.edges {
            out[i] -= w * x[j];
            out[j] -= w * x[i];
        }
    }

    /// Dense form, mainly for validation and small-instance oracles.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            m[(i, i)] = self.diag[i];
        }
        for &(i, j, w) in &self.edges {
            m[(i, j)] = -w;
            m[(j, i)] = -w;
        }
        m
    }
}

/// Validation report for a square matrix checked against the Laplacian
/// invariants (symmetry, nonpositive off-diagonal, zero row sums).
#[derive(Debug, Clone)]
pub struct LaplacianReport {
    /// Worst `|L_ij - L_ji|`.
    pub max_asymmetry: f64,
    /// Worst positive off-diagonal entry (0 when none).
    pub max_positive_offdiag: f64,
    /// Worst `|sum_j L_ij|`.
    pub max_row_sum: f64,
    /// Tolerance the checks were run at: `1e-12 * (1 + max |L_ij|)`.
    pub tolerance: f64,
}

impl LaplacianReport {
    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }

    /// Names of the violated invariants together with worst-case magnitudes.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_asymmetry > self.tolerance {
            out.push(format!("asymmetric (worst {:e})", self.max_asymmetry));
        }
        if self.max_positive_offdiag > self.tolerance {
            out.push(format!(
                "positive off-diagonal (worst {:e})",
                self.max_positive_offdiag
            ));
        }
        if self.max_row_sum > self.tolerance {
            out.push(format!("nonzero row sum (worst {:e})", self.max_row_sum));
        }
        out
    }
}

/// Checks an arbitrary square matrix against the Laplacian invariants.
pub fn validate(m: &DMatrix<f64>) -> LaplacianReport {
    assert_eq!(m.nrows(), m.ncols(), "validate expects a square matrix");
    let n = m.nrows();
    let mut max_asymmetry: f64 = 0.0;
    let mut max_positive_offdiag: f64 = 0.0;
    let mut max_row_sum: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            let v = m[(i, j)];
            row_sum += v;
            max_abs = max_abs.max(v.abs());
            if j > i {
                max_asymmetry = max_asymmetry.max((v - m[(j, i)]).abs());
            }
            if j != i && v > 0.0 {
                max_positive_offdiag = max_positive_offdiag.max(v);
            }
        }
        max_row_sum = max_row_sum.max(row_sum.abs());
    }
    LaplacianReport {
        max_asymmetry,
        max_positive_offdiag,
        max_row_sum,
        tolerance: 1e-12 * (1.0 + max_abs),
    }
}

/// 4-neighbor grid edges with uniform weight; nodes are numbered row-major.
/// Edge count is `rows*(cols-1) + cols*(rows-1)`.
pub fn grid_graph(
    rows: usize,
    cols: usize,
    weight: f64,
) -> Result<Vec<(usize, usize, f64)>, GraphError> {
    if !(weight > 0.0) {
        return Err(GraphError::NonpositiveWeight {
            i: 0,
            j: 0,
            weight,
        });
    }
    let mut edges = Vec::with_capacity(rows.saturating_mul(cols) * 2);
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            if c + 1 < cols {
                edges.push((id, id + 1, weight));
            }
            if r + 1 < rows {
                edges.push((id, id + cols, weight));
            }
        }
    }
    Ok(edges)
}

/// A partition of `{0, .., n-1}` into `p` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self, GraphError> {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut total = 0;
        for (index, &s) in sizes.iter().enumerate() {
            if s == 0 {
                return Err(GraphError::EmptyBlock { index });
            }
            total += s;
            offsets.push(total);
        }
        Ok(BlockPartition { sizes, offsets })
    }

    /// `p` blocks of equal size.
    pub fn uniform(num_blocks: usize, block_size: usize) -> Self {
        BlockPartition::new(vec![block_size; num_blocks]).expect("block_size must be positive")
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn size(&self, block: usize) -> usize {
        self.sizes[block]
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }

    pub fn block<'a>(&self, block: usize, x: &'a [f64]) -> &'a [f64] {
        &x[self.range(block)]
    }
}

/// A flat vector together with the partition that interprets it.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedVector {
    data: Vec<f64>,
    partition: BlockPartition,
}

impl PartitionedVector {
    pub fn new(data: Vec<f64>, partition: BlockPartition) -> Result<Self, GraphError> {
        if data.len() != partition.total() {
            return Err(GraphError::PartitionMismatch {
                total: partition.total(),
                expected: data.len(),
            });
        }
        Ok(PartitionedVector { data, partition })
    }

    pub fn block(&self, block: usize) -> &[f64] {
        self.partition.block(block, &self.data)
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }
}

impl std::ops::Deref for PartitionedVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

/// Writes the graph file format: header `n m`, then one `i j w` line per
/// edge, weights at 17 significant digits so reading back is exact.
pub fn write_graph<W: Write>(lap: &WeightedLaplacian, mut out: W) -> io::Result<()> {
    writeln!(out, "{} {}", lap.n(), lap.num_edges())?;
    for &(i, j, w) in lap.edges() {
        writeln!(out, "{} {} {:.16e}", i, j, w)?;
    }
    Ok(())
}

/// Reads the graph file format and constructs the Laplacian, reporting the
/// first violated construction invariant if the file is corrupted.
pub fn read_graph<R: BufRead>(reader: R) -> Result<WeightedLaplacian, GraphError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(GraphError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let header = header?;
    let mut it = header.split_whitespace();
    let parse_count = |tok: Option<&str>, line: usize| -> Result<usize, GraphError> {
        tok.ok_or(GraphError::Parse {
            line,
            message: "expected `n m` header".into(),
        })?
        .parse()
        .map_err(|e| GraphError::Parse {
            line,
            message: format!("bad count: {e}"),
        })
    };
    let n = parse_count(it.next(), 1)?;
    let m = parse_count(it.next(), 1)?;
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let (idx, line) = lines.next().ok_or(GraphError::Parse {
            line: m + 1,
            message: "unexpected end of file".into(),
        })?;
        let line = line?;
        let lineno = idx + 1;
        let mut it = line.split_whitespace();
        let i: usize = parse_count(it.next(), lineno)?;
        let j: usize = parse_count(it.next(), lineno)?;
        let w: f64 = it
            .next()
            .ok_or(GraphError::Parse {
                line: lineno,
                message: "expected `i j w`".into(),
            })?
            .parse()
            .map_err(|e| GraphError::Parse {
                line: lineno,
                message: format!("bad weight: {e}"),
            })?;
        edges.push((i, j, w));
    }
    laplacian_from_edges(n, &edges)
}

pub fn write_graph_file<P: AsRef<Path>>(lap: &WeightedLaplacian, path: P) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_graph(lap, io::BufWriter::new(file))
}

pub fn read_graph_file<P: AsRef<Path>>(path: P) -> Result<WeightedLaplacian, GraphError> {
    let file = std::fs::File::open(path)?;
    read_graph(io::BufReader::new(file))
}
