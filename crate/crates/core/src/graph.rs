//! Compressed-row sparse matrices and the bipartite Laplacian kernels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};

/// Real sparse matrix in canonical CSR form: column indices strictly
/// increasing within each row, all values finite.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    /// Validates and wraps raw CSR arrays.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return Err(Error::Dimension("row_offsets must have n_rows+1 entries starting at 0".into()));
        }
        if col_indices.len() != values.len() || *row_offsets.last().unwrap() != values.len() {
            return Err(Error::Dimension("row_offsets, col_indices and values disagree on nnz".into()));
        }
        for r in 0..n_rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(Error::InvalidArgument(format!("row_offsets decrease at row {r}")));
            }
            let cols = &col_indices[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!("row {r} columns not strictly increasing")));
            }
            if cols.last().is_some_and(|&c| c as usize >= n_cols) {
                return Err(Error::Dimension(format!("row {r} has a column out of range")));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value {v}")));
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = t.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(Error::Dimension(format!(
                "entry ({r}, {c}) outside {n_rows}x{n_cols}"
            )));
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices: Vec<u32> = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c as u32);
            values.push(v);
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::from_csr(n_rows, n_cols, row_offsets, col_indices, values)
    }

    /// Binary matrix with a 1.0 at every listed position (duplicates collapse).
    pub fn from_pattern(
        n_rows: usize,
        n_cols: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut e: Vec<(usize, usize)> = entries.into_iter().collect();
        e.sort_unstable();
        e.dedup();
        Self::from_triplets(n_rows, n_cols, e.into_iter().map(|(r, c)| (r, c, 1.0)))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_offsets[r + 1] - self.row_offsets[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in increasing order, so each output row stays sorted
        for (r, c, v) in self.iter() {
            let slot = next[c];
            col_indices[slot] = r as u32;
            values[slot] = v;
            next[c] += 1;
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Exact structural and value symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && *self == self.transpose()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }

    /// Copy of the block `[row0, row0+n_rows) x [col0, col0+n_cols)`.
    pub fn block(&self, row0: usize, col0: usize, n_rows: usize, n_cols: usize) -> SparseMatrix {
        let entries = self.iter().filter_map(|(r, c, v)| {
            let inside = (row0..row0 + n_rows).contains(&r) && (col0..col0 + n_cols).contains(&c);
            inside.then(|| (r - row0, c - col0, v))
        });
        Self::from_triplets(n_rows, n_cols, entries).expect("block entries are in range")
    }

    /// Writes the COO text form: `rows=<n> cols=<n> nnz=<n>` then one
    /// `i<TAB>j<TAB>v` line per stored entry in row-major order. Values use
    /// the shortest representation that parses back to the same bits.
    pub fn write_coo(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_coo_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_coo_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "rows={} cols={} nnz={}", self.n_rows, self.n_cols, self.nnz())?;
        for (r, c, v) in self.iter() {
            writeln!(w, "{r}\t{c}\t{v:?}")?;
        }
        Ok(())
    }

    pub fn read_coo(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_coo_from(BufReader::new(file))
    }

    pub fn read_coo_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::parse(1, e.to_string()))?,
            None => return Err(Error::Empty("COO file".into())),
        };
        let mut dims = [None; 3];
        for tok in header.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(1, format!("bad header token `{tok}`")))?;
            let slot = match k {
                "rows" => 0,
                "cols" => 1,
                "nnz" => 2,
                _ => return Err(Error::parse(1, format!("unknown header key `{k}`"))),
            };
            dims[slot] = Some(
                v.parse::<usize>()
                    .map_err(|_| Error::parse(1, format!("bad header value `{v}`")))?,
            );
        }
        let [Some(n_rows), Some(n_cols), Some(nnz)] = dims else {
            return Err(Error::parse(1, "header must be `rows=<n> cols=<n> nnz=<n>`"));
        };

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        let mut prev: Option<(usize, usize)> = None;
        for (idx, line) in lines.enumerate() {
            let lineno = idx as u64 + 2;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(lineno, format!("expected 3 fields, got {}", f.len())));
            }
            let r: usize = f[0].parse().map_err(|_| Error::parse(lineno, "bad row index"))?;
            let c: usize = f[1].parse().map_err(|_| Error::parse(lineno, "bad column index"))?;
            let v: f64 = f[2].parse().map_err(|_| Error::parse(lineno, "bad value"))?;
            if r >= n_rows || c >= n_cols {
                return Err(Error::parse(lineno, format!("entry ({r}, {c}) out of range")));
            }
            if prev.is_some_and(|p| p >= (r, c)) {
                return Err(Error::parse(lineno, "entries not in strictly row-major order"));
            }
            prev = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c as u32);
            values.push(v);
        }
        if values.len() != nnz {
            return Err(Error::Dimension(format!(
                "header declares {nnz} entries, found {}",
                values.len()
            )));
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::from_csr(n_rows, n_cols, row_offsets, col_indices, values)
    }
}

/// Assembles the binary bipartite adjacency `[[W_UU, R], [R^T, W_II]]`.
///
/// Missing correlation blocks are zero. Every stored entry of the result is
/// 1.0 and diagonal entries of the correlation blocks are dropped.
pub fn build_adjacency(
    r: &SparseMatrix,
    w_uu: Option<&SparseMatrix>,
    w_ii: Option<&SparseMatrix>,
) -> Result<SparseMatrix> {
    let (nu, ni) = (r.n_rows(), r.n_cols());
    for (name, w, n) in [("W_UU", w_uu, nu), ("W_II", w_ii, ni)] {
        if let Some(w) = w {
            if w.n_rows() != n || w.n_cols() != n {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    w.n_rows(),
                    w.n_cols()
                )));
            }
            if let Some((a, b, _)) = w.iter().find(|&(a, b, _)| a != b && w.get(b, a) == 0.0) {
                return Err(Error::Asymmetric(format!("{name} has ({a}, {b}) but not ({b}, {a})")));
            }
        }
    }

    let n = nu + ni;
    let mut entries = Vec::with_capacity(2 * r.nnz());
    if let Some(w) = w_uu {
        entries.extend(w.iter().filter(|&(a, b, _)| a != b).map(|(a, b, _)| (a, b)));
    }
    for (u, i, _) in r.iter() {
        entries.push((u, nu + i));
        entries.push((nu + i, u));
    }
    if let Some(w) = w_ii {
        entries.extend(w.iter().filter(|&(a, b, _)| a != b).map(|(a, b, _)| (nu + a, nu + b)));
    }
    SparseMatrix::from_pattern(n, n, entries)
}

/// Symmetric degree normalisation `L = D^-1/2 A D^-1/2` with degrees taken
/// as row sums. Zero-degree rows stay zero.
pub fn normalize_sym(a: &SparseMatrix) -> Result<SparseMatrix> {
    if a.n_rows() != a.n_cols() {
        return Err(Error::Dimension(format!(
            "normalize_sym needs a square matrix, got {}x{}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    let deg = a.row_sums();
    let mut values = Vec::with_capacity(a.nnz());
    for (r, c, v) in a.iter() {
        let d = deg[r] * deg[c];
        values.push(if d > 0.0 { v / d.sqrt() } else { 0.0 });
    }
    SparseMatrix::from_csr(
        a.n_rows,
        a.n_cols,
        a.row_offsets.clone(),
        a.col_indices.clone(),
        values,
    )
}

/// Sparse-dense product `L * E`.
pub fn spmm(l: &SparseMatrix, e: &EmbeddingTable) -> Result<EmbeddingTable> {
    if l.n_cols() != e.n_rows() {
        return Err(Error::Dimension(format!(
            "cannot multiply {}x{} matrix with {} embedding rows",
            l.n_rows(),
            l.n_cols(),
            e.n_rows()
        )));
    }
    let mut out = EmbeddingTable::zeros(l.n_rows(), e.dim())?;
    spmm_into(l, e.as_slice(), e.dim(), out.as_mut_slice());
    Ok(out)
}

/// Slice-level `dst = L * src` for row-major matrices with `dim` columns.
/// Callers guarantee the shapes.
pub(crate) fn spmm_into(l: &SparseMatrix, src: &[f64], dim: usize, dst: &mut [f64]) {
    debug_assert_eq!(src.len(), l.n_cols() * dim);
    debug_assert_eq!(dst.len(), l.n_rows() * dim);
    dst.par_chunks_mut(dim)
        .with_min_len(64)
        .enumerate()
        .for_each(|(r, out)| {
            out.fill(0.0);
            let (cols, vals) = l.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let c = c as usize;
                let x = &src[c * dim..(c + 1) * dim];
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o += v * xi;
                }
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_interaction_adjacency() {
        let r = SparseMatrix::from_pattern(1, 1, [(0, 0)]).unwrap();
        let a = build_adjacency(&r, None, None).unwrap();
        assert_eq!(a.to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn user_block_placement() {
        let r = SparseMatrix::from_pattern(2, 2, [(0, 0), (1, 1)]).unwrap();
        let w = SparseMatrix::from_pattern(2, 2, [(0, 1), (1, 0)]).unwrap();
        let a = build_adjacency(&r, Some(&w), None).unwrap();
        let expect = vec![
            vec![0.0, 1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ];
        assert_eq!(a.to_dense(), expect);
        assert!(a.is_symmetric());
    }

    #[test]
    fn adjacency_errors() {
        let r = SparseMatrix::from_pattern(2, 3, [(0, 0)]).unwrap();
        let bad_dim = SparseMatrix::zeros(3, 3);
        assert!(matches!(
            build_adjacency(&r, Some(&bad_dim), None),
            Err(Error::Dimension(_))
        ));
        let asym = SparseMatrix::from_pattern(3, 3, [(0, 1)]).unwrap();
        assert!(matches!(
            build_adjacency(&r, None, Some(&asym)),
            Err(Error::Asymmetric(_))
        ));
    }

    #[test]
    fn self_loops_are_dropped() {
        let r = SparseMatrix::from_pattern(2, 1, [(0, 0)]).unwrap();
        let w = SparseMatrix::from_pattern(2, 2, [(0, 0), (1, 1)]).unwrap();
        let a = build_adjacency(&r, Some(&w), None).unwrap();
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn normalize_unit_and_star() {
        let edge = SparseMatrix::from_pattern(2, 2, [(0, 1), (1, 0)]).unwrap();
        assert_eq!(normalize_sym(&edge).unwrap(), edge);

        let star = SparseMatrix::from_pattern(
            5,
            5,
            (1..5).flat_map(|k| [(0, k), (k, 0)]),
        )
        .unwrap();
        let l = normalize_sym(&star).unwrap();
        assert!(l.values().iter().all(|&v| v == 0.5));
        assert!(l.is_symmetric());
    }

    #[test]
    fn normalize_isolated_rows_and_non_square() {
        let a = SparseMatrix::from_pattern(3, 3, [(0, 1), (1, 0)]).unwrap();
        let l = normalize_sym(&a).unwrap();
        assert_eq!(l.row_nnz(2), 0);
        assert!(normalize_sym(&SparseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spmm_identity_zero_row_and_mismatch() {
        let e = EmbeddingTable::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(spmm(&SparseMatrix::identity(3), &e).unwrap(), e);
        let l = SparseMatrix::from_triplets(3, 3, [(0, 1, 2.0), (2, 0, 1.0)]).unwrap();
        let out = spmm(&l, &e).unwrap();
        assert_eq!(out.row(0), &[6.0, 8.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
        assert!(spmm(&SparseMatrix::identity(2), &e).is_err());
    }

    #[test]
    fn triplets_sum_duplicates_and_transpose() {
        let m = SparseMatrix::from_triplets(2, 3, [(1, 2, 1.5), (0, 1, 1.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 2.0);
        let t = m.transpose();
        assert_eq!((t.n_rows(), t.n_cols()), (3, 2));
        assert_eq!(t.get(2, 1), 2.0);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn csr_validation() {
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![0], vec![f64::NAN]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
    }

    #[test]
    fn coo_text_layout() {
        let m = SparseMatrix::from_triplets(2, 2, [(0, 1, 0.1), (1, 0, 1.0)]).unwrap();
        let mut buf = Vec::new();
        m.write_coo_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "rows=2 cols=2 nnz=2\n0\t1\t0.1\n1\t0\t1.0\n");
        assert_eq!(SparseMatrix::read_coo_from(buf.as_slice()).unwrap(), m);
        assert!(SparseMatrix::read_coo_from("rows=2 cols=2 nnz=3\n0\t1\t1\n".as_bytes()).is_err());
        assert!(SparseMatrix::read_coo_from("rows=2 cols=2 nnz=2\n1\t0\t1\n0\t1\t1\n".as_bytes()).is_err());
    }
}
