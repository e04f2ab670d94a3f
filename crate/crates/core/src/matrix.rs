//! Dense and bit-packed matrix types.
//!
//! Dense values are `f64`, row-major. Sign matrices are packed one bit per
//! element into `u64` words, least-significant bit first, with bit `1`
//! standing for `+1` and bit `0` for `-1`. Padding bits past `cols` in the
//! last word of each row are always zero.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} != {rows} x {cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
                msg: "non-finite entry".into(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
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

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; an empty-column matrix has no data anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self::from_vec_unchecked(self.cols, self.rows, out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Computes `a · b_tᵀ`.
///
/// Each output entry is accumulated sequentially over the shared dimension,
/// starting from `0.0`, so any oracle using the same order matches bit for bit.
pub fn matmul(a: &DenseMatrix, b_t: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b_t.cols {
        return Err(Error::Shape(format!(
            "matmul: lhs has {} columns, rhs (transposed) has {}",
            a.cols, b_t.cols
        )));
    }
    let mut out = Vec::with_capacity(a.rows * b_t.rows);
    for x in a.row_iter() {
        for w in b_t.row_iter() {
            let mut acc = 0.0;
            for (xi, wi) in x.iter().zip(w) {
                acc += xi * wi;
            }
            out.push(acc);
        }
    }
    // a 0-column product still has rows x rows zeros
    if a.cols == 0 {
        out = vec![0.0; a.rows * b_t.rows];
    }
    Ok(DenseMatrix::from_vec_unchecked(a.rows, b_t.rows, out))
}

pub fn frobenius_norm_sq(m: &DenseMatrix) -> f64 {
    m.data.iter().map(|x| x * x).sum()
}

/// Row-major boolean matrix, used for salient masks and source-position masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask length {} != {rows} x {cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.data[i * self.cols..(i + 1) * self.cols]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn not(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }
}

/// A ±1 matrix packed one bit per entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedBinaryMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl PackedBinaryMatrix {
    pub fn words_for(cols: usize) -> usize {
        cols.div_ceil(64)
    }

    /// All entries `-1`.
    pub fn negative(rows: usize, cols: usize) -> Self {
        let words_per_row = Self::words_for(cols);
        Self {
            rows,
            cols,
            words_per_row,
            bits: vec![0; rows * words_per_row],
        }
    }

    /// `f(i, j) == true` marks `+1`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::negative(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if f(i, j) {
                    m.bits[i * m.words_per_row + j / 64] |= 1u64 << (j % 64);
                }
            }
        }
        m
    }

    /// Builds from raw words, checking length and zero padding.
    pub fn from_words(rows: usize, cols: usize, bits: Vec<u64>) -> Result<Self> {
        let words_per_row = Self::words_for(cols);
        if bits.len() != rows * words_per_row {
            return Err(Error::Shape(format!(
                "expected {} words, got {}",
                rows * words_per_row,
                bits.len()
            )));
        }
        let m = Self {
            rows,
            cols,
            words_per_row,
            bits,
        };
        if cols % 64 != 0 {
            let pad_mask = !((1u64 << (cols % 64)) - 1);
            for i in 0..rows {
                if m.bits[i * words_per_row + words_per_row - 1] & pad_mask != 0 {
                    return Err(Error::Integrity(format!("row {i} has nonzero padding bits")));
                }
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    #[inline]
    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    /// True when entry `(i, j)` is `+1`.
    #[inline]
    pub fn bit(&self, i: usize, j: usize) -> bool {
        (self.bits[i * self.words_per_row + j / 64] >> (j % 64)) & 1 == 1
    }

    #[inline]
    pub fn sign(&self, i: usize, j: usize) -> f64 {
        if self.bit(i, j) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|w| u64::from(w.count_ones())).sum()
    }
}

/// Packs a matrix whose entries are exactly `-1.0` or `+1.0`.
pub fn pack_signs(m: &DenseMatrix) -> Result<PackedBinaryMatrix> {
    for i in 0..m.rows {
        for (j, &x) in m.row(i).iter().enumerate() {
            if x != 1.0 && x != -1.0 {
                return Err(Error::Domain {
                    row: i,
                    col: j,
                    msg: format!("expected +1 or -1, found {x}"),
                });
            }
        }
    }
    Ok(PackedBinaryMatrix::from_fn(m.rows, m.cols, |i, j| m.get(i, j) == 1.0))
}

pub fn unpack_signs(p: &PackedBinaryMatrix) -> DenseMatrix {
    let mut data = Vec::with_capacity(p.rows * p.cols);
    for i in 0..p.rows {
        for j in 0..p.cols {
            data.push(p.sign(i, j));
        }
    }
    DenseMatrix::from_vec_unchecked(p.rows, p.cols, data)
}

/// Number of differing signs between two packed rows: `popcount(a ^ b)`.
#[inline]
pub fn hamming_distance(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "hamming: {} words vs {} words",
            a.len(),
            b.len()
        )));
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
pub(crate) fn hamming_unchecked(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}
