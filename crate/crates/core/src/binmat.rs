//! Bit-packed binary matrices and the exact Boolean matrix product.
//!
//! Rows are stored contiguously as little-endian `u64` words (bit `j % 64` of
//! word `j / 64` within a row holds column `j`). Any padding bits beyond the
//! last column are kept at zero so word-level operations (AND/OR, popcount)
//! never see garbage.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// Dense binary matrix with bit-packed rows.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BinaryMatrix({}x{}, {} ones)",
            self.rows,
            self.cols,
            self.count_ones()
        )
    }
}

impl BinaryMatrix {
    /// All-zeros matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(WORD_BITS);
        BinaryMatrix {
            rows,
            cols,
            words_per_row,
            words: vec![0u64; rows * words_per_row],
        }
    }

    /// All-ones matrix of the given shape (padding bits stay zero).
    pub fn ones(rows: usize, cols: usize) -> Self {
        let mut m = BinaryMatrix::zeros(rows, cols);
        if m.words_per_row == 0 {
            return m;
        }
        let tail = cols % WORD_BITS;
        let last = if tail == 0 { !0u64 } else { !(!0u64 << tail) };
        for i in 0..rows {
            let row = &mut m.words[i * m.words_per_row..(i + 1) * m.words_per_row];
            for w in row.iter_mut() {
                *w = !0u64;
            }
            row[m.words_per_row - 1] = last;
        }
        m
    }

    /// Builds a matrix from a row-major dense slice of `{0, 1}` bytes.
    pub fn from_dense(values: &[u8], rows: usize, cols: usize) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "dense buffer has {} entries, expected {}x{} = {}",
                values.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        let mut m = BinaryMatrix::zeros(rows, cols);
        for (idx, &v) in values.iter().enumerate() {
            match v {
                0 => {}
                1 => m.set(idx / cols, idx % cols, true),
                other => {
                    return Err(Error::Data(format!(
                        "dense entry at flat index {idx} is {other}, expected 0 or 1"
                    )))
                }
            }
        }
        Ok(m)
    }

    /// Matrix with every entry drawn independently as Bernoulli(`p`).
    pub fn bernoulli(rows: usize, cols: usize, p: f64, rng: &mut impl rand::Rng) -> Self {
        let mut m = BinaryMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if rng.random::<f64>() < p {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    /// Number of rows.
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Words used to store one row.
    #[inline]
    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    /// Reads entry `(i, j)`. Panics when out of bounds.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        let w = self.words[i * self.words_per_row + j / WORD_BITS];
        (w >> (j % WORD_BITS)) & 1 == 1
    }

    /// Writes entry `(i, j)`. Panics when out of bounds.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        let w = &mut self.words[i * self.words_per_row + j / WORD_BITS];
        let bit = 1u64 << (j % WORD_BITS);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    /// Packed words of row `i`.
    #[inline]
    pub fn row_words(&self, i: usize) -> &[u64] {
        debug_assert!(i < self.rows);
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    #[inline]
    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    /// Iterates the column indices of the set bits in row `i`, ascending.
    pub fn row_ones(&self, i: usize) -> RowOnes<'_> {
        RowOnes {
            words: self.row_words(i),
            word_idx: 0,
            current: self.row_words(i).first().copied().unwrap_or(0),
        }
    }

    /// Number of set bits in row `i`.
    #[inline]
    pub fn row_count_ones(&self, i: usize) -> u32 {
        self.row_words(i).iter().map(|w| w.count_ones()).sum()
    }

    /// Total number of set bits.
    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Fraction of set entries; zero for an empty matrix.
    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            0.0
        } else {
            self.count_ones() as f64 / (self.rows as f64 * self.cols as f64)
        }
    }

    /// Row-major dense copy as `{0, 1}` bytes.
    pub fn to_dense(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.rows * self.cols];
        for i in 0..self.rows {
            for j in self.row_ones(i) {
                out[i * self.cols + j] = 1;
            }
        }
        out
    }

    /// Transposed copy.
    pub fn transpose(&self) -> BinaryMatrix {
        let mut t = BinaryMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in self.row_ones(i) {
                t.set(j, i, true);
            }
        }
        t
    }

    /// Hamming distance (number of differing entries) to a same-shape matrix.
    pub fn hamming(&self, other: &BinaryMatrix) -> Result<u64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "hamming distance needs equal shapes, got {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a ^ b).count_ones()))
            .sum())
    }

    /// Checks that every padding bit beyond the last column is zero.
    #[cfg(test)]
    pub(crate) fn padding_is_zero(&self) -> bool {
        let tail = self.cols % WORD_BITS;
        if self.words_per_row == 0 || tail == 0 {
            return true;
        }
        let mask = !0u64 << tail;
        (0..self.rows).all(|i| self.row_words(i)[self.words_per_row - 1] & mask == 0)
    }
}

/// Reads bit `j` from a packed row slice.
#[inline]
pub(crate) fn bit_at(words: &[u64], j: usize) -> bool {
    (words[j >> 6] >> (j & 63)) & 1 == 1
}

/// Writes bit `j` in a packed row slice.
#[inline]
pub(crate) fn assign_bit(words: &mut [u64], j: usize, value: bool) {
    let bit = 1u64 << (j & 63);
    if value {
        words[j >> 6] |= bit;
    } else {
        words[j >> 6] &= !bit;
    }
}

/// Iterator over set-bit column indices of one row.
pub struct RowOnes<'a> {
    words: &'a [u64],
    word_idx: usize,
    current: u64,
}

impl Iterator for RowOnes<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        while self.current == 0 {
            self.word_idx += 1;
            if self.word_idx >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word_idx];
        }
        let bit = self.current.trailing_zeros() as usize;
        self.current &= self.current - 1;
        Some(self.word_idx * WORD_BITS + bit)
    }
}

/// Exact Boolean product: `out[n][d] = OR_l (z[n][l] AND u[l][d])`.
///
/// Computed by OR-ing the `u` rows selected by each `z` row, word by word.
pub fn boolean_or_product(z: &BinaryMatrix, u: &BinaryMatrix) -> Result<BinaryMatrix> {
    if z.cols != u.rows {
        return Err(Error::Shape(format!(
            "inner dimensions differ: {}x{} times {}x{}",
            z.rows, z.cols, u.rows, u.cols
        )));
    }
    let mut out = BinaryMatrix::zeros(z.rows, u.cols);
    let wpr = out.words_per_row;
    for n in 0..z.rows {
        // Split the output buffer manually so we can read `u` while writing.
        let row_start = n * wpr;
        for l in z.row_ones(n) {
            let urow = u.row_words(l);
            let orow = &mut out.words[row_start..row_start + wpr];
            for (o, w) in orow.iter_mut().zip(urow) {
                *o |= w;
            }
        }
    }
    Ok(out)
}

impl Serialize for BinaryMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = MatrixRepr {
            rows: self.rows,
            cols: self.cols,
            data: (0..self.rows)
                .map(|i| {
                    let mut s = String::with_capacity(self.cols);
                    for j in 0..self.cols {
                        s.push(if self.get(i, j) { '1' } else { '0' });
                    }
                    s
                })
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(deserializer)?;
        if repr.data.len() != repr.rows {
            return Err(D::Error::custom(format!(
                "matrix declares {} rows but carries {}",
                repr.rows,
                repr.data.len()
            )));
        }
        let mut m = BinaryMatrix::zeros(repr.rows, repr.cols);
        for (i, row) in repr.data.iter().enumerate() {
            if row.len() != repr.cols {
                return Err(D::Error::custom(format!(
                    "row {i} has {} characters, expected {}",
                    row.len(),
                    repr.cols
                )));
            }
            for (j, ch) in row.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => m.set(i, j, true),
                    other => {
                        return Err(D::Error::custom(format!(
                            "row {i} column {j}: invalid character {other:?}"
                        )))
                    }
                }
            }
        }
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<String>,
}
