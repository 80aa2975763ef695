//! Frequency and inverse-document-frequency weighting of the n-gram count
//! matrix.

use alloc::vec::Vec;

use super::ngram::CountMatrix;

/// Dense row-major `rows x cols` matrix of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// How the frequency term is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FrequencyMode {
    /// Divide by the column sum, across nodes.
    #[default]
    Column,
    /// Divide by the row sum, i.e. conventional term frequency.
    Row,
}

/// `f_s(i,j) = S(i,j) / sum_m S(m,j)`; a zero-sum column yields zeros.
pub fn term_frequency(counts: &CountMatrix) -> Matrix {
    term_frequency_with(counts, FrequencyMode::Column)
}

pub fn term_frequency_with(counts: &CountMatrix, mode: FrequencyMode) -> Matrix {
    let (num, k) = (counts.num(), counts.k());
    let mut out = Matrix::zeros(num, k);
    match mode {
        FrequencyMode::Column => {
            for j in 0..k {
                let sum: u64 = (0..num).map(|i| u64::from(counts.get(i, j))).sum();
                if sum == 0 {
                    continue;
                }
                for i in 0..num {
                    out.set(i, j, f64::from(counts.get(i, j)) / sum as f64);
                }
            }
        }
        FrequencyMode::Row => {
            for i in 0..num {
                let sum: u64 = counts.row(i).iter().map(|&c| u64::from(c)).sum();
                if sum == 0 {
                    continue;
                }
                for j in 0..k {
                    out.set(i, j, f64::from(counts.get(i, j)) / sum as f64);
                }
            }
        }
    }
    out
}

/// Number of rows in which column `j` is non-zero.
pub fn document_frequency(counts: &CountMatrix) -> Vec<usize> {
    (0..counts.k())
        .map(|j| (0..counts.num()).filter(|&i| counts.get(i, j) > 0).count())
        .collect()
}

/// `idf_j = ln(num / (d_j + 1))`. Negative values are kept as they come.
pub fn inverse_document_frequency(counts: &CountMatrix) -> Vec<f64> {
    let num = counts.num() as f64;
    document_frequency(counts)
        .into_iter()
        .map(|d| libm::log(num / (d as f64 + 1.0)))
        .collect()
}

/// The intermediate product `S(i,j) * f_s(i,j)`.
pub fn count_times_frequency(counts: &CountMatrix, tf: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(counts.num(), counts.k());
    for i in 0..counts.num() {
        for j in 0..counts.k() {
            out.set(i, j, f64::from(counts.get(i, j)) * tf.get(i, j));
        }
    }
    out
}

/// `N_f(i,j) = S(i,j) * f_s(i,j) * idf_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMatrix {
    pub values: Matrix,
}

pub fn weight_matrix(counts: &CountMatrix) -> WeightedMatrix {
    weight_matrix_with(counts, FrequencyMode::Column)
}

pub fn weight_matrix_with(counts: &CountMatrix, mode: FrequencyMode) -> WeightedMatrix {
    let tf = term_frequency_with(counts, mode);
    let idf = inverse_document_frequency(counts);
    let mut values = count_times_frequency(counts, &tf);
    for i in 0..values.rows() {
        for (j, w) in idf.iter().enumerate() {
            let v = values.get(i, j) * w;
            values.set(i, j, v);
        }
    }
    WeightedMatrix { values }
}
