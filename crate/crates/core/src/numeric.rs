//! Dense row-major matrices and vectors sized for small networks.
//!
//! Everything here is `f64`. Constructors reject NaN and infinities so that a
//! non-finite value can only appear as the result of arithmetic overflow.

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row 0 has {cols} columns"),
                    format!("row {i} has {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
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

    /// Internal constructor for results of arithmetic on already-checked values.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Applies `f` element-wise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Selects the given columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut out = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let row = self.row(i);
            out.extend(cols.iter().map(|&j| row[j]));
        }
        Matrix::from_raw(self.rows, cols.len(), out)
    }

    pub fn mul_vec(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "mul_vec",
                format!("{}x{}", self.rows, self.cols),
                format!("vector of {}", v.len()),
            ));
        }
        Ok(Vector::from_raw(
            (0..self.rows)
                .map(|i| dot(self.row(i), v.as_slice()))
                .collect(),
        ))
    }

    /// `selfᵀ · self`, accumulated row by row and mirrored so the result is
    /// exactly symmetric.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut out = vec![0.0; n * n];
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..n {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let dst = &mut out[a * n..(a + 1) * n];
                for b in a..n {
                    dst[b] += ra * r[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                out[a * n + b] = out[b * n + a];
            }
        }
        Matrix::from_raw(n, n, out)
    }

    /// `selfᵀ · v`.
    pub fn transpose_mul_vec(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.rows {
            return Err(Error::shape(
                "transpose_mul_vec",
                format!("{}x{}", self.rows, self.cols),
                format!("vector of {}", v.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.as_slice().iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(Vector::from_raw(out))
    }

    /// Returns `self + mu * I`.
    pub fn add_diagonal(&self, mu: f64) -> Matrix {
        let mut out = self.clone();
        let n = self.rows.min(self.cols);
        for i in 0..n {
            out.data[i * self.cols + i] += mu;
        }
        out
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "vector")?;
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.data, &other.data)
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vector {:?}", self.data)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Standard matrix product `a · b`.
pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "mat_mul",
            format!("{}x{}", a.rows, a.cols),
            format!("{}x{}", b.rows, b.cols),
        ));
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let dst = &mut out[i * m..(i + 1) * m];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (d, &bkj) in dst.iter_mut().zip(b.row(k)) {
                *d += aik * bkj;
            }
        }
    }
    Ok(Matrix::from_raw(n, m, out))
}

/// Adds `v[i]` to every entry of row `i`. Same result as adding the bias
/// vector tiled once per column.
pub fn broadcast_add_col(m: &Matrix, v: &Vector) -> Result<Matrix> {
    if v.len() != m.rows {
        return Err(Error::shape(
            "broadcast_add_col",
            format!("{}x{}", m.rows, m.cols),
            format!("vector of {}", v.len()),
        ));
    }
    let mut out = m.data.clone();
    for (i, &vi) in v.as_slice().iter().enumerate() {
        for x in &mut out[i * m.cols..(i + 1) * m.cols] {
            *x += vi;
        }
    }
    Ok(Matrix::from_raw(m.rows, m.cols, out))
}

const SYMMETRY_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-14;
const RESIDUAL_TOL: f64 = 1e-8;

/// Solves `a · x = rhs` for symmetric positive definite `a` by Cholesky
/// factorization.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot is non-positive or
/// negligible relative to the largest diagonal entry, and with
/// [`Error::IllConditioned`] when the multiplied-back residual exceeds
/// `1e-8 · (‖a‖∞·‖x‖∞ + ‖rhs‖∞)`.
pub fn solve_spd(a: &Matrix, rhs: &Vector) -> Result<Vector> {
    let n = a.rows;
    if a.cols != n || rhs.len() != n {
        return Err(Error::shape(
            "solve_spd",
            format!("{}x{}", a.rows, a.cols),
            format!("rhs of {}", rhs.len()),
        ));
    }
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a.get(i, j), a.get(j, i));
            if (x - y).abs() > SYMMETRY_TOL * x.abs().max(y.abs()).max(1.0) {
                return Err(Error::Asymmetric { row: i, col: j });
            }
        }
    }

    let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let floor = max_diag * PIVOT_TOL * n.max(1) as f64;

    // Lower-triangular factor, row-major.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let lj = &l[j * n..j * n + j];
        let d = a.get(j, j) - dot(lj, lj);
        if !(d > floor) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let s = a.get(i, j) - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = s / djj;
        }
    }

    let mut y = rhs.as_slice().to_vec();
    for i in 0..n {
        let s = y[i] - dot(&l[i * n..i * n + i], &y[..i]);
        y[i] = s / l[i * n + i];
    }
    let mut x = y;
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_spd"));
    }

    let x = Vector::from_raw(x);
    let back = a.mul_vec(&x)?;
    let residual = back
        .as_slice()
        .iter()
        .zip(rhs.as_slice())
        .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
    let bound = RESIDUAL_TOL * (a.norm_inf() * x.norm_inf() + rhs.norm_inf());
    if residual > bound {
        return Err(Error::IllConditioned { residual, bound });
    }
    Ok(x)
}
