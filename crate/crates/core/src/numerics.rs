//! Dense linear algebra and periodic signal kernels.
//!
//! Everything here is sized for desk-scale problems (a few hundred unknowns):
//! cyclic Jacobi for symmetric eigenproblems, LU with partial pivoting,
//! Householder least squares and a direct real DFT.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, validation, Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(validation("matrix dimensions must be positive"));
        }
        check_len(rows * cols, data.len())?;
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            check_len(c, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A_ij - A_ji|; panics on non-square input.
    pub fn symmetry_defect(&self) -> f64 {
        assert!(self.is_square());
        let mut d: f64 = 0.0;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                d = d.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        d
    }

    /// Returns `D_l A D_r` for diagonal scalings given as vectors.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| left[i] * self[(i, j)] * right[j])
    }

    /// Average with the transpose.
    pub fn symmetrized(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl EigenResult {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j)
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input must be symmetric within `tol`; it is averaged with its
/// transpose before rotating. Each eigenvector is normalised so that its
/// largest-magnitude component is positive (first such component on ties).
pub fn sym_eig(matrix: &DenseMatrix, tol: f64) -> Result<EigenResult> {
    if !matrix.is_square() {
        return Err(Error::NotSquare {
            rows: matrix.rows(),
            cols: matrix.cols(),
        });
    }
    let defect = matrix.symmetry_defect();
    if defect > tol {
        return Err(Error::NotSymmetric { defect, tol });
    }
    let n = matrix.rows();
    let mut a = matrix.symmetrized();
    let mut v = DenseMatrix::identity(n);

    let frob: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = (f64::EPSILON * frob).powi(2) * 1e-2;
    let off_norm = |a: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s
    };

    let mut converged = frob == 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Once the off-diagonal entry is below the rounding level of
                // both diagonal entries the rotation is the identity.
                if sweeps > 3 && (app.abs() + 1e2 * apq.abs() == app.abs())
                    && (aqq.abs() + 1e2 * apq.abs() == aqq.abs())
                {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
        converged = off_norm(&a) <= target;
    }
    if !converged {
        return Err(Error::EigenNoConvergence {
            sweeps,
            off_norm: off_norm(&a).sqrt(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).expect("NaN eigenvalue"));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let mut big = 0usize;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[big].abs() {
                big = i;
            }
        }
        let sign = if col[big] < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in col.iter().enumerate() {
            vectors[(i, dst)] = sign * x;
        }
    }
    Ok(EigenResult { values, vectors })
}

fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    let (rp, rq) = if p < q {
        let (lo, hi) = a.data.split_at_mut(q * n);
        (&mut lo[p * n..(p + 1) * n], &mut hi[..n])
    } else {
        unreachable!("rotation indices are ordered")
    };
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let apk = *x;
        let aqk = *y;
        *x = c * apk - s * aqk;
        *y = s * apk + c * aqk;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// LU factorisation with partial pivoting, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn new(matrix: &DenseMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        let n = matrix.rows();
        let threshold = 1e-13 * matrix.norm_inf();
        let mut lu = matrix.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            for i in k + 1..n {
                if lu[(i, k)].abs() > lu[(piv, k)].abs() {
                    piv = i;
                }
            }
            let magnitude = lu[(piv, k)].abs();
            if magnitude <= threshold || magnitude == 0.0 {
                return Err(Error::Singular {
                    pivot: k,
                    magnitude,
                });
            }
            if piv != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                if f == 0.0 {
                    continue;
                }
                lu[(i, k)] = f;
                let (upper, lower) = lu.data.split_at_mut(i * n);
                let src = &upper[k * n + k + 1..(k + 1) * n];
                let dst = &mut lower[k + 1..n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= f * s;
                }
            }
        }
        Ok(LuFactors { lu, perm })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        check_len(n, rhs.len())?;
        let mut x: Vec<f64> = self.perm.iter().map(|&i| rhs[i]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: f64 = dot(&row[..i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: f64 = dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / row[i];
        }
        Ok(x)
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve_dense(matrix: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    LuFactors::new(matrix)?.solve(rhs)
}

/// Householder QR of a tall matrix, used for least-squares solves.
#[derive(Clone, Debug)]
pub struct QrFactors {
    rows: usize,
    cols: usize,
    /// Householder vectors below the diagonal, R on and above it.
    qr: DenseMatrix,
    tau: Vec<f64>,
}

impl QrFactors {
    pub fn new(matrix: &DenseMatrix) -> Result<Self> {
        let (m, n) = (matrix.rows(), matrix.cols());
        if m < n {
            return Err(validation(format!(
                "least squares needs at least as many rows as columns ({m} < {n})"
            )));
        }
        // Work column-major: each Householder step touches whole columns.
        let mut cols: Vec<Vec<f64>> = (0..n).map(|j| matrix.column(j)).collect();
        let mut tau = vec![0.0; n];
        for k in 0..n {
            let norm = cols[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Singular {
                    pivot: k,
                    magnitude: 0.0,
                });
            }
            let alpha = if cols[k][k] > 0.0 { -norm } else { norm };
            let v0 = cols[k][k] - alpha;
            // v = (1, x_{k+1}/v0, ...), H = I - tau v v^T
            for x in cols[k][k + 1..].iter_mut() {
                *x /= v0;
            }
            tau[k] = -v0 / alpha;
            cols[k][k] = alpha;
            let (head, tail) = cols.split_at_mut(k + 1);
            let vk = &head[k];
            for cj in tail.iter_mut() {
                let s = cj[k] + dot(&vk[k + 1..], &cj[k + 1..]);
                let f = tau[k] * s;
                cj[k] -= f;
                for (c, v) in cj[k + 1..].iter_mut().zip(&vk[k + 1..]) {
                    *c -= f * v;
                }
            }
        }
        let qr = DenseMatrix::from_fn(m, n, |i, j| cols[j][i]);
        Ok(QrFactors {
            rows: m,
            cols: n,
            qr,
            tau,
        })
    }

    /// Minimiser of ‖A x − b‖₂ together with the residual vector A x − b.
    pub fn least_squares(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows, rhs.len())?;
        let (m, n) = (self.rows, self.cols);
        let mut y = rhs.to_vec();
        for k in 0..n {
            let mut s = y[k];
            for i in k + 1..m {
                s += self.qr[(i, k)] * y[i];
            }
            let f = self.tau[k] * s;
            y[k] -= f;
            for i in k + 1..m {
                y[i] -= f * self.qr[(i, k)];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.qr[(i, j)] * x[j];
            }
            let d = self.qr[(i, i)];
            if d == 0.0 {
                return Err(Error::Singular {
                    pivot: i,
                    magnitude: 0.0,
                });
            }
            x[i] = s / d;
        }
        Ok(x)
    }

    /// Ratio of largest to smallest |R_ii|, a cheap conditioning indicator.
    pub fn diagonal_ratio(&self) -> f64 {
        let d: Vec<f64> = (0..self.cols).map(|i| self.qr[(i, i)].abs()).collect();
        let hi = d.iter().cloned().fold(0.0, f64::max);
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    }
}

/// Real Fourier coefficients of samples on a uniform periodic grid:
/// `f(θ) = mean + Σ_k cos[k]·cos kθ + sin[k]·sin kθ`, k = 1..=N/2.
///
/// Index 0 of `cos` and `sin` is unused and always zero; the Nyquist sine
/// coefficient is zero because sin(Nθ/2) vanishes on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierCoefficients {
    pub mean: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl FourierCoefficients {
    pub fn len(&self) -> usize {
        2 * (self.cos.len() - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.cos.len() <= 1
    }

    pub fn max_mode(&self) -> usize {
        self.cos.len() - 1
    }
}

fn check_grid(n: usize) -> Result<()> {
    if n < 8 || n % 2 != 0 {
        return Err(validation(format!(
            "periodic grids need an even number of points, at least 8 (got {n})"
        )));
    }
    Ok(())
}

fn twiddles(n: usize) -> (Vec<f64>, Vec<f64>) {
    (0..n)
        .map(|m| {
            let a = 2.0 * PI * m as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip()
}

/// Direct O(N²) real DFT.
pub fn dft_real(values: &[f64]) -> Result<FourierCoefficients> {
    let n = values.len();
    check_grid(n)?;
    let (c, s) = twiddles(n);
    let half = n / 2;
    let mut cos = vec![0.0; half + 1];
    let mut sin = vec![0.0; half + 1];
    let mean = values.iter().sum::<f64>() / n as f64;
    for k in 1..=half {
        let (mut ac, mut as_) = (0.0, 0.0);
        for (j, &f) in values.iter().enumerate() {
            let m = (k * j) % n;
            ac += f * c[m];
            as_ += f * s[m];
        }
        let scale = if k == half { 1.0 } else { 2.0 } / n as f64;
        cos[k] = ac * scale;
        sin[k] = if k == half { 0.0 } else { as_ * scale };
    }
    Ok(FourierCoefficients { mean, cos, sin })
}

/// Inverse of [`dft_real`].
pub fn idft_real(coeffs: &FourierCoefficients) -> Result<Vec<f64>> {
    let n = coeffs.len();
    check_grid(n)?;
    let (c, s) = twiddles(n);
    Ok((0..n)
        .map(|j| {
            let mut f = coeffs.mean;
            for k in 1..=n / 2 {
                let m = (k * j) % n;
                f += coeffs.cos[k] * c[m] + coeffs.sin[k] * s[m];
            }
            f
        })
        .collect())
}

/// Result of an ordinary least-squares line fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    check_len(xs.len(), ys.len())?;
    if xs.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            available: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let spread = xs.iter().fold(0.0_f64, |m, x| m.max((x - mx).abs()));
    if sxx == 0.0 || spread <= 1e-14 * mx.abs().max(1e-300) {
        return Err(validation("degenerate abscissae: all x values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(LineFit {
        slope,
        intercept,
        rms,
    })
}
