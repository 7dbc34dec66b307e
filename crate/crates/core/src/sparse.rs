//! Compressed sparse row matrices, Jacobi-preconditioned conjugate gradients
//! and a banded Cholesky factorization used as the direct fallback.

use crate::error::{Error, Result};

/// Square CSR matrix with a fixed sparsity pattern and sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the given per-row column lists (duplicates allowed).
    pub fn from_pattern(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for cols in &mut rows {
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]].binary_search(&j).ok().map(|p| start + p)
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.position(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.values[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).0.iter().map(move |&j| i.abs_diff(j))).max().unwrap_or(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T|` over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Returns `D A D` for a diagonal `D` given by `scale`.
    pub fn scaled_symmetric(&self, scale: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[p] *= scale[i] * scale[self.col_idx[p]];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcgStatus {
    Converged,
    /// The best residual failed to halve over a full stagnation window.
    Stagnated,
    MaxIterations,
    /// `p^T A p <= 0` was encountered.
    NegativeCurvature,
}

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub status: PcgStatus,
}

/// Conjugate gradients with Jacobi preconditioning, started from zero.
///
/// Stops when `||b - A x|| <= tol ||b||`. With `stagnation_window = Some(w)`
/// the iteration gives up once `w` consecutive iterations fail to halve the
/// best residual seen at the start of the window.
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize, stagnation_window: Option<usize>) -> PcgResult {
    let n = a.n();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return PcgResult { x, iterations: 0, relative_residual: 0.0, status: PcgStatus::Converged };
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    let mut window_best = 1.0;
    let mut best = 1.0;
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return PcgResult { x, iterations: it, relative_residual: rel, status: PcgStatus::NegativeCurvature };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / bnorm;
        best = f64::min(best, rel);
        if rel <= tol {
            return PcgResult { x, iterations: it, relative_residual: rel, status: PcgStatus::Converged };
        }
        if let Some(w) = stagnation_window {
            if it % w == 0 {
                if best > 0.5 * window_best {
                    return PcgResult { x, iterations: it, relative_residual: rel, status: PcgStatus::Stagnated };
                }
                window_best = best;
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    PcgResult { x, iterations: max_iter, relative_residual: rel, status: PcgStatus::MaxIterations }
}

/// Cholesky factor of a symmetric positive definite banded matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i][i - bw ..= i]
    lower: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n();
        let bw = a.bandwidth();
        let stride = bw + 1;
        let mut lower = vec![0.0; n * stride];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    lower[i * stride + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let first = i.saturating_sub(bw);
            for j in first..=i {
                let kstart = first.max(j.saturating_sub(bw));
                let mut s = lower[i * stride + (j + bw - i)];
                for k in kstart..j {
                    s -= lower[i * stride + (k + bw - i)] * lower[j * stride + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::LinearSolver(format!(
                            "matrix not positive definite (pivot {s:e} at row {i})"
                        )));
                    }
                    lower[i * stride + bw] = s.sqrt();
                } else {
                    lower[i * stride + (j + bw - i)] = s / lower[j * stride + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, lower })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, stride) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.lower[i * stride + (k + bw - i)] * y[k];
            }
            y[i] = s / self.lower[i * stride + bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= self.lower[k * stride + (i + bw - k)] * y[k];
            }
            y[i] = s / self.lower[i * stride + bw];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let pattern = (0..n).map(|i| (i.saturating_sub(1)..(i + 2).min(n)).collect()).collect();
        let mut a = CsrMatrix::from_pattern(pattern);
        for i in 0..n {
            a.add(i, i, 2.0 + 0.01 * i as f64);
            if i > 0 {
                a.add(i, i - 1, -1.0);
                a.add(i - 1, i, -1.0);
            }
        }
        a
    }

    #[test]
    fn pcg_and_cholesky_agree() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let cg = pcg(&a, &b, 1e-12, 500, None);
        assert_eq!(cg.status, PcgStatus::Converged);
        let chol = BandedCholesky::factor(&a).unwrap().solve(&b);
        for (x, y) in cg.x.iter().zip(&chol) {
            assert!((x - y).abs() < 1e-9);
        }
        let r: Vec<f64> = a.mul(&chol).iter().zip(&b).map(|(ax, b)| ax - b).collect();
        assert!(norm(&r) < 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplace_1d(5);
        let res = pcg(&a, &[0.0; 5], 1e-10, 10, None);
        assert_eq!(res.iterations, 0);
        assert!(res.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indefinite_detected() {
        let mut a = laplace_1d(4);
        a.add(2, 2, -10.0);
        let res = pcg(&a, &[1.0, 1.0, 1.0, 1.0], 1e-12, 50, None);
        assert_eq!(res.status, PcgStatus::NegativeCurvature);
        assert!(BandedCholesky::factor(&a).is_err());
    }

    #[test]
    fn symmetry_helpers() {
        let mut a = laplace_1d(4);
        assert_eq!(a.asymmetry(), 0.0);
        assert_eq!(a.bandwidth(), 1);
        a.add(0, 1, 0.5);
        assert_eq!(a.asymmetry(), 0.5);
    }
}
