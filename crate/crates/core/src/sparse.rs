//! Compressed sparse row matrices and a conjugate-gradient solver.

use rayon::prelude::*;

/// Rows at or above this count use parallel matrix-vector products.
const PAR_ROWS: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicate columns are
    /// summed and columns sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *val.last_mut().expect("entry exists") += v;
                } else {
                    col.push(c);
                    val.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col.len());
        }
        Self { n, row_ptr, col, val }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col[a..b].iter().zip(&self.val[a..b]).map(|(&c, &v)| v * x[c]).sum()
    }

    /// `y = A x`; each row is summed in a fixed order so results do not
    /// depend on the thread count.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = self.row_dot(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, x);
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
                self.col[a..b].iter().zip(&self.val[a..b]).find(|(&c, _)| c == i).map_or(0.0, |(_, &v)| v)
            })
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).all(|k| {
                let j = self.col[k];
                let (a, b) = (self.row_ptr[j], self.row_ptr[j + 1]);
                let t = self.col[a..b].iter().position(|&c| c == i).map_or(0.0, |p| self.val[a + p]);
                (t - self.val[k]).abs() <= tol * self.val[k].abs().max(1.0)
            })
        })
    }

    /// Upper bound on the spectral norm via the maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.val[self.row_ptr[i]..self.row_ptr[i + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Removes the component along the constant vector.
pub fn deflate_constant(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// (semi)definite system, starting from the contents of `x`. With
/// `deflate` the iteration runs in the complement of the constants, which
/// makes a singular Neumann operator solvable for mean-zero right sides.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
    deflate: bool,
) -> CgOutcome {
    let n = a.n;
    let diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut rhs = b.to_vec();
    if deflate {
        deflate_constant(&mut rhs);
        deflate_constant(x);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome { iterations: 0, residual: 0.0, converged: true };
    }
    let mut ax = vec![0.0; n];
    a.matvec(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r * d).collect();
        if deflate {
            deflate_constant(&mut z);
        }
        z
    };
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm(&r);
    for it in 0..max_iter {
        if res <= rel_tol * bnorm {
            return CgOutcome { iterations: it, residual: res / bnorm, converged: true };
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        if deflate && it % 50 == 49 {
            deflate_constant(&mut r);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        res = norm(&r);
    }
    // true residual
    a.matvec(x, &mut ax);
    let true_res = norm(&rhs.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()) / bnorm;
    CgOutcome { iterations: max_iter, residual: true_res, converged: true_res <= rel_tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                if i > 0 {
                    r.push((i - 1, -1.0));
                    r.push((i, 1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                    r.push((i, 1.0));
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn assembly_sums_duplicates() {
        let a = path_laplacian(4);
        assert_eq!(a.diagonal(), vec![1.0, 2.0, 2.0, 1.0]);
        assert!(a.is_symmetric(0.0));
        assert_eq!(a.nnz(), 10);
        assert_eq!(a.inf_norm(), 4.0);
    }

    #[test]
    fn cg_solves_spd_system() {
        let mut rows: Vec<Vec<(usize, f64)>> = path_laplacian(50).row_ptr.windows(2).map(|_| Vec::new()).collect();
        let l = path_laplacian(50);
        for i in 0..50 {
            for k in l.row_ptr[i]..l.row_ptr[i + 1] {
                rows[i].push((l.col[k], l.val[k]));
            }
            rows[i].push((i, 0.5));
        }
        let a = CsrMatrix::from_rows(rows);
        let truth: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 50];
        a.matvec(&truth, &mut b);
        let mut x = vec![0.0; 50];
        let out = conjugate_gradient(&a, &b, &mut x, 1e-13, 500, false);
        assert!(out.converged);
        for (u, v) in x.iter().zip(&truth) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_with_deflation_on_singular_operator() {
        let a = path_laplacian(40);
        let mut truth: Vec<f64> = (0..40).map(|i| (i as f64).powi(2) / 100.0).collect();
        deflate_constant(&mut truth);
        let mut b = vec![0.0; 40];
        a.matvec(&truth, &mut b);
        let mut x = vec![1.0; 40];
        let out = conjugate_gradient(&a, &b, &mut x, 1e-12, 500, true);
        assert!(out.converged);
        for (u, v) in x.iter().zip(&truth) {
            assert!((u - v).abs() < 1e-8);
        }
    }
}
