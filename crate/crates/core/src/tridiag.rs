//! Symmetric tridiagonal matrices: Sturm-sequence bisection, inverse
//! iteration, and a bordered solver for [[A, B], [C, D]] with A tridiagonal.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// off[i] couples rows i and i + 1.
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1));
        Self { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
        y
    }

    /// Gershgorin interval containing the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below x (negative LDLᵀ pivots).
    pub fn count_below(&self, x: f64) -> usize {
        let (lo, hi) = self.gershgorin();
        let tiny = f64::MIN_POSITIVE.sqrt() * (hi - lo).abs().max(1.0);
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..self.len() {
            let b2 = if i > 0 { self.off[i - 1] * self.off[i - 1] } else { 0.0 };
            d = self.diag[i] - x - if i > 0 { b2 / d } else { 0.0 };
            if d == 0.0 {
                d = -tiny;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Eigenvalue number `index` (0-based, ascending) by bisection.
    pub fn eigenvalue(&self, index: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1e-300);
        let tol = 4.0 * f64::EPSILON * scale;
        lo -= tol;
        hi += tol;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= tol.max(2.0 * f64::EPSILON * mid.abs()) {
                break;
            }
            if self.count_below(mid) > index {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// The k smallest eigenvalues (clipped at the dimension).
    pub fn lowest(&self, k: usize) -> Vec<f64> {
        (0..k.min(self.len())).map(|i| self.eigenvalue(i)).collect()
    }

    /// Unit eigenvector for an eigenvalue estimate, by inverse iteration.
    pub fn eigenvector(&self, lambda: f64) -> Result<Vec<f64>> {
        let n = self.len();
        let (lo, hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        let shift = lambda - 1e-10 * scale;
        let shifted = SymTridiag::new(self.diag.iter().map(|d| d - shift).collect(), self.off.clone());
        let solver = Bordered::tridiagonal(&shifted);
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
        normalize(&mut x);
        for _ in 0..4 {
            let (mut y, _) = solver.solve(&x, &[])?;
            normalize(&mut y);
            x = y;
        }
        Ok(x)
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
}

/// Linear system [[A, B], [C, D]] with A (n×n) tridiagonal, B (n×m),
/// C (m×n) and D (m×m) dense, m small.
///
/// Band columns are eliminated with adjacent-row partial pivoting, which keeps
/// U within two superdiagonals; the last band column and the border form a
/// dense (m+1) block solved with full pivoting. This works when A is singular
/// with nullity one, as long as the bordered matrix is not.
#[derive(Debug, Clone)]
pub struct Bordered {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    bcols: Vec<Vec<f64>>,
    brows: Vec<Vec<f64>>,
    corner: DMatrix<f64>,
}

impl Bordered {
    pub fn tridiagonal(a: &SymTridiag) -> Self {
        Self::general(a.off.clone(), a.diag.clone(), a.off.clone(), Vec::new(), Vec::new(), DMatrix::zeros(0, 0))
    }

    pub fn symmetric(a: &SymTridiag, bcols: Vec<Vec<f64>>, brows: Vec<Vec<f64>>, corner: DMatrix<f64>) -> Self {
        Self::general(a.off.clone(), a.diag.clone(), a.off.clone(), bcols, brows, corner)
    }

    pub fn general(
        lower: Vec<f64>,
        diag: Vec<f64>,
        upper: Vec<f64>,
        bcols: Vec<Vec<f64>>,
        brows: Vec<Vec<f64>>,
        corner: DMatrix<f64>,
    ) -> Self {
        let n = diag.len();
        let m = bcols.len();
        assert!(n >= 1);
        assert_eq!(brows.len(), m);
        assert!(bcols.iter().chain(&brows).all(|v| v.len() == n));
        assert_eq!((corner.nrows(), corner.ncols()), (m, m));
        Self { lower, diag, upper, bcols, brows, corner }
    }

    /// Solves for (x, y) given right-hand sides (f, g).
    pub fn solve(&self, f: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.diag.len();
        let m = self.bcols.len();
        assert_eq!(f.len(), n);
        assert_eq!(g.len(), m);

        #[derive(Clone)]
        struct Row {
            c: [f64; 3],
            bord: Vec<f64>,
            rhs: f64,
        }
        let band_row = |i: usize| Row {
            c: [
                self.diag[i],
                if i + 1 < n { self.upper[i] } else { 0.0 },
                0.0,
            ],
            bord: self.bcols.iter().map(|col| col[i]).collect(),
            rhs: f[i],
        };
        let mut brows: Vec<Vec<f64>> = self.brows.clone();
        let mut bcorner = self.corner.clone();
        let mut grhs = g.to_vec();
        let mut u_rows: Vec<Row> = Vec::with_capacity(n);
        let mut cur = band_row(0);
        for j in 0..n.saturating_sub(1) {
            // Row j+1 in the coordinates starting at column j.
            let nb = band_row(j + 1);
            let mut next = Row {
                c: [self.lower[j], nb.c[0], nb.c[1]],
                bord: nb.bord,
                rhs: nb.rhs,
            };
            if next.c[0].abs() > cur.c[0].abs() {
                std::mem::swap(&mut cur, &mut next);
            }
            let p = cur.c[0];
            if p == 0.0 {
                return Err(Error::Analysis("bordered solve hit a zero pivot in the band".into()));
            }
            let l = next.c[0] / p;
            let shifted = Row {
                c: [next.c[1] - l * cur.c[1], next.c[2] - l * cur.c[2], 0.0],
                bord: next.bord.iter().zip(&cur.bord).map(|(a, b)| a - l * b).collect(),
                rhs: next.rhs - l * cur.rhs,
            };
            for r in 0..m {
                let lr = brows[r][j] / p;
                if lr != 0.0 {
                    brows[r][j + 1] -= lr * cur.c[1];
                    if j + 2 < n {
                        brows[r][j + 2] -= lr * cur.c[2];
                    }
                    for c in 0..m {
                        bcorner[(r, c)] -= lr * cur.bord[c];
                    }
                    grhs[r] -= lr * cur.rhs;
                }
            }
            u_rows.push(cur);
            cur = shifted;
        }
        // Dense block: unknowns (x_{n−1}, y).
        let mut block = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = nalgebra::DVector::zeros(m + 1);
        block[(0, 0)] = cur.c[0];
        for c in 0..m {
            block[(0, c + 1)] = cur.bord[c];
        }
        rhs[0] = cur.rhs;
        for r in 0..m {
            block[(r + 1, 0)] = brows[r][n - 1];
            for c in 0..m {
                block[(r + 1, c + 1)] = bcorner[(r, c)];
            }
            rhs[r + 1] = grhs[r];
        }
        let lu = block.clone().full_piv_lu();
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Analysis("bordered system is singular".into()))?;
        if !sol.iter().all(|v| v.is_finite()) {
            return Err(Error::Analysis("bordered system is singular".into()));
        }
        let mut x = vec![0.0; n];
        x[n - 1] = sol[0];
        let y: Vec<f64> = (0..m).map(|c| sol[c + 1]).collect();
        for j in (0..n.saturating_sub(1)).rev() {
            let row = &u_rows[j];
            let mut acc = row.rhs - row.c[1] * x[j + 1];
            if j + 2 < n {
                acc -= row.c[2] * x[j + 2];
            }
            for c in 0..m {
                acc -= row.bord[c] * y[c];
            }
            x[j] = acc / row.c[0];
        }
        Ok((x, y))
    }
}
