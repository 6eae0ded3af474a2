//! Counting low eigenvalues of the glued operator and the min-max machinery
//! behind the density law 2(b^{q−1} + b^q)√s + O(1).
//!
//! Eigenvalue windows are (threshold_zero, π²s/T²]. Everything downstream of
//! an [`EigenList`] is a pure read of that list, so counts for different s
//! can never disagree with each other.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glued_model::{eigen_below, eigen_lowest, EigenList, GluedOperator};
use crate::gluing_solver::GluingProblem;
use crate::output::{write_bytes_atomic, write_csv_atomic};
use crate::quadrature::{cumulative, dot_h, ls_slope, norm_h};
use crate::spectral_model::{CrossSectionSpectrum, DegreeTag};
use crate::tridiag::SymTridiag;

/// Eigenvalues at or below this are treated as kernel.
pub const THRESHOLD_ZERO: f64 = 1e-10;

/// Default s grid, with √s kept away from integers.
pub const DEFAULT_S: [f64; 4] = [4.41, 9.61, 16.81, 25.21];

/// Upper end π²s/T² of the counting window.
pub fn window(t: f64, s: f64) -> f64 {
    PI * PI * s / (t * t)
}

/// √s within 1e-9 of an integer: the closed window end sits on a benchmark eigenvalue.
pub fn is_boundary_s(s: f64) -> bool {
    let r = s.sqrt();
    (r - r.round()).abs() < 1e-9
}

/// Number of eigenvalues in (threshold_zero, π²s/T²], with multiplicity.
pub fn count_low_eigenvalues(list: &EigenList, t: f64, s: f64) -> Result<usize> {
    let top = window(t, s);
    if top > list.covered {
        let largest = list.entries.last().map_or(0.0, |e| e.lambda);
        return Err(Error::InsufficientEigenvalues { window: top, largest });
    }
    Ok(list.entries.iter().filter(|e| e.lambda > THRESHOLD_ZERO && e.lambda <= top).count())
}

/// Window counts split by degree tag: (beta, alpha), i.e. the exact and
/// coexact branches.
pub fn coexact_split_counts(list: &EigenList, t: f64, s: f64) -> Result<(usize, usize)> {
    let total = count_low_eigenvalues(list, t, s)?;
    let top = window(t, s);
    let beta = list
        .entries
        .iter()
        .filter(|e| e.lambda > THRESHOLD_ZERO && e.lambda <= top && e.degree_tag == DegreeTag::Beta)
        .count();
    Ok((beta, total - beta))
}

/// Eigenvalues of the glued operator covering the window for s_max.
pub fn window_eigenvalues(g: &GluedOperator, s_max: f64) -> EigenList {
    eigen_below(g, window(g.t, s_max) * (1.0 + 1e-6))
}

/// Exact count on the product S¹_{2T} × X: #{(kπ/T)² + ν ∈ (0, π²s/T²]} over
/// k ∈ ℤ and the degree q and q−1 lists, with multiplicity.
pub fn product_benchmark(spec: &CrossSectionSpectrum, q: i64, t: f64, s: f64) -> usize {
    let mut count = 0;
    for d in [q, q - 1] {
        if d < 0 {
            continue;
        }
        for &(nu, mult) in spec.degree(d as usize) {
            // k² ≤ s − νT²/π², with a relative guard so s = 4 keeps k = ±2.
            let x = s - nu * t * t / (PI * PI);
            if x < 0.0 {
                continue;
            }
            let kmax = (x.sqrt() * (1.0 + 1e-12)).floor() as usize;
            let ks = 2 * kmax + usize::from(nu > 0.0);
            count += ks * mult;
        }
    }
    count
}

/// One row of a density sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRow {
    pub t: f64,
    pub s: f64,
    pub count: usize,
    pub beta: usize,
    pub alpha: usize,
    pub benchmark: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub q: i64,
    pub b_prev: usize,
    pub b_q: usize,
    pub ts: Vec<f64>,
    pub ss: Vec<f64>,
    /// Row-major over (T, s).
    pub rows: Vec<DensityRow>,
}

impl DensityReport {
    pub fn b(&self) -> usize {
        self.b_prev + self.b_q
    }

    pub fn prediction(&self, s: f64) -> f64 {
        2.0 * self.b() as f64 * s.sqrt()
    }

    pub fn residual(&self, row: &DensityRow) -> f64 {
        row.count as f64 - self.prediction(row.s)
    }

    /// Residuals of the (beta, alpha) branches against 2b^{q−1}√s and 2b^q√s.
    pub fn branch_residuals(&self, row: &DensityRow) -> (f64, f64) {
        let r = row.s.sqrt();
        (row.beta as f64 - 2.0 * self.b_prev as f64 * r, row.alpha as f64 - 2.0 * self.b_q as f64 * r)
    }

    /// max |Λ − 2B√s| over all rows.
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| self.residual(r).abs()).fold(0.0, f64::max)
    }

    pub fn max_branch_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let (a, b) = self.branch_residuals(r);
                a.abs().max(b.abs())
            })
            .fold(0.0, f64::max)
    }

    /// Checks monotonicity in s and |Λ − 2B√s| ≤ 2B + slack everywhere.
    pub fn check_uniform(&self, slack: f64) -> Result<f64> {
        for t in &self.ts {
            let counts: Vec<usize> = self.rows.iter().filter(|r| r.t == *t).map(|r| r.count).collect();
            if counts.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Analysis(format!("counts not monotone in s at T = {t}: {counts:?}")));
            }
        }
        let r0 = 2.0 * self.b() as f64 + slack;
        let worst = self.max_residual().max(self.max_branch_residual());
        if worst > r0 {
            return Err(Error::Analysis(format!("density residual {worst} exceeds R0 = {r0}")));
        }
        Ok(worst)
    }

    /// CSV columns (q, T, s, count, prediction, residual, branch).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut rows = Vec::new();
        for r in &self.rows {
            let (rb, ra) = self.branch_residuals(r);
            let sq = r.s.sqrt();
            for (branch, count, pred, res) in [
                ("total", r.count, self.prediction(r.s), self.residual(r)),
                ("exact", r.beta, 2.0 * self.b_prev as f64 * sq, rb),
                ("coexact", r.alpha, 2.0 * self.b_q as f64 * sq, ra),
            ] {
                rows.push(vec![
                    self.q.to_string(),
                    r.t.to_string(),
                    r.s.to_string(),
                    count.to_string(),
                    pred.to_string(),
                    res.to_string(),
                    branch.to_string(),
                ]);
            }
        }
        write_csv_atomic(path, &["q", "T", "s", "count", "prediction", "residual", "branch"], &rows)
    }

    /// One two-column `s count` file per T, named density_q{q}_T{T}.dat.
    pub fn write_gnuplot(&self, dir: impl AsRef<Path>) -> Result<()> {
        for t in &self.ts {
            let mut text = format!("# q = {}, T = {t}\n", self.q);
            for r in self.rows.iter().filter(|r| r.t == *t) {
                text.push_str(&format!("{} {}\n", r.s, r.count));
            }
            write_bytes_atomic(dir.as_ref().join(format!("density_q{}_T{t}.dat", self.q)), text.as_bytes())?;
        }
        Ok(())
    }
}

/// Builds the glued operator for each T and counts every window from one
/// eigenvalue list per T.
pub fn density_sweep<F>(build: F, q: i64, ss: &[f64], ts: &[f64]) -> Result<DensityReport>
where
    F: Fn(f64) -> Result<GluedOperator> + Sync,
{
    if ss.is_empty() || ts.is_empty() {
        return Err(Error::InvalidArgument("density sweep needs at least one s and one T".into()));
    }
    let s_max = ss.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let per_t: Vec<Result<(Vec<DensityRow>, usize, usize)>> = ts
        .par_iter()
        .map(|&t| {
            let g = build(t)?;
            if g.q != q {
                return Err(Error::InvalidArgument(format!("builder returned degree {} for q = {q}", g.q)));
            }
            let spec = &g.blocks[0].spectrum;
            let list = window_eigenvalues(&g, s_max);
            let mut rows = Vec::with_capacity(ss.len());
            for &s in ss {
                let count = count_low_eigenvalues(&list, t, s)?;
                let (beta, alpha) = coexact_split_counts(&list, t, s)?;
                rows.push(DensityRow { t, s, count, beta, alpha, benchmark: product_benchmark(spec, q, t, s) });
            }
            Ok((rows, spec.betti(q - 1), spec.betti(q)))
        })
        .collect();
    let mut rows = Vec::new();
    let mut betti = (0, 0);
    for r in per_t {
        let (rs, bp, bq) = r?;
        rows.extend(rs);
        betti = (bp, bq);
    }
    Ok(DensityReport { q, b_prev: betti.0, b_q: betti.1, ts: ts.to_vec(), ss: ss.to_vec(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSpaceKind {
    Vn,
    E,
    VnPrime,
    Wn,
}

/// Finite-dimensional model of a space of f(t) = Σ a_k e^{ikπt} on [−1, 1].
///
/// The constraints are real, so a real orthonormal nullspace basis spans the
/// complex space as well.
#[derive(Debug, Clone)]
pub struct TestSpace {
    pub kind: TestSpaceKind,
    pub n: usize,
    /// Frequencies of the ambient coordinates.
    pub ks: Vec<i64>,
    pub constraints: DMatrix<f64>,
    pub rank: usize,
    /// Columns are an orthonormal basis of coefficient vectors.
    pub basis: DMatrix<f64>,
}

impl TestSpace {
    /// Vn and Wn live on 1 ≤ |k| ≤ n; E and V′n are truncated at |k| ≤ k_max.
    pub fn new(kind: TestSpaceKind, n: usize, k_max: usize) -> Result<Self> {
        let (lo, top) = match kind {
            TestSpaceKind::Vn | TestSpaceKind::Wn => {
                if n < 2 {
                    return Err(Error::InvalidArgument(format!("V_n needs n ≥ 2, got {n}")));
                }
                (1, n as i64)
            }
            TestSpaceKind::E | TestSpaceKind::VnPrime => {
                if k_max < n + 3 {
                    return Err(Error::InvalidArgument(format!("truncation {k_max} too small for n = {n}")));
                }
                (0, k_max as i64)
            }
        };
        let ks: Vec<i64> = (-top..=top).filter(|k| k.abs() >= lo).collect();
        let sign = |k: i64| if k % 2 == 0 { 1.0 } else { -1.0 };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let row = |f: &dyn Fn(i64) -> f64| ks.iter().map(|&k| f(k)).collect::<Vec<f64>>();
        match kind {
            TestSpaceKind::Vn | TestSpaceKind::Wn => {
                rows.push(row(&|k| sign(k)));
                rows.push(row(&|k| sign(k) * k as f64));
                if kind == TestSpaceKind::Wn {
                    rows.push(row(&|k| sign(k) * (k * k) as f64));
                }
            }
            TestSpaceKind::E | TestSpaceKind::VnPrime => {
                rows.push(row(&|k| f64::from(u8::from(k == 0))));
                rows.push(row(&|k| if k == 0 { 0.0 } else { sign(k) / k as f64 }));
                rows.push(row(&|k| if k == 0 { 0.0 } else { sign(k) / (k * k) as f64 }));
                if kind == TestSpaceKind::VnPrime {
                    for j in 1..=n as i64 {
                        rows.push(row(&|k| f64::from(u8::from(k == j))));
                        rows.push(row(&|k| f64::from(u8::from(k == -j))));
                    }
                }
            }
        }
        let m = ks.len();
        let constraints = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        let gram = constraints.transpose() * &constraints;
        let eig = SymmetricEigen::new(gram);
        let top_ev = eig.eigenvalues.amax().max(1.0);
        let null: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] <= 1e-12 * top_ev).collect();
        let rank = m - null.len();
        let basis = DMatrix::from_fn(m, null.len(), |i, j| eig.eigenvectors[(i, null[j])]);
        Ok(Self { kind, n, ks, constraints, rank, basis })
    }

    pub fn dim(&self) -> usize {
        self.ks.len() - self.rank
    }

    /// Codimension in the truncated ambient space.
    pub fn codim(&self) -> usize {
        self.rank
    }

    /// Largest constraint violation of a coefficient vector over `ks`.
    pub fn violation(&self, a: &[Complex64]) -> f64 {
        (0..self.constraints.nrows())
            .map(|i| {
                let v: Complex64 = (0..self.ks.len()).map(|j| a[j] * self.constraints[(i, j)]).sum();
                v.norm()
            })
            .fold(0.0, f64::max)
    }

    /// Maps (k, a_k) pairs onto `ks`; frequencies outside the ambient space
    /// make the function invalid.
    pub fn coefficients(&self, terms: &[(i64, Complex64)]) -> Result<Vec<Complex64>> {
        let mut a = vec![Complex64::new(0.0, 0.0); self.ks.len()];
        for &(k, c) in terms {
            match self.ks.iter().position(|&x| x == k) {
                Some(j) => a[j] += c,
                None if c.norm() == 0.0 => {}
                None => {
                    return Err(Error::InvalidTestFunction(format!("frequency k = {k} is outside the space")));
                }
            }
        }
        let scale = a.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1e-300);
        let v = self.violation(&a);
        if v > 1e-12 * scale {
            return Err(Error::InvalidTestFunction(format!("constraint violated by {v:.3e}")));
        }
        Ok(a)
    }

    /// ‖f″‖/‖f‖ on [−1, 1] by Parseval, for a member of the space.
    pub fn rayleigh_second_derivative(&self, terms: &[(i64, Complex64)]) -> Result<f64> {
        let a = self.coefficients(terms)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, &k) in self.ks.iter().enumerate() {
            let w = (k as f64 * PI).powi(2);
            num += a[j].norm_sqr() * w * w;
            den += a[j].norm_sqr();
        }
        if den == 0.0 {
            return Err(Error::InvalidTestFunction("zero function".into()));
        }
        Ok((num / den).sqrt())
    }

    /// sup ‖f″‖/‖f‖ over the space, from the compressed diagonal (kπ)⁴.
    pub fn max_rayleigh(&self) -> f64 {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.ks.len(),
            self.ks.iter().map(|&k| (k as f64 * PI).powi(4)),
        ));
        let c = self.basis.transpose() * d * &self.basis;
        SymmetricEigen::new(c).eigenvalues.max().sqrt()
    }

    /// Real functions spanning the space: Re and Im of each basis function.
    pub fn real_functions(&self) -> Vec<impl Fn(f64) -> f64 + '_> {
        let mut out = Vec::with_capacity(2 * self.basis.ncols());
        for b in 0..self.basis.ncols() {
            for imag in [false, true] {
                out.push(move |t: f64| {
                    self.ks
                        .iter()
                        .enumerate()
                        .map(|(j, &k)| {
                            let x = k as f64 * PI * t;
                            self.basis[(j, b)] * if imag { x.sin() } else { x.cos() }
                        })
                        .sum::<f64>()
                });
            }
        }
        out
    }
}

/// f(t) = Σ a_k e^{ikπt} and its derivative.
pub fn fourier_eval(terms: &[(i64, Complex64)], t: f64) -> (Complex64, Complex64) {
    let mut f = Complex64::new(0.0, 0.0);
    let mut df = Complex64::new(0.0, 0.0);
    for &(k, a) in terms {
        let w = k as f64 * PI;
        let e = Complex64::from_polar(1.0, w * t);
        f += a * e;
        df += a * e * Complex64::new(0.0, w);
    }
    (f, df)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxBound {
    pub n: usize,
    pub tau: f64,
    pub trial_dim: usize,
    /// sup ‖Mη‖/‖η‖ over the trial space.
    pub rayleigh_max: f64,
    /// (nπ)²/T².
    pub target: f64,
    pub kernel_dim: usize,
    /// Eigenvalues in (threshold_zero, rayleigh_max].
    pub count_below_rayleigh: usize,
    /// Eigenvalues in (threshold_zero, (1 + eps) target].
    pub count_below_target: usize,
    pub eps: f64,
}

impl MinMaxBound {
    pub fn required(&self) -> usize {
        self.trial_dim.saturating_sub(self.kernel_dim)
    }

    /// Whether the trial space alone certifies the count below (1 + eps) target.
    pub fn certifies_target(&self) -> bool {
        self.rayleigh_max <= (1.0 + self.eps) * self.target
    }
}

/// Min-max upper bound from the rescaled V_n space on every zero mode,
/// supported in |x| ≤ (1 − τ)T.
pub fn minmax_upper_from_vn(g: &GluedOperator, n: usize, tau: f64, eps: f64) -> Result<MinMaxBound> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("τ must lie in (0, 1), got {tau}")));
    }
    let space = TestSpace::new(TestSpaceKind::Vn, n, n)?;
    let width = (1.0 - tau) * g.t;
    let h = g.h;
    let nx = g.n();
    // Orthonormal real trial vectors on the grid.
    let mut q: Vec<Vec<f64>> = Vec::new();
    for f in space.real_functions() {
        let mut v: Vec<f64> = (0..nx)
            .map(|j| {
                let x = g.x(j);
                if x.abs() < width {
                    f(x / width)
                } else {
                    0.0
                }
            })
            .collect();
        let before = norm_h(&v, h);
        for _ in 0..2 {
            for w in &q {
                let c = dot_h(&v, w, h);
                v.iter_mut().zip(w).for_each(|(a, b)| *a -= c * b);
            }
        }
        let after = norm_h(&v, h);
        if after > 1e-8 * before.max(1e-300) {
            v.iter_mut().for_each(|a| *a /= after);
            q.push(v);
        }
    }
    if q.len() != space.dim() {
        return Err(Error::Resolution(format!(
            "trial space has rank {} on the grid, expected {}",
            q.len(),
            space.dim()
        )));
    }
    let zero_modes: Vec<usize> = g.zero_modes().map(|(i, _)| i).collect();
    let d = q.len();
    let per_mode: Vec<f64> = zero_modes
        .par_iter()
        .map(|&mi| {
            let mq: Vec<Vec<f64>> = q.iter().map(|v| g.apply(mi, v)).collect();
            let gram = DMatrix::from_fn(d, d, |i, j| dot_h(&mq[i], &mq[j], h));
            SymmetricEigen::new(gram).eigenvalues.max().max(0.0).sqrt()
        })
        .collect();
    let rayleigh_max = per_mode.into_iter().fold(0.0, f64::max);
    let target = (n as f64 * PI).powi(2) / (g.t * g.t);
    let kernel_dim = GluingProblem::new(g)?.kernel_dim();
    let top = rayleigh_max.max((1.0 + eps) * target) * (1.0 + 1e-9);
    let list = eigen_below(g, top);
    let nonzero = |lim: f64| list.entries.iter().filter(|e| e.lambda > THRESHOLD_ZERO && e.lambda <= lim).count();
    let bound = MinMaxBound {
        n,
        tau,
        trial_dim: d * zero_modes.len(),
        rayleigh_max,
        target,
        kernel_dim,
        count_below_rayleigh: nonzero(rayleigh_max * (1.0 + 1e-9)),
        count_below_target: nonzero((1.0 + eps) * target),
        eps,
    };
    if bound.count_below_rayleigh < bound.required() {
        return Err(Error::Analysis(format!(
            "min-max violated: {} eigenvalues below the trial bound, need {}",
            bound.count_below_rayleigh,
            bound.required()
        )));
    }
    Ok(bound)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HCheck {
    /// max |H f_T − closed form| on [−T, T].
    pub max_deviation: f64,
    /// max |H f_T| on (T, T + 1].
    pub tail: f64,
    /// ℓ² norms of f_T and the closed form on [−T, T].
    pub f_norm: f64,
    pub hf_norm: f64,
}

/// H f_T(t) = ∫_{−T}^t (τ − t) f(τ/T) dτ by quadrature, against
/// (T²/π²) Σ a_k/k² e^{ikπt/T}.
pub fn h_operator_check(space: &TestSpace, terms: &[(i64, Complex64)], t: f64, h: f64) -> Result<HCheck> {
    if !matches!(space.kind, TestSpaceKind::E | TestSpaceKind::VnPrime) {
        return Err(Error::InvalidArgument("H check needs a subspace of E".into()));
    }
    space.coefficients(terms)?;
    let steps = (2.0 * t / h).round() as usize;
    if (steps as f64 * h - 2.0 * t).abs() > 1e-9 * t {
        return Err(Error::InvalidArgument(format!("h = {h} does not divide 2T = {}", 2.0 * t)));
    }
    let grid: Vec<f64> = (0..=steps).map(|i| -t + i as f64 * h).collect();
    let f: Vec<Complex64> = grid.iter().map(|&x| fourier_eval(terms, x / t).0).collect();
    let part = |g: &dyn Fn(Complex64) -> f64, weight: &dyn Fn(f64) -> f64| {
        let s: Vec<f64> = grid.iter().zip(&f).map(|(&x, &v)| weight(x) * g(v)).collect();
        cumulative(&s, h)
    };
    let f0r = part(&|v| v.re, &|_| 1.0);
    let f0i = part(&|v| v.im, &|_| 1.0);
    let f1r = part(&|v| v.re, &|x| x);
    let f1i = part(&|v| v.im, &|x| x);
    let scale = t * t / (PI * PI);
    let mut max_dev: f64 = 0.0;
    let mut fn2 = 0.0;
    let mut hn2 = 0.0;
    for (i, &x) in grid.iter().enumerate() {
        let hf = Complex64::new(f1r[i] - x * f0r[i], f1i[i] - x * f0i[i]);
        let closed: Complex64 = terms
            .iter()
            .filter(|(k, _)| *k != 0)
            .map(|&(k, a)| a / (k * k) as f64 * Complex64::from_polar(1.0, k as f64 * PI * x / t))
            .sum::<Complex64>()
            * scale;
        max_dev = max_dev.max((hf - closed).norm());
        fn2 += f[i].norm_sqr();
        hn2 += closed.norm_sqr();
    }
    // Past T, H f_T = m0 − t m1 with the final moments.
    let last = grid.len() - 1;
    let m0 = Complex64::new(f1r[last], f1i[last]);
    let m1 = Complex64::new(f0r[last], f0i[last]);
    let tail = (1..=16).map(|j| (m0 - (t + j as f64 / 16.0) * m1).norm()).fold(0.0, f64::max);
    Ok(HCheck { max_deviation: max_dev, tail, f_norm: (fn2 * h).sqrt(), hf_norm: (hn2 * h).sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lambda1Bounds {
    pub t: f64,
    /// First eigenvalue above the substitute kernel.
    pub lambda1: f64,
    /// Rayleigh quotient of the clipped ramp.
    pub upper: f64,
    pub kernel_dim: usize,
}

impl Lambda1Bounds {
    pub fn lambda1_t2(&self) -> f64 {
        self.lambda1 * self.t * self.t
    }

    pub fn upper_t2(&self) -> f64 {
        self.upper * self.t * self.t
    }
}

/// ⟨Mv, v⟩/⟨v, v⟩.
pub fn rayleigh_quotient(m: &SymTridiag, v: &[f64]) -> f64 {
    let mv = m.matvec(v);
    let num: f64 = mv.iter().zip(v).map(|(a, b)| a * b).sum();
    let den: f64 = v.iter().map(|a| a * a).sum();
    num / den
}

/// λ₁(T) and the upper bound from the ramp clip(x/T, −1, 1) on the scalar model.
pub fn scalar_lambda1_bounds(g: &GluedOperator) -> Result<Lambda1Bounds> {
    let zero: Vec<usize> = g.zero_modes().map(|(i, _)| i).collect();
    if g.q != 0 || zero.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "scalar bounds need q = 0 with one zero mode, got q = {} with {}",
            g.q,
            zero.len()
        )));
    }
    let kernel_dim = GluingProblem::new(g)?.kernel_dim();
    let list = eigen_lowest(g, kernel_dim + 1)?;
    let lambda1 = list
        .entries
        .get(kernel_dim)
        .map(|e| e.lambda)
        .ok_or_else(|| Error::InsufficientEigenvalues { window: 0.0, largest: list.covered })?;
    let m = &g.modes[zero[0]].matrix;
    // Ramp times the near-kernel vector: constants only span the kernel when
    // the blocks carry no potential.
    let ground = m.eigenvector(m.eigenvalue(0))?;
    let mid = ground[g.n() / 2];
    let weight: Vec<f64> = if kernel_dim > 0 { ground.iter().map(|x| x / mid).collect() } else { vec![1.0; g.n()] };
    let mut v: Vec<f64> = (0..g.n()).map(|j| (g.x(j) / g.t).clamp(-1.0, 1.0) * weight[j]).collect();
    for i in 0..kernel_dim {
        let e = if i == 0 { ground.clone() } else { m.eigenvector(m.eigenvalue(i))? };
        let c: f64 = v.iter().zip(&e).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&e).for_each(|(a, b)| *a -= c * b);
    }
    Ok(Lambda1Bounds { t: g.t, lambda1, upper: rayleigh_quotient(m, &v), kernel_dim })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleReport {
    pub t: f64,
    /// Principal-angle sines between 𝒦_T and the low eigenvectors, descending.
    pub sines: Vec<f64>,
}

impl AngleReport {
    pub fn max_sine(&self) -> f64 {
        self.sines.first().copied().unwrap_or(0.0)
    }
}

/// Principal angles between span 𝒦_T and the span of the same number of
/// lowest eigenvectors, taken per zero mode.
pub fn substitute_kernel_angles(g: &GluedOperator) -> Result<AngleReport> {
    let problem = GluingProblem::new(g)?;
    let basis = problem.kernel_basis();
    let n = g.n();
    let mut per_mode: std::collections::BTreeMap<usize, Vec<Vec<f64>>> = Default::default();
    for field in basis {
        let mi = field.iter().position(|r| r.iter().any(|&x| x != 0.0)).unwrap_or(0);
        let mut v = field[mi].clone();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        per_mode.entry(mi).or_default().push(v);
    }
    let mut sines = Vec::new();
    for (mi, ks) in per_mode {
        let m = &g.modes[mi].matrix;
        let es: Vec<Vec<f64>> = (0..ks.len()).map(|i| m.eigenvector(m.eigenvalue(i))).collect::<Result<_>>()?;
        let qk = orthonormal(&ks, n);
        let qe = orthonormal(&es, n);
        // Sines are the singular values of (I − P_E) Q_K.
        let mut r = qk.clone();
        let proj = &qe * (qe.transpose() * &qk);
        r -= proj;
        let s = r.svd(false, false).singular_values;
        sines.extend(s.iter().copied());
    }
    sines.sort_by(|a, b| b.total_cmp(a));
    Ok(AngleReport { t: g.t, sines })
}

fn orthonormal(vs: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, vs.len(), |i, j| vs[j][i]);
    a.qr().q()
}

/// Slope of log y against x.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ls_slope(x, &ly)
}

/// Writes (T, lambda1, lambda1_T2, upper_T2).
pub fn write_lambda1_csv(path: impl AsRef<Path>, rows: &[Lambda1Bounds]) -> Result<()> {
    let out: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.t.to_string(), r.lambda1.to_string(), r.lambda1_t2().to_string(), r.upper_t2().to_string()])
        .collect();
    write_csv_atomic(path, &["T", "lambda1", "lambda1_T2", "upper_T2"], &out)
}
