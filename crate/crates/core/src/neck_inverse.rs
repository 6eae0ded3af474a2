//! Explicit right inverse Q₀ on a finite piece of the cylinder.
//!
//! Positive modes are convolved with the Green's function e^{−√ν|t|}/(2√ν)
//! through two exponential recursions. Zero modes get the polynomial kernel
//! of the resolvent pole: −∫(t−τ)f for Laplace and −J∫f for the Dirac block.
//! Beyond the support, the singular part is exactly the polyhomogeneous
//! trace built from the stored moments of f.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::output::write_csv_atomic;
use crate::polyhom_calculus::{exact, fiber_offsets, pairing_closed, PolyhomSection};
use crate::quadrature::{cumulative, simpson};
use crate::rng::SplitMix64;
use crate::spectral_model::{ModeKind, ModeOperator};

/// Uniform grid t_i = −S + i h on [−S, S].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeckGrid {
    pub s: f64,
    pub h: f64,
}

impl NeckGrid {
    pub fn new(s: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("grid needs S > 0 and h > 0, got S = {s}, h = {h}")));
        }
        if !divides(h, s) {
            return Err(Error::InvalidArgument(format!("step {h} does not divide S = {s}")));
        }
        Ok(Self { s, h })
    }

    pub fn len(&self) -> usize {
        (2.0 * self.s / self.h).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, i: usize) -> f64 {
        -self.s + i as f64 * self.h
    }

    /// Index of a grid point; `t` must lie on the grid.
    pub fn index(&self, t: f64) -> usize {
        ((t + self.s) / self.h).round() as usize
    }
}

pub(crate) fn divides(h: f64, x: f64) -> bool {
    let q = x / h;
    (q - q.round()).abs() < 1e-9
}

/// Per-fiber-component samples supported in [−T, T].
#[derive(Debug, Clone, PartialEq)]
pub struct CompactSection {
    pub grid: NeckGrid,
    pub support: f64,
    /// One row per fiber component of the mode list (two for a Dirac block).
    pub values: Vec<Vec<f64>>,
}

impl CompactSection {
    pub fn zeros(grid: NeckGrid, support: f64, fiber: usize) -> Result<Self> {
        check_support(&grid, support)?;
        Ok(Self { grid, support, values: vec![vec![0.0; grid.len()]; fiber] })
    }

    /// Samples `g(component, t)` on [−T, T], zero elsewhere.
    pub fn from_fn(
        grid: NeckGrid,
        support: f64,
        fiber: usize,
        g: impl Fn(usize, f64) -> f64,
    ) -> Result<Self> {
        let mut out = Self::zeros(grid, support, fiber)?;
        let (lo, hi) = out.support_range();
        for (c, row) in out.values.iter_mut().enumerate() {
            for (i, x) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *x = g(c, grid.t(i));
            }
        }
        Ok(out)
    }

    pub fn support_range(&self) -> (usize, usize) {
        (self.grid.index(-self.support), self.grid.index(self.support))
    }

    /// Weighted ℓ² norm over all components.
    pub fn norm(&self) -> f64 {
        let h = self.grid.h;
        self.values.iter().flatten().map(|x| x * x).sum::<f64>().sqrt() * h.sqrt()
    }
}

fn check_support(grid: &NeckGrid, t: f64) -> Result<()> {
    if !(t > 0.0) || !divides(grid.h, t) {
        return Err(Error::InvalidArgument(format!("support half-width {t} must be a positive multiple of h")));
    }
    if t > grid.s - 2.0 {
        return Err(Error::InvalidArgument(format!(
            "support T = {t} leaves no room for trace verification inside S = {}",
            grid.s
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeckSolution {
    pub grid: NeckGrid,
    pub support: f64,
    pub regular: Vec<Vec<f64>>,
    pub singular: Vec<Vec<f64>>,
    /// Polyhomogeneous model of u_s for t > T.
    pub trace_plus: PolyhomSection,
    /// Model for t < −T; zero by construction.
    pub trace_minus: PolyhomSection,
    /// Per fiber component, (m0, m1) = (∫τf, ∫f) for singular modes.
    pub moments: Vec<(f64, f64)>,
}

impl NeckSolution {
    pub fn total(&self) -> Vec<Vec<f64>> {
        self.regular
            .iter()
            .zip(&self.singular)
            .map(|(r, s)| r.iter().zip(s).map(|(a, b)| a + b).collect())
            .collect()
    }

    /// CSV rows (t, mode_index, u_r, u_s); mode_index counts fiber components.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut rows = Vec::new();
        for i in 0..self.grid.len() {
            for c in 0..self.regular.len() {
                rows.push(vec![
                    self.grid.t(i).to_string(),
                    c.to_string(),
                    self.regular[c][i].to_string(),
                    self.singular[c][i].to_string(),
                ]);
            }
        }
        write_csv_atomic(path, &["t", "mode_index", "u_r", "u_s"], &rows)
    }
}

/// Q₀ applied to a compactly supported section.
pub fn q0_apply(modes: &[ModeOperator], f: &CompactSection) -> Result<NeckSolution> {
    let (offs, fiber) = fiber_offsets(modes);
    if f.values.len() != fiber {
        return Err(Error::InvalidArgument(format!(
            "section has {} components, mode list needs {fiber}",
            f.values.len()
        )));
    }
    check_support(&f.grid, f.support)?;
    if f.support < 1.0 {
        return Err(Error::InvalidArgument("support half-width must be at least 1".into()));
    }
    let n = f.grid.len();
    let (lo, hi) = f.support_range();
    for row in &f.values {
        if row.iter().enumerate().any(|(i, &x)| (i < lo || i > hi) && x != 0.0) {
            return Err(Error::InvalidArgument("section does not vanish outside [−T, T]".into()));
        }
    }
    for op in modes {
        if op.kind == ModeKind::Helmholtz {
            return Err(Error::Unsupported("Q0 is built for Laplace and Dirac modes only".into()));
        }
    }

    struct ModeOut {
        regular: Vec<Vec<f64>>,
        singular: Vec<Vec<f64>>,
        moments: Vec<(f64, f64)>,
        trace: Vec<(f64, f64)>,
    }

    let per_mode: Vec<ModeOut> = modes
        .par_iter()
        .zip(offs.par_iter())
        .map(|(op, &off)| {
            let h = f.grid.h;
            let zero = vec![0.0; n];
            match op.kind {
                ModeKind::Laplace if op.nu > 0.0 => ModeOut {
                    regular: vec![green_convolve(&f.values[off], op.nu, h)],
                    singular: vec![zero],
                    moments: vec![(0.0, 0.0)],
                    trace: vec![(0.0, 0.0)],
                },
                ModeKind::Laplace => {
                    let (us, m0, m1) = laplace_singular(&f.values[off], &f.grid, lo, hi);
                    ModeOut {
                        regular: vec![zero],
                        singular: vec![us],
                        moments: vec![(m0, m1)],
                        trace: vec![(m0, -m1)],
                    }
                }
                ModeKind::Dirac => {
                    let fa = &f.values[off];
                    let fb = &f.values[off + 1];
                    let (ia, ma) = running_integral(fa, h, lo, hi);
                    let (ib, mb) = running_integral(fb, h, lo, hi);
                    // u_s = −J∫f with J(x, y) = (−y, x): (α, β) ↦ (F_β, −F_α).
                    let ua = ib;
                    let ub: Vec<f64> = ia.iter().map(|x| -x).collect();
                    ModeOut {
                        regular: vec![zero.clone(), zero],
                        singular: vec![ua, ub],
                        moments: vec![(0.0, ma), (0.0, mb)],
                        trace: vec![(mb, 0.0), (-ma, 0.0)],
                    }
                }
                ModeKind::Helmholtz => unreachable!(),
            }
        })
        .collect();

    let mut regular = Vec::with_capacity(fiber);
    let mut singular = Vec::with_capacity(fiber);
    let mut moments = Vec::with_capacity(fiber);
    let mut c0 = vec![exact(0.0, 0.0); fiber];
    let mut c1 = vec![exact(0.0, 0.0); fiber];
    let mut c = 0;
    for m in per_mode {
        for k in 0..m.regular.len() {
            c0[c] = exact(m.trace[k].0, 0.0);
            c1[c] = exact(m.trace[k].1, 0.0);
            c += 1;
        }
        regular.extend(m.regular);
        singular.extend(m.singular);
        moments.extend(m.moments);
    }
    let trace_plus = PolyhomSection::new(fiber, vec![(0.0, vec![c0, c1])]);
    Ok(NeckSolution {
        grid: f.grid,
        support: f.support,
        regular,
        singular,
        trace_plus,
        trace_minus: PolyhomSection::zero(fiber),
        moments,
    })
}

/// u = G_ν * f with trapezoid-weighted forward and backward recursions.
pub fn green_convolve(f: &[f64], nu: f64, h: f64) -> Vec<f64> {
    let n = f.len();
    let k = nu.sqrt();
    let r = (-k * h).exp();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    a[0] = 0.5 * h * f[0];
    for i in 1..n {
        a[i] = r * a[i - 1] + 0.5 * h * (r * f[i - 1] + f[i]);
    }
    b[n - 1] = 0.5 * h * f[n - 1];
    for i in (0..n - 1).rev() {
        b[i] = r * b[i + 1] + 0.5 * h * (r * f[i + 1] + f[i]);
    }
    a.iter().zip(&b).map(|(x, y)| (x + y) / (2.0 * k)).collect()
}

/// Running ∫_{−T}^t f on the grid, constant past T; also returns ∫_{−T}^T f.
fn running_integral(f: &[f64], h: f64, lo: usize, hi: usize) -> (Vec<f64>, f64) {
    let cum = cumulative(&f[lo..=hi], h);
    let total = *cum.last().unwrap();
    let mut out = vec![0.0; f.len()];
    out[lo..=hi].copy_from_slice(&cum);
    for x in out.iter_mut().skip(hi + 1) {
        *x = total;
    }
    (out, total)
}

/// u_s = ∫_{−T}^t (τ − t) f(τ) dτ, with moments (m0, m1) = (∫τf, ∫f).
fn laplace_singular(f: &[f64], grid: &NeckGrid, lo: usize, hi: usize) -> (Vec<f64>, f64, f64) {
    let h = grid.h;
    let seg = &f[lo..=hi];
    let tf: Vec<f64> = seg.iter().enumerate().map(|(j, x)| grid.t(lo + j) * x).collect();
    let f0 = cumulative(seg, h);
    let f1 = cumulative(&tf, h);
    let m1 = *f0.last().unwrap();
    let m0 = *f1.last().unwrap();
    let mut u = vec![0.0; f.len()];
    for j in 0..seg.len() {
        u[lo + j] = f1[j] - grid.t(lo + j) * f0[j];
    }
    for (i, x) in u.iter_mut().enumerate().skip(hi + 1) {
        *x = m0 - grid.t(i) * m1;
    }
    (u, m0, m1)
}

/// The polyhomogeneous trace u_f of Q₀f for t > T.
pub fn asymptotic_trace(modes: &[ModeOperator], f: &CompactSection) -> Result<PolyhomSection> {
    Ok(q0_apply(modes, f)?.trace_plus)
}

/// Discrete P applied on the grid: −D²u + νu (Laplace) or J·D_c u (Dirac).
/// End rows are left zero; callers only look at the interior.
pub fn apply_discrete(modes: &[ModeOperator], u: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let (offs, _) = fiber_offsets(modes);
    let mut out: Vec<Vec<f64>> = u.iter().map(|r| vec![0.0; r.len()]).collect();
    for (op, &off) in modes.iter().zip(&offs) {
        match op.kind {
            ModeKind::Dirac => {
                let (a, b) = (&u[off], &u[off + 1]);
                for i in 1..a.len() - 1 {
                    let da = (a[i + 1] - a[i - 1]) / (2.0 * h);
                    let db = (b[i + 1] - b[i - 1]) / (2.0 * h);
                    out[off][i] = -db;
                    out[off + 1][i] = da;
                }
            }
            _ => {
                let sign = if op.kind == ModeKind::Helmholtz { -1.0 } else { 1.0 };
                let x = &u[off];
                for i in 1..x.len() - 1 {
                    out[off][i] = -(x[i + 1] - 2.0 * x[i] + x[i - 1]) / (h * h) + sign * op.nu * x[i];
                }
            }
        }
    }
    out
}

/// ‖P_h(Q₀f) − f‖/‖f‖ in weighted ℓ² over [−T, T].
pub fn relative_residual(modes: &[ModeOperator], f: &CompactSection, sol: &NeckSolution) -> f64 {
    let pu = apply_discrete(modes, &sol.total(), f.grid.h);
    let (lo, hi) = f.support_range();
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, g) in pu.iter().zip(&f.values) {
        for i in lo..=hi {
            num += (p[i] - g[i]).powi(2);
            den += g[i] * g[i];
        }
    }
    if den == 0.0 {
        return num.sqrt();
    }
    (num / den).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityValues {
    pub pairing: Complex64,
    pub l2: Complex64,
    pub residual: f64,
}

/// Compares (u_f, v) with ⟨f, v⟩ = ∫_{−T}^{T} Σ f_c conj(v_c).
pub fn duality_check(
    modes: &[ModeOperator],
    f: &CompactSection,
    v: &PolyhomSection,
) -> Result<DualityValues> {
    let trace = asymptotic_trace(modes, f)?;
    let pairing = pairing_closed(modes, &trace, v)?;
    let (lo, hi) = f.support_range();
    let mut re = Vec::with_capacity(hi - lo + 1);
    let mut im = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let vt = v.eval(f.grid.t(i));
        let mut acc = Complex64::zero();
        for (c, row) in f.values.iter().enumerate() {
            acc += vt[c].conj() * row[i];
        }
        re.push(acc.re);
        im.push(acc.im);
    }
    let l2 = Complex64::new(simpson(&re, f.grid.h), simpson(&im, f.grid.h));
    Ok(DualityValues { pairing, l2, residual: (pairing - l2).norm() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertibilityReport {
    pub solution: NeckSolution,
    pub norm_ratio: f64,
    pub bound: f64,
}

/// Inverse on modes with no real root; checks ‖u‖ ≤ ‖f‖/ν₀ up to the exact
/// grid factor (kh/2)coth(kh/2) of the discrete kernel.
pub fn invertibility_no_real_roots(
    modes: &[ModeOperator],
    f: &CompactSection,
) -> Result<InvertibilityReport> {
    if modes.iter().any(|m| m.nu == 0.0 || m.kind != ModeKind::Laplace) {
        return Err(Error::Contract("all modes must be Laplace with ν > 0".into()));
    }
    let solution = q0_apply(modes, f)?;
    let nu0 = modes.iter().map(|m| m.nu).fold(f64::INFINITY, f64::min);
    let x = 0.5 * nu0.sqrt() * f.grid.h;
    let bound = if modes.is_empty() { 0.0 } else { x / x.tanh() / nu0 };
    let fnorm = f.norm();
    let unorm = solution.regular.iter().flatten().map(|v| v * v).sum::<f64>().sqrt() * f.grid.h.sqrt();
    let norm_ratio = if fnorm == 0.0 { 0.0 } else { unorm / fnorm };
    if norm_ratio > bound * (1.0 + 1e-12) {
        return Err(Error::Analysis(format!(
            "norm ratio {norm_ratio} exceeds the spectral bound {bound}"
        )));
    }
    Ok(InvertibilityReport { solution, norm_ratio, bound })
}

/// Smooth random section on [−T, T]: a few low frequencies times the
/// envelope (1 − (t/T)²)⁴, so f and its first derivatives vanish at ±T.
pub fn smooth_random_section(
    grid: NeckGrid,
    support: f64,
    fiber: usize,
    rng: &mut SplitMix64,
) -> Result<CompactSection> {
    let coeffs: Vec<Vec<(f64, f64, f64)>> = (0..fiber)
        .map(|_| {
            (1..=3)
                .map(|k| (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), k as f64))
                .collect()
        })
        .collect();
    let w = std::f64::consts::PI / support;
    CompactSection::from_fn(grid, support, fiber, |c, t| {
        let env = (1.0 - (t / support).powi(2)).powi(4);
        let s: f64 = coeffs[c]
            .iter()
            .map(|&(a, b, k)| a * (k * w * t).cos() + b * (k * w * t).sin())
            .sum();
        env * s
    })
}

/// ℓ² operator norm of Q₀ for one zero-mode operator, restricted to
/// [−T, T] on both sides, by power iteration on the assembled matrix.
pub fn q0_operator_norm(op: &ModeOperator, t: f64, h: f64) -> Result<f64> {
    let grid = NeckGrid::new(t + 2.0, h)?;
    let fiber = op.fiber_dim();
    let probe = CompactSection::zeros(grid, t, fiber)?;
    let (lo, hi) = probe.support_range();
    let m = hi - lo + 1;
    let dim = m * fiber;
    let cols: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let mut f = probe.clone();
            f.values[j / m][lo + j % m] = 1.0;
            let sol = q0_apply(std::slice::from_ref(op), &f).expect("valid probe");
            let tot = sol.total();
            let mut col = Vec::with_capacity(dim);
            for row in &tot {
                col.extend_from_slice(&row[lo..=hi]);
            }
            col
        })
        .collect();
    let a = DMatrix::from_fn(dim, dim, |r, c| cols[c][r]);
    Ok(power_norm(&a))
}

/// Largest singular value by power iteration on AᵀA.
pub fn power_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    let mut x = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.01 * (i % 7) as f64);
    x /= x.norm();
    let mut sigma = 0.0;
    for _ in 0..500 {
        let y = a * &x;
        let z = a.transpose() * &y;
        let next = y.norm();
        let zn = z.norm();
        if zn == 0.0 {
            return 0.0;
        }
        x = z / zn;
        if (next - sigma).abs() <= 1e-12 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_model::DegreeTag;

    #[test]
    fn delta_response_is_half_inverse_root() {
        let grid = NeckGrid::new(6.0, 1.0 / 16.0).unwrap();
        let mut f = CompactSection::zeros(grid, 2.0, 1).unwrap();
        let mid = grid.index(0.0);
        f.values[0][mid] = 16.0;
        let sol = q0_apply(&[ModeOperator::laplace(4.0, DegreeTag::Alpha)], &f).unwrap();
        assert!((sol.regular[0][mid] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn singular_part_vanishes_left_of_support() {
        let grid = NeckGrid::new(5.0, 1.0 / 8.0).unwrap();
        let f = CompactSection::from_fn(grid, 2.0, 1, |_, t| t.cos()).unwrap();
        let sol = q0_apply(&[ModeOperator::laplace(0.0, DegreeTag::Alpha)], &f).unwrap();
        let lo = grid.index(-2.0);
        assert!(sol.singular[0][..lo].iter().all(|&x| x == 0.0));
    }
}
