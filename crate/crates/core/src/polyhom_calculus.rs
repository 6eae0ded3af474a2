//! Rate-0 polyhomogeneous sections, the right inverse Q_{λ0} on polynomial
//! sections, and the sesquilinear pairing on 𝓔 × 𝓔*.
//!
//! Coefficients are exact complex rationals so that the symbolic identities
//! (P ∘ Q = id, kernel membership) hold with no rounding at all. Floats only
//! appear in the quadrature behind [`pairing_integral`].

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::quadrature::{simpson_richardson_fn, CutoffFunction};
use crate::spectral_model::{scalar_laurent, ModeKind, ModeOperator};

/// Exact complex rational scalar.
pub type Exact = Complex<BigRational>;

/// Vector-valued polynomial: `poly[j]` is the coefficient vector of t^j.
pub type Poly = Vec<Vec<Exact>>;

pub fn exact(re: f64, im: f64) -> Exact {
    let conv = |x: f64| BigRational::from_float(x).expect("finite coefficient");
    Complex::new(conv(re), conv(im))
}

pub fn exact_int(re: i64, im: i64) -> Exact {
    Complex::new(
        BigRational::from_integer(BigInt::from(re)),
        BigRational::from_integer(BigInt::from(im)),
    )
}

pub fn to_c64(x: &Exact) -> Complex64 {
    Complex64::new(
        x.re.to_f64().unwrap_or(f64::NAN),
        x.im.to_f64().unwrap_or(f64::NAN),
    )
}

fn ratio(n: i64, d: i64) -> Exact {
    Complex::new(
        BigRational::new(BigInt::from(n), BigInt::from(d)),
        BigRational::zero(),
    )
}

/// Offsets of each operator's fiber inside the concatenated fiber.
pub fn fiber_offsets(ops: &[ModeOperator]) -> (Vec<usize>, usize) {
    let mut offs = Vec::with_capacity(ops.len());
    let mut acc = 0;
    for op in ops {
        offs.push(acc);
        acc += op.fiber_dim();
    }
    (offs, acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyTerm {
    pub rate: f64,
    pub poly: Poly,
}

/// Finite sum of e^{iλ_j t}·(vector polynomial in t) with distinct real rates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhomSection {
    pub fiber: usize,
    terms: Vec<PolyTerm>,
}

impl PolyhomSection {
    pub fn zero(fiber: usize) -> Self {
        Self { fiber, terms: Vec::new() }
    }

    /// Builds from (rate, polynomial) pairs; equal rates are summed, zero
    /// trailing coefficients trimmed, zero terms dropped, rates sorted.
    pub fn new(fiber: usize, terms: Vec<(f64, Poly)>) -> Self {
        let mut out = Self::zero(fiber);
        for (rate, poly) in terms {
            for c in &poly {
                assert_eq!(c.len(), fiber, "coefficient vector length must equal the fiber dimension");
            }
            out.add_term(rate, poly);
        }
        out
    }

    /// Constant-rate polynomial from float coefficient rows.
    pub fn from_f64(fiber: usize, rate: f64, rows: &[Vec<f64>]) -> Self {
        let poly = rows
            .iter()
            .map(|r| r.iter().map(|&x| exact(x, 0.0)).collect())
            .collect();
        Self::new(fiber, vec![(rate, poly)])
    }

    /// c·t^power at rate 0 on a single fiber component.
    pub fn monomial(fiber: usize, component: usize, power: usize, c: Exact) -> Self {
        let mut poly = vec![vec![Exact::zero(); fiber]; power + 1];
        poly[power][component] = c;
        Self::new(fiber, vec![(0.0, poly)])
    }

    fn add_term(&mut self, rate: f64, poly: Poly) {
        let pos = self.terms.iter().position(|t| t.rate == rate);
        let merged = match pos {
            Some(i) => poly_add(&self.terms.remove(i).poly, &poly),
            None => poly,
        };
        let merged = trim(merged);
        if !merged.is_empty() {
            self.terms.push(PolyTerm { rate, poly: merged });
            self.terms.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        }
    }

    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.fiber, other.fiber);
        let mut out = self.clone();
        for t in &other.terms {
            out.add_term(t.rate, t.poly.clone());
        }
        out
    }

    pub fn scale(&self, c: &Exact) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| (t.rate, t.poly.iter().map(|v| v.iter().map(|x| x * c).collect()).collect()))
            .collect();
        Self::new(self.fiber, terms)
    }

    /// Polynomial degree over all terms (0 for the zero section).
    pub fn degree(&self) -> usize {
        self.terms.iter().map(|t| t.poly.len().saturating_sub(1)).max().unwrap_or(0)
    }

    /// Value at t.
    pub fn eval(&self, t: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::zero(); self.fiber];
        for term in &self.terms {
            let phase = Complex64::from_polar(1.0, term.rate * t);
            for (c, v) in horner(&term.poly, t, self.fiber).into_iter().enumerate() {
                out[c] += phase * v;
            }
        }
        out
    }

    /// D_t^k of the section at t, D_t = −i∂_t.
    pub fn eval_d(&self, t: f64, k: usize) -> Vec<Complex64> {
        FloatSection::derivative(self, k).eval(t)
    }

    /// Translate: u ↦ u(· − s).
    pub fn shift(&self, s: f64) -> Self {
        let se = exact(s, 0.0);
        let terms = self
            .terms
            .iter()
            .map(|term| {
                let shifted = poly_compose_shift(&term.poly, &se, self.fiber);
                // e^{iλ(t−s)} = e^{−iλs}e^{iλt}; exact only when λs = 0.
                let phase = if term.rate * s == 0.0 {
                    Exact::one()
                } else {
                    let p = Complex64::from_polar(1.0, -term.rate * s);
                    exact(p.re, p.im)
                };
                (term.rate, poly_scale(&shifted, &phase))
            })
            .collect();
        Self::new(self.fiber, terms)
    }

    /// Canonical text dump: one `rate` header per term, then one row per power.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fiber {}", self.fiber);
        for term in &self.terms {
            let _ = writeln!(s, "rate {}", term.rate);
            for (j, row) in term.poly.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(fmt_exact).collect();
                let _ = writeln!(s, "  t^{j}: [{}]", cells.join(", "));
            }
        }
        s
    }
}

/// Float copy of D_t^k u, for evaluation at many points.
struct FloatSection {
    fiber: usize,
    terms: Vec<(f64, Vec<Vec<Complex64>>)>,
}

impl FloatSection {
    fn derivative(u: &PolyhomSection, k: usize) -> Self {
        let terms = u
            .terms
            .iter()
            .map(|term| {
                let lam = exact(term.rate, 0.0);
                // D(e^{iλt}p) = e^{iλt}(λ + D)p.
                let mut p = term.poly.clone();
                for _ in 0..k {
                    let shifted = poly_scale(&p, &lam);
                    p = poly_add(&shifted, &poly_d(&p));
                }
                let rows = p.iter().map(|r| r.iter().map(to_c64).collect()).collect();
                (term.rate, rows)
            })
            .collect();
        Self { fiber: u.fiber, terms }
    }

    fn eval(&self, t: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::zero(); self.fiber];
        for (rate, rows) in &self.terms {
            let phase = Complex64::from_polar(1.0, rate * t);
            let mut acc = vec![Complex64::zero(); self.fiber];
            for row in rows.iter().rev() {
                for (a, c) in acc.iter_mut().zip(row) {
                    *a = *a * t + c;
                }
            }
            for (o, a) in out.iter_mut().zip(acc) {
                *o += phase * a;
            }
        }
        out
    }
}

fn fmt_exact(x: &Exact) -> String {
    if x.im.is_zero() {
        format!("{}", x.re)
    } else {
        format!("{}{}{}i", x.re, if x.im < BigRational::zero() { "" } else { "+" }, x.im)
    }
}

fn horner(poly: &Poly, t: f64, fiber: usize) -> Vec<Complex64> {
    let mut acc = vec![Complex64::zero(); fiber];
    for row in poly.iter().rev() {
        for (a, c) in acc.iter_mut().zip(row) {
            *a = *a * t + to_c64(c);
        }
    }
    acc
}

fn trim(mut p: Poly) -> Poly {
    while p.last().is_some_and(|row| row.iter().all(|x| x.is_zero())) {
        p.pop();
    }
    p
}

fn poly_add(a: &Poly, b: &Poly) -> Poly {
    let n = a.len().max(b.len());
    let fiber = a.first().or(b.first()).map_or(0, |r| r.len());
    (0..n)
        .map(|j| {
            (0..fiber)
                .map(|c| {
                    let x = a.get(j).map_or_else(Exact::zero, |r| r[c].clone());
                    let y = b.get(j).map_or_else(Exact::zero, |r| r[c].clone());
                    x + y
                })
                .collect()
        })
        .collect()
}

fn poly_scale(p: &Poly, c: &Exact) -> Poly {
    p.iter().map(|r| r.iter().map(|x| x * c).collect()).collect()
}

/// D_t = −i d/dt on polynomial coefficients.
fn poly_d(p: &Poly) -> Poly {
    let mi = exact_int(0, -1);
    (1..p.len())
        .map(|j| p[j].iter().map(|x| x * &mi * exact_int(j as i64, 0)).collect())
        .collect()
}

/// D_t^{−1} = i∫_0^t on polynomial coefficients.
fn poly_d_inv(p: &Poly) -> Poly {
    if p.is_empty() {
        return Vec::new();
    }
    let fiber = p[0].len();
    let i = exact_int(0, 1);
    let mut out = vec![vec![Exact::zero(); fiber]];
    for (j, row) in p.iter().enumerate() {
        out.push(row.iter().map(|x| x * &i * ratio(1, j as i64 + 1)).collect());
    }
    out
}

/// p(t − s) by expanding (t − s)^j.
fn poly_compose_shift(p: &Poly, s: &Exact, fiber: usize) -> Poly {
    let mut out: Poly = vec![vec![Exact::zero(); fiber]; p.len()];
    for (j, row) in p.iter().enumerate() {
        // (t − s)^j = Σ_k C(j,k) t^k (−s)^{j−k}
        for k in 0..=j {
            let coef = binom(j, k) * pow_exact(&(-s.clone()), j - k);
            for c in 0..fiber {
                out[k][c] = &out[k][c] + &row[c] * &coef;
            }
        }
    }
    out
}

fn binom(n: usize, k: usize) -> Exact {
    let mut b = BigInt::one();
    for i in 0..k {
        b = b * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    Complex::new(BigRational::from_integer(b), BigRational::zero())
}

fn pow_exact(x: &Exact, n: usize) -> Exact {
    let mut acc = Exact::one();
    for _ in 0..n {
        acc = acc * x;
    }
    acc
}

fn matrix_exact(entries: &[Vec<(i32, i32)>]) -> Vec<Vec<Exact>> {
    entries
        .iter()
        .map(|r| r.iter().map(|&(a, b)| exact_int(a as i64, b as i64)).collect())
        .collect()
}

/// Applies a fiber matrix to a block of a polynomial.
fn poly_block_matmul(m: &[Vec<Exact>], p: &Poly, off: usize) -> Vec<Vec<Exact>> {
    let d = m.len();
    p.iter()
        .map(|row| {
            (0..d)
                .map(|r| {
                    let mut acc = Exact::zero();
                    for c in 0..d {
                        if !m[r][c].is_zero() {
                            acc = acc + &m[r][c] * &row[off + c];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn extract_block(p: &Poly, off: usize, d: usize) -> Poly {
    p.iter().map(|r| r[off..off + d].to_vec()).collect()
}

fn insert_block(target: &mut Poly, block: &Poly, off: usize, fiber: usize) {
    while target.len() < block.len() {
        target.push(vec![Exact::zero(); fiber]);
    }
    for (j, row) in block.iter().enumerate() {
        for (c, x) in row.iter().enumerate() {
            target[j][off + c] = &target[j][off + c] + x;
        }
    }
}

fn exact_taylor(op: &ModeOperator, lambda0: f64) -> Vec<Exact> {
    let mut a = op.symbol_taylor(&exact(lambda0, 0.0), &exact(op.nu, 0.0));
    // Helmholtz roots ±√ν are irrational in general; a float rate that hits
    // one to rounding is taken as the root itself.
    if op.kind == ModeKind::Helmholtz && (lambda0 * lambda0 - op.nu).abs() <= 1e-13 * op.nu.max(1.0) {
        a[0] = Exact::zero();
    }
    a
}

fn check_fiber(ops: &[ModeOperator], u: &PolyhomSection) -> Result<usize> {
    let (_, fiber) = fiber_offsets(ops);
    if u.fiber != fiber {
        return Err(Error::InvalidArgument(format!(
            "section fiber {} does not match operator fiber {fiber}",
            u.fiber
        )));
    }
    Ok(fiber)
}

/// Exact symbolic application of P(D_t) blockwise over `ops`.
///
/// On a term e^{iλ0 t}p this is e^{iλ0 t} Σ_n (1/n!) ∂ⁿP(λ0) D_tⁿ p.
pub fn apply_p(ops: &[ModeOperator], u: &PolyhomSection) -> Result<PolyhomSection> {
    let fiber = check_fiber(ops, u)?;
    let (offs, _) = fiber_offsets(ops);
    let mut terms = Vec::new();
    for term in u.terms() {
        let mut out: Poly = Vec::new();
        for (op, &off) in ops.iter().zip(&offs) {
            let d = op.fiber_dim();
            let m = matrix_exact(&op.symbol_matrix());
            let taylor = exact_taylor(op, term.rate);
            let block = extract_block(&term.poly, off, d);
            let mut dn = block.clone();
            let mut acc: Poly = Vec::new();
            for a in &taylor {
                if dn.is_empty() {
                    break;
                }
                acc = poly_add(&acc, &poly_scale(&dn, a));
                dn = poly_d(&dn);
            }
            let mapped = poly_block_matmul(&m, &acc, 0);
            insert_block(&mut out, &mapped, off, fiber);
        }
        terms.push((term.rate, out));
    }
    Ok(PolyhomSection::new(fiber, terms))
}

/// P u = 0 exactly.
pub fn in_kernel(ops: &[ModeOperator], u: &PolyhomSection) -> Result<bool> {
    Ok(apply_p(ops, u)?.is_zero())
}

/// Right inverse Q_{λ0} = Σ_{m ≥ −d} R_m(λ0) D_t^m on each term of `f`, with
/// D_t^{−1} = i∫_0^t and the sum truncated at m = deg f.
pub fn q_lambda0(ops: &[ModeOperator], f: &PolyhomSection) -> Result<PolyhomSection> {
    let fiber = check_fiber(ops, f)?;
    let (offs, _) = fiber_offsets(ops);
    let mut terms = Vec::new();
    for term in f.terms() {
        let deg = term.poly.len().saturating_sub(1);
        let mut out: Poly = Vec::new();
        for (op, &off) in ops.iter().zip(&offs) {
            let d_fib = op.fiber_dim();
            let minv = matrix_exact(&op.symbol_matrix_inv());
            let taylor = exact_taylor(op, term.rate);
            let order = taylor.iter().position(|a| !a.is_zero()).ok_or_else(|| {
                Error::Contract("symbol vanishes identically".into())
            })?;
            let (_, b) = scalar_laurent(&taylor, |a: &Exact| a.is_zero(), deg + order + 1);
            let block = extract_block(&term.poly, off, d_fib);
            let mut acc: Poly = Vec::new();
            // D^m f for m = −order..=deg, built from D^{−order} f upward.
            let mut dm = block.clone();
            for _ in 0..order {
                dm = poly_d_inv(&dm);
            }
            for (k, bk) in b.iter().enumerate() {
                if !bk.is_zero() {
                    acc = poly_add(&acc, &poly_scale(&dm, bk));
                }
                if k < order {
                    // Step from D^{m} to D^{m+1} while m < 0: recompute from f
                    // so that D·D^{−1} does not lose the integration constant.
                    let mut next = block.clone();
                    for _ in 0..(order - k - 1) {
                        next = poly_d_inv(&next);
                    }
                    dm = next;
                } else {
                    dm = poly_d(&dm);
                }
            }
            let mapped = poly_block_matmul(&minv, &acc, 0);
            insert_block(&mut out, &mapped, off, fiber);
        }
        terms.push((term.rate, out));
    }
    Ok(PolyhomSection::new(fiber, terms))
}

/// Which kind of closed form, if any, covers this operator set.
fn closed_form_supported(ops: &[ModeOperator]) -> Result<()> {
    for op in ops {
        if op.kind == ModeKind::Helmholtz {
            return Err(Error::Unsupported(
                "no closed-form pairing for Helmholtz-type modes; use pairing_integral".into(),
            ));
        }
    }
    Ok(())
}

/// The pairing in closed form.
///
/// Laplace components: Σ ⟨a_0, b_1⟩ − ⟨a_1, b_0⟩ for u = a_0 + t a_1,
/// v = b_0 + t b_1. Dirac blocks: ⟨J u, v⟩ = ⟨α, β'⟩ − ⟨β, α'⟩.
/// The second slot is conjugated.
pub fn pairing_closed(ops: &[ModeOperator], u: &PolyhomSection, v: &PolyhomSection) -> Result<Complex64> {
    closed_form_supported(ops)?;
    check_fiber(ops, u)?;
    check_fiber(ops, v)?;
    if !in_kernel(ops, u)? || !in_kernel(ops, v)? {
        return Err(Error::Contract("pairing arguments must solve P u = 0".into()));
    }
    let (offs, fiber) = fiber_offsets(ops);
    let coeff = |s: &PolyhomSection, j: usize| -> Vec<Complex64> {
        s.terms()
            .iter()
            .find(|t| t.rate == 0.0)
            .and_then(|t| t.poly.get(j))
            .map(|r| r.iter().map(to_c64).collect())
            .unwrap_or_else(|| vec![Complex64::zero(); fiber])
    };
    let (u0, u1, v0, v1) = (coeff(u, 0), coeff(u, 1), coeff(v, 0), coeff(v, 1));
    let mut acc = Complex64::zero();
    for (op, &off) in ops.iter().zip(&offs) {
        match op.kind {
            ModeKind::Laplace => {
                acc += u0[off] * v1[off].conj() - u1[off] * v0[off].conj();
            }
            ModeKind::Dirac => {
                let (a, b) = (u0[off], u0[off + 1]);
                let (a2, b2) = (v0[off], v0[off + 1]);
                acc += a * b2.conj() - b * a2.conj();
            }
            ModeKind::Helmholtz => unreachable!(),
        }
    }
    Ok(acc)
}

/// (u, v) = ∫ ⟨P(D_t)[χ u], v⟩ dt by composite Simpson with one Richardson
/// step over the transition band of χ, where the integrand is supported.
pub fn pairing_integral(
    ops: &[ModeOperator],
    u: &PolyhomSection,
    v: &PolyhomSection,
    chi: &CutoffFunction,
    quad_step: f64,
) -> Result<Complex64> {
    check_fiber(ops, u)?;
    check_fiber(ops, v)?;
    if !(quad_step > 0.0) {
        return Err(Error::InvalidArgument("quadrature step must be positive".into()));
    }
    if !in_kernel(ops, u)? {
        return Err(Error::Contract("first pairing argument is not in ker P".into()));
    }
    // All supported symbols are self-adjoint, so ker P* = ker P.
    if !in_kernel(ops, v)? {
        return Err(Error::Contract("second pairing argument is not in ker P*".into()));
    }
    let (offs, _) = fiber_offsets(ops);
    let tay: Vec<Vec<Complex64>> = ops
        .iter()
        .map(|op| op.symbol_taylor(&Complex64::zero(), &Complex64::new(op.nu, 0.0)))
        .collect();
    let mats: Vec<DMatrix<Complex64>> = ops
        .iter()
        .map(|op| {
            let e = op.symbol_matrix();
            DMatrix::from_fn(e.len(), e.len(), |r, c| Complex64::new(e[r][c].0 as f64, e[r][c].1 as f64))
        })
        .collect();
    let max_order = tay.iter().map(|t| t.len() - 1).max().unwrap_or(0);
    let du_tab: Vec<FloatSection> = (0..max_order).map(|j| FloatSection::derivative(u, j)).collect();
    let v_tab = FloatSection::derivative(v, 0);
    let integrand = |t: f64| -> Complex64 {
        // D^j u for j < max_order, D^k χ for k ≥ 1.
        let du: Vec<Vec<Complex64>> = du_tab.iter().map(|d| d.eval(t)).collect();
        let vt = v_tab.eval(t);
        let mut acc = Complex64::zero();
        for (b, &off) in offs.iter().enumerate() {
            let d = ops[b].fiber_dim();
            let mut pu = vec![Complex64::zero(); d];
            for (n, a) in tay[b].iter().enumerate().skip(1) {
                for k in 1..=n {
                    let dchi = Complex64::new(0.0, -1.0).powu(k as u32) * chi.deriv(t, k);
                    let w = a * dchi * binom_f(n, k);
                    for c in 0..d {
                        pu[c] += w * du[n - k][off + c];
                    }
                }
            }
            for r in 0..d {
                let mut row = Complex64::zero();
                for c in 0..d {
                    row += mats[b][(r, c)] * pu[c];
                }
                acc += row * vt[off + r].conj();
            }
        }
        acc
    };
    let (a, b) = chi.transition();
    let re = simpson_richardson_fn(a, b, quad_step, |t| integrand(t).re);
    let im = simpson_richardson_fn(a, b, quad_step, |t| integrand(t).im);
    Ok(Complex64::new(re, im))
}

fn binom_f(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Standard basis of 𝓔 for the operator set: {e_c, t e_c} per Laplace zero
/// mode, {e_α, e_β} per Dirac block, {e^{±iωt} e_c} per Helmholtz mode.
pub fn kernel_basis(ops: &[ModeOperator]) -> Vec<PolyhomSection> {
    let (offs, fiber) = fiber_offsets(ops);
    let mut out = Vec::new();
    for (op, &off) in ops.iter().zip(&offs) {
        match op.kind {
            ModeKind::Laplace if op.nu == 0.0 => {
                out.push(PolyhomSection::monomial(fiber, off, 0, Exact::one()));
                out.push(PolyhomSection::monomial(fiber, off, 1, Exact::one()));
            }
            ModeKind::Laplace => {}
            ModeKind::Dirac => {
                out.push(PolyhomSection::monomial(fiber, off, 0, Exact::one()));
                out.push(PolyhomSection::monomial(fiber, off + 1, 0, Exact::one()));
            }
            ModeKind::Helmholtz => {
                let w = op.nu.sqrt();
                for rate in [w, -w] {
                    let mut row = vec![Exact::zero(); fiber];
                    row[off] = Exact::one();
                    out.push(PolyhomSection::new(fiber, vec![(rate, vec![row])]));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GramReport {
    pub matrix: DMatrix<Complex64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

impl GramReport {
    pub fn full_rank(&self) -> bool {
        self.rank == self.matrix.nrows() && self.rank == self.matrix.ncols()
    }
}

/// Pairing matrix G_ij = (E_i, E*_j); the closed form where available,
/// otherwise the integral with the centred cutoff.
pub fn gram_matrix(
    ops: &[ModeOperator],
    basis_e: &[PolyhomSection],
    basis_estar: &[PolyhomSection],
) -> Result<GramReport> {
    let closed = closed_form_supported(ops).is_ok();
    let chi = CutoffFunction::new(0.0);
    let mut m = DMatrix::zeros(basis_e.len(), basis_estar.len());
    for (i, u) in basis_e.iter().enumerate() {
        for (j, v) in basis_estar.iter().enumerate() {
            m[(i, j)] = if closed {
                pairing_closed(ops, u, v)?
            } else {
                pairing_integral(ops, u, v, &chi, 1.0 / 256.0)?
            };
        }
    }
    let singular_values: Vec<f64> = if m.nrows() == 0 || m.ncols() == 0 {
        Vec::new()
    } else {
        m.clone().svd(false, false).singular_values.iter().copied().collect()
    };
    let top = singular_values.iter().copied().fold(0.0, f64::max);
    let rank = singular_values.iter().filter(|&&s| s > 1e-10 * top.max(1e-300)).count();
    Ok(GramReport { matrix: m, rank, singular_values })
}
