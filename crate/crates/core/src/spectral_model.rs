//! Cross-sections described only by their form-Laplacian spectra, and the
//! translation-invariant mode operators they induce on the cylinder.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::{Num, Zero};
use serde_json::Value;

use crate::error::{parse_err, Error, Result};

/// Eigenvalues closer than this are merged when ingesting spectra.
pub const MERGE_TOL: f64 = 1e-12;

/// Per-degree list of (eigenvalue, multiplicity) of the cross-section Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionSpectrum {
    pub name: String,
    pub dimension: usize,
    degrees: BTreeMap<usize, Vec<(f64, usize)>>,
    twist: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl CrossSectionSpectrum {
    /// Builds a spectrum, sorting each list and merging near-equal eigenvalues.
    pub fn new(
        name: impl Into<String>,
        dimension: usize,
        degrees: BTreeMap<usize, Vec<(f64, usize)>>,
    ) -> Result<Self> {
        let mut clean = BTreeMap::new();
        for (q, list) in degrees {
            for (i, &(nu, mult)) in list.iter().enumerate() {
                if !nu.is_finite() || nu < 0.0 {
                    return Err(parse_err(
                        format!("degrees.{q}[{i}].nu"),
                        format!("eigenvalue must be finite and nonnegative, got {nu}"),
                    ));
                }
                if mult == 0 {
                    return Err(parse_err(
                        format!("degrees.{q}[{i}].mult"),
                        "multiplicity must be positive",
                    ));
                }
            }
            clean.insert(q, merge_sorted(list));
        }
        Ok(Self {
            name: name.into(),
            dimension,
            degrees: clean,
            twist: BTreeMap::new(),
        })
    }

    /// Sorted (eigenvalue, multiplicity) list of degree `q`; empty if absent.
    pub fn degree(&self, q: usize) -> &[(f64, usize)] {
        self.degrees.get(&q).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn degrees(&self) -> impl Iterator<Item = (usize, &[(f64, usize)])> {
        self.degrees.iter().map(|(q, v)| (*q, v.as_slice()))
    }

    /// Multiplicity of the zero eigenvalue in degree `q`.
    pub fn betti(&self, q: i64) -> usize {
        if q < 0 {
            return 0;
        }
        self.degree(q as usize)
            .iter()
            .filter(|(nu, _)| *nu == 0.0)
            .map(|(_, m)| *m)
            .sum()
    }

    /// b^{q-1} + b^q: the number of zero modes of the degree-q cylinder Laplacian.
    pub fn zero_mode_count(&self, q: i64) -> usize {
        self.betti(q) + self.betti(q - 1)
    }

    /// Smallest positive eigenvalue over degrees q and q-1, if any.
    pub fn first_positive(&self, q: i64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for d in [q, q - 1] {
            if d < 0 {
                continue;
            }
            for &(nu, _) in self.degree(d as usize) {
                if nu > 0.0 {
                    best = Some(best.map_or(nu, |b: f64| b.min(nu)));
                }
            }
        }
        best
    }

    /// Attaches an orthogonal twist on the eigenspace `index` of degree `q`.
    pub fn set_twist(&mut self, q: usize, index: usize, gamma: DMatrix<f64>) -> Result<()> {
        let field = format!("twist.{q}.{index}");
        let list = self.degree(q);
        let Some(&(_, mult)) = list.get(index) else {
            return Err(parse_err(field, "no such eigenspace"));
        };
        if gamma.nrows() != mult || gamma.ncols() != mult {
            return Err(parse_err(
                field,
                format!("expected a {mult}x{mult} matrix, got {}x{}", gamma.nrows(), gamma.ncols()),
            ));
        }
        let defect = (gamma.transpose() * &gamma - DMatrix::identity(mult, mult)).amax();
        if defect > 1e-10 {
            return Err(parse_err(field, format!("matrix is not orthogonal (defect {defect:.2e})")));
        }
        self.twist.insert((q, index), gamma);
        Ok(())
    }

    /// Twist on eigenspace `index` of degree `q`; identity when none was given.
    pub fn twist(&self, q: usize, index: usize) -> Option<&DMatrix<f64>> {
        self.twist.get(&(q, index))
    }

    pub fn has_nontrivial_twist(&self) -> bool {
        self.twist
            .values()
            .any(|g| (g - DMatrix::identity(g.nrows(), g.ncols())).amax() > 1e-14)
    }

    /// Parses the JSON spectrum format.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| parse_err("<document>", e.to_string()))?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("<document>", "expected a JSON object"))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "name" | "dimension" | "degrees" | "twist") {
                return Err(parse_err(key.clone(), "unknown key"));
            }
        }
        let name = obj
            .get("name")
            .ok_or_else(|| parse_err("name", "missing"))?
            .as_str()
            .ok_or_else(|| parse_err("name", "expected a string"))?
            .to_string();
        let dimension = obj
            .get("dimension")
            .ok_or_else(|| parse_err("dimension", "missing"))?
            .as_u64()
            .ok_or_else(|| parse_err("dimension", "expected a nonnegative integer"))?
            as usize;
        let degrees_obj = obj
            .get("degrees")
            .ok_or_else(|| parse_err("degrees", "missing"))?
            .as_object()
            .ok_or_else(|| parse_err("degrees", "expected an object keyed by degree"))?;
        let mut degrees = BTreeMap::new();
        for (key, list) in degrees_obj {
            let q: usize = key
                .parse()
                .map_err(|_| parse_err(format!("degrees.{key}"), "degree key must be a nonnegative integer"))?;
            let arr = list
                .as_array()
                .ok_or_else(|| parse_err(format!("degrees.{key}"), "expected an array of [nu, mult]"))?;
            let mut pairs = Vec::with_capacity(arr.len());
            for (i, entry) in arr.iter().enumerate() {
                let field = format!("degrees.{key}[{i}]");
                let pair = entry
                    .as_array()
                    .filter(|p| p.len() == 2)
                    .ok_or_else(|| parse_err(field.clone(), "expected [nu, mult]"))?;
                let nu = pair[0]
                    .as_f64()
                    .ok_or_else(|| parse_err(format!("{field}.nu"), "expected a number"))?;
                let mult = json_count(&pair[1])
                    .ok_or_else(|| parse_err(format!("{field}.mult"), "expected a positive integer"))?;
                pairs.push((nu, mult));
            }
            degrees.insert(q, pairs);
        }
        let mut spec = Self::new(name, dimension, degrees)?;
        if let Some(tw) = obj.get("twist") {
            let tw = tw
                .as_object()
                .ok_or_else(|| parse_err("twist", "expected an object keyed by degree"))?;
            for (qkey, per) in tw {
                let q: usize = qkey
                    .parse()
                    .map_err(|_| parse_err(format!("twist.{qkey}"), "degree key must be an integer"))?;
                let per = per
                    .as_object()
                    .ok_or_else(|| parse_err(format!("twist.{qkey}"), "expected an object keyed by eigenspace index"))?;
                for (ikey, mat) in per {
                    let field = format!("twist.{qkey}.{ikey}");
                    let idx: usize = ikey
                        .parse()
                        .map_err(|_| parse_err(field.clone(), "index must be an integer"))?;
                    let rows = mat
                        .as_array()
                        .ok_or_else(|| parse_err(field.clone(), "expected a matrix"))?;
                    let n = rows.len();
                    let mut m = DMatrix::zeros(n, n);
                    for (r, row) in rows.iter().enumerate() {
                        let row = row
                            .as_array()
                            .filter(|x| x.len() == n)
                            .ok_or_else(|| parse_err(field.clone(), "matrix must be square"))?;
                        for (c, x) in row.iter().enumerate() {
                            m[(r, c)] = x
                                .as_f64()
                                .ok_or_else(|| parse_err(field.clone(), "entries must be numbers"))?;
                        }
                    }
                    spec.set_twist(q, idx, m)?;
                }
            }
        }
        Ok(spec)
    }

    pub fn to_json_value(&self) -> Value {
        let mut degrees = serde_json::Map::new();
        for (q, list) in &self.degrees {
            let arr: Vec<Value> = list
                .iter()
                .map(|(nu, m)| serde_json::json!([nu, m]))
                .collect();
            degrees.insert(q.to_string(), Value::Array(arr));
        }
        serde_json::json!({
            "name": self.name,
            "dimension": self.dimension,
            "degrees": degrees,
        })
    }
}

fn json_count(v: &Value) -> Option<usize> {
    if let Some(u) = v.as_u64() {
        return Some(u as usize);
    }
    let x = v.as_f64()?;
    (x >= 0.0 && x.fract() == 0.0).then_some(x as usize)
}

fn merge_sorted(mut list: Vec<(f64, usize)>) -> Vec<(f64, usize)> {
    list.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, usize)> = Vec::with_capacity(list.len());
    for (nu, m) in list {
        match out.last_mut() {
            Some(last) if (nu - last.0).abs() <= MERGE_TOL => last.1 += m,
            _ => out.push((nu, m)),
        }
    }
    out
}

/// Spectrum of the circle of the given length: degree 0 and 1 coincide.
pub fn circle_spectrum(length: f64, max_modes: usize) -> Result<CrossSectionSpectrum> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::InvalidArgument(format!("circle length must be positive, got {length}")));
    }
    if max_modes < 1 {
        return Err(Error::InvalidArgument("max_modes must be at least 1".into()));
    }
    let mut list = vec![(0.0, 1)];
    for k in 1..=max_modes {
        let w = 2.0 * PI * k as f64 / length;
        list.push((w * w, 2));
    }
    let mut degrees = BTreeMap::new();
    degrees.insert(0, list.clone());
    degrees.insert(1, list);
    CrossSectionSpectrum::new(format!("circle(length={length})"), 1, degrees)
}

/// Flat unit-square torus, lattice truncated at |m|, |n| <= max_lattice.
pub fn torus2_spectrum(max_lattice: usize) -> Result<CrossSectionSpectrum> {
    if max_lattice < 1 {
        return Err(Error::InvalidArgument("max_lattice must be at least 1".into()));
    }
    let m = max_lattice as i64;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for a in -m..=m {
        for b in -m..=m {
            *counts.entry(a * a + b * b).or_default() += 1;
        }
    }
    let scalar: Vec<(f64, usize)> = counts
        .into_iter()
        .map(|(k, c)| (4.0 * PI * PI * k as f64, c))
        .collect();
    let mut degrees = BTreeMap::new();
    for (q, binom) in [(0usize, 1usize), (1, 2), (2, 1)] {
        degrees.insert(q, scalar.iter().map(|&(nu, c)| (nu, c * binom)).collect());
    }
    CrossSectionSpectrum::new(format!("torus2(max_lattice={max_lattice})"), 2, degrees)
}

/// Reads a spectrum file in the JSON schema.
pub fn load_spectrum(path: impl AsRef<Path>) -> Result<CrossSectionSpectrum> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    CrossSectionSpectrum::from_json_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DegreeTag {
    /// Component along q-forms of the cross-section.
    Alpha,
    /// Component dt ∧ β with β a (q-1)-form.
    Beta,
}

impl DegreeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DegreeTag::Alpha => "alpha",
            DegreeTag::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeKind {
    /// Symbol λ² + ν: the cylinder Laplacian on one cross-section eigenmode.
    Laplace,
    /// Zero-mode block of d + d*: symbol iλJ on the pair (α, dt∧β), ν = 0.
    Dirac,
    /// Symbol λ² − ν: real roots ±√ν, used to exercise distinct real rates.
    Helmholtz,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Laplace => "laplace",
            ModeKind::Dirac => "dirac",
            ModeKind::Helmholtz => "helmholtz",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOperator {
    pub kind: ModeKind,
    pub nu: f64,
    pub degree_tag: DegreeTag,
}

impl ModeOperator {
    pub fn laplace(nu: f64, degree_tag: DegreeTag) -> Self {
        assert!(nu >= 0.0, "mode eigenvalue must be nonnegative");
        Self { kind: ModeKind::Laplace, nu, degree_tag }
    }

    pub fn dirac() -> Self {
        Self { kind: ModeKind::Dirac, nu: 0.0, degree_tag: DegreeTag::Alpha }
    }

    pub fn helmholtz(omega: f64) -> Self {
        Self { kind: ModeKind::Helmholtz, nu: omega * omega, degree_tag: DegreeTag::Alpha }
    }

    /// Number of scalar components the operator acts on.
    pub fn fiber_dim(&self) -> usize {
        match self.kind {
            ModeKind::Dirac => 2,
            _ => 1,
        }
    }

    pub fn is_zero_mode(&self) -> bool {
        self.nu == 0.0
    }

    /// Taylor coefficients a_n of the scalar symbol factor s at λ0 (P(λ) = s(λ)·M).
    pub fn symbol_taylor<T: Num + Clone>(&self, lambda0: &T, nu: &T) -> Vec<T> {
        let two = T::one() + T::one();
        match self.kind {
            ModeKind::Laplace => vec![
                lambda0.clone() * lambda0.clone() + nu.clone(),
                two * lambda0.clone(),
                T::one(),
            ],
            ModeKind::Helmholtz => vec![
                lambda0.clone() * lambda0.clone() - nu.clone(),
                two * lambda0.clone(),
                T::one(),
            ],
            ModeKind::Dirac => vec![lambda0.clone(), T::one()],
        }
    }

    /// Fixed matrix factor M of the symbol, as (re, im) integer entries.
    /// Laplace/Helmholtz: [1]. Dirac: iJ with J = [[0,-1],[1,0]] on (α, β).
    pub fn symbol_matrix(&self) -> Vec<Vec<(i32, i32)>> {
        match self.kind {
            ModeKind::Dirac => vec![vec![(0, 0), (0, -1)], vec![(0, 1), (0, 0)]],
            _ => vec![vec![(1, 0)]],
        }
    }

    /// Inverse of the matrix factor. For Dirac (iJ)^{-1} = iJ.
    pub fn symbol_matrix_inv(&self) -> Vec<Vec<(i32, i32)>> {
        self.symbol_matrix()
    }

    /// P(λ)^{-1} for a scalar-fiber operator.
    pub fn resolvent_scalar(&self, lambda: Complex64) -> Complex64 {
        let a = self.symbol_taylor(&lambda, &Complex64::new(self.nu, 0.0));
        Complex64::new(1.0, 0.0) / a[0]
    }
}

/// Modes of the degree-q cylinder Laplacian with ν ≤ cutoff, one per unit of
/// multiplicity, drawn from degree q (alpha) and degree q-1 (beta).
///
/// Ordered by (ν, tag), so every prefix is stable under raising the cutoff and
/// the zero modes come first, alphas before betas.
pub fn mode_list(spec: &CrossSectionSpectrum, q: i64, cutoff: f64) -> Result<Vec<ModeOperator>> {
    if q < 0 {
        return Err(Error::InvalidArgument(format!("form degree must be nonnegative, got {q}")));
    }
    if !(cutoff > 0.0) {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {cutoff}")));
    }
    let mut modes = Vec::new();
    let mut push = |d: i64, tag: DegreeTag| {
        if d < 0 {
            return;
        }
        for &(nu, mult) in spec.degree(d as usize) {
            if nu <= cutoff {
                for _ in 0..mult {
                    modes.push(ModeOperator::laplace(nu, tag));
                }
            }
        }
    };
    push(q, DegreeTag::Alpha);
    push(q - 1, DegreeTag::Beta);
    modes.sort_by(|a, b| a.nu.total_cmp(&b.nu).then(a.degree_tag.cmp(&b.degree_tag)));
    Ok(modes)
}

/// Default mode cutoff 25 (π/T_max)² s_max.
pub fn default_cutoff(t_max: f64, s_max: f64) -> f64 {
    25.0 * (PI / t_max).powi(2) * s_max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub lambda: Complex64,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootData {
    pub roots: Vec<Root>,
    pub real_roots: Vec<Root>,
    pub max_real_order: usize,
}

pub fn roots_of(op: &ModeOperator) -> RootData {
    let s = op.nu.sqrt();
    let roots = match op.kind {
        ModeKind::Dirac => vec![Root { lambda: Complex64::new(0.0, 0.0), order: 1 }],
        _ if op.nu == 0.0 => vec![Root { lambda: Complex64::new(0.0, 0.0), order: 2 }],
        ModeKind::Laplace => vec![
            Root { lambda: Complex64::new(0.0, s), order: 1 },
            Root { lambda: Complex64::new(0.0, -s), order: 1 },
        ],
        ModeKind::Helmholtz => vec![
            Root { lambda: Complex64::new(s, 0.0), order: 1 },
            Root { lambda: Complex64::new(-s, 0.0), order: 1 },
        ],
    };
    let real_roots: Vec<Root> = roots.iter().copied().filter(|r| r.lambda.im == 0.0).collect();
    let max_real_order = real_roots.iter().map(|r| r.order).max().unwrap_or(0);
    RootData { roots, real_roots, max_real_order }
}

/// Laurent coefficients of 1/s at a point, given the Taylor coefficients of s.
///
/// Returns (d, b) with 1/s(λ0+z) = z^{-d} Σ_k b_k z^k, k = 0..=len-1.
pub fn scalar_laurent<T: Num + Clone>(
    taylor: &[T],
    is_zero: impl Fn(&T) -> bool,
    count: usize,
) -> (usize, Vec<T>) {
    let d = taylor
        .iter()
        .position(|a| !is_zero(a))
        .expect("symbol vanishes identically");
    let a = |n: usize| taylor.get(n).cloned().unwrap_or_else(T::zero);
    let lead = a(d);
    let mut b: Vec<T> = Vec::with_capacity(count);
    for k in 0..count {
        if k == 0 {
            b.push(T::one() / lead.clone());
            continue;
        }
        let mut acc = T::zero();
        for j in 1..=k {
            let aj = a(d + j);
            if !is_zero(&aj) {
                acc = acc + aj * b[k - j].clone();
            }
        }
        b.push(T::zero() - acc / lead.clone());
    }
    (d, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaurentCoefficients {
    pub at_root: Complex64,
    /// Pole order d: coefficients start at m = -d.
    pub order: usize,
    /// R_m for m = -d..=m_max, each a fiber map (1x1 or 2x2).
    pub coeffs: BTreeMap<i32, DMatrix<Complex64>>,
}

impl LaurentCoefficients {
    pub fn get(&self, m: i32) -> Option<&DMatrix<Complex64>> {
        self.coeffs.get(&m)
    }

    /// Evaluates Σ R_m (λ - λ0)^m.
    pub fn reconstruct(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let z = lambda - self.at_root;
        let n = self.coeffs.values().next().map(|m| m.nrows()).unwrap_or(1);
        let mut acc = DMatrix::zeros(n, n);
        for (&m, r) in &self.coeffs {
            acc += r * z.powi(m);
        }
        acc
    }
}

fn complex_matrix(entries: &[Vec<(i32, i32)>]) -> DMatrix<Complex64> {
    let n = entries.len();
    DMatrix::from_fn(n, n, |r, c| Complex64::new(entries[r][c].0 as f64, entries[r][c].1 as f64))
}

/// Laurent expansion of P(λ)^{-1} at λ0, up to and including m = m_max.
///
/// Panics if the emitted data fails the convolution identities
/// Σ_{m+n=l} (1/n!) ∂ⁿP(λ0) R_m = [l = 0]; that would be an internal bug.
pub fn resolvent_laurent(op: &ModeOperator, lambda0: Complex64, m_max: usize) -> LaurentCoefficients {
    let taylor = op.symbol_taylor(&lambda0, &Complex64::new(op.nu, 0.0));
    let scale = 1.0 + taylor.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    let is_zero = |a: &Complex64| a.norm() <= tol;
    let (d, b) = scalar_laurent(&taylor, is_zero, d_plus(m_max, &taylor, is_zero));
    let minv = complex_matrix(&op.symbol_matrix_inv());
    let mut coeffs = BTreeMap::new();
    for (k, bk) in b.iter().enumerate() {
        coeffs.insert(k as i32 - d as i32, &minv * *bk);
    }
    // Convolution identities, checked on the scalar factor.
    for l in -(d as i32)..=(m_max as i32) {
        let mut acc = Complex64::zero();
        for (n, an) in taylor.iter().enumerate() {
            let m = l - n as i32;
            if m >= -(d as i32) {
                let idx = (m + d as i32) as usize;
                if idx < b.len() {
                    acc += an * b[idx];
                }
            }
        }
        let target = if l == 0 { 1.0 } else { 0.0 };
        let mag = b.iter().map(|x| x.norm()).fold(1.0, f64::max) * scale;
        assert!(
            (acc - target).norm() <= 1e-10 * mag,
            "Laurent identity violated at l = {l}: {acc}"
        );
    }
    LaurentCoefficients { at_root: lambda0, order: d, coeffs }
}

fn d_plus(m_max: usize, taylor: &[Complex64], is_zero: impl Fn(&Complex64) -> bool) -> usize {
    let d = taylor.iter().position(|a| !is_zero(a)).unwrap_or(0);
    m_max + d + 1
}
