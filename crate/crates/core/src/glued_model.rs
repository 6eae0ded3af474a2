//! Building blocks as half-line mode operators, and the glued operator on
//! [−T−1−L₁, T+1+L₂].
//!
//! Both blocks and the glued interval share one cell-centred grid: block
//! coordinate s_j = (j + ½)h, glued coordinate x_j = −T−1−L₁ + (j + ½)h, with
//! ρ₁ = x + T + 1 = s₁ − L₁ and ρ₂ = T + 1 − x = s₂ − L₂.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{parse_err, Error, Result};
use crate::neck_inverse::divides;
use crate::quadrature::{chi, ls_line};
use crate::spectral_model::{mode_list, CrossSectionSpectrum, DegreeTag, ModeKind, ModeOperator};
use crate::tridiag::SymTridiag;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Neumann,
    Dirichlet,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Neumann => "neumann",
            Boundary::Dirichlet => "dirichlet",
        }
    }

    /// Diagonal of the end row, in units of 1/h².
    fn end_diag(self) -> f64 {
        match self {
            Boundary::Neumann => 1.0,
            Boundary::Dirichlet => 3.0,
        }
    }
}

/// Piecewise-linear potential samples with an exponential tail.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    samples: Vec<(f64, f64)>,
}

impl Potential {
    fn new(samples: Vec<(f64, f64)>) -> Self {
        Self { samples }
    }

    fn eval(&self, s: f64, mu: f64) -> f64 {
        let sm = &self.samples;
        if s <= sm[0].0 {
            return sm[0].1;
        }
        let last = sm[sm.len() - 1];
        if s >= last.0 {
            return last.1 * (-mu * (s - last.0)).exp();
        }
        // First sample strictly to the right of s; equal abscissae encode jumps.
        let k = sm.partition_point(|p| p.0 <= s);
        let (a, b) = (sm[k - 1], sm[k]);
        if b.0 == a.0 {
            return b.1;
        }
        a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
    }
}

/// A half-line mode model of one EAC block: compact part s ∈ [0, L], outer
/// boundary condition at s = 0, and per-mode potentials decaying like
/// e^{−μ(s−L)} on the cylindrical end.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingBlock {
    pub l: f64,
    pub boundary: Boundary,
    pub mu: f64,
    pub spectrum: Arc<CrossSectionSpectrum>,
    potentials: BTreeMap<usize, Potential>,
    /// Decay amplitudes A per mode with |V(s)| ≤ A e^{−μ(s−L)} for s ≥ L.
    amplitudes: BTreeMap<usize, f64>,
}

impl BuildingBlock {
    pub fn new(
        spectrum: Arc<CrossSectionSpectrum>,
        l: f64,
        boundary: Boundary,
        mu: f64,
        potentials: BTreeMap<usize, Vec<(f64, f64)>>,
    ) -> Result<Self> {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(parse_err("L", format!("must be a nonnegative number, got {l}")));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(parse_err("mu", format!("decay rate must be positive, got {mu}")));
        }
        let mut pots = BTreeMap::new();
        let mut amps = BTreeMap::new();
        for (idx, samples) in potentials {
            let field = format!("potentials.{idx}");
            if samples.is_empty() {
                return Err(parse_err(field, "needs at least one sample"));
            }
            for w in samples.windows(2) {
                if w[1].0 < w[0].0 {
                    return Err(parse_err(field, "sample abscissae must be nondecreasing"));
                }
            }
            if samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite() || *t < 0.0) {
                return Err(parse_err(field, "samples must be finite with t ≥ 0"));
            }
            let pot = Potential::new(samples);
            let amp = check_decay(&pot, l, mu).map_err(|m| parse_err(format!("potentials.{idx}"), m))?;
            pots.insert(idx, pot);
            amps.insert(idx, amp);
        }
        Ok(Self { l, boundary, mu, spectrum, potentials: pots, amplitudes: amps })
    }

    /// Unperturbed block.
    pub fn free(spectrum: Arc<CrossSectionSpectrum>, l: f64, boundary: Boundary, mu: f64) -> Result<Self> {
        Self::new(spectrum, l, boundary, mu, BTreeMap::new())
    }

    /// Neumann block whose zero mode `mode_index` carries the potential that
    /// makes u(s) = 1 − c(e^{−μs} + e^{−2μs} − e^{−3μs}) an exact discrete
    /// kernel element on the grid of step h. Samples run to s_max.
    ///
    /// u′(0) = 0, and V e^{μ(s−L)} is non-increasing on s ≥ L once μL ≥ 1.5,
    /// so the decay contract holds; 0 ≤ c < 1 keeps u positive.
    pub fn from_profile(
        spectrum: Arc<CrossSectionSpectrum>,
        l: f64,
        mu: f64,
        c: f64,
        mode_index: usize,
        h: f64,
        s_max: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&c) {
            return Err(parse_err("c", format!("profile amplitude must lie in [0, 1), got {c}")));
        }
        let n = (s_max / h).ceil() as usize + 1;
        // u = 1 − c Σ β_k e^{−kμs}; second differences termwise, since
        // differencing u ≈ 1 directly cancels catastrophically in the tail.
        const BETA: [(f64, f64); 3] = [(1.0, 1.0), (2.0, 1.0), (3.0, -1.0)];
        let s_of = |j: usize| (j as f64 + 0.5) * h;
        let u = |s: f64| 1.0 - c * BETA.iter().map(|&(k, b)| b * (-k * mu * s).exp()).sum::<f64>();
        let mut samples = Vec::with_capacity(n);
        for j in 0..n {
            let s = s_of(j);
            let d2 = if j == 0 {
                u(s_of(1)) - u(s)
            } else {
                -c * BETA
                    .iter()
                    .map(|&(k, b)| b * (-k * mu * s).exp() * (2.0 * (k * mu * h).cosh() - 2.0))
                    .sum::<f64>()
            };
            samples.push((s, d2 / (h * h * u(s))));
        }
        let mut pots = BTreeMap::new();
        pots.insert(mode_index, samples);
        Self::new(spectrum, l, Boundary::Neumann, mu, pots)
    }

    /// Parses the block JSON schema against the given spectrum.
    pub fn from_json_value(value: &Value, spectrum: Arc<CrossSectionSpectrum>) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| parse_err("block", "expected a JSON object"))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "L" | "boundary" | "mu" | "potentials") {
                return Err(parse_err(key.clone(), "unknown key"));
            }
        }
        let num = |k: &str| -> Result<f64> {
            obj.get(k)
                .ok_or_else(|| parse_err(k, "missing"))?
                .as_f64()
                .ok_or_else(|| parse_err(k, "expected a number"))
        };
        let l = num("L")?;
        let mu = num("mu")?;
        let boundary = match obj.get("boundary").and_then(|b| b.as_str()) {
            Some("neumann") => Boundary::Neumann,
            Some("dirichlet") => Boundary::Dirichlet,
            _ => return Err(parse_err("boundary", "expected \"neumann\" or \"dirichlet\"")),
        };
        let mut potentials = BTreeMap::new();
        if let Some(p) = obj.get("potentials") {
            let p = p.as_object().ok_or_else(|| parse_err("potentials", "expected an object"))?;
            for (key, list) in p {
                let field = format!("potentials.{key}");
                let idx: usize = key.parse().map_err(|_| parse_err(field.clone(), "mode index must be an integer"))?;
                let arr = list.as_array().ok_or_else(|| parse_err(field.clone(), "expected [[t, V], ...]"))?;
                let mut samples = Vec::with_capacity(arr.len());
                for (i, e) in arr.iter().enumerate() {
                    let pair = e
                        .as_array()
                        .filter(|x| x.len() == 2)
                        .and_then(|x| Some((x[0].as_f64()?, x[1].as_f64()?)))
                        .ok_or_else(|| parse_err(format!("{field}[{i}]"), "expected [t, V]"))?;
                    samples.push(pair);
                }
                potentials.insert(idx, samples);
            }
        }
        Self::new(spectrum, l, boundary, mu, potentials)
    }

    pub fn has_potential(&self, mode_index: usize) -> bool {
        self.potentials.contains_key(&mode_index)
    }

    pub fn potential_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.potentials.keys().copied()
    }

    /// V of mode `mode_index` at block coordinate s (0 if none given).
    pub fn potential(&self, mode_index: usize, s: f64) -> f64 {
        self.potentials.get(&mode_index).map_or(0.0, |p| p.eval(s, self.mu))
    }

    pub fn decay_amplitude(&self, mode_index: usize) -> f64 {
        self.amplitudes.get(&mode_index).copied().unwrap_or(0.0)
    }

    /// Half-line matrix for one mode on cells s_j, j < n, outer condition at
    /// s = 0 and a Dirichlet wall at s = n h.
    pub fn mode_matrix(&self, mode_index: usize, nu: f64, h: f64, n: usize) -> SymTridiag {
        let ih2 = 1.0 / (h * h);
        let mut diag: Vec<f64> = (0..n)
            .map(|j| 2.0 * ih2 + nu + self.potential(mode_index, (j as f64 + 0.5) * h))
            .collect();
        diag[0] += (self.boundary.end_diag() - 2.0) * ih2;
        diag[n - 1] += ih2;
        SymTridiag::new(diag, vec![-ih2; n - 1])
    }
}

fn check_decay(pot: &Potential, l: f64, mu: f64) -> std::result::Result<f64, String> {
    let weight = |s: f64| pot.eval(s, mu).abs() * (mu * (s - l)).exp();
    let mut amp: f64 = 0.0;
    for k in 0..=64 {
        amp = amp.max(weight(l + k as f64 / 64.0));
    }
    for &(s, _) in &pot.samples {
        if (l..=l + 1.0).contains(&s) {
            amp = amp.max(weight(s));
        }
    }
    for &(s, v) in &pot.samples {
        if s > l + 1.0 {
            let w = v.abs() * (mu * (s - l)).exp();
            if w > amp * (1.0 + 1e-6) {
                return Err(format!(
                    "sample at t = {s} violates the declared decay e^(-mu (t - L)) (weighted {w:.3e} > {amp:.3e})"
                ));
            }
        }
    }
    Ok(amp)
}

/// One mode of the glued operator.
#[derive(Debug, Clone, PartialEq)]
pub struct GluedMode {
    pub op: ModeOperator,
    pub index: usize,
    pub matrix: SymTridiag,
    /// Post-fade potential on the glued grid.
    pub potential: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GluedOperator {
    pub t: f64,
    pub h: f64,
    pub q: i64,
    pub cutoff: f64,
    pub blocks: [BuildingBlock; 2],
    pub modes: Vec<GluedMode>,
}

impl GluedOperator {
    pub fn n(&self) -> usize {
        self.modes.first().map_or_else(|| grid_len(self.t, self.h, &self.blocks), |m| m.matrix.len())
    }

    pub fn left(&self) -> f64 {
        -self.t - 1.0 - self.blocks[0].l
    }

    pub fn x(&self, j: usize) -> f64 {
        self.left() + (j as f64 + 0.5) * self.h
    }

    /// Block-1 coordinate s₁ of cell j.
    pub fn s1(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }

    /// Block-2 coordinate s₂ of cell j.
    pub fn s2(&self, j: usize) -> f64 {
        ((self.n() - 1 - j) as f64 + 0.5) * self.h
    }

    pub fn rho1(&self, j: usize) -> f64 {
        self.s1(j) - self.blocks[0].l
    }

    pub fn rho2(&self, j: usize) -> f64 {
        self.s2(j) - self.blocks[1].l
    }

    pub fn zero_modes(&self) -> impl Iterator<Item = (usize, &GluedMode)> {
        self.modes.iter().enumerate().filter(|(_, m)| m.op.nu == 0.0)
    }

    pub fn apply(&self, mode: usize, u: &[f64]) -> Vec<f64> {
        self.modes[mode].matrix.matvec(u)
    }
}

fn grid_len(t: f64, h: f64, blocks: &[BuildingBlock; 2]) -> usize {
    ((2.0 * t + 2.0 + blocks[0].l + blocks[1].l) / h).round() as usize
}

/// Glues two blocks along a neck of half-length T + 1 (mode by mode).
pub fn assemble(
    block1: &BuildingBlock,
    block2: &BuildingBlock,
    spec: &Arc<CrossSectionSpectrum>,
    q: i64,
    t: f64,
    h: f64,
    cutoff: f64,
) -> Result<GluedOperator> {
    if *block1.spectrum != **spec || *block2.spectrum != **spec {
        return Err(Error::Matching(
            "both blocks must be built on the same cross-section spectrum as the neck".into(),
        ));
    }
    if !(h > 0.0 && h <= 1.0 / 16.0) {
        return Err(Error::InvalidArgument(format!("grid step must satisfy 0 < h ≤ 1/16, got {h}")));
    }
    if !(t >= 2.0) {
        return Err(Error::InvalidArgument(format!("neck half-length must be at least 2, got {t}")));
    }
    for (name, v) in [("T", t), ("L1", block1.l), ("L2", block2.l)] {
        if !divides(h, v) {
            return Err(Error::InvalidArgument(format!("{name} = {v} is not a multiple of h = {h}")));
        }
    }
    let ops = mode_list(spec, q, cutoff)?;
    check_twist(spec, q, &ops, block2)?;
    let blocks = [block1.clone(), block2.clone()];
    let n = grid_len(t, h, &blocks);
    let ih2 = 1.0 / (h * h);
    let modes: Vec<GluedMode> = ops
        .par_iter()
        .enumerate()
        .map(|(index, op)| {
            let potential: Vec<f64> = (0..n)
                .map(|j| {
                    let s1 = (j as f64 + 0.5) * h;
                    let s2 = ((n - 1 - j) as f64 + 0.5) * h;
                    let mut v = 0.0;
                    if block1.has_potential(index) {
                        v += (1.0 - chi(s1 - block1.l - t)) * block1.potential(index, s1);
                    }
                    if block2.has_potential(index) {
                        v += (1.0 - chi(s2 - block2.l - t)) * block2.potential(index, s2);
                    }
                    v
                })
                .collect();
            let mut diag: Vec<f64> = potential.iter().map(|v| 2.0 * ih2 + op.nu + v).collect();
            diag[0] += (block1.boundary.end_diag() - 2.0) * ih2;
            diag[n - 1] += (block2.boundary.end_diag() - 2.0) * ih2;
            GluedMode {
                op: *op,
                index,
                matrix: SymTridiag::new(diag, vec![-ih2; n - 1]),
                potential,
            }
        })
        .collect();
    Ok(GluedOperator { t, h, q, cutoff, blocks, modes })
}

/// A non-identity twist is only representable mode by mode when block 2
/// treats every mode of the twisted eigenspace alike.
fn check_twist(spec: &CrossSectionSpectrum, q: i64, ops: &[ModeOperator], block2: &BuildingBlock) -> Result<()> {
    if !spec.has_nontrivial_twist() {
        return Ok(());
    }
    for (tag, d) in [(DegreeTag::Alpha, q), (DegreeTag::Beta, q - 1)] {
        if d < 0 {
            continue;
        }
        for (list_idx, &(nu, _)) in spec.degree(d as usize).iter().enumerate() {
            let Some(g) = spec.twist(d as usize, list_idx) else { continue };
            if (g - nalgebra::DMatrix::identity(g.nrows(), g.ncols())).amax() <= 1e-14 {
                continue;
            }
            let members: Vec<usize> = ops
                .iter()
                .enumerate()
                .filter(|(_, m)| m.degree_tag == tag && m.nu == nu)
                .map(|(i, _)| i)
                .collect();
            let first = block2.potentials.get(&members[0]);
            if members.iter().any(|i| block2.potentials.get(i) != first) {
                return Err(Error::Unsupported(format!(
                    "twist on degree {d} eigenspace ν = {nu} mixes modes with different block potentials"
                )));
            }
        }
    }
    Ok(())
}

/// Kernel data of one zero mode of a block.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroModeKernel {
    pub mode_index: usize,
    /// The solution φ satisfying the outer condition, with max |φ| = 1 on [0, R].
    pub solution: Vec<f64>,
    /// Trace φ ≈ a + b ρ on the end, ρ = s − L.
    pub a: f64,
    pub b: f64,
    pub fit_residual: f64,
    pub dim_k: usize,
    pub dim_k0: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockKernelData {
    pub h: f64,
    pub zero_modes: Vec<ZeroModeKernel>,
    /// Positive modes certified to carry no sub-exponential kernel.
    pub empty_positive_modes: Vec<usize>,
}

impl BlockKernelData {
    pub fn dim_k(&self) -> usize {
        self.zero_modes.iter().map(|z| z.dim_k).sum()
    }

    pub fn dim_k0(&self) -> usize {
        self.zero_modes.iter().map(|z| z.dim_k0).sum()
    }

    pub fn get(&self, mode_index: usize) -> Option<&ZeroModeKernel> {
        self.zero_modes.iter().find(|z| z.mode_index == mode_index)
    }
}

/// Far cutoff for the shooting: R = L + max(10, 20/μ).
pub fn shooting_reach(block: &BuildingBlock) -> f64 {
    block.l + (10.0f64).max(20.0 / block.mu)
}

/// Shoots the discrete zero-mode equation from the outer boundary.
pub fn shoot(block: &BuildingBlock, mode_index: usize, h: f64, n: usize) -> Vec<f64> {
    let v = |j: usize| block.potential(mode_index, (j as f64 + 0.5) * h);
    let h2 = h * h;
    let mut u = vec![0.0; n];
    let (u0, u1) = match block.boundary {
        Boundary::Neumann => (1.0, 1.0 + h2 * v(0)),
        Boundary::Dirichlet => (0.5 * h, (3.0 + h2 * v(0)) * 0.5 * h),
    };
    u[0] = u0;
    if n > 1 {
        u[1] = u1;
    }
    for j in 1..n.saturating_sub(1) {
        u[j + 1] = (2.0 + h2 * v(j)) * u[j] - u[j - 1];
    }
    u
}

/// Kernel classification for every zero mode of the block.
pub fn block_kernel(block: &BuildingBlock, spec: &CrossSectionSpectrum, q: i64, h: f64, tol: f64) -> Result<BlockKernelData> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if *block.spectrum != *spec {
        return Err(Error::Matching("block spectrum differs from the given spectrum".into()));
    }
    let ops = mode_list(spec, q, f64::MAX)?;
    let reach = shooting_reach(block);
    let n = (reach / h).round() as usize;
    let mut zero_modes = Vec::new();
    let mut empty = Vec::new();
    for (idx, op) in ops.iter().enumerate() {
        if op.kind != ModeKind::Laplace {
            return Err(Error::Unsupported("blocks carry Laplace-type modes only".into()));
        }
        if op.nu > 0.0 {
            empty.push(idx);
            continue;
        }
        let mut u = shoot(block, idx, h, n);
        let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        u.iter_mut().for_each(|x| *x /= scale);
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n)
            .filter_map(|j| {
                let s = (j as f64 + 0.5) * h;
                (s >= reach - 2.0).then_some((s - block.l, u[j]))
            })
            .unzip();
        let (a, b, res) = ls_line(&xs, &ys);
        if res > 1e-4 {
            return Err(Error::Analysis(format!(
                "zero mode {idx}: end of shooting is not linear (residual {res:.2e}); decay contract violated"
            )));
        }
        let bounded = b.abs() <= tol;
        let decaying = bounded && a.abs() <= tol;
        zero_modes.push(ZeroModeKernel {
            mode_index: idx,
            solution: u,
            a,
            b,
            fit_residual: res,
            dim_k: bounded as usize,
            dim_k0: decaying as usize,
        });
    }
    Ok(BlockKernelData { h, zero_modes, empty_positive_modes: empty })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenEntry {
    pub lambda: f64,
    pub mode_index: usize,
    pub mode_nu: f64,
    pub degree_tag: DegreeTag,
    /// Position within its own mode, from 0.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenList {
    pub entries: Vec<EigenEntry>,
    /// Some mode had fewer than k eigenvalues.
    pub clipped: bool,
    /// Every eigenvalue up to here is in the list.
    pub covered: f64,
}

/// The k smallest eigenvalues of every mode, merged and sorted.
pub fn eigen_lowest(g: &GluedOperator, k: usize) -> Result<EigenList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let per: Vec<Vec<EigenEntry>> = g
        .modes
        .par_iter()
        .map(|m| {
            m.matrix
                .lowest(k)
                .into_iter()
                .enumerate()
                .map(|(i, lambda)| EigenEntry {
                    lambda,
                    mode_index: m.index,
                    mode_nu: m.op.nu,
                    degree_tag: m.op.degree_tag,
                    k: i,
                })
                .collect()
        })
        .collect();
    let clipped = g.modes.iter().any(|m| m.matrix.len() < k);
    let covered = per
        .iter()
        .zip(&g.modes)
        .filter(|(_, m)| m.matrix.len() > k)
        .map(|(p, _)| p.last().map_or(f64::INFINITY, |e| e.lambda))
        .fold(f64::INFINITY, f64::min);
    let mut entries: Vec<EigenEntry> = per.into_iter().flatten().collect();
    entries.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.mode_index.cmp(&b.mode_index)));
    Ok(EigenList { entries, clipped, covered })
}

/// Eigenvalues below `limit` in every mode, found by Sturm counts.
pub fn eigen_below(g: &GluedOperator, limit: f64) -> EigenList {
    let per: Vec<Vec<EigenEntry>> = g
        .modes
        .par_iter()
        .map(|m| {
            let count = m.matrix.count_below(limit);
            (0..count)
                .map(|i| EigenEntry {
                    lambda: m.matrix.eigenvalue(i),
                    mode_index: m.index,
                    mode_nu: m.op.nu,
                    degree_tag: m.op.degree_tag,
                    k: i,
                })
                .collect()
        })
        .collect();
    let mut entries: Vec<EigenEntry> = per.into_iter().flatten().collect();
    entries.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.mode_index.cmp(&b.mode_index)));
    EigenList { entries, clipped: false, covered: limit }
}
