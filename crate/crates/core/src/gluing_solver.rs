//! Substitute kernel, characteristic system, approximate and exact solves on
//! the glued operator.
//!
//! Everything is mode by mode. A grid field is `Vec<Vec<f64>>` indexed
//! [mode][cell] over the glued grid; all inner products carry the weight h.
//! The model is self-adjoint, so 𝒦*_T = 𝒦_T and g_i = φ_i, the block
//! solution satisfying the outer boundary condition.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glued_model::{block_kernel, shoot, BuildingBlock, GluedOperator};
use crate::output::write_csv_atomic;
use crate::quadrature::{chi, dot_h, norm_h};
use crate::tridiag::{Bordered, SymTridiag};

/// Relative tolerance classifying a block trace as bounded (b = 0).
pub const MATCH_TOL: f64 = 1e-6;
/// Rank decisions in the characteristic system.
pub const RANK_TOL: f64 = 1e-10;
/// Consistency tolerance relative to ‖f‖.
pub const CONSISTENCY_TOL: f64 = 1e-6;

/// (v, g) = v₀ g₁ − v₁ g₀ for v = v₀ + v₁t, g = g₀ + g₁t (real sections of
/// the scalar Laplace zero mode).
pub fn pair_linear(v: [f64; 2], g: [f64; 2]) -> f64 {
    v[0] * g[1] - v[1] * g[0]
}

fn norm_all(f: &[Vec<f64>], h: f64) -> f64 {
    f.iter().map(|x| norm_h(x, h).powi(2)).sum::<f64>().sqrt()
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// A pair of block kernel elements and the glued section they define.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingPair {
    /// Position in the glued mode list.
    pub mode_index: usize,
    /// Block-1 element on the block-1 grid (all zeros when absent).
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    /// Traces (a, b) meaning a + bρ_i.
    pub trace1: (f64, f64),
    pub trace2: (f64, f64),
    pub matched_at_t: bool,
    /// (1 − χ_{T+1}(ρ₁))u₁ + (1 − χ_{T+1}(ρ₂))u₂ on the glued grid.
    pub glued_section: Vec<f64>,
}

impl MatchingPair {
    /// Builds the faded section and checks κ₁[u₁](t+T+1) = κ₂[u₂](t−T−1).
    pub fn new(
        g: &GluedOperator,
        mode_index: usize,
        u1: Vec<f64>,
        u2: Vec<f64>,
        trace1: (f64, f64),
        trace2: (f64, f64),
    ) -> Result<Self> {
        let n = g.n();
        let reach = |len: usize, l: f64| (len as f64) * g.h >= l + g.t + 1.5;
        if !reach(u1.len(), g.blocks[0].l) || !reach(u2.len(), g.blocks[1].l) {
            return Err(Error::InvalidArgument(
                "block elements must be sampled at least to ρ = T + 3/2".into(),
            ));
        }
        let glued_section: Vec<f64> = (0..n)
            .map(|j| {
                let mut v = 0.0;
                let w1 = 1.0 - chi(g.rho1(j) - g.t - 1.0);
                if w1 > 0.0 {
                    v += w1 * u1[j];
                }
                let w2 = 1.0 - chi(g.rho2(j) - g.t - 1.0);
                if w2 > 0.0 {
                    v += w2 * u2[n - 1 - j];
                }
                v
            })
            .collect();
        let k1 = neck_trace(trace1, g.t, false);
        let k2 = neck_trace(trace2, g.t, true);
        let scale = 1.0 + k1[0].abs().max(k1[1].abs()).max(k2[0].abs()).max(k2[1].abs());
        let matched_at_t = (k1[0] - k2[0]).abs() <= 1e-8 * scale && (k1[1] - k2[1]).abs() <= 1e-8 * scale;
        Ok(Self { mode_index, u1, u2, trace1, trace2, matched_at_t, glued_section })
    }
}

/// Trace of a block element in the neck coordinate t, as (c₀, c₁) for
/// c₀ + c₁t. Block 1: ρ₁ = t + T + 1. Block 2: ρ₂ = T + 1 − t.
fn neck_trace((a, b): (f64, f64), big_t: f64, reversed: bool) -> [f64; 2] {
    let c0 = a + b * (big_t + 1.0);
    if reversed {
        [c0, -b]
    } else {
        [c0, b]
    }
}

/// Block length used for the half-line solves: L + 2T + 4.
fn block_len(block: &BuildingBlock, t: f64, h: f64) -> usize {
    ((block.l + 2.0 * t + 4.0) / h).round() as usize
}

/// Zero-mode block element normalized to a = 1 when bounded, sampled on
/// `len` cells; returns (values, (a, b), bounded).
fn block_element(
    block: &BuildingBlock,
    g: &GluedOperator,
    mode_index: usize,
    len: usize,
) -> Result<(Vec<f64>, (f64, f64), bool)> {
    let data = block_kernel(block, &block.spectrum, g.q, g.h, MATCH_TOL)?;
    let zk = data
        .get(mode_index)
        .ok_or_else(|| Error::Analysis(format!("mode {mode_index} is not a zero mode of the block")))?;
    let n = len.max(zk.solution.len());
    let raw = shoot(block, mode_index, g.h, n);
    let scale = raw[0] / zk.solution[0];
    let bounded = zk.dim_k == 1;
    if zk.dim_k0 == 1 {
        return Err(Error::Unsupported(format!(
            "zero mode {mode_index} has a decaying block kernel element; L² kernels are not handled by the solver"
        )));
    }
    let (div, trace) = if bounded { (scale * zk.a, (1.0, 0.0)) } else { (scale, (zk.a, zk.b)) };
    Ok((raw.iter().map(|x| x / div).collect(), trace, bounded))
}

/// Basis of 𝒦_T for the glued operator: one matched pair per zero mode whose
/// two block traces are both bounded (𝒦_{0,i} is empty in every supported
/// configuration and refused otherwise).
pub fn substitute_kernel(g: &GluedOperator) -> Result<Vec<MatchingPair>> {
    let mut out = Vec::new();
    for (mi, _) in g.zero_modes() {
        let (u1, t1, b1) = block_element(&g.blocks[0], g, mi, block_len(&g.blocks[0], g.t, g.h))?;
        let (u2, t2, b2) = block_element(&g.blocks[1], g, mi, block_len(&g.blocks[1], g.t, g.h))?;
        if b1 && b2 {
            out.push(MatchingPair::new(g, mi, u1, u2, t1, t2)?);
        }
    }
    Ok(out)
}

/// ‖P_T u_T‖/(‖u₁‖ + ‖u₂‖) with sup norms on the block elements.
pub fn approx_residual(g: &GluedOperator, pair: &MatchingPair) -> f64 {
    let pu = g.apply(pair.mode_index, &pair.glued_section);
    let n = g.n();
    // Outer rows carry the boundary condition the blocks already satisfy.
    let inner = &pu[1..n - 1];
    norm_h(inner, g.h) / (sup(&pair.u1) + sup(&pair.u2))
}

struct ZeroModeData {
    mode: usize,
    phi: [Vec<f64>; 2],
    trace: [(f64, f64); 2],
    /// Obstruction duals h_i and their images M h_i on the block grids.
    hfun: [Vec<f64>; 2],
    mh: [Vec<f64>; 2],
    block: [SymTridiag; 2],
    /// Unit (h-weighted) kernel vector of 𝒦_T in this mode, if matched.
    kernel: Option<Vec<f64>>,
    pair: Option<MatchingPair>,
    /// Row scalings of the two characteristic rows.
    row_scale: [f64; 2],
    /// Basis of 𝓔′ as coefficient pairs (c₀, c₁) of c₀ + c₁t.
    basis: Vec<[f64; 2]>,
    /// Obstruction functions (1 − χ_{T+1}(ρ_i))φ_i on the glued grid.
    obstruction: [Vec<f64>; 2],
}

/// The characteristic system at one T.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicSystem {
    /// Rows: (mode, block) pairs; columns: the 𝓔′ basis of every zero mode.
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub rank: usize,
    /// Column labels (mode index, basis vector).
    pub columns: Vec<(usize, [f64; 2])>,
    pub rows: Vec<(usize, usize)>,
}

impl CharacteristicSystem {
    /// Dense text dump for debugging.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# rows {} cols {} rank {}\n", self.matrix.nrows(), self.matrix.ncols(), self.rank));
        for (c, (m, b)) in self.columns.iter().enumerate() {
            s.push_str(&format!("# col {c}: mode {m} basis ({:.6}, {:.6})\n", b[0], b[1]));
        }
        for r in 0..self.matrix.nrows() {
            let (m, i) = self.rows[r];
            let vals: Vec<String> = (0..self.matrix.ncols()).map(|c| format!("{:.12e}", self.matrix[(r, c)])).collect();
            s.push_str(&format!("{m} {i} | {} | {:.12e}\n", vals.join(" "), self.rhs[r]));
        }
        s
    }
}

/// Solution of the characteristic system.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicSolution {
    /// v per zero mode as (mode index, (c₀, c₁)).
    pub v: Vec<(usize, [f64; 2])>,
    /// Norm of the rhs component outside the column space.
    pub inconsistency: f64,
    pub system: CharacteristicSystem,
}

/// Output of one approximate solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxSolution {
    pub u: Vec<Vec<f64>>,
    /// e = f − P_T u.
    pub error: Vec<Vec<f64>>,
    pub v: Vec<(usize, [f64; 2])>,
    /// Obstruction coefficients absorbed by h₁, h₂ per zero mode.
    pub obstructions: Vec<(usize, [f64; 2])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub t: f64,
    pub u: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub iterations: usize,
    /// ‖f_{n+1}‖/‖f_n‖ per round.
    pub contraction: Vec<f64>,
    /// ‖f_{n+1}‖/‖f‖ per round.
    pub history: Vec<f64>,
    /// ‖u_0 + … + u_n‖/‖f‖ per round.
    pub u_ratio: Vec<f64>,
    pub residual: f64,
}

impl SolveReport {
    /// Largest contraction among rounds still above the round-off floor.
    pub fn eta(&self) -> f64 {
        let mut eta = self.contraction.first().copied().unwrap_or(0.0);
        for (k, &c) in self.contraction.iter().enumerate() {
            if self.history[k] > 1e-11 {
                eta = eta.max(c);
            }
        }
        eta
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows: Vec<Vec<String>> = (0..self.iterations)
            .map(|k| {
                vec![
                    format!("{}", self.t),
                    k.to_string(),
                    format!("{:.6e}", self.history[k]),
                    format!("{:.6e}", self.contraction[k]),
                    format!("{:.6e}", self.u_ratio[k]),
                ]
            })
            .collect();
        write_csv_atomic(path, &["T", "iter", "residual", "eta", "u_norm_over_f_norm"], &rows)
    }
}

/// Gluing data for one assembled operator.
pub struct GluingProblem<'a> {
    pub g: &'a GluedOperator,
    zero: Vec<ZeroModeData>,
    /// Half-line matrices of the positive modes, by glued mode index.
    positive: Vec<(usize, [SymTridiag; 2])>,
    nb: [usize; 2],
}

impl<'a> GluingProblem<'a> {
    pub fn new(g: &'a GluedOperator) -> Result<Self> {
        let h = g.h;
        let nb = [block_len(&g.blocks[0], g.t, h), block_len(&g.blocks[1], g.t, h)];
        let n = g.n();
        let mut zero = Vec::new();
        let mut positive = Vec::new();
        for (mi, m) in g.modes.iter().enumerate() {
            let blocks = [
                g.blocks[0].mode_matrix(m.index, m.op.nu, h, nb[0]),
                g.blocks[1].mode_matrix(m.index, m.op.nu, h, nb[1]),
            ];
            if m.op.nu > 0.0 {
                positive.push((mi, blocks));
                continue;
            }
            let (p1, t1, b1) = block_element(&g.blocks[0], g, m.index, nb[0])?;
            let (p2, t2, b2) = block_element(&g.blocks[1], g, m.index, nb[1])?;
            let phi = [p1[..nb[0]].to_vec(), p2[..nb[1]].to_vec()];
            let trace = [t1, t2];
            let mut hfun = [Vec::new(), Vec::new()];
            let mut mh = [Vec::new(), Vec::new()];
            for i in 0..2 {
                let (hv, mv) = obstruction_dual(&g.blocks[i], m.index, &blocks[i], &phi[i], trace[i], h);
                hfun[i] = hv;
                mh[i] = mv;
            }
            let obstruction = [
                (0..n).map(|j| (1.0 - chi(g.rho1(j) - g.t - 1.0)) * phi[0].get(j).copied().unwrap_or(0.0)).collect::<Vec<_>>(),
                (0..n)
                    .map(|j| (1.0 - chi(g.rho2(j) - g.t - 1.0)) * phi[1].get(n - 1 - j).copied().unwrap_or(0.0))
                    .collect(),
            ];
            let g1 = neck_trace(t1, g.t, false);
            let g2 = neck_trace(t2, g.t, true);
            let cross = g1[0] * g2[1] - g1[1] * g2[0];
            let n1 = (g1[0].hypot(g1[1])) * g2[0].hypot(g2[1]);
            let parallel = cross.abs() <= RANK_TOL * n1;
            let (basis, pair, kernel, row_scale) = if parallel {
                if !(b1 && b2) {
                    return Err(Error::DegenerateT { t: g.t, rank: 1, expected: 2 });
                }
                let pair = MatchingPair::new(g, mi, phi[0].clone(), phi[1].clone(), t1, t2)?;
                let kn = norm_h(&pair.glued_section, h);
                let unit: Vec<f64> = pair.glued_section.iter().map(|x| x / kn).collect();
                let w = [g1[0] / g1[0].hypot(g1[1]), g1[1] / g1[0].hypot(g1[1])];
                let s = std::f64::consts::SQRT_2 / kn;
                (vec![[-w[1], w[0]]], Some(pair), Some(unit), [s, s])
            } else {
                let s = [1.0 / norm_h(&obstruction[0], h), 1.0 / norm_h(&obstruction[1], h)];
                (vec![[1.0, 0.0], [0.0, 1.0]], None, None, s)
            };
            zero.push(ZeroModeData { mode: mi, phi, trace, hfun, mh, block: blocks, kernel, pair, row_scale, basis, obstruction });
        }
        Ok(Self { g, zero, positive, nb })
    }

    /// The matched pairs spanning 𝒦_T.
    pub fn kernel_pairs(&self) -> Vec<&MatchingPair> {
        self.zero.iter().filter_map(|z| z.pair.as_ref()).collect()
    }

    pub fn kernel_dim(&self) -> usize {
        self.zero.iter().filter(|z| z.kernel.is_some()).count()
    }

    /// h-orthonormal basis of 𝒦_T as full fields.
    pub fn kernel_basis(&self) -> Vec<Vec<Vec<f64>>> {
        let n = self.g.n();
        self.zero
            .iter()
            .filter_map(|z| {
                z.kernel.as_ref().map(|k| {
                    let mut f = vec![vec![0.0; n]; self.g.modes.len()];
                    f[z.mode] = k.clone();
                    f
                })
            })
            .collect()
    }

    /// Orthogonal projection onto 𝒦_T (= 𝒦*_T).
    pub fn project_kernel(&self, f: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = self.g.h;
        let mut out: Vec<Vec<f64>> = f.iter().map(|x| vec![0.0; x.len()]).collect();
        for z in &self.zero {
            if let Some(k) = &z.kernel {
                let c = dot_h(&f[z.mode], k, h);
                out[z.mode] = k.iter().map(|x| c * x).collect();
            }
        }
        out
    }

    /// ℓ² and ℓ^∞ operator norms of the 𝒦_T projection.
    pub fn projection_norms(&self) -> (f64, f64) {
        let h = self.g.h;
        let mut l2: f64 = 0.0;
        let mut linf: f64 = 0.0;
        for z in &self.zero {
            if let Some(k) = &z.kernel {
                l2 = l2.max(norm_h(k, h).powi(2));
                let l1: f64 = k.iter().map(|x| x.abs()).sum::<f64>() * h;
                linf = linf.max(sup(k) * l1);
            }
        }
        (l2, linf)
    }

    /// Rows and rhs of the characteristic system for the field f.
    pub fn characteristic_system(&self, f: &[Vec<f64>]) -> Result<CharacteristicSystem> {
        let g = self.g;
        let h = g.h;
        let n = g.n();
        let ncols: usize = self.zero.iter().map(|z| z.basis.len()).sum();
        let nrows = 2 * self.zero.len();
        let mut a = DMatrix::zeros(nrows, ncols);
        let mut b = DVector::zeros(nrows);
        let mut columns = Vec::new();
        let mut rows = Vec::new();
        let mut col0 = 0;
        for (k, z) in self.zero.iter().enumerate() {
            let fm = &f[z.mode];
            let f0: Vec<f64> = (0..n).map(|j| zeta(g, j, 1.0) * fm[j]).collect();
            let g1 = neck_trace(z.trace[0], g.t, false);
            let g2 = neck_trace(z.trace[1], g.t, true);
            let cross = |gt: [f64; 2]| -> f64 {
                (0..n).map(|j| (1.0 - chi(g.x(j))) * f0[j] * (gt[0] + gt[1] * g.x(j))).sum::<f64>() * h
            };
            let r1 = dot_h(fm, &z.obstruction[0], h) - cross(g1);
            let r2 = -dot_h(fm, &z.obstruction[1], h) - cross(g2);
            for (c, e) in z.basis.iter().enumerate() {
                a[(2 * k, col0 + c)] = z.row_scale[0] * pair_linear(*e, g1);
                a[(2 * k + 1, col0 + c)] = z.row_scale[1] * pair_linear(*e, g2);
                columns.push((z.mode, *e));
            }
            b[2 * k] = z.row_scale[0] * r1;
            b[2 * k + 1] = z.row_scale[1] * r2;
            rows.push((z.mode, 1));
            rows.push((z.mode, 2));
            col0 += z.basis.len();
        }
        let rank = qr_rank(&a);
        Ok(CharacteristicSystem { matrix: a, rhs: b, rank, columns, rows })
    }

    /// Least-squares solve of the characteristic system.
    pub fn characteristic_solve(&self, f: &[Vec<f64>]) -> Result<CharacteristicSolution> {
        let system = self.characteristic_system(f)?;
        let ncols = system.matrix.ncols();
        if system.rank < ncols {
            return Err(Error::DegenerateT { t: self.g.t, rank: system.rank, expected: ncols });
        }
        let x = if ncols == 0 { DVector::zeros(0) } else { lstsq(&system.matrix, &system.rhs) };
        let inconsistency = (&system.matrix * &x - &system.rhs).norm();
        let mut v = Vec::new();
        let mut col = 0;
        for z in &self.zero {
            let mut c = [0.0; 2];
            for e in &z.basis {
                c[0] += x[col] * e[0];
                c[1] += x[col] * e[1];
                col += 1;
            }
            v.push((z.mode, c));
        }
        Ok(CharacteristicSolution { v, inconsistency, system })
    }

    /// One pass of the approximate-solution construction; f must be
    /// orthogonal to 𝒦*_T.
    pub fn approx_solve(&self, f: &[Vec<f64>]) -> Result<ApproxSolution> {
        let g = self.g;
        let h = g.h;
        let n = g.n();
        let fnorm = norm_all(f, h);
        let cs = self.characteristic_solve(f)?;
        if cs.inconsistency > CONSISTENCY_TOL * fnorm {
            return Err(Error::NotOrthogonal { inconsistency: cs.inconsistency / fnorm.max(f64::MIN_POSITIVE) });
        }
        let vmap: Vec<Option<[f64; 2]>> = (0..g.modes.len())
            .map(|mi| cs.v.iter().find(|(m, _)| *m == mi).map(|x| x.1))
            .collect();
        let results: Vec<Result<(Vec<f64>, Option<[f64; 2]>)>> = (0..g.modes.len())
            .into_par_iter()
            .map(|mi| self.approx_mode(mi, &f[mi], vmap[mi]))
            .collect();
        let mut u = Vec::with_capacity(g.modes.len());
        let mut obstructions = Vec::new();
        for (mi, r) in results.into_iter().enumerate() {
            let (um, obs) = r?;
            if let Some(o) = obs {
                obstructions.push((mi, o));
            }
            u.push(um);
        }
        let proj = self.project_kernel(&u);
        for (um, pm) in u.iter_mut().zip(&proj) {
            for (x, p) in um.iter_mut().zip(pm) {
                *x -= p;
            }
        }
        let error: Vec<Vec<f64>> = (0..g.modes.len())
            .map(|mi| {
                let pu = g.apply(mi, &u[mi]);
                (0..n).map(|j| f[mi][j] - pu[j]).collect()
            })
            .collect();
        Ok(ApproxSolution { u, error, v: cs.v, obstructions })
    }

    fn approx_mode(&self, mi: usize, f: &[f64], v: Option<[f64; 2]>) -> Result<(Vec<f64>, Option<[f64; 2]>)> {
        let g = self.g;
        let h = g.h;
        let n = g.n();
        let nu = g.modes[mi].op.nu;
        let f0: Vec<f64> = (0..n).map(|j| zeta(g, j, 1.0) * f[j]).collect();
        let mut u0 = if nu > 0.0 { discrete_green(&f0, nu, h) } else { discrete_double_sum(&f0, h) };
        if let Some(v) = v {
            for (j, x) in u0.iter_mut().enumerate() {
                *x += v[0] + v[1] * g.x(j);
            }
        }
        let zu0: Vec<f64> = (0..n).map(|j| zeta(g, j, 0.0) * u0[j]).collect();
        let pz = g.apply(mi, &zu0);
        let r: Vec<f64> = (0..n).map(|j| f[j] - pz[j]).collect();
        let mut f1 = vec![0.0; self.nb[0]];
        let mut f2 = vec![0.0; self.nb[1]];
        for j in 0..n {
            let c = chi(g.x(j));
            if c < 1.0 && j < self.nb[0] {
                f1[j] = (1.0 - c) * r[j];
            }
            if c > 0.0 && n - 1 - j < self.nb[1] {
                f2[n - 1 - j] = c * r[j];
            }
        }
        let (y1, y2, obs) = if nu > 0.0 {
            let (_, blocks) = self.positive.iter().find(|(m, _)| *m == mi).expect("positive mode data");
            (
                Bordered::tridiagonal(&blocks[0]).solve(&f1, &[])?.0,
                Bordered::tridiagonal(&blocks[1]).solve(&f2, &[])?.0,
                None,
            )
        } else {
            let z = self.zero.iter().find(|z| z.mode == mi).expect("zero mode data");
            let (y1, c1) = obstructed_solve(&z.block[0], &z.mh[0], &z.hfun[0], &f1)?;
            let (y2, c2) = obstructed_solve(&z.block[1], &z.mh[1], &z.hfun[1], &f2)?;
            (y1, y2, Some([c1, c2]))
        };
        let u: Vec<f64> = (0..n)
            .map(|j| {
                let mut x = zu0[j];
                let w1 = 1.0 - chi(g.rho1(j) - g.t - 1.0);
                if w1 > 0.0 {
                    x += w1 * y1[j];
                }
                let w2 = 1.0 - chi(g.rho2(j) - g.t - 1.0);
                if w2 > 0.0 {
                    x += w2 * y2[n - 1 - j];
                }
                x
            })
            .collect();
        Ok((u, obs))
    }

    /// Neumann-series solve of f = P_T u + w with u ⊥ 𝒦_T, w ∈ 𝒦*_T.
    pub fn solve_exact(&self, f: &[Vec<f64>], max_iter: usize) -> Result<SolveReport> {
        let g = self.g;
        let h = g.h;
        let fnorm = norm_all(f, h);
        let zeros: Vec<Vec<f64>> = f.iter().map(|x| vec![0.0; x.len()]).collect();
        let mut report = SolveReport {
            t: g.t,
            u: zeros.clone(),
            w: zeros,
            iterations: 0,
            contraction: Vec::new(),
            history: Vec::new(),
            u_ratio: Vec::new(),
            residual: 0.0,
        };
        if fnorm == 0.0 {
            return Ok(report);
        }
        let mut fn_: Vec<Vec<f64>> = f.to_vec();
        let mut prev = fnorm;
        for _ in 0..max_iter {
            let w = self.project_kernel(&fn_);
            let ft: Vec<Vec<f64>> = fn_.iter().zip(&w).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
            add_into(&mut report.w, &w);
            // What is left after projecting is round-off: f was in 𝒦*_T.
            if norm_all(&ft, h) <= 1e-13 * fnorm {
                report.iterations += 1;
                report.contraction.push(0.0);
                report.history.push(0.0);
                report.u_ratio.push(norm_all(&report.u, h) / fnorm);
                break;
            }
            let ap = self.approx_solve(&ft)?;
            add_into(&mut report.u, &ap.u);
            let next = norm_all(&ap.error, h);
            let eta = next / prev;
            report.iterations += 1;
            report.contraction.push(eta);
            report.history.push(next / fnorm);
            report.u_ratio.push(norm_all(&report.u, h) / fnorm);
            if eta >= 1.0 && next > 1e-11 * fnorm {
                return Err(Error::NoContraction { eta });
            }
            fn_ = ap.error;
            if next <= 1e-13 * fnorm || (eta > 0.5 && next <= 1e-11 * fnorm) {
                break;
            }
            prev = next;
        }
        report.residual = self.residual(f, &report.u, &report.w) / fnorm;
        Ok(report)
    }

    /// Contraction factor η of f ↦ f − P_T(approx f) on the complement of
    /// 𝒦*_T, by normalized power iteration from `f0`. Unlike the per-round
    /// ratios of a solve this never reaches the round-off floor, so it does
    /// not depend on the source.
    pub fn contraction_rate(&self, f0: &[Vec<f64>], max_iter: usize) -> Result<f64> {
        let h = self.g.h;
        let mut f = self.off_kernel(f0);
        let n0 = norm_all(&f, h);
        if n0 == 0.0 {
            return Err(Error::InvalidArgument("start vector lies in the substitute cokernel".into()));
        }
        f.iter_mut().flatten().for_each(|x| *x /= n0);
        let mut eta = f64::NAN;
        for _ in 0..max_iter {
            let e = self.off_kernel(&self.approx_solve(&f)?.error);
            let r = norm_all(&e, h);
            if r == 0.0 {
                return Ok(0.0);
            }
            let done = (r - eta).abs() <= 1e-6 * r;
            eta = r;
            if done {
                break;
            }
            f = e;
            f.iter_mut().flatten().for_each(|x| *x /= r);
        }
        Ok(eta)
    }

    fn off_kernel(&self, f: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let w = self.project_kernel(f);
        f.iter().zip(&w).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect()
    }

    /// ‖f − P_T u − w‖.
    pub fn residual(&self, f: &[Vec<f64>], u: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
        let r: Vec<Vec<f64>> = (0..f.len())
            .map(|mi| {
                let pu = self.g.apply(mi, &u[mi]);
                (0..pu.len()).map(|j| f[mi][j] - pu[j] - w[mi][j]).collect()
            })
            .collect();
        norm_all(&r, self.g.h)
    }

    /// Direct solve of [[P_T, K], [Kᵀ, 0]] per mode; returns (u, w).
    pub fn direct_solve(&self, f: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let g = self.g;
        let per: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..g.modes.len())
            .into_par_iter()
            .map(|mi| {
                let m = &g.modes[mi].matrix;
                match self.zero.iter().find(|z| z.mode == mi).and_then(|z| z.kernel.as_ref()) {
                    Some(k) => {
                        let s = Bordered::symmetric(m, vec![k.clone()], vec![k.clone()], DMatrix::zeros(1, 1));
                        let (u, c) = s.solve(&f[mi], &[0.0])?;
                        Ok((u, k.iter().map(|x| c[0] * x).collect()))
                    }
                    None => Ok((Bordered::tridiagonal(m).solve(&f[mi], &[])?.0, vec![0.0; m.len()])),
                }
            })
            .collect();
        let mut u = Vec::new();
        let mut w = Vec::new();
        for r in per {
            let (a, b) = r?;
            u.push(a);
            w.push(b);
        }
        Ok((u, w))
    }

    /// Rank of the dense bordered map (u, c) ↦ (P_T u + Kc, Kᵀu) for one
    /// mode, with its dimension. Dense, so only for small grids.
    pub fn bijection_rank(&self, mi: usize) -> (usize, usize) {
        let m = &self.g.modes[mi].matrix;
        let n = m.len();
        let k = self.zero.iter().find(|z| z.mode == mi).and_then(|z| z.kernel.clone());
        let dim = n + k.is_some() as usize;
        let mut a = DMatrix::zeros(dim, dim);
        for i in 0..n {
            a[(i, i)] = m.diag[i];
            if i + 1 < n {
                a[(i, i + 1)] = m.off[i];
                a[(i + 1, i)] = m.off[i];
            }
        }
        if let Some(k) = k {
            for i in 0..n {
                a[(i, n)] = k[i];
                a[(n, i)] = k[i];
            }
        }
        let sv = a.singular_values();
        let top = sv.max();
        (sv.iter().filter(|s| **s > 1e-10 * top).count(), dim)
    }

    /// Traces (a, b) of the block elements of zero mode `mi`.
    pub fn traces(&self, mi: usize) -> Option<[(f64, f64); 2]> {
        self.zero.iter().find(|z| z.mode == mi).map(|z| z.trace)
    }

    /// Obstruction functions (1 − χ_{T+1}(ρ_i))g_i of zero mode `mi`.
    pub fn obstruction_functions(&self, mi: usize) -> Option<[Vec<f64>; 2]> {
        self.zero.iter().find(|z| z.mode == mi).map(|z| z.obstruction.clone())
    }

    /// ⟨P h_i, g_i⟩ for every zero mode and block (should be 1).
    pub fn dual_normalization(&self) -> Vec<f64> {
        let h = self.g.h;
        self.zero.iter().flat_map(|z| (0..2).map(move |i| dot_h(&z.mh[i], &z.phi[i], h))).collect()
    }
}

fn add_into(acc: &mut [Vec<f64>], x: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(x) {
        for (p, q) in a.iter_mut().zip(b) {
            *p += q;
        }
    }
}

/// ζ_τ(x) = χ(x + T + ½ − τ)·χ(−x + T + ½ − τ).
fn zeta(g: &GluedOperator, j: usize, tau: f64) -> f64 {
    let x = g.x(j);
    let c = g.t + 0.5 - tau;
    chi(x + c) * chi(-x + c)
}

/// Exact inverse of −D² vanishing to the left of the support.
fn discrete_double_sum(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut u = vec![0.0; n];
    let h2 = h * h;
    let first = match f.iter().position(|x| *x != 0.0) {
        Some(p) => p,
        None => return u,
    };
    // u_{j+1} = 2u_j − u_{j−1} − h²f_j, with u = 0 up to and including `first`.
    for j in first..n - 1 {
        let um = if j > 0 { u[j - 1] } else { 0.0 };
        u[j + 1] = 2.0 * u[j] - um - h2 * f[j];
    }
    u
}

/// Exact inverse of −D² + ν on the infinite grid: G_j = C r^{|j|} with
/// r + 1/r = 2 + νh², so u = C Σ r^{|i−j|} f_j with C = h²/(1/r − r).
fn discrete_green(f: &[f64], nu: f64, h: f64) -> Vec<f64> {
    let n = f.len();
    let beta = 1.0 + 0.5 * nu * h * h;
    let r = beta - (beta * beta - 1.0).sqrt();
    let c = h * h / (1.0 / r - r);
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut acc = 0.0;
    for j in 0..n {
        acc = r * acc + f[j];
        a[j] = acc;
    }
    acc = 0.0;
    for j in (0..n).rev() {
        acc = r * acc + f[j];
        b[j] = acc;
    }
    (0..n).map(|j| c * (a[j] + b[j] - f[j])).collect()
}

/// h = χ(ρ − 1)(p₀ + p₁ρ) with (p, trace) = 1, rescaled so the discrete
/// ⟨M h, φ⟩ is exactly 1. M h uses the true ghost value at the far end.
fn obstruction_dual(
    block: &BuildingBlock,
    mode_index: usize,
    m: &SymTridiag,
    phi: &[f64],
    (a, b): (f64, f64),
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = m.len();
    let d = a * a + b * b;
    let p = [b / d, -a / d];
    let hv = |j: usize| {
        let rho = (j as f64 + 0.5) * h - block.l;
        chi(rho - 1.0) * (p[0] + p[1] * rho)
    };
    let mut hf: Vec<f64> = (0..n).map(hv).collect();
    let mut mh = m.matvec(&hf);
    let ih2 = 1.0 / (h * h);
    let v_last = block.potential(mode_index, (n as f64 - 0.5) * h);
    let nu = m.diag[n - 1] - 3.0 * ih2 - v_last;
    mh[n - 1] = (-hf[n - 2] + 2.0 * hf[n - 1] - hv(n)) * ih2 + (nu + v_last) * hf[n - 1];
    let norm = dot_h(&mh, phi, h);
    hf.iter_mut().for_each(|x| *x /= norm);
    mh.iter_mut().for_each(|x| *x /= norm);
    (hf, mh)
}

/// Solves M y + c M h = f with y vanishing at the far end; returns the
/// decaying solution y + c h and the absorbed obstruction c.
fn obstructed_solve(m: &SymTridiag, mh: &[f64], hf: &[f64], f: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = m.len();
    let mut last = vec![0.0; n];
    last[n - 1] = 1.0;
    let s = Bordered::general(m.off.clone(), m.diag.clone(), m.off.clone(), vec![mh.to_vec()], vec![last], DMatrix::zeros(1, 1));
    let (y, c) = s.solve(f, &[0.0])?;
    Ok((y.iter().zip(hf).map(|(a, b)| a + c[0] * b).collect(), c[0]))
}

/// Rank by column-pivoted QR at relative threshold [`RANK_TOL`].
fn qr_rank(a: &DMatrix<f64>) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let top = r[(0, 0)].abs();
    if top == 0.0 {
        return 0;
    }
    (0..k).filter(|&i| r[(i, i)].abs() > RANK_TOL * top).count()
}

/// Least squares for a full-column-rank matrix via column-pivoted QR.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = a.ncols();
    let qr = a.clone().col_piv_qr();
    let q = qr.q();
    let r = qr.r();
    let qtb = q.transpose() * b;
    let mut z = DVector::zeros(k);
    for i in (0..k).rev() {
        let mut acc = qtb[i];
        for j in i + 1..k {
            acc -= r[(i, j)] * z[j];
        }
        z[i] = acc / r[(i, i)];
    }
    qr.p().inv_permute_rows(&mut z);
    z
}

/// Result of the block-level pairing identity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValuePuv {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// ⟨P u, v⟩ on one block against (u₀, v₀), where u = χ(ρ − 1)u₀ + `correction`
/// and v is the block's zero-mode solution with trace v₀.
pub fn valuepuv_check(
    block: &BuildingBlock,
    q: i64,
    mode_index: usize,
    u0: (f64, f64),
    correction: impl Fn(f64) -> f64,
    h: f64,
) -> Result<ValuePuv> {
    let data = block_kernel(block, &block.spectrum, q, h, MATCH_TOL)?;
    let zk = data
        .get(mode_index)
        .ok_or_else(|| Error::InvalidArgument(format!("mode {mode_index} is not a zero mode")))?;
    let v = &zk.solution;
    let n = v.len();
    let u: Vec<f64> = (0..=n)
        .map(|j| {
            let s = (j as f64 + 0.5) * h;
            let rho = s - block.l;
            chi(rho - 1.0) * (u0.0 + u0.1 * rho) + correction(s)
        })
        .collect();
    let m = block.mode_matrix(mode_index, 0.0, h, n);
    let mut pu = m.matvec(&u[..n]);
    // Undo the wall: the last row sees the true next value.
    let ih2 = 1.0 / (h * h);
    pu[n - 1] += -u[n] * ih2 - ih2 * u[n - 1];
    let lhs = dot_h(&pu, v, h);
    let rhs = pair_linear([u0.0, u0.1], [zk.a, zk.b]);
    let scale = 1.0 + (u0.0.abs() + u0.1.abs()) * (zk.a.abs() + zk.b.abs());
    Ok(ValuePuv { lhs, rhs, residual: (lhs - rhs).abs() / scale })
}
