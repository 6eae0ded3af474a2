//! Seeded sweeps behind the acceptance run and the CLI commands. Each
//! returns its raw measurements; the callers decide PASS/FAIL.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiments::{field_norm, field_sup, project_off_kernel, relative_diff, two_bump_field};
use crate::glued_model::GluedOperator;
use crate::gluing_solver::{GluingProblem, SolveReport};
use crate::neck_inverse::{
    duality_check, q0_apply, q0_operator_norm, relative_residual, smooth_random_section, NeckGrid,
};
use crate::polyhom_calculus::{
    apply_p, exact, exact_int, gram_matrix, kernel_basis, pairing_closed, pairing_integral, q_lambda0, Exact,
    Poly, PolyhomSection,
};
use crate::quadrature::{ls_slope, CutoffFunction};
use crate::rng::SplitMix64;
use crate::spectral_model::{DegreeTag, ModeOperator};

/// Default quadrature step of the pairing integral.
pub const PAIRING_STEP: f64 = 1.0 / 256.0;

fn lap(nu: f64, tag: DegreeTag) -> ModeOperator {
    ModeOperator::laplace(nu, tag)
}

/// Zero modes, a Dirac block and three positive modes.
pub fn mixed_modes() -> Vec<ModeOperator> {
    vec![
        lap(0.0, DegreeTag::Alpha),
        lap(0.0, DegreeTag::Beta),
        ModeOperator::dirac(),
        lap(1.0, DegreeTag::Alpha),
        lap(4.0, DegreeTag::Alpha),
        lap(4.0 * std::f64::consts::PI.powi(2), DegreeTag::Beta),
    ]
}

fn fiber(modes: &[ModeOperator]) -> usize {
    modes.iter().map(|m| m.fiber_dim()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCase {
    pub seed: u64,
    pub coarse: f64,
    pub fine: f64,
}

impl ResidualCase {
    pub fn ratio(&self) -> f64 {
        self.coarse / self.fine
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthRow {
    pub t: f64,
    pub laplace: f64,
    pub dirac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Q0Check {
    pub cases: Vec<ResidualCase>,
    pub growth: Vec<GrowthRow>,
    pub laplace_exponent: f64,
    pub dirac_exponent: f64,
}

impl Q0Check {
    pub fn max_residual(&self) -> f64 {
        self.cases.iter().map(|c| c.coarse).fold(0.0, f64::max)
    }

    pub fn ratio_range(&self) -> (f64, f64) {
        self.cases
            .iter()
            .map(|c| c.ratio())
            .fold((f64::INFINITY, 0.0), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }
}

/// Residual of Q₀ on `cases` random sources at h and h/2, and the Q₀ norm
/// growth of the Laplace and Dirac zero-mode blocks over `ts`.
pub fn q0_check(modes: &[ModeOperator], h: f64, cases: usize, seed: u64, ts: &[f64], norm_h: f64) -> Result<Q0Check> {
    let fib = fiber(modes);
    let mut rng = SplitMix64::new(seed);
    let seeds: Vec<u64> = (0..cases).map(|_| rng.next_u64()).collect();
    let cases = seeds
        .par_iter()
        .map(|&s| {
            let mut res = [0.0; 2];
            for (k, step) in [h, h / 2.0].into_iter().enumerate() {
                let grid = NeckGrid::new(8.0, step)?;
                let f = smooth_random_section(grid, 5.0, fib, &mut SplitMix64::new(s))?;
                let sol = q0_apply(modes, &f)?;
                res[k] = relative_residual(modes, &f, &sol);
            }
            Ok(ResidualCase { seed: s, coarse: res[0], fine: res[1] })
        })
        .collect::<Result<Vec<_>>>()?;
    let growth = ts
        .par_iter()
        .map(|&t| {
            Ok(GrowthRow {
                t,
                laplace: q0_operator_norm(&lap(0.0, DegreeTag::Alpha), t, norm_h)?,
                dirac: q0_operator_norm(&ModeOperator::dirac(), t, norm_h)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let fit = |sel: fn(&GrowthRow) -> f64| {
        let ly: Vec<f64> = growth.iter().map(|r| sel(r).ln()).collect();
        if ts.len() < 2 { f64::NAN } else { ls_slope(&lx, &ly) }
    };
    Ok(Q0Check {
        laplace_exponent: fit(|r| r.laplace),
        dirac_exponent: fit(|r| r.dirac),
        cases,
        growth,
    })
}

fn random_exact(rng: &mut SplitMix64) -> Exact {
    exact(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0))
}

/// Random element of ker P for Laplace zero modes and Dirac blocks.
fn random_kernel_element(ops: &[ModeOperator], rng: &mut SplitMix64) -> PolyhomSection {
    let fib = fiber(ops);
    let mut c0 = Vec::with_capacity(fib);
    let mut c1 = Vec::with_capacity(fib);
    for op in ops {
        for _ in 0..op.fiber_dim() {
            c0.push(random_exact(rng));
            c1.push(if op.fiber_dim() == 1 { random_exact(rng) } else { exact(0.0, 0.0) });
        }
    }
    PolyhomSection::new(fib, vec![(0.0, vec![c0, c1])])
}

fn random_zero_block(rng: &mut SplitMix64) -> Vec<ModeOperator> {
    let pool = [lap(0.0, DegreeTag::Alpha), lap(0.0, DegreeTag::Beta), ModeOperator::dirac()];
    loop {
        let mask = rng.below(8);
        if mask != 0 {
            return (0..3).filter(|b| mask >> b & 1 == 1).map(|b| pool[b]).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairingCheck {
    pub cases: usize,
    /// max |closed − integral| / (1 + |closed|).
    pub closed_vs_integral: f64,
    /// max |(u,v)_χτ − (u,v)_χτ′| / (1 + |(u,v)|) over τ, τ′ ∈ [−3, 3].
    pub center_spread: f64,
    pub gram_full_rank: bool,
    /// Every sampled f came back exactly from apply_P ∘ Q_λ0.
    pub right_inverse_exact: bool,
    pub right_inverse_cases: usize,
}

/// Operator sets whose standard kernel bases are checked for non-degeneracy.
pub fn gram_operator_sets() -> Vec<Vec<ModeOperator>> {
    vec![
        vec![lap(0.0, DegreeTag::Alpha)],
        vec![ModeOperator::dirac()],
        vec![lap(0.0, DegreeTag::Alpha), lap(0.0, DegreeTag::Beta), ModeOperator::dirac()],
        vec![ModeOperator::helmholtz(1.0), ModeOperator::helmholtz(2.5)],
        vec![ModeOperator::helmholtz(0.7), lap(0.0, DegreeTag::Beta), lap(3.0, DegreeTag::Alpha)],
        vec![lap(2.0, DegreeTag::Alpha)],
    ]
}

pub fn pairing_check(cases: usize, seed: u64) -> Result<PairingCheck> {
    let mut rng = SplitMix64::new(seed);
    let mut closed_vs_integral: f64 = 0.0;
    let mut center_spread: f64 = 0.0;
    for _ in 0..cases {
        let ops = random_zero_block(&mut rng);
        let u = random_kernel_element(&ops, &mut rng);
        let v = random_kernel_element(&ops, &mut rng);
        let closed = pairing_closed(&ops, &u, &v)?;
        let taus = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
        let vals = taus
            .iter()
            .map(|&tau| pairing_integral(&ops, &u, &v, &CutoffFunction::new(tau), PAIRING_STEP))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 + closed.norm();
        closed_vs_integral = closed_vs_integral.max((vals[0] - closed).norm() / scale);
        center_spread = center_spread.max((vals[0] - vals[1]).norm() / scale);
    }
    let mut gram_full_rank = true;
    for ops in gram_operator_sets() {
        let b = kernel_basis(&ops);
        gram_full_rank &= gram_matrix(&ops, &b, &b)?.full_rank();
    }
    let mut ops = mixed_modes();
    ops.push(ModeOperator::helmholtz(1.5));
    let fib = fiber(&ops);
    let mut right_inverse_exact = true;
    for _ in 0..cases {
        let deg = rng.below(5) as usize;
        let poly: Poly = (0..=deg)
            .map(|_| (0..fib).map(|_| exact_int(rng.below(19) as i64 - 9, rng.below(19) as i64 - 9)).collect())
            .collect();
        let rate = [0.0, 0.5, 1.5, -1.5][rng.below(4) as usize];
        let f = PolyhomSection::new(fib, vec![(rate, poly)]);
        right_inverse_exact &= apply_p(&ops, &q_lambda0(&ops, &f)?)? == f;
    }
    Ok(PairingCheck {
        cases,
        closed_vs_integral,
        center_spread,
        gram_full_rank,
        right_inverse_exact,
        right_inverse_cases: cases,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityCase {
    pub support: f64,
    pub pairing: f64,
    pub l2: f64,
    /// |(u_f, v) − ⟨f, v⟩| / (1 + |(u_f, v)| + |⟨f, v⟩|).
    pub relative: f64,
}

/// (u_f, v) against ⟨f, v⟩ for seeded f on the zero block and random v ∈ 𝓔*.
pub fn duality_sweep(cases: usize, seed: u64, h: f64) -> Result<Vec<DualityCase>> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(cases);
    for _ in 0..cases {
        let ops = random_zero_block(&mut rng);
        let support = 1.0 + rng.below(6) as f64;
        let grid = NeckGrid::new(support + 3.0, h)?;
        let f = smooth_random_section(grid, support, fiber(&ops), &mut rng)?;
        let v = random_kernel_element(&ops, &mut rng);
        let d = duality_check(&ops, &f, &v)?;
        out.push(DualityCase {
            support,
            pairing: d.pairing.norm(),
            l2: d.l2.norm(),
            relative: d.residual / (1.0 + d.pairing.norm() + d.l2.norm()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub cases: usize,
    pub errors: usize,
    /// Cases with a kernel component, i.e. not solvable.
    pub inconsistent: usize,
    pub kernel_dim: usize,
}

/// Seeded right-hand sides, every other one with a kernel component of
/// relative size 10^[−4, 0]; compares "characteristic system solvable" with
/// "f ⊥ 𝒦*_T" at relative tolerance `tol`.
pub fn classify_solvability(g: &GluedOperator, seed: u64, cases: usize, tol: f64) -> Result<Classification> {
    let p = GluingProblem::new(g)?;
    let mut rng = SplitMix64::new(seed);
    let basis = p.kernel_basis();
    let mut errors = 0;
    let mut inconsistent = 0;
    for c in 0..cases {
        let mut f = project_off_kernel(&p, crate::experiments::spread_field(g, rng.next_u64()));
        let fn0 = field_norm(&f, g.h);
        if c % 2 == 1 && !basis.is_empty() {
            let amp = fn0 * 10f64.powf(rng.uniform(-4.0, 0.0));
            let k = &basis[c / 2 % basis.len()];
            for (a, b) in f.iter_mut().zip(k) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += amp * y);
            }
        }
        let fnorm = field_norm(&f, g.h);
        let proj = field_norm(&p.project_kernel(&f), g.h);
        let cs = p.characteristic_solve(&f)?;
        let solvable = cs.inconsistency <= tol * fnorm;
        let orthogonal = proj <= tol * fnorm;
        errors += usize::from(solvable != orthogonal);
        inconsistent += usize::from(!orthogonal);
    }
    Ok(Classification { cases, errors, inconsistent, kernel_dim: p.kernel_dim() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlueRow {
    pub t: f64,
    pub iterations: usize,
    /// Largest per-round ratio of this solve.
    pub eta: f64,
    /// Source-independent contraction factor.
    pub contraction: f64,
    pub residual: f64,
    /// ‖u − u_direct‖/‖u_direct‖.
    pub direct_diff: f64,
    pub l2_ratio: f64,
    pub sup_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct GlueScaling {
    pub rows: Vec<GlueRow>,
    pub reports: Vec<SolveReport>,
    /// Slope of ln(contraction) against T.
    pub eta_slope: f64,
    pub l2_exponent: f64,
    pub sup_exponent: f64,
}

/// Solves f = P_T u + w for the same two-bump source (fixed in block
/// coordinates, projected off 𝒦_T) at every T, and fits the scalings.
pub fn glue_scaling<F>(build: F, ts: &[f64], seed: u64, max_iter: usize) -> Result<GlueScaling>
where
    F: Fn(f64) -> Result<GluedOperator> + Sync,
{
    if ts.is_empty() {
        return Err(Error::InvalidArgument("need at least one T".into()));
    }
    let per: Vec<(GlueRow, SolveReport)> = ts
        .par_iter()
        .map(|&t| {
            let g = build(t)?;
            let p = GluingProblem::new(&g)?;
            let f = project_off_kernel(&p, two_bump_field(&g, seed));
            let rep = p.solve_exact(&f, max_iter)?;
            let (u, _) = p.direct_solve(&f)?;
            let row = GlueRow {
                t,
                iterations: rep.iterations,
                eta: rep.eta(),
                contraction: p.contraction_rate(&f, 50)?,
                residual: rep.residual,
                direct_diff: relative_diff(&rep.u, &u),
                l2_ratio: field_norm(&rep.u, g.h) / field_norm(&f, g.h),
                sup_ratio: field_sup(&rep.u) / field_sup(&f),
            };
            Ok((row, rep))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, reports): (Vec<GlueRow>, Vec<SolveReport>) = per.into_iter().unzip();
    let fit = |x: Vec<f64>, y: Vec<f64>| if x.len() < 2 { f64::NAN } else { ls_slope(&x, &y) };
    let lt: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    Ok(GlueScaling {
        eta_slope: fit(ts.to_vec(), rows.iter().map(|r| r.contraction.ln()).collect()),
        l2_exponent: fit(lt.clone(), rows.iter().map(|r| r.l2_ratio.ln()).collect()),
        sup_exponent: fit(lt, rows.iter().map(|r| r.sup_ratio.ln()).collect()),
        rows,
        reports,
    })
}
