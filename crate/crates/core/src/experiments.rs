//! Standard configurations and seeded right-hand sides shared by the CLI,
//! the acceptance run and the tests.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::Result;
use crate::glued_model::{assemble, Boundary, BuildingBlock, GluedOperator};
use crate::gluing_solver::GluingProblem;
use crate::quadrature::chi;
use crate::rng::SplitMix64;
use crate::spectral_model::{circle_spectrum, CrossSectionSpectrum};

pub type Field = Vec<Vec<f64>>;

/// Unit circle cross-section (ν₁ = 1) with the first two nonzero levels.
pub fn unit_circle() -> Arc<CrossSectionSpectrum> {
    Arc::new(circle_spectrum(2.0 * PI, 2).expect("valid circle"))
}

/// Block 1 carries the decaying profile potential on mode 0, block 2 is free
/// Neumann with L = 2. This is the scalar configuration with one matched pair.
pub fn profile_pair(spec: &Arc<CrossSectionSpectrum>, mu: f64, t: f64, h: f64, cutoff: f64) -> Result<GluedOperator> {
    let b1 = BuildingBlock::from_profile(spec.clone(), 6.0, mu, 0.5, 0, h, 2.0 * t + 10.0)?;
    let b2 = BuildingBlock::free(spec.clone(), 2.0, Boundary::Neumann, mu)?;
    assemble(&b1, &b2, spec, 0, t, h, cutoff)
}

/// Two free blocks of length `l` with the given outer conditions.
pub fn free_pair(
    spec: &Arc<CrossSectionSpectrum>,
    q: i64,
    ends: (Boundary, Boundary),
    l: f64,
    t: f64,
    h: f64,
    cutoff: f64,
) -> Result<GluedOperator> {
    let b1 = BuildingBlock::free(spec.clone(), l, ends.0, 1.0)?;
    let b2 = BuildingBlock::free(spec.clone(), l, ends.1, 1.0)?;
    assemble(&b1, &b2, spec, q, t, h, cutoff)
}

/// Smooth field spread over the whole glued interval: six seeded cosine and
/// sine pairs per mode.
pub fn spread_field(g: &GluedOperator, seed: u64) -> Field {
    let mut rng = SplitMix64::new(seed);
    let n = g.n();
    g.modes
        .iter()
        .map(|_| {
            let c: Vec<(f64, f64)> = (0..6).map(|_| (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).collect();
            (0..n)
                .map(|j| {
                    let x = g.x(j);
                    c.iter()
                        .enumerate()
                        .map(|(k, (a, b))| {
                            let k = (k + 1) as f64;
                            a * (0.7 * k * x).cos() + b * (0.9 * k * x).sin()
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Two bumps of fixed shape near the block ends, in block coordinates, so
/// the profile of f does not change with T.
pub fn two_bump_field(g: &GluedOperator, seed: u64) -> Field {
    let mut rng = SplitMix64::new(seed);
    let n = g.n();
    g.modes
        .iter()
        .map(|_| {
            let c: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
            (0..n)
                .map(|j| {
                    let r1 = g.rho1(j);
                    let r2 = g.rho2(j);
                    let w1 = chi(r1 + 3.0) * (1.0 - chi(r1 - 2.0));
                    let w2 = chi(r2 + 1.0) * (1.0 - chi(r2 - 2.0));
                    w1 * (c[0] + c[1] * (1.3 * r1).sin() + c[2] * (2.1 * r1).cos() + c[3] * (0.7 * r1).sin())
                        + w2 * (c[4] + c[5] * (1.1 * r2).sin() + c[6] * (1.9 * r2).cos() + c[7] * (0.5 * r2).cos())
                })
                .collect()
        })
        .collect()
}

/// f minus its projection onto 𝒦_T.
pub fn project_off_kernel(p: &GluingProblem, mut f: Field) -> Field {
    let w = p.project_kernel(&f);
    for (a, b) in f.iter_mut().zip(&w) {
        for (x, y) in a.iter_mut().zip(b) {
            *x -= y;
        }
    }
    f
}

/// h-weighted ℓ² norm of a field.
pub fn field_norm(f: &Field, h: f64) -> f64 {
    f.iter().flatten().map(|x| x * x).sum::<f64>().sqrt() * h.sqrt()
}

pub fn field_sup(f: &Field) -> f64 {
    f.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// ‖a − b‖/‖b‖ in plain ℓ².
pub fn relative_diff(a: &Field, b: &Field) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).sum();
    let den: f64 = b.iter().flatten().map(|x| x * x).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
