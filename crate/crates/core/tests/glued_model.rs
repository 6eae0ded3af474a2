use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use serde_json::json;

use neckspec::glued_model::*;
use neckspec::spectral_model::{circle_spectrum, CrossSectionSpectrum, DegreeTag};
use neckspec::Error;

const H: f64 = 1.0 / 16.0;

fn circle() -> Arc<CrossSectionSpectrum> {
    Arc::new(circle_spectrum(2.0 * PI, 2).unwrap())
}

fn free(spec: &Arc<CrossSectionSpectrum>, l: f64, b: Boundary) -> BuildingBlock {
    BuildingBlock::free(spec.clone(), l, b, 1.0).unwrap()
}

fn exp_block(spec: &Arc<CrossSectionSpectrum>, l: f64, mode: usize, s_max: f64) -> BuildingBlock {
    let samples: Vec<(f64, f64)> = (0..=(s_max * 4.0) as usize)
        .map(|i| {
            let s = i as f64 / 4.0;
            (s, (-s).exp())
        })
        .collect();
    let mut p = BTreeMap::new();
    p.insert(mode, samples);
    BuildingBlock::new(spec.clone(), l, Boundary::Neumann, 1.0, p).unwrap()
}

#[test]
fn free_zero_mode_kills_constants_exactly() {
    let spec = circle();
    let g = assemble(&free(&spec, 2.0, Boundary::Neumann), &free(&spec, 1.0, Boundary::Neumann), &spec, 0, 4.0, H, 10.0)
        .unwrap();
    assert_eq!(g.n(), ((2.0 * 4.0 + 2.0 + 3.0) / H) as usize);
    let (_, zero) = g.zero_modes().next().unwrap();
    let ones = vec![1.0; g.n()];
    assert!(zero.matrix.matvec(&ones).iter().all(|&x| x == 0.0));
    // Free Neumann Laplacian: 2/h² inside, 1/h² on the end rows, −1/h² off.
    let ih2 = 1.0 / (H * H);
    assert_eq!(zero.matrix.diag[0], ih2);
    assert_eq!(zero.matrix.diag[g.n() - 1], ih2);
    assert!(zero.matrix.diag[1..g.n() - 1].iter().all(|&d| d == 2.0 * ih2));
    assert!(zero.matrix.off.iter().all(|&o| o == -ih2));
    assert_eq!(g.zero_modes().count(), 1);
}

#[test]
fn dirichlet_positive_mode_stays_above_nu() {
    let spec = circle();
    let d = free(&spec, 1.0, Boundary::Dirichlet);
    let g = assemble(&d, &d, &spec, 0, 3.0, H, 2.0).unwrap();
    let list = eigen_lowest(&g, 3).unwrap();
    for e in list.entries.iter().filter(|e| e.mode_nu == 1.0) {
        assert!(e.lambda >= 1.0, "{}", e.lambda);
    }
    // Zero mode with Dirichlet walls has no kernel either.
    assert!(list.entries[0].lambda > 0.0);
}

#[test]
fn fade_touches_only_rows_near_block_one() {
    let spec = circle();
    let t = 6.0;
    let bump = exp_block(&spec, 1.0, 0, 2.0 * t + 6.0);
    let plain = free(&spec, 1.0, Boundary::Neumann);
    let g = assemble(&bump, &plain, &spec, 0, t, H, 0.5).unwrap();
    let g0 = assemble(&plain, &plain, &spec, 0, t, H, 0.5).unwrap();
    let (a, b) = (&g.modes[0].matrix, &g0.modes[0].matrix);
    let mut touched = 0;
    for j in 0..g.n() {
        let differs = a.diag[j] != b.diag[j];
        if differs {
            touched += 1;
            assert!(g.rho1(j) <= t + 0.5, "row {j} at ρ₁ = {}", g.rho1(j));
        }
        if g.rho1(j) <= t - 0.5 {
            // Unfaded there: the full potential is present.
            assert!((a.diag[j] - b.diag[j] - bump.potential(0, g.s1(j))).abs() < 1e-9);
        }
    }
    assert!(touched > 0);
    assert_eq!(a.off, b.off);
}

#[test]
fn block_two_is_reversed() {
    let spec = circle();
    let t = 4.0;
    let bump = exp_block(&spec, 1.0, 0, 2.0 * t + 6.0);
    let plain = free(&spec, 1.0, Boundary::Neumann);
    let g12 = assemble(&bump, &plain, &spec, 0, t, H, 0.5).unwrap();
    let g21 = assemble(&plain, &bump, &spec, 0, t, H, 0.5).unwrap();
    let n = g12.n();
    for j in 0..n {
        assert_eq!(g12.modes[0].potential[j], g21.modes[0].potential[n - 1 - j]);
    }
}

#[test]
fn mismatched_spectra_are_refused() {
    let spec = circle();
    let other = Arc::new(circle_spectrum(PI, 2).unwrap());
    let a = free(&spec, 1.0, Boundary::Neumann);
    let b = free(&other, 1.0, Boundary::Neumann);
    match assemble(&a, &b, &spec, 0, 4.0, H, 1.0) {
        Err(e @ Error::Matching(_)) => assert!(e.to_string().starts_with("matching condition violated")),
        other => panic!("expected a matching error, got {other:?}"),
    }
    assert!(matches!(block_kernel(&b, &spec, 0, H, 1e-6), Err(Error::Matching(_))));
}

#[test]
fn assemble_argument_checks() {
    let spec = circle();
    let a = free(&spec, 1.0, Boundary::Neumann);
    assert!(matches!(assemble(&a, &a, &spec, 0, 1.5, H, 1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(assemble(&a, &a, &spec, 0, 4.0, 0.1, 1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(assemble(&a, &a, &spec, 0, 4.01, H, 1.0), Err(Error::InvalidArgument(_))));
}

#[test]
fn neumann_free_block_kernel_is_constant() {
    let spec = circle();
    let k = block_kernel(&free(&spec, 2.0, Boundary::Neumann), &spec, 0, H, 1e-6).unwrap();
    assert_eq!(k.zero_modes.len(), 1);
    let z = &k.zero_modes[0];
    assert!((z.a - 1.0).abs() < 1e-12 && z.b.abs() < 1e-12);
    assert_eq!((z.dim_k, z.dim_k0), (1, 0));
    // Positive modes ν = 1, 1, 4, 4 carry nothing.
    assert_eq!(k.empty_positive_modes, vec![1, 2, 3, 4]);
}

#[test]
fn dirichlet_free_block_has_no_bounded_kernel() {
    let spec = circle();
    let k = block_kernel(&free(&spec, 2.0, Boundary::Dirichlet), &spec, 0, H, 1e-6).unwrap();
    let z = &k.zero_modes[0];
    assert_eq!(z.dim_k, 0);
    assert_eq!(k.dim_k(), 0);
    // u = s on the grid, so the trace is (L + ρ)/max.
    let r = shooting_reach(&free(&spec, 2.0, Boundary::Dirichlet));
    let top = r - 0.5 * H;
    assert!((z.b - 1.0 / top).abs() < 1e-9 && (z.a - 2.0 / top).abs() < 1e-9, "{} {}", z.a, z.b);
}

#[test]
fn small_bump_tilts_the_trace() {
    let spec = circle();
    let eps: f64 = 0.1;
    let mut p = BTreeMap::new();
    p.insert(0, vec![(0.0, eps), (1.0, eps), (1.0, 0.0), (2.0, 0.0)]);
    let block = BuildingBlock::new(spec.clone(), 1.0, Boundary::Neumann, 1.0, p).unwrap();
    let k = block_kernel(&block, &spec, 0, 1.0 / 256.0, 1e-6).unwrap();
    let z = &k.zero_modes[0];
    assert_eq!(z.dim_k, 0);
    assert!(z.b.abs() > 1e-3);
    // u = cosh(√ε s) on [0, 1], then affine: b/a = √ε tanh √ε at ρ = 0.
    let want = eps.sqrt() * eps.sqrt().tanh();
    assert!(((z.b / z.a) - want).abs() < 1e-3 * want, "{} vs {want}", z.b / z.a);
}

#[test]
fn profile_block_kernel_is_bounded() {
    let spec = circle();
    let block = BuildingBlock::from_profile(spec.clone(), 6.0, 0.5, 0.5, 0, H, 60.0).unwrap();
    let k = block_kernel(&block, &spec, 0, H, 1e-6).unwrap();
    let z = &k.zero_modes[0];
    assert_eq!((z.dim_k, z.dim_k0), (1, 0));
    assert!(z.a > 0.99);
}

#[test]
fn circle_one_forms_have_two_zero_modes_per_block() {
    let spec = circle();
    let k = block_kernel(&free(&spec, 1.0, Boundary::Neumann), &spec, 1, H, 1e-6).unwrap();
    assert_eq!(k.zero_modes.len(), 2);
    assert_eq!(k.dim_k(), 2);
    assert_eq!(k.dim_k0(), 0);
}

#[test]
fn neumann_spectrum_of_free_interval() {
    let spec = circle();
    let a = free(&spec, 0.0, Boundary::Neumann);
    let g = assemble(&a, &a, &spec, 0, 5.0, H, 0.5).unwrap();
    let ell = 12.0;
    let list = eigen_lowest(&g, 6).unwrap();
    assert!(!list.clipped);
    for (k, e) in list.entries.iter().enumerate() {
        let want = (k as f64 * PI / ell).powi(2);
        // Cell-centred Neumann: (4/h²) sin²(kπh/2ℓ), within O(h²) of the continuum.
        let disc = 4.0 / (H * H) * (k as f64 * PI * H / (2.0 * ell)).sin().powi(2);
        assert!((e.lambda - disc).abs() < 1e-9 * (1.0 + disc));
        assert!((e.lambda - want).abs() <= want * (k as f64 * PI * H / ell).powi(2) / 12.0 + 1e-12);
    }
}

#[test]
fn product_check_after_richardson() {
    let spec = circle();
    let a = free(&spec, 0.0, Boundary::Neumann);
    let t = 20.0;
    let ell = 2.0 * t + 2.0;
    let coarse = eigen_lowest(&assemble(&a, &a, &spec, 0, t, H, 0.5).unwrap(), 5).unwrap();
    let fine = eigen_lowest(&assemble(&a, &a, &spec, 0, t, H / 2.0, 0.5).unwrap(), 5).unwrap();
    for k in 1..5 {
        let want = (k as f64 * PI / ell).powi(2);
        let (lh, lh2) = (coarse.entries[k].lambda, fine.entries[k].lambda);
        let rich = (4.0 * lh2 - lh) / 3.0;
        assert!((rich - want).abs() <= 1e-8 * want, "k = {k}: {rich} vs {want}");
        // Second order: halving h quarters the error.
        let ratio = (lh - want) / (lh2 - want);
        assert!((ratio - 4.0).abs() < 0.01, "k = {k}: ratio {ratio}");
    }
}

#[test]
fn eigen_lists_carry_mode_tags() {
    let spec = circle();
    let a = free(&spec, 1.0, Boundary::Neumann);
    let g = assemble(&a, &a, &spec, 1, 3.0, H, 2.0).unwrap();
    let list = eigen_lowest(&g, 2).unwrap();
    assert_eq!(list.entries.len(), 2 * g.modes.len());
    assert!(list.entries.windows(2).all(|w| w[0].lambda <= w[1].lambda));
    let zero: Vec<_> = list.entries.iter().filter(|e| e.k == 0 && e.mode_nu == 0.0).collect();
    assert_eq!(zero.len(), 2);
    assert!(zero.iter().any(|e| e.degree_tag == DegreeTag::Alpha));
    assert!(zero.iter().any(|e| e.degree_tag == DegreeTag::Beta));
    let top = list.entries.last().unwrap().lambda;
    assert!(list.covered <= top && list.covered > 0.0);
    let below = eigen_below(&g, list.covered);
    assert!(below.entries.len() <= list.entries.len());
    assert!(matches!(eigen_lowest(&g, 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn oversized_request_is_clipped() {
    let spec = circle();
    let a = free(&spec, 0.0, Boundary::Neumann);
    let g = assemble(&a, &a, &spec, 0, 2.0, H, 0.5).unwrap();
    let list = eigen_lowest(&g, g.n() + 5).unwrap();
    assert!(list.clipped);
    assert_eq!(list.entries.len(), g.n());
    assert_eq!(list.covered, f64::INFINITY);
}

#[test]
fn block_json_and_decay_contract() {
    let spec = circle();
    let v = json!({"L": 1.0, "boundary": "dirichlet", "mu": 2.0,
                   "potentials": {"0": [[0.0, 1.0], [1.0, 1.0], [2.0, 0.1]]}});
    let b = BuildingBlock::from_json_value(&v, spec.clone()).unwrap();
    assert_eq!(b.boundary, Boundary::Dirichlet);
    assert!(b.has_potential(0) && !b.has_potential(1));
    assert!((b.potential(0, 0.5) - 1.0).abs() < 1e-15);
    assert!(b.decay_amplitude(0) >= 1.0);
    let grows = json!({"L": 1.0, "boundary": "neumann", "mu": 2.0,
                       "potentials": {"0": [[0.0, 1.0], [1.0, 1.0], [4.0, 1.0]]}});
    match BuildingBlock::from_json_value(&grows, spec.clone()) {
        Err(Error::Parse { field, .. }) => assert_eq!(field, "potentials.0"),
        other => panic!("{other:?}"),
    }
    let extra = json!({"L": 1.0, "boundary": "neumann", "mu": 2.0, "coupling": {}});
    assert!(matches!(BuildingBlock::from_json_value(&extra, spec.clone()), Err(Error::Parse { .. })));
    let bad_mu = json!({"L": 1.0, "boundary": "neumann", "mu": 0.0});
    assert!(matches!(BuildingBlock::from_json_value(&bad_mu, spec), Err(Error::Parse { .. })));
}

#[test]
fn twist_mixing_different_potentials_is_unsupported() {
    let mut s = circle_spectrum(2.0 * PI, 1).unwrap();
    s.set_twist(0, 1, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
    let spec = Arc::new(s);
    let plain = free(&spec, 1.0, Boundary::Neumann);
    let one = exp_block(&spec, 1.0, 1, 20.0);
    assert!(assemble(&plain, &plain, &spec, 0, 4.0, H, 2.0).is_ok());
    assert!(matches!(assemble(&plain, &one, &spec, 0, 4.0, H, 2.0), Err(Error::Unsupported(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn modes_stay_above_nu_minus_potential(
        amp in -3.0f64..3.0,
        width_cells in 8usize..48,
        mode in 0usize..5,
        dirichlet in any::<bool>(),
    ) {
        let spec = circle();
        let width = width_cells as f64 * H;
        let mut p = BTreeMap::new();
        p.insert(mode, vec![(0.0, amp), (width, amp), (width + 0.5, 0.0)]);
        let b1 = BuildingBlock::new(spec.clone(), width + 0.5, Boundary::Neumann, 1.0, p).unwrap();
        let end = if dirichlet { Boundary::Dirichlet } else { Boundary::Neumann };
        let b2 = free(&spec, 1.0, end);
        let g = assemble(&b1, &b2, &spec, 0, 3.0, H, 5.0).unwrap();
        for m in &g.modes {
            let vmax = m.potential.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let vmin = m.potential.iter().fold(0.0f64, |a, &v| a.min(v));
            let low = m.matrix.eigenvalue(0);
            prop_assert!(low >= m.op.nu - vmax - 1e-9);
            if vmin >= 0.0 {
                prop_assert!(low >= m.op.nu - 1e-9);
            }
            prop_assert_eq!(m.matrix.off.len() + 1, m.matrix.diag.len());
        }
    }
}
