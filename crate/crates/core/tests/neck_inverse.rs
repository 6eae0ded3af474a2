use neckspec::neck_inverse::*;
use neckspec::polyhom_calculus::{exact_int, PolyhomSection};
use neckspec::quadrature::simpson_fn;
use neckspec::rng::SplitMix64;
use neckspec::spectral_model::{DegreeTag, ModeOperator};
use neckspec::Error;

fn lap(nu: f64) -> ModeOperator {
    ModeOperator::laplace(nu, DegreeTag::Alpha)
}

fn mixed_modes() -> Vec<ModeOperator> {
    vec![lap(0.0), lap(0.0), ModeOperator::dirac(), lap(1.0), lap(4.0), lap(39.4784176)]
}

fn indicator(grid: NeckGrid, t: f64) -> CompactSection {
    CompactSection::from_fn(grid, t, 1, |_, _| 1.0).unwrap()
}

#[test]
fn box_source_singular_value_at_one() {
    // −∫_{−1}^{1} (1 − τ) dτ = −2
    let grid = NeckGrid::new(4.0, 1.0 / 64.0).unwrap();
    let f = indicator(grid, 1.0);
    let sol = q0_apply(&[lap(0.0)], &f).unwrap();
    let i = grid.index(1.0);
    let oracle = -simpson_fn(-1.0, 1.0, 1e-3, |tau| 1.0 - tau);
    assert!((sol.singular[0][i] - oracle).abs() < 1e-12);
    assert!((oracle + 2.0).abs() < 1e-12);
}

#[test]
fn box_source_trace_is_minus_two_t() {
    let grid = NeckGrid::new(4.0, 1.0 / 64.0).unwrap();
    let f = indicator(grid, 1.0);
    let tr = asymptotic_trace(&[lap(0.0)], &f).unwrap();
    let expected = PolyhomSection::monomial(1, 0, 1, exact_int(-2, 0));
    assert_eq!(tr, expected);
}

#[test]
fn linear_source_trace_is_constant() {
    let grid = NeckGrid::new(4.0, 1.0 / 64.0).unwrap();
    let f = CompactSection::from_fn(grid, 1.0, 1, |_, t| t).unwrap();
    let tr = asymptotic_trace(&[lap(0.0)], &f).unwrap();
    let v = tr.eval(10.0)[0];
    assert!((v.re - 2.0 / 3.0).abs() < 1e-14, "{v}");
    assert!(tr.eval(-7.0)[0].re - v.re == 0.0);
}

#[test]
fn zero_source_gives_zero_trace() {
    let grid = NeckGrid::new(4.0, 1.0 / 64.0).unwrap();
    let f = CompactSection::zeros(grid, 1.0, 1).unwrap();
    assert!(asymptotic_trace(&[lap(0.0)], &f).unwrap().is_zero());
}

#[test]
fn odd_source_has_no_linear_trace_term() {
    let grid = NeckGrid::new(8.0, 1.0 / 128.0).unwrap();
    // The running rule is one-sided, so oddness cancels only to quadrature
    // accuracy; a source flat at ±T keeps that far below any other error.
    let env = |t: f64| (1.0 - (t / 5.0).powi(2)).powi(4);
    let f = CompactSection::from_fn(grid, 5.0, 1, |_, t| t * env(t)).unwrap();
    let sol = q0_apply(&[lap(0.0)], &f).unwrap();
    assert!(sol.moments[0].1.abs() < 1e-9, "{}", sol.moments[0].1);
    assert!(sol.moments[0].0.abs() > 0.1);
}

#[test]
fn support_too_wide_is_rejected() {
    let grid = NeckGrid::new(4.0, 1.0 / 16.0).unwrap();
    assert!(matches!(CompactSection::zeros(grid, 3.0, 1), Err(Error::InvalidArgument(_))));
}

#[test]
fn nu_one_delta_matches_green_function() {
    let h = 1.0 / 64.0;
    let grid = NeckGrid::new(8.0, h).unwrap();
    let mut f = CompactSection::zeros(grid, 2.0, 1).unwrap();
    f.values[0][grid.index(0.0)] = 1.0 / h;
    let sol = q0_apply(&[lap(1.0)], &f).unwrap();
    for &t in &[0.0, 0.5, -1.0, 3.0, -5.0] {
        let u = sol.regular[0][grid.index(t)];
        let g = (-(t as f64).abs()).exp() / 2.0;
        assert!((u - g).abs() < 1e-4 * g.max(1e-3), "t = {t}: {u} vs {g}");
    }
}

#[test]
fn residual_is_second_order_on_mixed_modes() {
    let modes = mixed_modes();
    let fiber = 7;
    let mut rng = SplitMix64::new(11);
    for _ in 0..5 {
        let seed = rng.next_u64();
        let mut res = Vec::new();
        for h in [1.0 / 64.0, 1.0 / 128.0] {
            let grid = NeckGrid::new(8.0, h).unwrap();
            let f = smooth_random_section(grid, 5.0, fiber, &mut SplitMix64::new(seed)).unwrap();
            let sol = q0_apply(&modes, &f).unwrap();
            res.push(relative_residual(&modes, &f, &sol));
        }
        assert!(res[0] <= 1e-3, "{res:?}");
        let ratio = res[0] / res[1];
        assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn singular_part_equals_trace_past_support() {
    let modes = mixed_modes();
    let grid = NeckGrid::new(8.0, 1.0 / 32.0).unwrap();
    let f = smooth_random_section(grid, 5.0, 7, &mut SplitMix64::new(3)).unwrap();
    let sol = q0_apply(&modes, &f).unwrap();
    let (lo, hi) = f.support_range();
    for i in (hi..grid.len()).step_by(5) {
        let tr = sol.trace_plus.eval(grid.t(i));
        for c in 0..7 {
            assert!((sol.singular[c][i] - tr[c].re).abs() <= 1e-10 * (1.0 + tr[c].re.abs()));
        }
    }
    for c in 0..7 {
        assert!(sol.singular[c][..lo].iter().all(|&x| x == 0.0));
    }
}

#[test]
fn regular_part_decays_outside_support() {
    let grid = NeckGrid::new(12.0, 1.0 / 32.0).unwrap();
    let t = 4.0;
    let f = smooth_random_section(grid, t, 1, &mut SplitMix64::new(9)).unwrap();
    for nu in [1.0, 2.25, 9.0] {
        let sol = q0_apply(&[lap(nu)], &f).unwrap();
        let l1: f64 = f.values[0].iter().map(|x| x.abs()).sum::<f64>() * grid.h;
        let k = nu.sqrt();
        for i in 0..grid.len() {
            let ti = grid.t(i);
            if ti.abs() > t {
                let bound = l1 * (-k * (ti.abs() - t)).exp() / (2.0 * k);
                assert!(sol.regular[0][i].abs() <= bound * (1.0 + 1e-9));
            }
        }
    }
}

#[test]
fn norm_growth_exponents() {
    let ts = [5.0, 10.0, 20.0, 40.0];
    for (op, target) in [(lap(0.0), 2.0), (ModeOperator::dirac(), 1.0)] {
        let norms: Vec<f64> = ts.iter().map(|&t| q0_operator_norm(&op, t, 1.0 / 8.0).unwrap()).collect();
        let lx: Vec<f64> = ts.iter().map(|t: &f64| t.ln()).collect();
        let ly: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
        let d = neckspec::quadrature::ls_slope(&lx, &ly);
        assert!((d - target).abs() <= 0.2, "exponent {d} for {:?}", op.kind);
    }
}

#[test]
fn duality_examples() {
    let grid = NeckGrid::new(4.0, 1.0 / 128.0).unwrap();
    let f = indicator(grid, 1.0);
    let ops = [lap(0.0)];
    let v = PolyhomSection::monomial(1, 0, 1, exact_int(1, 0));
    let d = duality_check(&ops, &f, &v).unwrap();
    assert!(d.pairing.norm() < 1e-14 && d.l2.norm() < 1e-14);
    let v = PolyhomSection::monomial(1, 0, 0, exact_int(1, 0));
    let d = duality_check(&ops, &f, &v).unwrap();
    assert!((d.pairing.re - 2.0).abs() < 1e-13 && (d.l2.re - 2.0).abs() < 1e-13);
    let z = CompactSection::zeros(grid, 1.0, 1).unwrap();
    let d = duality_check(&ops, &z, &v).unwrap();
    assert_eq!((d.pairing.norm(), d.l2.norm(), d.residual), (0.0, 0.0, 0.0));
}

#[test]
fn bounded_inverse_without_real_roots() {
    let grid = NeckGrid::new(8.0, 1.0 / 32.0).unwrap();
    let f = smooth_random_section(grid, 5.0, 2, &mut SplitMix64::new(1)).unwrap();
    let rep = invertibility_no_real_roots(&[lap(1.0), lap(2.0)], &f).unwrap();
    assert!(rep.norm_ratio <= rep.bound);
    let mut d = CompactSection::zeros(grid, 5.0, 1).unwrap();
    d.values[0][grid.index(0.0)] = 32.0;
    let rep = invertibility_no_real_roots(&[lap(4.0)], &d).unwrap();
    let sup = rep.solution.regular[0].iter().cloned().fold(0.0, f64::max);
    assert!((sup - 0.25).abs() < 1e-15);
    let z = CompactSection::zeros(grid, 5.0, 1).unwrap();
    let rep = invertibility_no_real_roots(&[lap(1.0)], &z).unwrap();
    assert!(rep.solution.regular[0].iter().all(|&x| x == 0.0));
    assert!(matches!(
        invertibility_no_real_roots(&[lap(0.0)], &z),
        Err(Error::Contract(_))
    ));
}

#[test]
fn csv_dump_has_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let grid = NeckGrid::new(3.0, 0.5).unwrap();
    let f = indicator(grid, 1.0);
    let sol = q0_apply(&[lap(0.0)], &f).unwrap();
    let p = dir.path().join("q0.csv");
    sol.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("t,mode_index,u_r,u_s\n-3,0,0,0\n"));
}
