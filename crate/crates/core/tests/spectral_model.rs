use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use neckspec::spectral_model::*;
use neckspec::Error;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
    (a - b).norm() <= tol
}

#[test]
fn unit_circle_degree_zero() {
    let s = circle_spectrum(2.0 * PI, 2).unwrap();
    let d0 = s.degree(0);
    assert_eq!(d0.len(), 3);
    assert_eq!(d0[0], (0.0, 1));
    assert!((d0[1].0 - 1.0).abs() < 1e-14 && d0[1].1 == 2);
    assert!((d0[2].0 - 4.0).abs() < 1e-14 && d0[2].1 == 2);
    assert_eq!(s.degree(1), d0);
    assert_eq!((s.betti(0), s.betti(1)), (1, 1));
}

#[test]
fn half_circle_first_level_is_four() {
    let s = circle_spectrum(PI, 1).unwrap();
    let d0 = s.degree(0);
    assert_eq!(d0.len(), 2);
    assert!((d0[1].0 - 4.0).abs() < 1e-14 && d0[1].1 == 2);
}

#[test]
fn circle_rejects_bad_length() {
    assert!(matches!(circle_spectrum(0.0, 2), Err(Error::InvalidArgument(_))));
    assert!(matches!(circle_spectrum(-1.0, 2), Err(Error::InvalidArgument(_))));
    assert!(matches!(circle_spectrum(1.0, 0), Err(Error::InvalidArgument(_))));
}

fn lattice_count(max: i64, r2: i64) -> usize {
    let mut n = 0;
    for a in -max..=max {
        for b in -max..=max {
            if a * a + b * b == r2 {
                n += 1;
            }
        }
    }
    n
}

fn mult_of(list: &[(f64, usize)], nu: f64) -> usize {
    list.iter().filter(|(x, _)| (x - nu).abs() < 1e-9).map(|(_, m)| *m).sum()
}

#[test]
fn torus_betti_and_first_level() {
    let s = torus2_spectrum(1).unwrap();
    assert_eq!((s.betti(0), s.betti(1), s.betti(2)), (1, 2, 1));
    let nu = 4.0 * PI * PI;
    assert_eq!(mult_of(s.degree(0), nu), lattice_count(1, 1));
    assert_eq!(mult_of(s.degree(0), nu), 4);
}

#[test]
fn torus_degree_one_multiplicity_doubles() {
    let s = torus2_spectrum(2).unwrap();
    let nu = 4.0 * PI * PI;
    assert_eq!(mult_of(s.degree(1), nu), 2 * lattice_count(2, 1));
    assert_eq!(mult_of(s.degree(1), nu), 8);
    // √5 level: (±1,±2), (±2,±1)
    assert_eq!(mult_of(s.degree(0), 5.0 * nu), lattice_count(2, 5));
}

#[test]
fn k3_t2_betti_file() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/k3_t2_betti.json");
    let s = load_spectrum(path).unwrap();
    let b: Vec<usize> = (0..4).map(|q| s.betti(q)).collect();
    assert_eq!(b, vec![1, 2, 23, 44]);
    assert_eq!(s.dimension, 6);
}

#[test]
fn empty_degree_list_has_zero_betti() {
    let s = CrossSectionSpectrum::from_json_str(r#"{"name":"e","dimension":1,"degrees":{"0":[]}}"#).unwrap();
    assert_eq!(s.betti(0), 0);
    assert!(s.degree(0).is_empty());
}

fn parse_field(text: &str) -> String {
    match CrossSectionSpectrum::from_json_str(text) {
        Err(Error::Parse { field, .. }) => field,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn parse_errors_name_the_field() {
    let neg = parse_field(r#"{"name":"x","dimension":1,"degrees":{"0":[[0,1],[-1,2]]}}"#);
    assert_eq!(neg, "degrees.0[1].nu");
    let zero = parse_field(r#"{"name":"x","dimension":1,"degrees":{"0":[[1,0]]}}"#);
    assert_eq!(zero, "degrees.0[0].mult");
    let unknown = parse_field(r#"{"name":"x","dimension":1,"degrees":{},"extra":1}"#);
    assert_eq!(unknown, "extra");
    let missing = parse_field(r#"{"dimension":1,"degrees":{}}"#);
    assert_eq!(missing, "name");
    assert_eq!(parse_field("[1,2"), "<document>");
}

#[test]
fn twist_must_be_orthogonal() {
    let good = r#"{"name":"x","dimension":1,"degrees":{"0":[[0,1],[1,2]]},
        "twist":{"0":{"1":[[0,-1],[1,0]]}}}"#;
    let s = CrossSectionSpectrum::from_json_str(good).unwrap();
    assert!(s.has_nontrivial_twist());
    assert_eq!(s.twist(0, 1).unwrap(), &DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
    let bad = r#"{"name":"x","dimension":1,"degrees":{"0":[[0,1],[1,2]]},
        "twist":{"0":{"1":[[2,0],[0,1]]}}}"#;
    assert_eq!(parse_field(bad), "twist.0.1");
    let wrong_size = r#"{"name":"x","dimension":1,"degrees":{"0":[[0,1]]},"twist":{"0":{"0":[[1,0],[0,1]]}}}"#;
    assert_eq!(parse_field(wrong_size), "twist.0.0");
}

#[test]
fn json_round_trip() {
    let s = torus2_spectrum(2).unwrap();
    let back = CrossSectionSpectrum::from_json_value(&s.to_json_value()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn circle_one_forms_have_two_zero_modes() {
    let s = circle_spectrum(2.0 * PI, 2).unwrap();
    let m = mode_list(&s, 1, 0.5).unwrap();
    assert_eq!(m.len(), 2);
    assert!(m.iter().all(|o| o.nu == 0.0 && o.kind == ModeKind::Laplace));
    assert_eq!(m[0].degree_tag, DegreeTag::Alpha);
    assert_eq!(m[1].degree_tag, DegreeTag::Beta);
}

#[test]
fn torus_one_forms_have_three_zero_modes() {
    let s = torus2_spectrum(1).unwrap();
    let m = mode_list(&s, 1, 0.5).unwrap();
    assert_eq!(m.len(), 3);
    assert_eq!(m.iter().filter(|o| o.degree_tag == DegreeTag::Alpha).count(), 2);
}

#[test]
fn circle_functions_up_to_two() {
    let s = circle_spectrum(2.0 * PI, 2).unwrap();
    let nus: Vec<f64> = mode_list(&s, 0, 2.0).unwrap().iter().map(|o| o.nu).collect();
    assert_eq!(nus.len(), 3);
    assert_eq!(nus[0], 0.0);
    assert!((nus[1] - 1.0).abs() < 1e-14 && (nus[2] - 1.0).abs() < 1e-14);
}

#[test]
fn mode_list_argument_checks() {
    let s = circle_spectrum(2.0 * PI, 2).unwrap();
    assert!(matches!(mode_list(&s, -1, 1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(mode_list(&s, 0, 0.0), Err(Error::InvalidArgument(_))));
}

#[test]
fn laplace_four_has_imaginary_roots() {
    let r = roots_of(&ModeOperator::laplace(4.0, DegreeTag::Alpha));
    assert_eq!(r.roots.len(), 2);
    assert!(r.roots.iter().any(|x| close(x.lambda, c(0.0, 2.0), 1e-15) && x.order == 1));
    assert!(r.roots.iter().any(|x| close(x.lambda, c(0.0, -2.0), 1e-15) && x.order == 1));
    assert!(r.real_roots.is_empty());
    assert_eq!(r.max_real_order, 0);
}

#[test]
fn zero_modes_have_real_root_at_origin() {
    let lap = roots_of(&ModeOperator::laplace(0.0, DegreeTag::Beta));
    assert_eq!(lap.real_roots.len(), 1);
    assert_eq!(lap.real_roots[0].order, 2);
    assert_eq!(lap.max_real_order, 2);
    let dirac = roots_of(&ModeOperator::dirac());
    assert_eq!(dirac.real_roots.len(), 1);
    assert_eq!(dirac.max_real_order, 1);
}

#[test]
fn laplace_zero_laurent_at_origin() {
    let l = resolvent_laurent(&ModeOperator::laplace(0.0, DegreeTag::Alpha), c(0.0, 0.0), 3);
    assert_eq!(l.order, 2);
    assert!(close(l.get(-2).unwrap()[(0, 0)], c(1.0, 0.0), 1e-15));
    assert!(close(l.get(-1).unwrap()[(0, 0)], c(0.0, 0.0), 1e-15));
    assert!(close(l.get(0).unwrap()[(0, 0)], c(0.0, 0.0), 1e-15));
}

#[test]
fn laplace_one_is_regular_at_origin() {
    // 1/(λ²+1) = 1 − λ² + λ⁴ − …
    let l = resolvent_laurent(&ModeOperator::laplace(1.0, DegreeTag::Alpha), c(0.0, 0.0), 4);
    assert_eq!(l.order, 0);
    let want = [1.0, 0.0, -1.0, 0.0, 1.0];
    for (m, w) in want.iter().enumerate() {
        assert!(close(l.get(m as i32).unwrap()[(0, 0)], c(*w, 0.0), 1e-14), "m = {m}");
    }
}

#[test]
fn dirac_residue_is_i_j() {
    let l = resolvent_laurent(&ModeOperator::dirac(), c(0.0, 0.0), 2);
    assert_eq!(l.order, 1);
    let r = l.get(-1).unwrap();
    // J = [[0,-1],[1,0]], J² = −1
    let j = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
    assert!((r - j.map(|x| x * c(0.0, 1.0))).norm() < 1e-15);
    let j2 = &j * &j;
    assert!((j2 + DMatrix::identity(2, 2)).norm() < 1e-15);
    assert!(l.get(0).unwrap().norm() < 1e-15);
}

#[test]
fn default_cutoff_formula() {
    let c = default_cutoff(80.0, 25.21);
    assert!((c - 25.0 * (PI / 80.0).powi(2) * 25.21).abs() < 1e-14);
}

proptest! {
    #[test]
    fn resolvent_matches_inverse_symbol(nu in 0.0f64..50.0, lam in -20.0f64..20.0) {
        prop_assume!(lam * lam + nu >= 1e-6);
        let op = ModeOperator::laplace(nu, DegreeTag::Alpha);
        let r = op.resolvent_scalar(c(lam, 0.0));
        let want = 1.0 / (lam * lam + nu);
        prop_assert!((r.re - want).abs() <= 4.0 * f64::EPSILON * want && r.im == 0.0);
    }

    #[test]
    fn laurent_reconstruction_near_root(nu in 0.05f64..10.0, frac in -0.45f64..0.45, m_max in 25usize..40) {
        // Expand at +i√ν; the other root is 2√ν away.
        let op = ModeOperator::laplace(nu, DegreeTag::Alpha);
        let s = nu.sqrt();
        let root = c(0.0, s);
        let l = resolvent_laurent(&op, root, m_max);
        prop_assert_eq!(l.order, 1);
        let lam = root + c(frac * s, 0.0) * 0.5;
        let want = op.resolvent_scalar(lam);
        let got = l.reconstruct(lam)[(0, 0)];
        prop_assert!((got - want).norm() <= 1e-10 * (1.0 + want.norm()), "{got} vs {want}");
    }

    #[test]
    fn laurent_regular_reconstruction(nu in 0.5f64..10.0, x in -0.3f64..0.3) {
        // Regular point 0, nearest roots at ±i√ν; stay inside √ν/2.
        let op = ModeOperator::laplace(nu, DegreeTag::Alpha);
        let l = resolvent_laurent(&op, c(0.0, 0.0), 60);
        let lam = c(x * nu.sqrt(), 0.0);
        let want = op.resolvent_scalar(lam);
        prop_assert!((l.reconstruct(lam)[(0, 0)] - want).norm() <= 1e-10);
    }

    #[test]
    fn betti_is_zero_multiplicity(m0 in 0usize..4, m1 in 0usize..4, pos in proptest::collection::vec((0.01f64..50.0, 1usize..4), 0..6)) {
        let mut deg = std::collections::BTreeMap::new();
        let mut l0 = pos.clone();
        if m0 > 0 { l0.push((0.0, m0)); }
        let mut l1 = pos;
        if m1 > 0 { l1.push((0.0, m1)); }
        deg.insert(0, l0);
        deg.insert(1, l1);
        let s = CrossSectionSpectrum::new("p", 1, deg).unwrap();
        prop_assert_eq!(s.betti(0), m0);
        prop_assert_eq!(s.betti(1), m1);
        for q in 0..3i64 {
            let ops = mode_list(&s, q, 100.0).unwrap();
            let has_real = ops.iter().any(|o| !roots_of(o).real_roots.is_empty());
            prop_assert_eq!(has_real, s.betti(q) + s.betti(q - 1) > 0);
        }
        for (_, list) in s.degrees() {
            prop_assert!(list.windows(2).all(|w| w[0].0 < w[1].0));
            prop_assert!(list.iter().all(|(nu, m)| *nu >= 0.0 && *m >= 1));
        }
    }
}
