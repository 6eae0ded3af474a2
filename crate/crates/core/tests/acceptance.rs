//! Acceptance run: one PASS/FAIL line per criterion with its runtime.
//! Exits nonzero when any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};

use neckspec::checks::{classify_solvability, duality_sweep, glue_scaling, mixed_modes, pairing_check, q0_check};
use neckspec::experiments::{free_pair, profile_pair, unit_circle};
use neckspec::glued_model::Boundary;
use neckspec::spectral_density::{
    density_sweep, h_operator_check, log_slope, minmax_upper_from_vn, scalar_lambda1_bounds,
    substitute_kernel_angles, TestSpace, TestSpaceKind, DEFAULT_S,
};
use neckspec::spectral_model::{default_cutoff, torus2_spectrum};
use num_complex::Complex64;

const NN: (Boundary, Boundary) = (Boundary::Neumann, Boundary::Neumann);
const ND: (Boundary, Boundary) = (Boundary::Neumann, Boundary::Dirichlet);

/// Decay rate of the profile potential used by the scaling criteria.
const MU: f64 = 0.3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

fn c1() -> Result<Verdict> {
    let r = q0_check(&mixed_modes(), 1.0 / 64.0, 20, 11, &[5.0, 10.0, 20.0, 40.0], 1.0 / 8.0)?;
    let (lo, hi) = r.ratio_range();
    let ok = r.max_residual() <= 1e-3
        && lo >= 3.6
        && hi <= 4.4
        && (1.8..=2.2).contains(&r.laplace_exponent)
        && (0.8..=1.2).contains(&r.dirac_exponent);
    verdict(
        ok,
        format!(
            "residual {:.2e} at h=1/64, ratio h->h/2 in [{lo:.3}, {hi:.3}], exponents laplace {:.3} dirac {:.3}",
            r.max_residual(),
            r.laplace_exponent,
            r.dirac_exponent
        ),
    )
}

fn c2() -> Result<Verdict> {
    let r = pairing_check(100, 21)?;
    let ok = r.closed_vs_integral <= 1e-8 && r.center_spread <= 1e-8 && r.gram_full_rank && r.right_inverse_exact;
    verdict(
        ok,
        format!(
            "{} cases: closed vs integral {:.2e}, centre spread {:.2e}, gram full rank {}, P(Q f) = f exact {}",
            r.cases, r.closed_vs_integral, r.center_spread, r.gram_full_rank, r.right_inverse_exact
        ),
    )
}

fn c3() -> Result<Verdict> {
    let cases = duality_sweep(100, 31, 1.0 / 128.0)?;
    let worst = cases.iter().map(|c| c.relative).fold(0.0, f64::max);
    verdict(worst <= 1e-6, format!("{} cases, max relative defect {worst:.2e}", cases.len()))
}

fn c4() -> Result<Verdict> {
    let spec = unit_circle();
    let h = 1.0 / 32.0;
    let configs = [
        free_pair(&spec, 0, ND, 2.0, 10.0, h, 4.5)?,
        profile_pair(&spec, MU, 10.0, h, 4.5)?,
        free_pair(&spec, 1, NN, 2.0, 10.0, h, 4.5)?,
    ];
    let mut dims = Vec::new();
    let mut errors = 0;
    let mut total = 0;
    for (i, g) in configs.iter().enumerate() {
        let c = classify_solvability(g, 100 + i as u64, 60, 1e-6)?;
        dims.push(c.kernel_dim);
        errors += c.errors;
        total += c.cases;
    }
    let ok = errors == 0 && dims == [0, 1, 2];
    verdict(ok, format!("{total} right-hand sides over dim K_T = {dims:?}: {errors} misclassified"))
}

fn c5() -> Result<Verdict> {
    let spec = unit_circle();
    let ts = [10.0, 20.0, 40.0];
    let r = glue_scaling(|t| profile_pair(&spec, MU, t, 1.0 / 32.0, 4.5), &ts, 5, 60)?;
    let target = -0.9 * MU.min(1.0);
    let direct = r.rows.iter().map(|x| x.direct_diff).fold(0.0, f64::max);
    let ok = direct <= 1e-6 && within(r.eta_slope, target, 0.2) && r.sup_exponent <= 1.2;
    verdict(
        ok,
        format!(
            "direct diff {direct:.2e}, eta slope {:.4} (target {target:.3}), growth exponent sup {:.3} (l2 {:.3})",
            r.eta_slope, r.sup_exponent, r.l2_exponent
        ),
    )
}

fn c6() -> Result<Verdict> {
    let spec = unit_circle();
    let c = 1.0;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut up: f64 = 0.0;
    for t in [20.0, 40.0, 80.0] {
        for g in [free_pair(&spec, 0, NN, 0.0, t, 1.0 / 16.0, 4.5)?, profile_pair(&spec, MU, t, 1.0 / 32.0, 4.5)?] {
            let b = scalar_lambda1_bounds(&g)?;
            lo = lo.min(b.lambda1_t2());
            hi = hi.max(b.lambda1_t2());
            up = up.max(b.upper_t2());
        }
    }
    let ok = lo >= c && hi <= 6.3 && up <= 6.3;
    verdict(ok, format!("lambda1 T^2 in [{lo:.3}, {hi:.3}] with c = {c}, ramp bound T^2 <= {up:.3}"))
}

fn c7() -> Result<Verdict> {
    let ts = [20.0, 40.0, 80.0];
    let cutoff = default_cutoff(ts[0], 25.21);
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, spec, q) in [("circle q=0", unit_circle(), 0), ("torus q=1", Arc::new(torus2_spectrum(1)?), 1)] {
        let rep = density_sweep(|t| free_pair(&spec, q, NN, 2.0, t, 1.0 / 16.0, cutoff), q, &DEFAULT_S, &ts)?;
        let r0 = 2.0 * rep.b() as f64 + 1.0;
        let uniform = rep.check_uniform(1.0);
        ok &= uniform.is_ok() && rep.max_branch_residual() <= r0;
        parts.push(format!(
            "{name} B={} R0={r0}: max |residual| {:.2}, branch {:.2}",
            rep.b(),
            rep.max_residual(),
            rep.max_branch_residual()
        ));
    }
    verdict(ok, parts.join("; "))
}

fn c8() -> Result<Verdict> {
    for n in 2..=8 {
        let v = TestSpace::new(TestSpaceKind::Vn, n, n)?;
        let w = TestSpace::new(TestSpaceKind::Wn, n, n)?;
        let e = TestSpace::new(TestSpaceKind::E, n, n + 12)?;
        let vp = TestSpace::new(TestSpaceKind::VnPrime, n, n + 12)?;
        ensure!(v.dim() == 2 * n - 2 && v.codim() == 2, "V_{n}: dim {} codim {}", v.dim(), v.codim());
        ensure!(w.dim() == 2 * n - 3 && w.codim() == 3, "W_{n}: dim {} codim {}", w.dim(), w.codim());
        ensure!(e.codim() == 3, "E: codim {}", e.codim());
        ensure!(vp.codim() == e.codim() + 2 * n, "V'_{n}: codim {}", vp.codim());
    }
    let mut h_dev: f64 = 0.0;
    for (n, t) in [(1, 10.0), (3, 8.0), (4, 20.0)] {
        let sp = TestSpace::new(TestSpaceKind::VnPrime, n, n + 6)?;
        for b in 0..sp.dim() {
            let terms: Vec<(i64, Complex64)> = sp
                .ks
                .iter()
                .enumerate()
                .map(|(j, &k)| (k, Complex64::new(sp.basis[(j, b)], 0.3 * sp.basis[(j, b)])))
                .collect();
            let r = h_operator_check(&sp, &terms, t, 1.0 / 256.0)?;
            h_dev = h_dev.max(r.max_deviation.max(r.tail) / r.f_norm.max(1.0));
        }
    }
    let spec = unit_circle();
    let mut bad = Vec::new();
    let mut checked = 0;
    for t in [20.0, 40.0] {
        let g = free_pair(&spec, 0, NN, 2.0, t, 1.0 / 16.0, 4.5)?;
        for n in 2..=6 {
            let tau = if n <= 3 { 0.1 } else { 0.02 };
            let m = minmax_upper_from_vn(&g, n, tau, 0.05)?;
            checked += 1;
            if !(m.certifies_target() && m.count_below_target >= m.required()) {
                bad.push(format!("n={n} T={t}"));
            }
        }
    }
    let ok = h_dev <= 1e-6 && bad.is_empty();
    verdict(
        ok,
        format!("dims ok for n=2..8, H deviation {h_dev:.2e}, {checked} min-max bounds, failing {bad:?}"),
    )
}

fn c9() -> Result<Verdict> {
    let spec = unit_circle();
    let ts = [10.0, 20.0, 40.0];
    let sines = ts
        .iter()
        .map(|&t| Ok(substitute_kernel_angles(&profile_pair(&spec, MU, t, 1.0 / 32.0, 4.5)?)?.max_sine()))
        .collect::<Result<Vec<f64>>>()?;
    let slope = log_slope(&ts, &sines);
    let target = -0.9 * MU.min(1.0);
    verdict(
        within(slope, target, 0.2),
        format!("sines {:?}, slope {slope:.4} (target {target:.3})", sines.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>()),
    )
}

/// Name, check, time budget in seconds.
type Criterion = (&'static str, fn() -> Result<Verdict>, u64);

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1 neck right inverse", c1, 10),
        ("C2 pairing", c2, 5),
        ("C3 duality", c3, 5),
        ("C4 solvability", c4, 30),
        ("C5 gluing solver", c5, 60),
        ("C6 lambda1 scaling", c6, 60),
        ("C7 density law", c7, 300),
        ("C8 test spaces", c8, 30),
        ("C9 kernel angles", c9, 30),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let out = run().with_context(|| name.to_string());
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let (pass, detail) = match out {
            Ok(v) => (v.pass && in_time, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!pass);
        let budget_note = if in_time { String::new() } else { format!(" over budget {budget}s") };
        println!(
            "{} {name} ({:.2}s{budget_note}): {detail}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
