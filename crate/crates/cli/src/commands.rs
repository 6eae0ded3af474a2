use std::path::Path;

use anyhow::Result;

use neckspec::checks::{duality_sweep, glue_scaling, pairing_check, q0_check};
use neckspec::glued_model::{assemble, GluedOperator};
use neckspec::neck_inverse::{q0_apply, smooth_random_section, NeckGrid};
use neckspec::output::write_csv_atomic;
use neckspec::rng::SplitMix64;
use neckspec::spectral_density::density_sweep;
use neckspec::spectral_model::{mode_list, roots_of, ModeOperator, Root};

use crate::config::Config;

/// Result of one command: the summary line and whether it passed.
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
}

fn e(x: f64) -> String {
    format!("{x:.6e}")
}

fn root_str(r: &Root) -> String {
    let l = r.lambda;
    let z = |x: f64| if x == 0.0 { 0.0 } else { x };
    let v = match (l.re == 0.0, l.im == 0.0) {
        (_, true) => format!("{}", z(l.re)),
        (true, false) => format!("{}i", z(l.im)),
        _ => format!("{}{:+}i", l.re, l.im),
    };
    format!("{v} (order {})", r.order)
}

pub fn roots(cfg: &Config, out: &Path) -> Result<Outcome> {
    let mut rows = Vec::new();
    let mut zero_counts = Vec::new();
    for &q in &cfg.q {
        let modes = mode_list(&cfg.spectrum, q, cfg.cutoff)?;
        println!("q = {q}: {} modes below cutoff {}", modes.len(), cfg.cutoff);
        println!("{:>5} {:>8} {:>5} {:>12}  {:<30} real", "mode", "kind", "tag", "nu", "roots");
        for (i, m) in modes.iter().enumerate() {
            let data = roots_of(m);
            let all: Vec<String> = data.roots.iter().map(root_str).collect();
            let real: Vec<String> = data.real_roots.iter().map(root_str).collect();
            let real = if real.is_empty() { "none".to_string() } else { real.join(", ") };
            println!("{i:>5} {:>8} {:>5} {:>12.6}  {:<30} {real}", m.kind.as_str(), m.degree_tag.as_str(), m.nu, all.join(", "));
            rows.push(vec![
                q.to_string(),
                i.to_string(),
                m.kind.as_str().to_string(),
                m.degree_tag.as_str().to_string(),
                m.nu.to_string(),
                all.join("; "),
                real,
                data.max_real_order.to_string(),
            ]);
        }
        let zm = cfg.spectrum.zero_mode_count(q);
        println!("zero modes: {zm}");
        zero_counts.push(format!("q={q}: {zm}"));
    }
    write_csv_atomic(
        out.join("roots.csv"),
        &["q", "mode_index", "kind", "degree_tag", "nu", "roots", "real_roots", "max_real_order"],
        &rows,
    )?;
    Ok(Outcome { pass: true, summary: format!("roots: zero modes {}", zero_counts.join(", ")) })
}

pub fn q0check(cfg: &Config, out: &Path) -> Result<Outcome> {
    let h = cfg.h_or(1.0 / 64.0);
    let cases = cfg.cases.unwrap_or(20);
    let mut modes: Vec<ModeOperator> = Vec::new();
    for &q in &cfg.q {
        modes.extend(mode_list(&cfg.spectrum, q, cfg.cutoff)?);
    }
    modes.push(ModeOperator::dirac());
    let r = q0_check(&modes, h, cases, cfg.seed, &cfg.ts, 1.0 / 8.0)?;

    let rows: Vec<Vec<String>> = r
        .cases
        .iter()
        .enumerate()
        .map(|(i, c)| vec![i.to_string(), c.seed.to_string(), e(c.coarse), e(c.fine), e(c.ratio())])
        .collect();
    write_csv_atomic(out.join("q0_residuals.csv"), &["case", "seed", "residual_h", "residual_h2", "ratio"], &rows)?;
    let rows: Vec<Vec<String>> = r
        .growth
        .iter()
        .map(|g| vec![g.t.to_string(), e(g.laplace), e(g.dirac), e(r.laplace_exponent), e(r.dirac_exponent)])
        .collect();
    write_csv_atomic(
        out.join("q0_growth.csv"),
        &["T", "laplace_norm", "dirac_norm", "laplace_exponent", "dirac_exponent"],
        &rows,
    )?;
    // One solved sample, for plotting.
    let fiber: usize = modes.iter().map(|m| m.fiber_dim()).sum();
    let f = smooth_random_section(NeckGrid::new(8.0, h)?, 5.0, fiber, &mut SplitMix64::new(cfg.seed))?;
    q0_apply(&modes, &f)?.write_csv(out.join("q0_solution.csv"))?;

    let (lo, hi) = r.ratio_range();
    let mut pass = r.max_residual() <= 1e-3 && lo >= 3.6 && hi <= 4.4;
    if cfg.ts.len() >= 2 {
        pass &= (1.8..=2.2).contains(&r.laplace_exponent) && (0.8..=1.2).contains(&r.dirac_exponent);
    }
    Ok(Outcome {
        pass,
        summary: format!(
            "q0check: residual {:.3e} at h={h}, ratio [{lo:.3}, {hi:.3}], growth exponent laplace {:.3} dirac {:.3}",
            r.max_residual(),
            r.laplace_exponent,
            r.dirac_exponent
        ),
    })
}

pub fn paircheck(cfg: &Config, out: &Path) -> Result<Outcome> {
    let cases = cfg.cases.unwrap_or(100);
    let p = pairing_check(cases, cfg.seed)?;
    let d = duality_sweep(cases, cfg.seed.wrapping_add(1), cfg.h_or(1.0 / 128.0))?;
    let worst = d.iter().map(|c| c.relative).fold(0.0, f64::max);
    write_csv_atomic(
        out.join("pairing.csv"),
        &["check", "value"],
        &[
            vec!["cases".to_string(), p.cases.to_string()],
            vec!["closed_vs_integral".to_string(), e(p.closed_vs_integral)],
            vec!["center_spread".to_string(), e(p.center_spread)],
            vec!["gram_full_rank".to_string(), p.gram_full_rank.to_string()],
            vec!["right_inverse_exact".to_string(), p.right_inverse_exact.to_string()],
            vec!["duality_max_relative".to_string(), e(worst)],
        ],
    )?;
    let rows: Vec<Vec<String>> = d
        .iter()
        .enumerate()
        .map(|(i, c)| vec![i.to_string(), c.support.to_string(), e(c.pairing), e(c.l2), e(c.relative)])
        .collect();
    write_csv_atomic(out.join("duality.csv"), &["case", "T", "pairing_abs", "l2_abs", "relative"], &rows)?;
    let pass = p.closed_vs_integral <= 1e-8
        && p.center_spread <= 1e-8
        && p.gram_full_rank
        && p.right_inverse_exact
        && worst <= 1e-6;
    Ok(Outcome {
        pass,
        summary: format!(
            "paircheck: {cases} cases, closed vs integral {:.2e}, centre spread {:.2e}, gram full rank {}, right inverse exact {}, duality {:.2e}",
            p.closed_vs_integral, p.center_spread, p.gram_full_rank, p.right_inverse_exact, worst
        ),
    })
}

fn build(cfg: &Config, q: i64, t: f64, h: f64) -> neckspec::Result<GluedOperator> {
    let b1 = cfg.blocks[0].build(t, h)?;
    let b2 = cfg.blocks[1].build(t, h)?;
    assemble(&b1, &b2, &cfg.spectrum, q, t, h, cfg.cutoff)
}

pub fn glue(cfg: &Config, out: &Path) -> Result<Outcome> {
    let h = cfg.h_or(1.0 / 32.0);
    // Assemble once up front so matching errors surface before any work.
    for &q in &cfg.q {
        build(cfg, q, cfg.ts[0], h)?;
    }
    let mut pass = true;
    let mut parts = Vec::new();
    let mut rows = Vec::new();
    for &q in &cfg.q {
        let r = glue_scaling(|t| build(cfg, q, t, h), &cfg.ts, cfg.seed, 60)?;
        for (row, rep) in r.rows.iter().zip(&r.reports) {
            rep.write_csv(out.join(format!("solve_q{q}_T{}.csv", row.t)))?;
            rows.push(vec![
                q.to_string(),
                row.t.to_string(),
                row.iterations.to_string(),
                e(row.eta),
                e(row.contraction),
                e(row.residual),
                e(row.direct_diff),
                e(row.l2_ratio),
                e(row.sup_ratio),
            ]);
            pass &= row.residual <= 1e-8 && row.direct_diff <= 1e-6;
        }
        let mut part = format!("q={q} direct diff {:.2e}", r.rows.iter().map(|x| x.direct_diff).fold(0.0, f64::max));
        if cfg.ts.len() >= 2 {
            pass &= r.sup_exponent <= 1.2;
            part += &format!(", growth exponent {:.3}", r.sup_exponent);
            let potentials: Vec<f64> = cfg.blocks.iter().filter(|b| b.has_potential()).map(|b| b.mu()).collect();
            if !potentials.is_empty() {
                let mu = potentials.iter().cloned().fold(f64::INFINITY, f64::min);
                let nu1 = cfg.spectrum.first_positive(q).unwrap_or(f64::INFINITY);
                let target = -0.9 * mu.min(nu1.sqrt());
                pass &= (r.eta_slope - target).abs() <= 0.2 * target.abs();
                part += &format!(", eta slope {:.4} (target {target:.4})", r.eta_slope);
            }
        }
        parts.push(part);
    }
    write_csv_atomic(
        out.join("glue.csv"),
        &["q", "T", "iterations", "eta", "contraction", "residual", "direct_diff", "u_l2_ratio", "u_sup_ratio"],
        &rows,
    )?;
    Ok(Outcome { pass, summary: format!("glue: {}", parts.join("; ")) })
}

pub fn density(cfg: &Config, out: &Path) -> Result<Outcome> {
    let h = cfg.h_or(1.0 / 16.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for &q in &cfg.q {
        let rep = density_sweep(|t| build(cfg, q, t, h), q, &cfg.ss, &cfg.ts)?;
        rep.write_csv(out.join(format!("density_q{q}.csv")))?;
        rep.write_gnuplot(out)?;
        let r0 = 2.0 * rep.b() as f64 + 1.0;
        println!("q = {q}, B = {}, R0 = {r0}", rep.b());
        println!("{:>8} {:>8} {:>6} {:>10} {:>9} {:>6} {:>6}", "T", "s", "count", "2B sqrt s", "residual", "beta", "alpha");
        for row in &rep.rows {
            println!(
                "{:>8} {:>8} {:>6} {:>10.4} {:>9.4} {:>6} {:>6}",
                row.t,
                row.s,
                row.count,
                rep.prediction(row.s),
                rep.residual(row),
                row.beta,
                row.alpha
            );
        }
        let ok = rep.check_uniform(1.0).is_ok() && rep.max_branch_residual() <= r0;
        pass &= ok;
        parts.push(format!(
            "q={q} B={} max residual {:.3} branch {:.3} (R0 {r0})",
            rep.b(),
            rep.max_residual(),
            rep.max_branch_residual()
        ));
    }
    Ok(Outcome { pass, summary: format!("density: {}", parts.join("; ")) })
}

