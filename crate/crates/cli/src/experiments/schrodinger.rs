use fraclab_core::region::Region;
use fraclab_core::schrodinger::{
    alessandrini_gap, dirichlet_spectrum, dn_map, recover_pairings, DirichletSolver, DomainMask, ExteriorBasis,
    RungeSystem, SchrodingerProblem,
};
use fraclab_core::{frac_laplacian, l2_inner, make_bump, Field, Grid, MeanPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{csv, num, Outcome, Relation, Result};
use crate::config::{ConfigError, ExperimentConfig};

fn mask(cfg: &ExperimentConfig) -> Result<DomainMask> {
    let g = cfg.grid("grid")?;
    let omega = cfg.region("domain", "omega", &g)?;
    let w1 = cfg.region("domain", "w1", &g)?;
    let w2 = cfg.region("domain", "w2", &g)?;
    Ok(DomainMask::from_regions(g, &omega, &w1, &w2)?)
}

/// `[q_lo, q_hi)` from `section`; the interval must be non-empty.
fn potential_range(cfg: &ExperimentConfig, section: &str) -> Result<(f64, f64)> {
    let (lo, hi) = (cfg.f64(section, "q_lo")?, cfg.f64(section, "q_hi")?);
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        let reason = format!("q_hi = {hi} must exceed q_lo = {lo}");
        return Err(ConfigError::Invalid { section: section.into(), key: "q_hi".into(), reason }.into());
    }
    Ok((lo, hi))
}

/// `a + b cos(k x_1)` on Omega with `a, b` uniform in `[lo, hi)`.
fn random_q(mask: &DomainMask, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Field {
    let a: f64 = rng.random_range(lo..hi);
    let b: f64 = rng.random_range(lo..hi);
    let k: f64 = rng.random_range(1.0..4.0);
    let vals: Vec<f64> = mask.omega.iter().map(|&i| a + b * (k * mask.grid.point(i)[0]).cos()).collect();
    mask.extend(&vals)
}

/// `a + b cos^2(k x_1)` with `a, b` uniform in `[0, max(hi, 1))`.
fn nonnegative_q(mask: &DomainMask, rng: &mut ChaCha8Rng, hi: f64) -> Field {
    let hi = hi.max(1.0);
    let a: f64 = rng.random_range(0.0..hi);
    let b: f64 = rng.random_range(0.0..hi);
    let k: f64 = rng.random_range(1.0..4.0);
    let vals: Vec<f64> = mask.omega.iter().map(|&i| a + b * (k * mask.grid.point(i)[0]).cos().powi(2)).collect();
    mask.extend(&vals)
}

/// A unit-amplitude bump from a `ball(...)` entry.
fn bump(cfg: &ExperimentConfig, section: &str, key: &str, grid: &Grid) -> Result<Field> {
    match cfg.region(section, key, grid)? {
        Region::Ball { center, radius } => Ok(make_bump(grid, &center, radius, 1.0)?),
        _ => {
            Err(ConfigError::Invalid { section: section.into(), key: key.into(), reason: "expected ball(...)".into() }
                .into())
        }
    }
}

fn window_basis(cfg: &ExperimentConfig, section: &str, mask: &DomainMask, window: &str) -> Result<ExteriorBasis> {
    let region = cfg.region("domain", window, &mask.grid)?;
    let radius = cfg.f64(section, "basis_radius")?;
    Ok(ExteriorBasis::new(&mask.grid, &region, radius, cfg.usize(section, "basis_count")?)?)
}

pub(super) fn dn(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let m = mask(cfg)?;
    let g = m.grid;
    let s = cfg.f64("schrodinger", "s")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = potential_range(cfg, "schrodinger")?;
    let q = random_q(&m, &mut rng, lo, hi);
    let p = SchrodingerProblem::new(m.clone(), s, q.clone())?;
    out.field("q", &q);

    let b1 = window_basis(cfg, "schrodinger", &m, "w1")?;
    let b2 = window_basis(cfg, "schrodinger", &m, "w2")?;
    let mut desc = b1.descriptors(1);
    desc.extend(b2.descriptors(2));
    let basis: Vec<Field> = b1.fields.iter().chain(&b2.fields).cloned().collect();
    let dn = out.timed("dn_map", || dn_map(&p, &basis, desc))?;
    out.iterations("dn_map", dn.iterations.iter().map(|&i| i as u64).sum());
    out.text("dn.csv", dn.to_csv());
    out.metric("dn_size", dn.size());
    out.metric("dn_max_residual", dn.max_residual);
    out.metric("solver_path", dn.path);
    out.check("dn_asymmetry", dn.asymmetry(), Relation::AtMost, 1e-10);

    // manufactured interior solution: source = A v* + (-Δ)^s f restricted to Omega
    let f = b1.fields[0].add(&b2.fields[0].scale(0.5))?;
    let v_star: Vec<f64> = m.omega.iter().map(|&i| (2.0 * g.point(i)[0]).sin() + 0.3).collect();
    let lap_f = frac_laplacian(&f, s, MeanPolicy::Require)?;
    let source: Vec<f64> = p.apply(&v_star).iter().zip(&m.omega).map(|(a, &i)| a + lap_f.values()[i]).collect();
    let sol = out.timed("manufactured", || DirichletSolver::new(&p)?.solve_with_source(&f, Some(&source)))?;
    out.iterations("manufactured", sol.iterations as u64);
    let err = m.restrict(&sol.u).iter().zip(&v_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.field("manufactured_u", &sol.u);
    out.check("manufactured_error", err, Relation::AtMost, 1e-9);

    let k = cfg.usize("schrodinger", "spectrum_k")?;
    let mut rows = Vec::new();
    let mut lowest = f64::INFINITY;
    for id in 0..=cfg.usize("schrodinger", "spectrum_potentials")? {
        let q = if id == 0 { Field::zeros(g) } else { nonnegative_q(&m, &mut rng, hi) };
        let values = out.timed("spectra", || dirichlet_spectrum(&p.with_q(q)?, k))?;
        lowest = lowest.min(values[0]);
        rows.extend(values.iter().enumerate().map(|(j, v)| vec![id.to_string(), j.to_string(), num(*v)]));
    }
    out.text("spectra.csv", csv("potential,index,eigenvalue", rows));
    out.metric("lowest_eigenvalue_nonnegative_q", lowest);
    out.check("nonnegative_q_spectrum_positive", lowest, Relation::Above, 0.0);
    Ok(())
}

pub(super) fn alessandrini(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let m = mask(cfg)?;
    let g = m.grid;
    let s = cfg.f64("alessandrini", "s")?;
    let (lo, hi) = potential_range(cfg, "alessandrini")?;
    let f1 = bump(cfg, "alessandrini", "f1", &g)?;
    let f2 = bump(cfg, "alessandrini", "f2", &g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for pair in 0..cfg.usize("alessandrini", "pairs")? {
        let p1 = SchrodingerProblem::new(m.clone(), s, random_q(&m, &mut rng, lo, hi))?;
        let p2 = p1.with_q(random_q(&m, &mut rng, lo, hi))?;
        let r = out.timed("pairs", || alessandrini_gap(&p1, &p2, &f1, &f2))?;
        let scale = r.lhs.abs().max(r.rhs.abs()).max(f1.l2_norm() * f2.l2_norm());
        let rel = r.gap / scale;
        worst = worst.max(rel);
        rows.push(vec![pair.to_string(), num(r.lhs), num(r.rhs), num(r.gap), num(rel)]);
    }
    out.text("alessandrini.csv", csv("pair,lhs,rhs,gap,relative_gap", rows));
    out.metric("worst_relative_gap", worst);
    out.check("alessandrini_gap", worst, Relation::AtMost, 1e-8);
    Ok(())
}

pub(super) fn runge(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let m = mask(cfg)?;
    let g = m.grid;
    let p = SchrodingerProblem::new(m.clone(), cfg.f64("runge", "s")?, Field::zeros(g))?;
    let b1 = window_basis(cfg, "runge", &m, "w1")?;
    let target = bump(cfg, "runge", "target", &g)?;
    let system = out.timed("basis_solves", || RungeSystem::new(&p, &b1.fields))?;
    let gv = m.restrict(&target);
    let size = b1.fields.len();
    let deltas = cfg.f64_list("runge", "deltas")?;
    let mut rows = Vec::new();
    let mut best: Option<fraclab_core::schrodinger::RungeResult> = None;
    for &delta in &deltas {
        let fit = out.timed("fits", || system.fit(&gv, delta, size))?;
        rows.push(vec![num(delta), num(fit.residual), num(fit.condition), fit.ill_conditioned.to_string()]);
        if best.as_ref().is_none_or(|b| fit.residual < b.residual) {
            best = Some(fit);
        }
    }
    let best = best.ok_or_else(|| ConfigError::Invalid {
        section: "runge".into(),
        key: "deltas".into(),
        reason: "empty sweep".into(),
    })?;
    out.text("runge_sweep.csv", csv("delta,residual,condition,ill_conditioned", rows));
    let history = best.misfit_history.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), num(*v)]);
    out.text("runge_misfit.csv", csv("basis_size,misfit", history));
    if let Some(f) = &best.f {
        out.field("exterior_data", f);
    }
    let corner = system.fit_auto(&gv, &deltas, size)?;
    out.metric("best_delta", best.delta);
    out.metric("l_curve_delta", corner.delta);
    out.metric("l_curve_residual", corner.residual);
    out.metric("best_residual", best.residual);
    out.check("runge_residual", best.residual, Relation::AtMost, 0.1);
    Ok(())
}

/// 1 on `|x| <= inner`, 0 beyond `outer`, smooth in between.
fn plateau(g: &Grid, inner: f64, outer: f64) -> Field {
    let step = |t: f64| -> f64 {
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            1.0
        } else {
            let a = (-1.0 / t).exp();
            let b = (-1.0 / (1.0 - t)).exp();
            a / (a + b)
        }
    };
    let n = g.dim();
    Field::from_fn(*g, |p| {
        let r = p[..n].iter().map(|c| c * c).sum::<f64>().sqrt();
        1.0 - step((r - inner) / (outer - inner))
    })
}

pub(super) fn recover_q(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let m = mask(cfg)?;
    let g = m.grid;
    let p2 = SchrodingerProblem::new(m.clone(), cfg.f64("recover", "s")?, Field::zeros(g))?;
    let dq = bump(cfg, "recover", "q_difference", &g)?;
    let p1 = p2.with_q(dq.clone())?;
    let b1 = window_basis(cfg, "recover", &m, "w1")?;
    let b2 = window_basis(cfg, "recover", &m, "w2")?;
    let all: Vec<Field> = b1.fields.iter().chain(&b2.fields).cloned().collect();
    let dn1 = out.timed("dn_maps", || dn_map(&p1, &all, vec![]))?;
    let dn2 = out.timed("dn_maps", || dn_map(&p2, &all, vec![]))?;
    out.iterations("dn_maps", dn1.iterations.iter().chain(&dn2.iterations).map(|&i| i as u64).sum());
    let psi = plateau(&g, cfg.f64("recover", "cutoff_inner")?, cfg.f64("recover", "cutoff_outer")?);
    let delta = cfg.f64("recover", "delta")?;
    let radius = cfg.f64("recover", "phi_radius")?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for c in cfg.f64_list("recover", "phi_centers")? {
        let mut center = vec![0.0; g.dim()];
        center[0] = c;
        let phi = make_bump(&g, &center, radius, 1.0)?;
        let est = out
            .timed("pairings", || recover_pairings(&p1, &p2, &dn1, &dn2, &b1.fields, &b2.fields, &phi, &psi, delta))?;
        let oracle = l2_inner(&dq, &phi)?;
        let rel = (est.estimate / oracle - 1.0).abs();
        worst = worst.max(rel);
        rows.push(vec![
            num(c),
            num(est.estimate),
            num(oracle),
            num(rel),
            num(est.phi_fit.residual),
            num(est.psi_fit.residual),
        ]);
    }
    out.field("q_difference", &dq);
    out.text("pairings.csv", csv("phi_center,estimate,oracle,relative_error,phi_residual,psi_residual", rows));
    out.metric("worst_relative_error", worst);
    out.check("pairing_error", worst, Relation::AtMost, 0.15);
    Ok(())
}
