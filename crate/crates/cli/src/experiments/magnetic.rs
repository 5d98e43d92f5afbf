use fraclab_core::magnetic::{
    antisym_integral, expanded_operator, frac_gradient_with, gauge_equivalent, gauge_partner, magnetic_dn_map,
    BivariateField, GradientKernel, MagneticProblem,
};
use fraclab_core::schrodinger::{DomainMask, ExteriorBasis};
use fraclab_core::{frac_laplacian, l2_inner, make_bump, Field, Grid, MeanPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{csv, num, Outcome, Relation, Result};
use crate::config::ExperimentConfig;

fn smooth_pair(g: &Grid) -> Result<(Field, Field)> {
    let u = Field::from_fn(*g, |p| (-(p[0] - 0.2) * (p[0] - 0.2) / 0.5).exp());
    let v = make_bump(g, &[-0.3], 1.5, 1.0)?.add(&make_bump(g, &[0.8], 1.0, -0.5)?)?;
    Ok((u, v))
}

/// Smooth `S` supported well inside Omega x Omega, as a sum of separable
/// terms. In one dimension every order has one component, so the same
/// values serve any order.
fn smooth_s(g: &Grid, order: usize, amp: f64) -> Result<BivariateField> {
    let b = make_bump(g, &[0.0], 0.9, 1.0)?;
    let bx = Field::from_fn(*g, |p| p[0]).mul(&b)?;
    let s = BivariateField::separable(&b, &b)?
        .add(&BivariateField::separable(&bx, &b)?.scale(0.5))?
        .add(&BivariateField::separable(&b, &bx)?.scale(-0.3))?
        .scale(amp);
    Ok(BivariateField::from_values(*g, order, s.values().to_vec())?)
}

fn antisymmetric(g: &Grid, amp: f64) -> Result<BivariateField> {
    let b = make_bump(g, &[0.05], 0.85, 1.0)?;
    let gb = Field::from_fn(*g, |p| (1.3 * p[0]).sin()).mul(&b)?;
    Ok(BivariateField::separable(&gb, &b)?.sub(&BivariateField::separable(&b, &gb)?)?.scale(amp))
}

/// `A + size max|A| P` with `P` a seeded sum of separable bumps in Omega x Omega.
fn perturbed(p: &MagneticProblem, size: f64, seed: u64) -> Result<MagneticProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = *p.grid();
    let mut pert = BivariateField::zeros(g, 1)?;
    for _ in 0..4 {
        let cx: f64 = rng.random_range(-0.4..0.4);
        let cy: f64 = rng.random_range(-0.4..0.4);
        let amp: f64 = rng.random_range(-1.0..1.0);
        let term = BivariateField::separable(&make_bump(&g, &[cx], 0.5, 1.0)?, &make_bump(&g, &[cy], 0.5, 1.0)?)?;
        pert = pert.add(&BivariateField::from_values(g, 1, term.scale(amp).values().to_vec())?)?;
    }
    let peak = |f: &BivariateField| f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let pert = pert.scale(size * peak(&p.a) / peak(&pert));
    Ok(p.with_potentials(p.a.add(&pert)?, p.q.clone())?)
}

fn random_bivariate(g: Grid, order: usize, rng: &mut ChaCha8Rng) -> Result<BivariateField> {
    let len = g.len() * g.len() * g.dim().pow(order as u32);
    Ok(BivariateField::from_values(g, order, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())?)
}

pub(super) fn run(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let g = cfg.grid("grid")?;
    let omega = cfg.region("domain", "omega", &g)?;
    let w1 = cfg.region("domain", "w1", &g)?;
    let w2 = cfg.region("domain", "w2", &g)?;
    let m = DomainMask::from_regions(g, &omega, &w1, &w2)?;
    let (u, v) = smooth_pair(&g)?;

    let mut rows = Vec::new();
    let (mut worst_energy, mut worst_polar): (f64, f64) = (0.0, 0.0);
    for s in cfg.f64_list("magnetic", "identity_s")? {
        let (e_rel, p_rel) = out.timed("identities", || -> Result<(f64, f64)> {
            let kernel = GradientKernel::new(g, s)?;
            let gu = frac_gradient_with(&u, &kernel)?;
            let gv = frac_gradient_with(&v, &kernel)?;
            let lap_u = frac_laplacian(&u, s, MeanPolicy::Require)?;
            let energy = l2_inner(&lap_u, &u)?;
            let cross = l2_inner(&lap_u, &v)?;
            Ok(((gu.inner(&gu)? / energy - 1.0).abs(), (gu.inner(&gv)? - cross).abs() / cross.abs()))
        })?;
        worst_energy = worst_energy.max(e_rel);
        worst_polar = worst_polar.max(p_rel);
        rows.push(vec![num(s), num(e_rel), num(p_rel)]);
    }
    out.text("identities.csv", csv("s,energy_rel_error,polarization_rel_error", rows));
    out.check("energy_identity", worst_energy, Relation::AtMost, 1e-2);
    out.check("polarization_identity", worst_polar, Relation::AtMost, 1e-2);

    let tg = cfg.grid("tensor")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let anti = random_bivariate(tg, 1, &mut rng)?.antisym();
    let mut lemma = antisym_integral(&anti).iter().fold(0.0_f64, |m, x| m.max(x.abs())) / anti.l1_norm();
    if tg.dim() <= 2 {
        let alpha = GradientKernel::new(tg, 0.6)?.alpha_field()?;
        lemma = lemma.max(antisym_integral(&alpha).iter().fold(0.0_f64, |m, x| m.max(x.abs())) / alpha.l1_norm());
    }
    out.metric("antisymmetric_integral", lemma);
    out.check("antisymmetric_integral", lemma, Relation::AtMost, 1e-12);

    let mut rows = Vec::new();
    let mut worst_expanded: f64 = 0.0;
    for s in cfg.f64_list("magnetic", "expanded_s")? {
        let rel = out.timed("expanded", || -> Result<f64> {
            let kernel = GradientKernel::new(g, s)?;
            let p =
                MagneticProblem::from_s(m.clone(), kernel, &smooth_s(&g, s.floor() as usize, 2.0)?, Field::zeros(g))?;
            let assembled = fraclab_core::magnetic::magnetic_bilinear(&u, &v, &p)?;
            let expanded = l2_inner(&expanded_operator(&u, &p)?, &v)?;
            Ok((assembled - expanded).abs() / assembled.abs())
        })?;
        worst_expanded = worst_expanded.max(rel);
        rows.push(vec![num(s), num(rel)]);
    }
    out.text("expanded.csv", csv("s,relative_difference", rows));
    out.check("expanded_operator", worst_expanded, Relation::AtMost, 3e-2);

    let s = cfg.f64("magnetic", "s")?;
    let kernel = GradientKernel::new(g, s)?;
    let q1 = m.extend(&m.omega.iter().map(|&i| 1.0 + 0.5 * (2.0 * g.point(i)[0]).cos()).collect::<Vec<_>>());
    let s_field = smooth_s(&g, s.floor() as usize, cfg.f64("magnetic", "s_amplitude")?)?;
    let p1 = MagneticProblem::from_s(m.clone(), kernel, &s_field, q1)?;
    for w in &p1.assumptions.warnings {
        out.metric("assumption_warning", w);
    }
    let p2 = gauge_partner(&p1, &antisymmetric(&g, cfg.f64("magnetic", "gauge_amplitude")?)?)?;
    let bad = perturbed(&p2, cfg.f64("magnetic", "perturbation")?, cfg.seed)?;
    let tol = cfg.f64("magnetic", "gauge_tol")?;
    let report = gauge_equivalent(&p1, &p2, tol)?;
    let report_bad = gauge_equivalent(&p1, &bad, tol)?;
    out.metric("gauge_report", &report);
    out.metric("perturbed_gauge_report", &report_bad);

    let radius = cfg.f64("magnetic", "basis_radius")?;
    let count = cfg.usize("magnetic", "basis_count")?;
    let e1 = ExteriorBasis::new(&g, &w1, radius, count)?;
    let e2 = ExteriorBasis::new(&g, &w2, radius, count)?;
    let basis: Vec<Field> = e1.fields.iter().chain(&e2.fields).cloned().collect();
    let mut desc = e1.descriptors(1);
    desc.extend(e2.descriptors(2));
    let mut dns = Vec::new();
    for (name, p) in [("dn_a1", &p1), ("dn_a2", &p2), ("dn_perturbed", &bad)] {
        let dn = out.timed("dn_maps", || magnetic_dn_map(p, &basis, desc.clone()))?;
        out.iterations("dn_maps", dn.iterations.iter().map(|&i| i as u64).sum());
        out.text(&format!("{name}.csv"), dn.to_csv());
        dns.push(dn.as_matrix());
    }
    let norm = dns[0].norm();
    let gauge_rel = (&dns[0] - &dns[1]).norm() / norm;
    let bad_rel = (&dns[0] - &dns[2]).norm() / norm;
    out.metric("gauge_dn_relative_difference", gauge_rel);
    out.metric("perturbed_dn_relative_difference", bad_rel);
    out.check("gauge_pair_dn_equal", gauge_rel, Relation::AtMost, 1e-6);
    out.check("perturbed_pair_dn_differs", bad_rel, Relation::Above, 1e-6);
    out.check("gauge_pair_equivalent", f64::from(u8::from(report.equivalent)), Relation::AtLeast, 1.0);
    out.check("perturbed_pair_not_equivalent", f64::from(u8::from(!report_bad.equivalent)), Relation::AtLeast, 1.0);
    Ok(())
}
