use fraclab_core::magnetic::{
    antisym_integral, expanded_operator, frac_gradient, frac_gradient_with, gauge_equivalent, gauge_operators,
    gauge_partner, magnetic_bilinear, magnetic_dn_map, tensor_ops, BivariateField, CoercivityFit, GradientKernel,
    MagneticProblem, TensorMode, TensorOutput,
};
use fraclab_core::poincare::SamplerConfig;
use fraclab_core::region::Region;
use fraclab_core::schrodinger::{bilinear_form, dn_map, DomainMask, ExteriorBasis, SchrodingerProblem};
use fraclab_core::{frac_laplacian, l2_inner, make_bump, Error, Field, Grid, MeanPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

fn mask() -> DomainMask {
    let g = Grid::new(1, 256, 8.0).unwrap();
    DomainMask::from_regions(
        g,
        &Region::interval(-1.0, 1.0),
        &Region::interval(-4.0, -1.1),
        &Region::interval(1.1, 4.0),
    )
    .unwrap()
}

fn smooth_pair(g: &Grid) -> (Field, Field) {
    let u = Field::from_fn(*g, |p| (-(p[0] - 0.2) * (p[0] - 0.2) / 0.5).exp());
    let v = make_bump(g, &[-0.3], 1.5, 1.0).unwrap().add(&make_bump(g, &[0.8], 1.0, -0.5).unwrap()).unwrap();
    (u, v)
}

/// Smooth `S` supported well inside `(-1, 1)^2`, built as separable sums.
fn smooth_s(m: &DomainMask, order: usize, amp: f64) -> BivariateField {
    let g = m.grid;
    let b = make_bump(&g, &[0.0], 0.9, 1.0).unwrap();
    let bx = Field::from_fn(g, |p| p[0]).mul(&b).unwrap();
    let s = BivariateField::separable(&b, &b)
        .unwrap()
        .add(&BivariateField::separable(&bx, &b).unwrap().scale(0.5))
        .unwrap()
        .add(&BivariateField::separable(&b, &bx).unwrap().scale(-0.3))
        .unwrap()
        .scale(amp);
    // in one dimension every order has a single component
    BivariateField::from_values(g, order, s.values().to_vec()).unwrap()
}

fn antisymmetric(m: &DomainMask, amp: f64) -> BivariateField {
    let g = m.grid;
    let b = make_bump(&g, &[0.05], 0.85, 1.0).unwrap();
    let gb = Field::from_fn(g, |p| (1.3 * p[0]).sin()).mul(&b).unwrap();
    BivariateField::separable(&gb, &b).unwrap().sub(&BivariateField::separable(&b, &gb).unwrap()).unwrap().scale(amp)
}

/// `C_{n,s} = 4^s Γ(n/2 + s) / (π^{n/2} |Γ(-s)|)`.
fn closed_form_constant(n: usize, s: f64) -> f64 {
    4f64.powf(s) * gamma(n as f64 / 2.0 + s) / (std::f64::consts::PI.powf(n as f64 / 2.0) * gamma(-s).abs())
}

#[test]
fn energy_and_polarization_identities() {
    let g = Grid::new(1, 256, 8.0).unwrap();
    let (u, v) = smooth_pair(&g);
    for s in [0.3, 0.7, 1.4] {
        let kernel = GradientKernel::new(g, s).unwrap();
        let c = closed_form_constant(1, s.fract());
        assert!((kernel.constant() / c - 1.0).abs() < 0.01);
        let gu = frac_gradient_with(&u, &kernel).unwrap();
        let gv = frac_gradient_with(&v, &kernel).unwrap();
        assert_eq!(gu.order(), s.floor() as usize + 1);
        let lap_u = frac_laplacian(&u, s, MeanPolicy::Require).unwrap();
        let energy = l2_inner(&lap_u, &u).unwrap();
        let e_rel = (gu.inner(&gu).unwrap() / energy - 1.0).abs();
        let cross = l2_inner(&lap_u, &v).unwrap();
        let p_rel = (gu.inner(&gv).unwrap() - cross).abs() / cross.abs();
        assert!(e_rel <= 1e-2, "s={s}: energy {e_rel}");
        assert!(p_rel <= 1e-2, "s={s}: polarization {p_rel}");
        // ∇^s u is symmetric in (x, y)
        assert!(gu.sub(&gu.swapped()).unwrap().l2_norm() <= 1e-14 * gu.l2_norm());
    }
    let one = Field::from_fn(g, |_| 1.0);
    assert_eq!(frac_gradient(&one, 0.4).unwrap().l2_norm(), 0.0);
}

fn random_bivariate(g: Grid, order: usize, seed: u64) -> BivariateField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = g.len() * g.len() * g.dim().pow(order as u32);
    BivariateField::from_values(g, order, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn tensor_algebra() {
    let g = Grid::new(2, 8, 1.0).unwrap();
    let a = random_bivariate(g, 2, 1);
    let b = random_bivariate(g, 1, 2);
    let v = random_bivariate(g, 1, 3);
    // A·(B⊗v) = (A·v)·B
    let lhs = a.contract(&b.tensor_product(&v).unwrap()).unwrap();
    let rhs = a.contract(&v).unwrap().contract(&b).unwrap();
    assert_eq!(lhs.order(), 0);
    for (x, y) in lhs.values().iter().zip(rhs.values()) {
        assert!((x - y).abs() <= 1e-13 * (1.0 + x.abs()));
    }
    let anti = a.antisym();
    assert!(anti.sym().l2_norm() <= 1e-15 * a.l2_norm());
    assert!(a.sym().l2_norm() <= a.l2_norm() && anti.l2_norm() <= a.l2_norm());
    assert!(a.sym().add(&anti).unwrap().sub(&a).unwrap().l2_norm() <= 1e-14 * a.l2_norm());

    match tensor_ops(&a, None, TensorMode::J2).unwrap() {
        TensorOutput::Field(j2) => {
            // ||A||^2 = ∫ (J2 A)^2
            assert!((l2_inner(&j2, &j2).unwrap() - a.inner(&a).unwrap()).abs() <= 1e-12 * a.inner(&a).unwrap());
        }
        other => panic!("{other:?}"),
    }
    match tensor_ops(&a, None, TensorMode::J1).unwrap() {
        TensorOutput::Field(j1) => assert_eq!(j1, a.swapped().j2()),
        other => panic!("{other:?}"),
    }
    assert!(matches!(tensor_ops(&b, Some(&a), TensorMode::Contraction), Err(Error::OrderMismatch(_))));
    assert!(matches!(tensor_ops(&a, None, TensorMode::TensorProduct), Err(Error::OrderMismatch(_))));
}

#[test]
fn antisymmetric_integrals_vanish() {
    let g = Grid::new(2, 8, 1.0).unwrap();
    let a = random_bivariate(g, 1, 9).antisym();
    let tol = 1e-13 * a.l1_norm();
    assert!(antisym_integral(&a).iter().all(|v| v.abs() <= tol));

    let pos = random_bivariate(g, 0, 4).sym();
    let pos = BivariateField::from_values(g, 0, pos.values().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
    assert!(antisym_integral(&pos)[0] > 0.0);

    // the α kernel itself, diagonal excluded
    for (dim, points) in [(1, 256), (2, 16)] {
        let alpha = GradientKernel::new(Grid::new(dim, points, 2.0).unwrap(), 0.6).unwrap().alpha_field().unwrap();
        let scale = alpha.l1_norm();
        assert!(antisym_integral(&alpha).iter().all(|v| v.abs() <= 1e-12 * scale));
    }
}

#[test]
fn magnetic_form_reduces_and_is_symmetric() {
    let m = mask();
    let g = m.grid;
    let (u, v) = smooth_pair(&g);
    let q = m.extend(&vec![0.7; m.omega.len()]);
    let s = 0.7;
    let free = MagneticProblem::new(m.clone(), s, BivariateField::zeros(g, 1).unwrap(), q.clone()).unwrap();
    let plain = SchrodingerProblem::new(m.clone(), s, q.clone()).unwrap();
    let b_mag = magnetic_bilinear(&u, &v, &free).unwrap();
    let b_plain = bilinear_form(&u, &v, &plain).unwrap();
    assert!((b_mag - b_plain).abs() <= 1e-2 * b_plain.abs());

    let p = MagneticProblem::from_s(m.clone(), free.kernel().clone(), &smooth_s(&m, 0, 10.0), q).unwrap();
    assert!(p.assumptions.warnings.is_empty(), "{:?}", p.assumptions.warnings);
    let uv = magnetic_bilinear(&u, &v, &p).unwrap();
    let vu = magnetic_bilinear(&v, &u, &p).unwrap();
    assert!((uv - vu).abs() <= 1e-12 * uv.abs());
    // the magnetic terms matter at this amplitude
    assert!((uv - b_mag).abs() > 1e-2 * b_mag.abs());
    // the operator form agrees with the literal pairing up to quadrature
    let op = l2_inner(&p.apply(&u).unwrap(), &v).unwrap();
    assert!((op - uv).abs() <= 1e-2 * uv.abs(), "{op} vs {uv}");
}

#[test]
fn coercivity_constants_carry_over_to_fresh_samples() {
    let m = mask();
    let g = m.grid;
    let q = m.extend(&m.omega.iter().map(|&i| -1.5 + g.point(i)[0]).collect::<Vec<_>>());
    let kernel = GradientKernel::new(g, 0.7).unwrap();
    let p = MagneticProblem::from_s(m, kernel, &smooth_s(&mask(), 0, 3.0), q).unwrap();
    let sampler = |seed| SamplerConfig { grid: g, k: Region::interval(-1.5, 1.5), samples: 50, max_bumps: 4, seed };
    let fit_set: Vec<Field> = (0..50).map(|i| sampler(21).sample(i).unwrap()).collect();
    let fresh: Vec<Field> = (0..50).map(|i| sampler(22).sample(i).unwrap()).collect();
    let fit = CoercivityFit::fit(&p, &fit_set).unwrap();
    assert!(fit.mu > 0.0 && fit.k > 0.0);
    assert_eq!(fit.violations(&p, &fit_set).unwrap(), 0);
    assert_eq!(fit.violations(&p, &fresh).unwrap(), 0);
}

#[test]
fn gauge_operators_follow_their_formulas() {
    let m = mask();
    let g = m.grid;
    let s = smooth_s(&m, 0, 1.0);
    let ops = gauge_operators(&s, 0).unwrap();
    let expect = s.add(&s.swapped()).unwrap().scale(-1.0);
    assert_eq!(ops.n_field, expect);
    let anti = antisymmetric(&m, 1.0);
    assert!(gauge_operators(&anti, 0).unwrap().n_field.l2_norm() <= 1e-15 * anti.l2_norm());

    // S(x,y) = σ(x) τ(y): N = σ(y) τ'(x) + σ(x) τ'(y), M_0 = -σ'(x) ∫τ
    let sigma = |x: f64| (-(x - 0.1) * (x - 0.1) / 0.3).exp();
    let dsigma = |x: f64| -2.0 * (x - 0.1) / 0.3 * sigma(x);
    let tau = |x: f64| (1.0 + x) * (-(x * x) / 0.2).exp();
    let dtau = |x: f64| (1.0 - 2.0 * x * (1.0 + x) / 0.2) * (-(x * x) / 0.2).exp();
    let sep =
        BivariateField::separable(&Field::from_fn(g, |p| sigma(p[0])), &Field::from_fn(g, |p| tau(p[0]))).unwrap();
    let sep = BivariateField::from_values(g, 1, sep.values().to_vec()).unwrap();
    let ops = gauge_operators(&sep, 1).unwrap();
    let exact = BivariateField::from_fn(g, 0, |ix, iy, out| {
        let (x, y) = (g.point(ix)[0], g.point(iy)[0]);
        out[0] = sigma(y) * dtau(x) + sigma(x) * dtau(y);
    })
    .unwrap();
    let err = ops.n_field.sub(&exact).unwrap().l2_norm() / exact.l2_norm();
    let tau_int: f64 = (0..g.len()).map(|i| tau(g.point(i)[0])).sum::<f64>() * g.spacing();
    let m0 = Field::from_fn(g, |p| -dsigma(p[0]) * tau_int);
    let err_m = ops.m_fields[0].sub(&m0).unwrap().l2_norm() / m0.l2_norm();
    assert!(err <= 3e-2 && err_m <= 3e-2, "{err} {err_m}");
    assert_eq!(ops.m_fields[1].max_abs(), 0.0);

    // halving h cuts the error by about four
    let fine = Grid::new(1, 512, 8.0).unwrap();
    let sep_f = BivariateField::separable(&Field::from_fn(fine, |p| sigma(p[0])), &Field::from_fn(fine, |p| tau(p[0])))
        .unwrap();
    let sep_f = BivariateField::from_values(fine, 1, sep_f.values().to_vec()).unwrap();
    let exact_f = BivariateField::from_fn(fine, 0, |ix, iy, out| {
        let (x, y) = (fine.point(ix)[0], fine.point(iy)[0]);
        out[0] = sigma(y) * dtau(x) + sigma(x) * dtau(y);
    })
    .unwrap();
    let err_f = gauge_operators(&sep_f, 1).unwrap().n_field.sub(&exact_f).unwrap().l2_norm() / exact_f.l2_norm();
    assert!(err_f < 0.3 * err, "{err} -> {err_f}");

    assert!(matches!(gauge_operators(&s, 2), Err(Error::UnsupportedFloor(2))));
    assert!(matches!(gauge_operators(&s, 1), Err(Error::OrderMismatch(_))));
}

#[test]
fn expanded_operator_matches_assembled_form() {
    let m = mask();
    let g = m.grid;
    let (u, v) = smooth_pair(&g);
    for (s, order) in [(0.3, 0), (0.7, 0), (1.4, 1)] {
        let kernel = GradientKernel::new(g, s).unwrap();
        let p = MagneticProblem::from_s(m.clone(), kernel, &smooth_s(&m, order, 2.0), Field::zeros(g)).unwrap();
        let assembled = magnetic_bilinear(&u, &v, &p).unwrap();
        let expanded = l2_inner(&expanded_operator(&u, &p).unwrap(), &v).unwrap();
        let rel = (assembled - expanded).abs() / assembled.abs();
        assert!(rel <= 3e-2, "s={s}: {assembled} vs {expanded} ({rel:e})");
    }
}

fn gauge_setup() -> (MagneticProblem, MagneticProblem) {
    let m = mask();
    let g = m.grid;
    let kernel = GradientKernel::new(g, 0.7).unwrap();
    let q1 = m.extend(&m.omega.iter().map(|&i| 1.0 + 0.5 * (2.0 * g.point(i)[0]).cos()).collect::<Vec<_>>());
    let p1 = MagneticProblem::from_s(m.clone(), kernel, &smooth_s(&m, 0, 10.0), q1).unwrap();
    let p2 = gauge_partner(&p1, &antisymmetric(&m, 8.0)).unwrap();
    (p1, p2)
}

/// `A + size max|A| P`, with `P` a seeded sum of smooth separable bumps in
/// `Omega x Omega`.
fn perturbed(p: &MagneticProblem, size: f64, seed: u64) -> MagneticProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = *p.grid();
    let mut pert = BivariateField::zeros(g, 1).unwrap();
    for _ in 0..4 {
        let cx: f64 = rng.random_range(-0.4..0.4);
        let cy: f64 = rng.random_range(-0.4..0.4);
        let amp: f64 = rng.random_range(-1.0..1.0);
        let bx = make_bump(&g, &[cx], 0.5, 1.0).unwrap();
        let by = make_bump(&g, &[cy], 0.5, 1.0).unwrap();
        let term = BivariateField::separable(&bx, &by).unwrap().scale(amp);
        pert = pert.add(&BivariateField::from_values(g, 1, term.values().to_vec()).unwrap()).unwrap();
    }
    let peak = |f: &BivariateField| f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let pert = pert.scale(size * peak(&p.a) / peak(&pert));
    p.with_potentials(p.a.add(&pert).unwrap(), p.q.clone()).unwrap()
}

#[test]
fn gauge_relation() {
    let (p1, p2) = gauge_setup();
    let tol = 1e-6;
    let same = gauge_equivalent(&p1, &p1, tol).unwrap();
    assert_eq!((same.n_residual, same.m0_residual, same.m_beta_residual), (0.0, 0.0, 0.0));
    assert!(same.equivalent);
    let r12 = gauge_equivalent(&p1, &p2, tol).unwrap();
    assert!(r12.equivalent, "{r12:?}");
    assert!(gauge_equivalent(&p2, &p1, tol).unwrap().equivalent);
    // a third member reached from p2
    let p3 = gauge_partner(&p2, &antisymmetric(&mask(), -0.7)).unwrap();
    assert!(gauge_equivalent(&p2, &p3, tol).unwrap().equivalent);
    assert!(gauge_equivalent(&p1, &p3, tol).unwrap().equivalent);
    // the potentials really differ
    assert!(p1.a.sub(&p2.a).unwrap().l2_norm() > 0.1 * p1.a.l2_norm());

    let bad = perturbed(&p2, 1e-2, 5);
    let r = gauge_equivalent(&p1, &bad, tol).unwrap();
    assert!(!r.equivalent && r.n_residual > 1e3 * tol, "{r:?}");

    let other =
        MagneticProblem::new(mask(), 0.3, BivariateField::zeros(p1.mask.grid, 1).unwrap(), p1.q.clone()).unwrap();
    assert!(matches!(gauge_equivalent(&p1, &other, tol), Err(Error::ConfigMismatch(_))));
}

fn dn_basis(m: &DomainMask) -> (Vec<Field>, Vec<fraclab_core::schrodinger::BasisDescriptor>) {
    let b1 = ExteriorBasis::new(&m.grid, &Region::interval(-4.0, -1.1), 0.4, 6).unwrap();
    let b2 = ExteriorBasis::new(&m.grid, &Region::interval(1.1, 4.0), 0.4, 6).unwrap();
    let mut fields = b1.fields.clone();
    fields.extend(b2.fields.iter().cloned());
    let mut desc = b1.descriptors(1);
    desc.extend(b2.descriptors(2));
    (fields, desc)
}

#[test]
fn magnetic_dn_map_properties() {
    let (p1, p2) = gauge_setup();
    let (basis, desc) = dn_basis(&p1.mask);
    let dn1 = magnetic_dn_map(&p1, &basis, desc.clone()).unwrap();
    assert!(dn1.asymmetry() <= 1e-10, "{}", dn1.asymmetry());
    assert!(dn1.max_residual <= 1e-10);

    let dn2 = magnetic_dn_map(&p2, &basis, desc.clone()).unwrap();
    let rel = (dn1.as_matrix() - dn2.as_matrix()).norm() / dn1.as_matrix().norm();
    assert!(rel <= 1e-6, "gauge pair differs by {rel:e}");

    let bad = perturbed(&p2, 1e-2, 5);
    let dn_bad = magnetic_dn_map(&bad, &basis, desc.clone()).unwrap();
    let rel_bad = (dn1.as_matrix() - dn_bad.as_matrix()).norm() / dn1.as_matrix().norm();
    assert!(rel_bad > 1e-6, "perturbed pair differs by only {rel_bad:e}");

    // A = 0 reduces to the plain problem
    let g = p1.mask.grid;
    let free = p1.with_potentials(BivariateField::zeros(g, 1).unwrap(), p1.q.clone()).unwrap();
    let plain = SchrodingerProblem::new(p1.mask.clone(), 0.7, p1.q.clone()).unwrap();
    let a = magnetic_dn_map(&free, &basis, desc.clone()).unwrap().as_matrix();
    let b = dn_map(&plain, &basis, desc).unwrap().as_matrix();
    assert!((&a - &b).norm() <= 1e-2 * b.norm());
}

#[test]
fn unsupported_configurations_are_refused() {
    let g2 = Grid::new(2, 16, 2.0).unwrap();
    assert!(matches!(GradientKernel::new(g2, 1.5), Err(Error::UnsupportedConfig(_))));
    assert!(matches!(GradientKernel::new(Grid::new(3, 8, 1.0).unwrap(), 0.5), Err(Error::UnsupportedConfig(_))));
    assert!(GradientKernel::new(g2, 0.5).is_ok());
    let m = mask();
    let wrong_order = BivariateField::zeros(m.grid, 2).unwrap();
    assert!(matches!(
        MagneticProblem::new(m.clone(), 0.7, wrong_order, Field::zeros(m.grid)),
        Err(Error::OrderMismatch(_))
    ));
    // support outside Omega x Omega
    let leak = BivariateField::separable(
        &make_bump(&m.grid, &[1.5], 0.3, 1.0).unwrap(),
        &make_bump(&m.grid, &[0.0], 0.3, 1.0).unwrap(),
    )
    .unwrap();
    let leak = BivariateField::from_values(m.grid, 1, leak.values().to_vec()).unwrap();
    assert!(matches!(MagneticProblem::new(m.clone(), 0.7, leak, Field::zeros(m.grid)), Err(Error::InvalidMask(_))));
}

#[test]
fn bivariate_round_trip() {
    let g = Grid::new(2, 8, 1.0).unwrap();
    let a = random_bivariate(g, 1, 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.f64");
    a.save(&path).unwrap();
    assert_eq!(BivariateField::load(&path).unwrap(), a);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(meta["order"], 1);
    assert_eq!(meta["N"], 8);
}
