use fraclab_core::poincare::{
    classical_constant, interpolation_check, poincare_ratio, theoretical_constant, verify_sweep, ConstantKind,
    KGeometry, PoincareConstants, SamplerConfig,
};
use fraclab_core::{make_bump, Grid};

fn interval_sampler(points: usize, samples: usize) -> SamplerConfig {
    SamplerConfig {
        grid: Grid::new(1, points, 4.0).unwrap(),
        k: KGeometry::unit_ball(1),
        samples,
        max_bumps: 5,
        seed: 42,
    }
}

#[test]
fn seeded_sweep_has_no_violations() {
    let cfg = interval_sampler(256, 100);
    let report = verify_sweep(&cfg, 0.5, 0.0, ConstantKind::Simple).unwrap();
    assert_eq!(report.violations, 0);
    assert!((report.constant - 4.0).abs() < 1e-12);
    assert!(report.max_ratio > 0.0 && report.max_ratio <= 4.0);
    assert_eq!(report.samples.len(), 100);
    assert!(report.to_csv().starts_with("sample_id,ratio,constant,violated\n"));
}

#[test]
fn single_sample_report_matches_direct_ratio() {
    let cfg = interval_sampler(256, 1);
    let report = verify_sweep(&cfg, 0.7, 0.2, ConstantKind::FreqSplit).unwrap();
    let direct = poincare_ratio(&cfg.sample(0).unwrap(), &cfg.k, 0.7, 0.2).unwrap();
    assert_eq!(report.max_ratio, direct);
}

#[test]
fn equal_exponents_give_unit_ratio() {
    let cfg = interval_sampler(256, 20);
    for kind in [ConstantKind::Simple, ConstantKind::FreqSplit, ConstantKind::Interp] {
        let r = verify_sweep(&cfg, 1.2, 1.2, kind).unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-12);
        assert!(r.constant >= 1.0);
        assert_eq!(r.violations, 0);
    }
}

#[test]
fn every_valid_constant_bounds_every_sample() {
    let pairs = [(0.5, 0.0), (1.0, 0.0), (1.5, 0.5), (2.0, 1.0), (2.5, 1.5), (1.3, 0.9)];
    for (dim, points, k) in [
        (1usize, 256usize, KGeometry::unit_ball(1)),
        (2, 64, KGeometry::Box { center: vec![0.1, -0.2], half_widths: vec![0.9, 0.6] }),
    ] {
        let cfg = SamplerConfig { grid: Grid::new(dim, points, 4.0).unwrap(), k, samples: 25, max_bumps: 5, seed: 7 };
        for &(s, t) in &pairs {
            let mut kinds = vec![ConstantKind::Simple, ConstantKind::FreqSplit];
            if (s >= t && t >= 1.0) || (s >= 1.0 && t <= 1.0) {
                kinds.push(ConstantKind::Interp);
            }
            for kind in kinds {
                let r = verify_sweep(&cfg, s, t, kind).unwrap();
                assert_eq!(r.violations, 0, "dim={dim} s={s} t={t} {kind:?}: {} > {}", r.max_ratio, r.constant);
            }
        }
    }
}

#[test]
fn ratio_is_grid_converged() {
    let coarse = Grid::new(1, 128, 4.0).unwrap();
    let fine = Grid::new(1, 256, 4.0).unwrap();
    let k = KGeometry::unit_ball(1);
    let a = poincare_ratio(&make_bump(&coarse, &[0.1], 0.8, 1.0).unwrap(), &k, 0.5, 0.0).unwrap();
    let b = poincare_ratio(&make_bump(&fine, &[0.1], 0.8, 1.0).unwrap(), &k, 0.5, 0.0).unwrap();
    assert!((a / b - 1.0).abs() <= 0.01, "{a} vs {b}");
}

#[test]
fn interpolation_inequality_on_samples() {
    let cfg = interval_sampler(256, 30);
    let fields: Vec<_> = (0..30).map(|i| cfg.sample(i).unwrap().mean_zero()).collect();
    let levels = [0.0, 0.5, 1.0, 1.5, 2.0];
    let mut triples = Vec::new();
    for &a in &levels {
        for &b in &levels {
            for &c in &levels {
                if a <= b && b <= c {
                    triples.push((a, b, c));
                }
            }
        }
    }
    let worst = interpolation_check(&fields, &triples).unwrap();
    assert!(worst <= 1e-9, "worst slack {worst}");
}

#[test]
fn classical_constant_of_disc_matches_bessel_zero() {
    // first zero of J_0
    let j01 = 2.404_825_557_695_773;
    let c = classical_constant(&KGeometry::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
    assert!((c * j01 - 1.0).abs() < 0.02, "{c}");
}

#[test]
fn freq_split_optimum_is_recorded_against_simple() {
    let k = KGeometry::unit_ball(1);
    let all = PoincareConstants::compute(&k, 0.5, 0.0).unwrap();
    // here the simple choice of eps is the exact optimum, the sweep lands next to it
    assert!(all.freq_split_min <= all.simple * (1.0 + 1e-5));
    assert!((all.classical_c - std::f64::consts::FRAC_2_PI).abs() < 1e-3);
    assert_eq!(all.interp, None);
    let c = theoretical_constant(ConstantKind::Interp, &k, 1.0, 0.0, None).unwrap();
    assert!((c - std::f64::consts::FRAC_2_PI).abs() < 1e-3);
}
