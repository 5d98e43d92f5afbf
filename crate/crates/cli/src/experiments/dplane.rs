use fraclab_core::dplane::{
    adjoint_dplane, bump_family, default_phantoms, fit_normal_constant, forward_dplane, normal_backend_discrepancy,
    normal_operator, partial_data_contrast, phantom, roi_invert_even_d, NormalBackend, PlaneGeometry, PlaneSelection,
    Sinogram,
};
use fraclab_core::region::Region;
use fraclab_core::{l2_inner, Field};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{csv, num, Outcome, Relation, Result};
use crate::config::ExperimentConfig;

fn geometry(cfg: &ExperimentConfig, section: &str) -> Result<PlaneGeometry> {
    let grid = cfg.grid(section)?;
    Ok(PlaneGeometry::new(grid, cfg.usize(section, "d")?, cfg.usize(section, "M")?)?)
}

/// `|<R f, g> - <f, R* g>| / (||f|| ||g||)` for seeded random `f` in the
/// ball and random `g`.
fn adjoint_gap(geom: &PlaneGeometry, rng: &mut ChaCha8Rng) -> Result<f64> {
    let g = *geom.grid();
    let n = g.dim();
    let r2 = geom.radius() * geom.radius();
    let f = Field::new(
        g,
        (0..g.len())
            .map(|i| {
                let v: f64 = rng.random_range(-1.0..1.0);
                if g.point(i)[..n].iter().map(|c| c * c).sum::<f64>() <= r2 {
                    v
                } else {
                    0.0
                }
            })
            .collect(),
    )?;
    let sino = Sinogram::new(geom.clone(), (0..geom.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let lhs = forward_dplane(&f, geom)?.inner(&sino)?;
    let rhs = l2_inner(&f, &adjoint_dplane(&sino))?;
    Ok((lhs - rhs).abs() / (f.l2_norm() * sino.norm()))
}

fn relative_error_on(v: &Region, f: &Field, rec: &Field) -> f64 {
    let idx = v.indices(f.grid());
    let num: f64 = idx.iter().map(|&i| (rec.values()[i] - f.values()[i]).powi(2)).sum();
    let den: f64 = idx.iter().map(|&i| f.values()[i].powi(2)).sum();
    (num / den).sqrt()
}

pub(super) fn run(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut summary: Vec<(String, f64)> = Vec::new();

    let geom = geometry(cfg, "adjoint")?;
    let mut gap: f64 = 0.0;
    for _ in 0..cfg.usize_or("adjoint", "trials", 3)? {
        gap = gap.max(out.timed("adjoint", || adjoint_gap(&geom, &mut rng))?);
    }
    summary.push(("adjoint_gap".into(), gap));
    out.check("adjoint_gap", gap, Relation::AtMost, 1e-9);

    let geom = geometry(cfg, "fit")?;
    let fit = out.timed("fit", || fit_normal_constant(&geom, &default_phantoms(&geom)?))?;
    summary.push(("c_fit".into(), fit.c_fit));
    summary.push(("c_fit_spread".into(), fit.spread));
    out.metric("normal_fit", &fit);
    out.check("c_fit_spread", fit.spread, Relation::AtMost, 0.02);

    let geom = geometry(cfg, "agreement")?;
    let f = phantom(&geom, cfg.str("agreement", "phantom")?, cfg.usize("agreement", "phantom_seed")? as u64)?;
    let fit_here = out.timed("agreement", || fit_normal_constant(&geom, &default_phantoms(&geom)?))?;
    let agreement = out.timed("agreement", || normal_backend_discrepancy(&f, &geom, fit_here.c_fit))?;
    out.sinogram("agreement_sinogram", &forward_dplane(&f, &geom)?);
    summary.push(("backend_discrepancy".into(), agreement));
    out.check("backend_agreement", agreement, Relation::AtMost, 0.05);

    let grid = cfg.grid("roi")?;
    let v = cfg.region("roi", "v", &grid)?;
    let margin = cfg.f64("roi", "known_margin_cells")? * grid.spacing();
    let known = match &v {
        Region::Ball { center, radius } => Region::Ball { center: center.clone(), radius: radius + margin },
        Region::Box { center, half_widths } => {
            Region::Box { center: center.clone(), half_widths: half_widths.iter().map(|w| w + margin).collect() }
        }
    };
    let c = cfg.f64("roi", "c")?;
    let full = PlaneGeometry::new(grid, 2, cfg.usize_or("roi", "composition_directions", 0)?.max(1))?;
    let f = phantom(&full, cfg.str("roi", "phantom")?, cfg.usize("roi", "phantom_seed")? as u64)?;
    let ndf = out.timed("roi", || normal_operator(&f, &full, NormalBackend::Convolution { c }))?;
    let rec = out.timed("roi", || roi_invert_even_d(&ndf, &v, &known, 2, c))?;
    let roi_error = relative_error_on(&v, &f, &rec);
    out.field("roi_phantom", &f);
    out.field("roi_reconstruction", &rec);
    summary.push(("roi_error".into(), roi_error));
    out.check("roi_relative_error", roi_error, Relation::AtMost, 0.05);
    if cfg.usize_or("roi", "composition_directions", 0)? > 0 {
        // composition-based data, reported but not judged
        let ndf = out.timed("roi_composition", || normal_operator(&f, &full, NormalBackend::Composition))?;
        let rec = roi_invert_even_d(&ndf, &v, &known, 2, c)?;
        summary.push(("roi_error_composition".into(), relative_error_on(&v, &f, &rec)));
    }

    let geom = geometry(cfg, "partial")?;
    let pv = cfg.region("partial", "v", geom.grid())?;
    let family = bump_family(geom.grid(), 0.9 * geom.radius(), cfg.usize("partial", "family")?)?;
    let mut rows = Vec::new();
    for (label, control) in
        [("avoiding_far", PlaneSelection::AvoidingFar), ("avoiding_near", PlaneSelection::AvoidingNear)]
    {
        let (meet, other, ratio) = out.timed("partial_data", || partial_data_contrast(&family, &pv, &geom, control))?;
        rows.push(vec![label.to_string(), num(meet.minimum), num(other.minimum), num(ratio), meet.planes.to_string()]);
        summary.push((format!("partial_ratio_{label}"), ratio));
        if control == PlaneSelection::AvoidingFar {
            out.check("partial_data_contrast", ratio, Relation::AtLeast, 10.0);
        }
    }
    out.text("partial_data.csv", csv("control,meeting_minimum,control_minimum,ratio,planes", rows));

    for (k, v) in &summary {
        out.metric(k, v);
    }
    out.text("summary.csv", csv("metric,value", summary.into_iter().map(|(k, v)| vec![k, num(v)])));
    Ok(())
}
