use fraclab_core::region::Region;
use fraclab_core::ucp::{
    locality_contrast, locality_contrast_in, ucp_quadratic_min_in, ucp_rows_csv, ucp_sweep, UcpSubspace, UcpSweepPoint,
    LAMBDA_FLOOR,
};

use super::{csv, num, Outcome, Relation, Result};
use crate::config::{ConfigError, ExperimentConfig};

fn invalid(key: &str, reason: &str) -> ConfigError {
    ConfigError::Invalid { section: "ucp".into(), key: key.into(), reason: reason.into() }
}

pub(super) fn run(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let grid = cfg.grid("grid")?;
    let v = cfg.region("ucp", "v", &grid)?;
    let modes = cfg.usize("ucp", "modes")?;
    let s_frac = cfg.f64("ucp", "s_frac")?;
    let s_int = cfg.f64("ucp", "s_int")?;
    if s_int.fract() != 0.0 {
        return Err(invalid("s_int", "must be an integer").into());
    }

    let space = out.timed("contrast", || UcpSubspace::with_witness(grid, modes, &v))?;
    let contrast = out.timed("contrast", || locality_contrast_in(&space, s_frac, s_int, &v))?;
    out.text("contrast.csv", ucp_rows_csv(&[contrast.first.row(), contrast.second.row()]));
    out.field("witness_integer", &contrast.second.witness);
    out.field("witness_fractional", &contrast.first.witness);
    out.metric("lambda_fractional", contrast.first.lambda_min);
    out.metric("lambda_integer", contrast.second.lambda_min);
    out.metric("contrast_ratio", contrast.ratio);
    out.metric("subspace_dim", space.dim());
    out.metric("lambda_floor", LAMBDA_FLOOR);
    out.check("lambda_integer", contrast.second.lambda_min, Relation::AtMost, 1e-12);
    out.check("lambda_fractional", contrast.first.lambda_min, Relation::Above, 0.0);
    out.check("contrast_ratio", contrast.ratio, Relation::AtLeast, 1e4);
    let psd = contrast.first.lambda_min.min(contrast.second.lambda_min);
    out.check("form_semidefinite", psd, Relation::AtLeast, -1e-12);

    // refinement: subspace grows with N so the witnesses can sharpen
    let sweep: Vec<UcpSweepPoint> = cfg
        .usize_list("ucp", "refinement_N")?
        .into_iter()
        .map(|points| UcpSweepPoint {
            s: s_frac,
            v: v.clone(),
            dim: grid.dim(),
            points,
            half_len: grid.half_len(),
            modes: (points / 8).max(1),
            witness: true,
        })
        .collect();
    let results = out.timed("refinement", || ucp_sweep(&sweep))?;
    let rows: Vec<_> = results.iter().map(|r| r.row()).collect();
    out.text("refinement.csv", ucp_rows_csv(&rows));
    let rising = results.windows(2).filter(|w| w[1].lambda_min > w[0].lambda_min).count();
    out.check("refinement_non_increasing", rising as f64, Relation::AtMost, 0.0);

    let mut ratios = Vec::new();
    let mut rows = Vec::new();
    for dim in cfg.usize_list("ucp", "dimension_sweep")? {
        let c = out.timed("dimension_sweep", || locality_contrast(grid, s_frac, s_int, &v, dim))?;
        rows.push(vec![dim.to_string(), num(c.first.lambda_min), num(c.second.lambda_min), num(c.ratio)]);
        ratios.push(c.ratio);
    }
    out.text("dimension_sweep.csv", csv("subspace_dim,lambda_fractional,lambda_integer,ratio", rows));
    let falling = ratios.windows(2).filter(|w| w[1] <= w[0]).count();
    out.check("ratio_grows_with_dimension", falling as f64, Relation::AtMost, 0.0);

    let center = match &v {
        Region::Ball { center, .. } | Region::Box { center, .. } => center.clone(),
    };
    let mut shrink = Vec::new();
    for r in cfg.f64_list("ucp", "shrink_radii")? {
        let ball = Region::Ball { center: center.clone(), radius: r };
        let res = out.timed("shrinking", || ucp_quadratic_min_in(&space, s_frac, &ball))?;
        shrink.push(res.row());
    }
    out.text("shrinking.csv", ucp_rows_csv(&shrink));
    let growing = shrink
        .windows(2)
        .filter(|w| w[1].v_volume < w[0].v_volume && w[1].lambda_min > w[0].lambda_min + 1e-15)
        .count();
    out.check("shrinking_v_non_increasing", growing as f64, Relation::AtMost, 0.0);
    Ok(())
}
