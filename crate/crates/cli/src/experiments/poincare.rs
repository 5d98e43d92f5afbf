use fraclab_core::poincare::{
    interp_admissible, interpolation_check, verify_sweep, ConstantKind, SamplerConfig, RATIO_SLACK,
};

use super::{csv, num, Outcome, Relation, Result};
use crate::config::ExperimentConfig;

fn label(kind: ConstantKind) -> &'static str {
    match kind {
        ConstantKind::Simple => "simple",
        ConstantKind::FreqSplit => "freq_split",
        ConstantKind::Interp => "interp",
    }
}

pub(super) fn run(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let grid = cfg.grid("grid")?;
    let k = cfg.region("poincare", "k", &grid)?;
    let sampler = SamplerConfig {
        grid,
        k,
        samples: cfg.usize("poincare", "samples")?,
        max_bumps: cfg.usize_or("poincare", "max_bumps", 5)?,
        seed: cfg.seed,
    };
    let mut summary = Vec::new();
    let mut total = 0usize;
    for (s, t) in cfg.pair_list("poincare", "pairs")? {
        let mut kinds = vec![ConstantKind::Simple, ConstantKind::FreqSplit];
        if interp_admissible(s, t) {
            kinds.push(ConstantKind::Interp);
        }
        for kind in kinds {
            let report = out.timed("sweeps", || verify_sweep(&sampler, s, t, kind))?;
            out.text(&format!("ratios_s{s}_t{t}_{}.csv", label(kind)), report.to_csv());
            total += report.violations;
            summary.push(vec![
                num(s),
                num(t),
                label(kind).to_string(),
                num(report.constant),
                num(report.max_ratio),
                report.violations.to_string(),
            ]);
        }
    }
    out.text("summary.csv", csv("s,t,constant_kind,constant,max_ratio,violations", summary));
    out.metric("violations", total);
    out.metric("ratio_slack", RATIO_SLACK);
    out.check("violations", total as f64, Relation::AtMost, 0.0);

    let levels = cfg.f64_list("poincare", "interp_levels")?;
    let count = cfg.usize_or("poincare", "interp_samples", 30)?.min(sampler.samples);
    let fields =
        (0..count).map(|i| sampler.sample(i).map(|f| f.mean_zero())).collect::<std::result::Result<Vec<_>, _>>()?;
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
    let worst = out.timed("interpolation", || interpolation_check(&fields, &triples))?;
    out.metric("interpolation_worst_slack", worst);
    out.check("interpolation_slack", worst, Relation::AtMost, 1e-9);
    Ok(())
}
