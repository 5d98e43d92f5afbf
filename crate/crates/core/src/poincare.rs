//! Fractional Poincaré inequalities: explicit constants, measured ratios and
//! seeded sweeps that check the ratios never exceed the constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{conjugate_gradient, CgFailure};
pub use crate::region::unit_ball_volume;
use crate::region::Region;
use crate::spectral::{make_bump, sobolev_norm};

/// Slack allowed when comparing a measured ratio with a constant.
pub const RATIO_SLACK: f64 = 1e-9;
/// Values at most this fraction of `||u||` outside `K` count as zero.
pub const SUPPORT_TOL: f64 = 1e-14;

/// The compact set `K`; also the domain for the classical constant.
pub type KGeometry = Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantKind {
    FreqSplit,
    Simple,
    Interp,
}

impl std::str::FromStr for ConstantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freq_split" => Ok(ConstantKind::FreqSplit),
            "simple" => Ok(ConstantKind::Simple),
            "interp" => Ok(ConstantKind::Interp),
            other => Err(Error::UnsupportedConfig(format!("unknown constant kind {other:?}"))),
        }
    }
}

fn check_order(s: f64, t: f64) -> Result<()> {
    if !(s.is_finite() && t.is_finite()) || t < 0.0 || s < t {
        return Err(Error::InvalidExponentOrder(format!("need s >= t >= 0, got s={s}, t={t}")));
    }
    Ok(())
}

/// Largest admissible frequency cut `(|K||B(0,1)|)^{-1/n}`.
pub fn eps_limit(k: &KGeometry) -> f64 {
    (k.volume() * unit_ball_volume(k.dim())).powf(-1.0 / k.dim() as f64)
}

/// `eps^{-s} / sqrt(1 - eps^n |K||B(0,1)|)`, the `L^2` bound for a fixed
/// frequency cut.
pub fn eps_constant(k: &KGeometry, s: f64, eps: f64) -> Result<f64> {
    let limit = eps_limit(k);
    if !(eps > 0.0 && eps < limit) {
        return Err(Error::EpsTooLarge { eps, limit });
    }
    let kb = k.volume() * unit_ball_volume(k.dim());
    Ok(eps.powf(-s) / (1.0 - eps.powi(k.dim() as i32) * kb).sqrt())
}

const EPS_SWEEP: usize = 1000;

/// Minimum of [`eps_constant`] over an even sweep of `(0, limit)`.
pub fn eps_constant_min(k: &KGeometry, s: f64) -> Result<(f64, f64)> {
    let limit = eps_limit(k);
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..=EPS_SWEEP {
        let eps = limit * i as f64 / (EPS_SWEEP + 1) as f64;
        let c = eps_constant(k, s, eps)?;
        if c < best.0 {
            best = (c, eps);
        }
    }
    Ok(best)
}

/// `sqrt(2) (2|K||B(0,1)|)^{s/n}`.
pub fn simple_constant(k: &KGeometry, s: f64) -> f64 {
    let n = k.dim() as f64;
    2f64.sqrt() * (2.0 * k.volume() * unit_ball_volume(k.dim())).powf(s / n)
}

/// Classical Poincaré constant `1/sqrt(lambda_1)` of the Dirichlet
/// Laplacian on `K`, from a finite-difference eigensolve.
pub fn classical_constant(k: &KGeometry) -> Result<f64> {
    k.validate()?;
    Ok(1.0 / dirichlet_lambda1(k)?.sqrt())
}

fn dirichlet_lambda1(k: &KGeometry) -> Result<f64> {
    let n = k.dim();
    let per_axis: usize = match n {
        1 => 400,
        2 => 72,
        _ => 28,
    };
    // bounding box of K, sampled at interior nodes only
    let (lo, hi): (Vec<f64>, Vec<f64>) = match k {
        Region::Ball { center, radius } => {
            (center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
        }
        Region::Box { center, half_widths } => (
            center.iter().zip(half_widths).map(|(c, w)| c - w).collect(),
            center.iter().zip(half_widths).map(|(c, w)| c + w).collect(),
        ),
    };
    let h: Vec<f64> = (0..n).map(|a| (hi[a] - lo[a]) / (per_axis + 1) as f64).collect();
    let total = per_axis.pow(n as u32);
    let coord = |flat: usize| -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut r = flat;
        for a in (0..n).rev() {
            idx[a] = r % per_axis;
            r /= per_axis;
        }
        idx
    };
    let point = |idx: &[usize; 3]| -> Vec<f64> { (0..n).map(|a| lo[a] + (idx[a] + 1) as f64 * h[a]).collect() };
    let mut node_of = vec![usize::MAX; total];
    let mut nodes = Vec::new();
    for (flat, slot) in node_of.iter_mut().enumerate() {
        if k.contains(&point(&coord(flat))) {
            *slot = nodes.len();
            nodes.push(flat);
        }
    }
    if nodes.is_empty() {
        return Err(Error::InvalidMask("K contains no interior nodes".into()));
    }
    let neighbours: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&flat| {
            let idx = coord(flat);
            let mut out = Vec::new();
            for a in 0..n {
                for step in [-1i64, 1] {
                    let j = idx[a] as i64 + step;
                    if j < 0 || j >= per_axis as i64 {
                        continue;
                    }
                    let mut m = idx;
                    m[a] = j as usize;
                    let f = m[..n].iter().fold(0, |acc, &v| acc * per_axis + v);
                    if node_of[f] != usize::MAX {
                        out.push(node_of[f] * 8 + a);
                    }
                }
            }
            out
        })
        .collect();
    let diag: Vec<f64> = (0..n).map(|a| 2.0 / (h[a] * h[a])).collect();
    let dsum: f64 = diag.iter().sum();
    let apply = |x: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut v = dsum * x[i];
                for &code in &neighbours[i] {
                    let (j, a) = (code / 8, code % 8);
                    v -= x[j] / (h[a] * h[a]);
                }
                v
            })
            .collect()
    };
    // inverse iteration; the first eigenfunction is positive, so start there
    let mut x = vec![1.0; nodes.len()];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let y = match conjugate_gradient(apply, &x, 1e-10, 20_000) {
            Ok(out) => out.x,
            Err(CgFailure::Indefinite) => return Err(Error::EigSolveFailure("Dirichlet Laplacian".into())),
            Err(CgFailure::NoConvergence { iterations, residual }) => {
                return Err(Error::NoConvergence { iterations, residual })
            }
        };
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let next: Vec<f64> = y.iter().map(|v| v / norm).collect();
        let ax = apply(&next);
        let rq: f64 = next.iter().zip(&ax).map(|(a, b)| a * b).sum();
        x = next;
        if (rq - lambda).abs() <= 1e-13 * rq {
            return Ok(rq);
        }
        lambda = rq;
    }
    Ok(lambda)
}

/// Whether `C^{s-t}` is a valid constant for the pair `(s, t)`.
pub fn interp_admissible(s: f64, t: f64) -> bool {
    (s >= t && t >= 1.0) || (s >= 1.0 && (0.0..=1.0).contains(&t))
}

/// The named constant for `||(-Δ)^{t/2}u|| <= c ||(-Δ)^{s/2}u||` on `u`
/// supported in `K`.
///
/// `Simple` and `FreqSplit` bound the `t = 0` case; for `t > 0` they are
/// raised to `(s-t)/s`, which is what interpolating between `L^2` and
/// `Ḣ^s` gives.
pub fn theoretical_constant(kind: ConstantKind, k: &KGeometry, s: f64, t: f64, eps: Option<f64>) -> Result<f64> {
    check_order(s, t)?;
    k.validate()?;
    if s == t {
        return Ok(1.0);
    }
    let exponent = (s - t) / s;
    match kind {
        ConstantKind::Simple => Ok(simple_constant(k, s).powf(exponent)),
        ConstantKind::FreqSplit => {
            let c = match eps {
                Some(e) => eps_constant(k, s, e)?,
                None => eps_constant_min(k, s)?.0,
            };
            Ok(c.powf(exponent))
        }
        ConstantKind::Interp => {
            if !interp_admissible(s, t) {
                return Err(Error::InvalidExponentOrder(format!(
                    "C^(s-t) needs s >= t >= 1 or s >= 1 >= t >= 0, got s={s}, t={t}"
                )));
            }
            Ok(classical_constant(k)?.powf(s - t))
        }
    }
}

/// All constants for one `(K, s, t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoincareConstants {
    pub s: f64,
    pub t: f64,
    pub vol_k: f64,
    pub vol_b: f64,
    pub classical_c: f64,
    pub simple: f64,
    pub freq_split_min: f64,
    pub best_eps: f64,
    /// `None` when `(s, t)` is outside the interpolation range.
    pub interp: Option<f64>,
}

impl PoincareConstants {
    pub fn compute(k: &KGeometry, s: f64, t: f64) -> Result<Self> {
        check_order(s, t)?;
        let (fs, eps) = eps_constant_min(k, s)?;
        Ok(Self {
            s,
            t,
            vol_k: k.volume(),
            vol_b: unit_ball_volume(k.dim()),
            classical_c: classical_constant(k)?,
            simple: theoretical_constant(ConstantKind::Simple, k, s, t, None)?,
            freq_split_min: if s == t { 1.0 } else { fs.powf((s - t) / s) },
            best_eps: eps,
            interp: if interp_admissible(s, t) {
                Some(theoretical_constant(ConstantKind::Interp, k, s, t, None)?)
            } else {
                None
            },
        })
    }

    /// `eps -> eps^{-s}/sqrt(1 - eps^n |K||B|)` at the stored `s`, for `t = 0`.
    pub fn eps_constant(&self, k: &KGeometry, eps: f64) -> Result<f64> {
        eps_constant(k, self.s, eps)
    }
}

/// Fails unless `u` vanishes (to [`SUPPORT_TOL`]) outside `K`.
pub fn check_support(u: &Field, k: &KGeometry) -> Result<()> {
    let g = u.grid();
    if k.dim() != g.dim() {
        return Err(Error::InvalidMask("K and grid dimensions differ".into()));
    }
    let norm = u.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let outside =
        (0..g.len()).filter(|&i| !k.contains(&g.point(i)[..g.dim()])).map(|i| u.values()[i].abs()).fold(0.0, f64::max);
    if outside > SUPPORT_TOL * norm {
        return Err(Error::SupportViolation { outside });
    }
    Ok(())
}

/// `||(-Δ)^{t/2}u|| / ||(-Δ)^{s/2}u||` for `u` supported in `K`.
pub fn poincare_ratio(u: &Field, k: &KGeometry, s: f64, t: f64) -> Result<f64> {
    check_order(s, t)?;
    if u.max_abs() == 0.0 {
        return Err(Error::ZeroField);
    }
    check_support(u, k)?;
    let num = sobolev_norm(u, t, true)?;
    let den = sobolev_norm(u, s, true)?;
    if den == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(num / den)
}

/// Random bump superpositions supported in `K`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub grid: Grid,
    pub k: KGeometry,
    pub samples: usize,
    /// At most this many bumps per sample (capped at 5).
    pub max_bumps: usize,
    pub seed: u64,
}

impl SamplerConfig {
    /// Sample `id`, normalised to unit `L^2` norm. Deterministic in
    /// `(seed, id)` regardless of evaluation order.
    pub fn sample(&self, id: usize) -> Result<Field> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id as u64);
        let g = &self.grid;
        let n = g.dim();
        let r_in = self.k.inradius();
        let h = g.spacing();
        let count = rng.random_range(1..=self.max_bumps.clamp(1, 5));
        let mut u = Field::zeros(*g);
        for _ in 0..count {
            // radius at least a few cells so the bump is resolved
            let rho_min = (4.0 * h).min(0.5 * r_in);
            let rho = rng.random_range(rho_min..=r_in.max(rho_min));
            let reach = (r_in - rho).max(0.0) / (n as f64).sqrt();
            let c: Vec<f64> = self
                .k
                .center()
                .iter()
                .map(|&c0| c0 + if reach > 0.0 { rng.random_range(-reach..=reach) } else { 0.0 })
                .collect();
            // stay strictly inside K so rounding cannot leak support
            let rho = rho * (1.0 - 1e-9);
            let amp = rng.random_range(-1.0..1.0);
            u = u.add(&make_bump(g, &c, rho, amp)?)?;
        }
        let norm = u.l2_norm();
        if norm == 0.0 {
            return Err(Error::ZeroField);
        }
        Ok(u.scale(1.0 / norm))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub ratio: f64,
    pub constant: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationReport {
    pub s: f64,
    pub t: f64,
    pub kind: ConstantKind,
    pub constant: f64,
    pub max_ratio: f64,
    pub violations: usize,
    pub samples: Vec<SampleRecord>,
}

impl ViolationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,ratio,constant,violated\n");
        for r in &self.samples {
            out.push_str(&format!("{},{:?},{:?},{}\n", r.sample_id, r.ratio, r.constant, r.violated));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "s": self.s,
            "t": self.t,
            "kind": self.kind,
            "constant": self.constant,
            "max_ratio": self.max_ratio,
            "violations": self.violations,
            "samples": self.samples.len(),
        })
    }
}

/// Measures the ratio on every sample and counts those above the constant.
pub fn verify_sweep(cfg: &SamplerConfig, s: f64, t: f64, kind: ConstantKind) -> Result<ViolationReport> {
    if cfg.samples == 0 {
        return Err(Error::UnsupportedConfig("sampler must produce at least one field".into()));
    }
    let constant = theoretical_constant(kind, &cfg.k, s, t, None)?;
    let samples = (0..cfg.samples)
        .into_par_iter()
        .map(|id| {
            let u = cfg.sample(id)?;
            let ratio = poincare_ratio(&u, &cfg.k, s, t)?;
            Ok(SampleRecord { sample_id: id, ratio, constant, violated: ratio > constant + RATIO_SLACK })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_ratio = samples.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let violations = samples.iter().filter(|r| r.violated).count();
    Ok(ViolationReport { s, t, kind, constant, max_ratio, violations, samples })
}

/// Worst relative slack of `||f||_{Ḣ^r} <= ||f||_{Ḣ^{s0}}^{1-θ} ||f||_{Ḣ^{s1}}^θ`
/// over the given triples; positive means the inequality failed.
pub fn interpolation_check(fields: &[Field], triples: &[(f64, f64, f64)]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for f in fields {
        for &(s0, r, s1) in triples {
            if !(s0 <= r && r <= s1) {
                return Err(Error::InvalidExponentOrder(format!("need s0 <= r <= s1, got ({s0}, {r}, {s1})")));
            }
            let theta = if s1 == s0 { 0.0 } else { (r - s0) / (s1 - s0) };
            let lhs = sobolev_norm(f, r, true)?;
            let rhs = sobolev_norm(f, s0, true)?.powf(1.0 - theta) * sobolev_norm(f, s1, true)?.powf(theta);
            worst = worst.max((lhs - rhs) / rhs.max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}
