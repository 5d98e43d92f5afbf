//! Simple geometric regions used for supports, domains and windows.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Closed ball or axis-aligned box in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Axis-aligned box `center ± half_widths`.
    Box {
        center: Vec<f64>,
        half_widths: Vec<f64>,
    },
}

impl Region {
    pub fn unit_ball(dim: usize) -> Self {
        Region::Ball { center: vec![0.0; dim], radius: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Ball { center, .. } | Region::Box { center, .. } => center.len(),
        }
    }

    pub fn volume(&self) -> f64 {
        let n = self.dim();
        match self {
            Region::Ball { radius, .. } => unit_ball_volume(n) * radius.powi(n as i32),
            Region::Box { half_widths, .. } => half_widths.iter().map(|w| 2.0 * w).product(),
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => {
                center.iter().zip(p).map(|(c, x)| (x - c).powi(2)).sum::<f64>() <= radius * radius
            }
            Region::Box { center, half_widths } => {
                center.iter().zip(half_widths).zip(p).all(|((c, w), x)| (x - c).abs() <= *w)
            }
        }
    }

    /// Radius of the largest ball centred at the centre of `K`.
    pub fn inradius(&self) -> f64 {
        match self {
            Region::Ball { radius, .. } => *radius,
            Region::Box { half_widths, .. } => half_widths.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn center(&self) -> &[f64] {
        match self {
            Region::Ball { center, .. } | Region::Box { center, .. } => center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let ok = match self {
            Region::Ball { radius, .. } => *radius > 0.0,
            Region::Box { half_widths, .. } => half_widths.len() == n && half_widths.iter().all(|w| *w > 0.0),
        };
        if !(1..=3).contains(&n) || !ok {
            return Err(Error::InvalidMask(format!("bad geometry {self:?}")));
        }
        Ok(())
    }
}

/// `|B(0,1)|` in dimension 1, 2, 3.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => PI.powf(dim as f64 / 2.0) / gamma_half_integer(dim as f64 / 2.0 + 1.0),
    }
}

fn gamma_half_integer(x: f64) -> f64 {
    // x is a positive integer or half-integer
    let mut acc = if x.fract() == 0.0 { 1.0 } else { PI.sqrt() };
    let mut k = if x.fract() == 0.0 { 1.0 } else { 0.5 };
    while k < x - 1e-9 {
        acc *= k;
        k += 1.0;
    }
    acc
}

impl Region {
    /// Open-set membership, `|x - c| < r` or strict box bounds.
    pub fn contains_open(&self, p: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => {
                center.iter().zip(p).map(|(c, x)| (x - c).powi(2)).sum::<f64>() < radius * radius
            }
            Region::Box { center, half_widths } => {
                center.iter().zip(half_widths).zip(p).all(|((c, w), x)| (x - c).abs() < *w)
            }
        }
    }

    /// Grid indices strictly inside the region.
    pub fn indices(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.len()).filter(|&i| self.contains_open(&grid.point(i)[..grid.dim()])).collect()
    }

    /// Whether the closed ball `B(c, r)` lies inside the region.
    pub fn contains_ball(&self, c: &[f64], r: f64) -> bool {
        match self {
            Region::Ball { center, radius } => {
                center.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() + r <= *radius
            }
            Region::Box { center, half_widths } => {
                center.iter().zip(half_widths).zip(c).all(|((a, w), b)| (b - a).abs() + r <= *w)
            }
        }
    }

    /// Bounding box as `(lo, hi)` corners.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Ball { center, radius } => {
                (center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
            }
            Region::Box { center, half_widths } => (
                center.iter().zip(half_widths).map(|(c, w)| c - w).collect(),
                center.iter().zip(half_widths).map(|(c, w)| c + w).collect(),
            ),
        }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Region::Box { center: vec![(lo + hi) / 2.0], half_widths: vec![(hi - lo) / 2.0] }
    }
}

impl Region {
    /// Distance from `inner` to the complement of `self`; negative when
    /// `inner` is not contained.
    pub fn margin_around(&self, inner: &Region) -> f64 {
        let gap = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect() };
        match (self, inner) {
            (Region::Ball { center: co, radius: ro }, Region::Ball { center: ci, radius: ri }) => {
                ro - gap(co, ci).iter().map(|g| g * g).sum::<f64>().sqrt() - ri
            }
            (Region::Ball { center: co, radius: ro }, Region::Box { center: ci, half_widths }) => {
                let far: f64 = gap(co, ci).iter().zip(half_widths).map(|(g, w)| (g + w).powi(2)).sum();
                ro - far.sqrt()
            }
            (Region::Box { center: co, half_widths }, Region::Ball { center: ci, radius: ri }) => {
                gap(co, ci).iter().zip(half_widths).map(|(g, w)| w - g).fold(f64::INFINITY, f64::min) - ri
            }
            (Region::Box { center: co, half_widths: wo }, Region::Box { center: ci, half_widths: wi }) => {
                gap(co, ci).iter().zip(wo.iter().zip(wi)).map(|(g, (a, b))| a - g - b).fold(f64::INFINITY, f64::min)
            }
        }
    }
}
