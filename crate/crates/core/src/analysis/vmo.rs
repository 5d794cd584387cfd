use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::heisenberg::{log_grid, sample_unit_sphere, Ball, GroupDims, GroupPoint};
use crate::rng;

use super::estimators::{ball_points, mean_oscillation, EstimatorCfg};
use super::field::ScalarField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmoCfg {
    /// Curve (i): radii from `small_start` down to `small_end`.
    pub small_start: f64,
    pub small_end: f64,
    /// Curve (ii): radii from `large_start` up to `large_end`.
    pub large_start: f64,
    pub large_end: f64,
    /// Curve (iii): exclusion radii from `far_start` up to `far_end`.
    pub far_start: f64,
    pub far_end: f64,
    pub points: usize,
    /// Random centers per radius, in addition to the origin.
    pub centers: usize,
    pub center_spread: f64,
    /// Ball radii used for curve (iii).
    pub far_ball_radii: Vec<f64>,
    pub estimator: EstimatorCfg,
}

impl Default for VmoCfg {
    fn default() -> Self {
        Self {
            small_start: 1.0,
            small_end: 1e-3,
            large_start: 1.0,
            large_end: 1e3,
            far_start: 0.25,
            far_end: 8.0,
            points: 7,
            centers: 12,
            center_spread: 2.0,
            far_ball_radii: vec![0.25, 0.5, 1.0],
            estimator: EstimatorCfg {
                samples: 2000,
                ..EstimatorCfg::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    /// Last value over first value.
    pub fn tail_ratio(&self) -> f64 {
        let first = self.y[0];
        let last = *self.y.last().unwrap();
        if first == 0.0 {
            if last == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            last / first
        }
    }

    /// Least-squares slope of `log y` against `log x` over the second half.
    pub fn tail_slope(&self) -> f64 {
        let start = self.x.len() / 2;
        let pts: Vec<(f64, f64)> = self.x[start..]
            .iter()
            .zip(&self.y[start..])
            .filter(|(_, y)| **y > 0.0)
            .map(|(x, y)| (x.ln(), y.ln()))
            .collect();
        linear_fit(&pts).map(|f| f.slope).unwrap_or(f64::NAN)
    }

    pub fn min(&self) -> f64 {
        self.y.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VmoCurves {
    pub small: Curve,
    pub large: Curve,
    pub far: Curve,
}

fn sup_over(b: &ScalarField, balls: Vec<Ball>, cfg: &EstimatorCfg) -> f64 {
    balls
        .par_iter()
        .map(|ball| mean_oscillation(b, ball, cfg).value)
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Centers for radius `a`: the origin, fixed points in `B(0, spread)` and
/// points at distance comparable to `a`.
fn centers_for(dims: GroupDims, a: f64, cfg: &VmoCfg, seed: u64) -> Vec<GroupPoint> {
    let mut r = rng::stream(seed, 0xCE0);
    let mut out = vec![GroupPoint::identity(dims)];
    for k in 0..cfg.centers {
        let dir = sample_unit_sphere(dims, &mut r);
        let s: f64 = rand::Rng::random_range(&mut r, 0.0..1.0);
        if k % 2 == 0 {
            out.push(dir.dilated(cfg.center_spread * s));
        } else {
            out.push(dir.dilated(2.0 * a * s));
        }
    }
    out
}

/// The three vanishing-oscillation curves.
pub fn vmo_diagnostics(b: &ScalarField, dims: GroupDims, cfg: &VmoCfg) -> Result<VmoCurves> {
    let est = &cfg.estimator;
    let curve_at = |radii: Vec<f64>| {
        let y = radii
            .iter()
            .map(|&a| {
                let balls = centers_for(dims, a, cfg, est.seed)
                    .into_iter()
                    .map(|c| Ball::new(c, a))
                    .collect::<Result<Vec<_>>>()?;
                Ok(sup_over(b, balls, est))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok::<_, crate::error::Error>(Curve { x: radii, y })
    };
    let small = curve_at(log_grid(cfg.small_start, cfg.small_end, cfg.points))?;
    let large = curve_at(log_grid(cfg.large_start, cfg.large_end, cfg.points))?;
    let far_x = log_grid(cfg.far_start, cfg.far_end, cfg.points);
    let mut far_y = Vec::with_capacity(far_x.len());
    for &rr in &far_x {
        let mut r = rng::stream(est.seed, 0xFA4);
        let mut balls = Vec::new();
        for &br in &cfg.far_ball_radii {
            for _ in 0..cfg.centers.max(1) {
                let dir = sample_unit_sphere(dims, &mut r);
                // ball at distance in [rr + br, 2(rr + br)) from the origin,
                // hence inside the complement of B(0, rr)
                let s: f64 = rand::Rng::random_range(&mut r, 1.0..2.0);
                balls.push(Ball::new(dir.dilated((rr + br) * s * 1.000_001), br)?);
            }
        }
        far_y.push(sup_over(b, balls, est));
    }
    Ok(VmoCurves {
        small,
        large,
        far: Curve { x: far_x, y: far_y },
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(pts: &[(f64, f64)]) -> Option<LinearFit> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JnTable {
    pub mean: f64,
    /// `(alpha, fraction, count)`.
    pub rows: Vec<(f64, f64, usize)>,
    /// Fit of `ln fraction` against `alpha` over rows with enough counts.
    pub fit: Option<LinearFit>,
}

/// Sampled level-set fractions `|{|b - b_B| > alpha}| / |B|`.
pub fn jn_levelset_decay(
    b: &ScalarField,
    ball: &Ball,
    alphas: &[f64],
    min_count: usize,
    cfg: &EstimatorCfg,
) -> JnTable {
    let vals: Vec<f64> = ball_points(ball, cfg.samples, cfg.seed)
        .par_iter()
        .map(|g| b.eval(g))
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let rows: Vec<(f64, f64, usize)> = alphas
        .iter()
        .map(|&a| {
            let c = vals.iter().filter(|v| (*v - mean).abs() > a).count();
            (a, c as f64 / n, c)
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.2 >= min_count.max(1))
        .map(|r| (r.0, r.1.ln()))
        .collect();
    JnTable {
        mean,
        fit: linear_fit(&pts),
        rows,
    }
}
