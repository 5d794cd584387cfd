//! Sampling scans for the size, smoothness and lower bounds of the kernel.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::heisenberg::{rho, sample_in_ball, sample_unit_sphere, Ball, GroupPoint};
use crate::rng::{self, Rng};

use super::evaluator::KernelEvaluator;

const CHUNK: usize = 8192;

/// Running supremum at half and full sample budget.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SupScan {
    pub samples: usize,
    pub sup_half: f64,
    pub sup: f64,
}

impl SupScan {
    /// Relative change of the running sup when the budget doubles.
    pub fn rel_change(&self) -> f64 {
        if self.sup == 0.0 {
            0.0
        } else {
            (self.sup - self.sup_half) / self.sup
        }
    }
}

/// Sup of `f` over `samples` draws; chunks use independent keyed streams.
pub fn sup_scan<F>(samples: usize, seed: u64, key: u64, f: F) -> SupScan
where
    F: Fn(&mut Rng) -> f64 + Sync,
{
    let chunks = samples.div_ceil(CHUNK).max(1);
    let per: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, rng::combine(key, c as u64));
            let todo = CHUNK.min(samples - c * CHUNK);
            (0..todo).map(|_| f(&mut r)).fold(0.0, f64::max)
        })
        .collect();
    let half = chunks.div_ceil(2).max(1);
    SupScan {
        samples,
        sup_half: per[..half.min(per.len())].iter().cloned().fold(0.0, f64::max),
        sup: per.iter().cloned().fold(0.0, f64::max),
    }
}

/// `sup |K| hnorm^Q` over unit-sphere samples.
pub fn size_bound_scan(ke: &KernelEvaluator, samples: usize, seed: u64) -> SupScan {
    let dims = ke.dims();
    sup_scan(samples, seed, 0x512E, |r| {
        let g = sample_unit_sphere(dims, r);
        ke.k_unchecked(&g).norm() * g.norm().powf(dims.qf())
    })
}

/// Per-direction `sup |Y_j K| hnorm^{Q+1}` over unit-sphere samples, plus
/// the max over `j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientScan {
    pub per_direction: Vec<SupScan>,
    pub overall: SupScan,
}

pub fn gradient_bound_scan(ke: &KernelEvaluator, samples: usize, seed: u64) -> GradientScan {
    let dims = ke.dims();
    let m = dims.y_dim();
    let chunks = samples.div_ceil(CHUNK).max(1);
    let per: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, rng::combine(0x6AD, c as u64));
            let todo = CHUNK.min(samples - c * CHUNK);
            let mut best = vec![0.0f64; m];
            for _ in 0..todo {
                let g = sample_unit_sphere(dims, &mut r);
                let s = g.norm().powf(dims.qf() + 1.0);
                for (b, q) in best.iter_mut().zip(ke.horizontal_gradient_unchecked(&g)) {
                    *b = b.max(q.norm() * s);
                }
            }
            best
        })
        .collect();
    let half = chunks.div_ceil(2);
    let fold = |rows: &[Vec<f64>], j: usize| rows.iter().map(|v| v[j]).fold(0.0, f64::max);
    let per_direction: Vec<SupScan> = (0..m)
        .map(|j| SupScan {
            samples,
            sup_half: fold(&per[..half], j),
            sup: fold(&per, j),
        })
        .collect();
    let overall = SupScan {
        samples,
        sup_half: per_direction.iter().map(|s| s.sup_half).fold(0.0, f64::max),
        sup: per_direction.iter().map(|s| s.sup).fold(0.0, f64::max),
    };
    GradientScan {
        per_direction,
        overall,
    }
}

/// Which argument of `K(., .)` the Hölder scan perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HolderSide {
    /// `|K(g,h) - K(g0,h)| rho(g0,h)^{Q+1} / rho(g,g0)` with `rho(g0,h) >= sep rho(g,g0)`.
    First,
    /// `|K(g,h) - K(g,h0)| rho(g,h0)^{Q+1} / rho(h,h0)` with `rho(g,h0) >= sep rho(h,h0)`.
    Second,
}

/// Sup of the Hölder quotient over random configurations respecting the
/// separation `sep`.
pub fn holder_scan(
    ke: &KernelEvaluator,
    side: HolderSide,
    sep: f64,
    samples: usize,
    seed: u64,
) -> SupScan {
    let dims = ke.dims();
    let q1 = dims.qf() + 1.0;
    let key = match side {
        HolderSide::First => 0x401D1,
        HolderSide::Second => 0x401D2,
    };
    sup_scan(samples, seed, key, |r| {
        let spread = Ball::centered(dims, 3.0).expect("positive radius");
        let anchor = sample_in_ball(&spread, r);
        let far = 10f64.powf(r.random_range(-0.5..0.5));
        // the quotient peaks at the separation boundary, so the ratio
        // near/far is drawn with density proportional to x^7 on (0, 1/sep]
        let near = far / sep * r.random::<f64>().powf(0.125).max(1e-9);
        let moved = anchor.compose(&sample_unit_sphere(dims, r).dilated(far));
        // the point within `near` of `moved` is the perturbed argument
        let bumped = moved.compose(&sample_unit_sphere(dims, r).dilated(near));
        let (diff, d_far, d_near) = match side {
            HolderSide::First => {
                // h = anchor, g0 = moved, g = bumped
                let (a, _) = ke.k_pair(&bumped, &anchor);
                let (b, _) = ke.k_pair(&moved, &anchor);
                (a - b, rho(&moved, &anchor), rho(&bumped, &moved))
            }
            HolderSide::Second => {
                // g = anchor, h0 = moved, h = bumped
                let (a, _) = ke.k_pair(&anchor, &bumped);
                let (b, _) = ke.k_pair(&anchor, &moved);
                (a - b, rho(&anchor, &moved), rho(&bumped, &moved))
            }
        };
        if d_near == 0.0 {
            return 0.0;
        }
        diff.norm() * d_far.powf(q1) / d_near
    })
}

/// Parameters of the pointwise lower-bound scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowerBoundCfg {
    pub base_points: usize,
    pub directions: usize,
    /// Inner radius `r0` of the sector.
    pub r0: f64,
    /// Radii probed along each direction, as multiples of `r0`.
    pub radius_factors: Vec<f64>,
    /// Points of `B(g, 1)` probed per direction and radius.
    pub probes: usize,
}

impl Default for LowerBoundCfg {
    fn default() -> Self {
        Self {
            base_points: 100,
            directions: 64,
            r0: 10.0,
            radius_factors: vec![1.0, 2.0, 4.0, 16.0],
            probes: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowerBoundReport {
    /// `min |K(g1,g2)| rho^Q` over probes, for each base point and direction.
    pub per_direction: Vec<Vec<f64>>,
    /// Per base point: median over directions (the sector is the better half).
    pub per_base: Vec<f64>,
    pub c_global: f64,
    /// Fraction of all (base, direction) pairs whose value is at least `c_global`.
    pub fraction_achieving: f64,
}

/// For unit-sphere base points `g`, probe sectors `g delta_R(theta)`,
/// `R >= r0`, against points of `B(g, 1)`.
pub fn lower_bound_scan(ke: &KernelEvaluator, cfg: &LowerBoundCfg, seed: u64) -> LowerBoundReport {
    let dims = ke.dims();
    let q = dims.qf();
    let per_direction: Vec<Vec<f64>> = (0..cfg.base_points)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, rng::combine(0x10B, i as u64));
            let g = sample_unit_sphere(dims, &mut r);
            let unit = Ball::new(g.clone(), 1.0).expect("positive radius");
            (0..cfg.directions)
                .map(|_| {
                    let theta = sample_unit_sphere(dims, &mut r);
                    let mut worst = f64::INFINITY;
                    for &f in &cfg.radius_factors {
                        let g2 = g.compose(&theta.dilated(cfg.r0 * f));
                        for _ in 0..cfg.probes {
                            let g1 = sample_in_ball(&unit, &mut r);
                            let (k, d) = ke.k_pair(&g1, &g2);
                            worst = worst.min(k.norm() * d.powf(q));
                        }
                    }
                    worst
                })
                .collect()
        })
        .collect();
    let per_base: Vec<f64> = per_direction
        .iter()
        .map(|v| {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            s[(s.len() - 1) / 2]
        })
        .collect();
    let c_global = per_base.iter().cloned().fold(f64::INFINITY, f64::min);
    let total: usize = per_direction.iter().map(|v| v.len()).sum();
    let hits: usize = per_direction
        .iter()
        .flatten()
        .filter(|&&v| v >= c_global)
        .count();
    LowerBoundReport {
        per_direction,
        per_base,
        c_global,
        fraction_achieving: hits as f64 / total.max(1) as f64,
    }
}

/// Parameters of the component sign-constancy scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignScanCfg {
    pub balls: usize,
    pub radius: f64,
    pub a1: f64,
    pub a2: f64,
    pub candidates: usize,
    pub pairs: usize,
}

impl Default for SignScanCfg {
    fn default() -> Self {
        Self {
            balls: 100,
            radius: 1.0,
            a1: 3.0,
            a2: 10.0,
            candidates: 24,
            pairs: 256,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallSignResult {
    pub center: Vec<f64>,
    pub found: bool,
    /// Component index 1..=4 of the best companion, 0 when none was found.
    pub component: usize,
    pub distance: f64,
    /// `min |K_i(g,h)| rho(g,h)^Q` over the sampled pairs of the best companion.
    pub c: f64,
    /// Center of the best companion, empty when none was found.
    pub companion: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignScanReport {
    pub per_ball: Vec<BallSignResult>,
    pub success_rate: f64,
    /// Min of the per-ball constants over the successful balls.
    pub c_global: f64,
    /// Histogram of the winning component index (1..=4).
    pub component_counts: [usize; 4],
}

/// Searches companions `B(h0, r)` of `ball` with `rho(g0, h0)` in
/// `[a1 r, a2 r]` on which one component of `K` keeps its sign over
/// sampled pairs; keeps the component with the largest `min |K_i| rho^Q`.
pub fn find_companion(ke: &KernelEvaluator, ball: &Ball, cfg: &SignScanCfg, r: &mut Rng) -> BallSignResult {
    let dims = ke.dims();
    let q = dims.qf();
    let g0 = &ball.center;
    let left: Vec<GroupPoint> = (0..cfg.pairs).map(|_| sample_in_ball(ball, r)).collect();
    let mut best = BallSignResult {
        center: g0.coords(),
        found: false,
        component: 0,
        distance: 0.0,
        c: 0.0,
        companion: Vec::new(),
    };
    for _ in 0..cfg.candidates {
        let dist = ball.radius * r.random_range(cfg.a1..=cfg.a2);
        let h0 = g0.compose(&sample_unit_sphere(dims, r).dilated(dist));
        let bt = Ball::new(h0, ball.radius).expect("positive radius");
        let mut mins = [f64::INFINITY; 4];
        let mut pos = [true; 4];
        let mut neg = [true; 4];
        for g in &left {
            let h = sample_in_ball(&bt, r);
            let (k, d) = ke.k_pair(g, &h);
            let s = d.powf(q);
            for (c, v) in k.to_array().into_iter().enumerate() {
                pos[c] &= v > 0.0;
                neg[c] &= v < 0.0;
                mins[c] = mins[c].min(v.abs() * s);
            }
        }
        for c in 0..4 {
            if (pos[c] || neg[c]) && mins[c] > best.c {
                best.found = true;
                best.component = c + 1;
                best.distance = dist;
                best.c = mins[c];
                best.companion = bt.center.coords();
            }
        }
    }
    best
}

/// Runs `find_companion` for balls `B(g0, r)` centered on the unit sphere.
pub fn sign_constancy_scan(ke: &KernelEvaluator, cfg: &SignScanCfg, seed: u64) -> SignScanReport {
    let dims = ke.dims();
    let per_ball: Vec<BallSignResult> = (0..cfg.balls)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, rng::combine(0x5160, i as u64));
            let g0 = sample_unit_sphere(dims, &mut r);
            let b = Ball::new(g0, cfg.radius).expect("positive radius");
            find_companion(ke, &b, cfg, &mut r)
        })
        .collect();
    let found: Vec<&BallSignResult> = per_ball.iter().filter(|b| b.found).collect();
    let mut component_counts = [0usize; 4];
    for b in &found {
        component_counts[b.component - 1] += 1;
    }
    SignScanReport {
        success_rate: found.len() as f64 / per_ball.len().max(1) as f64,
        c_global: found.iter().map(|b| b.c).fold(f64::INFINITY, f64::min),
        component_counts,
        per_ball,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heisenberg::GroupDims;
    use crate::kernel::build_kernel;

    fn ke2() -> KernelEvaluator {
        build_kernel(GroupDims::new(2).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn size_sup_is_finite_and_at_least_the_axis_value() {
        let s = size_bound_scan(&ke2(), 50_000, 1);
        assert!(s.sup.is_finite());
        // sup over the sphere is at least |K| at the pure-y point, which is 12
        assert!(s.sup >= 12.0 * 0.9);
        assert!(s.sup_half <= s.sup);
        let again = size_bound_scan(&ke2(), 50_000, 1);
        assert_eq!(s, again);
    }

    #[test]
    fn gradient_and_holder_sups_are_finite() {
        let ke = ke2();
        let g = gradient_bound_scan(&ke, 20_000, 2);
        assert_eq!(g.per_direction.len(), 4);
        assert!(g.overall.sup.is_finite() && g.overall.sup > 0.0);
        for side in [HolderSide::First, HolderSide::Second] {
            let h = holder_scan(&ke, side, 5.0, 20_000, 3);
            assert!(h.sup.is_finite() && h.sup > 0.0);
        }
    }

    #[test]
    fn holder_quotient_is_controlled_by_the_gradient() {
        // small perturbations approach a horizontal derivative bounded by the
        // gradient sup times a geometric factor
        let ke = ke2();
        let g = gradient_bound_scan(&ke, 50_000, 4).overall.sup;
        let h = holder_scan(&ke, HolderSide::First, 5.0, 50_000, 5).sup;
        assert!(h < 100.0 * g, "holder {h} gradient {g}");
    }

    #[test]
    fn lower_bound_scan_finds_a_positive_constant() {
        let cfg = LowerBoundCfg {
            base_points: 10,
            directions: 16,
            probes: 4,
            ..LowerBoundCfg::default()
        };
        let rep = lower_bound_scan(&ke2(), &cfg, 6);
        assert!(rep.c_global > 0.0);
        assert!(rep.fraction_achieving >= 0.5);
    }

    #[test]
    fn sign_scan_succeeds_on_most_balls() {
        let cfg = SignScanCfg {
            balls: 20,
            candidates: 12,
            pairs: 64,
            ..SignScanCfg::default()
        };
        let rep = sign_constancy_scan(&ke2(), &cfg, 7);
        assert!(rep.success_rate >= 0.95, "{}", rep.success_rate);
        assert!(rep.c_global > 0.0);
        for b in rep.per_ball.iter().filter(|b| b.found) {
            assert!(b.distance >= 3.0 && b.distance <= 10.0);
        }
    }
}
