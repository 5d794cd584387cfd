use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{ball_points, median_of, weighted_measure, EstimatorCfg, ExtremalData, MorreyParams, ScalarField, Weight};
use crate::error::{Error, Result};
use crate::heisenberg::{rho, Ball, GroupPoint};
use crate::kernel::scan::{find_companion, SignScanCfg};
use crate::kernel::KernelEvaluator;
use crate::quadrature::{ball_key, stratified_integral, stratified_nodes, Estimate, Stratification};
use crate::rng;

use super::apply::{QuadratureCfg, QuatEstimate};
use super::image::{nodes_values, power_from_twins, CommutatorImage};

/// The median-split test function on a ball and its construction data.
#[derive(Clone, Debug)]
pub struct F0 {
    pub field: ScalarField,
    pub ball: Ball,
    pub alpha: f64,
    pub a0: f64,
    pub amplitude: f64,
    /// Sample counts strictly above and below `alpha`.
    pub above: usize,
    pub below: usize,
    /// Sampled `M(b; B0)`.
    pub oscillation: f64,
    pub degenerate: bool,
    /// The sample points the construction used; `f0` sums to zero on them.
    pub nodes: Arc<Vec<GroupPoint>>,
}

/// `[w(B0)]^{(kappa-1)/p} (sgn(b - alpha) - a0)` on `B0`, with `alpha`
/// the lower sample median of `b` on `B0`.
pub fn build_f0(b: &ScalarField, b0: &Ball, w: &Weight, params: &MorreyParams, cfg: &EstimatorCfg) -> Result<F0> {
    params.validate()?;
    let nodes = ball_points(b0, cfg.samples, cfg.seed);
    let vals: Vec<f64> = nodes.par_iter().map(|g| b.eval(g)).collect();
    let med = median_of(&vals);
    let n = vals.len() as f64;
    let a0 = (med.above as f64 - med.below as f64) / n;
    if a0.abs() > 0.5 {
        return Err(Error::Precondition(format!("median split gave |a0| = {} > 1/2", a0.abs())));
    }
    let mean = vals.iter().sum::<f64>() / n;
    let oscillation = vals.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    let wb = weighted_measure(w, b0, cfg).value;
    let amplitude = wb.powf((params.kappa - 1.0) / params.p);
    let degenerate = (med.above as f64) < 0.01 * n && (med.below as f64) < 0.01 * n;
    Ok(F0 {
        field: ScalarField::Extremal(Arc::new(ExtremalData {
            b: b.clone(),
            ball: b0.clone(),
            alpha: med.alpha,
            a0,
            amplitude,
        })),
        ball: b0.clone(),
        alpha: med.alpha,
        a0,
        amplitude,
        above: med.above,
        below: med.below,
        oscillation,
        degenerate,
        nodes: Arc::new(nodes),
    })
}

/// `[b, C] f0(g)` for `g` well away from `B0`, as a sum over the
/// construction nodes (where `f0` has exactly zero mean).
fn far_image(ke: &KernelEvaluator, b: &ScalarField, f0: &F0, g: &GroupPoint) -> QuatEstimate {
    let bg = b.eval(g);
    let n = f0.nodes.len() as f64;
    let vol = f0.ball.volume();
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for u in f0.nodes.iter() {
        let fu = f0.field.eval(u);
        if fu == 0.0 {
            continue;
        }
        let (k, _) = ke.k_pair(g, u);
        let v = k.scale((bg - b.eval(u)) * fu).to_array();
        for i in 0..4 {
            sum[i] += v[i];
            sq[i] += v[i] * v[i];
        }
    }
    let mut var = 0.0;
    let mut val = [0.0; 4];
    for i in 0..4 {
        let m = sum[i] / n;
        val[i] = vol * m;
        var += vol * vol * (sq[i] / n - m * m).max(0.0) / (n - 1.0);
    }
    QuatEstimate {
        value: crate::quaternion::Quat::from_array(val),
        std_error: var.sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct F0CheckCfg {
    pub a1: f64,
    pub a2: f64,
    /// Required lower bound on `M(b; B0)`.
    pub delta: f64,
    /// Nodes used to build `f0`.
    pub estimator: EstimatorCfg,
    /// Target samples per integral.
    pub targets: usize,
    pub candidates: usize,
    pub pairs: usize,
}

impl Default for F0CheckCfg {
    fn default() -> Self {
        Self {
            a1: 3.0,
            a2: 10.0,
            delta: 0.01,
            estimator: EstimatorCfg::default().with_samples(4000),
            targets: 256,
            candidates: 24,
            pairs: 256,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct F0Row {
    pub k: u32,
    pub companion_found: bool,
    pub component: usize,
    pub companion_center: Vec<f64>,
    /// Normalized `int_{companion} |[b,C]f0|^p w`, absent without a companion.
    pub lower: Option<Estimate>,
    /// Normalized `int_{A2^{k+1} B0 \ A2^k B0} |[b,C]f0|^p w`.
    pub upper: Estimate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct F0BoundReport {
    pub oscillation: f64,
    pub alpha: f64,
    pub a0: f64,
    pub rows: Vec<F0Row>,
    /// Smallest normalized lower value.
    pub floor: f64,
    /// Largest normalized upper value.
    pub cap: f64,
    /// Max over min of the lower values across k.
    pub lower_spread: f64,
    /// Max over min of the upper values across k.
    pub upper_spread: f64,
}

/// Lower integrals over companion balls of `A2^{k-1} B0` and upper
/// integrals over the annuli `A2^{k+1} B0 \ A2^k B0`, each normalized by
/// `A2^{-kpQ} [w(B0)]^{kappa-1} w(A2^k B0)`.
#[allow(clippy::too_many_arguments)]
pub fn f0_bound_check(
    ke: &KernelEvaluator,
    b: &ScalarField,
    b0: &Ball,
    w: &Weight,
    params: &MorreyParams,
    ks: &[u32],
    cfg: &F0CheckCfg,
) -> Result<F0BoundReport> {
    let f0 = build_f0(b, b0, w, params, &cfg.estimator)?;
    if !(f0.oscillation > cfg.delta) {
        return Err(Error::Precondition(format!(
            "M(b;B0) = {} does not exceed delta = {}",
            f0.oscillation, cfg.delta
        )));
    }
    let q = b0.dims().qf();
    let p = params.p;
    let est = &cfg.estimator;
    let wb0 = weighted_measure(w, b0, est).value;
    let scan = SignScanCfg {
        a1: cfg.a1,
        a2: cfg.a2,
        candidates: cfg.candidates,
        pairs: cfg.pairs,
        ..SignScanCfg::default()
    };
    let integrand = |g: &GroupPoint| [far_image(ke, b, &f0, g).value.norm().powf(p) * w.eval(g)];
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let scale = cfg.a2.powi(k as i32);
        let big = b0.scaled(scale);
        let norm = cfg.a2.powf(-(k as f64) * p * q) * wb0.powf(params.kappa - 1.0) * weighted_measure(w, &big, est).value;
        let base = b0.scaled(cfg.a2.powi(k as i32 - 1));
        let mut r = rng::stream(est.seed, rng::combine(0xF0C, k as u64));
        let comp = find_companion(ke, &base, &scan, &mut r);
        let lower = if comp.found {
            let cb = Ball::new(GroupPoint::from_coords(&comp.companion)?, base.radius)?;
            let [e] = stratified_integral(&cb, None, cfg.targets, est.seed, ball_key(&cb), integrand);
            Some(e.scale(1.0 / norm))
        } else {
            None
        };
        let outer = b0.scaled(scale * cfg.a2);
        // the integrand falls off like rho^-(pQ - a), so thin shells with
        // log-radial draws keep the per-shell spread small
        let radii = (0..=4 * cfg.a2.log2().ceil() as i32)
            .map(|j| big.radius * 2f64.powf(j as f64 / 4.0))
            .collect();
        let st = Stratification {
            anchor: b0.center.clone(),
            radii,
            include_core: false,
            include_outer: false,
            log_radial: true,
        };
        let [up] = stratified_integral(&outer, Some(&st), cfg.targets, est.seed, ball_key(&outer), integrand);
        rows.push(F0Row {
            k,
            companion_found: comp.found,
            component: comp.component,
            companion_center: comp.companion,
            lower,
            upper: up.scale(1.0 / norm),
        });
    }
    let lows: Vec<f64> = rows.iter().filter_map(|r| r.lower.map(|e| e.value)).collect();
    let ups: Vec<f64> = rows.iter().map(|r| r.upper.value).collect();
    let spread = |v: &[f64]| {
        let hi = v.iter().cloned().fold(0.0, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    };
    Ok(F0BoundReport {
        oscillation: f0.oscillation,
        alpha: f0.alpha,
        a0: f0.a0,
        floor: lows.iter().cloned().fold(f64::INFINITY, f64::min),
        cap: ups.iter().cloned().fold(0.0, f64::max),
        lower_spread: spread(&lows),
        upper_spread: spread(&ups),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationCfg {
    pub eta: f64,
    pub a2: f64,
    /// Exponent of the enlargement `C1 = A2^{k1}` in the disjointness test.
    pub k1: u32,
    pub delta: f64,
    /// Evaluation balls `B(c_j, s r_j)`.
    pub eval_scales: Vec<f64>,
    pub targets: usize,
    pub quadrature: QuadratureCfg,
    pub estimator: EstimatorCfg,
}

impl Default for SeparationCfg {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            a2: 10.0,
            k1: 2,
            delta: 0.01,
            eval_scales: vec![1.0, 2.0, 4.0],
            targets: 1024,
            quadrature: QuadratureCfg {
                samples: 2000,
                ..QuadratureCfg::default()
            },
            estimator: EstimatorCfg::default().with_samples(20_000),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeparationReport {
    /// Symmetric matrix of Morrey distances between images.
    pub distances: Vec<Vec<f64>>,
    /// Per ball, the distance to the nearest other image.
    pub row_min: Vec<f64>,
    pub min_offdiag: Option<f64>,
    /// Pairs whose enlarged balls overlap.
    pub overlaps: Vec<String>,
    pub oscillations: Vec<f64>,
}

/// Pairwise Morrey distances of `[b, C_eta] f_j` for the median-split
/// functions `f_j` of a ball sequence.
pub fn separation_probe(
    ke: &Arc<KernelEvaluator>,
    b: &ScalarField,
    balls: &[Ball],
    w: &Weight,
    params: &MorreyParams,
    cfg: &SeparationCfg,
) -> Result<SeparationReport> {
    if balls.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let enlarge = cfg.a2 * cfg.a2.powi(cfg.k1 as i32);
    let mut overlaps = Vec::new();
    for i in 0..balls.len() {
        for j in i + 1..balls.len() {
            let d = rho(&balls[i].center, &balls[j].center);
            if d < enlarge * (balls[i].radius + balls[j].radius) {
                overlaps.push(format!("balls {i} and {j}: enlarged by {enlarge} they overlap"));
            }
        }
    }
    let mut violations = Vec::new();
    let mut f0s = Vec::with_capacity(balls.len());
    for (i, ball) in balls.iter().enumerate() {
        let f0 = build_f0(b, ball, w, params, &cfg.estimator)?;
        if !(f0.oscillation > cfg.delta) {
            violations.push(format!("ball {i}: M(b;B) = {} does not exceed delta = {}", f0.oscillation, cfg.delta));
        }
        f0s.push(f0);
    }
    if !violations.is_empty() {
        return Err(Error::Precondition(violations.join("; ")));
    }
    let images = f0s
        .iter()
        .map(|f0| CommutatorImage::new(ke.clone(), b, f0.field.clone(), cfg.eta, cfg.quadrature))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&CommutatorImage> = images.iter().collect();
    let smallest = balls
        .iter()
        .min_by(|a, b| a.radius.total_cmp(&b.radius))
        .expect("nonempty");
    let nb = balls.len();
    let p = params.p;
    let mut dist = vec![vec![0.0; nb]; nb];
    for ball in balls {
        for &s in &cfg.eval_scales {
            let e = ball.scaled(s);
            let d = rho(&e.center, &smallest.center);
            let outer = d + e.radius;
            let st = Stratification::dyadic_down(
                smallest.center.clone(),
                outer,
                Stratification::levels_between(outer, 0.5 * smallest.radius),
                true,
            );
            let nodes = stratified_nodes(&e, Some(&st), cfg.targets, cfg.estimator.seed, ball_key(&e));
            let vals = nodes_values(&refs, &nodes);
            let wv: Vec<f64> = nodes.iter().map(|(g, _)| w.eval(g)).collect();
            let den = if w.is_constant() {
                w.scale * e.volume()
            } else {
                nodes.iter().zip(&wv).map(|((_, wt), w)| wt * w).sum()
            };
            for i in 0..nb {
                for j in i + 1..nb {
                    let num: f64 = nodes
                        .iter()
                        .zip(&vals)
                        .zip(&wv)
                        .map(|(((_, wt), v), w)| {
                            if *wt == 0.0 {
                                0.0
                            } else {
                                wt * power_from_twins(v[i].0 - v[j].0, v[i].1 - v[j].1, p) * w
                            }
                        })
                        .sum();
                    let v = (num.max(0.0) / den.powf(params.kappa)).powf(1.0 / p);
                    if v > dist[i][j] {
                        dist[i][j] = v;
                        dist[j][i] = v;
                    }
                }
            }
        }
    }
    let row_min: Vec<f64> = (0..nb)
        .map(|i| {
            (0..nb)
                .filter(|&j| j != i)
                .map(|j| dist[i][j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let min_offdiag = if nb > 1 {
        Some(row_min.iter().cloned().fold(f64::INFINITY, f64::min))
    } else {
        None
    };
    Ok(SeparationReport {
        distances: dist,
        row_min: if nb > 1 { row_min } else { Vec::new() },
        min_offdiag,
        overlaps,
        oscillations: f0s.iter().map(|f| f.oscillation).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heisenberg::GroupDims;
    use crate::kernel::build_kernel;

    fn d() -> GroupDims {
        GroupDims::new(2).unwrap()
    }

    fn params() -> MorreyParams {
        MorreyParams::new(2.0, 0.5).unwrap()
    }

    #[test]
    fn f0_properties_on_independent_samples() {
        let b0 = Ball::centered(d(), 1.0).unwrap();
        let cfg = EstimatorCfg::default().with_samples(20_000);
        let f0 = build_f0(&ScalarField::LogNorm, &b0, &Weight::power(2.0), &params(), &cfg).unwrap();
        assert!(f0.a0.abs() <= 0.5 && !f0.degenerate);
        // exact zero sum on the construction nodes
        let s: f64 = f0.nodes.iter().map(|g| f0.field.eval(g)).sum();
        assert!(s.abs() < 1e-9 * f0.nodes.len() as f64);
        let pts = ball_points(&b0, 50_000, 999);
        let vals: Vec<f64> = pts.iter().map(|g| f0.field.eval(g)).collect();
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(m.abs() <= 3.0 * sd / n.sqrt(), "{m} {sd}");
        for (g, v) in pts.iter().zip(&vals) {
            assert!(v * (g.norm().ln() - f0.alpha) >= 0.0);
        }
    }

    #[test]
    fn half_split_and_extreme_a0() {
        let b0 = Ball::centered(d(), 1.0).unwrap();
        let cfg = EstimatorCfg::default().with_samples(1000);
        // sign of the first y coordinate splits the ball in halves
        let half = ScalarField::custom("sign-y1", None, crate::analysis::Smoothness::Discontinuous, |g: &GroupPoint| g.y[0].signum());
        let f0 = build_f0(&half, &b0, &Weight::unit(), &params(), &cfg).unwrap();
        assert!(f0.a0.abs() <= 0.5);
        // b = 1 on a quarter, 0 elsewhere: median 0, nothing below
        let q = ScalarField::indicator(Ball::new(GroupPoint::identity(d()), 0.5f64.powf(0.2)).unwrap());
        let f0 = build_f0(&q, &b0, &Weight::unit(), &params(), &cfg).unwrap();
        assert_eq!(f0.below, 0);
        assert!(f0.a0 > 0.0 && f0.a0 <= 0.5);
        let c = build_f0(&ScalarField::Constant(1.0), &b0, &Weight::unit(), &params(), &cfg).unwrap();
        assert!(c.degenerate && c.oscillation == 0.0);
    }

    #[test]
    fn f0_check_refuses_constant_b_and_reports_rows() {
        let ke = build_kernel(d(), 1.0).unwrap();
        let b0 = Ball::centered(d(), 1.0).unwrap();
        let cfg = F0CheckCfg {
            targets: 64,
            candidates: 8,
            pairs: 64,
            estimator: EstimatorCfg::default().with_samples(2000),
            ..F0CheckCfg::default()
        };
        let err = f0_bound_check(&ke, &ScalarField::Constant(2.0), &b0, &Weight::unit(), &params(), &[2], &cfg);
        assert!(matches!(err, Err(Error::Precondition(_))));
        let rep = f0_bound_check(&ke, &ScalarField::LogNorm, &b0, &Weight::power(2.0), &params(), &[2, 3], &cfg).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.cap.is_finite() && rep.cap > 0.0);
        assert!(rep.floor > 0.0);
    }

    #[test]
    fn separation_edge_cases() {
        let ke = Arc::new(build_kernel(d(), 1.0).unwrap());
        let cfg = SeparationCfg {
            targets: 32,
            eval_scales: vec![1.0],
            quadrature: QuadratureCfg {
                samples: 100,
                ..QuadratureCfg::default()
            },
            estimator: EstimatorCfg::default().with_samples(1000),
            ..SeparationCfg::default()
        };
        let one = vec![Ball::centered(d(), 1.0).unwrap()];
        let rep = separation_probe(&ke, &ScalarField::LogNorm, &one, &Weight::unit(), &params(), &cfg).unwrap();
        assert!(rep.min_offdiag.is_none() && rep.row_min.is_empty());
        let err = separation_probe(&ke, &ScalarField::Constant(1.0), &one, &Weight::unit(), &params(), &cfg);
        assert!(matches!(err, Err(Error::Precondition(_))));
        let two = vec![Ball::centered(d(), 1.0).unwrap(), Ball::centered(d(), 0.5).unwrap()];
        let rep = separation_probe(&ke, &ScalarField::LogNorm, &two, &Weight::unit(), &params(), &cfg).unwrap();
        assert_eq!(rep.overlaps.len(), 1);
        assert!(rep.min_offdiag.unwrap() > 0.0);
        assert_eq!(rep.distances[0][1], rep.distances[1][0]);
    }
}
