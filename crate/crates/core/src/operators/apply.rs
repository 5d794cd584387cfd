use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::ScalarField;
use crate::error::{invalid, Error, Result};
use crate::heisenberg::{rho, sample_in_ball, Ball, GroupPoint};
use crate::kernel::{KernelEvaluator, SmoothCutoff};
use crate::quadrature::{stratified_integral, Estimate, Stratification};
use crate::quaternion::Quat;
use crate::rng;

/// Source-side quadrature budget for one target point.
///
/// The support of `f` is cut into dyadic shells around the target, from
/// `eta / 2` outward to the far side of the support; the ball `B(g, eta/2)`
/// is never sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureCfg {
    pub samples: usize,
    pub seed: u64,
    /// When false the standard error is reported as 0.
    pub error_estimate: bool,
}

impl Default for QuadratureCfg {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 1,
            error_estimate: true,
        }
    }
}

impl QuadratureCfg {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(invalid("samples", "at least 2 source samples required"));
        }
        Ok(())
    }
}

/// Quaternion value with the standard error of its modulus (root sum of
/// the component errors).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuatEstimate {
    pub value: Quat,
    pub std_error: f64,
}

impl QuatEstimate {
    pub const ZERO: QuatEstimate = QuatEstimate {
        value: Quat::ZERO,
        std_error: 0.0,
    };

    pub fn modulus(&self) -> Estimate {
        Estimate::new(self.value.norm(), self.std_error)
    }

    fn from_components(c: [Estimate; 4], with_error: bool) -> Self {
        let se = if with_error {
            c.iter().map(|e| e.std_error * e.std_error).sum::<f64>().sqrt()
        } else {
            0.0
        };
        Self {
            value: Quat::new(c[0].value, c[1].value, c[2].value, c[3].value),
            std_error: se,
        }
    }
}

/// Radial profile multiplying the kernel.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Window {
    /// `phi(rho / eta)`.
    Truncated(f64),
    /// `phi(rho / eta1) - phi(rho / eta2)`.
    Gap(f64, f64),
}

impl Window {
    #[inline]
    fn weight(&self, cutoff: &SmoothCutoff, r: f64) -> f64 {
        match *self {
            Window::Truncated(e) => cutoff.phi(r / e),
            Window::Gap(a, b) => cutoff.phi(r / a) - cutoff.phi(r / b),
        }
    }

    fn inner(&self) -> f64 {
        match *self {
            Window::Truncated(e) => 0.5 * e,
            Window::Gap(a, b) => 0.5 * a.min(b),
        }
    }

    fn outer(&self) -> Option<f64> {
        match *self {
            Window::Truncated(_) => None,
            Window::Gap(a, b) => Some(a.max(b)),
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(invalid("eta", format!("must be positive, got {eta}")));
    }
    Ok(())
}

/// Key of the quadrature stream of a target point.
pub fn target_key(g: &GroupPoint) -> u64 {
    rng::key_of_slice(&g.coords())
}

/// `int W(rho(g,u)) K(u^{-1} g) [b(g) - b(u)] f(u) du`, or without the
/// `b` factor. `b` must already be shift-free. `f` must have a support.
#[allow(clippy::too_many_arguments)]
pub(crate) fn kernel_integral(
    ke: &KernelEvaluator,
    window: Window,
    b: Option<&ScalarField>,
    f: &ScalarField,
    supp: &Ball,
    g: &GroupPoint,
    cfg: &QuadratureCfg,
    key: u64,
) -> QuatEstimate {
    if f.is_zero() || matches!(window, Window::Gap(a, b) if a == b) {
        return QuatEstimate::ZERO;
    }
    let d = rho(g, &supp.center);
    let inner = window.inner();
    let reach = d + supp.radius;
    if inner >= reach {
        return QuatEstimate::ZERO;
    }
    let outer = window.outer();
    if let Some(o) = outer {
        if d - supp.radius >= o {
            return QuatEstimate::ZERO;
        }
    }
    let mut strat = Stratification::dyadic_up(g.clone(), inner, outer.unwrap_or(reach).min(reach), false).with_log_radial();
    if outer.is_some() {
        strat = strat.without_outer();
    }
    let cutoff = SmoothCutoff;
    let bg = b.map(|b| b.eval(g));
    let est = stratified_integral::<4, _>(supp, Some(&strat), cfg.samples, cfg.seed, key, |u| {
        let fu = f.eval(u);
        if fu == 0.0 {
            return [0.0; 4];
        }
        let (k, r) = ke.k_pair(g, u);
        let wt = window.weight(&cutoff, r);
        if wt == 0.0 {
            return [0.0; 4];
        }
        let c = match (b, bg) {
            (Some(b), Some(bg)) => wt * fu * (bg - b.eval(u)),
            _ => wt * fu,
        };
        if c == 0.0 {
            return [0.0; 4];
        }
        k.scale(c).to_array()
    });
    QuatEstimate::from_components(est, cfg.error_estimate)
}

fn support_of(f: &ScalarField) -> Result<Ball> {
    if f.is_zero() {
        // any ball will do; the integral short-circuits to 0
        return Ok(Ball {
            center: GroupPoint::new([0.0; 3], &[]),
            radius: 1.0,
        });
    }
    f.support().ok_or(Error::MissingSupport)
}

/// `C_eta f(g)`.
pub fn apply_c_eta(
    ke: &KernelEvaluator,
    f: &ScalarField,
    eta: f64,
    g: &GroupPoint,
    cfg: &QuadratureCfg,
) -> Result<QuatEstimate> {
    check_eta(eta)?;
    cfg.validate()?;
    let supp = support_of(f)?;
    Ok(kernel_integral(ke, Window::Truncated(eta), None, f, &supp, g, cfg, target_key(g)))
}

/// `[b, C_eta] f(g)`, on the same sample stream as `apply_c_eta`.
pub fn apply_commutator(
    ke: &KernelEvaluator,
    b: &ScalarField,
    f: &ScalarField,
    eta: f64,
    g: &GroupPoint,
    cfg: &QuadratureCfg,
) -> Result<QuatEstimate> {
    check_eta(eta)?;
    cfg.validate()?;
    let supp = support_of(f)?;
    let b0 = b.without_shift();
    Ok(kernel_integral(ke, Window::Truncated(eta), Some(&b0), f, &supp, g, cfg, target_key(g)))
}

/// `max |C_eta f(g)|` over the grid, a lower bound for the maximal operator.
pub fn maximal_c_star(
    ke: &KernelEvaluator,
    f: &ScalarField,
    etas: &[f64],
    g: &GroupPoint,
    cfg: &QuadratureCfg,
) -> Result<f64> {
    if etas.is_empty() {
        return Err(invalid("etas", "empty grid"));
    }
    let mut best: f64 = 0.0;
    for &e in etas {
        best = best.max(apply_c_eta(ke, f, e, g, cfg)?.value.norm());
    }
    Ok(best)
}

/// Centered Hardy-Littlewood maximal function over the radius grid.
pub fn hl_maximal(f: &ScalarField, g: &GroupPoint, radii: &[f64], cfg: &QuadratureCfg) -> Result<f64> {
    if radii.is_empty() {
        return Err(invalid("radii", "empty grid"));
    }
    if f.is_zero() {
        return Ok(0.0);
    }
    let supp = f.support();
    let mut best: f64 = 0.0;
    for &r in radii {
        let ball = Ball::new(g.clone(), r)?;
        let key = rng::combine(target_key(g), r.to_bits());
        let avg = match &supp {
            Some(s) if rho(&s.center, g) >= s.radius + r => 0.0,
            Some(s) if s.volume() < ball.volume() => {
                let [e] = stratified_integral(s, None, cfg.samples, cfg.seed, key, |u| {
                    [if rho(u, g) < r { f.eval(u).abs() } else { 0.0 }]
                });
                e.value / ball.volume()
            }
            _ => {
                let mut r = rng::stream(cfg.seed, key);
                let n = cfg.samples.max(1);
                (0..n).map(|_| f.eval(&sample_in_ball(&ball, &mut r)).abs()).sum::<f64>() / n as f64
            }
        };
        best = best.max(avg);
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapRow {
    pub target: Vec<f64>,
    pub gap: Estimate,
    pub maximal: f64,
    /// `eta2 sup|grad_H b| Mf(g)`.
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub eta1: f64,
    pub eta2: f64,
    pub gradient_bound: f64,
    pub rows: Vec<GapRow>,
    /// Max ratio of gap to bound over the targets.
    pub fitted_c: f64,
}

/// `|[b,C_eta1]f - [b,C_eta2]f|` against `eta2 sup|grad_H b| Mf` per target.
#[allow(clippy::too_many_arguments)]
pub fn truncation_gap(
    ke: &KernelEvaluator,
    b: &ScalarField,
    f: &ScalarField,
    eta1: f64,
    eta2: f64,
    targets: &[GroupPoint],
    radii: &[f64],
    cfg: &QuadratureCfg,
) -> Result<GapReport> {
    check_eta(eta1)?;
    check_eta(eta2)?;
    cfg.validate()?;
    if eta1 > eta2 {
        return Err(invalid("eta1", format!("must not exceed eta2 ({eta1} > {eta2})")));
    }
    let grad = b
        .gradient_bound()
        .ok_or_else(|| Error::Precondition(format!("no horizontal gradient bound for {}", b.describe())))?;
    let supp = support_of(f)?;
    let b0 = b.without_shift();
    let rows = targets
        .par_iter()
        .map(|g| {
            let gap = kernel_integral(ke, Window::Gap(eta1, eta2), Some(&b0), f, &supp, g, cfg, target_key(g)).modulus();
            let maximal = hl_maximal(f, g, radii, cfg)?;
            let bound = eta2 * grad * maximal;
            let ratio = if gap.value == 0.0 { 0.0 } else { gap.value / bound };
            Ok(GapRow {
                target: g.coords(),
                gap,
                maximal,
                bound,
                ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fitted_c = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(GapReport {
        eta1,
        eta2,
        gradient_bound: grad,
        rows,
        fitted_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heisenberg::{log_grid, sample_unit_sphere, GroupDims};
    use crate::kernel::build_kernel;

    fn d() -> GroupDims {
        GroupDims::new(2).unwrap()
    }

    fn unit_indicator() -> ScalarField {
        ScalarField::indicator(Ball::centered(d(), 1.0).unwrap())
    }

    fn point(t0: f64, y0: f64) -> GroupPoint {
        GroupPoint::new([t0, 0.0, 0.0], &[y0, 0.0, 0.0, 0.0])
    }

    fn cfg() -> QuadratureCfg {
        QuadratureCfg {
            samples: 1500,
            ..QuadratureCfg::default()
        }
    }

    #[test]
    fn large_eta_and_zero_field_give_exact_zero() {
        let ke = build_kernel(d(), 1.0).unwrap();
        let g = point(0.0, 2.0);
        // rho(g, u) <= 3 for u in the unit ball, so eta = 10 kills everything
        let v = apply_c_eta(&ke, &unit_indicator(), 10.0, &g, &cfg()).unwrap();
        assert_eq!(v, QuatEstimate::ZERO);
        let v = apply_c_eta(&ke, &ScalarField::Constant(0.0), 0.1, &g, &cfg()).unwrap();
        assert_eq!(v, QuatEstimate::ZERO);
        assert!(apply_c_eta(&ke, &ScalarField::LogNorm, 0.1, &g, &cfg()).is_err());
        assert!(apply_c_eta(&ke, &unit_indicator(), 0.0, &g, &cfg()).is_err());
    }

    #[test]
    fn linear_in_f_and_shift_invariant_in_b() {
        let ke = build_kernel(d(), 1.0).unwrap();
        let f = unit_indicator();
        let g = point(0.3, 0.4);
        let a = apply_c_eta(&ke, &f, 0.1, &g, &cfg()).unwrap();
        let b2 = apply_c_eta(&ke, &f.scaled(2.0), 0.1, &g, &cfg()).unwrap();
        assert_eq!(b2.value, a.value.scale(2.0));
        let b = ScalarField::bump(point(0.1, 0.2), 2.0);
        let c1 = apply_commutator(&ke, &b, &f, 0.1, &g, &cfg()).unwrap();
        let c2 = apply_commutator(&ke, &b.shifted(3.5), &f, 0.1, &g, &cfg()).unwrap();
        assert_eq!(c1, c2);
        let c0 = apply_commutator(&ke, &ScalarField::Constant(4.0), &f, 0.1, &g, &cfg()).unwrap();
        assert_eq!(c0.value, Quat::ZERO);
    }

    #[test]
    fn commutator_with_known_value_far_away() {
        // for g far from supp f and b = bump around supp f with b(g) = 0,
        // [b,C]f(g) = -int b(u) K(u^{-1} g) f(u) du; compare with a plain
        // independent Monte-Carlo sum over the unit ball
        let ke = build_kernel(d(), 1.0).unwrap();
        let f = unit_indicator();
        let b = ScalarField::bump(GroupPoint::identity(d()), 2.0);
        let g = point(0.0, 6.0);
        let c = apply_commutator(&ke, &b, &f, 0.1, &g, &QuadratureCfg { samples: 20_000, ..cfg() }).unwrap();
        let ball = Ball::centered(d(), 1.0).unwrap();
        let pts = crate::heisenberg::sample_ball(&ball, 200_000, 77).unwrap();
        let mut acc = [0.0; 4];
        for u in &pts {
            let (k, _) = ke.k_pair(&g, u);
            let v = k.scale(-b.eval(u)).to_array();
            for i in 0..4 {
                acc[i] += v[i];
            }
        }
        let oracle = Quat::from_array(acc).scale(ball.volume() / pts.len() as f64);
        let diff = (c.value - oracle).norm();
        assert!(diff < 4.0 * c.std_error + 0.02 * oracle.norm(), "{c:?} vs {oracle:?}");
    }

    #[test]
    fn commutator_decays_like_the_kernel() {
        let ke = build_kernel(d(), 1.0).unwrap();
        let f = unit_indicator();
        let b = ScalarField::bump(GroupPoint::identity(d()), 1.5);
        let mut r = rng::stream(5, 0);
        let mut scaled = Vec::new();
        for &s in &[10.0, 20.0, 50.0, 100.0] {
            let g = sample_unit_sphere(d(), &mut r).dilated(s);
            let v = apply_commutator(&ke, &b, &f, 0.1, &g, &cfg()).unwrap();
            scaled.push(v.value.norm() * s.powi(10));
        }
        let hi = scaled.iter().cloned().fold(0.0, f64::max);
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi.is_finite() && hi / lo < 20.0, "{scaled:?}");
    }

    #[test]
    fn standard_errors_cover_reseeded_runs() {
        let ke = build_kernel(d(), 1.0).unwrap();
        let f = unit_indicator();
        let b = ScalarField::bump(GroupPoint::identity(d()), 2.0);
        let g = point(0.2, 0.9);
        let runs: Vec<QuatEstimate> = (0..100)
            .map(|s| apply_commutator(&ke, &b, &f, 0.2, &g, &QuadratureCfg { samples: 400, seed: s, ..cfg() }).unwrap())
            .collect();
        let mean = runs.iter().map(|e| e.value.x1).sum::<f64>() / runs.len() as f64;
        let inside = runs
            .iter()
            .filter(|e| (e.value.x1 - mean).abs() <= 3.0 * e.std_error)
            .count();
        assert!(inside >= 95, "{inside}/100");
    }

    #[test]
    fn maximal_operators() {
        let ke = build_kernel(d(), 1.0).unwrap();
        let f = unit_indicator();
        let g = point(0.0, 1.5);
        let one = maximal_c_star(&ke, &f, &[0.1], &g, &cfg()).unwrap();
        assert_eq!(one, apply_c_eta(&ke, &f, 0.1, &g, &cfg()).unwrap().value.norm());
        let more = maximal_c_star(&ke, &f, &[0.1, 0.05, 0.2], &g, &cfg()).unwrap();
        assert!(more >= one);
        assert_eq!(maximal_c_star(&ke, &ScalarField::Constant(0.0), &[0.1], &g, &cfg()).unwrap(), 0.0);

        let radii = log_grid(0.01, 100.0, 20);
        assert_eq!(hl_maximal(&ScalarField::Constant(-3.0), &g, &radii, &cfg()).unwrap(), 3.0);
        let at0 = hl_maximal(&f, &GroupPoint::identity(d()), &radii, &cfg()).unwrap();
        assert_eq!(at0, 1.0);
        // far away: |B(0,1)| / |B(g, rho + 1)| is a lower bound
        let mut prev = 1.0;
        for s in [10.0, 20.0, 40.0] {
            let g = point(0.0, s);
            let grid = log_grid(1.0, 100.0, 40);
            let m = hl_maximal(&f, &g, &grid, &cfg()).unwrap();
            // B(g, r) covers B(0,1) once r >= s + 1
            let r = grid.iter().cloned().filter(|&r| r >= s + 1.0).fold(f64::INFINITY, f64::min);
            let oracle = r.powi(-10);
            assert!(m > 0.0 && m < 1.0 && m >= 0.9 * oracle, "{m} {oracle}");
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn truncation_gap_edge_cases_and_stability() {
        let ke = build_kernel(d(), 1.0).unwrap();
        let f = unit_indicator();
        let b = ScalarField::bump(GroupPoint::identity(d()), 2.0);
        let targets = vec![point(0.0, 0.5), point(0.0, 1.0), point(0.5, 0.6)];
        let radii = log_grid(0.01, 10.0, 12);
        let same = truncation_gap(&ke, &b, &f, 0.1, 0.1, &targets, &radii, &cfg()).unwrap();
        assert!(same.rows.iter().all(|r| r.gap.value == 0.0));
        let c = truncation_gap(&ke, &ScalarField::Constant(1.0), &f, 0.05, 0.1, &targets, &radii, &cfg()).unwrap();
        assert_eq!(c.fitted_c, 0.0);
        assert!(truncation_gap(&ke, &ScalarField::LogNorm, &f, 0.05, 0.1, &targets, &radii, &cfg()).is_err());
        let cs: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&e| truncation_gap(&ke, &b, &f, e / 2.0, e, &targets, &radii, &cfg()).unwrap().fitted_c)
            .collect();
        let hi = cs.iter().cloned().fold(0.0, f64::max);
        let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lo > 0.0 && hi / lo < 2.0, "{cs:?}");
    }
}
