use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::heisenberg::{rho, sample_in_ball, Ball, BallFamily, GroupPoint};
use crate::quadrature::{ball_key, stratified_integral, Estimate, Stratification};
use crate::rng;

use super::field::{ScalarField, Weight};

/// Sampling budget shared by the ball estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorCfg {
    /// Samples per ball.
    pub samples: usize,
    /// Dyadic shells resolved around a singular point of the weight; the
    /// innermost ball of relative radius `2^{-depth}` is cut out.
    pub depth: usize,
    pub seed: u64,
}

impl Default for EstimatorCfg {
    fn default() -> Self {
        Self {
            samples: 4000,
            depth: 12,
            seed: 1,
        }
    }
}

impl EstimatorCfg {
    pub fn with_samples(self, samples: usize) -> Self {
        Self { samples, ..self }
    }

    pub fn with_depth(self, depth: usize) -> Self {
        Self { depth, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorreyParams {
    pub p: f64,
    pub kappa: f64,
}

impl MorreyParams {
    pub fn new(p: f64, kappa: f64) -> Result<Self> {
        let m = Self { p, kappa };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(invalid("p", format!("p>1 required, got {}", self.p)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(invalid("kappa", format!("κ∈(0,1) required, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Max of per-ball estimates over a family, with the arg-max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupEstimate {
    pub value: f64,
    pub std_error: f64,
    pub argmax: usize,
    pub per_ball: Vec<Estimate>,
}

impl SupEstimate {
    pub fn from_per_ball(per_ball: Vec<Estimate>) -> Result<Self> {
        if per_ball.is_empty() {
            return Err(Error::EmptyFamily);
        }
        let mut argmax = 0;
        for (i, e) in per_ball.iter().enumerate() {
            if e.value > per_ball[argmax].value || per_ball[argmax].value.is_nan() {
                argmax = i;
            }
        }
        Ok(Self {
            value: per_ball[argmax].value,
            std_error: per_ball[argmax].std_error,
            argmax,
            per_ball,
        })
    }
}

/// Uniform samples of `b`, keyed by the ball geometry (the same points a
/// `BallFamily` with this seed caches).
pub fn ball_points(b: &Ball, count: usize, seed: u64) -> Vec<GroupPoint> {
    let mut r = rng::stream(seed, ball_key(b));
    (0..count).map(|_| sample_in_ball(b, &mut r)).collect()
}

fn family_points(family: &BallFamily, i: usize, cfg: &EstimatorCfg) -> Vec<GroupPoint> {
    if family.samples_per_ball == cfg.samples && family.rng_seed == cfg.seed {
        family.points(i).to_vec()
    } else {
        ball_points(&family.balls[i], cfg.samples, cfg.seed)
    }
}

/// Shells around `anchor` when it is close to the ball.
pub fn ball_strat(b: &Ball, anchor: Option<GroupPoint>, depth: usize, include_core: bool) -> Option<Stratification> {
    let a = anchor?;
    let d = rho(&b.center, &a);
    if d >= 2.0 * b.radius {
        return None;
    }
    Some(Stratification::dyadic_down(a, d + b.radius, depth, include_core))
}

fn weight_strat(w: &Weight, b: &Ball, cfg: &EstimatorCfg) -> Option<Stratification> {
    ball_strat(b, w.singular_point(b.dims()), cfg.depth, false)
}

/// `w(B)` with its standard error.
pub fn weighted_measure(w: &Weight, b: &Ball, cfg: &EstimatorCfg) -> Estimate {
    if w.is_constant() {
        return Estimate::exact(w.scale * b.volume());
    }
    let st = weight_strat(w, b, cfg);
    let [e] = stratified_integral(b, st.as_ref(), cfg.samples, cfg.seed, ball_key(b), |g| [w.eval(g)]);
    e
}

/// Lower sample median and the counts strictly above and below it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianResult {
    pub alpha: f64,
    pub above: usize,
    pub below: usize,
    pub count: usize,
}

impl MedianResult {
    /// At most half the samples strictly above and at most half strictly below.
    pub fn conditions_hold(&self) -> bool {
        2 * self.above <= self.count && 2 * self.below <= self.count
    }
}

pub fn median_of(values: &[f64]) -> MedianResult {
    let mut s: Vec<f64> = values.to_vec();
    s.sort_by(f64::total_cmp);
    let alpha = s[(s.len() - 1) / 2];
    MedianResult {
        alpha,
        above: values.iter().filter(|&&v| v > alpha).count(),
        below: values.iter().filter(|&&v| v < alpha).count(),
        count: values.len(),
    }
}

pub fn median(f: &ScalarField, b: &Ball, cfg: &EstimatorCfg) -> MedianResult {
    let vals: Vec<f64> = ball_points(b, cfg.samples, cfg.seed).iter().map(|g| f.eval(g)).collect();
    median_of(&vals)
}

fn oscillation_of(vals: &[f64], p: f64) -> Estimate {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let dev: Vec<f64> = vals.iter().map(|v| (v - mean).abs().powf(p)).collect();
    let m = dev.iter().sum::<f64>() / n;
    let var = dev.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    if p == 1.0 {
        Estimate::new(m, se)
    } else {
        Estimate::new(m, se).powf(1.0 / p)
    }
}

/// `M(f; B)`, mean absolute deviation from the sampled mean.
pub fn mean_oscillation(f: &ScalarField, b: &Ball, cfg: &EstimatorCfg) -> Estimate {
    let vals: Vec<f64> = ball_points(b, cfg.samples, cfg.seed).iter().map(|g| f.eval(g)).collect();
    oscillation_of(&vals, 1.0)
}

/// `sup_B M(b; B)` over the family; a lower bound for the BMO norm.
pub fn bmo_norm(b: &ScalarField, family: &BallFamily, cfg: &EstimatorCfg) -> Result<SupEstimate> {
    bmo_p_norm(b, family, 1.0, cfg)
}

pub fn bmo_p_norm(b: &ScalarField, family: &BallFamily, p: f64, cfg: &EstimatorCfg) -> Result<SupEstimate> {
    if !(p >= 1.0) {
        return Err(invalid("p", format!("p>=1 required, got {p}")));
    }
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let per: Vec<Estimate> = (0..family.len())
        .into_par_iter()
        .map(|i| {
            let vals: Vec<f64> = family_points(family, i, cfg).iter().map(|g| b.eval(g)).collect();
            oscillation_of(&vals, p)
        })
        .collect();
    SupEstimate::from_per_ball(per)
}

/// `(avg_B w)(avg_B w^{-1/(p-1)})^{p-1}` for one ball, on shared samples.
pub fn ap_ball_value(w: &Weight, p: f64, b: &Ball, cfg: &EstimatorCfg) -> Estimate {
    if w.is_constant() {
        return Estimate::exact(1.0);
    }
    let st = weight_strat(w, b, cfg);
    let e = -1.0 / (p - 1.0);
    let [i1, i2, vol] = stratified_integral(b, st.as_ref(), cfg.samples, cfg.seed, ball_key(b), |g| {
        let v = w.eval(g);
        [v, v.powf(e), 1.0]
    });
    let a1 = i1.value / vol.value;
    let a2 = i2.value / vol.value;
    let value = a1 * a2.powf(p - 1.0);
    let rel = ((i1.std_error / i1.value).powi(2) + ((p - 1.0) * i2.std_error / i2.value).powi(2)).sqrt();
    Estimate::new(value, value * rel)
}

pub fn ap_characteristic(w: &Weight, p: f64, family: &BallFamily, cfg: &EstimatorCfg) -> Result<SupEstimate> {
    if !(p > 1.0) {
        return Err(invalid("p", format!("p>1 required (use a1_characteristic for p=1), got {p}")));
    }
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let per: Vec<Estimate> = family
        .balls
        .par_iter()
        .map(|b| ap_ball_value(w, p, b, cfg))
        .collect();
    SupEstimate::from_per_ball(per)
}

/// `sup_B avg_B w / (sampled ess inf_B w)`.
pub fn a1_characteristic(w: &Weight, family: &BallFamily, cfg: &EstimatorCfg) -> Result<SupEstimate> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let per: Vec<Estimate> = family
        .balls
        .par_iter()
        .map(|b| {
            if w.is_constant() {
                return Estimate::exact(1.0);
            }
            let st = weight_strat(w, b, cfg);
            let nodes = crate::quadrature::stratified_nodes(b, st.as_ref(), cfg.samples, cfg.seed, ball_key(b));
            let (mut iw, mut vol, mut inf) = (0.0, 0.0, f64::INFINITY);
            for (g, wt) in &nodes {
                if *wt > 0.0 {
                    let v = w.eval(g);
                    iw += wt * v;
                    vol += wt;
                    inf = inf.min(v);
                }
            }
            Estimate::new(iw / vol / inf, 0.0)
        })
        .collect();
    SupEstimate::from_per_ball(per)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DoublingRow {
    pub lambda: f64,
    pub ratio: Estimate,
}

/// `w(lambda B) / (lambda^{Qp} w(B))` per `lambda`.
pub fn doubling_check(w: &Weight, p: f64, b: &Ball, lambdas: &[f64], cfg: &EstimatorCfg) -> Result<Vec<DoublingRow>> {
    if lambdas.iter().any(|&l| !(l >= 1.0)) {
        return Err(invalid("lambdas", "every lambda must be >= 1"));
    }
    let q = b.dims().qf();
    let base = weighted_measure(w, b, cfg);
    Ok(lambdas
        .iter()
        .map(|&l| {
            let big = weighted_measure(w, &b.scaled(l), cfg);
            DoublingRow {
                lambda: l,
                ratio: big.ratio(base).scale(l.powf(-q * p)),
            }
        })
        .collect())
}

/// Fit of `w(E)/w(B) <= C (|E|/|B|)^sigma` over sub-balls `E` of `B`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsetFit {
    /// Largest `sigma` valid with `C = 1` over the probed subsets.
    pub sigma: f64,
    /// Least-squares slope of `log(w(E)/w(B))` against `log(|E|/|B|)`.
    pub slope: f64,
    pub rows: Vec<(f64, f64)>,
}

pub fn subset_exponent_fit(w: &Weight, b: &Ball, probes: usize, cfg: &EstimatorCfg) -> SubsetFit {
    let wb = weighted_measure(w, b, cfg).value;
    let mut r = rng::stream(cfg.seed, rng::combine(ball_key(b), 0x516));
    let mut rows = Vec::with_capacity(probes);
    for k in 0..probes {
        let frac = 0.5 * 0.5f64.powf(k as f64 % 6.0);
        let rad = b.radius * frac;
        // center chosen so that the sub-ball stays inside B
        let c = loop {
            let c = sample_in_ball(&b.scaled(1.0 - frac), &mut r);
            if rho(&c, &b.center) + rad < b.radius {
                break c;
            }
        };
        let e = Ball::new(c, rad).expect("positive radius");
        let x = (rad / b.radius).powf(b.dims().qf());
        rows.push((x, weighted_measure(w, &e, cfg).value / wb));
    }
    let sigma = rows.iter().map(|(x, y)| y.ln() / x.ln()).fold(f64::INFINITY, f64::min);
    let n = rows.len() as f64;
    let (sx, sy) = rows.iter().fold((0.0, 0.0), |a, (x, y)| (a.0 + x.ln(), a.1 + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in &rows {
        sxy += (x.ln() - mx) * (y.ln() - my);
        sxx += (x.ln() - mx).powi(2);
    }
    SubsetFit {
        sigma,
        slope: sxy / sxx,
        rows,
    }
}

/// Morrey ball quantity `([w(B)]^{-kappa} int_B |h|^p w)^{1/p}` on shared samples.
pub fn morrey_ball_value<H>(
    h: &H,
    w: &Weight,
    params: &MorreyParams,
    b: &Ball,
    strat: Option<&Stratification>,
    samples: usize,
    seed: u64,
) -> Estimate
where
    H: Fn(&GroupPoint) -> f64 + Sync,
{
    let p = params.p;
    morrey_power_ball_value(&|g: &GroupPoint| h(g).abs().powf(p), w, params, b, strat, samples, seed)
}

/// As `morrey_ball_value`, given a pointwise estimate of `|h|^p` instead
/// of `h`. A nonpositive integral gives 0.
pub fn morrey_power_ball_value<H>(
    hp: &H,
    w: &Weight,
    params: &MorreyParams,
    b: &Ball,
    strat: Option<&Stratification>,
    samples: usize,
    seed: u64,
) -> Estimate
where
    H: Fn(&GroupPoint) -> f64 + Sync,
{
    let [num, den] = stratified_integral(b, strat, samples, seed, ball_key(b), |g| {
        let wv = w.eval(g);
        let v = hp(g);
        [if v == 0.0 { 0.0 } else { v * wv }, wv]
    });
    let den = if w.is_constant() {
        Estimate::exact(w.scale * b.volume())
    } else {
        den
    };
    morrey_from_parts(num, den, params)
}

/// `(num / den^kappa)^{1/p}`; a nonpositive `num` gives 0.
fn morrey_from_parts(num: Estimate, den: Estimate, params: &MorreyParams) -> Estimate {
    if !(num.value > 0.0) {
        return Estimate::exact(0.0);
    }
    let v = num.value / den.value.powf(params.kappa);
    let rel = ((num.std_error / num.value).powi(2) + (params.kappa * den.std_error / den.value).powi(2)).sqrt();
    Estimate::new(v, v * rel).powf(1.0 / params.p)
}

/// Anchor and shells for integrating a field against a weight over `b`.
pub fn field_strat(f: &ScalarField, w: &Weight, b: &Ball, cfg: &EstimatorCfg) -> Option<Stratification> {
    let dims = b.dims();
    if let Some(s) = w.singular_point(dims) {
        return ball_strat(b, Some(s), cfg.depth, false);
    }
    let supp = f.support()?;
    let d = rho(&b.center, &supp.center);
    let outer = d + b.radius;
    if outer <= 2.0 * supp.radius {
        return None;
    }
    let depth = Stratification::levels_between(outer, 0.5 * supp.radius);
    Some(Stratification::dyadic_down(supp.center.clone(), outer, depth, true))
}

pub fn morrey_norm(
    f: &ScalarField,
    w: &Weight,
    params: &MorreyParams,
    family: &BallFamily,
    cfg: &EstimatorCfg,
) -> Result<SupEstimate> {
    params.validate()?;
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let per: Vec<Estimate> = family
        .balls
        .par_iter()
        .map(|b| {
            if f.is_zero() {
                return Estimate::exact(0.0);
            }
            if let Some(s) = f.support() {
                if rho(&s.center, &b.center) >= s.radius + b.radius {
                    return Estimate::exact(0.0);
                }
            }
            // a support smaller than the ball is where the samples should go
            match f.support() {
                Some(s) if s.volume() < b.volume() => {
                    let st = field_strat(f, w, &s, cfg);
                    let p = params.p;
                    let [num] = stratified_integral(&s, st.as_ref(), cfg.samples, cfg.seed, ball_key(b), |g| {
                        if b.contains(g) {
                            [f.eval(g).abs().powf(p) * w.eval(g)]
                        } else {
                            [0.0]
                        }
                    });
                    morrey_from_parts(num, weighted_measure(w, b, cfg), params)
                }
                _ => {
                    let st = field_strat(f, w, b, cfg);
                    morrey_ball_value(&|g: &GroupPoint| f.eval(g), w, params, b, st.as_ref(), cfg.samples, cfg.seed)
                }
            }
        })
        .collect();
    SupEstimate::from_per_ball(per)
}

/// Per-ball statistics of a field against a weight.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallStats {
    pub radius: f64,
    pub center: Vec<f64>,
    pub average: Estimate,
    pub weighted_measure: Estimate,
    pub weighted_mean: Estimate,
    pub mean_oscillation: Estimate,
    pub median: f64,
    pub samples: usize,
}

pub fn ball_stats(f: &ScalarField, w: &Weight, b: &Ball, cfg: &EstimatorCfg) -> BallStats {
    let vals: Vec<f64> = ball_points(b, cfg.samples, cfg.seed).iter().map(|g| f.eval(g)).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let st = weight_strat(w, b, cfg);
    let [fw, wm] = stratified_integral(b, st.as_ref(), cfg.samples, cfg.seed, ball_key(b), |g| {
        let wv = w.eval(g);
        [f.eval(g) * wv, wv]
    });
    let wm = if w.is_constant() {
        Estimate::exact(w.scale * b.volume())
    } else {
        wm
    };
    BallStats {
        radius: b.radius,
        center: b.center.coords(),
        average: Estimate::new(mean, (var / n).sqrt()),
        weighted_measure: wm,
        weighted_mean: Estimate::new(fw.value / wm.value, fw.std_error / wm.value),
        mean_oscillation: oscillation_of(&vals, 1.0),
        median: median_of(&vals).alpha,
        samples: vals.len(),
    }
}
