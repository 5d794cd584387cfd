//! Stratified Monte-Carlo integration over balls.
//!
//! A region ball is cut into shells `{lo <= rho(., anchor) < hi}` around an
//! anchor point. Each shell meeting the region is sampled from whichever of
//! the two sets (shell or region) has the smaller volume, with the indicator
//! of the other one applied. Shells that cannot meet the region are skipped
//! using the triangle inequality for `rho`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::heisenberg::{rho, sample_in_annulus, sample_in_ball, sample_unit_sphere, unit_volume, Ball, GroupPoint};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64) -> Self {
        Self { value, std_error }
    }

    pub fn exact(value: f64) -> Self {
        Self::new(value, 0.0)
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(self.value * c, self.std_error * c.abs())
    }

    /// First-order error propagation for `self / other`.
    pub fn ratio(self, other: Estimate) -> Estimate {
        let v = self.value / other.value;
        let rel = ((self.std_error / self.value).powi(2) + (other.std_error / other.value).powi(2)).sqrt();
        Estimate::new(v, if rel.is_finite() { (v * rel).abs() } else { 0.0 })
    }

    /// `self^e` with first-order error propagation.
    pub fn powf(self, e: f64) -> Estimate {
        let v = self.value.powf(e);
        let se = if self.value != 0.0 {
            (v * e * self.std_error / self.value).abs()
        } else {
            0.0
        };
        Estimate::new(v, se)
    }
}

/// Shell radii around an anchor point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub anchor: GroupPoint,
    /// Increasing shell boundaries.
    pub radii: Vec<f64>,
    /// Whether `B(anchor, radii[0])` is integrated; otherwise it is cut out.
    pub include_core: bool,
    /// Whether the region beyond the last boundary is integrated.
    pub include_outer: bool,
    /// Draw shell radii with density proportional to `1/r` instead of
    /// uniformly in volume, for integrands of size about `r^{-Q}`.
    #[serde(default)]
    pub log_radial: bool,
}

impl Stratification {
    /// Boundaries `outer 2^{-depth}, ..., outer / 2, outer`.
    pub fn dyadic_down(anchor: GroupPoint, outer: f64, depth: usize, include_core: bool) -> Self {
        let radii = (0..=depth).rev().map(|k| outer * 0.5f64.powi(k as i32)).collect();
        Self {
            anchor,
            radii,
            include_core,
            include_outer: true,
            log_radial: false,
        }
    }

    /// Boundaries `inner, 2 inner, 4 inner, ...` up to the first one `>= outer`.
    pub fn dyadic_up(anchor: GroupPoint, inner: f64, outer: f64, include_core: bool) -> Self {
        let mut radii = vec![inner];
        while *radii.last().unwrap() < outer {
            let next = radii.last().unwrap() * 2.0;
            radii.push(next);
        }
        Self {
            anchor,
            radii,
            include_core,
            include_outer: true,
            log_radial: false,
        }
    }

    pub fn with_log_radial(self) -> Self {
        Self {
            log_radial: true,
            ..self
        }
    }

    pub fn without_outer(self) -> Self {
        Self {
            include_outer: false,
            ..self
        }
    }

    /// Number of boundaries needed for `dyadic_down` to go from `outer` to
    /// at most `inner`.
    pub fn levels_between(outer: f64, inner: f64) -> usize {
        if inner >= outer {
            0
        } else {
            (outer / inner).log2().ceil() as usize
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Source {
    Region,
    Shell,
}

#[derive(Clone, Copy, Debug)]
struct Stratum {
    lo: f64,
    hi: f64,
    source: Source,
    volume: f64,
}

fn strata(region: &Ball, strat: Option<&Stratification>) -> Vec<Stratum> {
    let dims = region.dims();
    let q = dims.qf();
    let omega = unit_volume(dims);
    let region_vol = region.volume();
    let Some(s) = strat else {
        return vec![Stratum {
            lo: 0.0,
            hi: f64::INFINITY,
            source: Source::Region,
            volume: region_vol,
        }];
    };
    let d = rho(&region.center, &s.anchor);
    let mut bounds = Vec::with_capacity(s.radii.len() + 2);
    if s.include_core {
        bounds.push((0.0, s.radii[0]));
    }
    for w in s.radii.windows(2) {
        bounds.push((w[0], w[1]));
    }
    if s.include_outer {
        bounds.push((*s.radii.last().unwrap(), f64::INFINITY));
    }
    bounds
        .into_iter()
        .filter(|&(lo, hi)| lo < d + region.radius && hi > d - region.radius)
        .map(|(lo, hi)| {
            let shell_vol = omega * (hi.powf(q) - lo.powf(q));
            // near the anchor the region covers a fair share of every shell,
            // and log-radial draws beat uniform ones over the region
            let near = s.log_radial && lo > 0.0 && d < 2.0 * region.radius;
            if shell_vol < region_vol || near {
                Stratum {
                    lo,
                    hi,
                    source: Source::Shell,
                    volume: shell_vol,
                }
            } else {
                Stratum {
                    lo,
                    hi,
                    source: Source::Region,
                    volume: region_vol,
                }
            }
        })
        .collect()
}

/// A sample point, whether it lies in the integration set, and its
/// importance weight relative to the stratum scale.
struct Draw {
    stratum: usize,
    point: GroupPoint,
    inside: bool,
    weight: f64,
}

/// Radius `lo (hi/lo)^u` in the shell and a polar direction; returns the
/// point and the inverse density `Q omega r^Q ln(hi/lo)`.
fn log_radial_point(anchor: &GroupPoint, lo: f64, hi: f64, q: f64, omega: f64, r: &mut rng::Rng) -> (GroupPoint, f64) {
    let dims = anchor.dims();
    let span = (hi / lo).ln();
    loop {
        let theta = sample_unit_sphere(dims, r);
        let u: f64 = rand::Rng::random(r);
        let s = lo * (u * span).exp();
        let p = anchor.compose(&theta.dilated(s));
        let d = rho(&p, anchor);
        if d >= lo && d < hi {
            return (p, q * omega * s.powf(q) * span);
        }
    }
}

fn uses_log_radial(s: &Stratum, strat: Option<&Stratification>) -> bool {
    matches!((s.source, strat), (Source::Shell, Some(st)) if st.log_radial && s.lo > 0.0)
}

/// Factor turning the mean of weighted draws into the stratum integral.
fn stratum_scale(s: &Stratum, strat: Option<&Stratification>) -> f64 {
    if uses_log_radial(s, strat) {
        1.0
    } else {
        s.volume
    }
}

fn draw_points(
    region: &Ball,
    strat: Option<&Stratification>,
    list: &[Stratum],
    per: usize,
    seed: u64,
    key: u64,
) -> Vec<Draw> {
    let q = region.dims().qf();
    let omega = unit_volume(region.dims());
    let mut out = Vec::with_capacity(list.len() * per);
    for (i, s) in list.iter().enumerate() {
        let mut r = rng::stream(seed, rng::combine(key, i as u64));
        for _ in 0..per {
            let (point, inside, weight) = match (s.source, strat) {
                (Source::Shell, Some(st)) if uses_log_radial(s, strat) => {
                    let (p, w) = log_radial_point(&st.anchor, s.lo, s.hi, q, omega, &mut r);
                    let inside = region.contains(&p);
                    (p, inside, w)
                }
                (Source::Shell, Some(st)) => {
                    let p = sample_in_annulus(&st.anchor, s.lo, s.hi, q, &mut r);
                    let inside = region.contains(&p);
                    (p, inside, 1.0)
                }
                (_, Some(st)) => {
                    let p = sample_in_ball(region, &mut r);
                    let d = rho(&p, &st.anchor);
                    (p, d >= s.lo && d < s.hi, 1.0)
                }
                (_, None) => (sample_in_ball(region, &mut r), true, 1.0),
            };
            out.push(Draw {
                stratum: i,
                point,
                inside,
                weight,
            });
        }
    }
    out
}

/// Stratified estimate of `int_region f` for `K` integrands sharing the
/// same sample points. `samples` is split evenly over the active strata.
pub fn stratified_integral<const K: usize, F>(
    region: &Ball,
    strat: Option<&Stratification>,
    samples: usize,
    seed: u64,
    key: u64,
    f: F,
) -> [Estimate; K]
where
    F: Fn(&GroupPoint) -> [f64; K] + Sync,
{
    let list = strata(region, strat);
    if list.is_empty() {
        return [Estimate::default(); K];
    }
    let per = samples.div_ceil(list.len()).max(2);
    let draws = draw_points(region, strat, &list, per, seed, key);
    let values: Vec<[f64; K]> = draws
        .par_iter()
        .with_min_len(32)
        .map(|d| {
            if d.inside {
                let mut v = f(&d.point);
                for x in v.iter_mut() {
                    *x *= d.weight;
                }
                v
            } else {
                [0.0; K]
            }
        })
        .collect();
    let mut out = [Estimate::default(); K];
    for i in 0..list.len() {
        let vals = &values[i * per..(i + 1) * per];
        for k in 0..K {
            let n = per as f64;
            let mean = vals.iter().map(|v| v[k]).sum::<f64>() / n;
            let var = vals.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let c = stratum_scale(&list[i], strat);
            out[k].value += c * mean;
            out[k].std_error += c * c * var / n;
        }
    }
    for e in out.iter_mut() {
        e.std_error = e.std_error.sqrt();
    }
    out
}

/// Sample points and their integration weights (`volume / count` per
/// stratum, zero outside the integration set), for callers that need the
/// points themselves.
pub fn stratified_nodes(
    region: &Ball,
    strat: Option<&Stratification>,
    samples: usize,
    seed: u64,
    key: u64,
) -> Vec<(GroupPoint, f64)> {
    let list = strata(region, strat);
    if list.is_empty() {
        return Vec::new();
    }
    let per = samples.div_ceil(list.len()).max(2);
    draw_points(region, strat, &list, per, seed, key)
        .into_iter()
        .map(|d| {
            let w = if d.inside {
                stratum_scale(&list[d.stratum], strat) * d.weight / per as f64
            } else {
                0.0
            };
            (d.point, w)
        })
        .collect()
}

/// Key derived from the geometry of a ball.
pub fn ball_key(b: &Ball) -> u64 {
    let mut k = rng::key_of_slice(&b.center.coords());
    k = rng::combine(k, b.radius.to_bits());
    k
}
