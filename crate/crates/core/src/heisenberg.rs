//! The quaternionic Heisenberg group `H^{n-1} = Im H x H^{n-1}`.
//!
//! Points are `(t, y)` with `t` in R^3 and `y` in R^{4(n-1)}. The product is
//! `(t, y)(t', y') = (t + t' + 2 Im<y, y'>, y + y')`, the homogeneous norm is
//! `(|y|^4 + |t|^2)^{1/4}` and balls are taken in the quasi-distance
//! `rho(h, g) = ||g^{-1} h||`. Haar measure is Lebesgue measure on R^{4n-1}.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{invalid, Error, Result};
use crate::quaternion::{Quat, StructureMatrices};
use crate::rng::{self, Rng};

/// Upper bound for the quasi-triangle constant of `rho`.
///
/// The gauge `(|y|^4 + |t|^2)^{1/4}` with this group law is a Cygan-type
/// norm and satisfies the triangle inequality with constant one; the
/// `quasi_triangle_constant` estimator checks this empirically.
pub const C_RHO: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupDims {
    n: usize,
}

impl GroupDims {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("n", format!("n >= 2 required, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Homogeneous dimension `Q = 4n + 2`.
    pub fn q(&self) -> usize {
        4 * self.n + 2
    }

    pub fn qf(&self) -> f64 {
        self.q() as f64
    }

    /// Number of real `y` coordinates, `4(n-1)`.
    pub fn y_dim(&self) -> usize {
        4 * (self.n - 1)
    }

    /// Ambient Euclidean dimension `4n - 1`.
    pub fn ambient(&self) -> usize {
        3 + self.y_dim()
    }
}

pub type YCoords = SmallVec<[f64; 8]>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    pub t: [f64; 3],
    pub y: YCoords,
}

impl GroupPoint {
    pub fn new(t: [f64; 3], y: &[f64]) -> Self {
        Self {
            t,
            y: YCoords::from_slice(y),
        }
    }

    pub fn identity(dims: GroupDims) -> Self {
        Self {
            t: [0.0; 3],
            y: smallvec::smallvec![0.0; dims.y_dim()],
        }
    }

    /// Point from the flat coordinate list `(t1, t2, t3, y1, ..., y_{4n-4})`.
    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        if coords.len() < 7 || (coords.len() - 3) % 4 != 0 {
            return Err(invalid(
                "coords",
                format!("expected 3 + 4(n-1) coordinates, got {}", coords.len()),
            ));
        }
        Ok(Self::new([coords[0], coords[1], coords[2]], &coords[3..]))
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut v = self.t.to_vec();
        v.extend_from_slice(&self.y);
        v
    }

    pub fn dims(&self) -> GroupDims {
        GroupDims {
            n: self.y.len() / 4 + 1,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.t.iter().chain(self.y.iter()).all(|&v| v == 0.0)
    }

    /// `y` viewed as `n-1` quaternions.
    pub fn y_quaternions(&self) -> Vec<Quat> {
        self.y
            .chunks_exact(4)
            .map(|c| Quat::new(c[0], c[1], c[2], c[3]))
            .collect()
    }

    pub fn y_norm_sqr(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum()
    }

    /// Group product without the dimension check.
    pub fn compose(&self, other: &GroupPoint) -> GroupPoint {
        debug_assert_eq!(self.y.len(), other.y.len());
        let im = im_sum(&self.y, &other.y);
        GroupPoint {
            t: [
                self.t[0] + other.t[0] + 2.0 * im[0],
                self.t[1] + other.t[1] + 2.0 * im[1],
                self.t[2] + other.t[2] + 2.0 * im[2],
            ],
            y: self.y.iter().zip(&other.y).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn inverse(&self) -> GroupPoint {
        GroupPoint {
            t: [-self.t[0], -self.t[1], -self.t[2]],
            y: self.y.iter().map(|v| -v).collect(),
        }
    }

    /// `delta_r(t, y) = (r^2 t, r y)` without the sign check.
    pub fn dilated(&self, r: f64) -> GroupPoint {
        let r2 = r * r;
        GroupPoint {
            t: [self.t[0] * r2, self.t[1] * r2, self.t[2] * r2],
            y: self.y.iter().map(|v| v * r).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        let y2 = self.y_norm_sqr();
        let t2 = self.t[0] * self.t[0] + self.t[1] * self.t[1] + self.t[2] * self.t[2];
        (y2 * y2 + t2).sqrt().sqrt()
    }
}

/// `Im sum_l conj(y_l) y'_l` for flat real coordinates.
#[inline]
pub(crate) fn im_sum(y: &[f64], yp: &[f64]) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for (a, b) in y.chunks_exact(4).zip(yp.chunks_exact(4)) {
        let (x1, x2, x3, x4) = (a[0], a[1], a[2], a[3]);
        let (p1, p2, p3, p4) = (b[0], b[1], b[2], b[3]);
        acc[0] += x1 * p2 - x2 * p1 - x3 * p4 + x4 * p3;
        acc[1] += x1 * p3 + x2 * p4 - x3 * p1 - x4 * p2;
        acc[2] += x1 * p4 - x2 * p3 + x3 * p2 - x4 * p1;
    }
    acc
}

fn check_same(g: &GroupPoint, h: &GroupPoint) -> Result<()> {
    if g.y.len() != h.y.len() {
        return Err(Error::DimensionMismatch {
            expected: 3 + g.y.len(),
            got: 3 + h.y.len(),
        });
    }
    Ok(())
}

pub fn gmul(g: &GroupPoint, h: &GroupPoint) -> Result<GroupPoint> {
    check_same(g, h)?;
    Ok(g.compose(h))
}

/// The real-variable form of the product through the structure matrices.
pub fn gmul_structural(g: &GroupPoint, h: &GroupPoint) -> Result<GroupPoint> {
    check_same(g, h)?;
    let mut t = [g.t[0] + h.t[0], g.t[1] + h.t[1], g.t[2] + h.t[2]];
    for (a, b) in g.y.chunks_exact(4).zip(h.y.chunks_exact(4)) {
        let im = StructureMatrices::im_pair(&[a[0], a[1], a[2], a[3]], &[b[0], b[1], b[2], b[3]]);
        for alpha in 0..3 {
            t[alpha] += 2.0 * im[alpha];
        }
    }
    Ok(GroupPoint {
        t,
        y: g.y.iter().zip(&h.y).map(|(a, b)| a + b).collect(),
    })
}

pub fn ginv(g: &GroupPoint) -> GroupPoint {
    g.inverse()
}

pub fn dilate(r: f64, g: &GroupPoint) -> Result<GroupPoint> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid("r", format!("dilation factor must be positive, got {r}")));
    }
    Ok(g.dilated(r))
}

pub fn hnorm(g: &GroupPoint) -> f64 {
    g.norm()
}

/// `rho(h, g) = ||g^{-1} h||`, computed without materializing `g^{-1} h`.
#[inline]
pub fn rho(h: &GroupPoint, g: &GroupPoint) -> f64 {
    debug_assert_eq!(h.y.len(), g.y.len());
    // g^{-1} h = (t_h - t_g - 2 Im<y_g, y_h>, y_h - y_g)
    let im = im_sum(&g.y, &h.y);
    let mut t2 = 0.0;
    for a in 0..3 {
        let d = h.t[a] - g.t[a] - 2.0 * im[a];
        t2 += d * d;
    }
    let y2: f64 = h.y.iter().zip(&g.y).map(|(a, b)| (a - b) * (a - b)).sum();
    (y2 * y2 + t2).sqrt().sqrt()
}

/// A `rho`-ball `{h : rho(h, center) < radius}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: GroupPoint,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: GroupPoint, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid("radius", format!("must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(dims: GroupDims, radius: f64) -> Result<Self> {
        Self::new(GroupPoint::identity(dims), radius)
    }

    pub fn contains(&self, p: &GroupPoint) -> bool {
        rho(p, &self.center) < self.radius
    }

    /// `lambda B`: same center, radius scaled.
    pub fn scaled(&self, lambda: f64) -> Ball {
        Ball {
            center: self.center.clone(),
            radius: self.radius * lambda,
        }
    }

    pub fn dims(&self) -> GroupDims {
        self.center.dims()
    }

    /// `omega_Q r^Q` with the cached unit-ball volume.
    pub fn volume(&self) -> f64 {
        let dims = self.dims();
        unit_volume(dims) * self.radius.powi(dims.q() as i32)
    }
}

/// Monte-Carlo estimate of the unit-ball volume.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub std_error: f64,
    pub acceptance: f64,
    pub box_volume: f64,
    pub samples: u64,
}

/// Volume of the bounding box `{|t_j| <= 1, |y_i| <= 1}` of the unit ball.
pub fn bounding_box_volume(dims: GroupDims) -> f64 {
    2f64.powi(dims.ambient() as i32)
}

/// Rejection estimate of `|B(0,1)|` inside the bounding box.
pub fn unit_ball_volume(dims: GroupDims, sample_count: u64, seed: u64) -> VolumeEstimate {
    const CHUNK: u64 = 1 << 16;
    let chunks = sample_count.div_ceil(CHUNK);
    let yd = dims.y_dim();
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, rng::combine(0xB0B, c));
            let todo = CHUNK.min(sample_count - c * CHUNK);
            let mut hits = 0u64;
            for _ in 0..todo {
                let mut t2 = 0.0;
                for _ in 0..3 {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    t2 += v * v;
                }
                let mut y2 = 0.0;
                for _ in 0..yd {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    y2 += v * v;
                }
                if y2 * y2 + t2 < 1.0 {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let boxv = bounding_box_volume(dims);
    let p = hits as f64 / sample_count as f64;
    VolumeEstimate {
        value: boxv * p,
        std_error: boxv * (p * (1.0 - p) / sample_count as f64).sqrt(),
        acceptance: p,
        box_volume: boxv,
        samples: sample_count,
    }
}

/// Sample count and seed behind the cached `omega_Q`.
pub const OMEGA_SAMPLES: u64 = 1 << 24;
pub const OMEGA_SEED: u64 = 0x00C0FFEE;

fn omega_cache() -> &'static Mutex<HashMap<usize, VolumeEstimate>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, VolumeEstimate>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// The cached estimate of `omega_Q = |B(0,1)|` used by every volume downstream.
pub fn unit_volume_estimate(dims: GroupDims) -> VolumeEstimate {
    let mut cache = omega_cache().lock().expect("omega cache poisoned");
    *cache
        .entry(dims.n())
        .or_insert_with(|| unit_ball_volume(dims, OMEGA_SAMPLES, OMEGA_SEED))
}

pub fn unit_volume(dims: GroupDims) -> f64 {
    unit_volume_estimate(dims).value
}

/// One Haar-uniform point of the unit ball.
///
/// Draws `|y|` from its marginal density `s^{4n-5} (1 - s^4)^{3/2}` by
/// rejection, a uniform direction for `y`, then `t` uniform in the
/// Euclidean 3-ball of radius `sqrt(1 - |y|^4)`.
pub fn sample_unit_ball(dims: GroupDims, rng: &mut Rng) -> GroupPoint {
    let yd = dims.y_dim();
    let inv_dim = 1.0 / yd as f64;
    let s = loop {
        let u: f64 = rng.random();
        let s = u.powf(inv_dim);
        let s4 = (s * s) * (s * s);
        if s4 >= 1.0 {
            continue;
        }
        let accept = (1.0 - s4) * (1.0 - s4).sqrt();
        if rng.random::<f64>() < accept {
            break s;
        }
    };
    let mut y: YCoords = (0..yd).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let len = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in y.iter_mut() {
        *v *= s / len;
    }
    let s4 = (s * s) * (s * s);
    let tr = (1.0 - s4).sqrt();
    let t = loop {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        let c: f64 = rng.random_range(-1.0..1.0);
        if a * a + b * b + c * c < 1.0 {
            break [a * tr, b * tr, c * tr];
        }
    };
    GroupPoint { t, y }
}

/// Point on the unit sphere `||g|| = 1`, distributed as the polar
/// (cone) measure of Haar measure.
pub fn sample_unit_sphere(dims: GroupDims, rng: &mut Rng) -> GroupPoint {
    loop {
        let g = sample_unit_ball(dims, rng);
        let nrm = g.norm();
        if nrm > 1e-6 {
            return g.dilated(1.0 / nrm);
        }
    }
}

/// One uniform point of `b`; retries the rare rounding failure of the
/// strict bound.
pub fn sample_in_ball(b: &Ball, rng: &mut Rng) -> GroupPoint {
    let dims = b.dims();
    loop {
        let p = b.center.compose(&sample_unit_ball(dims, rng).dilated(b.radius));
        if rho(&p, &b.center) < b.radius {
            return p;
        }
    }
}

pub fn sample_ball(b: &Ball, count: usize, seed: u64) -> Result<Vec<GroupPoint>> {
    if count == 0 {
        return Err(invalid("count", "must be positive"));
    }
    let mut rng = rng::stream(seed, rng::key_of_slice(&[b.radius]));
    Ok((0..count).map(|_| sample_in_ball(b, &mut rng)).collect())
}

/// One uniform point of the annulus `{r_in <= rho(., center) < r_out}`:
/// a polar direction from the cone measure and a radius with density
/// proportional to `s^{Q-1}`.
pub fn sample_in_annulus(
    center: &GroupPoint,
    r_in: f64,
    r_out: f64,
    q: f64,
    rng: &mut Rng,
) -> GroupPoint {
    let dims = center.dims();
    loop {
        let theta = sample_unit_sphere(dims, rng);
        let u: f64 = rng.random();
        let lo = (r_in / r_out).powf(q);
        let s = r_out * (lo + u * (1.0 - lo)).powf(1.0 / q);
        let p = center.compose(&theta.dilated(s));
        let d = rho(&p, center);
        if d >= r_in && d < r_out {
            return p;
        }
    }
}

pub fn sample_annulus(
    g: &GroupPoint,
    r_in: f64,
    r_out: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<GroupPoint>> {
    if !(r_in >= 0.0 && r_in < r_out) || !r_out.is_finite() {
        return Err(invalid(
            "annulus",
            format!("need 0 <= r_in < r_out, got [{r_in}, {r_out})"),
        ));
    }
    if count == 0 {
        return Err(invalid("count", "must be positive"));
    }
    let q = g.dims().qf();
    let mut rng = rng::stream(seed, rng::key_of_slice(&[r_in, r_out]));
    Ok((0..count)
        .map(|_| sample_in_annulus(g, r_in, r_out, q, &mut rng))
        .collect())
}

/// Empirical sup of `rho(h,g) / (rho(h,w) + rho(w,g))` over random triples
/// spread across several scales.
pub fn quasi_triangle_constant(dims: GroupDims, sample_count: usize, seed: u64) -> Result<f64> {
    if sample_count == 0 {
        return Err(invalid("sample_count", "must be positive"));
    }
    const CHUNK: usize = 4096;
    let chunks = sample_count.div_ceil(CHUNK);
    let best = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, rng::combine(0x7A1, c as u64));
            let todo = CHUNK.min(sample_count - c * CHUNK);
            let mut best = 1.0f64;
            for _ in 0..todo {
                let scale = |rng: &mut Rng| 10f64.powf(rng.random_range(-1.0..1.0));
                let (s1, s2, s3) = (scale(&mut rng), scale(&mut rng), scale(&mut rng));
                let h = sample_unit_ball(dims, &mut rng).dilated(s1);
                let g = sample_unit_ball(dims, &mut rng).dilated(s2);
                let w = sample_unit_ball(dims, &mut rng).dilated(s3);
                let denom = rho(&h, &w) + rho(&w, &g);
                if denom > 0.0 {
                    best = best.max(rho(&h, &g) / denom);
                }
            }
            best
        })
        .reduce(|| 1.0, f64::max);
    Ok(best)
}

/// Sampled balls with lazily cached Haar-uniform interior points.
#[derive(Debug)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
    pub samples_per_ball: usize,
    pub rng_seed: u64,
    cache: Vec<OnceLock<Vec<GroupPoint>>>,
}

impl Clone for BallFamily {
    fn clone(&self) -> Self {
        Self::new(self.balls.clone(), self.samples_per_ball, self.rng_seed)
    }
}

impl BallFamily {
    pub fn new(balls: Vec<Ball>, samples_per_ball: usize, rng_seed: u64) -> Self {
        let cache = balls.iter().map(|_| OnceLock::new()).collect();
        Self {
            balls,
            samples_per_ball: samples_per_ball.max(1),
            rng_seed,
            cache,
        }
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    /// Interior samples of ball `i`; the stream depends only on the ball
    /// geometry and the family seed.
    pub fn points(&self, i: usize) -> &[GroupPoint] {
        self.cache[i].get_or_init(|| {
            let b = &self.balls[i];
            let mut key = rng::key_of_slice(&b.center.coords());
            key = rng::combine(key, b.radius.to_bits());
            let mut rng = rng::stream(self.rng_seed, key);
            (0..self.samples_per_ball)
                .map(|_| sample_in_ball(b, &mut rng))
                .collect()
        })
    }

    /// Family with the balls of `other` appended (same seed and budget).
    pub fn extended(&self, more: &[Ball]) -> BallFamily {
        let mut balls = self.balls.clone();
        balls.extend_from_slice(more);
        BallFamily::new(balls, self.samples_per_ball, self.rng_seed)
    }
}

/// Declarative description of a ball family: log-spaced radii at a fixed
/// list of centers plus random centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySpec {
    pub radius_min: f64,
    pub radius_max: f64,
    pub radius_count: usize,
    /// Explicit centers as flat coordinate lists.
    pub centers: Vec<Vec<f64>>,
    pub random_centers: usize,
    /// Random centers are drawn uniformly from `B(0, center_spread)`.
    pub center_spread: f64,
    pub samples_per_ball: usize,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            radius_min: 0.1,
            radius_max: 10.0,
            radius_count: 5,
            centers: Vec::new(),
            random_centers: 4,
            center_spread: 5.0,
            samples_per_ball: 4000,
        }
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

impl FamilySpec {
    pub fn build(&self, dims: GroupDims, seed: u64) -> Result<BallFamily> {
        if !(self.radius_min > 0.0 && self.radius_max >= self.radius_min) {
            return Err(invalid("family.radius", "need 0 < radius_min <= radius_max"));
        }
        let mut centers = vec![GroupPoint::identity(dims)];
        for c in &self.centers {
            let p = GroupPoint::from_coords(c)?;
            check_same(&centers[0], &p)?;
            centers.push(p);
        }
        if self.random_centers > 0 {
            let spread = Ball::centered(dims, self.center_spread.max(1e-12))?;
            let mut rng = rng::stream(seed, 0xCE17E5);
            for _ in 0..self.random_centers {
                centers.push(sample_in_ball(&spread, &mut rng));
            }
        }
        let radii = log_grid(self.radius_min, self.radius_max, self.radius_count.max(1));
        let mut balls = Vec::with_capacity(centers.len() * radii.len());
        for c in &centers {
            for &r in &radii {
                balls.push(Ball::new(c.clone(), r)?);
            }
        }
        Ok(BallFamily::new(balls, self.samples_per_ball, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d2() -> GroupDims {
        GroupDims::new(2).unwrap()
    }

    fn pt(t: [f64; 3], y: [f64; 4]) -> GroupPoint {
        GroupPoint::new(t, &y)
    }

    #[test]
    fn dims() {
        let d = d2();
        assert_eq!(d.q(), 10);
        assert_eq!(d.ambient(), 7);
        assert!(GroupDims::new(1).is_err());
        let d3 = GroupDims::new(3).unwrap();
        assert_eq!(d3.ambient(), 3 + 8);
        assert_eq!(d3.q(), 14);
    }

    #[test]
    fn product_examples() {
        let e = GroupPoint::identity(d2());
        let g = pt([0.3, -1.0, 2.0], [1.0, 2.0, -0.5, 0.25]);
        assert_eq!(gmul(&e, &g).unwrap(), g);
        let i = pt([0.0; 3], [0.0, 1.0, 0.0, 0.0]);
        let j = pt([0.0; 3], [0.0, 0.0, 1.0, 0.0]);
        let p = gmul(&i, &j).unwrap();
        assert_eq!(p.t, [0.0, 0.0, -2.0]);
        assert_eq!(&p.y[..], &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(gmul(&g, &ginv(&g)).unwrap(), e);
        assert_eq!(gmul(&ginv(&g), &g).unwrap(), e);
        assert_eq!(ginv(&ginv(&g)), g);
        assert_eq!(ginv(&e), e);
        let other = GroupPoint::identity(GroupDims::new(3).unwrap());
        assert!(matches!(gmul(&g, &other), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn dilation_and_norm_examples() {
        let g = pt([1.0, 0.0, 0.0], [0.5, -1.0, 0.0, 2.0]);
        assert_eq!(dilate(1.0, &g).unwrap(), g);
        let d = dilate(2.0, &g).unwrap();
        assert_eq!(d.t, [4.0, 0.0, 0.0]);
        assert_eq!(&d.y[..], &[1.0, -2.0, 0.0, 4.0]);
        assert!(dilate(0.0, &g).is_err());
        assert!(dilate(-1.0, &g).is_err());
        assert_eq!(hnorm(&GroupPoint::identity(d2())), 0.0);
        let y = pt([0.0; 3], [0.6, 0.0, 0.8, 0.0]);
        assert!((hnorm(&y) - 1.0).abs() < 1e-15);
        assert_eq!(hnorm(&pt([1.0, 0.0, 0.0], [0.0; 4])), 1.0);
    }

    #[test]
    fn rho_examples() {
        let g = pt([0.3, -1.0, 2.0], [1.0, 2.0, -0.5, 0.25]);
        assert_eq!(rho(&g, &g), 0.0);
        let h = pt([1.0, 0.5, -0.2], [0.0, -1.0, 0.5, 1.5]);
        let direct = ginv(&g).compose(&h).norm();
        assert!((rho(&h, &g) - direct).abs() < 1e-14);
    }

    #[test]
    fn collinear_y_axis_triples_have_unit_ratio() {
        let p = |a: f64| pt([0.0; 3], [a, 0.0, 0.0, 0.0]);
        let (h, w, g) = (p(0.0), p(1.0), p(3.0));
        let ratio = rho(&h, &g) / (rho(&h, &w) + rho(&w, &g));
        assert!((ratio - 1.0).abs() < 1e-15);
        // degenerate triple w = g
        let ratio = rho(&h, &g) / (rho(&h, &g) + rho(&g, &g));
        assert_eq!(ratio, 1.0);
    }

    #[test]
    fn quasi_triangle_constant_is_one() {
        let c = quasi_triangle_constant(d2(), 200_000, 3).unwrap();
        assert!(c >= 1.0 && c <= C_RHO + 1e-12, "c = {c}");
        let c2 = quasi_triangle_constant(d2(), 200_000, 4).unwrap();
        assert!((c - c2).abs() <= 0.02 * c);
    }

    #[test]
    fn bounding_box_and_acceptance() {
        assert_eq!(bounding_box_volume(d2()), 128.0);
        let v = unit_ball_volume(d2(), 100_000, 1);
        assert!(v.acceptance > 0.0 && v.acceptance < 1.0);
    }

    #[test]
    fn unit_volume_matches_closed_form() {
        // independent oracle for n = 2: (4 pi / 3) * 2 pi^2 * int_0^1 (1 - r^4)^{3/2} r^3 dr
        let exact = 4.0 * std::f64::consts::PI.powi(3) / 15.0;
        let est = unit_volume_estimate(d2());
        assert!((est.value - exact).abs() < 4.0 * est.std_error, "{} vs {exact}", est.value);
    }

    #[test]
    fn volume_scaling_is_exact() {
        let b = Ball::new(pt([1.0, 0.0, 0.0], [0.0; 4]), 0.7).unwrap();
        let ratio = b.scaled(3.0).volume() / b.volume();
        assert!((ratio - 3f64.powi(10)).abs() < 1e-9 * ratio);
    }

    #[test]
    fn ball_samples_respect_radius_and_are_centered() {
        let b = Ball::new(pt([0.5, 0.0, -1.0], [0.0, 1.0, 0.0, 0.0]), 1.3).unwrap();
        let pts = sample_ball(&b, 20_000, 11).unwrap();
        assert!(pts.iter().all(|p| rho(p, &b.center) < b.radius));
        let b0 = Ball::centered(d2(), 1.0).unwrap();
        let pts = sample_ball(&b0, 40_000, 12).unwrap();
        for k in 0..4 {
            let vals: Vec<f64> = pts.iter().map(|p| p.y[k]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 3.0 * (var / vals.len() as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn inner_ball_fraction_matches_volume_ratio() {
        let b2 = Ball::centered(d2(), 2.0).unwrap();
        let n = 400_000;
        let pts = sample_ball(&b2, n, 5).unwrap();
        let hits = pts.iter().filter(|p| p.norm() < 1.0).count() as f64;
        let p = 2f64.powi(-10);
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - n as f64 * p).abs() < 3.0 * sigma, "hits {hits}");
    }

    #[test]
    fn sampler_agrees_with_box_rejection_in_distribution() {
        // compare the law of |y|^2 under both samplers
        let dims = d2();
        let mut rng = rng::stream(9, 1);
        let n = 100_000;
        let mean_direct: f64 =
            (0..n).map(|_| sample_unit_ball(dims, &mut rng).y_norm_sqr()).sum::<f64>() / n as f64;
        let mut acc = 0.0;
        let mut got = 0;
        while got < n {
            let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let y: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let p = pt(t, y);
            if p.norm() < 1.0 {
                acc += p.y_norm_sqr();
                got += 1;
            }
        }
        let mean_box = acc / n as f64;
        assert!((mean_direct - mean_box).abs() < 0.01, "{mean_direct} vs {mean_box}");
    }

    #[test]
    fn annulus_samples() {
        let g = pt([0.1, 0.2, 0.3], [1.0, 0.0, 0.0, 0.0]);
        let pts = sample_annulus(&g, 0.5, 1.0, 10_000, 2).unwrap();
        assert!(pts.iter().all(|p| {
            let d = rho(p, &g);
            (0.5..1.0).contains(&d)
        }));
        assert!(sample_annulus(&g, 1.0, 1.0, 10, 2).is_err());
        // annulus(0, r) behaves like a ball sample
        let pts = sample_annulus(&g, 0.0, 1.0, 10_000, 3).unwrap();
        assert!(pts.iter().all(|p| rho(p, &g) < 1.0));
        // fraction of ball samples in the annulus matches the volume law
        let b = Ball::new(g.clone(), 1.0).unwrap();
        let n = 100_000;
        let pts = sample_ball(&b, n, 4).unwrap();
        let hits = pts
            .iter()
            .filter(|p| {
                let d = rho(p, &g);
                (0.8..0.9).contains(&d)
            })
            .count() as f64;
        let p = 0.9f64.powi(10) - 0.8f64.powi(10);
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - n as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn haar_measure_is_left_invariant() {
        // measure of w.E for a box E against E itself, by hit counting in a
        // larger box with the indicator of E evaluated at w^{-1} p
        let dims = d2();
        let mut rng = rng::stream(21, 0);
        let w = pt([0.3, -0.2, 0.1], [0.4, 0.1, -0.3, 0.2]);
        let winv = w.inverse();
        let in_e = |p: &GroupPoint| {
            p.t.iter().all(|v| v.abs() < 0.5) && p.y.iter().all(|v| v.abs() < 0.5)
        };
        let n = 400_000;
        let half = 2.5;
        let big = (2.0 * half as f64).powi(dims.ambient() as i32);
        let mut hits = 0.0;
        for _ in 0..n {
            let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-half..half));
            let y: [f64; 4] = std::array::from_fn(|_| rng.random_range(-half..half));
            if in_e(&winv.compose(&pt(t, y))) {
                hits += 1.0;
            }
        }
        let p = hits / n as f64;
        let est = big * p;
        let se = big * (p * (1.0 - p) / n as f64).sqrt();
        assert!((est - 1.0).abs() < 3.0 * se, "measure {est} +- {se}");
    }

    #[test]
    fn family_spec_builds_and_caches() {
        let spec = FamilySpec {
            radius_count: 3,
            random_centers: 2,
            samples_per_ball: 100,
            ..FamilySpec::default()
        };
        let fam = spec.build(d2(), 1).unwrap();
        assert_eq!(fam.len(), 9);
        let a = fam.points(4).to_vec();
        assert_eq!(fam.points(4), &a[..]);
        let b = &fam.balls[4];
        assert!(a.iter().all(|p| b.contains(p)));
        let fam2 = spec.build(d2(), 1).unwrap();
        assert_eq!(fam2.points(4), &a[..]);
    }

    fn point() -> impl Strategy<Value = GroupPoint> {
        proptest::collection::vec(-3.0..3.0f64, 7).prop_map(|v| GroupPoint::from_coords(&v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn associativity(a in point(), b in point(), c in point()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            for (x, y) in l.coords().iter().zip(r.coords()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn structural_form_agrees(a in point(), b in point()) {
            let l = gmul(&a, &b).unwrap();
            let r = gmul_structural(&a, &b).unwrap();
            for (x, y) in l.coords().iter().zip(r.coords()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn rho_symmetric_and_left_invariant(w in point(), h in point(), g in point()) {
            let d = rho(&h, &g);
            prop_assert!((d - rho(&g, &h)).abs() <= 1e-12 * (1.0 + d));
            let d2 = rho(&w.compose(&h), &w.compose(&g));
            prop_assert!((d - d2).abs() <= 1e-12 * (1.0 + d));
            prop_assert!((hnorm(&h.inverse()) - hnorm(&h)).abs() <= 1e-15 * (1.0 + hnorm(&h)));
        }

        #[test]
        fn dilation_is_an_automorphism(a in point(), b in point(), r in 0.1..5.0f64) {
            let l = a.compose(&b).dilated(r);
            let rr = a.dilated(r).compose(&b.dilated(r));
            for (x, y) in l.coords().iter().zip(rr.coords()) {
                prop_assert!((x - y).abs() <= 1e-11 * (1.0 + x.abs()));
            }
            let n = hnorm(&a);
            prop_assert!((hnorm(&a.dilated(r)) - r * n).abs() <= 1e-13 * (1.0 + r * n));
            let d = rho(&a, &b);
            prop_assert!((rho(&a.dilated(r), &b.dilated(r)) - r * d).abs() <= 1e-12 * (1.0 + r * d));
        }
    }
}
