use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{morrey_norm, morrey_power_ball_value, EstimatorCfg, MorreyParams, ScalarField, SupEstimate, Weight};
use crate::error::{invalid, Error, Result};
use crate::heisenberg::{rho, Ball, BallFamily, GroupPoint};
use crate::kernel::KernelEvaluator;
use crate::quadrature::{Estimate, Stratification};
use crate::quaternion::Quat;
use crate::rng;

use super::apply::{kernel_integral, target_key, QuadratureCfg, QuatEstimate, Window};

type CacheKey = (Vec<u64>, u64);

/// `g -> [b, C_eta] f(g)` with memoized target values.
pub struct CommutatorImage {
    ke: Arc<KernelEvaluator>,
    b: ScalarField,
    f: ScalarField,
    supp: Ball,
    eta: f64,
    cfg: QuadratureCfg,
    cache: RwLock<HashMap<CacheKey, QuatEstimate>>,
}

impl CommutatorImage {
    pub fn new(ke: Arc<KernelEvaluator>, b: &ScalarField, f: ScalarField, eta: f64, cfg: QuadratureCfg) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(invalid("eta", format!("must be positive, got {eta}")));
        }
        cfg.validate()?;
        let supp = f.support().ok_or(Error::MissingSupport)?;
        Ok(Self {
            ke,
            b: b.without_shift(),
            f,
            supp,
            eta,
            cfg,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    pub fn support(&self) -> &Ball {
        &self.supp
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn cached(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn eval(&self, g: &GroupPoint) -> QuatEstimate {
        self.eval_keyed(g, target_key(g))
    }

    /// Value at `g` computed on the sample stream `key`. Evaluating two
    /// targets on one key couples their quadrature noise.
    pub fn eval_keyed(&self, g: &GroupPoint, key: u64) -> QuatEstimate {
        let ck = (g.coords().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), key);
        if let Some(v) = self.cache.read().unwrap().get(&ck) {
            return *v;
        }
        let v = kernel_integral(
            &self.ke,
            Window::Truncated(self.eta),
            Some(&self.b),
            &self.f,
            &self.supp,
            g,
            &self.cfg,
            key,
        );
        // same key, same value: a racing insert is harmless
        self.cache.write().unwrap().insert(ck, v);
        v
    }

    pub fn modulus(&self, g: &GroupPoint) -> f64 {
        self.eval(g).value.norm()
    }

    /// Values at `g` on two independent sample streams.
    pub fn eval_twin(&self, g: &GroupPoint) -> (QuatEstimate, QuatEstimate) {
        let k = target_key(g);
        (self.eval_keyed(g, k), self.eval_keyed(g, twin_key(k)))
    }

    /// Estimate of `|h(g)|^p`, see `power_from_twins`.
    pub fn power(&self, g: &GroupPoint, p: f64) -> f64 {
        let (a, b) = self.eval_twin(g);
        power_from_twins(a.value, b.value, p)
    }
}

/// Second sample stream of a target, independent of the first.
pub fn twin_key(key: u64) -> u64 {
    rng::combine(key, 0x71A)
}

/// `|h|^p` from two independent estimates `a`, `b` of `h`. Their inner
/// product is unbiased for `|h|^2`, where `|a|^2` would carry the squared
/// quadrature error on top; for `p != 2` its positive part is raised to
/// `p/2`.
pub fn power_from_twins(a: Quat, b: Quat, p: f64) -> f64 {
    let x = a.x1 * b.x1 + a.x2 * b.x2 + a.x3 * b.x3 + a.x4 * b.x4;
    if p == 2.0 {
        x
    } else {
        x.max(0.0).powf(0.5 * p)
    }
}

/// Target shells for an evaluation ball, anchored at the center of a
/// support ball and reaching down to half its radius.
pub fn support_strat(eval: &Ball, supp: &Ball) -> Option<Stratification> {
    let d = rho(&eval.center, &supp.center);
    let outer = d + eval.radius;
    if outer <= 2.0 * supp.radius {
        return None;
    }
    let depth = Stratification::levels_between(outer, 0.5 * supp.radius);
    Some(Stratification::dyadic_down(supp.center.clone(), outer, depth, true))
}

/// Target placement for image norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageNormCfg {
    /// Target points per evaluation ball.
    pub targets: usize,
    pub seed: u64,
}

impl Default for ImageNormCfg {
    fn default() -> Self {
        Self { targets: 256, seed: 1 }
    }
}

/// Morrey norm of `|h|` over the evaluation balls, with targets placed
/// in shells around the support of the image's `f`.
pub fn image_morrey_norm(
    img: &CommutatorImage,
    w: &Weight,
    params: &MorreyParams,
    balls: &[Ball],
    cfg: &ImageNormCfg,
) -> Result<SupEstimate> {
    params.validate()?;
    let per: Vec<Estimate> = balls
        .iter()
        .map(|b| {
            let st = support_strat(b, img.support());
            let p = params.p;
            morrey_power_ball_value(&|g: &GroupPoint| img.power(g, p), w, params, b, st.as_ref(), cfg.targets, cfg.seed)
        })
        .collect();
    SupEstimate::from_per_ball(per)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorNormCfg {
    pub quadrature: QuadratureCfg,
    pub image: ImageNormCfg,
    pub estimator: EstimatorCfg,
}

impl Default for OperatorNormCfg {
    fn default() -> Self {
        Self {
            quadrature: QuadratureCfg {
                samples: 1000,
                ..QuadratureCfg::default()
            },
            image: ImageNormCfg::default(),
            estimator: EstimatorCfg::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioReport {
    pub ratio: Estimate,
    pub image_norm: SupEstimate,
    pub f_norm: SupEstimate,
}

/// `||[b, C_eta] f|| / ||f||` in the weighted Morrey space, both norms
/// taken over the same evaluation balls.
#[allow(clippy::too_many_arguments)]
pub fn morrey_operator_ratio(
    ke: &Arc<KernelEvaluator>,
    b: &ScalarField,
    f: &ScalarField,
    w: &Weight,
    params: &MorreyParams,
    eta: f64,
    family: &[Ball],
    cfg: &OperatorNormCfg,
) -> Result<RatioReport> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let fam = BallFamily::new(family.to_vec(), cfg.estimator.samples, cfg.estimator.seed);
    let f_norm = morrey_norm(f, w, params, &fam, &cfg.estimator)?;
    if !(f_norm.value > 0.0) {
        return Err(Error::ZeroDenominator("morrey norm of f"));
    }
    let img = CommutatorImage::new(ke.clone(), b, f.clone(), eta, cfg.quadrature)?;
    let image_norm = image_morrey_norm(&img, w, params, family, &cfg.image)?;
    let ratio = Estimate::new(image_norm.value, image_norm.std_error)
        .ratio(Estimate::new(f_norm.value, f_norm.std_error));
    let ratio = if image_norm.value == 0.0 { Estimate::exact(0.0) } else { ratio };
    Ok(RatioReport {
        ratio,
        image_norm,
        f_norm,
    })
}

/// Evaluation balls `B(c, lambda r)` around a support ball.
pub fn balls_around(supp: &Ball, lambdas: &[f64]) -> Vec<Ball> {
    lambdas.iter().map(|&l| supp.scaled(l)).collect()
}

/// Target values of several images at shared stratified nodes, used to
/// compare images in one norm without re-sampling.
pub(crate) fn nodes_values(images: &[&CommutatorImage], nodes: &[(GroupPoint, f64)]) -> Vec<Vec<(Quat, Quat)>> {
    nodes
        .par_iter()
        .map(|(g, wt)| {
            if *wt == 0.0 {
                vec![(Quat::ZERO, Quat::ZERO); images.len()]
            } else {
                images
                    .iter()
                    .map(|img| {
                        let (a, b) = img.eval_twin(g);
                        (a.value, b.value)
                    })
                    .collect()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heisenberg::GroupDims;
    use crate::kernel::build_kernel;

    fn d() -> GroupDims {
        GroupDims::new(2).unwrap()
    }

    fn quick() -> OperatorNormCfg {
        OperatorNormCfg {
            quadrature: QuadratureCfg {
                samples: 300,
                ..QuadratureCfg::default()
            },
            image: ImageNormCfg { targets: 64, seed: 3 },
            estimator: EstimatorCfg::default().with_samples(2000),
        }
    }

    #[test]
    fn memo_returns_identical_values() {
        let ke = Arc::new(build_kernel(d(), 1.0).unwrap());
        let f = ScalarField::indicator(Ball::centered(d(), 1.0).unwrap());
        let img = CommutatorImage::new(ke, &ScalarField::LogNorm, f, 0.1, QuadratureCfg::default()).unwrap();
        let g = GroupPoint::new([0.1, 0.0, 0.2], &[0.3, 0.0, 0.0, 0.1]);
        let a = img.eval(&g);
        assert_eq!(img.cached(), 1);
        let b = img.eval(&g);
        assert_eq!(a, b);
        assert_eq!(img.cached(), 1);
        assert!(CommutatorImage::new(
            img.ke.clone(),
            &ScalarField::LogNorm,
            ScalarField::LogNorm,
            0.1,
            QuadratureCfg::default()
        )
        .is_err());
    }

    #[test]
    fn ratio_zero_for_constant_b_and_scale_invariant() {
        let ke = Arc::new(build_kernel(d(), 1.0).unwrap());
        let supp = Ball::centered(d(), 1.0).unwrap();
        let f = ScalarField::indicator(supp.clone());
        let w = Weight::power(2.0);
        let params = MorreyParams::new(2.0, 0.5).unwrap();
        let fam = balls_around(&supp, &[1.0, 2.0]);
        let r0 = morrey_operator_ratio(&ke, &ScalarField::Constant(2.0), &f, &w, &params, 0.1, &fam, &quick()).unwrap();
        assert_eq!(r0.ratio.value, 0.0);
        let r1 = morrey_operator_ratio(&ke, &ScalarField::LogNorm, &f, &w, &params, 0.1, &fam, &quick()).unwrap();
        let r2 = morrey_operator_ratio(&ke, &ScalarField::LogNorm, &f.scaled(2.0), &w, &params, 0.1, &fam, &quick()).unwrap();
        assert!(r1.ratio.value > 0.0);
        assert!((r1.ratio.value - r2.ratio.value).abs() <= 1e-14 * r1.ratio.value);
        let zero = ScalarField::indicator(supp).scaled(0.0);
        assert!(matches!(
            morrey_operator_ratio(&ke, &ScalarField::LogNorm, &zero, &w, &params, 0.1, &fam, &quick()),
            Err(Error::ZeroDenominator(_))
        ));
    }
}
