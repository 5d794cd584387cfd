use serde::{Deserialize, Serialize};

use crate::analysis::{linear_fit, morrey_power_ball_value, weighted_measure, EstimatorCfg, LinearFit, MorreyParams, Weight};
use crate::error::{Error, Result};
use crate::heisenberg::{sample_unit_sphere, Ball, GroupPoint};
use crate::quadrature::{ball_key, stratified_integral, Estimate, Stratification};
use crate::rng;

use super::apply::target_key;
use super::image::{image_morrey_norm, power_from_twins, support_strat, twin_key, CommutatorImage, ImageNormCfg};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrCfg {
    /// Cut-off radii for the tail norms.
    pub m_grid: Vec<f64>,
    /// Tail evaluation balls `B(0, lambda M)`.
    pub tail_factors: Vec<f64>,
    /// Off-center tail balls `B(delta_{2M} theta, M)` per `M`.
    pub tail_offcenter: usize,
    pub xi_norms: Vec<f64>,
    pub xi_dirs: usize,
    pub targets: usize,
    pub estimator: EstimatorCfg,
}

impl Default for KrCfg {
    fn default() -> Self {
        Self {
            m_grid: vec![20.0, 40.0, 80.0, 160.0],
            tail_factors: vec![1.5, 2.0, 4.0, 8.0],
            tail_offcenter: 3,
            xi_norms: vec![0.0, 0.05, 0.1, 0.2],
            xi_dirs: 3,
            targets: 256,
            estimator: EstimatorCfg::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KrReport {
    /// Condition (i): sup of the image norms.
    pub norm_sup: f64,
    pub per_image_norm: Vec<Estimate>,
    /// Condition (ii): `(M, sup of tail norms)`.
    pub tails: Vec<(f64, f64)>,
    /// Fit of `ln tail` against `ln M`.
    pub tail_fit: Option<LinearFit>,
    /// `-slope` of the tail fit.
    pub decay_exponent: f64,
    /// Condition (iii): `(|xi|, sup of translation differences)`.
    pub translations: Vec<(f64, f64)>,
}

fn morrey_parts(num: Estimate, den: Estimate, params: &MorreyParams) -> f64 {
    if !(num.value > 0.0) {
        return 0.0;
    }
    (num.value / den.value.powf(params.kappa)).powf(1.0 / params.p)
}

/// The three compactness conditions for a family of commutator images:
/// uniform norm bound, uniform tail decay outside `B(0, M)` and uniform
/// continuity under right translations `g -> g xi`.
pub fn kr_conditions(
    images: &[CommutatorImage],
    w: &Weight,
    params: &MorreyParams,
    family: &[Ball],
    cfg: &KrCfg,
) -> Result<KrReport> {
    params.validate()?;
    if images.is_empty() || family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let dims = family[0].dims();
    let est = &cfg.estimator;
    let icfg = ImageNormCfg {
        targets: cfg.targets,
        seed: est.seed,
    };
    let per_image_norm = images
        .iter()
        .map(|img| image_morrey_norm(img, w, params, family, &icfg).map(|s| Estimate::new(s.value, s.std_error)))
        .collect::<Result<Vec<_>>>()?;
    let norm_sup = per_image_norm.iter().map(|e| e.value).fold(0.0, f64::max);

    let origin = GroupPoint::identity(dims);
    let mut tails = Vec::with_capacity(cfg.m_grid.len());
    for &m in &cfg.m_grid {
        let mut balls: Vec<Ball> = cfg
            .tail_factors
            .iter()
            .map(|&l| Ball::new(origin.clone(), l * m))
            .collect::<Result<_>>()?;
        let mut r = rng::stream(est.seed, rng::combine(0x7A11, m.to_bits()));
        for _ in 0..cfg.tail_offcenter {
            balls.push(Ball::new(sample_unit_sphere(dims, &mut r).dilated(2.0 * m), m)?);
        }
        let mut sup: f64 = 0.0;
        for ball in &balls {
            let den = weighted_measure(w, ball, est);
            let outer = ball.center.norm() + ball.radius;
            let st = Stratification::dyadic_up(origin.clone(), m, outer, false);
            for img in images {
                let [num] = stratified_integral(ball, Some(&st), cfg.targets, est.seed, ball_key(ball), |g| {
                    [img.power(g, params.p) * w.eval(g)]
                });
                sup = sup.max(morrey_parts(num, den, params));
            }
        }
        tails.push((m, sup));
    }
    let pts: Vec<(f64, f64)> = tails
        .iter()
        .filter(|t| t.1 > 0.0)
        .map(|t| (t.0.ln(), t.1.ln()))
        .collect();
    let tail_fit = linear_fit(&pts);
    let decay_exponent = tail_fit.map(|f| -f.slope).unwrap_or(f64::NAN);

    let mut translations = Vec::with_capacity(cfg.xi_norms.len());
    for &xn in &cfg.xi_norms {
        if xn == 0.0 {
            translations.push((0.0, 0.0));
            continue;
        }
        let mut r = rng::stream(est.seed, rng::combine(0x7E1, xn.to_bits()));
        let xis: Vec<GroupPoint> = (0..cfg.xi_dirs.max(1))
            .map(|_| sample_unit_sphere(dims, &mut r).dilated(xn))
            .collect();
        let mut sup: f64 = 0.0;
        for img in images {
            for xi in &xis {
                for ball in family {
                    let st = support_strat(ball, img.support());
                    let v = morrey_power_ball_value(
                        &|g: &GroupPoint| {
                            let k1 = target_key(g);
                            let k2 = twin_key(k1);
                            let gx = g.compose(xi);
                            let d1 = img.eval_keyed(&gx, k1).value - img.eval_keyed(g, k1).value;
                            let d2 = img.eval_keyed(&gx, k2).value - img.eval_keyed(g, k2).value;
                            power_from_twins(d1, d2, params.p)
                        },
                        w,
                        params,
                        ball,
                        st.as_ref(),
                        cfg.targets,
                        est.seed,
                    );
                    sup = sup.max(v.value);
                }
            }
        }
        translations.push((xn, sup));
    }
    Ok(KrReport {
        norm_sup,
        per_image_norm,
        tails,
        tail_fit,
        decay_exponent,
        translations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ScalarField;
    use crate::heisenberg::GroupDims;
    use crate::kernel::build_kernel;
    use crate::operators::QuadratureCfg;
    use std::sync::Arc;

    fn d() -> GroupDims {
        GroupDims::new(2).unwrap()
    }

    fn quick() -> KrCfg {
        KrCfg {
            m_grid: vec![10.0, 20.0, 40.0],
            tail_factors: vec![2.0, 4.0],
            tail_offcenter: 1,
            xi_norms: vec![0.0, 0.1],
            xi_dirs: 1,
            targets: 48,
            estimator: EstimatorCfg::default().with_samples(1000),
        }
    }

    #[test]
    fn zero_image_gives_zero_everywhere() {
        let ke = Arc::new(build_kernel(d(), 1.0).unwrap());
        let supp = Ball::centered(d(), 1.0).unwrap();
        let f = ScalarField::indicator(supp.clone());
        let img = CommutatorImage::new(ke, &ScalarField::Constant(1.0), f, 0.1, QuadratureCfg::default()).unwrap();
        let params = MorreyParams::new(2.0, 0.5).unwrap();
        let rep = kr_conditions(&[img], &Weight::unit(), &params, &[supp], &quick()).unwrap();
        assert_eq!(rep.norm_sup, 0.0);
        assert!(rep.tails.iter().all(|t| t.1 == 0.0));
        assert!(rep.translations.iter().all(|t| t.1 == 0.0));
    }

    #[test]
    fn tails_decay_for_compactly_supported_b() {
        let ke = Arc::new(build_kernel(d(), 1.0).unwrap());
        let supp = Ball::centered(d(), 1.0).unwrap();
        let f = ScalarField::indicator(supp.clone());
        let b = ScalarField::bump(GroupPoint::identity(d()), 2.0);
        let q = QuadratureCfg {
            samples: 300,
            ..QuadratureCfg::default()
        };
        let img = CommutatorImage::new(ke, &b, f, 0.1, q).unwrap();
        let params = MorreyParams::new(2.0, 0.5).unwrap();
        let rep = kr_conditions(&[img], &Weight::power(2.0), &params, &[supp.scaled(2.0)], &quick()).unwrap();
        assert!(rep.norm_sup > 0.0);
        assert_eq!(rep.translations[0].1, 0.0);
        assert!(rep.translations[1].1 > 0.0);
        assert!(rep.decay_exponent > 0.0, "{rep:?}");
        assert!(matches!(
            kr_conditions(&[], &Weight::unit(), &params, &[supp], &quick()),
            Err(Error::EmptyFamily)
        ));
    }
}
