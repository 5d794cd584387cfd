use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::heisenberg::{sample_unit_ball, GroupDims, GroupPoint, Ball};
use crate::quaternion::StructureMatrices;
use crate::rng;

/// Smoothness tag carried as metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    Smooth,
    Lipschitz,
    Discontinuous,
    Singular,
}

/// Real-valued function on the group with metadata used by the estimators.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// `amplitude exp(1 - 1/(1 - N))` for `N = ||c^{-1} g||^4 / R^4 < 1`, else 0.
    SmoothBump {
        center: GroupPoint,
        radius: f64,
        amplitude: f64,
    },
    /// `log ||g||`.
    LogNorm,
    /// `||g||^a`.
    PowerNorm(f64),
    /// `amplitude` on the ball, 0 outside.
    Indicator { ball: Ball, amplitude: f64 },
    /// `c f`.
    Scaled(Box<ScalarField>, f64),
    /// `f + c`.
    Shifted(Box<ScalarField>, f64),
    /// `amplitude (sgn(b - alpha) - a0)` on `ball`, 0 outside.
    Extremal(Arc<ExtremalData>),
    Custom(Arc<CustomField>),
}

pub struct ExtremalData {
    pub b: ScalarField,
    pub ball: Ball,
    pub alpha: f64,
    pub a0: f64,
    pub amplitude: f64,
}

pub struct CustomField {
    pub name: String,
    pub f: Box<dyn Fn(&GroupPoint) -> f64 + Send + Sync>,
    pub support: Option<Ball>,
    pub smoothness: Smoothness,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.describe())
    }
}

impl ScalarField {
    pub fn bump(center: GroupPoint, radius: f64) -> Self {
        ScalarField::SmoothBump {
            center,
            radius,
            amplitude: 1.0,
        }
    }

    pub fn indicator(ball: Ball) -> Self {
        ScalarField::Indicator {
            ball,
            amplitude: 1.0,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        support: Option<Ball>,
        smoothness: Smoothness,
        f: impl Fn(&GroupPoint) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarField::Custom(Arc::new(CustomField {
            name: name.into(),
            f: Box::new(f),
            support,
            smoothness,
        }))
    }

    pub fn scaled(&self, c: f64) -> Self {
        ScalarField::Scaled(Box::new(self.clone()), c)
    }

    pub fn shifted(&self, c: f64) -> Self {
        ScalarField::Shifted(Box::new(self.clone()), c)
    }

    #[inline]
    pub fn eval(&self, g: &GroupPoint) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::SmoothBump {
                center,
                radius,
                amplitude,
            } => {
                let n = bump_arg(center, *radius, g);
                if n < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - n)).exp()
                } else {
                    0.0
                }
            }
            ScalarField::LogNorm => g.norm().ln(),
            ScalarField::PowerNorm(a) => g.norm().powf(*a),
            ScalarField::Indicator { ball, amplitude } => {
                if ball.contains(g) {
                    *amplitude
                } else {
                    0.0
                }
            }
            ScalarField::Scaled(f, c) => c * f.eval(g),
            ScalarField::Shifted(f, c) => f.eval(g) + c,
            ScalarField::Extremal(e) => {
                if !e.ball.contains(g) {
                    return 0.0;
                }
                let d = e.b.eval(g) - e.alpha;
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                e.amplitude * (s - e.a0)
            }
            ScalarField::Custom(c) => (c.f)(g),
        }
    }

    /// The field with additive constants removed, so that differences
    /// `f(g) - f(u)` are bit-identical for `f` and `f + c`.
    pub fn without_shift(&self) -> ScalarField {
        match self {
            ScalarField::Constant(_) => ScalarField::Constant(0.0),
            ScalarField::Shifted(f, _) => f.without_shift(),
            ScalarField::Scaled(f, c) => ScalarField::Scaled(Box::new(f.without_shift()), *c),
            other => other.clone(),
        }
    }

    /// A ball outside of which the field vanishes.
    pub fn support(&self) -> Option<Ball> {
        match self {
            ScalarField::Constant(c) if *c == 0.0 => None,
            ScalarField::SmoothBump { center, radius, .. } => Some(Ball {
                center: center.clone(),
                radius: *radius,
            }),
            ScalarField::Indicator { ball, .. } => Some(ball.clone()),
            ScalarField::Scaled(f, _) => f.support(),
            ScalarField::Extremal(e) => Some(e.ball.clone()),
            ScalarField::Custom(c) => c.support.clone(),
            _ => None,
        }
    }

    /// True when the field is identically zero by construction.
    pub fn is_zero(&self) -> bool {
        match self {
            ScalarField::Constant(c) => *c == 0.0,
            ScalarField::Scaled(f, c) => *c == 0.0 || f.is_zero(),
            ScalarField::Indicator { amplitude, .. } => *amplitude == 0.0,
            _ => false,
        }
    }

    /// Point where the field blows up or loses smoothness, if any.
    pub fn singular_point(&self, dims: GroupDims) -> Option<GroupPoint> {
        match self {
            ScalarField::LogNorm => Some(GroupPoint::identity(dims)),
            ScalarField::PowerNorm(a) if *a < 1.0 && *a != 0.0 => Some(GroupPoint::identity(dims)),
            ScalarField::Scaled(f, _) | ScalarField::Shifted(f, _) => f.singular_point(dims),
            _ => None,
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            ScalarField::Constant(_) | ScalarField::SmoothBump { .. } => Smoothness::Smooth,
            ScalarField::LogNorm => Smoothness::Singular,
            ScalarField::PowerNorm(a) => {
                if *a == 0.0 {
                    Smoothness::Smooth
                } else if *a < 1.0 {
                    Smoothness::Singular
                } else {
                    Smoothness::Lipschitz
                }
            }
            ScalarField::Indicator { .. } | ScalarField::Extremal(_) => Smoothness::Discontinuous,
            ScalarField::Scaled(f, _) | ScalarField::Shifted(f, _) => f.smoothness(),
            ScalarField::Custom(c) => c.smoothness,
        }
    }

    /// Analytic horizontal gradient where available.
    pub fn horizontal_gradient(&self, g: &GroupPoint) -> Option<Vec<f64>> {
        match self {
            ScalarField::Constant(_) => Some(vec![0.0; g.y.len()]),
            ScalarField::SmoothBump {
                center,
                radius,
                amplitude,
            } => {
                let n = bump_arg(center, *radius, g);
                if n >= 1.0 {
                    return Some(vec![0.0; g.y.len()]);
                }
                let local = center.inverse().compose(g);
                let outer = amplitude * (1.0 - 1.0 / (1.0 - n)).exp() * (-1.0 / (1.0 - n).powi(2));
                let r4 = radius.powi(4);
                Some(
                    quartic_gauge_gradient(&local)
                        .into_iter()
                        .map(|v| outer * v / r4)
                        .collect(),
                )
            }
            ScalarField::Scaled(f, c) => f.horizontal_gradient(g).map(|v| v.into_iter().map(|x| c * x).collect()),
            ScalarField::Shifted(f, _) => f.horizontal_gradient(g),
            _ => None,
        }
    }

    /// Upper bound for `sup |grad_H f|`, when known.
    pub fn gradient_bound(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(_) => Some(0.0),
            ScalarField::SmoothBump {
                center,
                radius,
                amplitude,
            } => Some(amplitude.abs() / radius * unit_bump_gradient_sup(center.dims())),
            ScalarField::Scaled(f, c) => f.gradient_bound().map(|v| v * c.abs()),
            ScalarField::Shifted(f, _) => f.gradient_bound(),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ScalarField::Constant(c) => format!("constant({c})"),
            ScalarField::SmoothBump {
                center,
                radius,
                amplitude,
            } => format!("smooth-bump(center={:?}, radius={radius}, amplitude={amplitude})", center.coords()),
            ScalarField::LogNorm => "log-hnorm".into(),
            ScalarField::PowerNorm(a) => format!("power-hnorm({a})"),
            ScalarField::Indicator { ball, amplitude } => format!(
                "indicator(center={:?}, radius={}, amplitude={amplitude})",
                ball.center.coords(),
                ball.radius
            ),
            ScalarField::Scaled(f, c) => format!("{c}*{}", f.describe()),
            ScalarField::Shifted(f, c) => format!("{}+{c}", f.describe()),
            ScalarField::Extremal(e) => format!(
                "extremal(ball radius={}, alpha={}, a0={})",
                e.ball.radius, e.alpha, e.a0
            ),
            ScalarField::Custom(c) => c.name.clone(),
        }
    }
}

fn bump_arg(center: &GroupPoint, radius: f64, g: &GroupPoint) -> f64 {
    let l = crate::heisenberg::rho(g, center);
    (l / radius).powi(4)
}

/// `Y_j (|y|^4 + |t|^2) = 4 |y|^2 y_j + 4 sum_alpha t_alpha sum_k b^alpha_{kj} y_k`.
pub fn quartic_gauge_gradient(g: &GroupPoint) -> Vec<f64> {
    let y2 = g.y_norm_sqr();
    let mut out = Vec::with_capacity(g.y.len());
    for block in g.y.chunks_exact(4) {
        for j in 0..4 {
            let mut v = 4.0 * y2 * block[j];
            for alpha in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += StructureMatrices::B[alpha][k][j] as f64 * block[k];
                }
                v += 4.0 * g.t[alpha] * s;
            }
            out.push(v);
        }
    }
    out
}

/// Sampled sup of `|grad_H b|` for the unit bump at the origin; cached.
pub fn unit_bump_gradient_sup(dims: GroupDims) -> f64 {
    static CACHE: OnceLock<std::sync::Mutex<std::collections::HashMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut m = cache.lock().expect("bump cache");
    *m.entry(dims.n()).or_insert_with(|| {
        let b = ScalarField::bump(GroupPoint::identity(dims), 1.0);
        let mut r = rng::stream(0xB0A1, dims.n() as u64);
        let mut best = 0.0f64;
        for _ in 0..200_000 {
            let g = sample_unit_ball(dims, &mut r);
            let v = b.horizontal_gradient(&g).expect("analytic");
            best = best.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        // head-room for the sampled sup
        1.05 * best
    })
}

/// `w(g) = scale ||g||^exponent`, optionally declared in `A_p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub scale: f64,
    pub exponent: f64,
    pub declared_p: Option<f64>,
}

impl Weight {
    pub fn unit() -> Self {
        Self::power(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self {
            scale: c,
            exponent: 0.0,
            declared_p: None,
        }
    }

    pub fn power(a: f64) -> Self {
        Self {
            scale: 1.0,
            exponent: a,
            declared_p: None,
        }
    }

    pub fn with_scale(self, c: f64) -> Self {
        Self { scale: self.scale * c, ..self }
    }

    pub fn declared(self, p: f64) -> Self {
        Self {
            declared_p: Some(p),
            ..self
        }
    }

    #[inline]
    pub fn eval(&self, g: &GroupPoint) -> f64 {
        if self.exponent == 0.0 {
            self.scale
        } else {
            self.scale * g.norm().powf(self.exponent)
        }
    }

    pub fn is_constant(&self) -> bool {
        self.exponent == 0.0
    }

    /// The origin for nonconstant power weights.
    pub fn singular_point(&self, dims: GroupDims) -> Option<GroupPoint> {
        (!self.is_constant()).then(|| GroupPoint::identity(dims))
    }

    /// `(-Q, Q(p-1))`, the power range in `A_p`.
    pub fn admissible_power_range(dims: GroupDims, p: f64) -> (f64, f64) {
        let q = dims.qf();
        (-q, q * (p - 1.0))
    }

    pub fn describe(&self) -> String {
        if self.is_constant() {
            format!("constant({})", self.scale)
        } else {
            format!("{}*hnorm^{}", self.scale, self.exponent)
        }
    }
}
