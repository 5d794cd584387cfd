use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::{MorreyParams, ScalarField, Weight};
use crate::error::{Error, Result};
use crate::heisenberg::{Ball, FamilySpec, GroupDims, GroupPoint};

use super::SCENARIOS;

/// One scenario run. Every section has defaults, so an empty document is
/// a valid configuration; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Normalization constant of the kernel.
    pub kernel_c: f64,
    /// Truncation radius of the commutator images.
    pub eta: f64,
    /// Outer truncation radii of the gap scenario.
    pub eta_grid: Vec<f64>,
    /// Multiplies every sample budget.
    pub budget_scale: f64,
    /// Accept power weights outside the `A_p` range.
    pub allow_divergent_weight: bool,
    pub morrey: MorreySpec,
    pub weight: WeightSpec,
    /// Symbol of the commutator; when absent each scenario runs its own
    /// contrasting pair.
    pub b: Option<FieldSpec>,
    /// Test functions; when empty each scenario builds its own family.
    pub f: Vec<IndicatorSpec>,
    pub family: FamilySpec,
    pub budgets: Budgets,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: String::new(),
            n: 2,
            seed: 1,
            out: PathBuf::from("runs"),
            kernel_c: 1.0,
            eta: 0.1,
            eta_grid: vec![0.2, 0.1, 0.05],
            budget_scale: 1.0,
            allow_divergent_weight: false,
            morrey: MorreySpec::default(),
            weight: WeightSpec::Power { a: 2.0 },
            b: None,
            f: Vec::new(),
            family: FamilySpec::default(),
            budgets: Budgets::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorreySpec {
    pub p: f64,
    pub kappa: f64,
}

impl Default for MorreySpec {
    fn default() -> Self {
        Self { p: 2.0, kappa: 0.5 }
    }
}

impl MorreySpec {
    pub fn params(&self) -> Result<MorreyParams> {
        MorreyParams::new(self.p, self.kappa)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    Unit,
    Power { a: f64 },
}

impl WeightSpec {
    pub fn build(&self) -> Weight {
        match *self {
            WeightSpec::Unit => Weight::unit(),
            WeightSpec::Power { a } => Weight::power(a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    SmoothBump { center: Vec<f64>, radius: f64 },
    LogHnorm {},
    PowerHnorm { a: f64 },
}

/// What the theory predicts for a symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolClass {
    /// In VMO (hence in BMO).
    Vanishing,
    /// In BMO, not in VMO.
    Bounded,
    /// Not in BMO.
    Unbounded,
}

impl FieldSpec {
    pub fn build(&self, dims: GroupDims) -> Result<ScalarField> {
        Ok(match self {
            FieldSpec::Constant { value } => ScalarField::Constant(*value),
            FieldSpec::SmoothBump { center, radius } => ScalarField::bump(point(dims, center)?, *radius),
            FieldSpec::LogHnorm {} => ScalarField::LogNorm,
            FieldSpec::PowerHnorm { a } => ScalarField::PowerNorm(*a),
        })
    }

    pub fn class(&self) -> SymbolClass {
        match self {
            FieldSpec::Constant { .. } | FieldSpec::SmoothBump { .. } => SymbolClass::Vanishing,
            FieldSpec::LogHnorm {} => SymbolClass::Bounded,
            FieldSpec::PowerHnorm { a } if *a == 0.0 => SymbolClass::Vanishing,
            FieldSpec::PowerHnorm { .. } => SymbolClass::Unbounded,
        }
    }

    pub fn label(&self) -> String {
        match self {
            FieldSpec::Constant { value } => format!("constant({value})"),
            FieldSpec::SmoothBump { radius, .. } => format!("smooth-bump(r={radius})"),
            FieldSpec::LogHnorm {} => "log-hnorm".into(),
            FieldSpec::PowerHnorm { a } => format!("power-hnorm({a})"),
        }
    }

    pub fn origin_bump(dims: GroupDims, radius: f64) -> FieldSpec {
        FieldSpec::SmoothBump {
            center: vec![0.0; dims.ambient()],
            radius,
        }
    }
}

/// `amplitude` times the indicator of `B(center, radius)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl IndicatorSpec {
    pub fn build(&self, dims: GroupDims) -> Result<ScalarField> {
        let ball = Ball::new(point(dims, &self.center)?, self.radius)?;
        Ok(ScalarField::indicator(ball).scaled(self.amplitude))
    }
}

fn point(dims: GroupDims, coords: &[f64]) -> Result<GroupPoint> {
    if coords.len() != dims.ambient() {
        return Err(Error::DimensionMismatch {
            expected: dims.ambient(),
            got: coords.len(),
        });
    }
    GroupPoint::from_coords(coords)
}

/// Sample budgets, before `budget_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    /// Random instances for the algebra identities.
    pub algebra_instances: usize,
    /// Random `(r, g)` pairs for the homogeneity identities.
    pub homogeneity_instances: usize,
    /// Unit-sphere samples of each sup scan (the half budget is compared).
    pub sup_samples: usize,
    /// Balls in the sign-constancy scan.
    pub sign_balls: usize,
    /// Samples per ball in the ball estimators.
    pub estimator_samples: usize,
    /// Source samples per commutator evaluation.
    pub quadrature_samples: usize,
    /// Target samples per evaluation ball.
    pub targets: usize,
    /// Random `(b, B0)` pairs in the median-split checks.
    pub f0_trials: usize,
    /// Quasi-triangle triples.
    pub triangle_samples: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            algebra_instances: 100_000,
            homogeneity_instances: 10_000,
            sup_samples: 1_000_000,
            sign_balls: 100,
            estimator_samples: 4000,
            quadrature_samples: 1000,
            targets: 256,
            f0_trials: 50,
            triangle_samples: 200_000,
        }
    }
}

/// A budget after scaling, never below `floor`.
pub(crate) fn scaled(count: usize, scale: f64, floor: usize) -> usize {
    ((count as f64 * scale).round() as usize).max(floor)
}

impl RunConfig {
    pub fn dims(&self) -> Result<GroupDims> {
        GroupDims::new(self.n)
    }

    pub fn budget(&self, count: usize, floor: usize) -> usize {
        scaled(count, self.budget_scale, floor)
    }

    /// Range checks; every violation is reported with its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.scenario.is_empty() && !SCENARIOS.contains(&self.scenario.as_str()) {
            v.push(format!("scenario: unknown scenario `{}`", self.scenario));
        }
        if self.n < 2 {
            v.push(format!("n: n≥2 required, got {}", self.n));
        }
        if !(self.morrey.p > 1.0 && self.morrey.p.is_finite()) {
            v.push(format!("morrey.p: p>1 required, got {}", self.morrey.p));
        }
        if !(self.morrey.kappa > 0.0 && self.morrey.kappa < 1.0) {
            v.push(format!("morrey.kappa: κ∈(0,1) required, got {}", self.morrey.kappa));
        }
        if !(self.kernel_c > 0.0 && self.kernel_c.is_finite()) {
            v.push(format!("kernel_c: must be positive, got {}", self.kernel_c));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            v.push(format!("eta: must be positive, got {}", self.eta));
        }
        if self.eta_grid.is_empty() {
            v.push("eta_grid: at least one value required".into());
        }
        for (i, e) in self.eta_grid.iter().enumerate() {
            if !(*e > 0.0 && e.is_finite()) {
                v.push(format!("eta_grid[{i}]: must be positive, got {e}"));
            }
        }
        if !(self.budget_scale > 0.0 && self.budget_scale.is_finite()) {
            v.push(format!("budget_scale: must be positive, got {}", self.budget_scale));
        }
        let ambient = 4 * self.n.max(1) - 1;
        if let WeightSpec::Power { a } = self.weight {
            if self.n >= 2 && self.morrey.p > 1.0 {
                let (lo, hi) = Weight::admissible_power_range(GroupDims::new(self.n).expect("n>=2"), self.morrey.p);
                if !a.is_finite() {
                    v.push(format!("weight.a: must be finite, got {a}"));
                } else if !(a > lo && a < hi) && !self.allow_divergent_weight {
                    v.push(format!(
                        "weight.a: a∈({lo},{hi}) required for an A_p weight, got {a} (set allow_divergent_weight to probe divergence)"
                    ));
                }
            }
        }
        match &self.b {
            Some(FieldSpec::SmoothBump { center, radius }) => {
                if center.len() != ambient {
                    v.push(format!("b.center: {ambient} coordinates required, got {}", center.len()));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    v.push(format!("b.radius: must be positive, got {radius}"));
                }
            }
            Some(FieldSpec::PowerHnorm { a }) if !a.is_finite() => v.push(format!("b.a: must be finite, got {a}")),
            Some(FieldSpec::Constant { value }) if !value.is_finite() => {
                v.push(format!("b.value: must be finite, got {value}"))
            }
            _ => {}
        }
        for (i, f) in self.f.iter().enumerate() {
            if f.center.len() != ambient {
                v.push(format!("f[{i}].center: {ambient} coordinates required, got {}", f.center.len()));
            }
            if !(f.radius > 0.0 && f.radius.is_finite()) {
                v.push(format!("f[{i}].radius: must be positive, got {}", f.radius));
            }
            if !f.amplitude.is_finite() {
                v.push(format!("f[{i}].amplitude: must be finite, got {}", f.amplitude));
            }
        }
        let fam = &self.family;
        if !(fam.radius_min > 0.0 && fam.radius_max >= fam.radius_min) {
            v.push(format!(
                "family.radius_min: 0 < radius_min <= radius_max required, got {} and {}",
                fam.radius_min, fam.radius_max
            ));
        }
        if fam.radius_count == 0 {
            v.push("family.radius_count: must be positive".into());
        }
        for (i, c) in fam.centers.iter().enumerate() {
            if c.len() != ambient {
                v.push(format!("family.centers[{i}]: {ambient} coordinates required, got {}", c.len()));
            }
        }
        let b = &self.budgets;
        for (name, val) in [
            ("algebra_instances", b.algebra_instances),
            ("homogeneity_instances", b.homogeneity_instances),
            ("sup_samples", b.sup_samples),
            ("sign_balls", b.sign_balls),
            ("estimator_samples", b.estimator_samples),
            ("quadrature_samples", b.quadrature_samples),
            ("targets", b.targets),
            ("f0_trials", b.f0_trials),
            ("triangle_samples", b.triangle_samples),
        ] {
            if val == 0 {
                v.push(format!("budgets.{name}: must be positive"));
            }
        }
        v
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses and range-checks a configuration document.
pub fn validate_config(raw: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(raw).map_err(|e| Error::MalformedConfig(e.to_string()))?;
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let c = validate_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        let again = validate_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn sections_parse() {
        let raw = r#"
scenario = "truncation-gap"
seed = 7
eta_grid = [0.1]

[morrey]
p = 3.0

[weight]
kind = "unit"

[b]
kind = "smooth-bump"
center = [0, 0, 0, 0, 0, 0, 0]
radius = 2.0

[[f]]
center = [0, 0, 0, 1, 0, 0, 0]
radius = 0.5

[budgets]
targets = 64
"#;
        let c = validate_config(raw).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.morrey.p, 3.0);
        assert_eq!(c.morrey.kappa, 0.5);
        assert_eq!(c.weight, WeightSpec::Unit);
        assert_eq!(c.b.as_ref().unwrap().class(), SymbolClass::Vanishing);
        assert_eq!(c.f[0].amplitude, 1.0);
        assert_eq!(c.budgets.targets, 64);
        assert_eq!(c.budgets.sign_balls, 100);
        assert_eq!(validate_config(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn range_violations_name_the_field() {
        let e = validate_config("[morrey]\nkappa = 1.0").unwrap_err();
        assert!(e.to_string().contains("morrey.kappa: κ∈(0,1)"), "{e}");
        let e = validate_config("[morrey]\np = 1.0").unwrap_err();
        assert!(e.to_string().contains("morrey.p"), "{e}");
        let e = validate_config("n = 1").unwrap_err();
        assert!(e.to_string().contains("n: n≥2"), "{e}");
        let e = validate_config("[weight]\nkind = \"power\"\na = 10.5").unwrap_err();
        assert!(e.to_string().contains("weight.a"), "{e}");
        assert!(validate_config("allow_divergent_weight = true\n[weight]\nkind = \"power\"\na = 10.5").is_ok());
        let e = validate_config("[[f]]\ncenter = [0, 0]\nradius = -1").unwrap_err();
        let s = e.to_string();
        assert!(s.contains("f[0].center") && s.contains("f[0].radius"), "{s}");
        let e = validate_config("scenario = \"nope\"").unwrap_err();
        assert!(e.to_string().contains("scenario"), "{e}");
    }

    #[test]
    fn malformed_and_unknown_keys_are_rejected() {
        assert!(matches!(validate_config("seed = "), Err(Error::MalformedConfig(_))));
        assert!(matches!(validate_config("sed = 3"), Err(Error::MalformedConfig(_))));
        assert!(matches!(validate_config("[morrey]\nkapa = 0.5"), Err(Error::MalformedConfig(_))));
        assert!(matches!(
            validate_config("[b]\nkind = \"log-hnorm\"\nradius = 1"),
            Err(Error::MalformedConfig(_))
        ));
    }

    #[test]
    fn budgets_scale_with_a_floor() {
        let c = RunConfig {
            budget_scale: 0.01,
            ..RunConfig::default()
        };
        assert_eq!(c.budget(1000, 1), 10);
        assert_eq!(c.budget(10, 4), 4);
    }
}
