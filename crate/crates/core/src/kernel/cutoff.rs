use serde::{Deserialize, Serialize};

/// Smooth step: 0 on `(-inf, 1/2]`, 1 on `[1, inf)`, built from
/// `h(s) = exp(-1/s)` on the transition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothCutoff;

fn h(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

pub fn cutoff_phi(t: f64) -> f64 {
    if t <= 0.5 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = h(2.0 * t - 1.0);
        let b = h(2.0 - 2.0 * t);
        a / (a + b)
    }
}

impl SmoothCutoff {
    #[inline]
    pub fn phi(&self, t: f64) -> f64 {
        cutoff_phi(t)
    }

    pub fn name(&self) -> &'static str {
        "exp-step: h(2t-1)/(h(2t-1)+h(2-2t)), h(s)=exp(-1/s)"
    }
}
