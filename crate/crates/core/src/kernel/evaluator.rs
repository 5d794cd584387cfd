use num_rational::BigRational;

use crate::error::{invalid, Error, Result};
use crate::heisenberg::{im_sum, GroupDims, GroupPoint};
use crate::quaternion::{Quat, StructureMatrices};

use super::cutoff::SmoothCutoff;
use super::series::{is_one, rational_from_f64, seed_series, CompiledSeries, Powers, TermSeries};

/// Kernels are refused below this homogeneous norm (times `singular_scale`).
pub const SINGULAR_TOL: f64 = 1e-12;

/// Symbolic kernel `s = c * d^{2(n-1)}/dx1^{2(n-1)} (conj(sigma)/|sigma|^4)`
/// with compiled float copies of the components and their first partials.
#[derive(Clone, Debug)]
pub struct KernelEvaluator {
    dims: GroupDims,
    c: f64,
    components: [TermSeries; 4],
    /// `partials[i][comp]` is `d/dx_{i+1}` of component `comp`.
    partials: [[TermSeries; 4]; 4],
    compiled: [CompiledSeries; 4],
    compiled_partials: [[CompiledSeries; 4]; 4],
    max_exp: usize,
    max_beta: usize,
    max_exp_d: usize,
    max_beta_d: usize,
    pub singular_scale: f64,
}

pub fn build_kernel(dims: GroupDims, c: f64) -> Result<KernelEvaluator> {
    if !c.is_finite() || c == 0.0 {
        return Err(invalid("c", format!("normalization must be finite and nonzero, got {c}")));
    }
    let c_exact: BigRational = rational_from_f64(c)?;
    let mut comps = seed_series();
    for _ in 0..2 * (dims.n() - 1) {
        for s in comps.iter_mut() {
            *s = s.differentiate(1)?;
        }
    }
    if !is_one(&c_exact) {
        for s in comps.iter_mut() {
            *s = s.scale(&c_exact);
        }
    }
    let partials: [[TermSeries; 4]; 4] = std::array::from_fn(|i| {
        std::array::from_fn(|k| comps[k].differentiate(i + 1).expect("axis in range"))
    });
    let compiled: [CompiledSeries; 4] = std::array::from_fn(|k| comps[k].compile());
    let compiled_partials: [[CompiledSeries; 4]; 4] =
        std::array::from_fn(|i| std::array::from_fn(|k| partials[i][k].compile()));
    let max_exp = compiled.iter().map(|s| s.max_exp()).max().unwrap_or(0);
    let max_beta = compiled.iter().map(|s| s.max_beta()).max().unwrap_or(0);
    let max_exp_d = compiled_partials.iter().flatten().map(|s| s.max_exp()).max().unwrap_or(0);
    let max_beta_d = compiled_partials.iter().flatten().map(|s| s.max_beta()).max().unwrap_or(0);
    Ok(KernelEvaluator {
        dims,
        c,
        components: comps,
        partials,
        compiled,
        compiled_partials,
        max_exp,
        max_beta,
        max_exp_d,
        max_beta_d,
        singular_scale: 1.0,
    })
}

impl KernelEvaluator {
    pub fn dims(&self) -> GroupDims {
        self.dims
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn components(&self) -> &[TermSeries; 4] {
        &self.components
    }

    pub fn partial_series(&self, axis: usize) -> &[TermSeries; 4] {
        &self.partials[axis - 1]
    }

    /// Canonical JSON of the four component series.
    pub fn to_json(&self) -> String {
        let v: Vec<_> = self.components.iter().map(|s| s.to_canonical()).collect();
        serde_json::to_string(&v).expect("series serialize")
    }

    /// `s(sigma)` for `sigma = x1 + x2 i + x3 j + x4 k`.
    #[inline]
    pub fn eval_s(&self, x: &[f64; 4]) -> Quat {
        let pw = Powers::new(x, self.max_exp, self.max_beta);
        Quat::new(
            self.compiled[0].eval_with(&pw),
            self.compiled[1].eval_with(&pw),
            self.compiled[2].eval_with(&pw),
            self.compiled[3].eval_with(&pw),
        )
    }

    /// `[d s / d x_1, ..., d s / d x_4]`.
    pub fn eval_s_partials(&self, x: &[f64; 4]) -> [Quat; 4] {
        let pw = Powers::new(x, self.max_exp_d, self.max_beta_d);
        std::array::from_fn(|i| {
            let p = &self.compiled_partials[i];
            Quat::new(
                p[0].eval_with(&pw),
                p[1].eval_with(&pw),
                p[2].eval_with(&pw),
                p[3].eval_with(&pw),
            )
        })
    }

    fn check_point(&self, g: &GroupPoint) -> Result<()> {
        if g.y.len() != self.dims.y_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dims.ambient(),
                got: 3 + g.y.len(),
            });
        }
        let nrm = g.norm();
        if !(nrm >= SINGULAR_TOL * self.singular_scale) {
            return Err(Error::Singularity { norm: nrm });
        }
        Ok(())
    }

    /// `K(g) = s(|y|^2 + t)`.
    pub fn eval_k(&self, g: &GroupPoint) -> Result<Quat> {
        self.check_point(g)?;
        Ok(self.k_unchecked(g))
    }

    #[inline]
    pub fn k_unchecked(&self, g: &GroupPoint) -> Quat {
        self.eval_s(&[g.y_norm_sqr(), g.t[0], g.t[1], g.t[2]])
    }

    /// `K_eps(g) = s(|y|^2 + eps + t)`, finite everywhere.
    pub fn eval_k_eps(&self, g: &GroupPoint, eps: f64) -> Result<Quat> {
        if !(eps > 0.0) {
            return Err(invalid("eps", format!("must be positive, got {eps}")));
        }
        Ok(self.eval_s(&[g.y_norm_sqr() + eps, g.t[0], g.t[1], g.t[2]]))
    }

    /// `K(g, h) = K(h^{-1} g)` together with `rho(g, h)`, without the
    /// singularity check.
    #[inline]
    pub fn k_pair(&self, g: &GroupPoint, h: &GroupPoint) -> (Quat, f64) {
        let im = im_sum(&h.y, &g.y);
        let t = [
            g.t[0] - h.t[0] - 2.0 * im[0],
            g.t[1] - h.t[1] - 2.0 * im[1],
            g.t[2] - h.t[2] - 2.0 * im[2],
        ];
        let y2: f64 = g.y.iter().zip(&h.y).map(|(a, b)| (a - b) * (a - b)).sum();
        let rho = (y2 * y2 + t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt().sqrt();
        (self.eval_s(&[y2, t[0], t[1], t[2]]), rho)
    }

    pub fn eval_k_pair(&self, g: &GroupPoint, h: &GroupPoint) -> Result<Quat> {
        self.eval_k(&h.inverse().compose(g))
    }

    /// `K_eta(g, u) = K(u^{-1} g) phi(rho(g, u) / eta)`.
    pub fn eval_k_eta(
        &self,
        cutoff: &SmoothCutoff,
        g: &GroupPoint,
        u: &GroupPoint,
        eta: f64,
    ) -> Result<Quat> {
        if !(eta > 0.0) {
            return Err(invalid("eta", format!("must be positive, got {eta}")));
        }
        if g.y.len() != u.y.len() {
            return Err(Error::DimensionMismatch {
                expected: 3 + g.y.len(),
                got: 3 + u.y.len(),
            });
        }
        Ok(self.k_eta_unchecked(cutoff, g, u, eta))
    }

    #[inline]
    pub fn k_eta_unchecked(&self, cutoff: &SmoothCutoff, g: &GroupPoint, u: &GroupPoint, eta: f64) -> Quat {
        let d = crate::heisenberg::rho(g, u);
        let f = cutoff.phi(d / eta);
        if f == 0.0 {
            return Quat::ZERO;
        }
        let (k, _) = self.k_pair(g, u);
        if f == 1.0 {
            k
        } else {
            k.scale(f)
        }
    }

    /// `Y_m K(g)` for `m = 0..4(n-1)`.
    pub fn horizontal_gradient(&self, g: &GroupPoint) -> Result<Vec<Quat>> {
        self.check_point(g)?;
        Ok(self.horizontal_gradient_unchecked(g))
    }

    pub fn horizontal_gradient_unchecked(&self, g: &GroupPoint) -> Vec<Quat> {
        let ds = self.eval_s_partials(&[g.y_norm_sqr(), g.t[0], g.t[1], g.t[2]]);
        let mut out = Vec::with_capacity(g.y.len());
        for block in g.y.chunks_exact(4) {
            for j in 0..4 {
                let mut v = ds[0].scale(2.0 * block[j]);
                for alpha in 0..3 {
                    let mut w = 0.0;
                    for k in 0..4 {
                        w += StructureMatrices::B[alpha][k][j] as f64 * block[k];
                    }
                    if w != 0.0 {
                        v = v + ds[1 + alpha].scale(2.0 * w);
                    }
                }
                out.push(v);
            }
        }
        out
    }
}
