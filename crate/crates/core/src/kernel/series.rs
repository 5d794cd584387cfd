//! Exact rational term series in four real variables.
//!
//! A term `c * x1^a1 x2^a2 x3^a3 x4^a4 * r^{-2 beta}` with
//! `r^2 = x1^2 + x2^2 + x3^2 + x4^2`. Series are kept sorted by
//! `(beta, exponents)` with equal keys merged and zero terms dropped.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Term {
    pub coeff: BigRational,
    pub exponents: [u32; 4],
    pub beta: u32,
}

impl Term {
    pub fn new(coeff: BigRational, exponents: [u32; 4], beta: u32) -> Self {
        Self {
            coeff,
            exponents,
            beta,
        }
    }

    pub fn int(coeff: i64, exponents: [u32; 4], beta: u32) -> Self {
        Self::new(BigRational::from_integer(BigInt::from(coeff)), exponents, beta)
    }

    pub fn degree(&self) -> i64 {
        self.exponents.iter().map(|&a| a as i64).sum::<i64>() - 2 * self.beta as i64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TermSeries {
    terms: Vec<Term>,
}

impl TermSeries {
    /// Canonical series from arbitrary terms.
    pub fn from_terms(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut map: BTreeMap<(u32, [u32; 4]), BigRational> = BTreeMap::new();
        for t in terms {
            *map.entry((t.beta, t.exponents)).or_insert_with(BigRational::zero) += t.coeff;
        }
        let terms = map
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|((beta, exponents), coeff)| Term {
                coeff,
                exponents,
                beta,
            })
            .collect();
        Self { terms }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Common homogeneity degree, `None` for the zero series or a mixed one.
    pub fn degree(&self) -> Option<i64> {
        let d = self.terms.first()?.degree();
        self.terms.iter().all(|t| t.degree() == d).then_some(d)
    }

    /// Exact partial derivative along `axis` (1-based).
    pub fn differentiate(&self, axis: usize) -> Result<TermSeries> {
        if !(1..=4).contains(&axis) {
            return Err(invalid("axis", format!("expected 1..=4, got {axis}")));
        }
        let i = axis - 1;
        let mut out = Vec::with_capacity(2 * self.terms.len());
        for t in &self.terms {
            let a = t.exponents[i];
            if a > 0 {
                let mut e = t.exponents;
                e[i] -= 1;
                out.push(Term::new(&t.coeff * BigInt::from(a), e, t.beta));
            }
            if t.beta > 0 {
                let mut e = t.exponents;
                e[i] += 1;
                let f = BigInt::from(-2i64 * t.beta as i64);
                out.push(Term::new(&t.coeff * f, e, t.beta + 1));
            }
        }
        Ok(TermSeries::from_terms(out))
    }

    pub fn scale(&self, c: &BigRational) -> TermSeries {
        TermSeries::from_terms(self.terms.iter().map(|t| Term {
            coeff: &t.coeff * c,
            ..t.clone()
        }))
    }

    /// Direct (slow) evaluation, used as a cross-check of the compiled form.
    pub fn eval_f64(&self, x: &[f64; 4]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        self.terms
            .iter()
            .map(|t| {
                let mut v = t.coeff.to_f64().unwrap_or(f64::NAN);
                for k in 0..4 {
                    v *= x[k].powi(t.exponents[k] as i32);
                }
                v / r2.powi(t.beta as i32)
            })
            .sum()
    }

    pub fn compile(&self) -> CompiledSeries {
        CompiledSeries::new(self)
    }

    pub fn to_canonical(&self) -> CanonicalSeries {
        CanonicalSeries {
            terms: self
                .terms
                .iter()
                .map(|t| CanonicalTerm {
                    numerator: t.coeff.numer().to_string(),
                    denominator: t.coeff.denom().to_string(),
                    exponents: t.exponents,
                    beta: t.beta,
                })
                .collect(),
        }
    }

    pub fn from_canonical(c: &CanonicalSeries) -> Result<TermSeries> {
        let mut terms = Vec::with_capacity(c.terms.len());
        for t in &c.terms {
            let num: BigInt = t
                .numerator
                .parse()
                .map_err(|_| invalid("numerator", t.numerator.clone()))?;
            let den: BigInt = t
                .denominator
                .parse()
                .map_err(|_| invalid("denominator", t.denominator.clone()))?;
            if den.is_zero() {
                return Err(invalid("denominator", "zero"));
            }
            terms.push(Term::new(BigRational::new(num, den), t.exponents, t.beta));
        }
        Ok(TermSeries::from_terms(terms))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_canonical()).expect("series serializes")
    }

    pub fn from_json(s: &str) -> Result<TermSeries> {
        let c: CanonicalSeries = serde_json::from_str(s)?;
        Self::from_canonical(&c)
    }
}

impl std::fmt::Display for TermSeries {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, t) in self.terms.iter().enumerate() {
            let c = &t.coeff;
            if k > 0 {
                write!(f, " {} ", if c.is_negative() { '-' } else { '+' })?;
                write!(f, "{}", c.abs())?;
            } else {
                write!(f, "{c}")?;
            }
            for (i, &a) in t.exponents.iter().enumerate() {
                match a {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{a}", i + 1)?,
                }
            }
            if t.beta > 0 {
                write!(f, "*r^-{}", 2 * t.beta)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalTerm {
    pub numerator: String,
    pub denominator: String,
    pub exponents: [u32; 4],
    pub beta: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSeries {
    pub terms: Vec<CanonicalTerm>,
}

/// The four components of `conj(sigma) / |sigma|^4`.
pub fn seed_series() -> [TermSeries; 4] {
    let one = |sign: i64, axis: usize| {
        let mut e = [0; 4];
        e[axis] = 1;
        TermSeries::from_terms([Term::int(sign, e, 2)])
    };
    [one(1, 0), one(-1, 1), one(-1, 2), one(-1, 3)]
}

/// Float copy of a series with power tables sized to its exponents.
#[derive(Clone, Debug)]
pub struct CompiledSeries {
    coeffs: Vec<f64>,
    exps: Vec<[u8; 4]>,
    betas: Vec<u8>,
    max_exp: usize,
    max_beta: usize,
}

pub(crate) const MAX_POW: usize = 24;

impl CompiledSeries {
    fn new(s: &TermSeries) -> Self {
        let mut c = CompiledSeries {
            coeffs: Vec::new(),
            exps: Vec::new(),
            betas: Vec::new(),
            max_exp: 0,
            max_beta: 0,
        };
        for t in s.terms() {
            assert!(
                t.exponents.iter().all(|&a| (a as usize) < MAX_POW) && (t.beta as usize) < MAX_POW,
                "series order exceeds compiled power table"
            );
            c.coeffs.push(t.coeff.to_f64().expect("finite coefficient"));
            c.exps.push(t.exponents.map(|a| a as u8));
            c.betas.push(t.beta as u8);
            c.max_exp = c.max_exp.max(*t.exponents.iter().max().unwrap() as usize);
            c.max_beta = c.max_beta.max(t.beta as usize);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        let pw = Powers::new(x, self.max_exp, self.max_beta);
        self.eval_with(&pw)
    }

    #[inline]
    pub(crate) fn eval_with(&self, pw: &Powers) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.coeffs.len() {
            let e = self.exps[k];
            acc += self.coeffs[k]
                * pw.x[0][e[0] as usize]
                * pw.x[1][e[1] as usize]
                * pw.x[2][e[2] as usize]
                * pw.x[3][e[3] as usize]
                * pw.inv_r2[self.betas[k] as usize];
        }
        acc
    }

    pub(crate) fn max_exp(&self) -> usize {
        self.max_exp
    }

    pub(crate) fn max_beta(&self) -> usize {
        self.max_beta
    }
}

/// Shared power tables `x_i^k` and `r^{-2k}`.
pub(crate) struct Powers {
    pub x: [[f64; MAX_POW]; 4],
    pub inv_r2: [f64; MAX_POW],
}

impl Powers {
    pub fn new(x: &[f64; 4], max_exp: usize, max_beta: usize) -> Self {
        let mut p = Powers {
            x: [[0.0; MAX_POW]; 4],
            inv_r2: [0.0; MAX_POW],
        };
        for i in 0..4 {
            p.x[i][0] = 1.0;
            for k in 1..=max_exp {
                p.x[i][k] = p.x[i][k - 1] * x[i];
            }
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let inv = 1.0 / r2;
        p.inv_r2[0] = 1.0;
        for k in 1..=max_beta {
            p.inv_r2[k] = p.inv_r2[k - 1] * inv;
        }
        p
    }
}

pub(crate) fn rational_from_f64(c: f64) -> Result<BigRational> {
    BigRational::from_float(c).ok_or_else(|| invalid("c", format!("not finite: {c}")))
}

pub(crate) fn is_one(c: &BigRational) -> bool {
    c.is_one()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(n))
    }

    #[test]
    fn seed_values_and_degree() {
        let s = seed_series();
        assert_eq!(s[0].eval_f64(&[1.0, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(s[1].eval_f64(&[0.0, 1.0, 0.0, 0.0]), -1.0);
        for c in &s {
            assert_eq!(c.degree(), Some(-3));
        }
    }

    #[test]
    fn hand_derivatives() {
        let s = seed_series();
        let d = s[0].differentiate(1).unwrap();
        let expect = TermSeries::from_terms([Term::int(1, [0; 4], 2), Term::int(-4, [2, 0, 0, 0], 3)]);
        assert_eq!(d, expect);
        let inv4 = TermSeries::from_terms([Term::int(1, [0; 4], 2)]);
        let d = inv4.differentiate(2).unwrap();
        assert_eq!(d, TermSeries::from_terms([Term::int(-4, [0, 1, 0, 0], 3)]));
        let d = TermSeries::from_terms([Term::int(2, [0; 4], 2)]).differentiate(2).unwrap();
        assert_eq!(d, TermSeries::from_terms([Term::int(-8, [0, 1, 0, 0], 3)]));
        assert!(inv4.differentiate(0).is_err());
        assert!(inv4.differentiate(5).is_err());
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let seed = seed_series();
        let x = [1.0, 0.2, -0.3, 0.4];
        let h = 1e-4;
        for comp in 0..4 {
            for (a1, a2) in [(1, 1), (1, 3), (2, 4)] {
                let d2 = seed[comp].differentiate(a1).unwrap().differentiate(a2).unwrap();
                let f = |dx1: f64, dx2: f64| {
                    let mut p = x;
                    p[a1 - 1] += dx1;
                    p[a2 - 1] += dx2;
                    seed[comp].eval_f64(&p)
                };
                let fd = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
                let exact = d2.eval_f64(&x);
                assert!(
                    (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                    "comp {comp} axes {a1}{a2}: {fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn differentiation_lowers_degree_and_canonicalizes() {
        let mut s = seed_series()[2].clone();
        for k in 0..4 {
            s = s.differentiate(1 + k % 4).unwrap();
            assert_eq!(s.degree(), Some(-3 - (k as i64 + 1)));
            let terms = s.terms();
            for w in terms.windows(2) {
                assert!((w[0].beta, w[0].exponents) < (w[1].beta, w[1].exponents));
            }
        }
        let merged = TermSeries::from_terms([Term::int(1, [1, 0, 0, 0], 1), Term::int(-1, [1, 0, 0, 0], 1)]);
        assert!(merged.is_zero());
    }

    #[test]
    fn canonical_json_roundtrip() {
        let s = seed_series()[0]
            .differentiate(1)
            .unwrap()
            .scale(&BigRational::new(BigInt::from(-3), BigInt::from(7)));
        let j = s.to_json();
        assert!(j.contains("\"numerator\":\"-3\""));
        assert!(j.contains("\"denominator\":\"7\""));
        assert_eq!(TermSeries::from_json(&j).unwrap(), s);
        assert_eq!(j, TermSeries::from_json(&j).unwrap().to_json());
    }

    #[test]
    fn compiled_agrees_with_direct() {
        let mut s = seed_series()[1].clone();
        s = s.differentiate(1).unwrap().differentiate(3).unwrap().scale(&r(5));
        let c = s.compile();
        for x in [[1.0, 0.2, -0.3, 0.4], [0.1, 2.0, 0.0, -1.0]] {
            let a = c.eval(&x);
            let b = s.eval_f64(&x);
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn display_is_readable() {
        let d = seed_series()[0].differentiate(1).unwrap();
        assert_eq!(d.to_string(), "1*r^-4 - 4*x1^2*r^-6");
    }
}
