//! Quaternion algebra over a generic scalar ring.
//!
//! Floats are used at runtime; exact rationals back the symbolic kernel
//! engine and the small algebra tests. The layout is four named reals,
//! `x = x1 + x2 i + x3 j + x4 k`.

use std::ops::{Add, Mul, Neg, Sub};

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub x1: T,
    pub x2: T,
    pub x3: T,
    pub x4: T,
}

/// Runtime quaternion.
pub type Quat = Quaternion<f64>;

impl<T> Quaternion<T> {
    pub const fn new(x1: T, x2: T, x3: T, x4: T) -> Self {
        Self { x1, x2, x3, x4 }
    }
}

impl<T: Clone> Quaternion<T> {
    pub fn to_array(&self) -> [T; 4] {
        [
            self.x1.clone(),
            self.x2.clone(),
            self.x3.clone(),
            self.x4.clone(),
        ]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        let [x1, x2, x3, x4] = a;
        Self { x1, x2, x3, x4 }
    }
}

impl<T> Quaternion<T>
where
    T: Clone + Zero + Neg<Output = T>,
{
    /// Quaternion conjugate: negates the imaginary parts.
    pub fn conj(&self) -> Self {
        Self::new(
            self.x1.clone(),
            -self.x2.clone(),
            -self.x3.clone(),
            -self.x4.clone(),
        )
    }

    /// The imaginary part `(x2, x3, x4)` as a 3-vector.
    pub fn im(&self) -> [T; 3] {
        [self.x2.clone(), self.x3.clone(), self.x4.clone()]
    }

    pub fn real(x: T) -> Self {
        Self::new(x, T::zero(), T::zero(), T::zero())
    }
}

impl<T> Quaternion<T>
where
    T: Clone + Add<Output = T> + Mul<Output = T>,
{
    /// `|x|^2 = x * conj(x)`.
    pub fn norm_sqr(&self) -> T {
        self.x1.clone() * self.x1.clone()
            + self.x2.clone() * self.x2.clone()
            + self.x3.clone() * self.x3.clone()
            + self.x4.clone() * self.x4.clone()
    }
}

impl Quat {
    pub const ZERO: Quat = Quat::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quat = Quat::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quat = Quat::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quat = Quat::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quat = Quat::new(0.0, 0.0, 0.0, 1.0);

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: f64) -> Quat {
        Quat::new(self.x1 * s, self.x2 * s, self.x3 * s, self.x4 * s)
    }
}

/// Hamilton product, expanded coordinatewise.
pub fn qmul<T>(x: &Quaternion<T>, y: &Quaternion<T>) -> Quaternion<T>
where
    T: Clone + Add<Output = T> + Sub<Output = T> + Mul<Output = T>,
{
    let (a1, a2, a3, a4) = (&x.x1, &x.x2, &x.x3, &x.x4);
    let (b1, b2, b3, b4) = (&y.x1, &y.x2, &y.x3, &y.x4);
    let m = |p: &T, q: &T| p.clone() * q.clone();
    Quaternion::new(
        m(a1, b1) - m(a2, b2) - m(a3, b3) - m(a4, b4),
        m(a1, b2) + m(a2, b1) + m(a3, b4) - m(a4, b3),
        m(a1, b3) - m(a2, b4) + m(a3, b1) + m(a4, b2),
        m(a1, b4) + m(a2, b3) - m(a3, b2) + m(a4, b1),
    )
}

pub fn conj<T>(x: &Quaternion<T>) -> Quaternion<T>
where
    T: Clone + Zero + Neg<Output = T>,
{
    x.conj()
}

impl<T> Add for Quaternion<T>
where
    T: Add<Output = T>,
{
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x1 + o.x1, self.x2 + o.x2, self.x3 + o.x3, self.x4 + o.x4)
    }
}

impl<T> Sub for Quaternion<T>
where
    T: Sub<Output = T>,
{
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x1 - o.x1, self.x2 - o.x2, self.x3 - o.x3, self.x4 - o.x4)
    }
}

impl<T> Neg for Quaternion<T>
where
    T: Neg<Output = T>,
{
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x1, -self.x2, -self.x3, -self.x4)
    }
}

impl<T> Mul for Quaternion<T>
where
    T: Clone + Add<Output = T> + Sub<Output = T> + Mul<Output = T>,
{
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        qmul(&self, &o)
    }
}

/// The three antisymmetric matrices `b^alpha` with
/// `Im(conj(x) x') = sum_alpha sum_{k,j} b^alpha_{kj} x_k x'_j i_alpha`.
pub struct StructureMatrices;

impl StructureMatrices {
    /// `B[alpha][k][j]`, zero-based.
    pub const B: [[[i8; 4]; 4]; 3] = [
        [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
        [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]],
        [[0, 0, 0, 1], [0, 0, -1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]],
    ];

    pub fn entry(alpha: usize, k: usize, j: usize) -> i8 {
        Self::B[alpha][k][j]
    }

    /// `Im(conj(x) x')` through the matrix expansion (float).
    pub fn im_pair(x: &[f64; 4], xp: &[f64; 4]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (alpha, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..4 {
                for j in 0..4 {
                    let b = Self::B[alpha][k][j];
                    if b != 0 {
                        acc += f64::from(b) * x[k] * xp[j];
                    }
                }
            }
            *o = acc;
        }
        out
    }
}

/// `Im sum_l conj(y_l) y'_l` as the coefficients of `(i, j, k)`.
pub fn im_bilinear<T>(y: &[Quaternion<T>], yp: &[Quaternion<T>]) -> Result<[T; 3]>
where
    T: Clone + Zero + Neg<Output = T> + Add<Output = T> + Sub<Output = T> + Mul<Output = T>,
{
    if y.len() != yp.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: yp.len(),
        });
    }
    let mut acc = [T::zero(), T::zero(), T::zero()];
    for (a, b) in y.iter().zip(yp) {
        let prod = qmul(&a.conj(), b);
        let [i, j, k] = prod.im();
        acc = [acc[0].clone() + i, acc[1].clone() + j, acc[2].clone() + k];
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::{FromPrimitive, One};
    use proptest::prelude::*;

    fn rq(a: i64, b: i64, c: i64, d: i64) -> Quaternion<BigRational> {
        let r = |v| BigRational::from_i64(v).unwrap();
        Quaternion::new(r(a), r(b), r(c), r(d))
    }

    #[test]
    fn identity_and_basis_products() {
        let x = Quat::new(1.5, -2.0, 0.25, 3.0);
        assert_eq!(qmul(&Quat::ONE, &x), x);
        assert_eq!(qmul(&Quat::I, &Quat::J), Quat::K);
        assert_eq!(qmul(&Quat::I, &Quat::I), Quat::new(-1.0, 0.0, 0.0, 0.0));
        assert_eq!(qmul(&Quat::J, &Quat::K), Quat::I);
        assert_eq!(qmul(&Quat::K, &Quat::I), Quat::J);
        // non-commutative
        assert_eq!(qmul(&Quat::J, &Quat::I), -Quat::K);
    }

    #[test]
    fn conjugation() {
        assert_eq!(Quat::new(1.0, 2.0, 3.0, 4.0).conj(), Quat::new(1.0, -2.0, -3.0, -4.0));
        let x = Quat::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(qmul(&x.conj(), &x), Quat::new(2.0, 0.0, 0.0, 0.0));
        let lhs = qmul(&Quat::I, &Quat::J).conj();
        let rhs = qmul(&Quat::J.conj(), &Quat::I.conj());
        assert_eq!(lhs, rhs);
        assert_eq!(lhs, Quat::new(0.0, 0.0, 0.0, -1.0));
    }

    #[test]
    fn exact_rational_mode() {
        let x = rq(1, -2, 3, 5);
        let y = rq(-7, 4, 0, 2);
        let lhs = qmul(&x, &y).conj();
        let rhs = qmul(&y.conj(), &x.conj());
        assert_eq!(lhs, rhs);
        assert_eq!(x.conj().conj(), x);
        let n = qmul(&x, &x.conj());
        assert_eq!(n, Quaternion::real(x.norm_sqr()));
        let one = Quaternion::real(BigRational::one());
        assert_eq!(qmul(&one, &y), y);
    }

    #[test]
    fn im_bilinear_examples() {
        assert_eq!(im_bilinear(&[Quat::ONE], &[Quat::ONE]).unwrap(), [0.0; 3]);
        assert_eq!(im_bilinear(&[Quat::I], &[Quat::J]).unwrap(), [0.0, 0.0, -1.0]);
        assert!(im_bilinear(&[Quat::I], &[Quat::J, Quat::K]).is_err());
    }

    #[test]
    fn structure_matrices_antisymmetric() {
        for a in 0..3 {
            for k in 0..4 {
                for j in 0..4 {
                    assert_eq!(StructureMatrices::B[a][k][j], -StructureMatrices::B[a][j][k]);
                }
            }
        }
    }

    #[test]
    fn matrix_expansion_matches_product_exactly() {
        // integer inputs keep both routes exact in f64
        let vals = [-3.0, -1.0, 0.0, 2.0, 5.0];
        for &a in &vals {
            for &b in &vals {
                let x = [a, b, a - b, 1.0];
                let xp = [b, 2.0 * a, -1.0, a + b];
                let via_q = qmul(&Quat::from_array(x).conj(), &Quat::from_array(xp)).im();
                assert_eq!(StructureMatrices::im_pair(&x, &xp), via_q);
            }
        }
    }

    fn quat() -> impl Strategy<Value = Quat> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64)
            .prop_map(|(a, b, c, d)| Quat::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn modulus_is_multiplicative(x in quat(), y in quat()) {
            let lhs = qmul(&x, &y).norm();
            let rhs = x.norm() * y.norm();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs.max(1e-300));
        }

        #[test]
        fn im_bilinear_antisymmetric_and_self_zero(a in quat(), b in quat(), c in quat(), d in quat()) {
            let y = [a, b];
            let yp = [c, d];
            let f = im_bilinear(&y, &yp).unwrap();
            let r = im_bilinear(&yp, &y).unwrap();
            for i in 0..3 {
                prop_assert!((f[i] + r[i]).abs() <= 1e-12 * (1.0 + f[i].abs()));
            }
            let s = im_bilinear(&y, &y).unwrap();
            for v in s {
                prop_assert!(v.abs() <= 1e-12);
            }
        }

        #[test]
        fn conj_reverses_products(x in quat(), y in quat()) {
            let lhs = qmul(&x, &y).conj();
            let rhs = qmul(&y.conj(), &x.conj());
            let scale = x.norm() * y.norm() + 1.0;
            prop_assert!((lhs - rhs).norm() <= 1e-14 * scale);
        }
    }
}
